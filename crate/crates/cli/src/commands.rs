use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use perce_core::data::{generate, parse_jsonl, save_jsonl, Dataset, GeneratorSpec, Split};
use perce_core::eval::{evaluate_corpus, histogram_csv, EvalOptions, TokenScoreRecord};
use perce_core::losses::{token_nll, TokenDiagnostics};
use perce_core::model::Checkpoint;
use perce_core::scoring::{
    pir, PromptTemplate, RemoteConfig, RemoteScorer, RenderedExample, ScorerBackend, AUTH_TOKEN_ENV,
};
use perce_core::trainer::{build_vocab, render, train as run_training, TrainOptions, TrainOutcome, Trainer};

use crate::config::RunConfig;
use crate::manifest::{ms_since, ManifestBuilder, RunManifest};
use crate::{BackendKind, Cli, CliError, Command, EvalArgs, GenDataArgs, Preset, ScoreArgs, SplitArg, TrainArgs};

pub const METRICS_CSV: &str = "metrics.csv";
pub const EPOCH_METRICS_CSV: &str = "epoch_metrics.csv";
pub const REPORT_JSON: &str = "report.json";
pub const DIAGNOSTICS_JSONL: &str = "token_diagnostics.jsonl";
pub const RESOLVED_CONFIG_JSON: &str = "resolved_config.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const IDENTIFICATION_JSON: &str = "identification_report.json";
pub const HISTOGRAM_CSV: &str = "pir_histogram.csv";

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, cli.seed).map(|_| ()),
        Command::Train(a) => train(a, cli.seed).map(|_| ()),
        Command::Score(a) => score(a, cli.seed).map(|_| ()),
        Command::Eval(a) => eval(a, cli.seed).map(|_| ()),
        Command::Serve(a) => {
            let ck = load_checkpoint(&a.checkpoint)?;
            let token = std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty());
            crate::serve::serve_blocking(ck, a.addr, token).map_err(|e| CliError::Runtime(format!("serve: {e}")))
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Usage(format!("{what} not found: {}", path.display())),
        _ => CliError::Usage(format!("cannot read {what} {}: {e}", path.display())),
    })
}

/// Reads a JSONL corpus; parse errors carry the offending line number.
pub fn load_data(path: &Path) -> Result<Dataset, CliError> {
    let text = read_input(path, "data")?;
    parse_jsonl(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = read_input(path, "checkpoint")?;
    Checkpoint::from_json_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `<path>.manifest.json` next to a single-file output.
pub fn sidecar_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn gen_data(args: &GenDataArgs, seed: Option<u64>) -> Result<RunManifest, CliError> {
    let mut m = ManifestBuilder::start("gen-data", seed);
    let mut spec = match (&args.spec, args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|_| CliError::Usage(format!("spec not found: {}", path.display())))?;
            m.config_bytes(text.as_bytes());
            m.input(path)?;
            serde_json::from_str::<GeneratorSpec>(&text)
                .map_err(|e| CliError::Usage(format!("invalid generator spec {}: {e}", path.display())))?
        }
        (None, Some(Preset::Paraphrased)) => GeneratorSpec::desk_paraphrased(),
        (None, Some(Preset::SlotHeavy)) => GeneratorSpec::desk_slot_heavy(),
        (None, _) => GeneratorSpec::desk_default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    m.manifest_seed(spec.seed);
    let t = Instant::now();
    let corpus = generate(&spec)?;
    m.phase("generate", ms_since(t));
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_jsonl(&corpus.dataset, &args.out)?;
    m.output(&args.out)?;
    m.finish(&sidecar_manifest(&args.out))
}

fn fmt_csv_row(out: &mut String, values: &[String]) {
    let _ = writeln!(out, "{}", values.join(","));
}

/// Per-step metrics. Every column except the two timings is a deterministic
/// function of config, data and seed.
pub fn metrics_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("step,epoch,loss,ce_loss,lr,e_ms,m_ms,weight_mean,weight_min,weight_max\n");
    for s in &outcome.report.steps {
        fmt_csv_row(
            &mut out,
            &[
                s.step.to_string(),
                s.epoch.to_string(),
                s.loss.to_string(),
                s.ce_loss.to_string(),
                s.lr.to_string(),
                format!("{:.4}", s.e_ms),
                format!("{:.4}", s.m_ms),
                s.weight_mean.to_string(),
                s.weight_min.to_string(),
                s.weight_max.to_string(),
            ],
        );
    }
    out
}

/// Per-epoch metrics; fully deterministic.
pub fn epoch_metrics_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from(
        "epoch,steps,train_loss,heldout_loss,slot_accuracy,token_accuracy,personal_weight_mean,filler_weight_mean\n",
    );
    for e in &outcome.report.epochs {
        let ev = |f: fn(&perce_core::trainer::SlotEval) -> f64| e.eval.as_ref().map_or(String::new(), |s| f(s).to_string());
        fmt_csv_row(
            &mut out,
            &[
                e.epoch.to_string(),
                e.steps.to_string(),
                e.train_loss.to_string(),
                ev(|s| s.loss),
                ev(|s| s.slot_accuracy),
                ev(|s| s.token_accuracy),
                e.personal_weight_mean.to_string(),
                e.filler_weight_mean.to_string(),
            ],
        );
    }
    out
}

fn diagnostics_jsonl(
    cfg: &RunConfig,
    outcome: &TrainOutcome,
    train_set: &[RenderedExample],
    scorer: Option<ScorerBackend>,
) -> Result<String, CliError> {
    let ck = &outcome.checkpoint;
    let steps = outcome.report.total_steps;
    let pir_scores = match &scorer {
        Some(b) => b.pir_batch(train_set).into_iter().collect::<Result<Vec<_>, _>>()?,
        None => train_set.iter().map(|ex| pir(&ck.params, ex)).collect::<Result<Vec<_>, _>>()?,
    };
    let trainer = Trainer::new(ck.params.clone(), cfg.train.clone(), steps, scorer)?;
    let weights = trainer.estimate_all(train_set)?;
    let mut out = String::new();
    for ((ex, s), w) in train_set.iter().zip(&pir_scores).zip(&weights) {
        let d = TokenDiagnostics::new(ex, &ck.vocab, token_nll(&ck.params, ex)?, s, w);
        let _ = writeln!(out, "{}", serde_json::to_string(&d).expect("diagnostics serialize"));
    }
    Ok(out)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<RunManifest, CliError> {
    let (cfg, bytes) = RunConfig::load(&args.config)?;
    let cfg = cfg.with_seed(seed);
    let mut m = ManifestBuilder::start("train", Some(cfg.train.seed));
    m.config_bytes(&bytes);
    m.input(&args.config)?;
    let corpus = load_data(&args.data)?;
    m.input(&args.data)?;
    let vocab = build_vocab(&corpus, &cfg.template);
    let model_cfg = cfg.model_config(vocab.len())?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let resolved = serde_json::json!({ "model": model_cfg, "train": cfg.train, "template": cfg.template });
    let resolved_path = args.out.join(RESOLVED_CONFIG_JSON);
    write(&resolved_path, serde_json::to_string_pretty(&resolved).expect("config serializes"))?;

    let t = Instant::now();
    let opts = TrainOptions {
        checkpoint_dir: Some(&args.out),
        scorer: cfg.train.scorer.resolve(&vocab, &cfg.template)?,
        init: None,
    };
    let outcome = run_training(&corpus, &cfg.train, &model_cfg, &cfg.template, opts)?;
    m.phase("train", ms_since(t));
    m.phase("e_step", outcome.report.e_ms_total);
    m.phase("m_step", outcome.report.m_ms_total);

    let t = Instant::now();
    let train_set = render(&corpus.split(Split::Train), &vocab, &cfg.template)?;
    let scorer = cfg.train.scorer.resolve(&vocab, &cfg.template)?;
    let diagnostics = diagnostics_jsonl(&cfg, &outcome, &train_set, scorer)?;
    m.phase("diagnostics", ms_since(t));

    let files = [
        (METRICS_CSV, metrics_csv(&outcome)),
        (EPOCH_METRICS_CSV, epoch_metrics_csv(&outcome)),
        (REPORT_JSON, serde_json::to_string_pretty(&outcome.report).expect("report serializes")),
        (DIAGNOSTICS_JSONL, diagnostics),
    ];
    m.output(&resolved_path)?;
    for e in &outcome.report.epochs {
        if let Some(p) = &e.checkpoint {
            m.output(p)?;
        }
    }
    for (name, text) in files {
        let p = args.out.join(name);
        write(&p, text)?;
        m.output(&p)?;
    }
    let last = outcome.report.steps.last();
    println!(
        "{}: {} steps, final loss {:.4}, mean E-step {:.3} ms, mean M-step {:.3} ms",
        outcome.report.method,
        outcome.report.total_steps,
        last.map_or(f64::NAN, |s| s.loss),
        outcome.report.mean_e_ms(),
        outcome.report.mean_m_ms()
    );
    m.finish(&args.out.join(MANIFEST_JSON))
}

fn load_template(path: Option<&PathBuf>) -> Result<PromptTemplate, CliError> {
    match path {
        None => Ok(PromptTemplate::default()),
        Some(p) => {
            let text = read_input(p, "template")?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid template {}: {e}", p.display())))
        }
    }
}

pub fn score(args: &ScoreArgs, seed: Option<u64>) -> Result<RunManifest, CliError> {
    let mut m = ManifestBuilder::start("score", seed);
    let corpus = load_data(&args.data)?;
    m.input(&args.data)?;
    let backend = match args.backend {
        BackendKind::Local => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--checkpoint is required for the local backend".into()))?;
            let ck = load_checkpoint(path)?;
            m.input(path)?;
            ScorerBackend::Local(ck)
        }
        BackendKind::Remote => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Usage("--endpoint is required for the remote backend".into()))?;
            let template = load_template(args.template.as_ref())?;
            if let Some(p) = &args.template {
                m.input(p)?;
            }
            let vocab = build_vocab(&corpus, &template);
            let config = RemoteConfig {
                timeout: Duration::from_millis(args.timeout_ms),
                max_retries: args.retries,
                ..RemoteConfig::new(endpoint)
            };
            ScorerBackend::Remote {
                scorer: RemoteScorer::new(config)?,
                vocab,
                template,
            }
        }
    };
    let rendered = render(&corpus, backend.vocab(), backend.template())?;
    let t = Instant::now();
    // Probe once so an unreachable backend fails fast instead of per example.
    let mut scores = Vec::with_capacity(rendered.len());
    if let Some(first) = rendered.first() {
        scores.push(backend.pir(first)?);
    }
    for s in backend.pir_batch(rendered.get(1..).unwrap_or_default()) {
        scores.push(s?);
    }
    m.phase("score", ms_since(t));
    let mut out = String::new();
    for (ex, s) in rendered.iter().zip(&scores) {
        let rec = TokenScoreRecord::new(ex, backend.vocab(), s, args.threshold);
        let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("records serialize"));
    }
    write(&args.out, out)?;
    m.output(&args.out)?;
    m.finish(&sidecar_manifest(&args.out))
}

fn select_split(ds: &Dataset, split: SplitArg) -> Dataset {
    match split {
        SplitArg::All => ds.clone(),
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Test => ds.split(Split::Test),
        SplitArg::Auto if ds.has_split(Split::Test) => ds.split(Split::Test),
        SplitArg::Auto => ds.clone(),
    }
}

pub fn eval(args: &EvalArgs, seed: Option<u64>) -> Result<RunManifest, CliError> {
    let mut m = ManifestBuilder::start("eval", seed);
    let ck = load_checkpoint(&args.checkpoint)?;
    m.input(&args.checkpoint)?;
    let corpus = load_data(&args.data)?;
    m.input(&args.data)?;
    let ds = select_split(&corpus, args.split);
    if ds.is_empty() {
        return Err(CliError::Usage(format!("no records to evaluate in {}", args.data.display())));
    }
    let examples = ds.examples(&ck.vocab);
    let rendered = render(&ds, &ck.vocab, &ck.template)?;
    let t = Instant::now();
    let scores = rendered.iter().map(|ex| pir(&ck.params, ex)).collect::<Result<Vec<_>, _>>()?;
    let opts = EvalOptions {
        threshold: args.threshold,
        generation: !args.no_generation,
        ..EvalOptions::default()
    };
    let ev = evaluate_corpus(&ck.params, &ck.vocab, &examples, &rendered, &scores, &opts)?;
    m.phase("evaluate", ms_since(t));
    let files = [
        (IDENTIFICATION_JSON, serde_json::to_string_pretty(&ev).expect("report serializes")),
        (METRICS_CSV, ev.metrics_csv()),
        (HISTOGRAM_CSV, histogram_csv(&ev.histogram)),
    ];
    for (name, text) in files {
        let p = args.report.join(name);
        write(&p, text)?;
        m.output(&p)?;
    }
    println!(
        "contrast F1 {:.3} (P {:.3}, R {:.3}); word-match F1 {:.3}; mean PIR personal {:.3}, other {:.3}",
        ev.contrast.f1, ev.contrast.precision, ev.contrast.recall, ev.word_match.f1, ev.mean_pir_personal, ev.mean_pir_other
    );
    m.finish(&args.report.join(MANIFEST_JSON))
}
