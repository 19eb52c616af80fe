//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Oracles here are written independently of the library.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use perce_cli::manifest::sha256_hex;
use perce_cli::serve::spawn_loopback;
use perce_core::data::{generate, Dataset, GeneratorSpec, Split, TokenId};
use perce_core::eval::{evaluate_corpus, lcs_len, rouge_l, CorpusEvaluation, EvalOptions, HistogramBin};
use perce_core::losses::{ce_loss, perce_weights, response_forward, wce_loss, weighted_loss, WeightVector};
use perce_core::model::{Checkpoint, LookupTableModel, ModelConfig, ModelParams};
use perce_core::numcore::Tape;
use perce_core::scoring::{pir, PirScores, PromptTemplate, RemoteConfig, RemoteScorer, RenderedExample, ScorerBackend};
use perce_core::trainer::{build_vocab, render, train, Method, TrainConfig, TrainOptions, TrainReport, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn desk(spec: &GeneratorSpec) -> Result<(Dataset, PromptTemplate, perce_core::data::Vocab), String> {
    let corpus = generate(spec).map_err(err)?.dataset;
    let template = PromptTemplate::default();
    let vocab = build_vocab(&corpus, &template);
    Ok((corpus, template, vocab))
}

fn loss_value(params: &ModelParams, ex: &RenderedExample, w: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let rf = response_forward(&mut tape, params, ex, false).unwrap();
    let loss = weighted_loss(&mut tape, &rf, w).unwrap();
    tape.value(loss).data()[0]
}

fn gradient_correctness() -> Check {
    let t0 = Instant::now();
    let (corpus, template, vocab) = desk(&GeneratorSpec::desk_default())?;
    let examples = render(&corpus.split(Split::Train), &vocab, &template).map_err(err)?;
    let ex = &examples[0];
    let mut params = ModelParams::init(&ModelConfig::desk(vocab.len())).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w: Vec<f64> = (0..ex.response.len()).map(|_| rng.gen_range(0.8..5.0)).collect();

    let mut tape = Tape::new();
    let rf = response_forward(&mut tape, &params, ex, true).map_err(err)?;
    let loss = weighted_loss(&mut tape, &rf, &w).map_err(err)?;
    tape.backward(loss).map_err(err)?;
    let grads: Vec<Vec<f64>> = rf.forward.params.iter().map(|&v| tape.grad(v).unwrap_or(&[]).to_vec()).collect();

    // Parameters the loss actually depends on, plus uniformly drawn ones
    // (mostly unused embedding rows whose gradient must be zero).
    let flat: Vec<(usize, usize)> = (0..grads.len()).flat_map(|k| (0..grads[k].len()).map(move |i| (k, i))).collect();
    let active: Vec<(usize, usize)> = flat.iter().copied().filter(|&(k, i)| grads[k][i].abs() > 1e-4).collect();
    let mut picks: Vec<(usize, usize)> = (0..60).map(|_| active[rng.gen_range(0..active.len())]).collect();
    picks.extend((0..20).map(|_| flat[rng.gen_range(0..flat.len())]));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &(k, i) in &picks {
        let orig = params.tensors()[k].tensor.data()[i];
        params.tensors_mut()[k].tensor.data_mut()[i] = orig + h;
        let up = loss_value(&params, ex, &w);
        params.tensors_mut()[k].tensor.data_mut()[i] = orig - h;
        let down = loss_value(&params, ex, &w);
        params.tensors_mut()[k].tensor.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[k][i];
        // Floor the denominator near zero, where both sides are FD noise.
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst < 1e-4 && secs < 60.0,
        format!("{} params ({} active), max rel err {worst:.2e}, {secs:.1}s", picks.len(), 60),
    ))
}

fn params_hash(p: &ModelParams) -> String {
    let bytes: Vec<u8> = p
        .tensors()
        .iter()
        .flat_map(|t| t.tensor.data().iter().flat_map(|x| x.to_le_bytes()))
        .collect();
    sha256_hex(&bytes)
}

fn objective_identities() -> Check {
    let (corpus, template, vocab) = desk(&GeneratorSpec::desk_default())?;
    let examples = render(&corpus.split(Split::Train), &vocab, &template).map_err(err)?;
    let params = ModelParams::init(&ModelConfig::desk(vocab.len())).map_err(err)?;
    let mut worst: f64 = 0.0;
    for ex in examples.iter().take(20) {
        let mut t = Tape::new();
        let ce = ce_loss(&mut t, &params, ex).map_err(err)?;
        let ce = t.value(ce).data()[0];
        let mut t = Tape::new();
        let wce = wce_loss(&mut t, &params, ex, &WeightVector::unit(ex.response.len())).map_err(err)?;
        worst = worst.max((t.value(wce).data()[0] - ce).abs());
    }
    let run = |method: Method, clip: f64| -> Result<String, String> {
        let cfg = TrainConfig {
            method,
            clip_min: clip,
            clip_max: clip,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(params.clone(), cfg, 10, None).map_err(err)?;
        for s in 0..10 {
            tr.train_step(&examples[2 * s..2 * s + 2], None).map_err(err)?;
        }
        Ok(params_hash(tr.params()))
    };
    let (ce, perce) = (run(Method::CE, 1.0)?, run(Method::PerCE, 1.0)?);
    Ok((
        worst <= 1e-12 && ce == perce,
        format!("max |wce-ce| {worst:.1e}; 10-step hashes CE {} PerCE {}", &ce[..12], &perce[..12]),
    ))
}

fn clip_contract() -> Check {
    let (m, big_m) = (0.8, 5.0);
    let oracle = |x: f64| if x < m { m } else if x > big_m { big_m } else { x };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.gen_range(0..4) {
            0 => rng.gen_range(-50.0..50.0),
            1 => rng.gen_range(0.5..6.0),
            2 => [m, big_m, 0.0, -0.0][rng.gen_range(0..4)],
            _ => rng.gen_range(-1e6..1e6),
        }
    };
    let scores = |v: Vec<f64>| PirScores {
        values: v,
        context_with_len: 1,
        context_without_len: 1,
    };
    let mut bad = 0usize;
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..rng.gen_range(1..24)).map(|_| draw(&mut rng)).collect();
        let w = perce_weights(&scores(v.clone()), m, big_m).map_err(err)?;
        bad += w
            .values()
            .iter()
            .zip(&v)
            .filter(|(w, x)| !(m..=big_m).contains(*w) || **w != oracle(**x))
            .count();
    }
    let mut non_monotone = 0usize;
    for _ in 0..1_000 {
        let a: Vec<f64> = (0..rng.gen_range(1..24)).map(|_| draw(&mut rng)).collect();
        let mut b = a.clone();
        let i = rng.gen_range(0..a.len());
        b[i] += rng.gen_range(0.0..10.0);
        let wa = perce_weights(&scores(a), m, big_m).map_err(err)?;
        let wb = perce_weights(&scores(b), m, big_m).map_err(err)?;
        let ok = wb.values()[i] >= wa.values()[i]
            && wa.values().iter().zip(wb.values()).enumerate().all(|(j, (x, y))| j == i || x == y);
        non_monotone += usize::from(!ok);
    }
    Ok((
        bad == 0 && non_monotone == 0,
        format!("{bad} out-of-contract weights in 10000 vectors; {non_monotone}/1000 monotonicity violations"),
    ))
}

fn empty_persona() -> Check {
    let (corpus, template, vocab) = desk(&GeneratorSpec::desk_default())?;
    let mut records = corpus.records.clone();
    records.truncate(100);
    for r in &mut records {
        r.persona.clear();
    }
    let examples = render(&Dataset::new(records), &vocab, &template).map_err(err)?;
    let params = ModelParams::init(&ModelConfig::desk(vocab.len())).map_err(err)?;
    let cfg = TrainConfig::default();
    let m = cfg.clip_min;
    let trainer = Trainer::new(params.clone(), cfg, 1, None).map_err(err)?;
    let weights = trainer.estimate_all(&examples).map_err(err)?;
    let mut nonzero = 0usize;
    let mut not_m = 0usize;
    for (ex, w) in examples.iter().zip(&weights) {
        nonzero += pir(&params, ex).map_err(err)?.values.iter().filter(|&&v| v != 0.0).count();
        not_m += w.values().iter().filter(|&&x| x != m).count();
    }
    Ok((
        examples.len() == 100 && nonzero == 0 && not_m == 0,
        format!("{} examples: {nonzero} non-zero PIR values, {not_m} weights != {m}", examples.len()),
    ))
}

fn hand_oracle_pir() -> Check {
    const V: usize = 6;
    let dist = |target: usize, p: f64| -> Vec<f64> {
        (0..V).map(|j| if j == target { p } else { (1.0 - p) / (V - 1) as f64 }).collect()
    };
    let with: Vec<TokenId> = vec![1, 5, 3];
    let without: Vec<TokenId> = vec![1, 3];
    let response: Vec<TokenId> = vec![4, 2, 0];
    let model = LookupTableModel::uniform(V, 16)
        .with_row(vec![1, 5, 3], &dist(4, 0.8))
        .and_then(|m| m.with_row(vec![1, 3], &dist(4, 0.2)))
        .and_then(|m| m.with_row(vec![1, 5, 3, 4], &dist(2, 0.3)))
        .and_then(|m| m.with_row(vec![1, 3, 4], &dist(2, 0.6)))
        .map_err(err)?;
    let ex = RenderedExample {
        user_id: "u".into(),
        with_persona: with,
        without_persona: without,
        response,
        gold_personal_mask: None,
    };
    let got = pir(&model, &ex).map_err(err)?.values;
    // ln(0.8/0.2) = ln 4; ln(0.3/0.6) = -ln 2; both contexts fall back to the
    // uniform default row for the last token.
    let expected = [2.0 * std::f64::consts::LN_2, -std::f64::consts::LN_2, 0.0];
    let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((
        got.len() == 3 && worst <= 1e-12,
        format!("PIR {got:?} vs [ln 4, -ln 2, 0], max err {worst:.1e}"),
    ))
}

struct Run {
    eval: CorpusEvaluation,
    report: TrainReport,
}

fn train_and_eval(spec: &GeneratorSpec, method: Method, seed: u64) -> Result<Run, String> {
    let (corpus, template, vocab) = desk(spec)?;
    let model_cfg = ModelConfig {
        seed,
        ..ModelConfig::desk(vocab.len())
    };
    let cfg = TrainConfig {
        method,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&corpus, &cfg, &model_cfg, &template, TrainOptions::default()).map_err(err)?;
    let test = corpus.split(Split::Test);
    let rendered = render(&test, &vocab, &template).map_err(err)?;
    let params = &out.checkpoint.params;
    let scores = rendered.iter().map(|ex| pir(params, ex)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let opts = EvalOptions {
        generation: false,
        ..EvalOptions::default()
    };
    let eval = evaluate_corpus(params, &vocab, &test.examples(&vocab), &rendered, &scores, &opts).map_err(err)?;
    Ok(Run { eval, report: out.report })
}

fn synthetic_identification(default_run: &Result<Run, String>, secs: f64) -> Check {
    let run = default_run.as_ref().map_err(Clone::clone)?;
    let t = Instant::now();
    let para = train_and_eval(&GeneratorSpec::desk_paraphrased(), Method::CE, 0)?;
    let secs = secs + t.elapsed().as_secs_f64();
    let (f1, pf1, wm) = (run.eval.contrast.f1, para.eval.contrast.f1, para.eval.word_match.f1);
    Ok((
        f1 >= 0.8 && pf1 > wm && secs < 600.0,
        format!(
            "default F1 {f1:.3} (P {:.3} R {:.3}); paraphrased F1 {pf1:.3} vs word-match {wm:.3}; {secs:.0}s",
            run.eval.contrast.precision, run.eval.contrast.recall
        ),
    ))
}

/// Gold fraction per populated bin, in ascending PIR order, must not drop.
fn weakly_increasing(bins: &[HistogramBin]) -> bool {
    let fractions: Vec<f64> = bins
        .iter()
        .filter(|b| b.personal + b.other > 0)
        .map(|b| b.personal as f64 / (b.personal + b.other) as f64)
        .collect();
    fractions.windows(2).all(|w| w[0] <= w[1])
}

fn monotone_separation(default_run: &Result<Run, String>) -> Check {
    let run = default_run.as_ref().map_err(Clone::clone)?;
    let gap = run.eval.mean_pir_personal - run.eval.mean_pir_other;
    let mono = weakly_increasing(&run.eval.histogram);
    let fractions: Vec<String> = run
        .eval
        .histogram
        .iter()
        .filter(|b| b.personal + b.other > 0)
        .map(|b| format!("{:.2}", b.personal as f64 / (b.personal + b.other) as f64))
        .collect();
    Ok((
        gap >= 1.0 && mono,
        format!(
            "mean PIR personal {:.3} vs filler {:.3} (gap {gap:.3}); gold fraction by bin [{}] {}",
            run.eval.mean_pir_personal,
            run.eval.mean_pir_other,
            fractions.join(" "),
            if mono { "monotone" } else { "not monotone" }
        ),
    ))
}

fn slot_accuracy(report: &TrainReport) -> f64 {
    report.epochs.last().and_then(|e| e.eval.as_ref()).map_or(f64::NAN, |e| e.slot_accuracy)
}

fn perce_benefit() -> Check {
    let t = Instant::now();
    let spec = GeneratorSpec::desk_slot_heavy();
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let ce = slot_accuracy(&train_and_eval(&spec, Method::CE, seed)?.report);
        let perce = slot_accuracy(&train_and_eval(&spec, Method::PerCE, seed)?.report);
        gaps.push((ce, perce));
    }
    let positive = gaps.iter().filter(|(c, p)| p > c).count();
    let mean_gap = gaps.iter().map(|(c, p)| p - c).sum::<f64>() / gaps.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    let per_seed: Vec<String> = gaps.iter().map(|(c, p)| format!("{c:.3}->{p:.3}")).collect();
    Ok((
        positive >= 4 && mean_gap >= 0.0 && secs < 1800.0,
        format!(
            "slot accuracy CE->PerCE by seed [{}]; mean gap {mean_gap:+.3}, positive in {positive}/5; {secs:.0}s",
            per_seed.join(", ")
        ),
    ))
}

/// LCS by enumeration: every subsequence of every string up to length 8
/// over {0,1,2}, stored as one bitset per length.
struct SubsequenceSets {
    /// `sets[s][len]` marks which length-`len` strings are subsequences of `s`.
    sets: Vec<Vec<Vec<u64>>>,
}

const MAX_LEN: usize = 8;

fn code(s: &[u8]) -> usize {
    s.iter().fold(0, |acc, &c| acc * 3 + c as usize)
}

fn all_strings() -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..MAX_LEN {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| (0..3u8).map(move |c| [s.as_slice(), &[c]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

impl SubsequenceSets {
    fn new(strings: &[Vec<u8>]) -> Self {
        let words = |len: usize| 3usize.pow(len as u32).div_ceil(64);
        let sets = strings
            .iter()
            .map(|s| {
                let mut layers: Vec<Vec<u64>> = (0..=MAX_LEN).map(|l| vec![0; words(l)]).collect();
                for mask in 0u32..(1 << s.len()) {
                    let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                    let c = code(&sub);
                    layers[sub.len()][c / 64] |= 1 << (c % 64);
                }
                layers
            })
            .collect();
        Self { sets }
    }

    fn lcs(&self, a: usize, b: usize, max: usize) -> usize {
        let (sa, sb) = (&self.sets[a], &self.sets[b]);
        (0..=max)
            .rev()
            .find(|&l| sa[l].iter().zip(&sb[l]).any(|(x, y)| x & y != 0))
            .unwrap_or(0)
    }
}

fn memo_lcs(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() || j == b.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i] == b[j] {
        1 + memo_lcs(a, b, i + 1, j + 1, memo)
    } else {
        memo_lcs(a, b, i + 1, j, memo).max(memo_lcs(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), v);
    v
}

fn rouge_oracle(lcs: usize, cand: usize, refr: usize) -> f64 {
    if lcs == 0 {
        0.0
    } else {
        2.0 * lcs as f64 / (cand + refr) as f64
    }
}

fn rouge_l_oracle() -> Check {
    let t = Instant::now();
    let strings = all_strings();
    let sets = SubsequenceSets::new(&strings);
    let (mut pairs, mut lcs_bad, mut rouge_worst) = (0usize, 0usize, 0.0f64);
    for (i, a) in strings.iter().enumerate() {
        for (j, b) in strings.iter().enumerate() {
            let want = sets.lcs(i, j, a.len().min(b.len()));
            lcs_bad += usize::from(lcs_len(a, b) != want);
            rouge_worst = rouge_worst.max((rouge_l(a, b) - rouge_oracle(want, a.len(), b.len())).abs());
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut random_bad = 0usize;
    for _ in 0..1_000 {
        let k = rng.gen_range(2..7u8);
        let a: Vec<u8> = (0..rng.gen_range(9..60)).map(|_| rng.gen_range(0..k)).collect();
        let b: Vec<u8> = (0..rng.gen_range(9..60)).map(|_| rng.gen_range(0..k)).collect();
        let want = memo_lcs(&a, &b, 0, 0, &mut HashMap::new());
        random_bad += usize::from(lcs_len(&a, &b) != want);
        rouge_worst = rouge_worst.max((rouge_l(&a, &b) - rouge_oracle(want, a.len(), b.len())).abs());
    }
    Ok((
        lcs_bad == 0 && random_bad == 0 && rouge_worst <= 1e-12,
        format!(
            "{pairs} exhaustive pairs: {lcs_bad} LCS mismatches; 1000 random pairs: {random_bad} mismatches; \
             max ROUGE-L err {rouge_worst:.1e}; {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    ))
}

struct CliRuns {
    _dir: tempfile::TempDir,
    data: PathBuf,
    runs: [PathBuf; 2],
}

/// Runs the `perce` command line in-process.
fn perce(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Result<(), String> {
    let argv = std::iter::once(std::ffi::OsString::from("perce")).chain(args.iter().map(|a| a.as_ref().to_os_string()));
    match perce_cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("perce {:?} exited {code}", args.iter().map(|a| a.as_ref()).collect::<Vec<_>>())),
    }
}

/// Two `perce train` invocations with the default config on the default corpus.
fn cli_runs() -> Result<CliRuns, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data.jsonl");
    perce(&[&"gen-data", &"--out", &data])?;
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, "{}").map_err(err)?;
    let runs = [dir.path().join("run-a"), dir.path().join("run-b")];
    for run in &runs {
        perce(&[&"--seed", &"0", &"train", &"--config", &cfg, &"--data", &data, &"--out", run])?;
        perce(&[
            &"eval", &"--checkpoint", &run.join("checkpoint-epoch2.json"), &"--data", &data,
            &"--report", &run.join("eval"), &"--no-generation",
        ])?;
    }
    Ok(CliRuns { _dir: dir, data, runs })
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn report(run: &Path) -> Result<TrainReport, String> {
    serde_json::from_str(&read(&run.join("report.json"))?).map_err(err)
}

fn efficiency(runs: &Result<CliRuns, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let r = report(&runs.runs[0])?;
    let (e, m) = (r.mean_e_ms(), r.mean_m_ms());
    Ok((
        r.method == Method::PerCE && e < 0.6 * m,
        format!("{} PerCE steps: mean E-step {e:.3} ms = {:.0}% of mean M-step {m:.3} ms", r.steps.len(), 100.0 * e / m),
    ))
}

/// Drops the wall-clock columns of the per-step metrics.
fn deterministic_columns(csv: &str) -> Vec<String> {
    let header: Vec<&str> = csv.lines().next().unwrap_or_default().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].ends_with("_ms")).collect();
    csv.lines()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells.get(i).copied().unwrap_or("")).collect::<Vec<_>>().join(",")
        })
        .collect()
}

fn determinism(runs: &Result<CliRuns, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let [a, b] = &runs.runs;
    let (ra, rb) = (report(a)?, report(b)?);
    let worst = if ra.steps.len() == rb.steps.len() {
        ra.loss_trace().iter().zip(rb.loss_trace()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let same = |rel: &str| -> Result<bool, String> { Ok(read(&a.join(rel))? == read(&b.join(rel))?) };
    let epoch_csv = same("epoch_metrics.csv")?;
    let eval_csv = same("eval/metrics.csv")? && same("eval/pir_histogram.csv")?;
    let step_csv = deterministic_columns(&read(&a.join("metrics.csv"))?) == deterministic_columns(&read(&b.join("metrics.csv"))?);
    let ckpt = same("checkpoint-epoch2.json")?;
    Ok((
        worst <= 1e-12 && epoch_csv && eval_csv && step_csv && ckpt,
        format!(
            "{} steps, max loss diff {worst:.1e}; epoch CSV {}, eval CSVs {}, step CSV (timings excluded) {}, checkpoint {}",
            ra.steps.len(),
            verdict(epoch_csv),
            verdict(eval_csv),
            verdict(step_csv),
            verdict(ckpt)
        ),
    ))
}

fn verdict(same: bool) -> &'static str {
    if same {
        "identical"
    } else {
        "DIFFERENT"
    }
}

fn remote_equivalence(runs: &Result<CliRuns, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let ck = Checkpoint::load(runs.runs[0].join("checkpoint-epoch2.json")).map_err(err)?;
    let corpus = perce_core::data::load_jsonl(&runs.data).map_err(err)?;
    let mut rendered = render(&corpus, &ck.vocab, &ck.template).map_err(err)?;
    rendered.truncate(100);
    let server = spawn_loopback(ck.clone(), None).map_err(err)?;
    let remote = ScorerBackend::Remote {
        scorer: RemoteScorer::new(RemoteConfig {
            auth_token: None,
            timeout: Duration::from_secs(30),
            ..RemoteConfig::new(server.url())
        })
        .map_err(err)?,
        vocab: ck.vocab.clone(),
        template: ck.template.clone(),
    };
    let (mut worst, mut tokens) = (0.0f64, 0usize);
    for (ex, r) in rendered.iter().zip(remote.pir_batch(&rendered)) {
        let (r, l) = (r.map_err(err)?, pir(&ck.params, ex).map_err(err)?);
        if r.values.len() != l.values.len() {
            return Ok((false, format!("length mismatch for {}", ex.user_id)));
        }
        tokens += r.values.len();
        worst = r.values.iter().zip(&l.values).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok((
        rendered.len() == 100 && worst <= 1e-6,
        format!("{} examples, {tokens} tokens over HTTP loopback: max |remote - local| {worst:.1e}", rendered.len()),
    ))
}

fn main() {
    let mut results: Vec<(u8, &str, Check)> = Vec::new();
    let mut record = |id: u8, name: &'static str, check: Check| {
        let (tag, detail) = match &check {
            Ok((true, d)) => ("PASS", d.clone()),
            Ok((false, d)) => ("FAIL", d.clone()),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        println!("[{tag}] criterion {id:2} {name}: {detail}");
        results.push((id, name, check));
    };
    record(1, "gradient correctness", gradient_correctness());
    record(2, "objective identities", objective_identities());
    record(3, "clip contract", clip_contract());
    record(4, "empty-persona zero effect", empty_persona());
    record(5, "hand-oracle PIR", hand_oracle_pir());
    record(9, "ROUGE-L oracle", rouge_l_oracle());

    let t = Instant::now();
    let default_run = train_and_eval(&GeneratorSpec::desk_default(), Method::CE, 0);
    let secs = t.elapsed().as_secs_f64();
    record(6, "synthetic identification", synthetic_identification(&default_run, secs));
    record(7, "PIR monotone separation", monotone_separation(&default_run));

    let runs = cli_runs();
    record(10, "efficiency accounting", efficiency(&runs));
    record(11, "determinism", determinism(&runs));
    record(12, "remote-backend equivalence", remote_equivalence(&runs));

    record(8, "PerCE training benefit", perce_benefit());

    let failed: Vec<u8> = results.iter().filter(|(_, _, c)| !matches!(c, Ok((true, _)))).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
