//! Trains the desk model on the default synthetic corpus and prints held-out
//! identification and persona-influence statistics.
//!
//! cargo run --release -p perce-core --example desk_run -- [method] [seed] [epochs] [paraphrased]

use std::collections::BTreeMap;
use std::time::Instant;

use perce_core::data::{generate, GeneratorSpec, Split};
use perce_core::eval::{evaluate_corpus, score_examples, EvalOptions};
use perce_core::model::ModelConfig;
use perce_core::scoring::{PromptTemplate, ScorerBackend};
use perce_core::trainer::{build_vocab, render, train, Method, TrainConfig, TrainOptions};

fn main() -> perce_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let method = match args.get(1).map(String::as_str) {
        Some("PerCE") => Method::PerCE,
        Some("LossCE") => Method::LossCE,
        Some("EntCE") => Method::EntCE,
        _ => Method::CE,
    };
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let spec = if args.get(4).is_some_and(|s| s == "paraphrased") {
        GeneratorSpec::desk_paraphrased()
    } else {
        GeneratorSpec::desk_default()
    };

    let template = PromptTemplate::default();
    let corpus = generate(&spec)?.dataset;
    let vocab = build_vocab(&corpus, &template);
    let model_cfg = ModelConfig {
        seed,
        ..ModelConfig::desk(vocab.len())
    };
    let cfg = TrainConfig {
        method,
        seed,
        epochs,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(&corpus, &cfg, &model_cfg, &template, TrainOptions::default())?;
    println!("trained {} steps in {:.1}s", out.report.total_steps, t.elapsed().as_secs_f64());
    println!("mean e_ms {:.3}, m_ms {:.3}", out.report.mean_e_ms(), out.report.mean_m_ms());
    for e in &out.report.epochs {
        let acc = e.eval.as_ref().map_or(f64::NAN, |s| s.slot_accuracy);
        println!(
            "epoch {} loss {:.4} slot_acc {:.3} personal w {:.3} filler w {:.3}",
            e.epoch, e.train_loss, acc, e.personal_weight_mean, e.filler_weight_mean
        );
    }

    let test = corpus.split(Split::Test);
    let examples = test.examples(&vocab);
    let rendered = render(&test, &vocab, &template)?;
    let backend = ScorerBackend::Local(out.checkpoint);
    let scores = score_examples(&backend, &rendered)?;
    let mut by_word: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (ex, s) in rendered.iter().zip(&scores) {
        for (k, v) in s.values.iter().enumerate() {
            let key = if ex.gold_personal_mask.as_ref().is_some_and(|m| m[k]) {
                "<slot>"
            } else {
                vocab.token(ex.response[k]).unwrap_or("?")
            };
            by_word.entry(key).or_default().push(*v);
        }
    }
    for (w, v) in &by_word {
        let above = v.iter().filter(|&&x| x > 1.0).count();
        println!("  {w:10} n={:4} mean {:7.3}  >1: {above}", v.len(), v.iter().sum::<f64>() / v.len() as f64);
    }
    let ScorerBackend::Local(ckpt) = &backend else { unreachable!() };
    let opts = EvalOptions {
        generation: false,
        ..EvalOptions::default()
    };
    let ev = evaluate_corpus(&ckpt.params, &vocab, &examples, &rendered, &scores, &opts)?;
    println!(
        "contrast P {:.3} R {:.3} F1 {:.3} | word_match F1 {:.3} | PIR personal {:.3} other {:.3}",
        ev.contrast.precision, ev.contrast.recall, ev.contrast.f1, ev.word_match.f1, ev.mean_pir_personal, ev.mean_pir_other
    );
    Ok(())
}
