//! The autoregressive scorer/trainee: a tiny pre-norm decoder-only transformer,
//! plus a fixed lookup-table model used as a closed-form oracle.

mod checkpoint;
mod lookup;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use lookup::LookupTableModel;
pub use params::{ModelConfig, ModelParams, NamedTensor, INIT_STD};

use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Result of recording a forward pass on a tape.
pub struct Forward {
    /// `[T x V]` next-token log-probabilities; row `t` conditions on `tokens[..=t]`.
    pub log_probs: Var,
    /// Parameter leaves, in [`ModelParams`] storage order (empty for fixed models).
    pub params: Vec<Var>,
}

/// Anything that assigns next-token log-probabilities to a token sequence.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;

    /// Records the forward pass on `tape`. With `track_grad` the parameters
    /// are differentiable leaves.
    fn forward_tape(&self, tape: &mut Tape, tokens: &[TokenId], track_grad: bool) -> Result<Forward>;

    /// `[T x V]` log-probabilities without gradient tracking.
    fn log_probs(&self, tokens: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, tokens, false)?;
        Ok(tape.value(f.log_probs).detach())
    }
}

pub(crate) fn check_tokens(tokens: &[TokenId], vocab_size: usize, max_len: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::contract("forward on an empty sequence"));
    }
    if tokens.len() > max_len {
        return Err(Error::Length {
            len: tokens.len(),
            max: max_len,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::Vocab { id, vocab_size });
    }
    Ok(())
}

/// Per-position log-probabilities over the next token.
pub fn forward(params: &ModelParams, tokens: &[TokenId]) -> Result<Tensor> {
    params.log_probs(tokens)
}

/// Rows of the forward output that predict `target[i]` after `context`.
pub fn target_rows(context_len: usize, target_len: usize) -> Vec<usize> {
    (0..target_len).map(|i| context_len - 1 + i).collect()
}

/// Concatenates context and target, checking the combined length.
pub fn join(context: &[TokenId], target: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    if context.is_empty() {
        return Err(Error::contract("context must hold at least one token"));
    }
    let len = context.len() + target.len();
    if len > max_len {
        return Err(Error::Length { len, max: max_len });
    }
    Ok([context, target].concat())
}

/// `out[i] = log P(target[i] | context ++ target[..i])`, from one forward pass
/// over the concatenation.
pub fn seq_log_probs<M: LanguageModel + ?Sized>(
    model: &M,
    context: &[TokenId],
    target: &[TokenId],
) -> Result<Vec<f64>> {
    let tokens = join(context, target, model.max_seq_len())?;
    if target.is_empty() {
        return Ok(Vec::new());
    }
    // The last target token is never an input for predicting anything we need.
    let lp = model.log_probs(&tokens[..tokens.len() - 1])?;
    Ok(target_rows(context.len(), target.len())
        .into_iter()
        .zip(target)
        .map(|(r, &t)| lp.at(r, t as usize))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            max_seq_len: 32,
            seed: 5,
            tie_embeddings: false,
        }
    }

    fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<TokenId> {
        (0..n).map(|_| rng.gen_range(0..vocab as TokenId)).collect()
    }

    #[test]
    fn rows_are_normalized() {
        for tie in [false, true] {
            let cfg = ModelConfig { tie_embeddings: tie, ..small(20) };
            let p = ModelParams::init(&cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let lp = forward(&p, &random_tokens(&mut rng, 12, 20)).unwrap();
            assert_eq!(lp.shape(), &[12, 20]);
            for t in 0..12 {
                let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_prefix_rows_are_bit_identical() {
        let p = ModelParams::init(&small(30)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tokens(&mut rng, 16, 30);
        let base = forward(&p, &a).unwrap();
        for t in [0, 5, 14] {
            let mut b = a.clone();
            b[t + 1..].reverse();
            for x in b[t + 1..].iter_mut() {
                *x = (*x + 7) % 30;
            }
            let other = forward(&p, &b).unwrap();
            for r in 0..=t {
                assert_eq!(base.row(r), other.row(r), "row {r} changed after editing > {t}");
            }
        }
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        let v = 64;
        let p = ModelParams::init(&ModelConfig::desk(v)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = forward(&p, &random_tokens(&mut rng, 40, v)).unwrap();
        let uniform = -(v as f64).ln();
        assert!(lp.data().iter().all(|x| (x - uniform).abs() < 1.0));
    }

    #[test]
    fn init_loss_is_near_ln_vocab() {
        let v = 50;
        let p = ModelParams::init(&ModelConfig::desk(v)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..100 {
            let seq = random_tokens(&mut rng, 10, v);
            let lp = seq_log_probs(&p, &seq[..1], &seq[1..]).unwrap();
            total -= lp.iter().sum::<f64>();
            count += lp.len();
        }
        let mean = total / count as f64;
        let ln_v = (v as f64).ln();
        assert!((mean - ln_v).abs() < 0.15 * ln_v, "init loss {mean} vs ln V {ln_v}");
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = small(10);
        assert_eq!(ModelParams::init(&cfg).unwrap(), ModelParams::init(&cfg).unwrap());
        let other = ModelParams::init(&ModelConfig { seed: 6, ..cfg.clone() }).unwrap();
        assert_ne!(ModelParams::init(&cfg).unwrap(), other);
        let p = ModelParams::init(&cfg).unwrap();
        assert!(p.get("layers.0.ln1.scale").unwrap().data().iter().all(|&x| x == 1.0));
        assert!(p.get("layers.1.mlp.in_bias").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_errors() {
        let p = ModelParams::init(&small(10)).unwrap();
        assert!(matches!(forward(&p, &[1; 33]), Err(Error::Length { len: 33, max: 32 })));
        assert!(matches!(forward(&p, &[1, 10]), Err(Error::Vocab { id: 10, .. })));
        assert!(ModelParams::init(&ModelConfig { n_heads: 3, ..small(10) }).is_err());
    }

    #[test]
    fn seq_log_probs_cases() {
        let p = ModelParams::init(&small(10)).unwrap();
        assert!(seq_log_probs(&p, &[1, 2], &[]).unwrap().is_empty());
        let single = seq_log_probs(&p, &[1, 2, 3], &[7]).unwrap();
        let full = forward(&p, &[1, 2, 3]).unwrap();
        assert_eq!(single[0], full.at(2, 7));
        assert!(matches!(seq_log_probs(&p, &[1; 30], &[1; 3]), Err(Error::Length { .. })));
    }

    #[test]
    fn lookup_table_closed_form() {
        // Two-token vocabulary. After [0] the next token is 1 with p=0.75;
        // after [0, 1] it is 0 with p=0.4; otherwise uniform.
        let m = LookupTableModel::uniform(2, 8)
            .with_row(vec![0], &[0.25, 0.75])
            .unwrap()
            .with_row(vec![0, 1], &[0.4, 0.6])
            .unwrap();
        let lp = seq_log_probs(&m, &[0], &[1, 0, 1]).unwrap();
        let expect = [0.75f64.ln(), 0.4f64.ln(), 0.5f64.ln()];
        for (a, b) in lp.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let vocab = crate::data::Vocab::build(["a", "b", "c"]);
        let params = ModelParams::init(&small(vocab.len())).unwrap();
        let ck = Checkpoint {
            params,
            vocab,
            template: crate::scoring::PromptTemplate::default(),
        };
        let text = ck.to_json_string();
        let back = Checkpoint::from_json_str(&text).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        let broken = text.replacen("\"tok_emb\"", "\"tok_embedding\"", 1);
        assert!(matches!(Checkpoint::from_json_str(&broken), Err(Error::Checkpoint(_))));
    }
}
