use super::params::{slot, ModelParams, BLOCK_LEN};
use super::{check_tokens, Forward, LanguageModel};
use crate::data::TokenId;
use crate::error::Result;
use crate::numcore::{Tape, Var};

const LN_EPS: f64 = 1e-5;

impl ModelParams {
    fn bind(&self, tape: &mut Tape, track_grad: bool) -> Vec<Var> {
        self.tensors()
            .iter()
            .map(|t| {
                if track_grad {
                    tape.leaf(t.tensor.clone().requiring_grad())
                } else {
                    tape.constant(t.tensor.clone())
                }
            })
            .collect()
    }

    fn attention(&self, tape: &mut Tape, h: Var, p: &[Var]) -> Result<Var> {
        let c = self.config();
        let q = tape.matmul(h, p[slot::ATTN_Q])?;
        let k = tape.matmul(h, p[slot::ATTN_K])?;
        let v = tape.matmul(h, p[slot::ATTN_V])?;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(c.n_heads);
        for head in 0..c.n_heads {
            let (qh, kh, vh) = if c.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, head * dh, dh)?,
                    tape.slice_cols(k, head * dh, dh)?,
                    tape.slice_cols(v, head * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let attn = tape.causal_softmax(scores, scale)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        tape.matmul(merged, p[slot::ATTN_O])
    }

    fn block(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        let h = tape.layer_norm(x, p[slot::LN1_SCALE], p[slot::LN1_SHIFT], LN_EPS)?;
        let a = self.attention(tape, h, p)?;
        let x = tape.add(x, a)?;
        let h = tape.layer_norm(x, p[slot::LN2_SCALE], p[slot::LN2_SHIFT], LN_EPS)?;
        let m = tape.matmul(h, p[slot::MLP_IN])?;
        let m = tape.add_bias(m, p[slot::MLP_IN_BIAS])?;
        let m = tape.gelu(m);
        let m = tape.matmul(m, p[slot::MLP_OUT])?;
        let m = tape.add_bias(m, p[slot::MLP_OUT_BIAS])?;
        tape.add(x, m)
    }
}

impl LanguageModel for ModelParams {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config().max_seq_len
    }

    fn forward_tape(&self, tape: &mut Tape, tokens: &[TokenId], track_grad: bool) -> Result<Forward> {
        check_tokens(tokens, self.vocab_size(), self.max_seq_len())?;
        let vars = self.bind(tape, track_grad);
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();

        let tok = tape.gather_rows(vars[slot::TOK_EMB], &ids)?;
        let pos = tape.gather_rows(vars[slot::POS_EMB], &positions)?;
        let mut x = tape.add(tok, pos)?;
        for l in 0..self.config().n_layers {
            let start = slot::FIRST_BLOCK + l * BLOCK_LEN;
            x = self.block(tape, x, &vars[start..start + BLOCK_LEN])?;
        }
        let f = self.final_norm_slot();
        let h = tape.layer_norm(x, vars[f], vars[f + 1], LN_EPS)?;
        let logits = match self.lm_head_slot() {
            Some(i) => tape.matmul(h, vars[i])?,
            None => tape.matmul_nt(h, vars[slot::TOK_EMB])?,
        };
        let log_probs = tape.log_softmax(logits)?;
        Ok(Forward {
            log_probs,
            params: vars,
        })
    }
}
