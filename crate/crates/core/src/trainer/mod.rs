//! Online EM training: estimate token weights under the current parameters,
//! then take one AdamW step on the weighted objective.

mod config;
mod optim;
mod run;

pub use config::{lr_at, EStepFrequency, Method, ScorerRef, TrainConfig};
pub use optim::{clip_grad_norm, AdamW};
pub use run::{
    build_vocab, checkpoint_name, evaluate_slots, render, train, EpochStats, SlotEval, StepStats, TrainOptions,
    TrainOutcome, TrainReport, Trainer,
};
