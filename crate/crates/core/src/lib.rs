//! Dynamically fused graph network for multi-hop question answering, sized for
//! a single CPU core: autodiff, synthetic data, entity graphs, the reader
//! model, training and reasoning-chain extraction.

pub mod chains;
pub mod config;
pub mod context;
pub mod data;
pub mod encoder;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod selector;
pub mod tensor;

use rand_chacha::ChaCha8Rng;

use crate::tensor::{Result, Tape, Var};

/// Dropout switch threaded through forward passes. In eval mode every call is
/// the identity and no random numbers are drawn.
pub struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn eval() -> Self {
        Dropout { rng: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Dropout { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, rate, true, rng),
            None => {
                let mut unused = rand::rngs::mock::StepRng::new(0, 0);
                tape.dropout(x, rate, false, &mut unused)
            }
        }
    }
}
