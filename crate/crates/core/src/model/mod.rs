//! Micro decoder-only transformer with inspectable internals.

mod forward;
mod params;

pub use forward::{
    block_forward, build_graph, forward, layer_update, load_params, loss_ce, patch_forward,
    propagate, readout, trace_loss_ce, ForwardTrace, Graph, Patch,
};
pub use params::{ModelConfig, Params};

use crate::error::{ensure, Result};
use crate::numcore::Rng;

/// Replaces each position after the first by a uniform vocabulary id with probability `rate`.
pub fn perturb_tokens(tokens: &[usize], rate: f64, vocab_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    ensure!((0.0..=1.0).contains(&rate), Precondition, "rate {rate} outside [0, 1]");
    ensure!(vocab_size >= 1, Precondition, "empty vocabulary");
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i > 0 && rng.bernoulli(rate) {
                rng.below(vocab_size)
            } else {
                t
            }
        })
        .collect())
}
