//! Adaptive Metropolis-within-Gibbs sampling, multi-chain orchestration,
//! convergence diagnostics and posterior summaries.

mod diagnostics;
mod sampler;
mod summary;

pub use diagnostics::{ess, r_hat, Diagnostics};
pub use sampler::{initial_state, run_chain, run_chains, ChainRun, Fit};
pub use summary::{quantile, summarize, Transform};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub n_chains: usize,
    pub burn_in: usize,
    /// Post burn-in iterations per chain; every `thin`-th one is kept.
    pub n_draws: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Iterations between proposal-scale updates during burn-in.
    pub adapt_window: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self::paper(0)
    }
}

impl SamplerSettings {
    /// Production-length chains: 10 chains, 20k burn-in, 50k draws, thin 5.
    pub fn paper(seed: u64) -> Self {
        Self {
            n_chains: 10,
            burn_in: 20_000,
            n_draws: 50_000,
            thin: 5,
            seed,
            target_accept: 0.44,
            adapt_window: 50,
        }
    }

    /// Desk-scale chains: 4 chains, 5k burn-in, 10k draws, thin 5.
    pub fn desk(seed: u64) -> Self {
        Self { n_chains: 4, burn_in: 5_000, n_draws: 10_000, ..Self::paper(seed) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Retained draws per chain.
    pub fn kept(&self) -> usize {
        self.n_draws / self.thin
    }

    pub fn check(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Domain("n_chains must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thin must be at least 1".into()));
        }
        if self.n_draws < self.thin {
            return Err(Error::Domain("n_draws must be at least thin".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::Domain("adapt_window must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
