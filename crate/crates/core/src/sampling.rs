//! Reproducible state sampling and sampled Lipschitz estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;

/// Uniform sampling over an axis-aligned box. The stream is a ChaCha8
/// counter-mode generator keyed by `seed`, so the same spec always yields the
/// same states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    bounds: Vec<(f64, f64)>,
    count: usize,
    seed: u64,
}

impl SamplingSpec {
    pub fn new(bounds: Vec<(f64, f64)>, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        if bounds.is_empty() {
            return Err(Error::InvalidInput("sampling box has no coordinates".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!("empty sampling interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds, count, seed })
    }

    /// The same interval on every coordinate.
    pub fn cube(n: usize, lo: f64, hi: f64, count: usize, seed: u64) -> Result<Self> {
        Self::new(vec![(lo, hi); n], count, seed)
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_count(&self, count: usize) -> Result<Self> {
        Self::new(self.bounds.clone(), count, self.seed)
    }

    pub(crate) fn require_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::Dimension {
                context: "sampling box",
                expected: n,
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn states(&self) -> Vec<State> {
        let mut rng = self.rng();
        (0..self.count)
            .map(|_| {
                State::from_iterator(
                    self.dim(),
                    self.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)),
                )
            })
            .collect()
    }
}

/// Evaluates `score` at every state in parallel and returns the index of the
/// smallest score; ties go to the lower index. Errors are reported for the
/// lowest failing index.
pub(crate) fn argmin_parallel<F>(states: &[State], score: F) -> Result<Option<(usize, f64)>>
where
    F: Fn(&State) -> Result<f64> + Sync,
{
    let scores: Vec<Result<f64>> = states.par_iter().map(&score).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = s?;
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    Ok(best)
}

/// Sampled lower bound on the constant `L` in `||f(x)||_P^2 <= L ||x||_P^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub l_hat: f64,
    pub samples: usize,
    pub bounds: Vec<(f64, f64)>,
    /// State attaining `l_hat`.
    pub argmax: Vec<f64>,
}

impl LipschitzEstimate {
    pub fn new(l_hat: f64) -> Self {
        Self {
            l_hat,
            samples: 0,
            bounds: Vec::new(),
            argmax: Vec::new(),
        }
    }
}
