//! Reproducible randomness and Gillespie event selection.
//!
//! Every replica owns one [`RngStream`], keyed by `(seed, stream_id)`.
//! Identical keys reproduce identical event sequences bit-for-bit; distinct
//! stream ids give statistically independent streams. A simulation step
//! builds an [`EventCatalog`] of `(tag, rate)` entries, draws an
//! `Exp(total_rate)` holding time, and picks one entry proportionally to its
//! rate. Superposing independent Poisson clocks into one catalog this way is
//! distributionally exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("exponential rate must be > 0, got {0}")]
    NonPositiveRate(f64),
    #[error("no active events: catalog total rate is zero")]
    NoActiveEvents,
}

/// Seeded, replica-confined random stream.
///
/// Backed by ChaCha with a 64-bit stream index, so `(seed, stream_id)`
/// fully determines the draw sequence on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            rng,
            seed,
            stream_id,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Exp(rate)-distributed holding time, mean `1/rate`.
    pub fn exponential(&mut self, rate: f64) -> Result<f64, KernelError> {
        if !(rate > 0.0) {
            return Err(KernelError::NonPositiveRate(rate));
        }
        let u = self.uniform();
        Ok(-(1.0 - u).ln() / rate)
    }

    /// Bernoulli(rho) occupancy draw. Exact at both endpoints: `rho = 0`
    /// never occupies, `rho = 1` always does.
    pub fn bernoulli(&mut self, rho: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&rho));
        self.uniform() < rho
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

/// Competing-exponential-clock catalog for one Gillespie step.
///
/// Entries with zero rate are omitted at insertion so the selection walk
/// only ever sees active clocks.
#[derive(Debug, Clone)]
pub struct EventCatalog<T> {
    entries: Vec<(T, f64)>,
    total_rate: f64,
}

impl<T: Copy> EventCatalog<T> {
    pub fn new() -> Self {
        EventCatalog {
            entries: Vec::new(),
            total_rate: 0.0,
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        EventCatalog {
            entries: Vec::with_capacity(n),
            total_rate: 0.0,
        }
    }

    pub fn push(&mut self, tag: T, rate: f64) {
        debug_assert!(rate.is_finite() && rate >= 0.0);
        if rate > 0.0 {
            self.entries.push((tag, rate));
            self.total_rate += rate;
        }
    }

    /// Empty the catalog, keeping its allocation for rebuilds.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.total_rate = 0.0;
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(T, f64)] {
        &self.entries
    }

    /// Pick one entry with probability `rate / total_rate`.
    pub fn sample(&self, rng: &mut RngStream) -> Result<T, KernelError> {
        if self.entries.is_empty() {
            return Err(KernelError::NoActiveEvents);
        }
        let target = rng.uniform() * self.total_rate;
        let mut acc = 0.0;
        for &(tag, rate) in &self.entries {
            acc += rate;
            if target < acc {
                return Ok(tag);
            }
        }
        // Rounding can leave target marginally above the accumulated sum.
        Ok(self.entries[self.entries.len() - 1].0)
    }

    /// Holding time then event: one full Gillespie step against this catalog.
    pub fn step(&self, rng: &mut RngStream) -> Result<(f64, T), KernelError> {
        if self.entries.is_empty() {
            return Err(KernelError::NoActiveEvents);
        }
        let dt = rng.exponential(self.total_rate)?;
        let tag = self.sample(rng)?;
        Ok((dt, tag))
    }
}

impl<T: Copy> Default for EventCatalog<T> {
    fn default() -> Self {
        Self::new()
    }
}
