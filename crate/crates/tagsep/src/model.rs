//! Model parameters and derived constants shared by every simulator.
//!
//! The environment walk is symmetric with range two: `p(±1) = p1`,
//! `p(±2) = p2`, zero beyond. The tagged particle jumps one step right at
//! rate `q1`. The initial environment is Bernoulli(`rho`). `p1 = 0` is a
//! valid choice; `rho` may sit at either endpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameter-domain violations caught at construction time.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("p1 must be finite and >= 0, got {0}")]
    BadP1(f64),
    #[error("p2 must be finite and > 0, got {0}")]
    BadP2(f64),
    #[error("q1 must be finite and > 0, got {0}")]
    BadQ1(f64),
    #[error("rho must lie in [0, 1], got {0}")]
    BadRho(f64),
}

/// The four model parameters, validated once at construction.
///
/// Downstream modules treat a `Rates` value as immutable; it is `Copy` and
/// freely shareable across parallel replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRates", into = "RawRates")]
pub struct Rates {
    p1: f64,
    p2: f64,
    q1: f64,
    rho: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawRates {
    p1: f64,
    p2: f64,
    q1: f64,
    rho: f64,
}

impl TryFrom<RawRates> for Rates {
    type Error = ModelError;
    fn try_from(raw: RawRates) -> Result<Self, ModelError> {
        Rates::new(raw.p1, raw.p2, raw.q1, raw.rho)
    }
}

impl From<Rates> for RawRates {
    fn from(r: Rates) -> Self {
        RawRates {
            p1: r.p1,
            p2: r.p2,
            q1: r.q1,
            rho: r.rho,
        }
    }
}

impl Rates {
    pub fn new(p1: f64, p2: f64, q1: f64, rho: f64) -> Result<Self, ModelError> {
        if !p1.is_finite() || p1 < 0.0 {
            return Err(ModelError::BadP1(p1));
        }
        if !p2.is_finite() || p2 <= 0.0 {
            return Err(ModelError::BadP2(p2));
        }
        if !q1.is_finite() || q1 <= 0.0 {
            return Err(ModelError::BadQ1(q1));
        }
        if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
            return Err(ModelError::BadRho(rho));
        }
        Ok(Rates { p1, p2, q1, rho })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p2(&self) -> f64 {
        self.p2
    }
    pub fn q1(&self) -> f64 {
        self.q1
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Symmetric jump rate at displacement `d`: `p1` for |d|=1, `p2` for
    /// |d|=2, zero otherwise.
    pub fn p_at(&self, d: i64) -> f64 {
        match d.abs() {
            1 => self.p1,
            2 => self.p2,
            _ => 0.0,
        }
    }

    /// Asymptotic speed of the tagged particle:
    /// `m = (1/q1 + rho/p2)^-1 = p2*q1/(p2 + rho*q1)`.
    pub fn speed(&self) -> f64 {
        self.p2 * self.q1 / (self.p2 + self.rho * self.q1)
    }

    /// Mean upward drift of the revealed-boundary process: `w = p1 + 3*p2`.
    pub fn drift(&self) -> f64 {
        self.p1 + 3.0 * self.p2
    }

    /// True iff the speed strictly exceeds the drift; gates every
    /// regenerative-moment experiment.
    pub fn clt_regime(&self) -> bool {
        self.speed() > self.drift()
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants {
            m: self.speed(),
            w: self.drift(),
            clt_regime: self.clt_regime(),
        }
    }
}

/// Speed, drift, and the regime flag, bundled for report echoes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub m: f64,
    pub w: f64,
    pub clt_regime: bool,
}
