//! Closed-form evaluators and statistical estimators: the site-1 marginal
//! system, first-passage MGFs with their martingale coupling, and the
//! renewal-reward estimators built on regeneration cycles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color_two::RegenCycle;
use crate::linalg::dense_solve;
use crate::model::Rates;
use crate::stats::mean_se;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("MGF argument {b} is at or above the pole (must be < {limit})")]
    MgfPole { b: f64, limit: f64 },
    #[error("no finite mean: speed m = {m:.6} does not exceed drift w = {w:.6}")]
    NoFiniteMean { m: f64, w: f64 },
    #[error("estimator requires the CLT regime (m > w), got m = {m:.6}, w = {w:.6}")]
    NotCltRegime { m: f64, w: f64 },
    #[error("need at least {need} cycles, got {got}")]
    TooFewCycles { need: usize, got: usize },
}

/// Stationary site-1 color distribution of the first color process.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarginalSolution {
    pub nu_w: f64,
    pub nu_b: f64,
    pub nu_p: f64,
}

impl MarginalSolution {
    /// Residuals of the two balance equations; both should be ~1e-16.
    pub fn residuals(&self, r: &Rates) -> (f64, f64) {
        (
            r.rho() * r.q1() * self.nu_w - r.p2() * self.nu_b,
            r.p2() * (self.nu_w + self.nu_b) - r.q1() * self.nu_p,
        )
    }
}

/// Solve the 3x3 site-1 balance system:
/// `rho*q1*nu_w = p2*nu_b`, `p2*(nu_w + nu_b) = q1*nu_p`, masses sum to 1.
///
/// Nonsingular for every valid parameter set, so this cannot fail.
pub fn marginal_solve(r: &Rates) -> MarginalSolution {
    let mut a = vec![
        r.rho() * r.q1(),
        -r.p2(),
        0.0,
        r.p2(),
        r.p2(),
        -r.q1(),
        1.0,
        1.0,
        1.0,
    ];
    let mut b = vec![0.0, 0.0, 1.0];
    let x = dense_solve(&mut a, &mut b, 3).expect("marginal system is nonsingular");
    MarginalSolution {
        nu_w: x[0],
        nu_b: x[1],
        nu_p: x[2],
    }
}

/// The closed-form site-1 marginals as printed in the source derivation.
///
/// These do NOT solve the balance system above (their second residual is
/// `-p2`, not zero) and they are never used as targets; they are surfaced in
/// reports only so the discrepancy is visible.
pub fn printed_marginals(r: &Rates) -> MarginalSolution {
    let denom = (r.q1() + r.p2()) * (r.p2() + r.rho() * r.q1());
    MarginalSolution {
        nu_b: r.rho() * r.q1() * (r.q1() - r.p2()) / denom,
        nu_p: 2.0 * r.p2() / (r.q1() + r.p2()),
        nu_w: r.p2() * (r.q1() - r.p2()) / denom,
    }
}

/// Speed recovered from the jump-rate decomposition of the displacement:
/// `q1*nu_p + (1-rho)*q1*nu_w`. Equals [`Rates::speed`] to rounding.
pub fn speed_from_marginals(r: &Rates, s: &MarginalSolution) -> f64 {
    r.q1() * s.nu_p + (1.0 - r.rho()) * r.q1() * s.nu_w
}

/// MGF of the blue-start passage time (sum of independent Exp(p2) and
/// Exp(q1)); defined for `b < min(p2, q1)`.
pub fn mgf_tb(r: &Rates, b: f64) -> Result<f64, AnalyticsError> {
    let limit = r.p2().min(r.q1());
    if b >= limit {
        return Err(AnalyticsError::MgfPole { b, limit });
    }
    Ok(r.p2() / (r.p2() - b) * (r.q1() / (r.q1() - b)))
}

/// MGF of the purple-start passage time (Exp(q1)); defined for `b < q1`.
pub fn mgf_tp(r: &Rates, b: f64) -> Result<f64, AnalyticsError> {
    if b >= r.q1() {
        return Err(AnalyticsError::MgfPole { b, limit: r.q1() });
    }
    Ok(r.q1() / (r.q1() - b))
}

/// Bernoulli mixture of the two passage-time MGFs.
pub fn mgf_mixture(r: &Rates, b: f64) -> Result<f64, AnalyticsError> {
    Ok(r.rho() * mgf_tb(r, b)? + (1.0 - r.rho()) * mgf_tp(r, b)?)
}

/// Exponent transfer function of the regeneration-time identity:
/// `E[exp(g(b) tau)] = rho*M_Tb(b) + (1-rho)*M_Tp(b)`, with
/// `g(b) = b - (p1+p2)(mu(b)-1) - p2(mu(b)^2-1)` and `mu` the mixture.
pub fn g_of_b(r: &Rates, b: f64) -> Result<f64, AnalyticsError> {
    let mu = mgf_mixture(r, b)?;
    Ok(b - (r.p1() + r.p2()) * (mu - 1.0) - r.p2() * (mu * mu - 1.0))
}

/// Displacement transfer function: `(p1+p2)(e^b - 1) + p2(e^{2b} - 1)`.
/// Its derivative at 0 is the drift `w`.
pub fn h_of_b(r: &Rates, b: f64) -> f64 {
    (r.p1() + r.p2()) * (b.exp() - 1.0) + r.p2() * ((2.0 * b).exp() - 1.0)
}

/// Peak of `g` on the positive branch: `(b_peak, g(b_peak))`.
///
/// In the CLT regime `g` increases from `g(0) = 0`, peaks, then falls to
/// minus infinity at the MGF pole; the peak value bounds the exponential
/// moments of the regeneration time.
pub fn g_peak(r: &Rates) -> Result<(f64, f64), AnalyticsError> {
    let d = r.derived();
    if !d.clt_regime {
        return Err(AnalyticsError::NotCltRegime { m: d.m, w: d.w });
    }
    let pole = r.p2().min(r.q1());
    let (mut lo, mut hi) = (0.0, pole * (1.0 - 1e-9));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g_of_b(r, m1)? < g_of_b(r, m2)? {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let b_peak = 0.5 * (lo + hi);
    Ok((b_peak, g_of_b(r, b_peak)?))
}

/// Solve `g(b) = c` for `b >= 0` on the rising branch by bisection,
/// tolerance 1e-10 on `b`.
pub fn g_root(r: &Rates, c: f64) -> Result<f64, AnalyticsError> {
    if c == 0.0 {
        let d = r.derived();
        if !d.clt_regime {
            return Err(AnalyticsError::NotCltRegime { m: d.m, w: d.w });
        }
        return Ok(0.0);
    }
    let (b_peak, g_peak) = g_peak(r)?;
    if !(0.0 < c && c <= g_peak) {
        return Err(AnalyticsError::MgfPole { b: c, limit: g_peak });
    }
    // g is increasing on [0, b_peak] with g(0) = 0 < c <= g(b_peak).
    let (mut lo, mut hi) = (0.0, b_peak);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if g_of_b(r, mid)? < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Martingale parameters `(a', b', c', d')` that collapse the four-counter
/// exponential martingale onto the cycle balances:
/// `exp(a') = M_Tb(b)`, `exp(b') = M_Tp(b)`, `b' = -d'`, `c' = -a' - d'`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Coupling {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Coupling {
    pub fn params(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

pub fn coupling(r: &Rates, b: f64) -> Result<Coupling, AnalyticsError> {
    let a_p = mgf_tb(r, b)?.ln();
    let b_p = mgf_tp(r, b)?.ln();
    Ok(Coupling {
        a: a_p,
        b: b_p,
        c: (1.0 - b / r.p2()).ln(),
        d: -b_p,
    })
}

/// Mean regeneration time `1/(m - w)`; finite only in the CLT regime.
pub fn expected_tau(r: &Rates) -> Result<f64, AnalyticsError> {
    let d = r.derived();
    if !d.clt_regime {
        return Err(AnalyticsError::NoFiniteMean { m: d.m, w: d.w });
    }
    Ok(1.0 / (d.m - d.w))
}

/// Mean cycle displacement `m/(m - w) = m * E[tau]`.
pub fn expected_x_tau(r: &Rates) -> Result<f64, AnalyticsError> {
    Ok(r.speed() * expected_tau(r)?)
}

/// One row of the analytic MGF curve over a `b` grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MgfCurvePoint {
    pub b: f64,
    pub mgf_tb: f64,
    pub mgf_tp: f64,
    pub mixture: f64,
    pub g: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    pub c_prime: f64,
    pub d_prime: f64,
    pub h: f64,
}

pub fn mgf_curve(r: &Rates, b_grid: &[f64]) -> Result<Vec<MgfCurvePoint>, AnalyticsError> {
    b_grid
        .iter()
        .map(|&b| {
            let cpl = coupling(r, b)?;
            Ok(MgfCurvePoint {
                b,
                mgf_tb: mgf_tb(r, b)?,
                mgf_tp: mgf_tp(r, b)?,
                mixture: mgf_mixture(r, b)?,
                g: g_of_b(r, b)?,
                a_prime: cpl.a,
                b_prime: cpl.b,
                c_prime: cpl.c,
                d_prime: cpl.d,
                h: h_of_b(r, b),
            })
        })
        .collect()
}

/// Empirical check of the regeneration-time MGF identity at one `b`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MgfTauCheck {
    pub b: f64,
    pub g: f64,
    pub target: f64,
    pub empirical: f64,
    pub se: f64,
    pub z: f64,
}

/// Compare the empirical mean of `exp(g(b) tau)` over cycles with the
/// closed-form mixture target.
pub fn mgf_tau_check(
    cycles: &[RegenCycle],
    r: &Rates,
    b: f64,
) -> Result<MgfTauCheck, AnalyticsError> {
    let d = r.derived();
    if !d.clt_regime {
        return Err(AnalyticsError::NotCltRegime { m: d.m, w: d.w });
    }
    let g = g_of_b(r, b)?;
    let target = mgf_mixture(r, b)?;
    let samples: Vec<f64> = cycles.iter().map(|c| (g * c.tau).exp()).collect();
    let (empirical, se) = mean_se(&samples);
    Ok(MgfTauCheck {
        b,
        g,
        target,
        empirical,
        se,
        z: (empirical - target) / se,
    })
}

/// Renewal-reward CLT variance estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma2: f64,
    pub se: f64,
    pub mean_tau: f64,
    pub n_cycles: usize,
}

/// `sigma^2 = Var(X_tau - m*tau) / E[tau]`, with a delta-method standard
/// error from the joint sample moments of `(X_tau - m*tau)^2` and `tau`.
pub fn clt_sigma(cycles: &[RegenCycle], r: &Rates) -> Result<SigmaEstimate, AnalyticsError> {
    let d = r.derived();
    if !d.clt_regime {
        return Err(AnalyticsError::NotCltRegime { m: d.m, w: d.w });
    }
    if cycles.len() < 1000 {
        return Err(AnalyticsError::TooFewCycles {
            need: 1000,
            got: cycles.len(),
        });
    }
    let n = cycles.len() as f64;
    let m = r.speed();
    let ys: Vec<f64> = cycles
        .iter()
        .map(|c| c.x_tau as f64 - m * c.tau)
        .collect();
    let taus: Vec<f64> = cycles.iter().map(|c| c.tau).collect();
    let y_bar = ys.iter().sum::<f64>() / n;
    let tau_bar = taus.iter().sum::<f64>() / n;
    let mut v = 0.0; // Var(Y)
    let mut m4 = 0.0; // E (Y - Ybar)^4
    let mut var_tau = 0.0;
    let mut cov_sq_tau = 0.0; // Cov((Y - Ybar)^2, tau)
    for (y, t) in ys.iter().zip(&taus) {
        let dy = y - y_bar;
        let dt = t - tau_bar;
        v += dy * dy;
        m4 += dy * dy * dy * dy;
        var_tau += dt * dt;
        cov_sq_tau += dy * dy * dt;
    }
    v /= n;
    m4 /= n;
    var_tau /= n;
    cov_sq_tau /= n;
    let sigma2 = v / tau_bar;
    // Delta method on theta = v / mu_tau.
    let var_v = (m4 - v * v) / n;
    let var_mu = var_tau / n;
    let cov_v_mu = cov_sq_tau / n;
    let grad_v = 1.0 / tau_bar;
    let grad_mu = -v / (tau_bar * tau_bar);
    let var_theta = grad_v * grad_v * var_v
        + grad_mu * grad_mu * var_mu
        + 2.0 * grad_v * grad_mu * cov_v_mu;
    Ok(SigmaEstimate {
        sigma2,
        se: var_theta.max(0.0).sqrt(),
        mean_tau: tau_bar,
        n_cycles: cycles.len(),
    })
}
