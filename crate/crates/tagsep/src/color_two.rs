//! Stopped boundary color process with regeneration detection.
//!
//! The revealed zone is `1..=m`; every site in it is colored blue or purple
//! and everything beyond is an unrevealed Bernoulli cup. The boundary grows
//! by 1 at rate `p1 + p2` and by 2 at rate `p2`, revealing the new sites by
//! iid Bernoulli(rho) draws before the exchange that carried a colored cup
//! across; it shrinks by 1 exactly when the tagged clock fires on a purple
//! site 1. The first hitting time of `m = 0` is the regeneration time, and
//! cycles between regenerations are iid.
//!
//! Four counting processes accompany the cycle: white-to-blue and
//! white-to-purple reveals, blue-to-purple recolorings, and boundary
//! decreases (which equal the tagged displacement within the cycle).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color_one::Color;
use crate::kernel::{EventCatalog, RngStream};
use crate::model::Rates;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error(
        "cycle {cycle} exceeded the event cap ({events} events, t = {elapsed:.3}, m = {m}); \
         counters so far: {counters:?}"
    )]
    Truncated {
        cycle: u64,
        events: u64,
        elapsed: f64,
        m: usize,
        counters: CycleCounters,
    },
}

/// Counting-process totals within one regeneration cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCounters {
    /// White cups revealed blue (boundary growth and the cycle-start reveal).
    pub n_wb: u64,
    /// White cups revealed purple.
    pub n_wp: u64,
    /// Blue cups recolored purple by the removal clock.
    pub n_bp: u64,
    /// Boundary decreases; equals the tagged displacement in the cycle.
    pub n_pd: u64,
}

/// One completed regeneration cycle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegenCycle {
    pub tau: f64,
    pub x_tau: u64,
    pub counters: CycleCounters,
    /// Site-1 reveal that started the cycle.
    pub initial_color: Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiEvent {
    /// Exchange two revealed sites (1-based, differing colors).
    Swap(usize, usize),
    /// Exchange `(m, m+1)` at rate `p1`: reveal one site, boundary +1.
    GrowOneNear,
    /// Exchange `(m-1, m+1)` at rate `p2` (no exchange when `m = 1`):
    /// reveal one site, boundary +1.
    GrowOneFar,
    /// Exchange `(m, m+2)` at rate `p2`: reveal two sites, boundary +2.
    GrowTwo,
    /// Tagged clock at rate `q1`: purple site 1 shifts the zone left.
    TaggedClock,
    /// Removal clock at rate `p2`: site 1 becomes purple.
    Removal,
}

/// The revealed zone `1..=m`; `colors[0]` is site 1, `m = colors.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryState {
    colors: Vec<Color>,
}

impl BoundaryState {
    pub fn new(initial: Color) -> Self {
        BoundaryState {
            colors: vec![initial],
        }
    }

    pub fn from_colors(colors: Vec<Color>) -> Self {
        BoundaryState { colors }
    }

    pub fn m(&self) -> usize {
        self.colors.len()
    }

    pub fn colors(&self) -> &[Color] {
        &self.colors
    }

    pub fn site(&self, i: usize) -> Color {
        self.colors[i - 1]
    }

    fn count(&self, c: Color) -> u64 {
        self.colors.iter().filter(|&&x| x == c).count() as u64
    }
}

/// Gillespie simulator for the stopped boundary process.
///
/// An optional `cap` suppresses growth events whose target boundary would
/// exceed it (rates removed, not redirected), matching the capped CTMC
/// oracle exactly.
#[derive(Debug, Clone)]
pub struct ColorTwoSim {
    rates: Rates,
    state: BoundaryState,
    counters: CycleCounters,
    shifts: u64,
    cap: Option<usize>,
    catalog: EventCatalog<PsiEvent>,
}

impl ColorTwoSim {
    /// Start a cycle: reveal site 1 with a Bernoulli(rho) trial; the reveal
    /// is counted in the cycle's counters.
    pub fn start_cycle(rates: Rates, cap: Option<usize>, rng: &mut RngStream) -> Self {
        let mut counters = CycleCounters::default();
        let initial = if rng.bernoulli(rates.rho()) {
            counters.n_wb += 1;
            Color::Blue
        } else {
            counters.n_wp += 1;
            Color::Purple
        };
        ColorTwoSim {
            rates,
            state: BoundaryState::new(initial),
            counters,
            shifts: 0,
            cap,
            catalog: EventCatalog::new(),
        }
    }

    /// Test entry point with a fixed state and clean counters.
    pub fn with_state(rates: Rates, state: BoundaryState, cap: Option<usize>) -> Self {
        ColorTwoSim {
            rates,
            state,
            counters: CycleCounters::default(),
            shifts: 0,
            cap,
            catalog: EventCatalog::new(),
        }
    }

    pub fn state(&self) -> &BoundaryState {
        &self.state
    }

    pub fn counters(&self) -> CycleCounters {
        self.counters
    }

    pub fn shifts(&self) -> u64 {
        self.shifts
    }

    pub fn regenerated(&self) -> bool {
        self.state.m() == 0
    }

    /// Active clocks at the current state. Requires `m >= 1`.
    pub fn catalog(rates: &Rates, state: &BoundaryState, cap: Option<usize>) -> EventCatalog<PsiEvent> {
        let mut cat = EventCatalog::with_capacity(2 * state.m() + 5);
        Self::fill_catalog(rates, state, cap, &mut cat);
        cat
    }

    fn fill_catalog(
        rates: &Rates,
        state: &BoundaryState,
        cap: Option<usize>,
        cat: &mut EventCatalog<PsiEvent>,
    ) {
        let m = state.m();
        assert!(m >= 1, "catalog undefined at the regenerated state");
        cat.clear();
        for i in 1..m {
            if state.site(i) != state.site(i + 1) {
                cat.push(PsiEvent::Swap(i, i + 1), rates.p1());
            }
        }
        for i in 1..m.saturating_sub(1) {
            if state.site(i) != state.site(i + 2) {
                cat.push(PsiEvent::Swap(i, i + 2), rates.p2());
            }
        }
        let fits = |target: usize| cap.map_or(true, |c| target <= c);
        if fits(m + 1) {
            cat.push(PsiEvent::GrowOneNear, rates.p1());
            cat.push(PsiEvent::GrowOneFar, rates.p2());
        }
        if fits(m + 2) {
            cat.push(PsiEvent::GrowTwo, rates.p2());
        }
        cat.push(PsiEvent::TaggedClock, rates.q1());
        cat.push(PsiEvent::Removal, rates.p2());
    }

    /// One event with its holding time. Requires `m >= 1`.
    pub fn step(&mut self, rng: &mut RngStream) -> (f64, PsiEvent) {
        let rates = self.rates;
        let cap = self.cap;
        Self::fill_catalog(&rates, &self.state, cap, &mut self.catalog);
        let dt = rng
            .exponential(self.catalog.total_rate())
            .expect("q1 > 0 keeps the catalog non-empty");
        let event = self.catalog.sample(rng).expect("non-empty catalog");
        self.apply(event, rng);
        (dt, event)
    }

    /// Replay an event with forced reveal outcomes; enumeration support for
    /// the exact-oracle cross-checks.
    #[cfg(test)]
    pub(crate) fn apply_forced(&mut self, event: PsiEvent, reveals: &[Color]) {
        let mut queue = reveals.iter().copied();
        self.apply_with(event, &mut |counters: &mut CycleCounters| {
            let c = queue.next().expect("forced reveal exhausted");
            match c {
                Color::Blue => counters.n_wb += 1,
                Color::Purple => counters.n_wp += 1,
            }
            c
        });
    }

    /// Apply an event; growth events reveal first, then interchange.
    pub fn apply(&mut self, event: PsiEvent, rng: &mut RngStream) {
        let rho = self.rates.rho();
        self.apply_with(event, &mut |counters: &mut CycleCounters| {
            if rng.bernoulli(rho) {
                counters.n_wb += 1;
                Color::Blue
            } else {
                counters.n_wp += 1;
                Color::Purple
            }
        });
    }

    fn apply_with(
        &mut self,
        event: PsiEvent,
        reveal: &mut dyn FnMut(&mut CycleCounters) -> Color,
    ) {
        match event {
            PsiEvent::Swap(a, b) => self.state.colors.swap(a - 1, b - 1),
            PsiEvent::GrowOneNear => {
                let sigma = reveal(&mut self.counters);
                let m = self.state.m();
                let old = self.state.colors[m - 1];
                self.state.colors[m - 1] = sigma;
                self.state.colors.push(old);
            }
            PsiEvent::GrowOneFar => {
                let sigma = reveal(&mut self.counters);
                let m = self.state.m();
                if m == 1 {
                    // Clock through site 0: reveal only, no interchange.
                    self.state.colors.push(sigma);
                } else {
                    let old = self.state.colors[m - 2];
                    self.state.colors[m - 2] = sigma;
                    self.state.colors.push(old);
                }
            }
            PsiEvent::GrowTwo => {
                let sigma1 = reveal(&mut self.counters); // site m+1
                let sigma2 = reveal(&mut self.counters); // site m+2, swapped down to m
                let m = self.state.m();
                let old = self.state.colors[m - 1];
                self.state.colors[m - 1] = sigma2;
                self.state.colors.push(sigma1);
                self.state.colors.push(old);
            }
            PsiEvent::TaggedClock => {
                if self.state.colors[0] == Color::Purple {
                    self.state.colors.remove(0);
                    self.counters.n_pd += 1;
                    self.shifts += 1;
                }
            }
            PsiEvent::Removal => {
                if self.state.colors[0] == Color::Blue {
                    self.state.colors[0] = Color::Purple;
                    self.counters.n_bp += 1;
                }
            }
        }
    }

    /// Exact counter identities, checked against a fresh recount of the
    /// state. Panics on any violation.
    pub fn assert_counter_invariants(&self) {
        let blue = self.state.count(Color::Blue);
        let purple = self.state.count(Color::Purple);
        let c = &self.counters;
        assert!(c.n_wb >= c.n_bp, "blue balance negative: {c:?}");
        assert_eq!(c.n_wb - c.n_bp, blue, "blue balance mismatch: {c:?}");
        assert!(c.n_bp + c.n_wp >= c.n_pd, "purple balance negative: {c:?}");
        assert_eq!(
            c.n_bp + c.n_wp - c.n_pd,
            purple,
            "purple balance mismatch: {c:?}"
        );
        assert_eq!(self.shifts, c.n_pd, "displacement != boundary decreases");
    }
}

/// Limits for a single cycle; exceeding the event cap aborts with
/// diagnostics instead of hanging in the heavy-tailed regime.
#[derive(Debug, Clone, Copy)]
pub struct CycleLimits {
    pub max_events: u64,
}

impl Default for CycleLimits {
    fn default() -> Self {
        CycleLimits {
            max_events: 100_000_000,
        }
    }
}

/// Run one full regeneration cycle. Counter invariants are asserted after
/// every event when `validate` is set.
pub fn run_cycle(
    rates: Rates,
    cap: Option<usize>,
    limits: CycleLimits,
    validate: bool,
    cycle_index: u64,
    rng: &mut RngStream,
) -> Result<(RegenCycle, u64), CycleError> {
    let mut sim = ColorTwoSim::start_cycle(rates, cap, rng);
    let initial_color = sim.state.colors[0];
    let mut tau = 0.0;
    let mut events = 0u64;
    while !sim.regenerated() {
        if events >= limits.max_events {
            return Err(CycleError::Truncated {
                cycle: cycle_index,
                events,
                elapsed: tau,
                m: sim.state.m(),
                counters: sim.counters,
            });
        }
        let (dt, _) = sim.step(rng);
        tau += dt;
        events += 1;
        if validate {
            sim.assert_counter_invariants();
        }
    }
    let counters = sim.counters;
    debug_assert_eq!(counters.n_pd, sim.shifts);
    debug_assert_eq!(counters.n_wb, counters.n_bp);
    debug_assert_eq!(counters.n_bp + counters.n_wp, counters.n_pd);
    Ok((
        RegenCycle {
            tau,
            x_tau: counters.n_pd,
            counters,
            initial_color,
        },
        events,
    ))
}

/// Simulate `n_cycles` iid regeneration cycles, one RNG stream per cycle so
/// results are independent of the parallelism level. Returns the cycles and
/// the total event count.
pub fn run_cycles(
    rates: Rates,
    n_cycles: u64,
    cap: Option<usize>,
    limits: CycleLimits,
    validate: bool,
    seed: u64,
) -> Result<(Vec<RegenCycle>, u64), CycleError> {
    let results: Result<Vec<(RegenCycle, u64)>, CycleError> = (0..n_cycles)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i);
            run_cycle(rates, cap, limits, validate, i, &mut rng)
        })
        .collect();
    let results = results?;
    let events = results.iter().map(|(_, e)| e).sum();
    Ok((results.into_iter().map(|(c, _)| c).collect(), events))
}

/// One evaluated path of the exponential martingale, stopped at `t ^ tau`.
#[derive(Debug, Clone, Copy)]
pub struct MartingalePath {
    /// `log M_{t ^ tau}(a, b, c, d)`.
    pub log_m: f64,
    /// `t ^ tau` for this path.
    pub stopped_at: f64,
    /// Whether regeneration arrived before the stopping time.
    pub regenerated: bool,
    /// Initial site-1 reveal.
    pub initial_color: Color,
    /// Counter increments after the cycle-start reveal.
    pub delta_wb: u64,
    pub delta_wp: u64,
    pub delta_bp: u64,
    pub delta_pd: u64,
}

/// Evaluate the exponential martingale along one path of the stopped
/// process: counter increments after the cycle-start reveal, minus the
/// compensator integrated exactly over each holding interval (the
/// integrand is constant between events).
pub fn martingale_path(
    rates: Rates,
    params: [f64; 4],
    t_stop: f64,
    rng: &mut RngStream,
) -> MartingalePath {
    let [a, b, c, d] = params;
    let mu = rates.rho() * a.exp() + (1.0 - rates.rho()) * b.exp();
    let growth_term =
        (rates.p1() + rates.p2()) * (mu - 1.0) + rates.p2() * (mu * mu - 1.0);
    let blue_term = rates.p2() * (c.exp() - 1.0);
    let purple_term = rates.q1() * (d.exp() - 1.0);

    let mut sim = ColorTwoSim::start_cycle(rates, None, rng);
    let initial_color = sim.state.colors[0];
    let base = sim.counters();
    let mut t = 0.0;
    let mut integral = 0.0;
    while !sim.regenerated() && t < t_stop {
        let rates_local = sim.rates;
        ColorTwoSim::fill_catalog(&rates_local, &sim.state, sim.cap, &mut sim.catalog);
        let dt = rng
            .exponential(sim.catalog.total_rate())
            .expect("non-empty catalog");
        // Site 1 is blue or purple whenever m >= 1, so exactly one of the
        // two site-1 terms is active on each holding interval.
        let integrand = growth_term
            + if sim.state.colors[0] == Color::Blue {
                blue_term
            } else {
                purple_term
            };
        if t + dt >= t_stop {
            integral += integrand * (t_stop - t);
            t = t_stop;
            break;
        }
        integral += integrand * dt;
        t += dt;
        let event = sim.catalog.sample(rng).expect("non-empty catalog");
        sim.apply(event, rng);
    }
    let cs = sim.counters();
    let delta_wb = cs.n_wb - base.n_wb;
    let delta_wp = cs.n_wp - base.n_wp;
    let delta_bp = cs.n_bp - base.n_bp;
    let delta_pd = cs.n_pd - base.n_pd;
    MartingalePath {
        log_m: a * delta_wb as f64 + b * delta_wp as f64 + c * delta_bp as f64
            + d * delta_pd as f64
            - integral,
        stopped_at: t,
        regenerated: sim.regenerated(),
        initial_color,
        delta_wb,
        delta_wp,
        delta_bp,
        delta_pd,
    }
}

/// Empirical sample of the exponential martingale at `t ^ tau` over
/// independent replicas; the contract is mean 1.
pub fn martingale_check(
    rates: Rates,
    params: [f64; 4],
    t_stop: f64,
    replicas: u64,
    seed: u64,
) -> Vec<f64> {
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i);
            martingale_path(rates, params, t_stop, &mut rng).log_m.exp()
        })
        .collect()
}
