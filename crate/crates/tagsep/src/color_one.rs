//! Lazy exact simulator of the first auxiliary color process.
//!
//! State is the sparse set of colored (revealed) sites; every other site
//! holds an unrevealed Bernoulli cup and is "white". White-white exchanges
//! fix the state pointwise, so the event catalog only carries exchanges
//! between sites of differing colors — omitting the rest is an identity on
//! trajectories, not an approximation.
//!
//! Events:
//! - exchange of sites `{i, j}`, `|i-j| in {1,2}`, at rate `p_{|i-j|}`,
//!   kept only when the two colors differ;
//! - the tagged clock at rate `q1`: site 1 purple -> shift the whole field
//!   left and advance the tagged particle; white -> reveal Bernoulli(rho)
//!   (occupied -> blue stays put, vacant -> shift and advance); blue -> the
//!   jump is blocked;
//! - the removal clock at rate `p2`: site 1 is recolored purple (its
//!   occupant, if any, jumped strictly left of the tagged particle and was
//!   deleted).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{EventCatalog, RngStream};
use crate::model::Rates;

/// Color of a revealed site. White is represented by absence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Color {
    Blue,
    Purple,
}

/// Site-1 color including the unrevealed case; indexes occupation-time bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteColor {
    White,
    Blue,
    Purple,
}

impl SiteColor {
    pub fn index(self) -> usize {
        match self {
            SiteColor::White => 0,
            SiteColor::Blue => 1,
            SiteColor::Purple => 2,
        }
    }
}

/// Finitely many colored sites on `{1, 2, ...}`; white beyond.
#[derive(Debug, Clone, Default)]
pub struct ColorField {
    colored: BTreeMap<i64, Color>,
}

impl ColorField {
    pub fn new() -> Self {
        ColorField {
            colored: BTreeMap::new(),
        }
    }

    pub fn get(&self, site: i64) -> Option<Color> {
        self.colored.get(&site).copied()
    }

    pub fn site_one(&self) -> SiteColor {
        match self.get(1) {
            None => SiteColor::White,
            Some(Color::Blue) => SiteColor::Blue,
            Some(Color::Purple) => SiteColor::Purple,
        }
    }

    pub fn colored_sites(&self) -> impl Iterator<Item = (i64, Color)> + '_ {
        self.colored.iter().map(|(&s, &c)| (s, c))
    }

    pub fn n_colored(&self) -> usize {
        self.colored.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaEvent {
    /// Exchange the colors at the two sites (differing colors only).
    Swap(i64, i64),
    /// The tagged particle's jump clock.
    TaggedClock,
    /// The site-1 left-exit clock: recolor site 1 purple.
    Removal,
}

/// What a single applied event did; used by the step-invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaOutcome {
    Swapped(i64, i64),
    /// Removal clock; `was` is the prior site-1 color.
    RecoloredPurple { was: SiteColor },
    /// Tagged clock on purple site 1: field shifted, displacement +1.
    ShiftedPurple,
    /// Tagged clock on blue site 1: jump suppressed.
    BlockedBlue,
    /// Tagged clock on white site 1, revealed occupied: site 1 turns blue.
    RevealedBlue,
    /// Tagged clock on white site 1, revealed vacant: shift, displacement +1.
    RevealedVacantShifted,
}

/// Running observables along one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub t: f64,
    /// Tagged displacement: the exact number of applied left shifts.
    pub displacement: u64,
    /// Cumulative time site 1 spent white / blue / purple ([`SiteColor::index`]).
    pub occupation: [f64; 3],
    pub n_blue: usize,
    pub n_purple: usize,
    /// Position-weighted colored-site sums.
    pub w_blue: i64,
    pub w_purple: i64,
    /// Time integrals of the colored counts, for time-averaged N_b, N_p.
    pub int_n_blue: f64,
    pub int_n_purple: f64,
}

impl TrajectoryStats {
    fn new() -> Self {
        TrajectoryStats {
            t: 0.0,
            displacement: 0,
            occupation: [0.0; 3],
            n_blue: 0,
            n_purple: 0,
            w_blue: 0,
            w_purple: 0,
            int_n_blue: 0.0,
            int_n_purple: 0.0,
        }
    }
}

/// Gillespie simulator for the first color process, started all-white.
#[derive(Debug, Clone)]
pub struct ColorOneSim {
    rates: Rates,
    field: ColorField,
    stats: TrajectoryStats,
    catalog: EventCatalog<EtaEvent>,
}

impl ColorOneSim {
    pub fn new(rates: Rates) -> Self {
        ColorOneSim {
            rates,
            field: ColorField::new(),
            stats: TrajectoryStats::new(),
            catalog: EventCatalog::new(),
        }
    }

    pub fn field(&self) -> &ColorField {
        &self.field
    }

    pub fn stats(&self) -> &TrajectoryStats {
        &self.stats
    }

    /// Enumerate the active clocks for the current state.
    ///
    /// Exchange pairs are generated from each colored site: right
    /// neighbors always, left neighbors only when white, so every
    /// differing-color pair appears exactly once.
    pub fn catalog(rates: &Rates, field: &ColorField) -> EventCatalog<EtaEvent> {
        let mut cat = EventCatalog::with_capacity(field.n_colored() * 4 + 2);
        Self::fill_catalog(rates, field, &mut cat);
        cat
    }

    fn fill_catalog(rates: &Rates, field: &ColorField, cat: &mut EventCatalog<EtaEvent>) {
        cat.clear();
        for (site, color) in field.colored_sites() {
            for d in [1i64, 2] {
                let j = site + d;
                if field.get(j) != Some(color) {
                    cat.push(EtaEvent::Swap(site, j), rates.p_at(d));
                }
            }
            for d in [1i64, 2] {
                let j = site - d;
                if j >= 1 && field.get(j).is_none() {
                    cat.push(EtaEvent::Swap(j, site), rates.p_at(d));
                }
            }
        }
        cat.push(EtaEvent::TaggedClock, rates.q1());
        cat.push(EtaEvent::Removal, rates.p2());
    }

    /// Advance by one event; returns the holding time and what happened.
    pub fn step(&mut self, rng: &mut RngStream) -> (f64, EtaOutcome) {
        let rates = self.rates;
        Self::fill_catalog(&rates, &self.field, &mut self.catalog);
        let total = self.catalog.total_rate();
        let dt = rng.exponential(total).expect("q1, p2 > 0 keep the catalog non-empty");
        let event = self.catalog.sample(rng).expect("non-empty catalog");
        self.accrue(dt);
        let outcome = self.apply(event, rng);
        (dt, outcome)
    }

    /// Run until `t_end` exactly, accruing the final partial holding
    /// interval without applying its event (exact by memorylessness).
    pub fn run_until(&mut self, t_end: f64, rng: &mut RngStream) {
        assert!(t_end >= self.stats.t);
        loop {
            let rates = self.rates;
            Self::fill_catalog(&rates, &self.field, &mut self.catalog);
            let total = self.catalog.total_rate();
            let dt = rng.exponential(total).expect("non-empty catalog");
            if self.stats.t + dt >= t_end {
                let rest = t_end - self.stats.t;
                self.accrue(rest);
                return;
            }
            let event = self.catalog.sample(rng).expect("non-empty catalog");
            self.accrue(dt);
            self.apply(event, rng);
        }
    }

    /// Accrue holding time against the pre-event state (cadlag convention).
    fn accrue(&mut self, dt: f64) {
        self.stats.t += dt;
        self.stats.occupation[self.field.site_one().index()] += dt;
        self.stats.int_n_blue += self.stats.n_blue as f64 * dt;
        self.stats.int_n_purple += self.stats.n_purple as f64 * dt;
    }

    fn apply(&mut self, event: EtaEvent, rng: &mut RngStream) -> EtaOutcome {
        match event {
            EtaEvent::Swap(a, b) => {
                self.swap(a, b);
                EtaOutcome::Swapped(a, b)
            }
            EtaEvent::Removal => {
                let was = self.field.site_one();
                self.recolor_one_purple(was);
                EtaOutcome::RecoloredPurple { was }
            }
            EtaEvent::TaggedClock => match self.field.site_one() {
                SiteColor::Purple => {
                    self.shift_left(true);
                    EtaOutcome::ShiftedPurple
                }
                SiteColor::Blue => EtaOutcome::BlockedBlue,
                SiteColor::White => {
                    if rng.bernoulli(self.rates.rho()) {
                        self.field.colored.insert(1, Color::Blue);
                        self.stats.n_blue += 1;
                        self.stats.w_blue += 1;
                        EtaOutcome::RevealedBlue
                    } else {
                        // Color purple then shift: the fresh purple leaves
                        // the lattice, so the net effect is the shift alone.
                        self.shift_left(false);
                        EtaOutcome::RevealedVacantShifted
                    }
                }
            },
        }
    }

    fn swap(&mut self, a: i64, b: i64) {
        let ca = self.field.colored.remove(&a);
        let cb = self.field.colored.remove(&b);
        debug_assert!(ca != cb, "same-color pair in catalog");
        if let Some(c) = ca {
            self.field.colored.insert(b, c);
            match c {
                Color::Blue => self.stats.w_blue += b - a,
                Color::Purple => self.stats.w_purple += b - a,
            }
        }
        if let Some(c) = cb {
            self.field.colored.insert(a, c);
            match c {
                Color::Blue => self.stats.w_blue += a - b,
                Color::Purple => self.stats.w_purple += a - b,
            }
        }
    }

    fn recolor_one_purple(&mut self, was: SiteColor) {
        match was {
            SiteColor::Purple => {}
            SiteColor::Blue => {
                self.field.colored.insert(1, Color::Purple);
                self.stats.n_blue -= 1;
                self.stats.w_blue -= 1;
                self.stats.n_purple += 1;
                self.stats.w_purple += 1;
            }
            SiteColor::White => {
                self.field.colored.insert(1, Color::Purple);
                self.stats.n_purple += 1;
                self.stats.w_purple += 1;
            }
        }
    }

    /// Shift every colored site one step left. `pop_purple` removes the
    /// purple cup currently at site 1 (it leaves the lattice with the
    /// tagged jump).
    fn shift_left(&mut self, pop_purple: bool) {
        if pop_purple {
            let front = self.field.colored.remove(&1);
            assert_eq!(front, Some(Color::Purple), "shift without purple front");
            self.stats.n_purple -= 1;
            self.stats.w_purple -= 1;
        }
        // No colored site may land on site 0: site 1 is vacant of colored
        // cups at this point by construction.
        debug_assert!(self.field.colored.keys().all(|&s| s >= 2));
        let shifted: BTreeMap<i64, Color> = self
            .field
            .colored
            .iter()
            .map(|(&s, &c)| (s - 1, c))
            .collect();
        self.field.colored = shifted;
        self.stats.w_blue -= self.stats.n_blue as i64;
        self.stats.w_purple -= self.stats.n_purple as i64;
        self.stats.displacement += 1;
    }

    /// Recompute the derived counters from the field; test support.
    pub fn recount(&self) -> (usize, usize, i64, i64) {
        let mut nb = 0;
        let mut np = 0;
        let mut wb = 0;
        let mut wp = 0;
        for (s, c) in self.field.colored_sites() {
            match c {
                Color::Blue => {
                    nb += 1;
                    wb += s;
                }
                Color::Purple => {
                    np += 1;
                    wp += s;
                }
            }
        }
        (nb, np, wb, wp)
    }
}

/// Per-replica output row of an LLN run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlnRow {
    pub replica: u64,
    pub t_end: f64,
    pub x_t: u64,
    pub x_over_t: f64,
    pub frac_white: f64,
    pub frac_blue: f64,
    pub frac_purple: f64,
    pub nb_avg: f64,
    pub np_avg: f64,
}

/// Run `replicas` independent trajectories to `horizon`, one RNG stream per
/// replica. Output order is fixed by replica index, so parallelism does not
/// change results.
pub fn run_lln(rates: Rates, horizon: f64, replicas: u64, seed: u64) -> Vec<LlnRow> {
    assert!(horizon > 0.0, "horizon must be positive");
    (0..replicas)
        .into_par_iter()
        .map(|replica| {
            let mut rng = RngStream::new(seed, replica);
            let mut sim = ColorOneSim::new(rates);
            sim.run_until(horizon, &mut rng);
            let s = sim.stats();
            LlnRow {
                replica,
                t_end: s.t,
                x_t: s.displacement,
                x_over_t: s.displacement as f64 / s.t,
                frac_white: s.occupation[0] / s.t,
                frac_blue: s.occupation[1] / s.t,
                frac_purple: s.occupation[2] / s.t,
                nb_avg: s.int_n_blue / s.t,
                np_avg: s.int_n_purple / s.t,
            }
        })
        .collect()
}
