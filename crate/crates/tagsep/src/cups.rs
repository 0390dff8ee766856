//! Truncated labeled-cup reference simulator.
//!
//! Direct implementation of the graphical construction: every site on
//! `1..=L` holds a cup with a color, a conserved label, and a particle
//! (red = occupied, yellow = vacant). All exchange clocks inside the window
//! fire, including white-white ones, so this process carries the full
//! information the lazy color processes integrate out — which is what makes
//! it usable as a distributional oracle for them.
//!
//! Truncation closure: a shift injects a fresh white cup with a new label
//! and an independent Bernoulli(rho) particle at site `L`; exchange clocks
//! reaching past `L` are dropped. Runs where a colored cup ever touches the
//! last three sites are flagged contaminated and excluded from oracle
//! comparisons.

use serde::{Deserialize, Serialize};

use crate::kernel::{EventCatalog, RngStream};
use crate::model::Rates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CupColor {
    White,
    Blue,
    Purple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cup {
    pub color: CupColor,
    pub label: u64,
    /// Red particle inside (true) or yellow placeholder (false).
    pub occupied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CupEvent {
    /// Exchange the full cups at the two sites (1-based).
    Swap(usize, usize),
    /// Tagged clock: yellow at site 1 removes the cup and shifts; red
    /// colors the cup blue.
    TaggedClock,
    /// Removal clock: site-1 particle replaced by yellow, cup turns purple.
    Removal,
}

/// Truncated cup configuration.
#[derive(Debug, Clone)]
pub struct CupLattice {
    sites: Vec<Cup>,
    pub x_tagged: u64,
    pub replenish_draws: u64,
    next_label: u64,
    /// Initial particle per label, for the white-cup conservation check.
    initial_particle: Vec<bool>,
    /// High-water mark of colored-cup positions (1-based).
    pub max_colored_site: usize,
}

impl CupLattice {
    /// Fresh all-white lattice of length `L >= 5` with labels `1..=L` and
    /// iid Bernoulli(rho) particles.
    pub fn new(l: usize, rho: f64, rng: &mut RngStream) -> Self {
        assert!(l >= 5, "truncation length must be at least 5");
        let mut sites = Vec::with_capacity(l);
        let mut initial_particle = vec![false]; // label 0 unused
        for label in 1..=l as u64 {
            let occupied = rng.bernoulli(rho);
            initial_particle.push(occupied);
            sites.push(Cup {
                color: CupColor::White,
                label,
                occupied,
            });
        }
        CupLattice {
            sites,
            x_tagged: 0,
            replenish_draws: 0,
            next_label: l as u64 + 1,
            initial_particle,
            max_colored_site: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn cup(&self, site: usize) -> &Cup {
        &self.sites[site - 1]
    }

    pub fn cups(&self) -> &[Cup] {
        &self.sites
    }

    /// Whether a colored cup has ever reached the last three sites.
    pub fn contaminated(&self) -> bool {
        self.max_colored_site + 2 >= self.len()
    }

    pub fn initial_particle_of(&self, label: u64) -> bool {
        self.initial_particle[label as usize]
    }

    fn note_colored(&mut self, site: usize) {
        if self.sites[site - 1].color != CupColor::White {
            self.max_colored_site = self.max_colored_site.max(site);
        }
    }
}

/// Full event catalog for the truncated window: all distance-1 and
/// distance-2 pairs inside `1..=L`, plus the two site-1 clocks. The catalog
/// is state-independent, so callers build it once per run.
pub fn cup_catalog(rates: &Rates, l: usize) -> EventCatalog<CupEvent> {
    let mut cat = EventCatalog::with_capacity(2 * l);
    for i in 1..l {
        cat.push(CupEvent::Swap(i, i + 1), rates.p1());
    }
    for i in 1..l.saturating_sub(1) {
        cat.push(CupEvent::Swap(i, i + 2), rates.p2());
    }
    cat.push(CupEvent::TaggedClock, rates.q1());
    cat.push(CupEvent::Removal, rates.p2());
    cat
}

/// Apply one event to the lattice.
pub fn apply_cup_event(
    lattice: &mut CupLattice,
    event: CupEvent,
    rates: &Rates,
    rng: &mut RngStream,
) {
    match event {
        CupEvent::Swap(a, b) => {
            lattice.sites.swap(a - 1, b - 1);
            lattice.note_colored(a);
            lattice.note_colored(b);
        }
        CupEvent::TaggedClock => {
            if lattice.sites[0].occupied {
                lattice.sites[0].color = CupColor::Blue;
                lattice.note_colored(1);
            } else {
                lattice.sites.remove(0);
                let occupied = rng.bernoulli(rates.rho());
                let label = lattice.next_label;
                lattice.next_label += 1;
                lattice.initial_particle.push(occupied);
                lattice.sites.push(Cup {
                    color: CupColor::White,
                    label,
                    occupied,
                });
                lattice.replenish_draws += 1;
                lattice.x_tagged += 1;
                // Colored cups moved one step left; the high-water mark
                // only tracks the rightmost excursion, so it stays.
            }
        }
        CupEvent::Removal => {
            lattice.sites[0].occupied = false;
            lattice.sites[0].color = CupColor::Purple;
            lattice.note_colored(1);
        }
    }
    debug_assert!(color_content_consistent(lattice.cup(1)));
}

fn color_content_consistent(cup: &Cup) -> bool {
    match cup.color {
        CupColor::Blue => cup.occupied,
        CupColor::Purple => !cup.occupied,
        CupColor::White => true,
    }
}

/// Check the color/content correspondence and the white-cup conservation
/// law on the whole window.
pub fn assert_lattice_invariants(lattice: &CupLattice) {
    let mut seen = std::collections::BTreeSet::new();
    for (idx, cup) in lattice.cups().iter().enumerate() {
        assert!(
            color_content_consistent(cup),
            "site {}: color {:?} with occupied={}",
            idx + 1,
            cup.color,
            cup.occupied
        );
        if cup.color == CupColor::White {
            assert_eq!(
                cup.occupied,
                lattice.initial_particle_of(cup.label),
                "white cup {} changed its particle",
                cup.label
            );
        }
        assert!(seen.insert(cup.label), "duplicate label {}", cup.label);
    }
}

/// Run one trajectory to `t_end` and return the final lattice.
pub fn run_cups(rates: Rates, l: usize, t_end: f64, rng: &mut RngStream) -> CupLattice {
    let cat = cup_catalog(&rates, l);
    let mut lattice = CupLattice::new(l, rates.rho(), rng);
    let mut t = 0.0;
    loop {
        let dt = rng.exponential(cat.total_rate()).expect("catalog non-empty");
        if t + dt >= t_end {
            return lattice;
        }
        t += dt;
        let event = cat.sample(rng).expect("catalog non-empty");
        apply_cup_event(&mut lattice, event, &rates, rng);
    }
}

/// Occupancies at the queried sites when every one of them holds a white
/// cup; `None` marks a discarded (not-all-white) sample.
pub fn exchangeability_snapshot(lattice: &CupLattice, sites: &[usize]) -> Option<Vec<bool>> {
    if sites
        .iter()
        .all(|&s| lattice.cup(s).color == CupColor::White)
    {
        Some(sites.iter().map(|&s| lattice.cup(s).occupied).collect())
    } else {
        None
    }
}
