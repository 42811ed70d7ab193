//! Brute-force counterparts of stages II and III.
//!
//! Market shares come from asking every EV on a grid of locations which
//! option pays most; best responses come from scanning a price grid. Nothing
//! in this module uses the closed-form partition or pricing formulas.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::model::{ev_payoff, EvChoice, ModelParams, PerStation, PriceProfile, QosVector, StationId};

pub const DEFAULT_PRICE_STEPS: usize = 4001;

/// Discretization used by the best-response search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub price_lo: PerStation<f64>,
    pub price_hi: PerStation<f64>,
    pub price_steps: usize,
}

impl GridSpec {
    /// `[o_i, o_i + (w_l * max q + 2) / w_p]` per station, wide enough to hold
    /// every equilibrium price.
    pub fn default_for(q_eff: &QosVector, params: &ModelParams) -> Self {
        let span = (params.w_l * q_eff.a.max(q_eff.b) + 2.0) / params.w_p;
        GridSpec {
            price_lo: params.o,
            price_hi: params.o.map(|o| o + span),
            price_steps: DEFAULT_PRICE_STEPS,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.price_steps >= 2
            && StationId::ALL
                .iter()
                .all(|&id| self.price_lo[id] >= 0.0 && self.price_hi[id] > self.price_lo[id])
    }

    pub fn step(&self, id: StationId) -> f64 {
        (self.price_hi[id] - self.price_lo[id]) / (self.price_steps - 1) as f64
    }

    pub fn price(&self, id: StationId, k: usize) -> f64 {
        self.price_lo[id] + self.step(id) * k as f64
    }

    /// Grid index closest to `p`.
    pub fn nearest(&self, id: StationId, p: f64) -> usize {
        let k = ((p - self.price_lo[id]) / self.step(id)).round();
        k.clamp(0.0, (self.price_steps - 1) as f64) as usize
    }
}

/// Payoff-maximizing option for the EV at `x`, charging preferred over
/// opting out and A over B on ties.
pub fn argmax_choice(x: f64, p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> EvChoice {
    let payoff = |s| ev_payoff(x, s, p, q_eff, params).expect("grid locations lie in [0, 1]");
    let (ua, ub) = (payoff(EvChoice::A), payoff(EvChoice::B));
    let none = payoff(EvChoice::OptOut);
    if ua >= none && ua >= ub {
        EvChoice::A
    } else if ub >= none {
        EvChoice::B
    } else {
        EvChoice::OptOut
    }
}

fn cell_midpoint(j: usize, n: usize) -> f64 {
    (j as f64 + 0.5) / n as f64
}

/// Midpoint-rule measure of each station's customers over `x_steps` cells.
pub fn simulate_shares(p: &PriceProfile, q_eff: &QosVector, params: &ModelParams, x_steps: usize) -> PerStation<f64> {
    assert!(x_steps >= 2, "x_steps must be at least 2");
    let mut counts = PerStation::new(0usize, 0usize);
    for j in 0..x_steps {
        if let Some(id) = argmax_choice(cell_midpoint(j, x_steps), p, q_eff, params).station() {
            counts[id] += 1;
        }
    }
    counts.map(|c| c as f64 / x_steps as f64)
}

/// Same measure as [`simulate_shares`], found by bisection: A's customers
/// form a prefix of the grid and B's a suffix, because A's payoff falls and
/// B's rises with `x`.
pub fn simulate_shares_bisect(
    p: &PriceProfile,
    q_eff: &QosVector,
    params: &ModelParams,
    x_steps: usize,
) -> PerStation<f64> {
    let choice = |j: usize| argmax_choice(cell_midpoint(j, x_steps), p, q_eff, params);
    let a_count = partition_point(x_steps, |j| choice(j) == EvChoice::A);
    let b_start = partition_point(x_steps, |j| choice(j) != EvChoice::B);
    PerStation::new(a_count, x_steps - b_start.max(a_count)).map(|c| c as f64 / x_steps as f64)
}

/// Each station's customer measure with the indifference points located by
/// bisection on the continuum of locations, to within `f64` resolution.
pub fn locate_shares(p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> PerStation<f64> {
    let choice = |x: f64| argmax_choice(x, p, q_eff, params);
    let a_end = boundary(|x| choice(x) == EvChoice::A);
    let b_start = boundary(|x| choice(x) != EvChoice::B);
    PerStation::new(a_end, 1.0 - b_start.max(a_end))
}

/// Point in `[0, 1]` where a monotone predicate turns from true to false.
fn boundary(pred: impl Fn(f64) -> bool) -> f64 {
    if !pred(0.0) {
        return 0.0;
    }
    if pred(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// First index in `0..n` where `pred` turns false; `pred` must be monotone.
fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

fn best_response_index(id: StationId, p_other: f64, q_eff: &QosVector, params: &ModelParams, grid: &GridSpec) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..grid.price_steps {
        let own = grid.price(id, k);
        let mut p = PerStation::splat(p_other);
        p[id] = own;
        let share = locate_shares(&p, q_eff, params)[id];
        let profit = (own - params.o[id]) * share;
        if profit > best.1 {
            best = (k, profit);
        }
    }
    best.0
}

/// Profit-maximizing grid price of station `id` against `p_other`; ties go
/// to the lowest price.
pub fn best_response(id: StationId, p_other: f64, q_eff: &QosVector, params: &ModelParams, grid: &GridSpec) -> f64 {
    assert!(grid.is_valid(), "invalid grid {grid:?}");
    grid.price(id, best_response_index(id, p_other, q_eff, params, grid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponseTrace {
    /// Starting profile (snapped to the grid) followed by the profile after
    /// each round of alternating responses.
    pub iterates: Vec<PriceProfile>,
    pub converged: bool,
    pub cycle_detected: bool,
}

impl BestResponseTrace {
    pub fn terminal(&self) -> PriceProfile {
        *self.iterates.last().expect("trace holds at least the start")
    }
}

/// Alternating best responses (A first, then B) until a grid fixed point,
/// a revisited profile or `max_iters` rounds.
pub fn best_response_dynamics(
    p0: &PriceProfile,
    q_eff: &QosVector,
    params: &ModelParams,
    grid: &GridSpec,
    max_iters: usize,
) -> BestResponseTrace {
    assert!(grid.is_valid(), "invalid grid {grid:?}");
    assert!(max_iters >= 1, "max_iters must be at least 1");
    let to_prices = |k: PerStation<usize>| k.map_with_id(|id, k| grid.price(id, k));
    let mut current = p0.map_with_id(|id, p| grid.nearest(id, p));
    let mut iterates = vec![to_prices(current)];
    let mut seen = HashSet::from([(current.a, current.b)]);
    for _ in 0..max_iters {
        let a = best_response_index(StationId::A, grid.price(StationId::B, current.b), q_eff, params, grid);
        let b = best_response_index(StationId::B, grid.price(StationId::A, a), q_eff, params, grid);
        let next = PerStation::new(a, b);
        if next == current {
            return BestResponseTrace {
                iterates,
                converged: true,
                cycle_detected: false,
            };
        }
        iterates.push(to_prices(next));
        if !seen.insert((next.a, next.b)) {
            return BestResponseTrace {
                iterates,
                converged: false,
                cycle_detected: true,
            };
        }
        current = next;
    }
    BestResponseTrace {
        iterates,
        converged: false,
        cycle_detected: false,
    }
}
