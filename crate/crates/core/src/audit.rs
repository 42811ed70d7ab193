//! Cross-checks the closed-form price equilibrium against best-response
//! dynamics on a price grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, PerStation, PriceProfile, QosVector, StationId};
use crate::oracle::{best_response_dynamics, locate_shares, GridSpec};
use crate::pricing::{classify, pricing_equilibrium, quality_cost_margins, shared_boundary_margins, PricingRegime};

/// Ranges the random instances are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRanges {
    pub w_l: (f64, f64),
    pub w_p: (f64, f64),
    pub q: (f64, f64),
    pub o: (f64, f64),
}

impl Default for DrawRanges {
    fn default() -> Self {
        DrawRanges {
            w_l: (0.5, 15.0),
            w_p: (0.5, 3.0),
            q: (0.0, 6.0),
            o: (0.0, 2.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub ranges: DrawRanges,
    /// Draws within this many grid steps of a regime boundary are reported
    /// but not held to the tolerance.
    pub boundary_steps: f64,
    /// Allowed price gap, in grid steps per station.
    pub tolerance_steps: f64,
    pub max_iters: usize,
    pub price_steps: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            ranges: DrawRanges::default(),
            boundary_steps: 3.0,
            tolerance_steps: 2.0,
            max_iters: 500,
            price_steps: crate::oracle::DEFAULT_PRICE_STEPS,
        }
    }
}

/// One random game instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub q_eff: QosVector,
    pub params: ModelParams,
}

/// Draws instance `index` of a batch. Regimes are cycled through so that a
/// batch covers all four; each draw is rejection-sampled until it lands in
/// its target regime.
pub fn draw_instance(ranges: &DrawRanges, seed: u64, index: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let target = PricingRegime::ALL[(index % 4) as usize];
    loop {
        let params = ModelParams {
            w_l: rng.random_range(ranges.w_l.0..=ranges.w_l.1),
            w_p: rng.random_range(ranges.w_p.0..=ranges.w_p.1),
            o: PerStation::new(
                rng.random_range(ranges.o.0..=ranges.o.1),
                rng.random_range(ranges.o.0..=ranges.o.1),
            ),
            w_c: 0.0,
            ..ModelParams::default()
        };
        let q_eff = PerStation::new(
            rng.random_range(ranges.q.0..=ranges.q.1),
            rng.random_range(ranges.q.0..=ranges.q.1),
        );
        let margins = quality_cost_margins(&q_eff, &params);
        if matches!(classify(&margins, params.tol), Ok((r, _)) if r == target) {
            return Instance { q_eff, params };
        }
    }
}

/// Distance from the nearest regime boundary, in price units.
pub fn boundary_distance(margins: &PerStation<f64>, w_p: f64) -> f64 {
    let hi = margins.a.max(margins.b);
    let lo = margins.a.min(margins.b);
    let sum = hi + lo;
    let mut gaps = vec![hi, lo, sum - 2.0, sum - 3.0, hi - lo - 3.0];
    if lo <= 0.0 {
        gaps.push(hi - 2.0);
    }
    gaps.into_iter().map(f64::abs).fold(f64::INFINITY, f64::min) / w_p
}

/// Regime read off a price profile from located shares and the EVs'
/// net attractiveness, without any closed form.
pub fn observed_regime(prices: &PriceProfile, inst: &Instance, grid: &GridSpec) -> Option<PricingRegime> {
    let p = &inst.params;
    let shares = locate_shares(prices, &inst.q_eff, p);
    // a station that serves nobody or sells at cost earns nothing
    let earning = StationId::ALL.map(|id| shares[id] > 0.0 && prices[id] > p.o[id]);
    match earning {
        [false, false] => return None,
        [true, false] | [false, true] => return Some(PricingRegime::Dominance),
        [true, true] => {}
    }
    let delta_sum: f64 = StationId::ALL
        .iter()
        .map(|&id| p.w_l * inst.q_eff[id] - p.w_p * prices[id])
        .sum();
    let kink_band = p.w_p * grid.step(StationId::A).max(grid.step(StationId::B));
    Some(if (delta_sum - 1.0).abs() <= kink_band {
        PricingRegime::SharedBoundary
    } else if delta_sum > 1.0 {
        PricingRegime::Competitive
    } else {
        PricingRegime::LocalMonopolies
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: u64,
    pub instance: Instance,
    pub closed_regime: PricingRegime,
    pub oracle_regime: Option<PricingRegime>,
    pub closed_prices: PriceProfile,
    pub oracle_prices: PriceProfile,
    pub step: PerStation<f64>,
    /// Largest per-station gap between the oracle fixed point and the
    /// closed-form equilibrium set, in grid steps.
    pub max_dev_steps: f64,
    pub boundary_steps: f64,
    pub converged: bool,
    pub cycle_detected: bool,
    pub iterations: usize,
}

impl AuditRow {
    pub fn eligible(&self, cfg: &AuditConfig) -> bool {
        self.boundary_steps >= cfg.boundary_steps
    }

    pub fn passes(&self, cfg: &AuditConfig) -> bool {
        self.converged && self.max_dev_steps <= cfg.tolerance_steps && self.oracle_regime == Some(self.closed_regime)
    }
}

/// Gap (in steps) between `oracle` and the nearest point of the
/// shared-boundary equilibrium segment.
fn distance_to_segment(oracle: &PriceProfile, inst: &Instance, step: &PerStation<f64>) -> f64 {
    let p = &inst.params;
    let margins = quality_cost_margins(&inst.q_eff, p);
    let (lo, hi) = shared_boundary_margins(&margins).a;
    let total = margins.a + margins.b - 1.0;
    let gap = |v_a: f64| {
        let v = PerStation::new(v_a, total - v_a);
        StationId::ALL
            .iter()
            .map(|&id| (p.o[id] + v[id] / p.w_p - oracle[id]).abs() / step[id])
            .fold(0.0, f64::max)
    };
    let oracle_v = oracle.zip(p.o).map(|(q, o)| p.w_p * (q - o));
    // the gap is convex and piecewise linear in v_a; its minimum sits at one of these
    let balance = {
        let (sa, sb) = (step.a, step.b);
        // equalize |v_a - oracle_a| / sa and |total - v_a - oracle_b| / sb
        (oracle_v.a * sb + (total - oracle_v.b) * sa) / (sa + sb)
    };
    [oracle_v.a, total - oracle_v.b, balance, lo, hi]
        .into_iter()
        .map(|v| gap(v.clamp(lo, hi)))
        .fold(f64::INFINITY, f64::min)
}

pub fn audit_instance(index: u64, inst: Instance, cfg: &AuditConfig) -> AuditRow {
    let p = &inst.params;
    let closed = pricing_equilibrium(&inst.q_eff, p).expect("audited instances are never degenerate");
    let mut grid = GridSpec::default_for(&inst.q_eff, p);
    grid.price_steps = cfg.price_steps;
    let trace = best_response_dynamics(&p.o, &inst.q_eff, p, &grid, cfg.max_iters);
    let oracle = trace.terminal();
    let step = PerStation::new(grid.step(StationId::A), grid.step(StationId::B));
    let pointwise = StationId::ALL
        .iter()
        .map(|&id| (oracle[id] - closed.prices[id]).abs() / step[id])
        .fold(0.0, f64::max);
    let max_dev_steps = if closed.regime == PricingRegime::SharedBoundary {
        pointwise.min(distance_to_segment(&oracle, &inst, &step))
    } else {
        pointwise
    };
    let boundary = boundary_distance(&closed.margins, p.w_p) / step.a.max(step.b);
    AuditRow {
        index,
        instance: inst,
        closed_regime: closed.regime,
        oracle_regime: observed_regime(&oracle, &inst, &grid),
        closed_prices: closed.prices,
        oracle_prices: oracle,
        step,
        max_dev_steps,
        boundary_steps: boundary,
        converged: trace.converged,
        cycle_detected: trace.cycle_detected,
        iterations: trace.iterates.len() - 1,
    }
}

/// Audits `draws` random instances; rows come back in draw order.
pub fn audit_batch(draws: u64, seed: u64, cfg: &AuditConfig) -> Vec<AuditRow> {
    (0..draws)
        .into_par_iter()
        .map(|i| audit_instance(i, draw_instance(&cfg.ranges, seed, i), cfg))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub draws: usize,
    pub eligible: usize,
    pub failures: usize,
    /// Over eligible draws.
    pub max_dev_steps: f64,
    /// Over eligible draws.
    pub regime_agreement: f64,
    pub regimes_covered: Vec<PricingRegime>,
    pub non_converged: usize,
}

pub fn summarize(rows: &[AuditRow], cfg: &AuditConfig) -> AuditSummary {
    let eligible: Vec<&AuditRow> = rows.iter().filter(|r| r.eligible(cfg)).collect();
    let agree = eligible
        .iter()
        .filter(|r| r.oracle_regime == Some(r.closed_regime))
        .count();
    let mut regimes: Vec<PricingRegime> = eligible.iter().map(|r| r.closed_regime).collect();
    regimes.sort();
    regimes.dedup();
    AuditSummary {
        draws: rows.len(),
        eligible: eligible.len(),
        failures: eligible.iter().filter(|r| !r.passes(cfg)).count(),
        max_dev_steps: eligible.iter().map(|r| r.max_dev_steps).fold(0.0, f64::max),
        regime_agreement: if eligible.is_empty() {
            1.0
        } else {
            agree as f64 / eligible.len() as f64
        },
        regimes_covered: regimes,
        non_converged: rows.iter().filter(|r| !r.converged).count(),
    }
}
