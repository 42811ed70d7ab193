//! Stage III: each EV picks the station (or none) that maximizes its payoff,
//! which partitions the unit line into the stations' market areas.
//!
//! Everything here is expressed through the net attractiveness
//! `delta_i = w_l * q_i - w_p * p_i`, the payoff an EV standing right at
//! station `i` would get. The closed forms are derived for the ordering
//! `delta_first >= delta_second`; the other ordering is handled by mirroring
//! the line (`x -> 1 - x`) and swapping labels back.
//!
//! Ties are broken towards charging (an EV indifferent between a station and
//! opting out charges) and towards A (an EV indifferent between A and B picks
//! A). Both rules only affect measure-zero sets of EVs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{check_location, EvChoice, ModelParams, PerStation, PriceProfile, QosVector, StationId};

/// Net attractiveness of both stations, together with the ordered view used by
/// the closed forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaPair {
    pub delta: PerStation<f64>,
    /// Larger of the two deltas.
    pub first: f64,
    /// Smaller of the two deltas.
    pub second: f64,
    /// Indifference point between the two stations, measured from the
    /// station holding `first`.
    pub tau: f64,
    /// True when B holds `first`, i.e. the labels were exchanged.
    pub swapped: bool,
}

impl DeltaPair {
    pub fn new(delta: PerStation<f64>) -> Self {
        let swapped = delta.a < delta.b;
        let (first, second) = if swapped {
            (delta.b, delta.a)
        } else {
            (delta.a, delta.b)
        };
        DeltaPair {
            delta,
            first,
            second,
            tau: (1.0 + first - second) / 2.0,
            swapped,
        }
    }

    pub fn from_prices(p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> Self {
        Self::new(net_attractiveness(p, q_eff, params))
    }

    /// Station holding the larger delta.
    pub fn leader(&self) -> StationId {
        if self.swapped {
            StationId::B
        } else {
            StationId::A
        }
    }
}

/// `w_l * q_i - w_p * p_i` for both stations.
pub fn net_attractiveness(p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> PerStation<f64> {
    q_eff.zip(*p).map(|(q, p)| params.w_l * q - params.w_p * p)
}

/// Closed subinterval `[lo, hi]` of the unit line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Image under `x -> 1 - x`.
    pub fn mirrored(&self) -> Self {
        Interval::new(1.0 - self.hi, 1.0 - self.lo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarketScenario {
    /// Every EV charges; the line is split at the indifference point.
    Bifurcated,
    /// A middle band of EVs opts out.
    Segmented,
    MonopolyA,
    MonopolyB,
    /// Nobody charges.
    Empty,
}

impl MarketScenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarketScenario::Bifurcated => "bifurcated",
            MarketScenario::Segmented => "segmented",
            MarketScenario::MonopolyA => "monopoly_a",
            MarketScenario::MonopolyB => "monopoly_b",
            MarketScenario::Empty => "empty",
        }
    }

    fn monopoly(id: StationId) -> Self {
        match id {
            StationId::A => MarketScenario::MonopolyA,
            StationId::B => MarketScenario::MonopolyB,
        }
    }
}

/// Equilibrium market areas. A's area starts at 0, B's ends at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketPartition {
    pub interval_a: Option<Interval>,
    pub interval_b: Option<Interval>,
    pub scenario: MarketScenario,
}

impl MarketPartition {
    pub fn empty() -> Self {
        MarketPartition {
            interval_a: None,
            interval_b: None,
            scenario: MarketScenario::Empty,
        }
    }

    pub fn interval(&self, id: StationId) -> Option<Interval> {
        match id {
            StationId::A => self.interval_a,
            StationId::B => self.interval_b,
        }
    }

    /// Served measure per station.
    pub fn shares(&self) -> PerStation<f64> {
        shares(self)
    }

    /// Partition seen after exchanging the station labels.
    pub fn swapped(&self) -> Self {
        MarketPartition {
            interval_a: self.interval_b.map(|i| i.mirrored()),
            interval_b: self.interval_a.map(|i| i.mirrored()),
            scenario: match self.scenario {
                MarketScenario::MonopolyA => MarketScenario::MonopolyB,
                MarketScenario::MonopolyB => MarketScenario::MonopolyA,
                s => s,
            },
        }
    }

    /// Endpoints in the `{a_lo, a_hi, b_lo, b_hi}` layout; empty areas are `None`.
    pub fn endpoints(&self) -> [Option<f64>; 4] {
        [
            self.interval_a.map(|i| i.lo),
            self.interval_a.map(|i| i.hi),
            self.interval_b.map(|i| i.lo),
            self.interval_b.map(|i| i.hi),
        ]
    }
}

/// Market areas in the ordered frame (leader at 0, follower at 1).
struct OrderedAreas {
    leader: Option<Interval>,
    follower: Option<Interval>,
}

impl OrderedAreas {
    /// Individually optimal choice sets for the ordered pair.
    fn from_choices(d: &DeltaPair) -> Self {
        let leader_hi = d.first.min(d.tau).min(1.0);
        let follower_lo = (1.0 - d.second).max(d.tau).max(0.0);
        OrderedAreas {
            leader: (leader_hi >= 0.0).then(|| Interval::new(0.0, leader_hi)),
            follower: (follower_lo <= 1.0).then(|| Interval::new(follower_lo, 1.0)),
        }
    }

    /// Maps back to the A/B frame.
    fn unorder(self, swapped: bool) -> (Option<Interval>, Option<Interval>) {
        if swapped {
            (self.follower.map(|i| i.mirrored()), self.leader.map(|i| i.mirrored()))
        } else {
            (self.leader, self.follower)
        }
    }
}

/// Choice of the EV at `x` given the current deltas.
pub fn select_with_deltas(x: f64, d: &DeltaPair) -> EvChoice {
    let (area_a, area_b) = OrderedAreas::from_choices(d).unorder(d.swapped);
    if area_a.is_some_and(|i| i.contains(x)) {
        EvChoice::A
    } else if area_b.is_some_and(|i| i.contains(x)) {
        EvChoice::B
    } else {
        EvChoice::OptOut
    }
}

/// Optimal station choice of the EV at `x`.
pub fn ev_select(x: f64, p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> Result<EvChoice> {
    check_location(x)?;
    Ok(select_with_deltas(x, &DeltaPair::from_prices(p, q_eff, params)))
}

/// Equilibrium partition for the given deltas; `tol` resolves boundary hits.
pub fn partition_from_deltas(d: &DeltaPair, tol: f64) -> MarketPartition {
    let leader = d.leader();
    let positive = |v: f64| v > tol;

    let (scenario, ordered) = if !positive(d.first) {
        return MarketPartition::empty();
    } else if !positive(d.second) {
        let reach = d.first.min(1.0);
        (
            MarketScenario::monopoly(leader),
            OrderedAreas {
                leader: Some(Interval::new(0.0, reach)),
                follower: None,
            },
        )
    } else if d.first - d.second >= 1.0 - tol {
        (
            MarketScenario::monopoly(leader),
            OrderedAreas {
                leader: Some(Interval::new(0.0, 1.0)),
                follower: None,
            },
        )
    } else if d.first + d.second >= 1.0 - tol {
        let tau = d.tau.clamp(0.0, 1.0);
        (
            MarketScenario::Bifurcated,
            OrderedAreas {
                leader: Some(Interval::new(0.0, tau)),
                follower: Some(Interval::new(tau, 1.0)),
            },
        )
    } else {
        (
            MarketScenario::Segmented,
            OrderedAreas {
                leader: Some(Interval::new(0.0, d.first)),
                follower: Some(Interval::new(1.0 - d.second, 1.0)),
            },
        )
    };

    let (interval_a, interval_b) = ordered.unorder(d.swapped);
    MarketPartition {
        interval_a,
        interval_b,
        scenario,
    }
}

/// Equilibrium partition of the unit line under prices `p`.
pub fn market_partition(p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> MarketPartition {
    partition_from_deltas(&DeltaPair::from_prices(p, q_eff, params), params.tol)
}

/// Demand per station: the length of its market area (EV density is 1).
pub fn shares(partition: &MarketPartition) -> PerStation<f64> {
    PerStation::new(
        partition.interval_a.map_or(0.0, |i| i.len()),
        partition.interval_b.map_or(0.0, |i| i.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ev_payoff, PerStation};
    use proptest::prelude::*;

    /// Unit weights so that `delta_i = q_i - p_i`; prices zero.
    fn unit() -> ModelParams {
        ModelParams {
            w_l: 1.0,
            w_p: 1.0,
            ..ModelParams::default()
        }
    }

    fn select(delta_a: f64, delta_b: f64, x: f64) -> EvChoice {
        ev_select(x, &PerStation::splat(0.0), &PerStation::new(delta_a, delta_b), &unit()).unwrap()
    }

    fn partition(delta_a: f64, delta_b: f64) -> MarketPartition {
        market_partition(&PerStation::splat(0.0), &PerStation::new(delta_a, delta_b), &unit())
    }

    /// Three-way payoff comparison with the documented tie-break.
    fn argmax_oracle(delta_a: f64, delta_b: f64, x: f64) -> EvChoice {
        let p = PerStation::splat(0.0);
        let q = PerStation::new(delta_a, delta_b);
        let params = unit();
        let ua = ev_payoff(x, EvChoice::A, &p, &q, &params).unwrap();
        let ub = ev_payoff(x, EvChoice::B, &p, &q, &params).unwrap();
        if ua >= 0.0 && ua >= ub {
            EvChoice::A
        } else if ub >= 0.0 {
            EvChoice::B
        } else {
            EvChoice::OptOut
        }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select(1.0, 1.0, 0.3), EvChoice::A);
        assert_eq!(select(1.0, 1.0, 0.7), EvChoice::B);
        assert_eq!(select(1.0, 1.0, 0.5), EvChoice::A, "tie at tau goes to A");
        assert_eq!(select(0.3, 0.2, 0.5), EvChoice::OptOut);
        assert_eq!(select(0.5, -0.1, 0.6), EvChoice::OptOut);
        assert_eq!(select(0.5, -0.1, 0.4), EvChoice::A);
        // mirrored configuration exercises the label swap
        assert_eq!(select(-0.1, 0.5, 0.4), EvChoice::OptOut);
        assert_eq!(select(-0.1, 0.5, 0.6), EvChoice::B);
        assert!(ev_select(1.01, &PerStation::splat(0.0), &PerStation::splat(1.0), &unit()).is_err());
    }

    #[test]
    fn partition_examples() {
        let p = partition(1.0, 1.0);
        assert_eq!(p.scenario, MarketScenario::Bifurcated);
        assert_eq!(p.interval_a, Some(Interval::new(0.0, 0.5)));
        assert_eq!(p.interval_b, Some(Interval::new(0.5, 1.0)));

        let p = partition(0.3, 0.2);
        assert_eq!(p.scenario, MarketScenario::Segmented);
        assert_eq!(p.interval_a, Some(Interval::new(0.0, 0.3)));
        assert_eq!(p.interval_b, Some(Interval::new(0.8, 1.0)));

        let p = partition(2.5, 0.5);
        assert_eq!(p.scenario, MarketScenario::MonopolyA);
        assert_eq!(p.interval_a, Some(Interval::new(0.0, 1.0)));
        assert_eq!(p.interval_b, None);

        let p = partition(0.5, -0.1);
        assert_eq!(p.scenario, MarketScenario::MonopolyA);
        assert_eq!(p.interval_a, Some(Interval::new(0.0, 0.5)));
        assert_eq!(p.interval_b, None);

        let p = partition(-0.1, 0.5);
        assert_eq!(p.scenario, MarketScenario::MonopolyB);
        assert_eq!(p.interval_a, None);
        assert_eq!(p.interval_b, Some(Interval::new(0.5, 1.0)));

        assert_eq!(partition(0.0, -3.0), MarketPartition::empty());
        assert_eq!(partition(-1.0, -1.0), MarketPartition::empty());
    }

    #[test]
    fn shares_examples() {
        let s = partition(1.0, 1.0).shares();
        assert_eq!((s.a, s.b), (0.5, 0.5));
        let s = partition(0.3, 0.2).shares();
        assert!((s.a - 0.3).abs() < 1e-15 && (s.b - 0.2).abs() < 1e-15);
        assert_eq!(shares(&MarketPartition::empty()), PerStation::new(0.0, 0.0));
    }

    #[test]
    fn boundaries_follow_printed_closedness() {
        // sum exactly 1 belongs to the bifurcated case
        assert_eq!(partition(0.6, 0.4).scenario, MarketScenario::Bifurcated);
        // difference exactly 1 belongs to the monopoly case
        assert_eq!(partition(1.5, 0.5).scenario, MarketScenario::MonopolyA);
        // float noise just below a boundary is absorbed by the tolerance
        assert_eq!(partition(0.6, 0.4 - 1e-14).scenario, MarketScenario::Bifurcated);
    }

    fn delta() -> impl Strategy<Value = f64> {
        prop_oneof![
            4 => -1.5f64..2.5,
            1 => Just(0.0),
            1 => Just(0.5),
            1 => Just(1.0),
        ]
    }

    proptest! {
        #[test]
        fn select_matches_payoff_argmax(da in -1.5f64..2.5, db in -1.5f64..2.5, x in 0.0f64..=1.0) {
            prop_assert_eq!(select(da, db, x), argmax_oracle(da, db, x));
        }

        #[test]
        fn partition_is_well_formed(da in delta(), db in delta()) {
            let part = partition(da, db);
            if let Some(i) = part.interval_a {
                prop_assert_eq!(i.lo, 0.0);
                prop_assert!(i.hi <= 1.0 && i.hi >= 0.0);
            }
            if let Some(i) = part.interval_b {
                prop_assert_eq!(i.hi, 1.0);
                prop_assert!(i.lo >= 0.0 && i.lo <= 1.0);
            }
            if let (Some(a), Some(b)) = (part.interval_a, part.interval_b) {
                prop_assert!(a.hi <= b.lo + 1e-15);
            }
            let s = part.shares();
            prop_assert!(s.a + s.b <= 1.0 + 1e-12);
            let any_positive = da.max(db) > 0.0;
            prop_assert_eq!(part.scenario == MarketScenario::Empty, !any_positive);
        }

        #[test]
        fn exactly_one_case_applies(da in delta(), db in delta()) {
            let d = DeltaPair::new(PerStation::new(da, db));
            prop_assume!(d.first > 0.0);
            let (hi, lo) = (d.first, d.second);
            let cases = [
                hi + lo >= 1.0 && hi - lo < 1.0,
                hi + lo < 1.0 && lo > 0.0,
                hi - lo >= 1.0 && lo > 0.0,
                hi > 0.0 && lo <= 0.0,
            ];
            prop_assert_eq!(cases.iter().filter(|c| **c).count(), 1);
        }

        #[test]
        fn label_swap_mirrors_partition(da in delta(), db in delta()) {
            prop_assume!(da != db);
            let direct = partition(da, db).swapped();
            let mirrored = partition(db, da);
            prop_assert_eq!(direct.scenario, mirrored.scenario);
            let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-15,
                (None, None) => true,
                _ => false,
            };
            for (x, y) in direct.endpoints().into_iter().zip(mirrored.endpoints()) {
                prop_assert!(close(x, y), "{:?} vs {:?}", direct, mirrored);
            }
        }

        #[test]
        fn shares_respond_to_own_price_and_quality(
            qa in 0.2f64..2.0, qb in 0.2f64..2.0, pa in 0.0f64..1.0, pb in 0.0f64..1.0, h in 1e-4f64..0.05,
        ) {
            let params = unit();
            let q = PerStation::new(qa, qb);
            let p = PerStation::new(pa, pb);
            let base = market_partition(&p, &q, &params).shares();
            let dearer = market_partition(&PerStation::new(pa + h, pb), &q, &params).shares();
            let better = market_partition(&p, &PerStation::new(qa + h, qb), &params).shares();
            prop_assert!(dearer.a <= base.a + 1e-12);
            prop_assert!(better.a >= base.a - 1e-12);
            let dearer_b = market_partition(&PerStation::new(pa, pb + h), &q, &params).shares();
            prop_assert!(dearer_b.b <= base.b + 1e-12);
        }
    }
}
