//! Stage I: whether each station joins federated training.
//!
//! Training only happens when both stations join, so the game is a 2x2
//! matrix of equilibrium profits. Equilibria use the weak condition: a
//! station stays put when deviating does not strictly pay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, ParticipationProfile, PerStation, QosProfile, StationId};
use crate::pricing::{pricing_equilibrium, profit, PricingRegime};

/// `a` exceeds `b` by more than floating-point noise.
pub(crate) fn strictly_greater(a: f64, b: f64, tol: f64) -> bool {
    a > b + tol * (1.0 + a.abs().max(b.abs()))
}

/// Profits `W_i(r)` for the four participation profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitMatrix {
    /// Indexed `[r_A][r_B]`.
    pub cells: [[PerStation<f64>; 2]; 2],
    pub tol: f64,
}

impl ProfitMatrix {
    pub fn get(&self, r: ParticipationProfile) -> PerStation<f64> {
        self.cells[usize::from(r.0.a)][usize::from(r.0.b)]
    }

    pub fn profit(&self, r: ParticipationProfile, id: StationId) -> f64 {
        self.get(r)[id]
    }

    /// Whether `id` strictly gains by flipping its own decision at `r`.
    pub fn gains_by_deviating(&self, r: ParticipationProfile, id: StationId) -> bool {
        strictly_greater(self.profit(r.deviate(id), id), self.profit(r, id), self.tol)
    }
}

pub fn build_profit_matrix(q: &QosProfile, params: &ModelParams) -> ProfitMatrix {
    let mut cells = [[PerStation::splat(0.0); 2]; 2];
    for r in ParticipationProfile::ALL {
        cells[usize::from(r.0.a)][usize::from(r.0.b)] = profit(r, q, params);
    }
    ProfitMatrix { cells, tol: params.tol }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashProfile {
    pub profile: ParticipationProfile,
    /// Every unilateral deviation is strictly worse.
    pub strict: bool,
    pub fl_happens: bool,
}

/// Pure-strategy equilibria of the participation game. May be empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipationEquilibrium {
    pub equilibria: Vec<NashProfile>,
    /// Equilibrium that weakly improves both stations over every other one,
    /// when such a profile exists and there is more than one equilibrium.
    pub payoff_dominant: Option<ParticipationProfile>,
}

impl ParticipationEquilibrium {
    pub fn profiles(&self) -> impl Iterator<Item = ParticipationProfile> + '_ {
        self.equilibria.iter().map(|e| e.profile)
    }

    pub fn contains(&self, r: ParticipationProfile) -> bool {
        self.profiles().any(|p| p == r)
    }

    /// The unique equilibrium, or the payoff-dominant one among several.
    pub fn selected(&self) -> Option<ParticipationProfile> {
        match self.equilibria.as_slice() {
            [only] => Some(only.profile),
            _ => self.payoff_dominant,
        }
    }

    /// Whether training takes place at [`Self::selected`].
    pub fn fl_happens(&self) -> bool {
        self.selected().is_some_and(|r| r.fl_happens())
    }

    /// Profiles joined by `|`, e.g. `"00|11"`; `"none"` when empty.
    pub fn label(&self) -> String {
        if self.equilibria.is_empty() {
            return "none".to_owned();
        }
        self.profiles().map(|p| p.label()).collect::<Vec<_>>().join("|")
    }
}

pub fn pure_nash(matrix: &ProfitMatrix) -> ParticipationEquilibrium {
    let equilibria: Vec<NashProfile> = ParticipationProfile::ALL
        .into_iter()
        .filter(|&r| StationId::ALL.iter().all(|&id| !matrix.gains_by_deviating(r, id)))
        .map(|r| NashProfile {
            profile: r,
            strict: StationId::ALL
                .iter()
                .all(|&id| strictly_greater(matrix.profit(r, id), matrix.profit(r.deviate(id), id), matrix.tol)),
            fl_happens: r.fl_happens(),
        })
        .collect();

    let payoff_dominant = if equilibria.len() > 1 {
        equilibria.iter().map(|e| e.profile).find(|&cand| {
            equilibria.iter().all(|other| {
                StationId::ALL
                    .iter()
                    .all(|&id| !strictly_greater(matrix.profit(other.profile, id), matrix.profit(cand, id), matrix.tol))
            })
        })
    } else {
        None
    };

    ParticipationEquilibrium {
        equilibria,
        payoff_dominant,
    }
}

/// How post-training QoS is drawn relative to the pre-training QoS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum QosGain {
    /// Independent gains in `[0, max]` per station.
    Independent { max: f64 },
    /// One common gain in `[0, max]` added to both stations.
    Uniform { max: f64 },
}

/// Region searched for instances where training together is not stable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessSearch {
    /// Range of pre-training QoS, shared by both stations.
    pub q_low: (f64, f64),
    pub gain: QosGain,
    /// Keep only instances whose pricing regime is this one both with and
    /// without training.
    pub regime: Option<PricingRegime>,
    pub budget: usize,
    /// Also try the deterministic gap-shrinking construction.
    pub directed: bool,
}

/// An instance where training weakly improves both QoS values yet
/// `(1, 1)` is not an equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlRefusalWitness {
    pub qos: QosProfile,
    pub matrix: ProfitMatrix,
    /// A station that strictly gains by leaving `(1, 1)`.
    pub deviator: StationId,
    /// Found by the deterministic construction rather than a random draw.
    pub directed: bool,
}

fn check_candidate(
    qos: QosProfile,
    params: &ModelParams,
    search: &WitnessSearch,
    directed: bool,
) -> Option<FlRefusalWitness> {
    if qos.high.a < qos.low.a || qos.high.b < qos.low.b {
        return None;
    }
    if let Some(want) = search.regime {
        let regime_of = |q| pricing_equilibrium(q, params).ok().map(|o| o.regime);
        if regime_of(&qos.low) != Some(want) || regime_of(&qos.high) != Some(want) {
            return None;
        }
    }
    let matrix = build_profit_matrix(&qos, params);
    let both = ParticipationProfile::new(true, true);
    StationId::ALL
        .into_iter()
        .find(|&id| matrix.gains_by_deviating(both, id))
        .map(|deviator| FlRefusalWitness {
            qos,
            matrix,
            deviator,
            directed,
        })
}

/// Candidates where training raises both QoS values but narrows the QoS gap,
/// which intensifies competition for the leader.
fn gap_shrinking_candidates(search: &WitnessSearch) -> Vec<QosProfile> {
    let (lo, hi) = search.q_low;
    let max_gain = match search.gain {
        QosGain::Independent { max } => max,
        QosGain::Uniform { .. } => return Vec::new(),
    };
    let mut out = Vec::new();
    let steps = 8;
    for i in 0..=steps {
        for j in 0..=steps {
            let qa = lo + (hi - lo) * i as f64 / steps as f64;
            let qb = lo + (hi - lo) * j as f64 / steps as f64;
            if qa <= qb {
                continue;
            }
            // follower gains the full amount, leader a fraction of it
            for (leader_frac, size) in [(0.0, 1.0), (0.25, 1.0), (0.0, 0.5), (0.5, 0.5), (0.0, 0.25)] {
                let g = max_gain * size;
                if g * (1.0 - leader_frac) >= qa - qb {
                    continue;
                }
                let high = PerStation::new(qa + leader_frac * g, qb + g);
                if let Ok(qos) = QosProfile::new(PerStation::new(qa, qb), high) {
                    out.push(qos);
                }
            }
        }
    }
    out
}

/// Looks for an instance where both stations' QoS weakly improves with
/// training, yet some station prefers to stay out of `(1, 1)`.
///
/// Random draws come first, then (if enabled) the directed construction.
pub fn find_fl_refusal_witness(params: &ModelParams, search: &WitnessSearch, seed: u64) -> Option<FlRefusalWitness> {
    let (lo, hi) = search.q_low;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..search.budget {
        let low = PerStation::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let high = match search.gain {
            QosGain::Independent { max } => {
                PerStation::new(low.a + rng.random_range(0.0..=max), low.b + rng.random_range(0.0..=max))
            }
            QosGain::Uniform { max } => {
                let g = rng.random_range(0.0..=max);
                low.map(|q| q + g)
            }
        };
        let Ok(qos) = QosProfile::new(low, high) else { continue };
        if let Some(w) = check_candidate(qos, params, search, false) {
            return Some(w);
        }
    }
    if search.directed {
        for qos in gap_shrinking_candidates(search) {
            if let Some(w) = check_candidate(qos, params, search, true) {
                return Some(w);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::closed_form_revenue;
    use crate::pricing::quality_cost_margins;
    use proptest::prelude::*;

    fn unit(w_c: f64) -> ModelParams {
        ModelParams {
            w_l: 1.0,
            w_p: 1.0,
            o: PerStation::splat(1.0),
            w_c,
            ..ModelParams::default()
        }
    }

    const BOTH: ParticipationProfile = ParticipationProfile::new(true, true);
    const NONE: ParticipationProfile = ParticipationProfile::new(false, false);

    #[test]
    fn useless_training_only_costs() {
        let q = QosProfile::new(PerStation::new(3.5, 3.0), PerStation::new(3.5, 3.0)).unwrap();
        let params = unit(0.1);
        let m = build_profit_matrix(&q, &params);
        for id in StationId::ALL {
            assert!((m.profit(BOTH, id) - (m.profit(NONE, id) - 0.1)).abs() < 1e-12);
        }
        let a_only = ParticipationProfile::new(true, false);
        assert!((m.profit(a_only, StationId::A) - (m.profit(NONE, StationId::A) - 0.1)).abs() < 1e-12);
        let ne = pure_nash(&m);
        assert_eq!(ne.profiles().collect::<Vec<_>>(), vec![NONE]);
        assert!(ne.equilibria[0].strict);
        assert_eq!(ne.label(), "00");
    }

    #[test]
    fn symmetric_improvement_leaves_competitive_profits_unchanged() {
        let q = QosProfile::new(PerStation::splat(3.0), PerStation::splat(3.2)).unwrap();
        let m = build_profit_matrix(&q, &unit(0.0));
        for id in StationId::ALL {
            assert!((m.profit(BOTH, id) - 0.5).abs() < 1e-12);
            assert!((m.profit(NONE, id) - 0.5).abs() < 1e-12);
        }
        let ne = pure_nash(&m);
        assert_eq!(ne.equilibria.len(), 4);
        assert!(ne.equilibria.iter().all(|e| !e.strict));
        assert!(ne.payoff_dominant.is_some());
    }

    #[test]
    fn cost_free_gap_shrinking_witness() {
        // Delta_low = (3, 1): A leads. Training lifts B more than A.
        let q = QosProfile::new(PerStation::new(4.0, 2.0), PerStation::new(4.1, 2.6)).unwrap();
        let params = unit(0.0);
        let m = build_profit_matrix(&q, &params);
        assert!(m.gains_by_deviating(BOTH, StationId::A));
        assert!(!pure_nash(&m).contains(BOTH));
    }

    #[test]
    fn search_finds_cost_only_witness_immediately() {
        let params = unit(0.1);
        let search = WitnessSearch {
            q_low: (3.0, 4.0),
            gain: QosGain::Uniform { max: 0.0 },
            regime: None,
            budget: 1,
            directed: false,
        };
        let w = find_fl_refusal_witness(&params, &search, 7).expect("cost alone deters training");
        assert_eq!(w.qos.low, w.qos.high);
    }

    #[test]
    fn search_with_free_training_finds_gap_shrinking_witness() {
        let params = unit(0.0);
        let search = WitnessSearch {
            q_low: (2.5, 5.5),
            gain: QosGain::Independent { max: 0.8 },
            regime: Some(PricingRegime::Competitive),
            budget: 0,
            directed: true,
        };
        let w = find_fl_refusal_witness(&params, &search, 1).expect("directed construction");
        assert!(w.directed);
        let gap = |q: PerStation<f64>| (q.a - q.b).abs();
        assert!(gap(w.qos.high) < gap(w.qos.low));
    }

    #[test]
    fn uniform_gains_in_competitive_interior_never_deter() {
        let params = unit(0.0);
        let search = WitnessSearch {
            q_low: (2.6, 4.2),
            gain: QosGain::Uniform { max: 1.0 },
            regime: Some(PricingRegime::Competitive),
            budget: 2000,
            directed: true,
        };
        assert!(find_fl_refusal_witness(&params, &search, 3).is_none());
        // exhaustive grid over the same restricted space
        let n = 24;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=4 {
                    let low = PerStation::new(2.6 + 1.6 * i as f64 / n as f64, 2.6 + 1.6 * j as f64 / n as f64);
                    let high = low.map(|q| q + 0.25 * k as f64);
                    let qos = QosProfile::new(low, high).unwrap();
                    assert!(check_candidate(qos, &params, &search, false).is_none(), "{qos:?}");
                }
            }
        }
    }

    fn instance() -> impl Strategy<Value = (QosProfile, ModelParams)> {
        (
            0.0f64..5.0,
            0.0f64..5.0,
            0.0f64..1.0,
            0.0f64..1.0,
            0.5f64..2.0,
            0.0f64..0.5,
        )
            .prop_map(|(qa, qb, ga, gb, w_l, w_c)| {
                let q = QosProfile::new(PerStation::new(qa, qb), PerStation::new(qa + ga, qb + gb)).unwrap();
                (q, ModelParams { w_l, ..unit(w_c) })
            })
    }

    proptest! {
        #[test]
        fn listed_equilibria_survive_recomputation((q, params) in instance()) {
            let m = build_profit_matrix(&q, &params);
            let ne = pure_nash(&m);
            for r in ParticipationProfile::ALL {
                let stable = StationId::ALL.iter().all(|&id| {
                    let here = profit(r, &q, &params)[id];
                    let there = profit(r.deviate(id), &q, &params)[id];
                    !strictly_greater(there, here, params.tol)
                });
                prop_assert_eq!(stable, ne.contains(r), "profile {}", r);
            }
        }

        #[test]
        fn costlier_training_never_helps_joint_participation((q, params) in instance(), eps in 1e-3f64..0.5) {
            let cheap = pure_nash(&build_profit_matrix(&q, &params));
            let dear_params = ModelParams { w_c: params.w_c + eps, ..params };
            let dear = pure_nash(&build_profit_matrix(&q, &dear_params));
            if !cheap.contains(BOTH) {
                prop_assert!(!dear.contains(BOTH));
            }
            if cheap.contains(NONE) {
                prop_assert!(dear.contains(NONE));
            }
        }

        #[test]
        fn narrowing_the_gap_hurts_the_leader(
            qa in 3.0f64..5.0, qb in 2.0f64..4.0, up_a in 0.01f64..0.5, extra in 0.01f64..0.5,
        ) {
            let params = unit(0.0);
            let low = PerStation::new(qa, qb);
            let high = PerStation::new(qa + up_a, qb + up_a + extra);
            let m_low = quality_cost_margins(&low, &params);
            let m_high = quality_cost_margins(&high, &params);
            prop_assume!(m_low.a > m_low.b && m_high.a > m_high.b);
            let in_competitive = |q: &PerStation<f64>| {
                pricing_equilibrium(q, &params).map(|o| o.regime) .ok() == Some(PricingRegime::Competitive)
            };
            prop_assume!(in_competitive(&low) && in_competitive(&high));
            let q = QosProfile::new(low, high).unwrap();
            let m = build_profit_matrix(&q, &params);
            prop_assert!(m.profit(BOTH, StationId::A) < m.profit(NONE, StationId::A));
            let rev = closed_form_revenue(&m_high, &params).unwrap();
            prop_assert!((rev.a - m.profit(BOTH, StationId::A)).abs() < 1e-9);
        }
    }
}
