//! Stage II: the stations' price equilibrium and the induced profits.
//!
//! The regime is determined by the quality-cost margins
//! `Delta_i = w_l * q_i - w_p * o_i`. Write `S = Delta_A + Delta_B` and
//! `D = |Delta_A - Delta_B|`, and measure margins in utility units
//! (`v_i = w_p * (p_i - o_i)`):
//!
//! | regime            | condition                          | margins                        |
//! |-------------------|------------------------------------|--------------------------------|
//! | `Competitive`     | `S >= 3`, `D <= 3`, both positive  | `v_i = 1 + (Delta_i - Delta_j)/3` |
//! | `SharedBoundary`  | `2 <= S < 3`, both positive        | on the kink `delta_A + delta_B = 1` |
//! | `LocalMonopolies` | `S < 2`, both positive             | `v_i = Delta_i / 2`            |
//! | `Dominance`       | `Delta_j <= 0` or `D > 3`          | see below                      |
//!
//! Two regimes need more care than their textbook closed forms:
//!
//! * On the shared boundary the equilibria form a segment: any split of the
//!   total margin `S - 1` with `v_i` in `[Delta_i/2, 2*Delta_i/3]` is an
//!   equilibrium. The selected point splits prices by QoS,
//!   `p_i = (w_l q_i + w_l q_j - 1) / (2 w_p)`, projected onto the segment
//!   when that split would leave it. [`shared_boundary_margins`] exposes the
//!   whole segment.
//! * A dominant station facing a rival with `Delta_j > 0` has to limit-price:
//!   the rival, pricing at cost, keeps every EV unless
//!   `delta_i >= 1 + Delta_j`, so `v_i = Delta_i - Delta_j - 1`. Against a
//!   rival with `Delta_j <= 0` the dominant station charges the unconstrained
//!   monopoly price (`v_i = Delta_i/2` up to `Delta_i = 2`, else
//!   `Delta_i - 1`). The dominated station prices at cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{market_partition, MarketPartition};
use crate::model::{
    effective_qos, fl_cost, ModelParams, ParticipationProfile, PerStation, PriceProfile, QosProfile, QosVector,
    StationId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PricingRegime {
    /// Both stations serve the whole line between them.
    Competitive,
    /// Market areas touch exactly; the marginal EV is indifferent to opting out.
    SharedBoundary,
    /// A middle band of EVs opts out; each station prices as a local monopolist.
    LocalMonopolies,
    /// One station serves everybody who charges.
    Dominance,
}

impl PricingRegime {
    pub const ALL: [PricingRegime; 4] = [
        PricingRegime::Competitive,
        PricingRegime::SharedBoundary,
        PricingRegime::LocalMonopolies,
        PricingRegime::Dominance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PricingRegime::Competitive => "competitive",
            PricingRegime::SharedBoundary => "shared_boundary",
            PricingRegime::LocalMonopolies => "local_monopolies",
            PricingRegime::Dominance => "dominance",
        }
    }
}

/// `w_l * q_i - w_p * o_i` per station.
pub fn quality_cost_margins(q_eff: &QosVector, params: &ModelParams) -> PerStation<f64> {
    q_eff.zip(params.o).map(|(q, o)| params.w_l * q - params.w_p * o)
}

/// Regime for the given margins, plus the dominant station in the
/// `Dominance` regime. Fails when neither margin is positive.
pub fn classify(margins: &PerStation<f64>, tol: f64) -> Result<(PricingRegime, Option<StationId>)> {
    let lead = if margins.a >= margins.b {
        StationId::A
    } else {
        StationId::B
    };
    let hi = margins[lead];
    let lo = margins[lead.other()];
    if hi <= tol {
        return Err(Error::DegenerateMarket {
            delta_a: margins.a,
            delta_b: margins.b,
        });
    }
    if lo <= tol || hi - lo > 3.0 + tol {
        return Ok((PricingRegime::Dominance, Some(lead)));
    }
    let sum = hi + lo;
    let regime = if sum >= 3.0 - tol {
        PricingRegime::Competitive
    } else if sum >= 2.0 - tol {
        PricingRegime::SharedBoundary
    } else {
        PricingRegime::LocalMonopolies
    };
    Ok((regime, None))
}

/// Equilibrium margin range `[lo, hi]` (utility units) of each station on the
/// shared boundary. Margins must also add up to `Delta_A + Delta_B - 1`.
pub fn shared_boundary_margins(margins: &PerStation<f64>) -> PerStation<(f64, f64)> {
    let total = margins.a + margins.b - 1.0;
    let own = |d: f64| (d / 2.0, 2.0 * d / 3.0);
    let (a_lo, a_hi) = own(margins.a);
    let (b_lo, b_hi) = own(margins.b);
    PerStation::new(
        (a_lo.max(total - b_hi), a_hi.min(total - b_lo)),
        (b_lo.max(total - a_hi), b_hi.min(total - a_lo)),
    )
}

/// Equilibrium margins in utility units.
fn equilibrium_margins(
    regime: PricingRegime,
    dominant: Option<StationId>,
    margins: &PerStation<f64>,
    q_eff: &QosVector,
    params: &ModelParams,
) -> PerStation<f64> {
    match regime {
        PricingRegime::Competitive => {
            PerStation::new(1.0 + (margins.a - margins.b) / 3.0, 1.0 + (margins.b - margins.a) / 3.0)
        }
        PricingRegime::SharedBoundary => {
            let total = margins.a + margins.b - 1.0;
            // QoS-split point: p_A = (w_l q_A + w_l q_B - 1) / (2 w_p)
            let split = (params.w_l * (q_eff.a + q_eff.b) - 1.0) / 2.0 - params.w_p * params.o.a;
            let (lo, hi) = shared_boundary_margins(margins).a;
            let a = split.clamp(lo, hi);
            PerStation::new(a, total - a)
        }
        PricingRegime::LocalMonopolies => margins.map(|d| d / 2.0),
        PricingRegime::Dominance => {
            let lead = dominant.expect("dominance regime always names a station");
            let own = margins[lead];
            let rival = margins[lead.other()];
            let v = if rival > params.tol {
                own - rival - 1.0
            } else if own <= 2.0 + params.tol {
                own / 2.0
            } else {
                own - 1.0
            };
            let mut out = PerStation::splat(0.0);
            out[lead] = v;
            out
        }
    }
}

/// Stage II equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingOutcome {
    pub prices: PriceProfile,
    pub regime: PricingRegime,
    pub partition: MarketPartition,
    pub shares: PerStation<f64>,
    /// `(p_i - o_i) * share_i`.
    pub revenue: PerStation<f64>,
    pub dominant: Option<StationId>,
    pub margins: PerStation<f64>,
}

/// Closed-form price equilibrium for the effective QoS `q_eff`.
///
/// Returns [`Error::DegenerateMarket`] when no station can attract an EV
/// without pricing below cost.
pub fn pricing_equilibrium(q_eff: &QosVector, params: &ModelParams) -> Result<PricingOutcome> {
    let margins = quality_cost_margins(q_eff, params);
    let (regime, dominant) = classify(&margins, params.tol)?;
    let v = equilibrium_margins(regime, dominant, &margins, q_eff, params);
    let prices = v.zip(params.o).map(|(v, o)| o + v / params.w_p);
    let partition = market_partition(&prices, q_eff, params);
    let shares = partition.shares();
    let revenue = prices.zip(params.o).zip(shares).map(|((p, o), s)| (p - o) * s);
    Ok(PricingOutcome {
        prices,
        regime,
        partition,
        shares,
        revenue,
        dominant,
        margins,
    })
}

/// Revenue from the per-regime closed forms, without going through prices
/// and partitions.
pub fn closed_form_revenue(margins: &PerStation<f64>, params: &ModelParams) -> Result<PerStation<f64>> {
    let (regime, dominant) = classify(margins, params.tol)?;
    let w_p = params.w_p;
    Ok(match regime {
        PricingRegime::Competitive => PerStation::new(
            (1.0 + (margins.a - margins.b) / 3.0).powi(2) / (2.0 * w_p),
            (1.0 + (margins.b - margins.a) / 3.0).powi(2) / (2.0 * w_p),
        ),
        PricingRegime::SharedBoundary => {
            // margin times share, share being the station's own delta on the kink
            let v = equilibrium_margins(regime, dominant, margins, &implied_qos(margins, params), params);
            margins.zip(v).map(|(d, v)| v * (d - v) / w_p)
        }
        PricingRegime::LocalMonopolies => margins.map(|d| d * d / (4.0 * w_p)),
        PricingRegime::Dominance => {
            let lead = dominant.expect("dominance regime always names a station");
            let own = margins[lead];
            let rival = margins[lead.other()];
            let r = if rival > params.tol {
                (own - rival - 1.0) / w_p
            } else if own <= 2.0 + params.tol {
                own * own / (4.0 * w_p)
            } else {
                (own - 1.0) / w_p
            };
            let mut out = PerStation::splat(0.0);
            out[lead] = r;
            out
        }
    })
}

/// QoS consistent with `margins` under `params`.
fn implied_qos(margins: &PerStation<f64>, params: &ModelParams) -> QosVector {
    margins.zip(params.o).map(|(d, o)| (d + params.w_p * o) / params.w_l)
}

/// Stage I payoff: equilibrium revenue minus participation cost. A
/// degenerate market yields zero revenue.
pub fn profit(r: ParticipationProfile, q: &QosProfile, params: &ModelParams) -> PerStation<f64> {
    let q_eff = effective_qos(r, q);
    let revenue = match pricing_equilibrium(&q_eff, params) {
        Ok(outcome) => outcome.revenue,
        Err(Error::DegenerateMarket { .. }) => PerStation::splat(0.0),
        Err(e) => unreachable!("pricing_equilibrium only fails on degenerate markets: {e}"),
    };
    revenue.zip(fl_cost(r, params)).map(|(rev, c)| rev - c)
}
