//! Exogenous parameters, per-station profiles and the elementary payoff and
//! cost formulas shared by every stage of the game.
//!
//! EV locations are uniform on the unit line (density 1). Station A sits at
//! `x = 0`, station B at `x = 1`, and the travel weight is normalized to 1.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default absolute tolerance for classifying case boundaries.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Weight on travel distance in the EV payoff. Fixed by normalization.
pub const TRAVEL_WEIGHT: f64 = 1.0;

/// Density of EV types on `[0, 1]`.
pub const EV_DENSITY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StationId {
    A,
    B,
}

impl StationId {
    pub const ALL: [StationId; 2] = [StationId::A, StationId::B];

    pub fn other(self) -> StationId {
        match self {
            StationId::A => StationId::B,
            StationId::B => StationId::A,
        }
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StationId::A => f.write_str("A"),
            StationId::B => f.write_str("B"),
        }
    }
}

/// A value held once per station.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerStation<T> {
    pub a: T,
    pub b: T,
}

impl<T> PerStation<T> {
    pub const fn new(a: T, b: T) -> Self {
        PerStation { a, b }
    }

    pub fn get(&self, id: StationId) -> &T {
        match id {
            StationId::A => &self.a,
            StationId::B => &self.b,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> PerStation<U> {
        PerStation {
            a: f(self.a),
            b: f(self.b),
        }
    }

    pub fn map_with_id<U>(self, mut f: impl FnMut(StationId, T) -> U) -> PerStation<U> {
        PerStation {
            a: f(StationId::A, self.a),
            b: f(StationId::B, self.b),
        }
    }

    pub fn zip<U>(self, other: PerStation<U>) -> PerStation<(T, U)> {
        PerStation {
            a: (self.a, other.a),
            b: (self.b, other.b),
        }
    }

    /// Exchanges the two station labels.
    pub fn swapped(self) -> Self {
        PerStation { a: self.b, b: self.a }
    }
}

impl<T: Copy> PerStation<T> {
    pub fn splat(v: T) -> Self {
        PerStation { a: v, b: v }
    }
}

impl<T> Index<StationId> for PerStation<T> {
    type Output = T;

    fn index(&self, id: StationId) -> &T {
        self.get(id)
    }
}

impl<T> IndexMut<StationId> for PerStation<T> {
    fn index_mut(&mut self, id: StationId) -> &mut T {
        match id {
            StationId::A => &mut self.a,
            StationId::B => &mut self.b,
        }
    }
}

/// Unit charging prices, one per station.
pub type PriceProfile = PerStation<f64>;

/// Effective QoS after stage I, one per station.
pub type QosVector = PerStation<f64>;

/// All exogenous constants of the game.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Utility per unit of QoS.
    pub w_l: f64,
    /// Disutility per unit of price.
    pub w_p: f64,
    /// Electricity cost per station.
    pub o: PerStation<f64>,
    /// Cost of taking part in federated training.
    pub w_c: f64,
    /// QoS reached by a model with zero error.
    pub q_max: f64,
    /// QoS lost per unit of RMSE.
    pub theta: f64,
    /// Absolute tolerance used at case boundaries.
    pub tol: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            w_l: 10.0,
            w_p: 1.0,
            o: PerStation::splat(1.0),
            w_c: 0.1,
            q_max: 100.0,
            theta: 10.0,
            tol: BOUNDARY_TOL,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        fn finite(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite, got {v}")))
            }
        }
        finite("w_l", self.w_l)?;
        finite("w_p", self.w_p)?;
        finite("o_A", self.o.a)?;
        finite("o_B", self.o.b)?;
        finite("w_c", self.w_c)?;
        finite("q_max", self.q_max)?;
        finite("theta", self.theta)?;
        if self.w_l <= 0.0 {
            return Err(invalid("w_l", format!("must be > 0, got {}", self.w_l)));
        }
        if self.w_p <= 0.0 {
            return Err(invalid("w_p", format!("must be > 0, got {}", self.w_p)));
        }
        if self.o.a < 0.0 {
            return Err(invalid("o_A", format!("must be >= 0, got {}", self.o.a)));
        }
        if self.o.b < 0.0 {
            return Err(invalid("o_B", format!("must be >= 0, got {}", self.o.b)));
        }
        if self.w_c < 0.0 {
            return Err(invalid("w_c", format!("must be >= 0, got {}", self.w_c)));
        }
        if self.theta < 0.0 {
            return Err(invalid("theta", format!("must be >= 0, got {}", self.theta)));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol", format!("must be finite and >= 0, got {}", self.tol)));
        }
        Ok(())
    }

    /// Same parameters with the station labels exchanged.
    pub fn swapped(&self) -> Self {
        ModelParams {
            o: self.o.swapped(),
            ..*self
        }
    }
}

/// QoS each station reaches with and without federated training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub low: QosVector,
    pub high: QosVector,
}

impl QosProfile {
    pub fn new(low: QosVector, high: QosVector) -> Result<Self> {
        for (name, v) in [
            ("q_low_A", low.a),
            ("q_low_B", low.b),
            ("q_high_A", high.a),
            ("q_high_B", high.b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("QoS must be finite and >= 0, got {v}")));
            }
        }
        Ok(QosProfile { low, high })
    }

    pub fn swapped(&self) -> Self {
        QosProfile {
            low: self.low.swapped(),
            high: self.high.swapped(),
        }
    }
}

/// Which stations opt into federated training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipationProfile(pub PerStation<bool>);

impl ParticipationProfile {
    pub const ALL: [ParticipationProfile; 4] = [
        ParticipationProfile(PerStation::new(false, false)),
        ParticipationProfile(PerStation::new(false, true)),
        ParticipationProfile(PerStation::new(true, false)),
        ParticipationProfile(PerStation::new(true, true)),
    ];

    pub const fn new(a: bool, b: bool) -> Self {
        ParticipationProfile(PerStation::new(a, b))
    }

    /// Builds a profile from 0/1 flags.
    pub fn from_flags(a: u8, b: u8) -> Result<Self> {
        let flag = |name: &'static str, v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(invalid(name, format!("participation flag must be 0 or 1, got {v}"))),
        };
        Ok(Self::new(flag("r_A", a)?, flag("r_B", b)?))
    }

    pub fn participates(&self, id: StationId) -> bool {
        self.0[id]
    }

    /// Training happens only when both stations take part.
    pub fn fl_happens(&self) -> bool {
        self.0.a && self.0.b
    }

    /// The profile reached when `id` flips its own decision.
    pub fn deviate(&self, id: StationId) -> Self {
        let mut next = *self;
        next.0[id] = !next.0[id];
        next
    }

    pub fn swapped(&self) -> Self {
        ParticipationProfile(self.0.swapped())
    }

    /// Two-character label such as `"10"` (A participates, B does not).
    pub fn label(&self) -> String {
        format!("{}{}", u8::from(self.0.a), u8::from(self.0.b))
    }
}

impl fmt::Display for ParticipationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", u8::from(self.0.a), u8::from(self.0.b))
    }
}

/// An EV owner's station choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvChoice {
    /// Charges nowhere; payoff zero.
    OptOut,
    A,
    B,
}

impl From<StationId> for EvChoice {
    fn from(id: StationId) -> Self {
        match id {
            StationId::A => EvChoice::A,
            StationId::B => EvChoice::B,
        }
    }
}

impl EvChoice {
    pub fn station(self) -> Option<StationId> {
        match self {
            EvChoice::OptOut => None,
            EvChoice::A => Some(StationId::A),
            EvChoice::B => Some(StationId::B),
        }
    }
}

/// QoS actually delivered: the post-training value only if both stations train.
pub fn effective_qos(r: ParticipationProfile, q: &QosProfile) -> QosVector {
    if r.fl_happens() {
        q.high
    } else {
        q.low
    }
}

pub(crate) fn check_location(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::LocationOutOfRange(x))
    }
}

/// Distance from location `x` to station `id`.
pub fn travel_distance(x: f64, id: StationId) -> f64 {
    match id {
        StationId::A => x,
        StationId::B => 1.0 - x,
    }
}

/// Payoff of the EV at `x` when it picks `s`.
pub fn ev_payoff(x: f64, s: EvChoice, p: &PriceProfile, q_eff: &QosVector, params: &ModelParams) -> Result<f64> {
    check_location(x)?;
    Ok(match s.station() {
        None => 0.0,
        Some(id) => params.w_l * q_eff[id] - params.w_p * p[id] - TRAVEL_WEIGHT * travel_distance(x, id),
    })
}

/// Participation cost per station.
pub fn fl_cost(r: ParticipationProfile, params: &ModelParams) -> PerStation<f64> {
    r.0.map(|on| if on { params.w_c } else { 0.0 })
}
