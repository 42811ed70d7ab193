//! Equilibrium solvers and simulation tools for a duopoly of EV charging
//! stations that may train demand-prediction models together.
//!
//! The game is solved backwards: [`market`] assigns EVs to stations for given
//! prices, [`pricing`] finds the stations' price equilibrium for given QoS,
//! and [`participation`] solves the 2x2 game over joining federated training.
//! [`oracle`] re-derives the first two stages by brute force, and [`flsim`]
//! produces the QoS inputs from a small federated-learning simulation.

pub mod audit;
pub mod error;
pub mod flsim;
pub mod market;
pub mod model;
pub mod oracle;
pub mod participation;
pub mod pricing;

pub use error::{Error, Result};
pub use market::{ev_select, market_partition, shares, DeltaPair, Interval, MarketPartition, MarketScenario};
pub use model::{
    effective_qos, ev_payoff, fl_cost, EvChoice, ModelParams, ParticipationProfile, PerStation, PriceProfile,
    QosProfile, QosVector, StationId,
};

pub use participation::{build_profit_matrix, pure_nash, ParticipationEquilibrium, ProfitMatrix};
pub use pricing::{pricing_equilibrium, profit, PricingOutcome, PricingRegime};
