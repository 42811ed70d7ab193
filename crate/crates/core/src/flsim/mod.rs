//! Small federated-learning simulation that turns data heterogeneity into
//! the QoS pairs the participation game consumes.
//!
//! Two stations hold synthetic demand data drawn from a mix of clusters,
//! train a linear predictor alone or with FedAvg plus fine-tuning, and map
//! their test RMSE to QoS.

mod data;
mod ingest;
mod train;

pub use data::{
    dirichlet_symmetric, generate_partitioned_data, total_variation, Dataset, HeterogeneityConfig, PartitionedData,
    Rows,
};
pub use ingest::{ingest_sessions_csv, read_sessions_csv, IngestReport, SESSION_COLUMNS, SESSION_FEATURES};
pub use train::{
    qos_map, rmse, rmse_rows, train_fedavg, train_fedavg_traced, train_local, FedAvgConfig, FedAvgTrace, LinearModel,
    Optimizer, RoundRecord, Standardizer,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ModelParams, PerStation, QosProfile};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: HeterogeneityConfig,
    pub fedavg: FedAvgConfig,
    pub optimizer: Optimizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlRunResult {
    pub beta: f64,
    pub seed: u64,
    pub rmse_local: PerStation<f64>,
    pub rmse_fl: PerStation<f64>,
    pub qos_local: PerStation<f64>,
    pub qos_fl: PerStation<f64>,
}

impl FlRunResult {
    /// Local-only QoS as the low level and FL QoS as the high level.
    pub fn qos_profile(&self) -> Result<QosProfile> {
        QosProfile::new(self.qos_local, self.qos_fl)
    }
}

/// Generates data for `cfg.data`, trains local and federated models on it,
/// and reports test RMSE and the mapped QoS. The local baseline trains for
/// as many epochs as each station spends in federated training.
pub fn run_experiment(cfg: &ExperimentConfig, params: &ModelParams) -> Result<FlRunResult> {
    let seed = cfg.data.seed;
    let data = generate_partitioned_data(&cfg.data)?;
    let epochs = cfg.fedavg.epochs_per_station();
    let local = PerStation::new(
        train_local(&data.stations.a, epochs, &cfg.optimizer, seed)?,
        train_local(&data.stations.b, epochs, &cfg.optimizer, seed)?,
    );
    let fl = train_fedavg(
        PerStation::new(&data.stations.a, &data.stations.b),
        &cfg.fedavg,
        &cfg.optimizer,
        seed,
    )?;
    let rmse_of = |models: &PerStation<LinearModel>| -> Result<PerStation<f64>> {
        Ok(PerStation::new(
            rmse(&models.a, &data.stations.a)?,
            rmse(&models.b, &data.stations.b)?,
        ))
    };
    let (rmse_local, rmse_fl) = (rmse_of(&local)?, rmse_of(&fl)?);
    let qos = |e: PerStation<f64>| -> Result<PerStation<f64>> {
        Ok(PerStation::new(qos_map(e.a, params)?, qos_map(e.b, params)?))
    };
    Ok(FlRunResult {
        beta: cfg.data.beta,
        seed,
        rmse_local,
        rmse_fl,
        qos_local: qos(rmse_local)?,
        qos_fl: qos(rmse_fl)?,
    })
}

/// Component-wise median over runs, per station.
pub fn median_rmse(runs: &[FlRunResult]) -> (PerStation<f64>, PerStation<f64>) {
    let median = |pick: &dyn Fn(&FlRunResult) -> f64| {
        let mut v: Vec<f64> = runs.iter().map(pick).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    (
        PerStation::new(median(&|r| r.rmse_local.a), median(&|r| r.rmse_local.b)),
        PerStation::new(median(&|r| r.rmse_fl.a), median(&|r| r.rmse_fl.b)),
    )
}
