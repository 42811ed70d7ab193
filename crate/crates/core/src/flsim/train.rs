use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{require_rows, Dataset, Rows};
use crate::error::{invalid, Result};
use crate::model::{ModelParams, PerStation, StationId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// Size-weighted parameter average.
    pub fn weighted_mean(models: &[(&LinearModel, f64)]) -> LinearModel {
        let total: f64 = models.iter().map(|(_, n)| n).sum();
        let dim = models[0].0.weights.len();
        let mut out = LinearModel::zeros(dim);
        for (m, n) in models {
            let share = n / total;
            out.bias += share * m.bias;
            for (o, w) in out.weights.iter_mut().zip(&m.weights) {
                *o += share * w;
            }
        }
        out
    }
}

/// Per-feature centering and scaling. Columns with no spread keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Statistics of all rows in `parts` taken together.
    pub fn fit(parts: &[&Rows]) -> Result<Self> {
        let dim = parts[0].dim();
        let n: usize = parts.iter().map(|r| r.len()).sum();
        if n == 0 {
            return Err(crate::Error::EmptyDataset);
        }
        let mut mean = vec![0.0; dim];
        for (x, _) in parts.iter().flat_map(|r| r.iter()) {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for (x, _) in parts.iter().flat_map(|r| r.iter()) {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    fn transform(&self, rows: &Rows) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * rows.dim());
        for (x, _) in rows.iter() {
            out.extend(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
        }
        out
    }

    /// Model over raw features equivalent to `m` over standardized ones.
    pub fn to_raw(&self, m: &LinearModel) -> LinearModel {
        let weights: Vec<f64> = m.weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let shift: f64 = weights.iter().zip(&self.mean).map(|(w, mu)| w * mu).sum();
        LinearModel {
            weights,
            bias: m.bias - shift,
        }
    }

    pub fn to_standardized(&self, m: &LinearModel) -> LinearModel {
        let shift: f64 = m.weights.iter().zip(&self.mean).map(|(w, mu)| w * mu).sum();
        LinearModel {
            weights: m.weights.iter().zip(&self.scale).map(|(w, s)| w * s).collect(),
            bias: m.bias + shift,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub lr: f64,
    /// `None` means full-batch gradient descent.
    pub batch_size: Option<usize>,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer {
            lr: 0.01,
            batch_size: None,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive and finite"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub personalize_epochs: usize,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        FedAvgConfig {
            rounds: 50,
            local_epochs: 5,
            personalize_epochs: 5,
        }
    }
}

impl FedAvgConfig {
    /// Epochs each station spends on its own data during federated training;
    /// local-only baselines get the same budget.
    pub fn epochs_per_station(&self) -> usize {
        self.rounds * self.local_epochs + self.personalize_epochs
    }
}

/// Standardized training rows of one station plus its shuffling stream.
struct Trainer {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Trainer {
    fn new(rows: &Rows, std: &Standardizer, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Trainer {
            x: std.transform(rows),
            y: rows.targets().to_vec(),
            dim: rows.dim(),
            order: (0..rows.len()).collect(),
            rng,
        }
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    /// Squared-loss gradient steps over `epochs` passes.
    fn run(&mut self, model: &mut LinearModel, epochs: usize, opt: &Optimizer) {
        let n = self.len();
        let batch = opt.batch_size.unwrap_or(n).min(n);
        let mut grad = vec![0.0; self.dim];
        for _ in 0..epochs {
            if batch < n {
                self.order.shuffle(&mut self.rng);
            }
            for chunk in self.order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut grad_b = 0.0;
                for &i in chunk {
                    let x = &self.x[i * self.dim..(i + 1) * self.dim];
                    let err = model.predict(x) - self.y[i];
                    grad_b += err;
                    grad.iter_mut().zip(x).for_each(|(g, v)| *g += err * v);
                }
                let step = 2.0 * opt.lr / chunk.len() as f64;
                model.bias -= step * grad_b;
                model.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w -= step * g);
            }
        }
    }
}

/// Trains on the station's own train split, starting from zeros.
pub fn train_local(data: &Dataset, epochs: usize, opt: &Optimizer, seed: u64) -> Result<LinearModel> {
    require_rows(&data.train)?;
    opt.validate()?;
    let std = Standardizer::fit(&[&data.train])?;
    let mut trainer = Trainer::new(&data.train, &std, seed, 0);
    let mut model = LinearModel::zeros(data.dim());
    trainer.run(&mut model, epochs, opt);
    Ok(std.to_raw(&model))
}

/// Parameters seen by the server in one round, in the shared standardized
/// coordinates it averages in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub uploaded: PerStation<LinearModel>,
    pub global: LinearModel,
    pub train_sizes: PerStation<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedAvgTrace {
    pub rounds: Vec<RoundRecord>,
    pub standardizer: Standardizer,
    pub models: PerStation<LinearModel>,
}

/// Federated averaging followed by local fine-tuning; returns each
/// station's personalized model.
pub fn train_fedavg(
    data: PerStation<&Dataset>,
    cfg: &FedAvgConfig,
    opt: &Optimizer,
    seed: u64,
) -> Result<PerStation<LinearModel>> {
    Ok(train_fedavg_traced(data, cfg, opt, seed)?.models)
}

/// [`train_fedavg`] that also records every aggregation round.
pub fn train_fedavg_traced(
    data: PerStation<&Dataset>,
    cfg: &FedAvgConfig,
    opt: &Optimizer,
    seed: u64,
) -> Result<FedAvgTrace> {
    require_rows(&data.a.train)?;
    require_rows(&data.b.train)?;
    opt.validate()?;
    if data.a.dim() != data.b.dim() {
        return Err(invalid("data", "stations disagree on the feature dimension"));
    }
    // pooled statistics; a deployment would aggregate per-station sums
    let std = Standardizer::fit(&[&data.a.train, &data.b.train])?;
    let mut trainers = data.map_with_id(|id, d| Trainer::new(&d.train, &std, seed, stream(id)));
    let sizes = data.map(|d| d.train.len());
    let mut global = LinearModel::zeros(data.a.dim());
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let uploaded = PerStation::new(
            local_update(&mut trainers.a, &global, cfg.local_epochs, opt),
            local_update(&mut trainers.b, &global, cfg.local_epochs, opt),
        );
        global = LinearModel::weighted_mean(&[(&uploaded.a, sizes.a as f64), (&uploaded.b, sizes.b as f64)]);
        rounds.push(RoundRecord {
            uploaded,
            global: global.clone(),
            train_sizes: sizes,
        });
    }
    let models = PerStation::new(
        local_update(&mut trainers.a, &global, cfg.personalize_epochs, opt),
        local_update(&mut trainers.b, &global, cfg.personalize_epochs, opt),
    )
    .map(|m| std.to_raw(&m));
    Ok(FedAvgTrace {
        rounds,
        standardizer: std,
        models,
    })
}

fn stream(id: StationId) -> u64 {
    match id {
        StationId::A => 1,
        StationId::B => 2,
    }
}

fn local_update(trainer: &mut Trainer, start: &LinearModel, epochs: usize, opt: &Optimizer) -> LinearModel {
    let mut m = start.clone();
    trainer.run(&mut m, epochs, opt);
    m
}

pub fn rmse_rows(model: &LinearModel, rows: &Rows) -> Result<f64> {
    require_rows(rows)?;
    if model.weights.len() != rows.dim() {
        return Err(invalid("model", "weight count does not match the feature dimension"));
    }
    let sq: f64 = rows.iter().map(|(x, y)| (model.predict(x) - y).powi(2)).sum();
    Ok((sq / rows.len() as f64).sqrt())
}

/// Test-split RMSE.
pub fn rmse(model: &LinearModel, data: &Dataset) -> Result<f64> {
    rmse_rows(model, &data.test)
}

/// QoS implied by a prediction error, floored at zero.
pub fn qos_map(eps: f64, params: &ModelParams) -> Result<f64> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid("eps", format!("must be non-negative and finite, got {eps}")));
    }
    Ok((params.q_max - params.theta * eps).max(0.0))
}
