use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::PerStation;

/// Row-major feature matrix with one target per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rows {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Rows {
    pub fn new(dim: usize) -> Self {
        Rows {
            dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f64], target: f64) -> Result<()> {
        if features.len() != self.dim {
            return Err(invalid(
                "features",
                format!("expected {} values, got {}", self.dim, features.len()),
            ));
        }
        self.x.extend_from_slice(features);
        self.y.push(target);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x.chunks_exact(self.dim.max(1)).zip(self.y.iter().copied())
    }
}

/// One station's private data, split into disjoint train and test rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Rows,
    pub test: Rows,
}

impl Dataset {
    /// Puts the first `(1 - test_fraction)` share of `rows` (rounded) into
    /// train and the rest into test, keeping their order.
    pub fn split(rows: Rows, test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(invalid("test_fraction", "must lie in [0, 1)"));
        }
        let n_train = ((1.0 - test_fraction) * rows.len() as f64).round() as usize;
        let dim = rows.dim;
        let mut train = Rows::new(dim);
        let mut test = Rows::new(dim);
        for (i, (x, y)) in rows.iter().enumerate() {
            let part = if i < n_train { &mut train } else { &mut test };
            part.x.extend_from_slice(x);
            part.y.push(y);
        }
        Ok(Dataset { train, test })
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityConfig {
    /// Dirichlet concentration of each station's cluster mixture.
    pub beta: f64,
    pub clusters: usize,
    pub n_per_station: usize,
    /// Raw covariates per row; see [`generate_partitioned_data`] for how
    /// they become model features.
    pub covariates: usize,
    pub noise_sd: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for HeterogeneityConfig {
    fn default() -> Self {
        HeterogeneityConfig {
            beta: 1.0,
            clusters: 10,
            n_per_station: 3000,
            covariates: 8,
            noise_sd: 0.5,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl HeterogeneityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(
                "beta",
                format!("must be positive and finite, got {}", self.beta),
            ));
        }
        if self.clusters < 2 {
            return Err(invalid("clusters", "need at least 2"));
        }
        if self.n_per_station < self.clusters {
            return Err(invalid("n_per_station", "must be at least the number of clusters"));
        }
        if self.covariates == 0 {
            return Err(invalid("covariates", "need at least 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(invalid("noise_sd", "must be non-negative and finite"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(invalid("test_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Length of the feature vectors the generator emits.
    pub fn feature_dim(&self) -> usize {
        self.clusters * (self.covariates + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedData {
    pub stations: PerStation<Dataset>,
    /// Mixture weights each station's rows were drawn with.
    pub mixtures: PerStation<Vec<f64>>,
    /// Fraction of each station's rows that came from each cluster.
    pub empirical_mixtures: PerStation<Vec<f64>>,
}

/// Symmetric Dirichlet sample. Gammas are drawn in log space so that tiny
/// concentrations do not underflow to an all-zero vector.
pub fn dirichlet_symmetric<R: Rng + ?Sized>(rng: &mut R, alpha: f64, k: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("beta", format!("must be positive and finite, got {alpha}")));
    }
    // G(a) = G(a + 1) * U^(1/a)
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| invalid("beta", e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Draws both stations' datasets.
///
/// Each cluster has its own weights and intercept, all standard normal. A
/// row from cluster `k` carries its standard-normal covariates in block `k`
/// of the feature vector, followed by a 1 marking the cluster; every other
/// block is zero. Targets are the cluster's linear response plus Gaussian
/// noise, so a single linear model over these features can represent every
/// cluster at once, and a station learns little about clusters it rarely
/// sees.
pub fn generate_partitioned_data(cfg: &HeterogeneityConfig) -> Result<PartitionedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, c) = (cfg.clusters, cfg.covariates);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let weights: Vec<Vec<f64>> = (0..k).map(|_| (0..c).map(|_| normal(&mut rng)).collect()).collect();
    let intercepts: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();

    let mut station = || -> Result<(Dataset, Vec<f64>, Vec<f64>)> {
        let mixture = dirichlet_symmetric(&mut rng, cfg.beta, k)?;
        let pick = WeightedIndex::new(&mixture).map_err(|e| invalid("beta", e.to_string()))?;
        let mut rows = Rows::new(cfg.feature_dim());
        let mut counts = vec![0usize; k];
        let mut features = vec![0.0; cfg.feature_dim()];
        for _ in 0..cfg.n_per_station {
            let cluster = pick.sample(&mut rng);
            counts[cluster] += 1;
            features.iter_mut().for_each(|f| *f = 0.0);
            let block = &mut features[cluster * (c + 1)..(cluster + 1) * (c + 1)];
            let mut target = intercepts[cluster];
            for (j, w) in weights[cluster].iter().enumerate() {
                block[j] = normal(&mut rng);
                target += w * block[j];
            }
            block[c] = 1.0;
            target += cfg.noise_sd * normal(&mut rng);
            rows.push(&features, target)?;
        }
        let empirical = counts.iter().map(|&n| n as f64 / cfg.n_per_station as f64).collect();
        Ok((Dataset::split(rows, cfg.test_fraction)?, mixture, empirical))
    };
    let (data_a, mix_a, emp_a) = station()?;
    let (data_b, mix_b, emp_b) = station()?;
    Ok(PartitionedData {
        stations: PerStation::new(data_a, data_b),
        mixtures: PerStation::new(mix_a, mix_b),
        empirical_mixtures: PerStation::new(emp_a, emp_b),
    })
}

pub(crate) fn require_rows(rows: &Rows) -> Result<()> {
    if rows.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}
