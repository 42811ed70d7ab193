//! Scenario files: one `section.key = value` pair per line, `#` comments.
//!
//! ```text
//! game.w_l = 10
//! game.o_A = 1
//! qos.low_A = 34.1
//! flsim.beta_list = 0.01, 1, 100
//! ```
//!
//! `game.*` keys are required. Exactly one QoS source must be present:
//! either all four `qos.*` keys or at least one `flsim.*` key. Everything
//! else falls back to the defaults below.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use evcoop_core::audit::AuditConfig;
use evcoop_core::flsim::{ExperimentConfig, FedAvgConfig, HeterogeneityConfig, Optimizer};
use evcoop_core::participation::{QosGain, WitnessSearch};
use evcoop_core::{ModelParams, PerStation, QosProfile};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct FlsimSpec {
    pub beta_list: Vec<f64>,
    pub seeds: u64,
    /// `data.beta` and `data.seed` are overwritten per run.
    pub experiment: ExperimentConfig,
}

impl Default for FlsimSpec {
    fn default() -> Self {
        FlsimSpec {
            beta_list: vec![0.01, 0.1, 1.0, 10.0, 50.0, 75.0, 100.0],
            seeds: 10,
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QosSource {
    Explicit(QosProfile),
    Flsim(FlsimSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    pub draws: u64,
    pub audit: AuditConfig,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            draws: 500,
            audit: AuditConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    pub qos: QosSource,
    pub oracle: OracleSpec,
    pub search: WitnessSearch,
}

pub fn default_search() -> WitnessSearch {
    WitnessSearch {
        q_low: (0.0, 6.0),
        gain: QosGain::Independent { max: 1.0 },
        regime: None,
        budget: 10_000,
        directed: true,
    }
}

/// Experiment defaults with the QoS measured at the most heterogeneous
/// setting of the reference study (A: RMSE 6.59 -> 6.40, B: 6.04 -> 5.89).
pub const DEFAULT_SCENARIO: &str = "\
# reference parameters
game.w_l = 10
game.w_p = 1
game.o_A = 1
game.o_B = 1
game.w_c = 0.1
game.q_max = 100
game.theta = 10

# QoS from RMSE via q = q_max - theta * rmse
qos.low_A = 34.1
qos.low_B = 39.6
qos.high_A = 36
qos.high_B = 41.1
";

impl Default for Scenario {
    fn default() -> Self {
        Scenario::parse(DEFAULT_SCENARIO).expect("built-in scenario parses")
    }
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(format!("line {line}: `{key}`: cannot parse `{raw}`"))),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        self.take(key)?
            .ok_or_else(|| CliError::config(format!("missing required field `{key}`")))
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn has_section(&self, prefix: &str) -> bool {
        self.values.keys().any(|k| k.starts_with(prefix))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some((line, raw)) = self.values.remove(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::config(format!("line {line}: `{key}`: cannot parse `{}`", s.trim())))
            })
            .collect::<Result<Vec<f64>, _>>()
            .map(Some)
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {line}: expected `key = value`")))?;
            let key = key.trim().to_owned();
            if values.insert(key.clone(), (line, value.trim().to_owned())).is_some() {
                return Err(CliError::config(format!("line {line}: duplicate key `{key}`")));
            }
        }
        let mut e = Entries { values };

        let params = ModelParams {
            w_l: e.required("game.w_l")?,
            w_p: e.required("game.w_p")?,
            o: PerStation::new(e.required("game.o_A")?, e.required("game.o_B")?),
            w_c: e.required("game.w_c")?,
            q_max: e.required("game.q_max")?,
            theta: e.required("game.theta")?,
            tol: e.or("game.tol", evcoop_core::model::BOUNDARY_TOL)?,
        };
        params.validate().map_err(|err| CliError::config(err.to_string()))?;

        let explicit = e.has_section("qos.");
        let flsim = e.has_section("flsim.");
        let qos = match (explicit, flsim) {
            (true, true) => {
                return Err(CliError::config(
                    "scenario sets both `qos.*` and `flsim.*`; choose one QoS source",
                ))
            }
            (false, false) => {
                return Err(CliError::config(
                    "missing QoS source: set the `qos.*` keys or `flsim.*` keys",
                ))
            }
            (true, false) => {
                let low = PerStation::new(e.required("qos.low_A")?, e.required("qos.low_B")?);
                let high = PerStation::new(e.required("qos.high_A")?, e.required("qos.high_B")?);
                QosSource::Explicit(QosProfile::new(low, high).map_err(|err| CliError::config(err.to_string()))?)
            }
            (false, true) => QosSource::Flsim(parse_flsim(&mut e)?),
        };

        let d = OracleSpec::default();
        let oracle = OracleSpec {
            draws: e.or("oracle.draws", d.draws)?,
            audit: AuditConfig {
                price_steps: e.or("oracle.price_steps", d.audit.price_steps)?,
                max_iters: e.or("oracle.max_iters", d.audit.max_iters)?,
                boundary_steps: e.or("oracle.boundary_steps", d.audit.boundary_steps)?,
                tolerance_steps: e.or("oracle.tolerance_steps", d.audit.tolerance_steps)?,
                ..d.audit
            },
        };
        if oracle.audit.price_steps < 2 {
            return Err(CliError::config("`oracle.price_steps` must be at least 2"));
        }

        let s = default_search();
        let gain_max = e.or("search.gain_max", 1.0)?;
        let gain = match e.or("search.gain", "independent".to_owned())?.as_str() {
            "independent" => QosGain::Independent { max: gain_max },
            "uniform" => QosGain::Uniform { max: gain_max },
            other => {
                return Err(CliError::config(format!(
                    "`search.gain`: expected independent or uniform, got `{other}`"
                )))
            }
        };
        let search = WitnessSearch {
            q_low: (
                e.or("search.q_low_min", s.q_low.0)?,
                e.or("search.q_low_max", s.q_low.1)?,
            ),
            gain,
            regime: None,
            budget: e.or("search.budget", s.budget)?,
            directed: e.or("search.directed", s.directed)?,
        };

        if let Some((key, (line, _))) = e.values.iter().next() {
            return Err(CliError::config(format!("line {line}: unknown key `{key}`")));
        }
        Ok(Scenario {
            params,
            qos,
            oracle,
            search,
        })
    }

    /// Every field, defaults included, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let p = &self.params;
        put("game.w_l", p.w_l.to_string());
        put("game.w_p", p.w_p.to_string());
        put("game.o_A", p.o.a.to_string());
        put("game.o_B", p.o.b.to_string());
        put("game.w_c", p.w_c.to_string());
        put("game.q_max", p.q_max.to_string());
        put("game.theta", p.theta.to_string());
        put("game.tol", p.tol.to_string());
        match &self.qos {
            QosSource::Explicit(q) => {
                put("qos.low_A", q.low.a.to_string());
                put("qos.low_B", q.low.b.to_string());
                put("qos.high_A", q.high.a.to_string());
                put("qos.high_B", q.high.b.to_string());
            }
            QosSource::Flsim(f) => {
                let x = &f.experiment;
                let betas: Vec<String> = f.beta_list.iter().map(f64::to_string).collect();
                put("flsim.beta_list", betas.join(", "));
                put("flsim.seeds", f.seeds.to_string());
                put("flsim.clusters", x.data.clusters.to_string());
                put("flsim.n_per_station", x.data.n_per_station.to_string());
                put("flsim.covariates", x.data.covariates.to_string());
                put("flsim.noise_sd", x.data.noise_sd.to_string());
                put("flsim.test_fraction", x.data.test_fraction.to_string());
                put("flsim.rounds", x.fedavg.rounds.to_string());
                put("flsim.local_epochs", x.fedavg.local_epochs.to_string());
                put("flsim.personalize_epochs", x.fedavg.personalize_epochs.to_string());
                put("flsim.lr", x.optimizer.lr.to_string());
                if let Some(b) = x.optimizer.batch_size {
                    put("flsim.batch_size", b.to_string());
                }
            }
        }
        let a = &self.oracle.audit;
        put("oracle.draws", self.oracle.draws.to_string());
        put("oracle.price_steps", a.price_steps.to_string());
        put("oracle.max_iters", a.max_iters.to_string());
        put("oracle.boundary_steps", a.boundary_steps.to_string());
        put("oracle.tolerance_steps", a.tolerance_steps.to_string());
        let s = &self.search;
        let (gain, max) = match s.gain {
            QosGain::Independent { max } => ("independent", max),
            QosGain::Uniform { max } => ("uniform", max),
        };
        put("search.gain", gain.to_owned());
        put("search.gain_max", max.to_string());
        put("search.q_low_min", s.q_low.0.to_string());
        put("search.q_low_max", s.q_low.1.to_string());
        put("search.budget", s.budget.to_string());
        put("search.directed", s.directed.to_string());
        out
    }

    pub fn explicit_qos(&self) -> Result<&QosProfile, CliError> {
        match &self.qos {
            QosSource::Explicit(q) => Ok(q),
            QosSource::Flsim(_) => Err(CliError::config("this command needs explicit `qos.*` values")),
        }
    }

    pub fn flsim(&self) -> Result<&FlsimSpec, CliError> {
        match &self.qos {
            QosSource::Flsim(f) => Ok(f),
            QosSource::Explicit(_) => Err(CliError::config("this command needs an `flsim.*` QoS source")),
        }
    }
}

fn parse_flsim(e: &mut Entries) -> Result<FlsimSpec, CliError> {
    let d = FlsimSpec::default();
    let (dd, df, dopt) = (d.experiment.data, d.experiment.fedavg, d.experiment.optimizer);
    let beta_list = e.list("flsim.beta_list")?.unwrap_or(d.beta_list);
    if beta_list.is_empty() || beta_list.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(CliError::config("`flsim.beta_list` needs positive finite values"));
    }
    let seeds = e.or("flsim.seeds", d.seeds)?;
    if seeds == 0 {
        return Err(CliError::config("`flsim.seeds` must be at least 1"));
    }
    let data = HeterogeneityConfig {
        clusters: e.or("flsim.clusters", dd.clusters)?,
        n_per_station: e.or("flsim.n_per_station", dd.n_per_station)?,
        covariates: e.or("flsim.covariates", dd.covariates)?,
        noise_sd: e.or("flsim.noise_sd", dd.noise_sd)?,
        test_fraction: e.or("flsim.test_fraction", dd.test_fraction)?,
        ..dd
    };
    data.validate().map_err(|err| CliError::config(err.to_string()))?;
    let fedavg = FedAvgConfig {
        rounds: e.or("flsim.rounds", df.rounds)?,
        local_epochs: e.or("flsim.local_epochs", df.local_epochs)?,
        personalize_epochs: e.or("flsim.personalize_epochs", df.personalize_epochs)?,
    };
    let optimizer = Optimizer {
        lr: e.or("flsim.lr", dopt.lr)?,
        batch_size: e.take("flsim.batch_size")?,
    };
    optimizer.validate().map_err(|err| CliError::config(err.to_string()))?;
    Ok(FlsimSpec {
        beta_list,
        seeds,
        experiment: ExperimentConfig {
            data,
            fedavg,
            optimizer,
        },
    })
}
