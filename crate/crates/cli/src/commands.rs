use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use evcoop_core::audit::{audit_batch, audit_instance, summarize, AuditRow, Instance};
use evcoop_core::flsim::{self, run_experiment, FlRunResult};
use evcoop_core::participation::find_fl_refusal_witness;
use evcoop_core::{
    build_profit_matrix, effective_qos, pricing_equilibrium, profit, pure_nash, Error as CoreError, ModelParams,
    ParticipationProfile, ProfitMatrix, QosProfile, StationId,
};

use crate::error::CliError;
use crate::output::{num, opt, Report, Table};
use crate::scenario::{FlsimSpec, Scenario};

fn nash_summary(matrix: &ProfitMatrix) -> (Map<String, Value>, String) {
    let ne = pure_nash(matrix);
    let label = |r: Option<ParticipationProfile>| r.map_or("none".to_owned(), |r| r.label());
    let mut m = Map::new();
    m.insert("ne_set".into(), json!(ne.label()));
    m.insert("payoff_dominant".into(), json!(label(ne.payoff_dominant)));
    m.insert("selected".into(), json!(label(ne.selected())));
    m.insert("fl_happens".into(), json!(ne.fl_happens()));
    let line = format!(
        "ne_set={} selected={} fl_happens={}",
        ne.label(),
        label(ne.selected()),
        ne.fl_happens()
    );
    (m, line)
}

/// Pricing outcome and profit for every participation profile, plus the
/// equilibria of the participation game.
pub fn equilibrium(scn: &Scenario) -> Result<Report, CliError> {
    let q = scn.explicit_qos()?;
    let params = &scn.params;
    let matrix = build_profit_matrix(q, params);
    let ne = pure_nash(&matrix);
    let mut table = Table::new(&[
        "profile", "regime", "p_A", "p_B", "share_A", "share_B", "rev_A", "rev_B", "W_A", "W_B", "market", "a_lo",
        "a_hi", "b_lo", "b_hi", "is_nash",
    ]);
    let mut docs = Vec::new();
    for r in ParticipationProfile::ALL {
        let q_eff = effective_qos(r, q);
        let w = profit(r, q, params);
        let (pricing, partition, cells) = match pricing_equilibrium(&q_eff, params) {
            Ok(o) => {
                let [a_lo, a_hi, b_lo, b_hi] = o.partition.endpoints();
                let pricing = json!({
                    "regime": o.regime.as_str(),
                    "p_A": num(o.prices.a), "p_B": num(o.prices.b),
                    "share_A": num(o.shares.a), "share_B": num(o.shares.b),
                    "rev_A": num(o.revenue.a), "rev_B": num(o.revenue.b),
                });
                let partition = json!({
                    "scenario": o.partition.scenario.as_str(),
                    "a_lo": opt(a_lo), "a_hi": opt(a_hi), "b_lo": opt(b_lo), "b_hi": opt(b_hi),
                });
                let cells = vec![
                    json!(o.regime.as_str()),
                    num(o.prices.a),
                    num(o.prices.b),
                    num(o.shares.a),
                    num(o.shares.b),
                    num(o.revenue.a),
                    num(o.revenue.b),
                    num(w.a),
                    num(w.b),
                    json!(o.partition.scenario.as_str()),
                    opt(a_lo),
                    opt(a_hi),
                    opt(b_lo),
                    opt(b_hi),
                ];
                (pricing, partition, cells)
            }
            Err(CoreError::DegenerateMarket { .. }) => {
                let mut cells = vec![json!("DegenerateMarket")];
                cells.extend([Value::Null, Value::Null, num(0.0), num(0.0), num(0.0), num(0.0)]);
                cells.extend([num(w.a), num(w.b), json!("empty")]);
                cells.extend([Value::Null, Value::Null, Value::Null, Value::Null]);
                (
                    json!({"regime": "DegenerateMarket"}),
                    json!({"scenario": "empty"}),
                    cells,
                )
            }
            Err(e) => return Err(e.into()),
        };
        let mut row = vec![json!(r.label())];
        row.extend(cells);
        row.push(json!(ne.contains(r)));
        table.push(row);
        docs.push(json!({
            "profile": r.label(),
            "q_A": num(q_eff.a), "q_B": num(q_eff.b),
            "pricing": pricing,
            "partition": partition,
            "W_A": num(w.a), "W_B": num(w.b),
        }));
    }
    let (mut doc, line) = nash_summary(&matrix);
    doc.insert("profiles".into(), Value::Array(docs));
    Ok(Report {
        table,
        json: Value::Object(doc),
        summary: Some(line),
    })
}

fn matrix_row(r: ParticipationProfile, matrix: &ProfitMatrix) -> Vec<Value> {
    let ne = pure_nash(matrix);
    let strict = ne.equilibria.iter().find(|e| e.profile == r).map(|e| e.strict);
    vec![
        json!(r.label()),
        num(matrix.profit(r, StationId::A)),
        num(matrix.profit(r, StationId::B)),
        json!(strict.is_some()),
        json!(strict.unwrap_or(false)),
    ]
}

/// The 2x2 participation game; with `witness`, a search for an instance
/// where both stations gain QoS from training yet do not both join.
pub fn participation(scn: &Scenario, witness: bool, seed: u64) -> Result<Report, CliError> {
    let params = &scn.params;
    if !witness {
        let matrix = build_profit_matrix(scn.explicit_qos()?, params);
        let mut table = Table::new(&["profile", "W_A", "W_B", "is_nash", "strict"]);
        for r in ParticipationProfile::ALL {
            table.push(matrix_row(r, &matrix));
        }
        let (_, line) = nash_summary(&matrix);
        return Ok(Report::from_table(table, Some(line)));
    }
    let mut table = Table::new(&[
        "found", "directed", "deviator", "q_low_A", "q_low_B", "q_high_A", "q_high_B", "W_A_00", "W_B_00", "W_A_01",
        "W_B_01", "W_A_10", "W_B_10", "W_A_11", "W_B_11",
    ]);
    let found = find_fl_refusal_witness(params, &scn.search, seed);
    let summary = match &found {
        Some(w) => {
            let mut row = vec![json!(true), json!(w.directed), json!(w.deviator.to_string())];
            row.extend([w.qos.low.a, w.qos.low.b, w.qos.high.a, w.qos.high.b].map(num));
            for r in ParticipationProfile::ALL {
                let cell = w.matrix.get(r);
                row.extend([num(cell.a), num(cell.b)]);
            }
            table.push(row);
            format!("witness found; station {} leaves (1,1)", w.deviator)
        }
        None => {
            let mut row = vec![json!(false)];
            row.extend(std::iter::repeat_n(Value::Null, 14));
            table.push(row);
            "no witness within budget".to_owned()
        }
    };
    Ok(Report::from_table(table, Some(summary)))
}

/// Every (beta, seed) run of the scenario, in beta-major order. Run `j`
/// uses seed `root_seed + j` at every beta.
pub fn flsim_runs(spec: &FlsimSpec, params: &ModelParams, root_seed: u64) -> Result<Vec<FlRunResult>, CliError> {
    let points: Vec<(f64, u64)> = spec
        .beta_list
        .iter()
        .flat_map(|&b| (0..spec.seeds).map(move |j| (b, root_seed.wrapping_add(j))))
        .collect();
    points
        .par_iter()
        .map(|&(beta, seed)| {
            let mut cfg = spec.experiment;
            cfg.data.beta = beta;
            cfg.data.seed = seed;
            run_experiment(&cfg, params).map_err(CliError::from)
        })
        .collect()
}

pub fn flsim(scn: &Scenario, seed: u64) -> Result<Report, CliError> {
    let spec = scn.flsim()?;
    let runs = flsim_runs(spec, &scn.params, seed)?;
    let mut table = Table::new(&[
        "beta",
        "seed",
        "station",
        "rmse_local",
        "rmse_fl",
        "qos_local",
        "qos_fl",
    ]);
    for r in &runs {
        for id in StationId::ALL {
            table.push(vec![
                num(r.beta),
                json!(r.seed),
                json!(id.to_string()),
                num(r.rmse_local[id]),
                num(r.rmse_fl[id]),
                num(r.qos_local[id]),
                num(r.qos_fl[id]),
            ]);
        }
    }
    // averages over seeds, per beta and station
    let mut means = Vec::new();
    for (chunk, beta) in runs.chunks(spec.seeds as usize).zip(&spec.beta_list) {
        for id in StationId::ALL {
            let avg = |f: &dyn Fn(&FlRunResult) -> f64| chunk.iter().map(f).sum::<f64>() / chunk.len() as f64;
            means.push(json!({
                "beta": num(*beta),
                "station": id.to_string(),
                "rmse_local": num(avg(&|r| r.rmse_local[id])),
                "rmse_fl": num(avg(&|r| r.rmse_fl[id])),
                "qos_local": num(avg(&|r| r.qos_local[id])),
                "qos_fl": num(avg(&|r| r.qos_fl[id])),
            }));
        }
    }
    let summary = format!(
        "runs={} betas={} seeds={}",
        runs.len(),
        spec.beta_list.len(),
        spec.seeds
    );
    let json = json!({ "rows": table.to_json(), "means": means, "summary": summary });
    Ok(Report {
        table,
        json,
        summary: Some(summary),
    })
}

pub fn sweep_beta(scn: &Scenario, seed: u64) -> Result<Report, CliError> {
    let spec = scn.flsim()?;
    let runs = flsim_runs(spec, &scn.params, seed)?;
    let mut table = Table::new(&[
        "beta",
        "seed",
        "W_A_00",
        "W_B_00",
        "W_A_11",
        "W_B_11",
        "ne_set",
        "fl_happens",
    ]);
    let mut fl_count = 0;
    for r in &runs {
        let q: QosProfile = r.qos_profile()?;
        let matrix = build_profit_matrix(&q, &scn.params);
        let ne = pure_nash(&matrix);
        fl_count += usize::from(ne.fl_happens());
        let (none, both) = (
            ParticipationProfile::new(false, false),
            ParticipationProfile::new(true, true),
        );
        table.push(vec![
            num(r.beta),
            json!(r.seed),
            num(matrix.profit(none, StationId::A)),
            num(matrix.profit(none, StationId::B)),
            num(matrix.profit(both, StationId::A)),
            num(matrix.profit(both, StationId::B)),
            json!(ne.label()),
            json!(ne.fl_happens()),
        ]);
    }
    let summary = format!("rows={} fl_happens={}", runs.len(), fl_count);
    Ok(Report::from_table(table, Some(summary)))
}

fn audit_table(rows: &[AuditRow], scn: &Scenario) -> Table {
    let cfg = &scn.oracle.audit;
    let mut table = Table::new(&[
        "draw",
        "w_l",
        "w_p",
        "o_A",
        "o_B",
        "q_A",
        "q_B",
        "regime",
        "oracle_regime",
        "p_A",
        "p_B",
        "p_A_oracle",
        "p_B_oracle",
        "step_A",
        "step_B",
        "dev_steps",
        "boundary_steps",
        "eligible",
        "converged",
        "pass",
    ]);
    for r in rows {
        let i = &r.instance;
        table.push(vec![
            json!(r.index),
            num(i.params.w_l),
            num(i.params.w_p),
            num(i.params.o.a),
            num(i.params.o.b),
            num(i.q_eff.a),
            num(i.q_eff.b),
            json!(r.closed_regime.as_str()),
            r.oracle_regime.map_or(Value::Null, |g| json!(g.as_str())),
            num(r.closed_prices.a),
            num(r.closed_prices.b),
            num(r.oracle_prices.a),
            num(r.oracle_prices.b),
            num(r.step.a),
            num(r.step.b),
            num(r.max_dev_steps),
            num(r.boundary_steps),
            json!(r.eligible(cfg)),
            json!(r.converged),
            json!(r.passes(cfg)),
        ]);
    }
    table
}

/// Closed-form prices against best-response dynamics. With `fixed`, the
/// scenario's own game at its no-training QoS is audited instead of random
/// draws.
pub fn oracle_check(scn: &Scenario, draws: Option<u64>, seed: u64, fixed: bool) -> Result<Report, CliError> {
    let cfg = &scn.oracle.audit;
    let rows = if fixed {
        let q = scn.explicit_qos()?;
        let params = ModelParams { w_c: 0.0, ..scn.params };
        pricing_equilibrium(&q.low, &params)?;
        vec![audit_instance(0, Instance { q_eff: q.low, params }, cfg)]
    } else {
        let n = draws.unwrap_or(scn.oracle.draws);
        if n == 0 {
            return Err(CliError::config("oracle-check needs at least one draw"));
        }
        audit_batch(n, seed, cfg)
    };
    let s = summarize(&rows, cfg);
    let summary = format!(
        "draws={} eligible={} failures={} max_dev_steps={} regime_agreement={} non_converged={}",
        s.draws, s.eligible, s.failures, s.max_dev_steps, s.regime_agreement, s.non_converged
    );
    Ok(Report::from_table(audit_table(&rows, scn), Some(summary)))
}

/// Loads a sessions CSV, lists the parsed rows and fits a local model.
pub fn ingest(path: &Path, test_fraction: f64, params: &ModelParams, seed: u64) -> Result<Report, CliError> {
    let report = flsim::ingest_sessions_csv(path, test_fraction)?;
    let mut table = Table::new(&["split", "hour", "weekday", "duration_h", "month", "energy_kwh"]);
    for (split, rows) in [("train", &report.dataset.train), ("test", &report.dataset.test)] {
        for (x, y) in rows.iter() {
            let mut row = vec![json!(split)];
            row.extend(x.iter().map(|v| num(*v)));
            row.push(num(y));
            table.push(row);
        }
    }
    let mut summary = format!("kept={} dropped={}", report.kept, report.dropped);
    if !report.dataset.test.is_empty() {
        let fedavg = flsim::FedAvgConfig::default();
        let model = flsim::train_local(
            &report.dataset,
            fedavg.epochs_per_station(),
            &flsim::Optimizer::default(),
            seed,
        )?;
        let eps = flsim::rmse(&model, &report.dataset)?;
        summary += &format!(" rmse_local={eps} qos_local={}", flsim::qos_map(eps, params)?);
    }
    Ok(Report::from_table(table, Some(summary)))
}
