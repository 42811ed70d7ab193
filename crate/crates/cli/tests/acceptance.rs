//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use clap::Parser;
use evcoop_cli::{execute, Cli, Format};
use evcoop_core::audit::{audit_batch, summarize, AuditConfig};
use evcoop_core::flsim::{qos_map, run_experiment, ExperimentConfig, HeterogeneityConfig};
use evcoop_core::oracle::{best_response_dynamics, locate_shares, simulate_shares, GridSpec};
use evcoop_core::participation::{find_fl_refusal_witness, QosGain, WitnessSearch};
use evcoop_core::{
    build_profit_matrix, effective_qos, fl_cost, market_partition, pricing_equilibrium, pure_nash, ModelParams,
    ParticipationProfile, PerStation, PricingRegime, QosProfile, QosVector, StationId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = AuditConfig::default();
    let rows = audit_batch(500, 0, &cfg);
    let s = summarize(&rows, &cfg);
    let elapsed = start.elapsed();
    let pass = s.failures == 0
        && s.regimes_covered.len() == PricingRegime::ALL.len()
        && s.regime_agreement == 1.0
        && within(elapsed, 60);
    outcome(
        pass,
        format!(
            "draws={} eligible={} failures={} max_dev_steps={:.3} regimes={} agreement={:.3} elapsed={:.1}s",
            s.draws,
            s.eligible,
            s.failures,
            s.max_dev_steps,
            s.regimes_covered.len(),
            s.regime_agreement,
            elapsed.as_secs_f64()
        ),
    )
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        w_l: rng.random_range(0.5..=15.0),
        w_p: rng.random_range(0.5..=3.0),
        o: PerStation::new(rng.random_range(0.0..=2.0), rng.random_range(0.0..=2.0)),
        w_c: 0.0,
        ..ModelParams::default()
    }
}

fn shares_vs_simulation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let params = random_params(&mut rng);
        let q: QosVector = PerStation::new(rng.random_range(0.0..=6.0), rng.random_range(0.0..=6.0));
        let span = (params.w_l * q.a.max(q.b) + 2.0) / params.w_p;
        let p = params.o.map(|o| o + rng.random_range(0.0..=span));
        let closed = market_partition(&p, &q, &params).shares();
        let sim = simulate_shares(&p, &q, &params, 100_000);
        for id in StationId::ALL {
            worst = worst.max((closed[id] - sim[id]).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 2e-5 && within(elapsed, 10),
        format!(
            "scenarios=200 max_share_err={worst:.2e} elapsed={:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// QoS that gives the requested quality-cost margins under `params`.
fn qos_for(margins: PerStation<f64>, params: &ModelParams) -> QosVector {
    margins.zip(params.o).map(|(d, o)| (d + params.w_p * o) / params.w_l)
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn internal_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut competitive, mut monopolies, mut kink) = (0.0f64, 0.0f64, 0.0f64);
    let mut counts = [0usize; 3];
    let mut wrong_regime = 0;
    for _ in 0..300 {
        let params = random_params(&mut rng);
        let w_p = params.w_p;

        let da: f64 = rng.random_range(1.5..=12.0);
        let db = (da + rng.random_range(-2.9f64..=2.9)).max(3.1 - da);
        let q = qos_for(PerStation::new(da, db), &params);
        let out = pricing_equilibrium(&q, &params).unwrap();
        if out.regime == PricingRegime::Competitive {
            let m = out.margins;
            for id in StationId::ALL {
                let want = (1.0 + (m[id] - m[id.other()]) / 3.0).powi(2) / (2.0 * w_p);
                competitive = competitive.max(rel_err(out.revenue[id], want));
            }
            counts[0] += 1;
        } else {
            wrong_regime += 1;
        }

        let da: f64 = rng.random_range(0.05..=1.9);
        let db = rng.random_range(0.05..=(1.95 - da).max(0.06));
        let q = qos_for(PerStation::new(da, db), &params);
        let out = pricing_equilibrium(&q, &params).unwrap();
        if out.regime == PricingRegime::LocalMonopolies {
            let m = out.margins;
            for id in StationId::ALL {
                monopolies = monopolies.max(rel_err(out.revenue[id], m[id] * m[id] / (4.0 * w_p)));
            }
            counts[1] += 1;
        } else {
            wrong_regime += 1;
        }

        // dyadic margins make the sum exactly two
        let da = (rng.random_range(1..64) as f64) / 32.0;
        let params = ModelParams {
            w_l: 2.0,
            w_p: 1.0,
            o: PerStation::new(0.25, 0.5),
            ..params
        };
        let q = qos_for(PerStation::new(da, 2.0 - da), &params);
        let out = pricing_equilibrium(&q, &params).unwrap();
        if out.regime == PricingRegime::SharedBoundary && out.margins.a + out.margins.b == 2.0 {
            for id in StationId::ALL {
                let local = params.o[id] + out.margins[id] / (2.0 * params.w_p);
                kink = kink.max((out.prices[id] - local).abs());
            }
            counts[2] += 1;
        } else {
            wrong_regime += 1;
        }
    }
    outcome(
        wrong_regime == 0 && competitive <= 1e-9 && monopolies <= 1e-9 && kink <= 1e-12,
        format!(
            "competitive n={} rel_err={competitive:.1e}; local_monopolies n={} rel_err={monopolies:.1e}; \
             sum_two n={} price_gap={kink:.1e}; misclassified={wrong_regime}",
            counts[0], counts[1], counts[2]
        ),
    )
}

/// Profit cell recomputed from alternating best responses on the price grid
/// and bisected market shares, with the coarser grid step.
fn oracle_cell(r: ParticipationProfile, qos: &QosProfile, params: &ModelParams) -> (PerStation<f64>, f64) {
    let q = effective_qos(r, qos);
    let priced_out = StationId::ALL
        .iter()
        .all(|&id| params.w_l * q[id] <= params.w_p * params.o[id]);
    let grid = GridSpec::default_for(&q, params);
    let step = grid.step(StationId::A).max(grid.step(StationId::B));
    let revenue = if priced_out {
        PerStation::splat(0.0)
    } else {
        let p = best_response_dynamics(&params.o, &q, params, &grid, 500).terminal();
        let s = locate_shares(&p, &q, params);
        PerStation::new((p.a - params.o.a) * s.a, (p.b - params.o.b) * s.b)
    };
    (revenue.zip(fl_cost(r, params)).map(|(rev, c)| rev - c), step)
}

fn fl_refusal_witness() -> Outcome {
    let start = Instant::now();
    let params = ModelParams {
        w_c: 0.0,
        ..ModelParams::default()
    };
    let search = WitnessSearch {
        q_low: (0.0, 6.0),
        gain: QosGain::Independent { max: 1.0 },
        regime: None,
        budget: 10_000,
        directed: true,
    };
    let Some(w) = find_fl_refusal_witness(&params, &search, 0) else {
        return outcome(
            false,
            format!("no witness elapsed={:.1}s", start.elapsed().as_secs_f64()),
        );
    };
    let weakly_better = w.qos.high.a >= w.qos.low.a && w.qos.high.b >= w.qos.low.b;

    let both = ParticipationProfile::new(true, true);
    let dev = w.deviator;
    // a price off by k grid steps moves revenue by at most k steps (shares <= 1)
    let mut worst_cell = 0.0f64;
    let mut worst_steps = 0.0f64;
    let mut cells = Vec::new();
    for r in ParticipationProfile::ALL {
        let (cell, step) = oracle_cell(r, &w.qos, &params);
        for id in StationId::ALL {
            let gap = (cell[id] - w.matrix.profit(r, id)).abs();
            worst_cell = worst_cell.max(gap);
            worst_steps = worst_steps.max(gap / step);
        }
        cells.push((r, cell));
    }
    let oracle = |r: ParticipationProfile| cells.iter().find(|(p, _)| *p == r).unwrap().1;
    let leave = both.deviate(dev);
    let gain = oracle(leave)[dev] - oracle(both)[dev];
    let not_nash = !pure_nash(&w.matrix).contains(both);
    let elapsed = start.elapsed();
    outcome(
        weakly_better && not_nash && gain > worst_cell && worst_steps <= 2.0 && within(elapsed, 30),
        format!(
            "deviator={dev:?} directed={} oracle_gain={gain:.4} max_cell_gap={worst_cell:.1e} ({worst_steps:.2} steps) elapsed={:.1}s",
            w.directed,
            elapsed.as_secs_f64()
        ),
    )
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(rel)
}

fn render(args: &[&str], format: Format) -> String {
    let cli = Cli::try_parse_from(std::iter::once("evcoop").chain(args.iter().copied())).unwrap();
    String::from_utf8(execute(&cli).unwrap().render(format).unwrap()).unwrap()
}

fn reference_pipeline() -> Outcome {
    let params = ModelParams::default();
    let q = |e: f64| qos_map(e, &params).unwrap();
    let qos = QosProfile::new(PerStation::new(q(6.59), q(6.04)), PerStation::new(q(6.40), q(5.89))).unwrap();
    let matrix = build_profit_matrix(&qos, &params);
    let both = ParticipationProfile::new(true, true);
    let leavers: Vec<StationId> = StationId::ALL
        .into_iter()
        .filter(|&id| matrix.gains_by_deviating(both, id))
        .collect();
    let eq = pure_nash(&matrix);
    let golden = [
        (vec!["equilibrium"], Format::Csv, "golden/equilibrium_reference.csv"),
        (vec!["equilibrium"], Format::Json, "golden/equilibrium_reference.json"),
        (vec!["participation"], Format::Csv, "golden/participation_reference.csv"),
    ];
    let golden_ok = golden
        .iter()
        .all(|(args, f, path)| render(args, *f) == std::fs::read_to_string(fixture(path)).unwrap());
    outcome(
        !leavers.is_empty() && !eq.contains(both) && golden_ok,
        format!(
            "qos_low=({:.1},{:.1}) qos_high=({:.1},{:.1}) ne={} leavers={leavers:?} golden_match={golden_ok}",
            qos.low.a,
            qos.low.b,
            qos.high.a,
            qos.high.b,
            eq.label()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

fn fl_benefit() -> Outcome {
    let start = Instant::now();
    let params = ModelParams::default();
    let runs: Vec<_> = (0..10)
        .map(|seed| {
            let cfg = ExperimentConfig {
                data: HeterogeneityConfig {
                    beta: 1.0,
                    seed,
                    ..HeterogeneityConfig::default()
                },
                ..ExperimentConfig::default()
            };
            run_experiment(&cfg, &params).unwrap()
        })
        .collect();
    let med = |f: &dyn Fn(&evcoop_core::flsim::FlRunResult) -> f64| median(runs.iter().map(f).collect());
    let local = PerStation::new(med(&|r| r.rmse_local.a), med(&|r| r.rmse_local.b));
    let fl = PerStation::new(med(&|r| r.rmse_fl.a), med(&|r| r.rmse_fl.b));
    let elapsed = start.elapsed();
    outcome(
        fl.a <= local.a && fl.b <= local.b && within(elapsed, 120),
        format!(
            "seeds=10 median_rmse A local={:.4} fl={:.4}; B local={:.4} fl={:.4} elapsed={:.1}s",
            local.a,
            fl.a,
            local.b,
            fl.b,
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sweep = fixture("fixtures/small_sweep.scn");
    let sessions = fixture("fixtures/sessions.csv");
    let (sweep, sessions) = (sweep.to_str().unwrap(), sessions.to_str().unwrap());
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("equilibrium", vec!["equilibrium"]),
        ("participation", vec!["participation", "--witness"]),
        ("sweep-beta", vec!["--scenario", sweep, "sweep-beta"]),
        ("oracle-check", vec!["oracle-check", "--draws", "40"]),
        ("flsim", vec!["--scenario", sweep, "flsim"]),
        ("ingest", vec!["ingest", sessions]),
        ("scenario", vec!["scenario"]),
    ];
    let mut mismatched = Vec::new();
    let mut checked = 0;
    for (name, args) in &commands {
        for format in ["csv", "json"] {
            let mut bytes = Vec::new();
            for run in 0..2 {
                let out = dir.path().join(format!("{name}-{format}-{run}"));
                let status = Command::new(env!("CARGO_BIN_EXE_evcoop"))
                    .args(["--seed", "7", "--format", format, "--out", out.to_str().unwrap()])
                    .args(args)
                    .output()
                    .unwrap();
                assert!(
                    status.status.success(),
                    "{name}: {}",
                    String::from_utf8_lossy(&status.stderr)
                );
                bytes.push(std::fs::read(&out).unwrap());
            }
            if bytes[0] != bytes[1] || bytes[0].is_empty() {
                mismatched.push(format!("{name}/{format}"));
            }
            checked += 1;
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("outputs={checked} mismatched={mismatched:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 7] = [
        ("oracle equivalence of equilibrium prices", oracle_equivalence),
        ("closed-form shares vs per-EV simulation", shares_vs_simulation),
        ("internal revenue and price identities", internal_identities),
        ("zero-cost FL refusal witness", fl_refusal_witness),
        ("reference RMSE pipeline", reference_pipeline),
        ("FL benefit at beta = 1", fl_benefit),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
