//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpflow_cli::commands::{evaluation_scaler, prepare, simulation_config};
use vpflow_cli::config::ExperimentConfig;
use vpflow_core::baselines::{persistence_last, persistence_last_day};
use vpflow_core::evaluation::{nrmse, read_report_csv, HorizonReport, CANONICAL_HORIZONS_H};
use vpflow_core::grid_data::{step, PowerSeries, STEPS_PER_DAY};
use vpflow_core::model::{backward, forward, ArchitectureSpec, DropoutMasks, NetworkParams};
use vpflow_core::neuralnet::{check_gradients, masked_mse, numeric_gradient, AdamState, ParamSet};
use vpflow_core::preprocess::{QuantileScaler, ZScoreParams};
use vpflow_core::update_engine::{read_grid_csv, run_strategy_grid, run_update_simulation, EvalTarget, UpdateStrategy};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vpflow")
}

/// Runs the CLI and returns its exit code.
fn vpflow(config: &Path, args: &[&str]) -> i32 {
    let status = Command::new(bin())
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .expect("spawn vpflow");
    status.code().unwrap_or(-1)
}

fn pipeline(config: &Path, verbs: &[&str]) -> Result<(), String> {
    for v in verbs {
        let code = vpflow(config, &[v]);
        if code != 0 {
            return Err(format!("`vpflow {v}` exited with {code}"));
        }
    }
    Ok(())
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let arch = ArchitectureSpec {
        lstm_units: 4,
        dense1: 8,
        dense2: 8,
        output_dim: 4,
        feat_dim: 3,
        lookback: 6,
        ..ArchitectureSpec::paper()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut net = NetworkParams::init(&arch, &mut rng);
    net.visit_mut(&mut |name, t| {
        if name.ends_with(".b") {
            t.iter_mut().for_each(|v| *v += 0.05);
        }
    });
    let batch = 2;
    let xp = Array3::from_shape_simple_fn((arch.lookback, batch, 1), || rng.random_range(-1.0..1.0));
    let xf = Array3::from_shape_simple_fn((arch.lookback, batch, arch.feat_dim), || rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_simple_fn((batch, arch.output_dim), || rng.random_range(-1.0..1.0));
    let mask = Array2::ones(y.dim());
    let masks = DropoutMasks::sample(&arch, batch, &mut rng);

    let (out, cache) = forward(&net, &arch, xp.view(), xf.view(), Some(&masks), true).map_err(|e| e.to_string())?;
    let loss = masked_mse(out.view(), y.view(), mask.view()).ok_or("all targets masked")?;
    let analytic = backward(&net, &arch, &cache.expect("training cache"), loss.grad.view()).flatten();
    let numeric = numeric_gradient(&mut net, 1e-5, |n: &NetworkParams| {
        let (o, _) = forward(n, &arch, xp.view(), xf.view(), Some(&masks), false).unwrap();
        masked_mse(o.view(), y.view(), mask.view()).unwrap().value
    });
    let report = check_gradients(&analytic, &numeric);
    let secs = started.elapsed().as_secs_f64();
    check(
        report.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{} parameters, max relative error {:.2e}, {secs:.1} s",
            analytic.len(),
            report.max_rel_error
        ),
        format!("max relative error {:.2e} after {secs:.1} s", report.max_rel_error),
    )
}

struct Scalar(Vec<f64>);

impl ParamSet for Scalar {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("theta", &self.0);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("theta", &mut self.0);
    }
}

fn optimizer_oracle() -> Outcome {
    let mut theta = Scalar(vec![1.0]);
    let mut adam = AdamState::new(&theta, 0.1);
    let grad = Scalar(vec![2.0 * theta.0[0]]);
    adam.step(&mut theta, &grad);
    let first = theta.0[0];

    let mut still = Scalar(vec![0.7]);
    let mut adam = AdamState::new(&still, 0.1);
    adam.step(&mut still, &Scalar(vec![0.0]));
    check(
        (first - 0.9).abs() <= 1e-9 && still.0[0] == 0.7,
        format!(
            "theta after one step {first:.12}, zero gradient leaves theta at {}",
            still.0[0]
        ),
        format!("theta {first}, zero-gradient theta {}", still.0[0]),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values: Vec<f64> = (0..10_000).map(|_| rng.random_range(-500.0..1500.0)).collect();

    let z = ZScoreParams::fit_series(&values, None).map_err(|e| e.to_string())?;
    let z_err = values
        .iter()
        .map(|&x| (z.invert(z.apply(x, 0), 0) - x).abs())
        .fold(0.0, f64::max);

    let q = QuantileScaler::fit(&values, (0.003, 0.997)).map_err(|e| e.to_string())?;
    let q_err = values
        .iter()
        .map(|&x| (q.invert(q.apply(x)) - x).abs())
        .fold(0.0, f64::max);

    // Brute force: the order statistic at fractional rank (n - 1) * level,
    // counting how many values lie below each candidate.
    let oracle = |level: f64| {
        let h = (values.len() - 1) as f64 * level;
        let (lo, frac) = (h.floor() as usize, h - h.floor());
        let nth = |k: usize| {
            *values
                .iter()
                .find(|&&v| {
                    let below = values.iter().filter(|&&w| w < v).count();
                    let equal = values.iter().filter(|&&w| w == v).count();
                    below <= k && k < below + equal
                })
                .unwrap()
        };
        let a = nth(lo);
        a + (nth(lo + 1) - a) * frac
    };
    let oracle_err = (q.q_low - oracle(0.003)).abs().max((q.q_high - oracle(0.997)).abs());
    check(
        z_err <= 1e-12 && q_err <= 1e-12 && oracle_err <= 1e-12,
        format!("round-trip errors {z_err:.1e} / {q_err:.1e}, quantile oracle error {oracle_err:.1e}"),
        format!("round-trip errors {z_err:.1e} / {q_err:.1e}, quantile oracle error {oracle_err:.1e}"),
    )
}

fn baseline_exactness() -> Outcome {
    let start = chrono::DateTime::parse_from_rfc3339("2018-03-01T00:00:00Z")
        .unwrap()
        .to_utc();
    let n = 10 * STEPS_PER_DAY;
    let profile = |i: usize| {
        let x = std::f64::consts::TAU * (i % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
        40.0 * x.sin() + 15.0 * (3.0 * x).cos() + 5.0
    };
    let series = PowerSeries::reliable(start, (0..n).map(profile).collect());
    let horizon = 2 * STEPS_PER_DAY;
    let origins: Vec<usize> = (STEPS_PER_DAY..n - horizon).step_by(7).collect();

    let mut constant = true;
    let mut periodic = true;
    let mut records = Vec::new();
    for &o in &origins {
        let t = series.timestamp(o);
        let last = persistence_last(&series, t, horizon).map_err(|e| e.to_string())?;
        constant &= last.iter().all(|&v| v == last[0]);
        let day = persistence_last_day(&series, t, horizon).map_err(|e| e.to_string())?;
        periodic &= (STEPS_PER_DAY..horizon).all(|k| day[k] == day[k - STEPS_PER_DAY]);
        records.push(vpflow_core::forecast::ForecastRecord { origin: t, values: day });
    }
    let set = vpflow_core::forecast::ForecastSet { records };
    let scaler = QuantileScaler::fit(series.values(), (0.003, 0.997)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for h in CANONICAL_HORIZONS_H {
        let e = nrmse(&set, &series, &scaler, h * 4).map_err(|e| e.to_string())?;
        worst = worst.max(e);
    }
    check(
        constant && periodic && worst <= 1e-12,
        format!("last value constant, day block repeats, worst nRMSE on a periodic series {worst:.1e}"),
        format!("constant {constant}, periodic {periodic}, worst nRMSE {worst:.1e}"),
    )
}

/// Tiny models trained briefly on the whole fleet, used by the audit and the
/// grid checks.
fn tiny_fleet_config(out: &Path, scenarios: &Path, transformers: &str) -> String {
    format!(
        r#"seed = 11
preset = "tiny"
out = "{}"

[data]
scenarios_dir = "{}"
transformers = {transformers}

[split]
train_end = "2018-01-01T00:00:00Z"
val_end = "2018-01-04T00:00:00Z"
test_end = "2018-01-06T00:00:00Z"

[training]
epochs = 2
steps_per_epoch = 5
batch_size = 32
val_stride = 16
"#,
        out.display(),
        scenarios.display()
    )
}

const FLEET: &str = r#"["T1", "T2", "T3", "T4", "T5", "T6", "T7"]"#;

fn causality_audit(work: &Path, scenarios: &Path) -> Outcome {
    let out = work.join("audit");
    let cfg = write_config(work, "audit.toml", &tiny_fleet_config(&out, scenarios, FLEET));
    pipeline(&cfg, &["train", "grid"])?;
    let clean = vpflow(&cfg, &["verify-archive"]);

    // Negative control: one forecast whose inputs reach past its origin.
    let src = out.join("runs/T1/grid_e5_lr0.001");
    let bad_root = work.join("tampered");
    let bad = bad_root.join("T1/run");
    fs::create_dir_all(&bad).unwrap();
    for f in ["archive.csv", "updates.csv"] {
        fs::copy(src.join(f), bad.join(f)).unwrap();
    }
    let index = fs::read_to_string(src.join("forecast_index.csv")).unwrap();
    let mut lines: Vec<Vec<String>> = index
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let later = lines.last().unwrap()[0].clone();
    lines[1][3] = later;
    let text: Vec<String> = lines.iter().map(|l| l.join(",")).collect();
    fs::write(bad.join("forecast_index.csv"), text.join("\n") + "\n").unwrap();
    let tampered = vpflow(&cfg, &["verify-archive", "--runs", bad_root.to_str().unwrap()]);

    let runs = fs::read_dir(out.join("runs"))
        .unwrap()
        .flat_map(|t| fs::read_dir(t.unwrap().path()).unwrap())
        .count();
    check(
        clean == 0 && tampered == 2 && runs == 56,
        format!("{runs} grid runs audited with zero violations; a planted violation is caught"),
        format!("clean audit exit {clean}, tampered audit exit {tampered}, {runs} runs"),
    )
}

fn strategy_grid(work: &Path, scenarios: &Path) -> Outcome {
    let out = work.join("audit");
    let cfg = ExperimentConfig::load(work.join("audit.toml")).map_err(|e| e.to_string())?;
    let rows = read_grid_csv(out.join("reports/grid_T1.csv")).map_err(|e| e.to_string())?;
    let strategies: std::collections::BTreeSet<(usize, u64)> = rows
        .iter()
        .map(|r| (r.strategy_epochs, r.strategy_lr.to_bits()))
        .collect();
    let shape_ok = rows.len() == 56 && strategies.len() == 8;

    // Rerun T1's grid from the same checkpoint in a fresh directory.
    let rerun_out = work.join("audit_rerun");
    fs::create_dir_all(rerun_out.join("models")).unwrap();
    copy_dir(&out.join("models/T1"), &rerun_out.join("models/T1"));
    let rerun_cfg = write_config(
        work,
        "audit_rerun.toml",
        &tiny_fleet_config(&rerun_out, scenarios, r#"["T1"]"#),
    );
    pipeline(&rerun_cfg, &["grid"])?;
    let a = fs::read(out.join("reports/grid_T1.csv")).unwrap();
    let b = fs::read(rerun_out.join("reports/grid_T1.csv")).unwrap();
    let reproducible = a == b;

    // Control: zero update epochs must reproduce the frozen model exactly.
    let p = prepare(&cfg, "T1").map_err(|e| e.to_string())?;
    let sim_cfg = simulation_config(&cfg);
    let trained_until = cfg.split.train_end - step();
    let control = UpdateStrategy {
        epochs: 0,
        ..cfg.update_strategy()
    };
    let frozen =
        run_update_simulation(&p.model, &p.series, trained_until, &sim_cfg, None).map_err(|e| e.to_string())?;
    let scaler = evaluation_scaler(&p.data.power, cfg.evaluation.quantile_levels).map_err(|e| e.to_string())?;
    let target = EvalTarget {
        truth: &p.data.power,
        scaler: &scaler,
        from: cfg.split.val_end,
        horizons_h: &cfg.evaluation.horizons_h,
    };
    let grid = run_strategy_grid(&p.model, &p.series, trained_until, &sim_cfg, &[control], target)
        .map_err(|e| e.to_string())?;
    let control_sim = &grid.simulations[0].1;
    let bits = |s: &vpflow_core::forecast::ForecastSet| -> Vec<u64> {
        s.records
            .iter()
            .flat_map(|r| r.values.iter().map(|v| v.to_bits()))
            .collect()
    };
    let control_ok = bits(&control_sim.forecasts) == bits(&frozen.forecasts) && control_sim.model == p.model;

    check(
        shape_ok && reproducible && control_ok,
        format!(
            "{} rows over {} strategies, rerun identical, zero-epoch control equals frozen",
            rows.len(),
            strategies.len()
        ),
        format!("shape {shape_ok}, rerun identical {reproducible}, control equals frozen {control_ok}"),
    )
}

/// Informational: which epoch count wins most horizons across the fleet.
fn best_epochs_note(work: &Path) -> String {
    let mut wins = std::collections::BTreeMap::<usize, usize>::new();
    for t in 1..=7 {
        let Ok(rows) = read_grid_csv(work.join(format!("audit/reports/grid_T{t}.csv"))) else {
            continue;
        };
        for h in CANONICAL_HORIZONS_H {
            if let Some(best) = rows
                .iter()
                .filter(|r| r.horizon_h == h)
                .min_by(|a, b| a.nrmse.total_cmp(&b.nrmse))
            {
                *wins.entry(best.strategy_epochs).or_default() += 1;
            }
        }
    }
    let parts: Vec<String> = wins.iter().map(|(e, n)| format!("{e} epochs: {n}")).collect();
    format!(
        "best-strategy wins per epoch count (tiny models, informational): {}",
        parts.join(", ")
    )
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

/// Desk-sized models on the four drift scenarios.
fn drift_config(out: &Path, scenarios: &Path) -> String {
    format!(
        r#"seed = 1
preset = "desk"
out = "{}"

[data]
scenarios_dir = "{}"
transformers = ["T1", "T2", "T3", "T4"]

[training]
epochs = 15
steps_per_epoch = 50
batch_size = 64
val_stride = 4
"#,
        out.display(),
        scenarios.display()
    )
}

fn mean_by_horizon(rows: &[HorizonReport], model: &str, h: usize) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.model == model && r.horizon_h == h)
        .map(|r| r.nrmse)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn drift_run(work: &Path, scenarios: &Path) -> Result<(Vec<HorizonReport>, f64), String> {
    let out = work.join("drift");
    let cfg = write_config(work, "drift.toml", &drift_config(&out, scenarios));
    let started = Instant::now();
    pipeline(&cfg, &["train", "forecast", "update-run", "evaluate"])?;
    let per_scenario = started.elapsed().as_secs_f64() / 4.0;
    let rows = read_report_csv(out.join("reports/report.csv")).map_err(|e| e.to_string())?;
    Ok((rows, per_scenario))
}

fn drift_reproduction(rows: &[HorizonReport], per_scenario: f64) -> Outcome {
    let mut all_better = true;
    let mut deltas = Vec::new();
    for h in CANONICAL_HORIZONS_H {
        let d = mean_by_horizon(rows, "lstm", h) - mean_by_horizon(rows, "lstm_updated", h);
        all_better &= d > 0.0;
        deltas.push(d);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let shown: Vec<String> = deltas.iter().map(|d| format!("{:+.1}", 100.0 * d)).collect();
    check(
        all_better && mean >= 0.02 && per_scenario <= 1800.0,
        format!(
            "updated beats frozen at all horizons (pp: {}), mean {:.1} pp, {per_scenario:.0} s per scenario",
            shown.join(" "),
            100.0 * mean
        ),
        format!(
            "improvement per horizon (pp): {}, mean {:.1} pp, {per_scenario:.0} s per scenario",
            shown.join(" "),
            100.0 * mean
        ),
    )
}

fn baseline_dominance(rows: &[HorizonReport]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for h in [4, 8, 16, 32] {
        let u = mean_by_horizon(rows, "lstm_updated", h);
        let p = mean_by_horizon(rows, "persistence_24h", h);
        ok &= u <= p;
        parts.push(format!("{h} h {u:.3} vs {p:.3}"));
    }
    check(
        ok,
        format!("updated vs 24 h persistence: {}", parts.join(", ")),
        format!("updated vs 24 h persistence: {}", parts.join(", ")),
    )
}

fn determinism(work: &Path) -> Outcome {
    let mut reports = Vec::new();
    for run in ["det_a", "det_b"] {
        let out = work.join(run);
        let text = format!(
            r#"seed = 5
preset = "tiny"
out = "{}"

[data]
transformers = ["T5"]

[split]
train_end = "2018-01-01T00:00:00Z"
val_end = "2018-01-03T00:00:00Z"
test_end = "2018-01-06T00:00:00Z"

[training]
epochs = 3
steps_per_epoch = 5
batch_size = 32
val_stride = 16
"#,
            out.display()
        );
        let cfg = write_config(work, &format!("{run}.toml"), &text);
        pipeline(&cfg, &["generate", "train", "forecast", "update-run", "evaluate"])?;
        reports.push(fs::read(out.join("reports/report.csv")).unwrap());
    }
    check(
        reports[0] == reports[1] && !reports[0].is_empty(),
        format!("two seeded runs wrote identical reports ({} bytes)", reports[0].len()),
        "report CSVs differ between identical runs".into(),
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let work = work.path();
    let scenarios_out = work.join("fleet");
    let gen_cfg = write_config(
        work,
        "fleet.toml",
        &format!("seed = 0\nout = \"{}\"\n", scenarios_out.display()),
    );
    let generated = pipeline(&gen_cfg, &["generate"]);
    let scenarios = scenarios_out.join("scenarios");

    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient correctness", gradient_correctness()),
        ("2 optimizer oracle", optimizer_oracle()),
        ("3 normalization", normalization()),
        ("4 baseline exactness", baseline_exactness()),
    ];
    let mut notes = Vec::new();
    match &generated {
        Ok(()) => {
            results.push(("5 causality audit", causality_audit(work, &scenarios)));
            results.push(("8 strategy grid", strategy_grid(work, &scenarios)));
            notes.push(best_epochs_note(work));
            match drift_run(work, &scenarios) {
                Ok((rows, secs)) => {
                    results.push(("6 drift reproduction", drift_reproduction(&rows, secs)));
                    results.push(("7 baseline dominance", baseline_dominance(&rows)));
                }
                Err(e) => {
                    results.push(("6 drift reproduction", Err(e.clone())));
                    results.push(("7 baseline dominance", Err(e)));
                }
            }
        }
        Err(e) => {
            for name in [
                "5 causality audit",
                "8 strategy grid",
                "6 drift reproduction",
                "7 baseline dominance",
            ] {
                results.push((name, Err(format!("fleet generation failed: {e}"))));
            }
        }
    }
    results.push(("9 determinism", determinism(work)));
    results.sort_by_key(|(name, _)| name.split(' ').next().unwrap().parse::<u32>().unwrap());

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    for n in notes {
        println!("note  {n}");
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
