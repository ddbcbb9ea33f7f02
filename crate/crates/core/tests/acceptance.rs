//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p dar-core --test acceptance`.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{
    brute_force_hardest, finite_difference_grad, max_relative_error, oracle_schedule, random_config, random_network,
    tie_heavy_loss, workspace_root,
};
use dar_core::baselines::reweight;
use dar_core::harness::{cost_report, run_experiment, ExperimentConfig, PolicyKind, RunReport, SourceKind};
use dar_core::model::backward;
use dar_core::scheduler::{end_of_epoch, init, select_hardest, LossLedger};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_file(workspace_root().join("configs").join(name)).expect(name)
}

/// Optional MNIST override: a directory holding the standard IDX training pair.
fn with_mnist(mut cfg: ExperimentConfig) -> ExperimentConfig {
    if let Ok(dir) = std::env::var("DAR_MNIST_DIR") {
        let dir = std::path::PathBuf::from(dir);
        let images = dir.join("train-images-idx3-ubyte");
        let labels = dir.join("train-labels-idx1-ubyte");
        if images.exists() && labels.exists() {
            cfg.data.source = SourceKind::Idx;
            cfg.data.synthetic = None;
            cfg.data.images = Some(images);
            cfg.data.labels = Some(labels);
        }
    }
    cfg
}

fn c1_scheduler_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let cfg = random_config(&mut rng, 50);
        let n = rng.random_range(1..=64);
        let loss = tie_heavy_loss(rng.random());
        let want = oracle_schedule(&cfg, n, &loss);
        let mut state = init(&cfg, n).map_err(|e| e.to_string())?;
        for (i, o) in want.iter().enumerate() {
            let epoch = state.advance();
            let ledger: LossLedger = state.active_ids.iter().map(|&id| (id, loss(epoch, id))).collect();
            let size = state.active_len();
            let (next, action) = end_of_epoch(&state, &cfg, &ledger).map_err(|e| e.to_string())?;
            ensure(
                size == o.size && action.kind().to_string() == o.action && next.active_ids == o.pool_after,
                || format!("case {case} epoch {} differs: {cfg:?}", i + 1),
            )?;
            state = next;
        }
    }
    within(start.elapsed(), 5)?;
    Ok(format!("100 configs match in {:.3}s", start.elapsed().as_secs_f64()))
}

fn c2_selection_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let m = rng.random_range(1..=12);
        let mut ids: Vec<usize> = rand::seq::index::sample(&mut rng, 100, m).into_vec();
        ids.sort_unstable();
        // Half the cases draw from few values to force ties.
        let losses: Vec<f64> = if case % 2 == 0 {
            (0..m).map(|_| rng.random_range(0..4) as f64 * 0.5).collect()
        } else {
            (0..m).map(|_| rng.random_range(0..8192) as f64 / 1024.0).collect()
        };
        let rate = rng.random_range(0.01..=1.0);
        let ledger: LossLedger = ids.iter().copied().zip(losses.iter().copied()).collect();
        let got = select_hardest(&ledger, &ids, rate).map_err(|e| e.to_string())?;
        let want = brute_force_hardest(&ids, &losses, rate);
        ensure(got == want, || format!("case {case}: got {got:?}, want {want:?}"))?;
    }
    within(start.elapsed(), 5)?;
    Ok(format!("500 ledgers match in {:.3}s", start.elapsed().as_secs_f64()))
}

fn cli_cost(args: &[&str]) -> Result<f64, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dar"))
        .arg("cost")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let last = text.lines().last().unwrap_or_default();
    last.strip_prefix("cost_ratio=")
        .ok_or_else(|| format!("unexpected output line {last:?}"))?
        .parse()
        .map_err(|e| format!("{e}"))
}

fn c3_cost_accounting() -> Check {
    let root = workspace_root().join("configs");
    let toy = root.join("toy.toml");
    let toy_cost = cli_cost(&["--config", toy.to_str().unwrap()])?;
    ensure(toy_cost == 0.6875, || format!("toy cost {toy_cost}"))?;

    let inet = root.join("imagenet_default.toml");
    let args = ["--config", inet.to_str().unwrap(), "--preset", "imagenet-default"];
    let (a, b) = (cli_cost(&args)?, cli_cost(&args)?);
    ensure(a == b, || format!("imagenet-default not deterministic: {a} vs {b}"))?;
    let mut cfg = config("imagenet_default.toml");
    cfg.apply_preset("imagenet-default").map_err(|e| e.to_string())?;
    let n = cost_report(&cfg, None).map_err(|e| e.to_string())?.population;
    let rows = oracle_schedule(&cfg.dar_config(), n, &|_, _| 0.0);
    let oracle = rows.iter().map(|r| r.size).sum::<usize>() as f64 / (rows.len() * n) as f64;
    ensure(a == oracle, || format!("imagenet-default {a} vs oracle {oracle}"))?;

    let run = run_experiment(&config("desk_dar.toml")).map_err(|e| e.to_string())?.report;
    ensure(run.cost_ratio == run.planned_cost, || {
        format!("realized {} vs planned {}", run.cost_ratio, run.planned_cost)
    })?;
    Ok(format!(
        "toy=0.6875, imagenet-default={a:.6} (n={n}), desk realized=planned={:.6}",
        run.cost_ratio
    ))
}

fn c4_reduce_to_baseline() -> Check {
    let mut dar = config("desk_dar.toml");
    dar.dar.keep_rate = 1.0;
    dar.dar.refresh.clear();
    let mut uni = config("desk_dar.toml");
    uni.policy = PolicyKind::Uniform;
    let a = run_experiment(&dar).map_err(|e| e.to_string())?.report.metrics_jsonl();
    let b = run_experiment(&uni).map_err(|e| e.to_string())?.report.metrics_jsonl();
    ensure(a == b, || "metrics differ".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

fn c5_gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (params, x, y, wd) = random_network(&mut rng);
        let analytic = backward(&params, &x, &y, wd).map_err(|e| e.to_string())?.flatten();
        let numeric = finite_difference_grad(&params, &x, &y, wd, 1e-6);
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-4));
    }
    ensure(worst < 1e-5, || format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("max relative error {worst:.2e} in {:.3}s", start.elapsed().as_secs_f64()))
}

struct DeskRuns {
    dar: Vec<RunReport>,
}

fn c6_desk_analog(runs: &mut Option<DeskRuns>) -> Check {
    let start = Instant::now();
    let (mut acc_u, mut acc_d, mut dar_reports, mut planned) = (0.0, 0.0, Vec::new(), 0.0);
    let mut per_seed = Vec::new();
    for seed in 1..=3u64 {
        let mut uni = with_mnist(config("desk_uniform.toml"));
        let mut dar = with_mnist(config("desk_dar.toml"));
        uni.seed = seed;
        dar.seed = seed;
        let u = run_experiment(&uni).map_err(|e| e.to_string())?.report;
        let d = run_experiment(&dar).map_err(|e| e.to_string())?.report;
        let (au, ad) = (u.final_validation_accuracy.unwrap_or(0.0), d.final_validation_accuracy.unwrap_or(0.0));
        per_seed.push(format!("s{seed}: {:.2}/{:.2}", 100.0 * au, 100.0 * ad));
        acc_u += au / 3.0;
        acc_d += ad / 3.0;
        planned = d.planned_cost;
        dar_reports.push(d);
    }
    let elapsed = start.elapsed();
    *runs = Some(DeskRuns { dar: dar_reports });
    let gap_pp = 100.0 * (acc_u - acc_d);
    let detail = format!(
        "uniform {:.2}% vs dar {:.2}% (gap {gap_pp:.2} pp), planned cost {planned:.4}, [{}] in {:.1}s",
        100.0 * acc_u,
        100.0 * acc_d,
        per_seed.join(", "),
        elapsed.as_secs_f64()
    );
    ensure(planned <= 0.90, || format!("planned cost too high: {detail}"))?;
    ensure(gap_pp <= 1.0, || format!("accuracy gap too large: {detail}"))?;
    within(elapsed, 300)?;
    Ok(detail)
}

fn c7_determinism(runs: &Option<DeskRuns>) -> Check {
    let first = runs.as_ref().ok_or("desk runs unavailable")?.dar[0].metrics_jsonl();
    let mut cfg = with_mnist(config("desk_dar.toml"));
    cfg.seed = 1;
    let again = run_experiment(&cfg).map_err(|e| e.to_string())?.report.metrics_jsonl();
    ensure(first == again, || "repeat run differs".into())?;
    Ok(format!("{} bytes identical", first.len()))
}

fn c8_reweight() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let m = rng.random_range(1..=200);
        let scale = 10f64.powi(rng.random_range(-3..=3));
        let losses: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..5.0) * scale })
            .collect();
        let w = reweight(&losses).map_err(|e| e.to_string())?;
        let w = w.as_slice();
        let mean = w.iter().sum::<f64>() / m as f64;
        ensure((mean - 1.0).abs() < 1e-12, || format!("case {case}: mean {mean}"))?;
        ensure(w.iter().all(|&v| v > 0.0), || format!("case {case}: non-positive weight"))?;
        for i in 0..m {
            for j in 0..m {
                if losses[i] < losses[j] {
                    ensure(w[i] <= w[j], || format!("case {case}: not monotone at {i},{j}"))?;
                }
            }
        }
    }
    let mut cfg = config("desk_uniform.toml");
    cfg.apply_preset("reweight").map_err(|e| e.to_string())?;
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?.report;
    ensure(report.cost_ratio == 1.0, || format!("reweight cost {}", report.cost_ratio))?;
    Ok("1000 vectors ok, run cost 1.0".into())
}

fn main() -> ExitCode {
    let mut desk = None;
    let results: Vec<(&str, Check, Duration)> = {
        let mut out = Vec::new();
        let mut timed = |name: &'static str, f: &mut dyn FnMut() -> Check| {
            let t = Instant::now();
            let r = f();
            out.push((name, r, t.elapsed()));
        };
        timed("1 scheduler oracle equivalence", &mut c1_scheduler_oracle);
        timed("2 selection oracle", &mut c2_selection_oracle);
        timed("3 cost accounting", &mut c3_cost_accounting);
        timed("4 reduce-to-baseline", &mut c4_reduce_to_baseline);
        timed("5 gradient check", &mut c5_gradient_check);
        timed("6 desk-scale cost/accuracy", &mut || c6_desk_analog(&mut desk));
        timed("7 determinism", &mut || c7_determinism(&desk));
        timed("8 reweighting baseline", &mut c8_reweight);
        out
    };
    let mut failed = 0;
    for (name, r, t) in &results {
        match r {
            Ok(detail) => println!("[PASS] criterion {name}: {detail} ({:.2}s)", t.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {detail} ({:.2}s)", t.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
