//! Reference implementations used only by tests. Kept independent of the
//! library code paths they check.
#![allow(dead_code)]

use dar_core::model::{softmax_xent, ParamSet};
use dar_core::scheduler::{ActiveWindow, DarConfig, KeepRounding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One epoch of a straight-line simulation: pool size while training, the
/// action name, and the pool after the action.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEpoch {
    pub size: usize,
    pub action: &'static str,
    pub pool_after: Vec<usize>,
}

/// Direct transcription of the drop/refresh loop with plain variables.
pub fn oracle_schedule(cfg: &DarConfig, n: usize, loss: &dyn Fn(usize, usize) -> f64) -> Vec<OracleEpoch> {
    let alpha = match cfg.active_epochs {
        ActiveWindow::Epochs(a) => Some(a),
        ActiveWindow::Unbounded => None,
    };
    let mut t_start = cfg.warmup_epochs;
    let mut t_prev = cfg.warmup_epochs;
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for tau in 1..=cfg.total_epochs {
        let size = pool.len();
        let mut action = "keep";
        if tau > cfg.warmup_epochs {
            let in_window = match alpha {
                Some(a) => tau - t_start < a,
                None => true,
            };
            if tau - t_prev == cfg.interval_epochs && in_window {
                t_prev = tau;
                let mut k = (cfg.keep_rate * pool.len() as f64).ceil() as usize;
                if k < 1 {
                    k = 1;
                }
                if k > pool.len() {
                    k = pool.len();
                }
                if k < pool.len() {
                    let mut order = pool.clone();
                    // Insertion sort: higher loss first, then lower id.
                    for i in 1..order.len() {
                        let mut j = i;
                        while j > 0 {
                            let (a, b) = (order[j - 1], order[j]);
                            let (la, lb) = (loss(tau, a), loss(tau, b));
                            if lb > la || (lb == la && b < a) {
                                order.swap(j - 1, j);
                                j -= 1;
                            } else {
                                break;
                            }
                        }
                    }
                    let mut kept = order[..k].to_vec();
                    kept.sort();
                    pool = kept;
                    action = "drop";
                }
            }
        }
        if cfg.refresh_epochs.contains(&tau) {
            t_start = tau;
            if cfg.reset_previous_on_refresh {
                t_prev = tau;
            }
            pool = (0..n).collect();
            action = "refresh";
        }
        out.push(OracleEpoch {
            size,
            action,
            pool_after: pool.clone(),
        });
    }
    out
}

/// Random valid config with `E <= max_epochs`.
pub fn random_config(rng: &mut ChaCha8Rng, max_epochs: usize) -> DarConfig {
    let total = rng.random_range(1..=max_epochs);
    let warmup = rng.random_range(0..total);
    let interval = rng.random_range(1..=4);
    let keep_rate = match rng.random_range(0..4) {
        0 => 1.0,
        1 => rng.random_range(0.05..0.5),
        _ => rng.random_range(0.5..1.0),
    };
    let active = if rng.random_bool(0.2) {
        ActiveWindow::Unbounded
    } else {
        ActiveWindow::Epochs(rng.random_range(0..=total))
    };
    let refresh: Vec<usize> = ((warmup + 1)..=total).filter(|_| rng.random_bool(0.15)).collect();
    DarConfig {
        total_epochs: total,
        warmup_epochs: warmup,
        interval_epochs: interval,
        keep_rate,
        active_epochs: active,
        refresh_epochs: refresh,
        keep_rounding: KeepRounding::CeilAtLeastOne,
        reset_previous_on_refresh: rng.random_bool(0.85),
    }
}

/// Deterministic pseudo-random loss keyed by `(salt, epoch, id)`, drawn from
/// a small set of values so ties are common.
pub fn tie_heavy_loss(salt: u64) -> impl Fn(usize, usize) -> f64 {
    move |epoch, id| {
        let mut rng = ChaCha8Rng::seed_from_u64(salt ^ ((epoch as u64) << 32) ^ id as u64);
        rng.random_range(0..6) as f64 * 0.25
    }
}

/// Brute-force hardest subset: among all `k`-subsets with maximal total loss,
/// the lexicographically smallest ascending id list. Losses must be exactly
/// representable sums (e.g. dyadic) for the comparison to be exact.
pub fn brute_force_hardest(ids: &[usize], losses: &[f64], keep_rate: f64) -> Vec<usize> {
    let m = ids.len();
    let k = ((keep_rate * m as f64).ceil() as usize).clamp(1, m);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut chosen: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| ids[i]).collect();
        chosen.sort();
        let total: f64 = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| losses[i]).sum();
        let better = match &best {
            None => true,
            Some((t, c)) => total > *t || (total == *t && chosen < *c),
        };
        if better {
            best = Some((total, chosen));
        }
    }
    best.unwrap().1
}

/// Objective matching the analytic gradient: mean cross-entropy plus
/// `wd/2 * sum(W^2)` over weights only.
pub fn objective(params: &ParamSet, x: &[Vec<f64>], y: &[usize], wd: f64) -> f64 {
    let logits = dar_core::model::forward(params, x).unwrap();
    let out = softmax_xent(logits, y).unwrap();
    let decay: f64 = params
        .layers
        .iter()
        .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
        .sum();
    out.mean_loss + 0.5 * wd * decay
}

/// Central differences of [`objective`] with step `h`, in flatten order.
pub fn finite_difference_grad(params: &ParamSet, x: &[Vec<f64>], y: &[usize], wd: f64, h: f64) -> Vec<f64> {
    let sizes = params.sizes();
    let base = params.flatten();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = objective(&ParamSet::from_flat(&sizes, &plus).unwrap(), x, y, wd);
            let fm = objective(&ParamSet::from_flat(&sizes, &minus).unwrap(), x, y, wd);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Component-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Random network with 1..=3 layers of at most 10 units, plus a batch.
pub fn random_network(rng: &mut ChaCha8Rng) -> (ParamSet, Vec<Vec<f64>>, Vec<usize>, f64) {
    let layers = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=layers).map(|_| rng.random_range(2..=10)).collect();
    let mut params = ParamSet::init(&sizes, rng.random()).unwrap();
    for l in &mut params.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let batch = rng.random_range(1..=6);
    let x: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let classes = *sizes.last().unwrap();
    let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let wd = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.1) };
    (params, x, y, wd)
}

/// Perceptron run to convergence; `true` if it separates the two classes.
pub fn perceptron_separates(x: &[Vec<f64>], y: &[usize], max_passes: usize) -> bool {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..max_passes {
        let mut mistakes = 0;
        for (xi, &yi) in x.iter().zip(y) {
            let t = if yi == 1 { 1.0 } else { -1.0 };
            let s: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b;
            if t * s <= 0.0 {
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj += t * xj;
                }
                b += t;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

/// Workspace root (two levels above this crate's manifest).
pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
