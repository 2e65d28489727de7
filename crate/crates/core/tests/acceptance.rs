//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sr_gvf::features::encode_one_hot;
use sr_gvf::gridworld::GridMap;
use sr_gvf::gvf::{CumulantWeights, DirectWeights};
use sr_gvf::harness::grid::{
    resolve_sr_alphas, run_incremental_curves_with, run_predictor_sweep_with, PredictorSweep,
};
use sr_gvf::harness::{run_replay_experiment, ExperimentConfig};
use sr_gvf::metrics::{grid_nmse, replay_nmse, Method, MseEntry};
use sr_gvf::oracle::{analytic_gvf, analytic_sr, apply_sr, scaling_weights};
use sr_gvf::signals::SignalSampler;
use sr_gvf::srlearn::{Discount, SuccessorMatrix};
use sr_gvf::tilecode::{TileCoder, TileCoderConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// TD(0) SR learning on one-hot features for exactly `steps` transitions.
/// Returns the learned rows and per-state visit counts.
fn learn_sr(map: &GridMap, gamma: f64, alpha: f64, steps: u64, seed: u64) -> (SuccessorMatrix, Vec<u64>) {
    let n = map.state_count();
    let feats: Vec<_> = (0..n).map(|s| encode_one_hot(s, n).unwrap()).collect();
    let mut m = SuccessorMatrix::new(n, Discount::constant(gamma).unwrap(), alpha).unwrap();
    let mut visits = vec![0u64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = map.initial_state();
    for _ in 0..steps {
        let a = map.select_action(state, 0.3, &mut rng);
        let (next, terminal) = map.step(state, a);
        let s = map.state_index(state.position).unwrap();
        let sn = map.state_index(next.position).unwrap();
        visits[s] += 1;
        m.update(&feats[s], &feats[sn]).unwrap();
        if terminal {
            m.terminal_flush(&feats[sn]).unwrap();
            state = map.initial_state();
        } else {
            state = next;
        }
    }
    (m, visits)
}

fn max_error(m: &SuccessorMatrix, psi: &nalgebra::DMatrix<f64>, visits: &[u64]) -> (f64, usize) {
    let n = visits.len();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for s in (0..n).filter(|&s| visits[s] >= 100) {
        checked += 1;
        for j in 0..n {
            worst = worst.max((m.get(s, j) - psi[(s, j)]).abs());
        }
    }
    (worst, checked)
}

fn criterion_1() -> Outcome {
    let map = GridMap::open(5, 5).unwrap();
    let p = map.transition_matrix(0.3).unwrap();
    let alphas = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1];
    let mut parts = Vec::new();
    let mut pass = true;
    for gamma in [0.5, 0.9] {
        let psi = analytic_sr(&p, gamma).unwrap();
        // Tune on one stream, evaluate on a fresh one.
        let tuned = alphas
            .iter()
            .map(|&a| {
                let (m, v) = learn_sr(&map, gamma, a, 20_000, 11);
                (a, max_error(&m, &psi, &v).0)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        let (m, visits) = learn_sr(&map, gamma, tuned, 20_000, 12);
        let (err, checked) = max_error(&m, &psi, &visits);
        pass &= err <= 0.05 && checked > 0;
        parts.push(format!("gamma={gamma} alpha={tuned} max|M-Psi|={err:.4} over {checked} states"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let map = GridMap::open(5, 5).unwrap();
    let p = map.transition_matrix(0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let specs = SignalSampler::for_map(&map).sample_many(&mut rng, 10);
    let mut worst = 0.0f64;
    for gamma in [0.0, 0.5, 0.9] {
        let psi = analytic_sr(&p, gamma).unwrap();
        for spec in &specs {
            let cbar = spec.mean_field(&map, 0.3).unwrap();
            let direct = analytic_gvf(&p, gamma, &cbar).unwrap();
            let composed = apply_sr(&psi, &cbar);
            for (a, b) in direct.iter().zip(&composed) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-9, format!("max |v - Psi c| = {worst:.2e} over 10 signals, 3 discounts"))
}

/// Desk-scale grid config shared by the sweep criteria.
fn desk(signals: usize, trials: usize, gammas: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        signals,
        trials,
        episodes: signals as u64 * 50,
        sr_episodes: signals as u64 * 50,
        gammas,
        seed: 2024,
        ..ExperimentConfig::desk()
    }
}

fn criterion_3() -> Outcome {
    let cfg = desk(10, 5, vec![0.0]);
    let (sr_alphas, _) = resolve_sr_alphas(&cfg).unwrap();
    let sweep = run_predictor_sweep_with(&cfg, &sr_alphas).unwrap();
    let mut worst = 0.0f64;
    for &a in &cfg.alphas {
        let sums = |m: Method| -> Vec<f64> {
            sweep
                .cells
                .iter()
                .filter(|c| c.alpha == a)
                .map(|c| match m {
                    Method::Direct => c.nmse_direct.iter().sum::<f64>(),
                    Method::Sr => c.nmse_sr.iter().sum::<f64>(),
                })
                .collect()
        };
        let (d, s) = (sums(Method::Direct), sums(Method::Sr));
        let diff: f64 = d.iter().zip(&s).map(|(x, y)| x - y).sum::<f64>() / d.len() as f64;
        let base = d.iter().sum::<f64>() / d.len() as f64;
        worst = worst.max((diff / base).abs());
    }
    outcome(
        worst < 0.02,
        format!("SR alpha {}; max paired relative gap over alphas {:.3}%", sr_alphas[0], 100.0 * worst),
    )
}

fn main_sweep() -> (ExperimentConfig, PredictorSweep) {
    let cfg = desk(20, 10, vec![0.0, 0.5, 0.9]);
    let (sr_alphas, _) = resolve_sr_alphas(&cfg).unwrap();
    let sweep = run_predictor_sweep_with(&cfg, &sr_alphas).unwrap();
    (cfg, sweep)
}

fn criterion_4(cfg: &ExperimentConfig, sweep: &PredictorSweep) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for a in [0.25, 0.5] {
        let (d, s) = sweep.win_counts(0.9, a);
        let frac = s as f64 / cfg.signals as f64;
        pass &= frac >= 0.7;
        parts.push(format!("alpha={a}: SR better on {s}/{} (direct {d})", cfg.signals));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6(sweep: &PredictorSweep) -> Outcome {
    let gaps: Vec<f64> = [0.0, 0.5, 0.9].iter().map(|&g| sweep.best_alpha_gap(g)).collect();
    let pass = gaps.windows(2).all(|w| w[1] >= w[0]);
    outcome(pass, format!("best-alpha gaps (direct - SR) at gamma 0/0.5/0.9: {:.3} / {:.3} / {:.3}", gaps[0], gaps[1], gaps[2]))
}

fn criterion_5(sweep: &PredictorSweep) -> Outcome {
    let cfg = ExperimentConfig { incremental_gamma: 0.9, ..desk(10, 10, vec![0.9]) };
    let sr_alpha = sweep.sr_alphas[sweep.gammas.iter().position(|&g| g == 0.9).unwrap()];
    let (ad, ac) = (sweep.best_alpha(0.9, Method::Direct), sweep.best_alpha(0.9, Method::Sr));
    let curves = run_incremental_curves_with(&cfg, sr_alpha, ad, ac).unwrap();
    let initial = curves.sr_error[0].mean;
    let Some(low) = curves.sr_error.iter().position(|e| e.mean < 0.25 * initial) else {
        return outcome(false, "SR error never fell below 25% of its initial value");
    };
    let later: Vec<usize> = curves.order.iter().copied().filter(|&i| curves.activation[i] as usize > low).collect();
    let mut worse = Vec::new();
    for &i in &later {
        let (d, s) = (curves.peak(i, Method::Direct), curves.peak(i, Method::Sr));
        if !(s < d) {
            worse.push(format!("signal {i} (SR {s:.3} vs direct {d:.3})"));
        }
    }
    let first = curves.order[0];
    let pass = !later.is_empty() && worse.is_empty();
    outcome(
        pass,
        format!(
            "alphas direct={ad} SR={ac} SR-rows={sr_alpha}; SR error < 25% from episode {low}; {} later signals, SR peak lower on {}{}; first signal peaks SR {:.3} / direct {:.3}",
            later.len(),
            later.len() - worse.len(),
            if worse.is_empty() { String::new() } else { format!(" (not: {})", worse.join(", ")) },
            curves.peak(first, Method::Sr),
            curves.peak(first, Method::Direct),
        ),
    )
}

fn criterion_7() -> Outcome {
    let tc = TileCoder::new(TileCoderConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_active = 0;
    let mut dims_ok = tc.output_dim() == 2049;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let f = tc.encode(&x).unwrap();
        dims_ok &= f.dim() == 2049;
        max_active = max_active.max(f.active_count());
    }
    outcome(
        dims_ok && max_active <= 101,
        format!("output dim {}, max active {max_active} over 10000 inputs", tc.output_dim()),
    )
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig { replay_runs: 5, replay_steps: 21_600, seed: 8, ..ExperimentConfig::desk() };
    let runs = run_replay_experiment(&cfg).unwrap();
    let targets = cfg.replay_targets.len();
    let mut mean = vec![(0.0, 0.0); targets];
    let mut per_seed = Vec::new();
    for run in &runs {
        let fin = run.final_mse().unwrap();
        per_seed.push(fin.iter().filter(|(d, s)| s <= d).count());
        for (acc, (d, s)) in mean.iter_mut().zip(&fin) {
            acc.0 += d / runs.len() as f64;
            acc.1 += s / runs.len() as f64;
        }
    }
    let wins: Vec<&str> = cfg
        .replay_targets
        .iter()
        .zip(&mean)
        .filter(|(_, (d, s))| s <= d)
        .map(|(n, _)| n.as_str())
        .collect();
    let nmse: Vec<String> = mean
        .iter()
        .map(|&(d, s)| {
            let p = replay_nmse(d, s).unwrap();
            format!("{:.2}/{:.2}", p.direct, p.sr)
        })
        .collect();
    outcome(
        wins.len() >= 4,
        format!(
            "SR <= direct on {}/{targets} targets (seed-mean final MSE); per seed {:?}; NMSE direct/SR {}",
            wins.len(),
            per_seed,
            nmse.join(" ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (f, h, s) in [(2u64, 21u64, 10u64), (3, 5, 4), (1, 7, 9)] {
        let c = scaling_weights(f, h, s).unwrap();
        let n = s as usize;
        // One successor matrix per discount; one cumulant vector per signal,
        // shared across discounts; one direct vector per (discount, signal).
        let srs: usize = (0..f).map(|_| SuccessorMatrix::new(n, Discount::constant(0.5).unwrap(), 0.1).unwrap().weights().len()).sum();
        let cumulants: usize = (0..h).map(|_| CumulantWeights::new(n).weights().len()).sum();
        let directs: usize = (0..f * h).map(|_| DirectWeights::new(n).weights().len()).sum();
        let ok = c.direct == directs as u64
            && c.sr == (srs + cumulants) as u64
            && c.direct == f * h * s
            && c.sr == f * s * s + h * s
            && ((h as f64 > c.crossover_h) == (c.direct > c.sr) || (h as f64 == c.crossover_h));
        let crossover_ok = if f == 1 {
            c.crossover_h.is_infinite()
        } else {
            (c.crossover_h - (f * s) as f64 / (f - 1) as f64).abs() < 1e-12
        };
        pass &= ok && crossover_ok;
        parts.push(format!("(f={f},h={h},S={s}) direct {} sr {} h*={}", c.direct, c.sr, c.crossover_h));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_10() -> Outcome {
    let mut runner = TestRunner::new(PtConfig { cases: 300, ..PtConfig::default() });
    let table = proptest::collection::vec((0usize..5, any::<bool>(), 0usize..4, 0.0f64..1e4), 1..60);
    let grid = runner.run(&table, |rows| {
        let entries: Vec<MseEntry> = rows
            .iter()
            .map(|&(s, d, a, mse)| MseEntry {
                signal_id: s,
                method: if d { Method::Direct } else { Method::Sr },
                alpha: [0.1, 0.25, 0.5, 1.0][a],
                mse,
            })
            .collect();
        let out = grid_nmse(&entries).unwrap();
        for s in 0..5 {
            let group: Vec<_> = out.iter().filter(|e| e.signal_id == s).collect();
            if group.is_empty() {
                continue;
            }
            prop_assert!(group.iter().all(|e| (0.0..=1.0).contains(&e.nmse)));
            let all_zero = group.iter().all(|e| e.all_zero);
            prop_assert!(all_zero || group.iter().any(|e| e.nmse == 1.0));
        }
        Ok(())
    });
    let pair = runner.run(&(0.0f64..1e6, 0.0f64..1e6), |(d, s)| {
        let p = replay_nmse(d, s).unwrap();
        prop_assert!((0.0..=1.0).contains(&p.direct) && (0.0..=1.0).contains(&p.sr));
        prop_assert!(p.all_zero || p.direct == 1.0 || p.sr == 1.0);
        Ok(())
    });
    outcome(
        grid.is_ok() && pair.is_ok(),
        format!("grid tables: {}; replay pairs: {}", verdict(&grid), verdict(&pair)),
    )
}

fn verdict<E: std::fmt::Display>(r: &Result<(), E>) -> String {
    match r {
        Ok(()) => "300 random cases hold".into(),
        Err(e) => format!("counterexample {e}"),
    }
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_srgvf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Output files by name. config.toml records the thread count and output
/// directory, so it is reduced to its hash.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = if name == "config.toml" {
                ExperimentConfig::load(&p).unwrap().hash().into_bytes()
            } else {
                std::fs::read(&p).unwrap()
            };
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut checked = 0;
    let mut mismatched = Vec::new();
    for study in ["sweep-sr", "sweep-predictors", "incremental", "replay", "oracle"] {
        let a = tmp.path().join(format!("{study}-a"));
        let b = tmp.path().join(format!("{study}-b"));
        let ok_a = run_cli(&[study, "--preset", "smoke", "--seed", "11", "--parallel", "1"], &a);
        let ok_b = run_cli(&[study, "--preset", "smoke", "--seed", "11", "--parallel", "4"], &b);
        if !(ok_a && ok_b) {
            mismatched.push(format!("{study} failed to run"));
            continue;
        }
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        checked += fa.len();
        if fa != fb {
            mismatched.push(study.to_string());
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{checked} output files compared across 1 and 4 threads{}", if mismatched.is_empty() { String::new() } else { format!("; differ: {}", mismatched.join(", ")) }),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
        results.push((n, name, o));
    };
    record(1, "SR oracle equivalence", criterion_1());
    record(2, "GVF factorization identity", criterion_2());
    record(3, "gamma=0 degeneracy", criterion_3());
    let (cfg, sweep) = main_sweep();
    record(4, "SR-based wins at gamma=0.9", criterion_4(&cfg, &sweep));
    record(5, "incremental curve shape", criterion_5(&sweep));
    record(6, "advantage grows with gamma", criterion_6(&sweep));
    record(7, "tile coder bound", criterion_7());
    record(8, "replay trend", criterion_8());
    record(9, "scaling formulas", criterion_9());
    record(10, "normalization properties", criterion_10());
    record(11, "determinism", criterion_11());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
