//! CSV writers for every study. Each file opens with a `#` block naming the
//! experiment, the config hash and the master seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::grid::{IncrementalCurves, PredictorSweep, SrSweep};
use crate::error::Result;
use crate::metrics::Method;
use crate::replay::ReplayRun;

pub fn write_header<W: Write>(out: &mut W, experiment: &str, cfg: &ExperimentConfig) -> Result<()> {
    writeln!(out, "# experiment={experiment}")?;
    writeln!(out, "# config_hash={}", cfg.hash())?;
    writeln!(out, "# seed={}", cfg.seed)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `name` in `dir` with the header block followed by `body`.
fn with_file(
    dir: &Path,
    name: &str,
    experiment: &str,
    cfg: &ExperimentConfig,
    body: impl FnOnce(&mut csv::Writer<&mut BufWriter<File>>) -> Result<()>,
) -> Result<PathBuf> {
    let mut f = create(dir, name)?;
    write_header(&mut f, experiment, cfg)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        body(&mut w)?;
        w.flush()?;
    }
    f.flush()?;
    Ok(dir.join(name))
}

/// Also stores the config itself so a run can be reproduced from its output.
pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut f = create(dir, "config.toml")?;
    f.write_all(cfg.to_toml().as_bytes())?;
    f.flush()?;
    Ok(dir.join("config.toml"))
}

pub fn write_sr_sweep(dir: &Path, cfg: &ExperimentConfig, sweep: &SrSweep) -> Result<PathBuf> {
    with_file(dir, "sr_sweep.csv", "sweep-sr", cfg, |w| {
        w.write_record(["gamma", "alpha", "mean_error", "ci95", "best"])?;
        for c in &sweep.cells {
            let best = sweep.best_alpha(c.gamma) == Some(c.alpha);
            w.write_record([
                c.gamma.to_string(),
                c.alpha.to_string(),
                c.mean.to_string(),
                c.ci95.to_string(),
                best.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_predictor_sweep(dir: &Path, cfg: &ExperimentConfig, sweep: &PredictorSweep) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    files.push(with_file(dir, "predictor_sweep.csv", "sweep-predictors", cfg, |w| {
        w.write_record(["gamma", "alpha", "signal_id", "method", "mse", "nmse"])?;
        for &g in &sweep.gammas {
            for &a in &sweep.alphas {
                for s in 0..sweep.signals {
                    for m in Method::BOTH {
                        let (mse, nmse) = sweep.signal_mean(g, a, s, m);
                        w.write_record([
                            g.to_string(),
                            a.to_string(),
                            s.to_string(),
                            m.to_string(),
                            mse.to_string(),
                            nmse.to_string(),
                        ])?;
                    }
                }
            }
        }
        Ok(())
    })?);
    files.push(with_file(dir, "predictor_summary.csv", "sweep-predictors", cfg, |w| {
        w.write_record(["gamma", "alpha", "sr_alpha", "method", "summed_nmse", "ci95", "best", "diverged_trials"])?;
        for (gi, &g) in sweep.gammas.iter().enumerate() {
            for &a in &sweep.alphas {
                let diverged = sweep
                    .cells
                    .iter()
                    .filter(|c| c.gamma == g && c.alpha == a && c.diverged.is_some())
                    .count();
                for m in Method::BOTH {
                    let s = sweep.summed_nmse(g, a, m);
                    w.write_record([
                        g.to_string(),
                        a.to_string(),
                        sweep.sr_alphas[gi].to_string(),
                        m.to_string(),
                        s.mean.to_string(),
                        s.ci95.to_string(),
                        (sweep.best_alpha(g, m) == a).to_string(),
                        diverged.to_string(),
                    ])?;
                }
            }
        }
        Ok(())
    })?);
    files.push(with_file(dir, "win_counts.csv", "sweep-predictors", cfg, |w| {
        w.write_record(["gamma", "alpha", "direct_better", "sr_better"])?;
        for &g in &sweep.gammas {
            for &a in &sweep.alphas {
                let (d, s) = sweep.win_counts(g, a);
                w.write_record([g.to_string(), a.to_string(), d.to_string(), s.to_string()])?;
            }
        }
        Ok(())
    })?);
    Ok(files)
}

pub fn write_incremental(dir: &Path, cfg: &ExperimentConfig, c: &IncrementalCurves) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    files.push(with_file(dir, "incremental.csv", "incremental", cfg, |w| {
        w.write_record([
            "episode",
            "active_signals",
            "summed_nmse_direct",
            "ci95_direct",
            "summed_nmse_sr",
            "ci95_sr",
            "sr_error",
            "ci95_sr_error",
        ])?;
        for e in 0..c.episodes as usize {
            w.write_record([
                e.to_string(),
                c.active_at(e as u64).to_string(),
                c.summed_direct[e].mean.to_string(),
                c.summed_direct[e].ci95.to_string(),
                c.summed_sr[e].mean.to_string(),
                c.summed_sr[e].ci95.to_string(),
                c.sr_error[e].mean.to_string(),
                c.sr_error[e].ci95.to_string(),
            ])?;
        }
        Ok(())
    })?);
    files.push(with_file(dir, "incremental_signals.csv", "incremental", cfg, |w| {
        w.write_record(["episode", "signal_id", "method", "nmse"])?;
        for e in 0..c.episodes as usize {
            for &id in &c.order {
                if (e as u64) < c.activation[id] {
                    continue;
                }
                for m in Method::BOTH {
                    w.write_record([e.to_string(), id.to_string(), m.to_string(), c.nmse(id, m, e).to_string()])?;
                }
            }
        }
        Ok(())
    })?);
    Ok(files)
}

pub fn write_replay(dir: &Path, cfg: &ExperimentConfig, runs: &[ReplayRun]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        let name = format!("replay_records_run{r}.csv");
        let mut f = create(dir, &name)?;
        write_header(&mut f, "replay", cfg)?;
        run.write_records(&mut f)?;
        f.flush()?;
        files.push(dir.join(name));

        let nmse = run.running_nmse()?;
        files.push(with_file(dir, &format!("replay_metrics_run{r}.csv"), "replay", cfg, |w| {
            w.write_record(["t", "signal_id", "method", "running_nmse"])?;
            for x in &nmse {
                for (m, v) in [(Method::Direct, x.direct), (Method::Sr, x.sr)] {
                    w.write_record([x.t.to_string(), x.signal_id.to_string(), m.to_string(), v.to_string()])?;
                }
            }
            Ok(())
        })?);
        files.push(with_file(dir, &format!("replay_summed_run{r}.csv"), "replay", cfg, |w| {
            w.write_record(["t", "active_signals", "summed_nmse_direct", "summed_nmse_sr"])?;
            let mut i = 0;
            while i < nmse.len() {
                let t = nmse[i].t;
                let (mut d, mut s, mut k) = (0.0, 0.0, 0);
                while i < nmse.len() && nmse[i].t == t {
                    d += nmse[i].direct;
                    s += nmse[i].sr;
                    k += 1;
                    i += 1;
                }
                w.write_record([t.to_string(), k.to_string(), d.to_string(), s.to_string()])?;
            }
            Ok(())
        })?);
    }
    files.push(with_file(dir, "replay_final.csv", "replay", cfg, |w| {
        w.write_record(["run", "signal_id", "name", "activation", "mse_direct", "mse_sr", "nmse_direct", "nmse_sr"])?;
        for (r, run) in runs.iter().enumerate() {
            for (slot, (d, s)) in run.slots.iter().zip(run.final_mse()?) {
                let pair = crate::metrics::replay_nmse(d, s)?;
                w.write_record([
                    r.to_string(),
                    slot.signal_id.to_string(),
                    slot.name.clone(),
                    slot.activation.to_string(),
                    d.to_string(),
                    s.to_string(),
                    pair.direct.to_string(),
                    pair.sr.to_string(),
                ])?;
            }
        }
        Ok(())
    })?);
    Ok(files)
}
