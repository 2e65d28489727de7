use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sr_gvf::error::{Error, Result};
use sr_gvf::gridworld::GridMap;
use sr_gvf::harness::grid::{resolve_incremental_alphas, run_incremental_curves_with, run_predictor_sweep_with, resolve_sr_alphas};
use sr_gvf::harness::{output, run_replay_experiment, run_sr_sweep, seed_tree, with_threads, ExperimentConfig, GridReference, GridSetup};
use sr_gvf::oracle::{scaling_weights, ReferenceHeader, ReferenceTable};
use sr_gvf::replay::synthetic_dataset;
use sr_gvf::signals::write_specs;

#[derive(Parser)]
#[command(name = "srgvf", version, about = "SR-based GVF learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; unset keys take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset: full, desk or smoke.
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// SR error as a function of step-size for each discount.
    SweepSr(Common),
    /// Direct vs SR-based NMSE over step-sizes and discounts.
    SweepPredictors(Common),
    /// Per-episode learning curves with a fixed activation order.
    Incremental(Common),
    /// Replay a sensor dataset (or synthetic data) through both methods.
    Replay(Common),
    /// Write reference SR and signal values for each discount.
    Oracle(Common),
    /// Weight counts of both methods for f discounts and h predictors.
    Scaling {
        #[arg(long)]
        f: u64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        states: u64,
    },
    /// Write a synthetic two-joint dataset CSV.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 21_600)]
        steps: usize,
    },
    /// Write a map file: the bundled maze, or an open W×H grid.
    GenMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let base = ExperimentConfig::preset(&common.preset)?;
            let mut table: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
            let user: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            table.extend(user);
            ExperimentConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)?
        }
        None => ExperimentConfig::preset(&common.preset)?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(p) = common.parallel {
        cfg.parallel = p;
    }
    if let Some(o) = &common.out {
        cfg.out = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn oracle(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let setup = GridSetup::from_config(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let signals_path = dir.join("signals.jsonl");
    write_specs(&setup.signals, std::io::BufWriter::new(std::fs::File::create(&signals_path)?))?;
    files.push(signals_path);
    let n = setup.state_count();
    let episodes = match cfg.reference {
        sr_gvf::harness::ReferenceKind::Analytic => (0, 0),
        sr_gvf::harness::ReferenceKind::MonteCarlo => (cfg.mc_sr_episodes, cfg.mc_signal_episodes),
    };
    for &gamma in &cfg.gammas {
        let r = GridReference::for_config(&setup, gamma, cfg)?;
        let header = |episodes| ReferenceHeader {
            map_hash: setup.map.content_hash(),
            gamma,
            epsilon: cfg.epsilon,
            episodes,
            seed: cfg.seed,
        };
        let known = |v: Vec<f64>| if v.iter().any(|x| x.is_nan()) { None } else { Some(v) };
        let mut sr = ReferenceTable::from_analytic(&setup.map, header(episodes.0), (0..n).map(|j| format!("psi_{j}")).collect(), |s| {
            r.psi[s * n..(s + 1) * n].to_vec()
        });
        let mut sig = ReferenceTable::from_analytic(
            &setup.map,
            header(episodes.1),
            (0..setup.signals.len()).map(|i| format!("signal_{i}")).collect(),
            |s| r.values.iter().map(|v| v[s]).collect(),
        );
        for row in sr.rows.iter_mut().chain(sig.rows.iter_mut()) {
            row.values = row.values.take().and_then(known);
        }
        for (name, table) in [("sr", &sr), ("signals", &sig)] {
            let path = dir.join(format!("reference_{name}_gamma{gamma}.csv"));
            table.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            files.push(path);
        }
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scaling { f, h, states } => {
            let c = scaling_weights(f, h, states)?;
            println!("f,h,states,direct,sr,crossover_h");
            println!("{f},{h},{states},{},{},{}", c.direct, c.sr, c.crossover_h);
            Ok(())
        }
        Command::GenDataset { common, steps } => {
            let cfg = load(&common)?;
            let ds = synthetic_dataset(&sr_gvf::replay::SyntheticConfig { steps, ..cfg.synthetic_config(seed_tree(cfg.seed, 0, "dataset")) })?;
            let dir = PathBuf::from(&cfg.out);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("dataset.csv");
            ds.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            report(&[path]);
            Ok(())
        }
        Command::GenMap { common, width, height } => {
            let cfg = load(&common)?;
            let map = match (width, height) {
                (Some(w), Some(h)) => GridMap::open(w, h)?,
                (None, None) => GridMap::dayan(),
                _ => return Err(Error::Config("give both --width and --height, or neither".into())),
            };
            let dir = PathBuf::from(&cfg.out);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("map.map");
            std::fs::write(&path, map.to_text())?;
            report(&[path]);
            Ok(())
        }
        Command::SweepSr(c) => study(&c, Study::SweepSr),
        Command::SweepPredictors(c) => study(&c, Study::SweepPredictors),
        Command::Incremental(c) => study(&c, Study::Incremental),
        Command::Replay(c) => study(&c, Study::Replay),
        Command::Oracle(c) => study(&c, Study::Oracle),
    }
}

#[derive(Clone, Copy)]
enum Study {
    SweepSr,
    SweepPredictors,
    Incremental,
    Replay,
    Oracle,
}

fn study(common: &Common, which: Study) -> Result<()> {
    let cfg = load(common)?;
    let dir = PathBuf::from(&cfg.out);
    let files = with_threads(cfg.parallel, || -> Result<Vec<PathBuf>> {
        let mut files = vec![output::write_config(&dir, &cfg)?];
        match which {
            Study::SweepSr => files.push(output::write_sr_sweep(&dir, &cfg, &run_sr_sweep(&cfg)?)?),
            Study::SweepPredictors => {
                let (sr_alphas, sr_sweep) = resolve_sr_alphas(&cfg)?;
                if let Some(s) = &sr_sweep {
                    files.push(output::write_sr_sweep(&dir, &cfg, s)?);
                }
                let sweep = run_predictor_sweep_with(&cfg, &sr_alphas)?;
                if sweep.diverged_cells() > 0 {
                    log::warn!("{} sweep cells diverged", sweep.diverged_cells());
                }
                files.extend(output::write_predictor_sweep(&dir, &cfg, &sweep)?);
            }
            Study::Incremental => {
                let (sr, direct, cumulant) = resolve_incremental_alphas(&cfg)?;
                let curves = run_incremental_curves_with(&cfg, sr, direct, cumulant)?;
                files.extend(output::write_incremental(&dir, &cfg, &curves)?);
            }
            Study::Replay => files.extend(output::write_replay(&dir, &cfg, &run_replay_experiment(&cfg)?)?),
            Study::Oracle => files.extend(oracle(&cfg, &dir)?),
        }
        Ok(files)
    })
    .map_err(|e| Error::Config(format!("thread pool: {e}")))??;
    report(&files);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
