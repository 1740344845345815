//! Command-line front end: `synth`, `invert`, `gradcheck`, `probe` and
//! `export`. Every command archives the resolved configuration next to its
//! outputs, with command-line overrides folded in, so re-running from the
//! snapshot reproduces the run.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::acquisition::{add_noise, synthesis_grid, synthesize};
use crate::analysis::{self, ProbeGeometry, DEFAULT_STEPS};
use crate::config::RunConfig;
use crate::error::{FwiError, Result};
use crate::grid::relative_l2_error;
use crate::inversion::run_inversion_with;
use crate::io;
use crate::misfit::MisfitProblem;
use crate::model::PiecewiseLinearModel;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "CAUCHY_FWI_THREADS";

const SNAPSHOT: &str = "resolved_config.toml";

#[derive(Parser, Debug)]
#[command(name = "cauchy-fwi", version, about = "Frequency-domain FWI from dual-sensor Cauchy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize Cauchy data in the configured phantom.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Synthesize on the inversion grid itself instead of at half spacing.
        #[arg(long)]
        inverse_crime: bool,
        /// Override `noise.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `noise.snr_db` (`inf` for clean data).
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Reconstruct the speed model from a data file.
    Invert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Simulate with the configured `sim_*` source lattice.
        #[arg(long)]
        decouple_sources: bool,
        /// Warm start from a previous model (needs `--initial-partition`).
        #[arg(long, requires = "initial_partition")]
        initial_model: Option<PathBuf>,
        #[arg(long, requires = "initial_model")]
        initial_partition: Option<PathBuf>,
        /// Override `optimizer.n_iter_max`.
        #[arg(long)]
        max_iter: Option<usize>,
        /// Also write the final per-pair |S|² table.
        #[arg(long)]
        dump_pairs: bool,
    },
    /// Compare the adjoint gradient with finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical stability probe over random model pairs.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a model as a nodal speed field.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `vtk` (structured points) or `csv`.
        #[arg(long, default_value = "vtk")]
        format: String,
        /// Gaussian smoothing in node units.
        #[arg(long)]
        sigma: Option<f64>,
    },
}

/// Runs the command line; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join(SNAPSHOT), cfg.to_toml())?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            config,
            out,
            inverse_crime,
            seed,
            snr_db,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.run.inverse_crime |= inverse_crime;
            if let Some(s) = seed {
                cfg.noise.seed = s;
            }
            if let Some(s) = snr_db {
                cfg.noise.snr_db = s;
            }
            cfg.validate()?;
            fs::create_dir_all(&out)?;
            write_snapshot(&cfg, &out)?;
            synth(&cfg, &out)
        }
        Command::Invert {
            config,
            data,
            out,
            decouple_sources,
            initial_model,
            initial_partition,
            max_iter,
            dump_pairs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.run.decouple_sources |= decouple_sources;
            if let Some(n) = max_iter {
                cfg.optimizer.n_iter_max = n;
                cfg.optimizer.n_iter_min = cfg.optimizer.n_iter_min.min(n);
            }
            cfg.validate()?;
            fs::create_dir_all(&out)?;
            write_snapshot(&cfg, &out)?;
            let warm = initial_model.zip(initial_partition);
            invert(&cfg, &data, &out, warm.as_ref(), dump_pairs)
        }
        Command::Gradcheck {
            config,
            probes,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                write_snapshot(&cfg, dir)?;
            }
            gradcheck(&cfg, probes, seed, out.as_deref())
        }
        Command::Probe {
            config,
            pairs,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            fs::create_dir_all(&out)?;
            write_snapshot(&cfg, &out)?;
            probe(&cfg, pairs, seed, &out)
        }
        Command::Export {
            config,
            model,
            partition,
            out,
            format,
            sigma,
        } => {
            let cfg = RunConfig::load(&config)?;
            let grid = cfg.grid()?;
            let m = io::read_model_and_partition(&model, &partition, &grid, cfg.bounds()?)?;
            analysis::export_field(&m.evaluate_unchecked(), &format, sigma, &out)?;
            let mut snap = out.as_os_str().to_owned();
            snap.push(".config.toml");
            fs::write(PathBuf::from(snap), cfg.to_toml())?;
            Ok(())
        }
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let fine = synthesis_grid(&grid, cfg.run.inverse_crime)?;
    let phys = cfg.physics()?;
    // Receivers sit on inversion-grid nodes, which are also nodes of the
    // finer synthesis grid.
    let receivers = cfg.receivers(&grid)?;
    let obs = cfg.observation_sources()?;
    let truth = cfg.phantom(&fine);
    let clean = synthesize(&truth, &obs, &receivers, &phys)?;
    let data = add_noise(&clean, cfg.noise.snr_db, cfg.noise.seed)?;
    io::write_data(&data, &out.join("data.txt"))?;
    let truth_coarse = cfg.phantom(&grid);
    fs::write(
        out.join("truth.vtk"),
        io::format_real_field(&truth_coarse, io::FieldFormat::StructuredPoints),
    )?;
    println!(
        "synthesized {} sources × {} receivers on {} (snr {} dB, seed {})",
        data.n_sources(),
        data.n_receivers(),
        fine.describe(),
        cfg.noise.snr_db,
        cfg.noise.seed
    );
    Ok(())
}

fn invert(
    cfg: &RunConfig,
    data_path: &Path,
    out: &Path,
    warm: Option<&(PathBuf, PathBuf)>,
    dump_pairs: bool,
) -> Result<()> {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let phys = cfg.physics()?;
    let bounds = cfg.bounds()?;
    let data = io::read_data_checked(data_path, phys.freq_hz)?;
    let sim = cfg.simulation_sources(cfg.run.decouple_sources)?;
    let problem = MisfitProblem::new(grid, phys, data, sim)?;
    let partition = cfg.partition(&grid)?;

    let start_field = match warm {
        Some((model, part)) => io::read_model_and_partition(model, part, &grid, bounds)?.evaluate_unchecked(),
        None => cfg.background(&grid),
    };
    let initial = PiecewiseLinearModel::fit(&start_field, partition.clone(), bounds)?;
    io::write_model(&initial, &out.join("initial_model.txt"))?;
    io::write_partition(&partition, &out.join("partition.txt"))?;

    let mut log = File::create(out.join("iterations.csv"))?;
    writeln!(log, "{}", io::ITERATION_LOG_HEADER)?;
    let mut log_error = None;
    let outcome = run_inversion_with(&problem, &initial, &cfg.optim(), |r| {
        let line = io::format_iteration_row(r);
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
        println!("{line}");
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    io::write_model(&outcome.model, &out.join("model.txt"))?;

    let truth = cfg.phantom(&grid);
    let e0 = relative_l2_error(&truth, &initial.evaluate_unchecked())?;
    let e1 = relative_l2_error(&truth, &outcome.model.evaluate_unchecked())?;
    if dump_pairs {
        let report = problem.evaluate(&outcome.model.evaluate()?)?;
        fs::write(out.join("pairs.csv"), io::format_pair_table(&report.gap))?;
    }
    let summary = format!(
        "termination: {}\niterations: {}\ninitial_J: {:.16e}\nfinal_J: {:.16e}\n\
         initial_E_rel: {e0:.6}\nfinal_E_rel: {e1:.6}\nsimulation_sources: {}\nobservation_sources: {}\nwall_time_s: {:.3}\n",
        outcome.termination,
        outcome.records.len(),
        outcome.records.first().map_or(f64::NAN, |r| r.j),
        outcome.final_j.unwrap_or(f64::NAN),
        problem.sim_sources().len(),
        problem.data().n_sources(),
        started.elapsed().as_secs_f64()
    );
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if let crate::inversion::Termination::Failed(msg) = &outcome.termination {
        return Err(FwiError::Numeric(format!("inversion stopped early: {msg}")));
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig, probes: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let grid = cfg.grid()?;
    let phys = cfg.physics()?;
    let receivers = cfg.receivers(&grid)?;
    let data = synthesize(&cfg.phantom(&grid), &cfg.observation_sources()?, &receivers, &phys)?;
    let sim = cfg.simulation_sources(cfg.run.decouple_sources)?;
    let problem = MisfitProblem::new(grid, phys, data, sim)?;
    let partition = cfg.partition(&grid)?;
    let report = analysis::gradcheck(&problem, &partition, cfg.bounds()?, probes, &DEFAULT_STEPS, seed)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(dir) = out {
        fs::write(dir.join("gradcheck.txt"), &table)?;
    }
    if report.passed() {
        println!("PASS: max relative error {:.2e}", report.max_rel_error());
        Ok(())
    } else {
        Err(FwiError::Numeric(format!(
            "gradient check failed: max relative error {:.2e} exceeds {:.0e}",
            report.max_rel_error(),
            report.tolerance
        )))
    }
}

fn probe(cfg: &RunConfig, pairs: usize, seed: u64, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let geometry = ProbeGeometry {
        receivers: cfg.receivers(&grid)?,
        obs: cfg.observation_sources()?,
        sim: cfg.simulation_sources(cfg.run.decouple_sources)?,
    };
    let partition = cfg.partition(&grid)?;
    let report = analysis::probe_stability(&partition, cfg.bounds()?, &cfg.physics()?, &geometry, pairs, seed)?;
    fs::write(out.join("probe.csv"), report.to_csv())?;
    let flagged = report.flagged().count();
    println!(
        "pairs: {} (identical excluded: {}), ratio min {:.6e} max {:.6e}, flagged: {flagged}",
        report.pairs.len(),
        report.excluded_identical,
        report.min_ratio,
        report.max_ratio
    );
    Ok(())
}
