//! `esplab`: pair tests, sweeps and diagnostics for leaky echo state networks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use esplab_core::activations::{ActivationSpec, Family};
use esplab_core::analysis::{estimate_lipschitz, write_lipschitz_csv};
use esplab_core::config::{Config, OracleInit};
use esplab_core::esp::{enumerate_quantized_attractors, run_pair, InitSet, TrajectoryPairResult};
use esplab_core::reservoir::{build_reservoir, eigenvalues, ReservoirConfig};
use esplab_core::sweep::{self, Format, PhaseDiagram, SweepGrid};
use esplab_core::{io, rng};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "esplab",
    version,
    about = "Echo state property experiments for fractal and baseline activations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set sweep.trials_per_cell=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(
        long,
        global = true,
        env = "ESPLAB_OUT",
        default_value = "esplab-out",
        value_name = "DIR"
    )]
    out: PathBuf,

    /// Worker threads for sweeps (defaults to the number of cores).
    #[arg(long, global = true, value_name = "N")]
    parallelism: Option<usize>,

    /// Continue runs unconverged at the horizon up to the extended horizon.
    #[arg(long, global = true)]
    extended_horizon: bool,

    /// Use the full trial and seed counts instead of the desk-scale defaults.
    #[arg(long, global = true)]
    full_paper_scale: bool,

    /// Master seed. Sweeps use seeds S, S+1, ... keeping their seed count.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pair-of-trajectories convergence test for one configuration.
    EspTest,
    /// Phase diagram over rho, leak, N, activation and input distribution.
    Sweep,
    /// Convergence against reservoir size at fixed rho and leak.
    Scaling,
    /// Convergence at very large spectral radii.
    ExtremeRho,
    /// Finite-difference Lipschitz estimates per activation.
    Lipschitz,
    /// Build a reservoir and write its spectrum.
    VerifySpectral {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Enumerate limit cycles of a small leak-free quantized reservoir.
    Oracle,
    /// Sample activation curves on a regular grid.
    Curves {
        /// Only this family (default: every family in the config).
        #[arg(long)]
        family: Option<Family>,
    },
}

impl Cli {
    fn load_config(&self) -> Result<Config> {
        let mut c = Config::load(self.config.as_deref(), &self.overrides)?;
        if self.extended_horizon {
            c.esp.extend = true;
            for g in [&mut c.sweep, &mut c.scaling, &mut c.extreme_rho] {
                g.extend = true;
            }
        }
        if self.full_paper_scale {
            c.esp.trials = 1000;
            for g in [&mut c.sweep, &mut c.extreme_rho] {
                g.trials_per_cell = 50;
                g.seeds = (0..5).collect();
            }
            c.scaling.trials_per_cell = 1000;
            c.scaling.seeds = vec![0];
        }
        if let Some(s) = self.seed {
            c.esp.seed = s;
            for g in [&mut c.sweep, &mut c.scaling, &mut c.extreme_rho] {
                g.seeds = (0..g.seeds.len() as u64).map(|k| s.wrapping_add(k)).collect();
            }
            c.lipschitz.seed = s;
            c.spectral.seed = s;
            c.oracle.seed = s;
            c.curves.seed = s;
        }
        Ok(c)
    }

    fn parallelism(&self) -> Result<usize> {
        match self.parallelism {
            Some(0) => bail!("--parallelism must be at least 1"),
            Some(p) => Ok(p),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

#[derive(Serialize)]
struct TrialRecord<'a> {
    trial: usize,
    trial_seed: u64,
    #[serde(flatten)]
    result: &'a TrajectoryPairResult,
}

fn esp_test(config: &Config, out: &Path) -> Result<()> {
    let spec = config.esp.to_spec();
    spec.validate()?;
    let traces = out.join("traces");
    io::create_dir_all(&traces)?;
    let mut records = Vec::with_capacity(spec.trials);
    for trial in 0..spec.trials {
        let seed = rng::derive_seed(&[config.esp.seed, trial as u64]);
        let r = run_pair(&spec, seed)?;
        r.write_trace_csv(&traces.join(format!("trial_{trial:04}.csv")))?;
        records.push((trial, seed, r));
    }
    let mut jsonl = String::new();
    for (trial, trial_seed, result) in &records {
        let rec = TrialRecord {
            trial: *trial,
            trial_seed: *trial_seed,
            result,
        };
        jsonl.push_str(&serde_json::to_string(&rec)?);
        jsonl.push('\n');
    }
    io::write_atomic(&out.join("esp_test.jsonl"), jsonl.as_bytes())?;

    let converged: Vec<f64> = records
        .iter()
        .filter_map(|(_, _, r)| r.convergence_time.map(|t| t as f64))
        .collect();
    let diverged = records.iter().filter(|(_, _, r)| r.diverged).count();
    let median = median(converged.clone());
    println!(
        "{} n={} rho={} leak={}: {}/{} converged, {} diverged, median convergence time {}",
        spec.activation,
        spec.reservoir.n,
        spec.reservoir.rho_target,
        spec.reservoir.leak,
        converged.len(),
        records.len(),
        diverged,
        io::fmt_opt(median)
    );
    Ok(())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(esplab_core::analysis::percentile(&v, 0.5))
}

fn print_cells(d: &PhaseDiagram) {
    for c in &d.cells {
        println!(
            "{} {} n={} rho={} leak={}: fraction {:.3} ({} converged, {} unconverged, {} diverged), mean time {}",
            c.activation,
            c.distribution,
            c.n,
            c.rho,
            c.leak,
            c.convergence_fraction,
            c.converged_count,
            c.unconverged_count,
            c.diverged_count,
            io::fmt_opt(c.mean_convergence_time)
        );
    }
    if !d.metadata.complete {
        eprintln!(
            "incomplete: {}/{} cells ({})",
            d.metadata.completed_cells,
            d.metadata.total_cells,
            d.metadata.note.as_deref().unwrap_or("stopped")
        );
    }
}

enum Scan {
    Sweep,
    Scaling,
    ExtremeRho,
}

/// Runs a grid scan and writes its artifacts. Returns whether it completed.
fn scan(kind: Scan, config: &Config, out: &Path, parallelism: usize, cancel: &AtomicBool) -> Result<bool> {
    let (grid, stem): (&SweepGrid, &str) = match kind {
        Scan::Sweep => (&config.sweep, "phase_diagram"),
        Scan::Scaling => (&config.scaling, "scaling"),
        Scan::ExtremeRho => (&config.extreme_rho, "extreme_rho"),
    };
    let d = match kind {
        Scan::Sweep => sweep::run_sweep(grid, parallelism, Some(cancel))?,
        Scan::Scaling => sweep::scaling_run(grid, parallelism, Some(cancel))?,
        Scan::ExtremeRho => sweep::extreme_rho_run(grid, parallelism, Some(cancel))?,
    };
    io::create_dir_all(out)?;
    sweep::emit(&d, Format::Csv, &out.join(format!("{stem}.csv")))?;
    sweep::emit(&d, Format::Json, &out.join(format!("{stem}.json")))?;
    match kind {
        Scan::Sweep => {
            sweep::emit_heatmaps(&d, &out.join("heatmaps"))?;
        }
        Scan::Scaling | Scan::ExtremeRho => {
            io::write_atomic(
                &out.join(format!("{stem}_summary.csv")),
                sweep::summary_csv(&d).as_bytes(),
            )?;
        }
    }
    print_cells(&d);
    Ok(d.metadata.complete)
}

fn lipschitz(config: &Config, out: &Path) -> Result<()> {
    let l = &config.lipschitz;
    let domain = (l.domain[0], l.domain[1]);
    let mut rows = Vec::with_capacity(l.activations.len());
    for spec in &l.activations {
        let stats = estimate_lipschitz(spec, l.epsilon, l.samples, domain, l.seed)?;
        println!(
            "{spec}: max {:.6} median {:.6} p95 {:.6}",
            stats.max, stats.median, stats.p95
        );
        rows.push((*spec, stats));
    }
    io::create_dir_all(out)?;
    write_lipschitz_csv(&rows, &out.join("lipschitz.csv"))?;
    Ok(())
}

fn verify_spectral(config: &Config, out: &Path, n: Option<usize>, rho: Option<f64>) -> Result<()> {
    let s = &config.spectral;
    let rc = ReservoirConfig {
        n: n.unwrap_or(s.n),
        rho_target: rho.unwrap_or(s.rho),
        density: s.density,
        seed: s.seed,
        ..ReservoirConfig::default()
    };
    let m = build_reservoir(&rc)?;
    let ev = eigenvalues(m.w_res())?;
    let max_modulus = ev.iter().map(|&(re, im)| re.hypot(im)).fold(0.0, f64::max);
    io::create_dir_all(out)?;
    let body = io::csv(
        "re,im",
        ev.iter().map(|&(re, im)| [io::fmt_f64(re), io::fmt_f64(im)]),
    );
    io::write_atomic(&out.join("eigenvalues.csv"), body.as_bytes())?;
    m.write_matrix_csv(&out.join("w_res.csv"))?;
    println!(
        "n={} target rho={} achieved rho={} relative error {:.2e} ({} redraws)",
        rc.n,
        rc.rho_target,
        max_modulus,
        (max_modulus - rc.rho_target).abs() / rc.rho_target,
        m.redraws()
    );
    Ok(())
}

fn oracle(config: &Config, out: &Path) -> Result<()> {
    let o = &config.oracle;
    let m = build_reservoir(&ReservoirConfig {
        n: o.n,
        rho_target: o.rho,
        leak: 1.0,
        density: o.density,
        input_scaling: o.input_scaling,
        input_dim: 1,
        seed: o.seed,
    })?;
    let cycle: Vec<Vec<f64>> = o.input_cycle.iter().map(|&u| vec![u]).collect();
    let inits = match o.init {
        OracleInit::Exhaustive => InitSet::Exhaustive,
        OracleInit::Random => InitSet::Random {
            count: o.random_inits,
            seed: o.seed,
        },
    };
    let report = enumerate_quantized_attractors(&m, &o.activation, &cycle, &inits, o.budget)?;
    io::create_dir_all(out)?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    io::write_atomic(&out.join("attractors.json"), body.as_bytes())?;
    let lengths: Vec<String> = report.cycles.iter().map(|c| c.len().to_string()).collect();
    println!(
        "{} n={}: {} cycle(s) of length [{}] from {} initial conditions, {} distinct states; unique: {}",
        o.activation,
        o.n,
        report.cycles.len(),
        lengths.join(", "),
        report.initial_conditions,
        report.distinct_states,
        report.unique
    );
    Ok(())
}

fn curves(config: &Config, out: &Path, family: Option<Family>) -> Result<()> {
    let c = &config.curves;
    if c.points < 2 || c.lo.partial_cmp(&c.hi) != Some(std::cmp::Ordering::Less) {
        bail!("curves need at least two points and lo < hi");
    }
    let specs: Vec<ActivationSpec> = match family {
        Some(f) => vec![c
            .activations
            .iter()
            .copied()
            .find(|s| s.family() == f)
            .unwrap_or_else(|| ActivationSpec::new(f))],
        None => c.activations.clone(),
    };
    let dir = out.join("curves");
    io::create_dir_all(&dir)?;
    let step = (c.hi - c.lo) / (c.points - 1) as f64;
    let xs: Vec<f64> = (0..c.points).map(|i| c.lo + step * i as f64).collect();
    for spec in specs {
        let mut noise = rng::stream(c.seed);
        let ys = spec.apply_elementwise(&xs, Some(&mut noise))?;
        let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        let path = dir.join(format!("{}.csv", spec.family()));
        io::write_atomic(&path, io::xy_csv("x,value", &xs, &ys).as_bytes())?;
        println!(
            "{spec}: {} points, range [{lo}, {hi}] -> {}",
            xs.len(),
            path.display()
        );
    }
    Ok(())
}

fn run(cli: Cli, cancel: &AtomicBool) -> Result<bool> {
    let config = cli.load_config().context("loading configuration")?;
    let parallelism = cli.parallelism()?;
    let out = cli.out.as_path();
    match cli.command {
        Command::EspTest => esp_test(&config, out)?,
        Command::Sweep => return scan(Scan::Sweep, &config, out, parallelism, cancel),
        Command::Scaling => return scan(Scan::Scaling, &config, out, parallelism, cancel),
        Command::ExtremeRho => return scan(Scan::ExtremeRho, &config, out, parallelism, cancel),
        Command::Lipschitz => lipschitz(&config, out)?,
        Command::VerifySpectral { n, rho } => verify_spectral(&config, out, n, rho)?,
        Command::Oracle => oracle(&config, out)?,
        Command::Curves { family } => curves(&config, out, family)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        eprintln!("warning: could not install interrupt handler: {e}");
    }
    match run(cli, &cancel) {
        Ok(true) => ExitCode::SUCCESS,
        // Partial results were written and flagged incomplete.
        Ok(false) if cancel.load(Ordering::SeqCst) => ExitCode::from(130),
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
