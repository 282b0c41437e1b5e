//! Deterministic multi-seed parameter sweeps.
//!
//! Work is split into units of (reservoir group, seed, trial). A unit draws
//! one reservoir, one input stream and one initial state, then runs every
//! activation and leak rate on them, so cells that differ only in activation
//! or leak are compared on identical draws. Every random stream is keyed by
//! the unit, never by the worker that runs it, and results are folded in grid
//! order, so the output does not depend on the thread count.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activations::{ActivationSpec, Family};
use crate::error::{EspError, Result};
use crate::esp::{run_pair_with, EspTestSpec, TrajectoryPairResult};
use crate::io;
use crate::reservoir::{build_reservoir, InputDistribution, ReservoirConfig};
use crate::rng;

pub const PAPER_RHO_VALUES: [f64; 10] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0, 3.0, 4.0, 5.0];
pub const PAPER_LEAK_VALUES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const PAPER_N_VALUES: [usize; 7] = [1, 10, 50, 100, 500, 1000, 2000];
pub const EXTREME_RHO_VALUES: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 75.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub rho_values: Vec<f64>,
    pub leak_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub activations: Vec<ActivationSpec>,
    pub distributions: Vec<InputDistribution>,
    pub trials_per_cell: usize,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub threshold: f64,
    pub density: f64,
    pub input_scaling: f64,
    pub input_dim: usize,
    pub extended_horizon: usize,
    pub extend: bool,
}

impl Default for SweepGrid {
    /// The (rho, leak) phase-diagram grid at N = 100, desk-scale counts.
    fn default() -> Self {
        let base = ReservoirConfig::default();
        SweepGrid {
            rho_values: PAPER_RHO_VALUES.to_vec(),
            leak_values: PAPER_LEAK_VALUES.to_vec(),
            n_values: vec![100],
            activations: Family::ALL.into_iter().map(ActivationSpec::new).collect(),
            distributions: vec![InputDistribution::Gaussian],
            trials_per_cell: 20,
            seeds: vec![0, 1, 2],
            horizon: 200,
            threshold: 0.1,
            density: base.density,
            input_scaling: base.input_scaling,
            input_dim: base.input_dim,
            extended_horizon: 2000,
            extend: false,
        }
    }
}

impl SweepGrid {
    /// Network-size scan at rho = 0.95, a = 0.7.
    pub fn scaling_default() -> Self {
        SweepGrid {
            rho_values: vec![0.95],
            leak_values: vec![0.7],
            n_values: PAPER_N_VALUES.to_vec(),
            seeds: vec![0],
            ..SweepGrid::default()
        }
    }

    /// Large spectral radii at N = 100, a = 0.7 for the bounded activations
    /// that tolerate them.
    pub fn extreme_rho_default() -> Self {
        SweepGrid {
            rho_values: EXTREME_RHO_VALUES.to_vec(),
            leak_values: vec![0.7],
            n_values: vec![100],
            activations: [
                Family::CantorFunction,
                Family::LogisticSigmoid,
                Family::MandelbrotContinuous,
                Family::Tanh,
            ]
            .into_iter()
            .map(ActivationSpec::new)
            .collect(),
            ..SweepGrid::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes: [(&'static str, usize); 6] = [
            ("rho_values", self.rho_values.len()),
            ("leak_values", self.leak_values.len()),
            ("n_values", self.n_values.len()),
            ("activations", self.activations.len()),
            ("distributions", self.distributions.len()),
            ("seeds", self.seeds.len()),
        ];
        for (name, len) in axes {
            if len == 0 {
                return Err(EspError::invalid(name, "axis must not be empty"));
            }
        }
        if self.trials_per_cell < 1 {
            return Err(EspError::invalid("trials_per_cell", "must be at least 1"));
        }
        for &n in &self.n_values {
            for &rho in &self.rho_values {
                for &leak in &self.leak_values {
                    self.reservoir_config(n, rho, leak, 0).validate()?;
                }
            }
        }
        for a in &self.activations {
            a.validate()?;
        }
        self.esp_spec(
            self.activations[0],
            InputDistribution::Gaussian,
            self.reservoir_config(1, 1.0, 0.5, 0),
        )
        .validate()
    }

    pub fn cell_count(&self) -> usize {
        self.activations.len()
            * self.distributions.len()
            * self.n_values.len()
            * self.rho_values.len()
            * self.leak_values.len()
    }

    fn reservoir_config(&self, n: usize, rho: f64, leak: f64, seed: u64) -> ReservoirConfig {
        ReservoirConfig {
            n,
            rho_target: rho,
            leak,
            density: self.density,
            input_scaling: self.input_scaling,
            input_dim: self.input_dim,
            seed,
        }
    }

    fn esp_spec(
        &self,
        activation: ActivationSpec,
        dist: InputDistribution,
        reservoir: ReservoirConfig,
    ) -> EspTestSpec {
        EspTestSpec {
            reservoir,
            activation,
            distribution: dist,
            horizon: self.horizon,
            extended_horizon: self.extended_horizon,
            extend: self.extend,
            threshold: self.threshold,
            trials: self.trials_per_cell,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("grid serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Seed for one trial. Depends on the reservoir group (everything that shapes
/// the reservoir and its inputs) but not on activation or leak.
pub fn trial_seed(
    seed: u64,
    trial: usize,
    n: usize,
    rho: f64,
    grid: &SweepGrid,
    dist: InputDistribution,
) -> u64 {
    let group = rng::derive_seed(&[
        n as u64,
        rho.to_bits(),
        grid.density.to_bits(),
        grid.input_scaling.to_bits(),
        grid.input_dim as u64,
        dist as u64,
    ]);
    rng::derive_seed(&[seed, trial as u64, group])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub converged: bool,
    pub convergence_time: Option<usize>,
    #[serde(with = "io::lossless_f64")]
    pub final_distance: f64,
    pub diverged: bool,
}

impl From<&TrajectoryPairResult> for TrialOutcome {
    fn from(r: &TrajectoryPairResult) -> Self {
        TrialOutcome {
            converged: r.converged,
            convergence_time: r.convergence_time,
            final_distance: r.final_distance,
            diverged: r.diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub activation: String,
    pub distribution: InputDistribution,
    pub n: usize,
    pub rho: f64,
    pub leak: f64,
    pub seed_count: usize,
    pub trials_per_cell: usize,
    pub completed_trials: usize,
    pub converged_count: usize,
    pub unconverged_count: usize,
    pub diverged_count: usize,
    pub convergence_fraction: f64,
    pub mean_convergence_time: Option<f64>,
    pub median_convergence_time: Option<f64>,
    /// Mean over non-diverged trials; infinite when every trial diverged.
    #[serde(with = "io::lossless_f64")]
    pub mean_final_distance: f64,
    pub distance_std: f64,
    /// Mean final distance of the trials that neither converged nor diverged.
    pub mean_unconverged_final_distance: Option<f64>,
    pub all_seeds_converged: bool,
}

impl CellStats {
    fn aggregate(
        grid: &SweepGrid,
        activation: &ActivationSpec,
        dist: InputDistribution,
        n: usize,
        rho: f64,
        leak: f64,
        outcomes: &[TrialOutcome],
    ) -> Self {
        let total = grid.trials_per_cell * grid.seeds.len();
        let completed = outcomes.len();
        let converged: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.converged).collect();
        let diverged_count = outcomes.iter().filter(|o| o.diverged).count();
        let unconverged: Vec<f64> = outcomes
            .iter()
            .filter(|o| !o.converged && !o.diverged)
            .map(|o| o.final_distance)
            .collect();
        let finite: Vec<f64> = outcomes
            .iter()
            .filter(|o| !o.diverged)
            .map(|o| o.final_distance)
            .collect();
        let mut times: Vec<f64> = converged
            .iter()
            .filter_map(|o| o.convergence_time.map(|t| t as f64))
            .collect();
        times.sort_by(f64::total_cmp);
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mean_final = mean(&finite).unwrap_or(f64::INFINITY);
        let distance_std = if finite.len() > 1 {
            let var =
                finite.iter().map(|d| (d - mean_final).powi(2)).sum::<f64>() / (finite.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        CellStats {
            activation: activation.to_string(),
            distribution: dist,
            n,
            rho,
            leak,
            seed_count: grid.seeds.len(),
            trials_per_cell: grid.trials_per_cell,
            completed_trials: completed,
            converged_count: converged.len(),
            unconverged_count: unconverged.len(),
            diverged_count,
            convergence_fraction: if completed > 0 {
                converged.len() as f64 / completed as f64
            } else {
                0.0
            },
            mean_convergence_time: mean(&times),
            median_convergence_time: (!times.is_empty()).then(|| crate::analysis::percentile(&times, 0.5)),
            mean_final_distance: mean_final,
            distance_std,
            mean_unconverged_final_distance: mean(&unconverged),
            all_seeds_converged: completed == total && converged.len() == total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// Short identifier derived from the config hash.
    pub run_id: String,
    pub config_hash: String,
    pub total_cells: usize,
    pub completed_cells: usize,
    pub complete: bool,
    /// Why the sweep stopped early, if it did.
    pub note: Option<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub metadata: Metadata,
    pub grid: SweepGrid,
    /// One entry per grid point, ordered activation, distribution, n, rho,
    /// leak (outermost first).
    pub cells: Vec<CellStats>,
}

impl PhaseDiagram {
    pub fn cell(&self, activation: &str, n: usize, rho: f64, leak: f64) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.activation == activation && c.n == n && c.rho == rho && c.leak == leak)
    }
}

struct Unit {
    dist_idx: usize,
    n_idx: usize,
    rho_idx: usize,
    seed_idx: usize,
    trial: usize,
}

/// Runs every cell of `grid` with `parallelism` worker threads. Setting
/// `cancel` stops scheduling new work; the diagram is then returned with
/// `complete = false` and statistics over the trials that did finish.
pub fn run_sweep(grid: &SweepGrid, parallelism: usize, cancel: Option<&AtomicBool>) -> Result<PhaseDiagram> {
    grid.validate()?;
    if parallelism < 1 {
        return Err(EspError::invalid("parallelism", "must be at least 1"));
    }
    let mut units = Vec::new();
    for dist_idx in 0..grid.distributions.len() {
        for n_idx in 0..grid.n_values.len() {
            for rho_idx in 0..grid.rho_values.len() {
                for seed_idx in 0..grid.seeds.len() {
                    for trial in 0..grid.trials_per_cell {
                        units.push(Unit {
                            dist_idx,
                            n_idx,
                            rho_idx,
                            seed_idx,
                            trial,
                        });
                    }
                }
            }
        }
    }

    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let stopped = || stop.load(Ordering::Relaxed) || cancel.is_some_and(|c| c.load(Ordering::Relaxed));

    let run_unit = |unit: &Unit| -> Option<Vec<TrialOutcome>> {
        if stopped() {
            return None;
        }
        let dist = grid.distributions[unit.dist_idx];
        let n = grid.n_values[unit.n_idx];
        let rho = grid.rho_values[unit.rho_idx];
        let seed = trial_seed(grid.seeds[unit.seed_idx], unit.trial, n, rho, grid, dist);
        let result = (|| -> Result<Vec<TrialOutcome>> {
            let m = build_reservoir(&grid.reservoir_config(n, rho, grid.leak_values[0], seed))?;
            let mut out = Vec::with_capacity(grid.activations.len() * grid.leak_values.len());
            for activation in &grid.activations {
                for &leak in &grid.leak_values {
                    let spec = grid.esp_spec(*activation, dist, grid.reservoir_config(n, rho, leak, seed));
                    out.push(TrialOutcome::from(&run_pair_with(&spec, &m, seed)?));
                }
            }
            Ok(out)
        })();
        match result {
            Ok(v) => Some(v),
            Err(e) => {
                stop.store(true, Ordering::Relaxed);
                failure
                    .lock()
                    .expect("failure lock")
                    .get_or_insert_with(|| e.to_string());
                None
            }
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| EspError::invalid("parallelism", e.to_string()))?;
    let results: Vec<Option<Vec<TrialOutcome>>> = pool.install(|| units.par_iter().map(run_unit).collect());

    // Fold into cells in grid order; within a cell trials are ordered by
    // (seed, trial) because units were generated in that order.
    let n_act = grid.activations.len();
    let n_leak = grid.leak_values.len();
    let mut cells = Vec::with_capacity(grid.cell_count());
    let mut completed_cells = 0;
    for (a_idx, activation) in grid.activations.iter().enumerate() {
        for (dist_idx, &dist) in grid.distributions.iter().enumerate() {
            for (n_idx, &n) in grid.n_values.iter().enumerate() {
                for (rho_idx, &rho) in grid.rho_values.iter().enumerate() {
                    for (l_idx, &leak) in grid.leak_values.iter().enumerate() {
                        let outcomes: Vec<TrialOutcome> = units
                            .iter()
                            .zip(&results)
                            .filter(|(u, _)| {
                                u.dist_idx == dist_idx && u.n_idx == n_idx && u.rho_idx == rho_idx
                            })
                            .filter_map(|(_, r)| r.as_ref().map(|v| v[a_idx * n_leak + l_idx]))
                            .collect();
                        let stats = CellStats::aggregate(grid, activation, dist, n, rho, leak, &outcomes);
                        if stats.completed_trials == grid.trials_per_cell * grid.seeds.len() {
                            completed_cells += 1;
                        }
                        cells.push(stats);
                    }
                }
            }
        }
    }
    debug_assert_eq!(
        cells.len(),
        n_act * grid.distributions.len() * grid.n_values.len() * grid.rho_values.len() * n_leak
    );

    let config_hash = grid.config_hash();
    let note = failure.into_inner().expect("failure lock").or_else(|| {
        cancel
            .is_some_and(|c| c.load(Ordering::Relaxed))
            .then(|| "interrupted".to_string())
    });
    let total_cells = cells.len();
    Ok(PhaseDiagram {
        metadata: Metadata {
            run_id: config_hash[..12].to_string(),
            config_hash,
            total_cells,
            completed_cells,
            complete: completed_cells == total_cells,
            note,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        grid: grid.clone(),
        cells,
    })
}

/// Sizes scan: one (rho, leak) pair, several N.
pub fn scaling_run(
    grid: &SweepGrid,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
) -> Result<PhaseDiagram> {
    if grid.rho_values.len() != 1 || grid.leak_values.len() != 1 {
        return Err(EspError::invalid(
            "scaling grid",
            "needs exactly one rho and one leak value",
        ));
    }
    run_sweep(grid, parallelism, cancel)
}

/// Large-rho scan: one N and one leak, several rho. Unbounded activations are
/// allowed; their divergences are counted, not raised.
pub fn extreme_rho_run(
    grid: &SweepGrid,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
) -> Result<PhaseDiagram> {
    if grid.n_values.len() != 1 || grid.leak_values.len() != 1 {
        return Err(EspError::invalid(
            "extreme-rho grid",
            "needs exactly one n and one leak value",
        ));
    }
    run_sweep(grid, parallelism, cancel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "activation,distribution,n,rho,leak,seed_count,trials,convergence_fraction,mean_conv_time,mean_final_distance,all_seeds_converged";

pub fn to_csv(diagram: &PhaseDiagram) -> String {
    io::csv(
        CSV_HEADER,
        diagram.cells.iter().map(|c| {
            [
                c.activation.clone(),
                c.distribution.to_string(),
                c.n.to_string(),
                io::fmt_f64(c.rho),
                io::fmt_f64(c.leak),
                c.seed_count.to_string(),
                c.trials_per_cell.to_string(),
                io::fmt_f64(c.convergence_fraction),
                io::fmt_opt(c.mean_convergence_time),
                io::fmt_f64(c.mean_final_distance),
                c.all_seeds_converged.to_string(),
            ]
        }),
    )
}

pub fn to_json(diagram: &PhaseDiagram) -> String {
    let mut s = serde_json::to_string_pretty(diagram).expect("diagram serializes");
    s.push('\n');
    s
}

/// Writes the diagram to `path`. The grid is validated first, so an invalid
/// diagram never creates a file.
pub fn emit(diagram: &PhaseDiagram, format: Format, path: &Path) -> Result<()> {
    diagram.grid.validate()?;
    if diagram.cells.len() != diagram.grid.cell_count() {
        return Err(EspError::invalid(
            "phase diagram",
            format!(
                "has {} cells, grid defines {}",
                diagram.cells.len(),
                diagram.grid.cell_count()
            ),
        ));
    }
    let body = match format {
        Format::Csv => to_csv(diagram),
        Format::Json => to_json(diagram),
    };
    io::write_atomic(path, body.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapValue {
    Fraction,
    AllConverged,
}

/// One `rho,leak,value` table per (activation, distribution, n). Returns the
/// written paths.
pub fn emit_heatmaps(diagram: &PhaseDiagram, dir: &Path) -> Result<Vec<PathBuf>> {
    diagram.grid.validate()?;
    io::create_dir_all(dir)?;
    let mut written = Vec::new();
    let g = &diagram.grid;
    for activation in &g.activations {
        let name = activation.to_string();
        for &dist in &g.distributions {
            for &n in &g.n_values {
                let cells: Vec<&CellStats> = diagram
                    .cells
                    .iter()
                    .filter(|c| c.activation == name && c.distribution == dist && c.n == n)
                    .collect();
                for (kind, suffix) in [
                    (HeatmapValue::Fraction, "fraction"),
                    (HeatmapValue::AllConverged, "all_converged"),
                ] {
                    let body = io::csv(
                        "rho,leak,value",
                        cells.iter().map(|c| {
                            let v = match kind {
                                HeatmapValue::Fraction => c.convergence_fraction,
                                HeatmapValue::AllConverged => f64::from(u8::from(c.all_seeds_converged)),
                            };
                            [io::fmt_f64(c.rho), io::fmt_f64(c.leak), io::fmt_f64(v)]
                        }),
                    );
                    let file = format!("heatmap_{}_{}_n{}_{}.csv", sanitize(&name), dist, n, suffix);
                    let path = dir.join(file);
                    io::write_atomic(&path, body.as_bytes())?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Compact per-cell table for scaling and extreme-rho runs.
pub fn summary_csv(diagram: &PhaseDiagram) -> String {
    io::csv(
        "activation,distribution,n,rho,leak,convergence_fraction,converged,unconverged,diverged,mean_conv_time,median_conv_time,mean_final_distance,mean_unconverged_final_distance",
        diagram.cells.iter().map(|c| {
            [
                c.activation.clone(),
                c.distribution.to_string(),
                c.n.to_string(),
                io::fmt_f64(c.rho),
                io::fmt_f64(c.leak),
                io::fmt_f64(c.convergence_fraction),
                c.converged_count.to_string(),
                c.unconverged_count.to_string(),
                c.diverged_count.to_string(),
                io::fmt_opt(c.mean_convergence_time),
                io::fmt_opt(c.median_convergence_time),
                io::fmt_f64(c.mean_final_distance),
                io::fmt_opt(c.mean_unconverged_final_distance),
            ]
        }),
    )
}
