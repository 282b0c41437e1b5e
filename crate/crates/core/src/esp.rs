//! Two-trajectory echo state property tests, symbol-lock diagnostics for
//! quantized activations, a fading-memory probe and brute-force attractor
//! enumeration for leak-free quantized reservoirs.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationSpec, Codebook, Family};
use crate::error::{EspError, Result};
use crate::io;
use crate::reservoir::{
    build_reservoir, gen_inputs, init_state, InitMode, InputDistribution, InputSequence, ReservoirConfig,
    ReservoirMatrices, Simulator,
};
use crate::rng::{self, tag, StreamRng};

/// Distances at or below this are treated as exact zeros when fitting decay
/// rates.
pub const DECAY_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EspTestSpec {
    pub reservoir: ReservoirConfig,
    pub activation: ActivationSpec,
    pub distribution: InputDistribution,
    pub horizon: usize,
    pub extended_horizon: usize,
    /// Continue unconverged runs up to `extended_horizon`.
    pub extend: bool,
    pub threshold: f64,
    pub trials: usize,
}

impl EspTestSpec {
    pub fn new(activation: ActivationSpec) -> Self {
        EspTestSpec {
            reservoir: ReservoirConfig::default(),
            activation,
            distribution: InputDistribution::Gaussian,
            horizon: 200,
            extended_horizon: 2000,
            extend: false,
            threshold: 0.1,
            trials: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reservoir.validate()?;
        self.activation.validate()?;
        if !(self.threshold > 0.0) {
            return Err(EspError::invalid("threshold", "must be positive"));
        }
        if self.horizon < 1 {
            return Err(EspError::invalid("horizon", "must be at least 1"));
        }
        if self.horizon > self.extended_horizon {
            return Err(EspError::invalid(
                "extended_horizon",
                "must not be shorter than horizon",
            ));
        }
        if self.trials < 1 {
            return Err(EspError::invalid("trials", "must be at least 1"));
        }
        Ok(())
    }

    fn max_steps(&self) -> usize {
        if self.extend {
            self.extended_horizon
        } else {
            self.horizon
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPairResult {
    /// `‖x_t - x'_t‖₂` for `t = 0..=steps`.
    pub distances: Vec<f64>,
    /// `‖x_t - x'_t‖∞` for the same steps.
    pub max_abs_distances: Vec<f64>,
    pub converged: bool,
    /// First `t` with distance strictly below the threshold.
    pub convergence_time: Option<usize>,
    #[serde(with = "io::lossless_f64")]
    pub final_distance: f64,
    pub decay_rate: Option<f64>,
    pub symbol_lock_time: Option<usize>,
    pub diverged: bool,
    /// Number of update steps actually simulated.
    pub steps: usize,
    pub extended: bool,
}

impl TrajectoryPairResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(&self.distances, 0, path)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("result serializes");
        io::write_atomic(path, body.as_bytes())
    }
}

/// `t,distance` rows, with `t` counted from `first_t`.
pub fn write_trace_csv(distances: &[f64], first_t: usize, path: &Path) -> Result<()> {
    let body = io::csv(
        "t,distance",
        distances
            .iter()
            .enumerate()
            .map(|(i, &d)| [(first_t + i).to_string(), io::fmt_f64(d)]),
    );
    io::write_atomic(path, body.as_bytes())
}

/// Activation outputs of both trajectories, one row per step starting at
/// `first_step`. Only recorded for codebook activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolTrace {
    pub family: Family,
    pub first_step: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl SymbolTrace {
    pub fn new(family: Family, first_step: usize) -> Self {
        SymbolTrace {
            family,
            first_step,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn l2_and_inf(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut mx: f64 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        sq += d * d;
        mx = mx.max(d.abs());
    }
    (sq.sqrt(), mx)
}

/// Builds the trial's reservoir from `trial_seed` and runs the pair test.
pub fn run_pair(spec: &EspTestSpec, trial_seed: u64) -> Result<TrajectoryPairResult> {
    let m = build_reservoir(&ReservoirConfig {
        seed: trial_seed,
        ..spec.reservoir
    })?;
    run_pair_with(spec, &m, trial_seed)
}

/// Pair test on a given reservoir. Trajectory one starts at zero, trajectory
/// two at a random state with `‖x_0‖∞ = 2`; both see the same inputs.
pub fn run_pair_with(
    spec: &EspTestSpec,
    m: &ReservoirMatrices,
    trial_seed: u64,
) -> Result<TrajectoryPairResult> {
    Ok(run_pair_traced_with(spec, m, trial_seed, false)?.0)
}

pub fn run_pair_traced(
    spec: &EspTestSpec,
    trial_seed: u64,
) -> Result<(TrajectoryPairResult, Option<SymbolTrace>)> {
    let m = build_reservoir(&ReservoirConfig {
        seed: trial_seed,
        ..spec.reservoir
    })?;
    run_pair_traced_with(spec, &m, trial_seed, true)
}

pub fn run_pair_traced_with(
    spec: &EspTestSpec,
    m: &ReservoirMatrices,
    trial_seed: u64,
    record_symbols: bool,
) -> Result<(TrajectoryPairResult, Option<SymbolTrace>)> {
    spec.validate()?;
    let n = m.n();
    let inputs = gen_inputs(spec.distribution, spec.max_steps(), m.input_dim(), trial_seed)?;
    let x_a = init_state(InitMode::Zero, n, trial_seed)?.x;
    let x_b = init_state(InitMode::RandomScaled, n, trial_seed)?.x;
    let noise = spec.activation.is_stochastic().then(|| {
        (
            rng::substream(trial_seed, tag::NOISE_A),
            rng::substream(trial_seed, tag::NOISE_B),
        )
    });
    run_pair_from_states(spec, m, &x_a, &x_b, &inputs, noise, record_symbols)
}

/// Lowest-level pair runner: explicit initial states, inputs and noise
/// streams. `inputs` must hold at least `horizon` rows (more if extension is
/// enabled).
pub fn run_pair_from_states(
    spec: &EspTestSpec,
    m: &ReservoirMatrices,
    x_a: &[f64],
    x_b: &[f64],
    inputs: &InputSequence,
    noise: Option<(StreamRng, StreamRng)>,
    record_symbols: bool,
) -> Result<(TrajectoryPairResult, Option<SymbolTrace>)> {
    spec.validate()?;
    let max_steps = spec.max_steps();
    if inputs.len() < max_steps {
        return Err(EspError::invalid(
            "inputs",
            format!("need {max_steps} rows, got {}", inputs.len()),
        ));
    }
    let leak = spec.reservoir.leak;
    let mut sim_a = Simulator::new(m, spec.activation, leak)?;
    let mut sim_b = Simulator::new(m, spec.activation, leak)?;
    let (mut noise_a, mut noise_b) = match noise {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let quantized = spec.activation.codebook().is_some();
    let mut trace = (quantized && record_symbols).then(|| SymbolTrace::new(spec.activation.family(), 1));

    let mut xa = x_a.to_vec();
    let mut xb = x_b.to_vec();
    let (d0, d0_inf) = l2_and_inf(&xa, &xb);
    let mut distances = vec![d0];
    let mut max_abs_distances = vec![d0_inf];
    let mut convergence_time = (d0 < spec.threshold).then_some(0);
    let mut last_mismatch: Option<usize> = None;
    let mut diverged = false;
    let mut extended = false;

    for t in 1..=max_steps {
        if t > spec.horizon {
            if convergence_time.is_some() {
                break;
            }
            extended = true;
        }
        let u = inputs.row(t - 1);
        let fa = sim_a.step(&mut xa, u, noise_a.as_mut())?;
        let fb = sim_b.step(&mut xb, u, noise_b.as_mut())?;
        if !(fa && fb) {
            diverged = true;
            break;
        }
        let (d, d_inf) = l2_and_inf(&xa, &xb);
        if !d.is_finite() {
            diverged = true;
            break;
        }
        distances.push(d);
        max_abs_distances.push(d_inf);
        if convergence_time.is_none() && d < spec.threshold {
            convergence_time = Some(t);
        }
        if quantized {
            if sim_a.last_output() != sim_b.last_output() {
                last_mismatch = Some(t);
            }
            if let Some(trace) = trace.as_mut() {
                trace.a.push(sim_a.last_output().to_vec());
                trace.b.push(sim_b.last_output().to_vec());
            }
        }
    }

    let steps = distances.len() - 1;
    let symbol_lock_time = match (quantized, diverged) {
        (true, false) => match last_mismatch {
            Some(t) if t == steps => None,
            Some(t) => Some(t + 1),
            None => Some(1.min(steps)),
        },
        _ => None,
    };
    let final_distance = if diverged {
        f64::INFINITY
    } else {
        *distances.last().expect("initial distance is recorded")
    };
    let result = TrajectoryPairResult {
        decay_rate: estimate_decay_rate(&distances),
        converged: convergence_time.is_some(),
        convergence_time,
        final_distance,
        symbol_lock_time,
        diverged,
        steps,
        extended,
        distances,
        max_abs_distances,
    };
    Ok((result, trace))
}

/// Least-squares slope of `ln d_t` against `t` over the steps with
/// `1e-14 < d_t <= d_0`. Needs at least ten such steps.
pub fn estimate_decay_rate(distances: &[f64]) -> Option<f64> {
    let d0 = *distances.first()?;
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d > DECAY_FLOOR && d <= d0 && d.is_finite())
        .map(|(t, &d)| (t as f64, d.ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let k = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, y) in &pts {
        sxy += (t - mean_t) * (y - mean_y);
        sxx += (t - mean_t) * (t - mean_t);
    }
    Some(sxy / sxx)
}

fn require_codebook(family: Family, operation: &'static str) -> Result<Codebook> {
    ActivationSpec::new(family)
        .codebook()
        .ok_or(EspError::UnsupportedFamily {
            operation,
            family: family.name(),
        })
}

/// Smallest `T` such that both symbol rows agree exactly at every recorded
/// step `t >= T`.
pub fn detect_symbol_lock(trace: &SymbolTrace) -> Result<Option<usize>> {
    require_codebook(trace.family, "symbol lock detection")?;
    if trace.a.len() != trace.b.len() {
        return Err(EspError::invalid("symbol trace", "rows differ in length"));
    }
    match trace.a.iter().zip(&trace.b).rposition(|(a, b)| a != b) {
        None => Ok(Some(trace.first_step)),
        Some(i) if i + 1 == trace.len() => Ok(None),
        Some(i) => Ok(Some(trace.first_step + i + 1)),
    }
}

/// Relative tolerance of the post-lock geometric check.
pub const POST_LOCK_RTOL: f64 = 1e-6;
/// Absolute allowance for roundoff once distances approach machine zero.
pub const POST_LOCK_ATOL: f64 = 1e-12;

/// After symbols lock at `T`, the state difference only decays through the
/// leak: `d_t = (1 - a)^(t - T) d_T`, and `d_t = 0` for `t > T` when `a = 1`.
pub fn verify_post_lock_contraction(result: &TrajectoryPairResult, trace: &SymbolTrace, a: f64) -> bool {
    let lock = match detect_symbol_lock(trace) {
        Ok(Some(t)) => t,
        _ => return false,
    };
    if result.symbol_lock_time.is_some_and(|t| t != lock) {
        return false;
    }
    let Some(&d_lock) = result.distances.get(lock) else {
        return false;
    };
    let keep = 1.0 - a;
    result.distances.iter().enumerate().skip(lock + 1).all(|(t, &d)| {
        if a == 1.0 {
            d == 0.0
        } else {
            let expected = keep.powi((t - lock) as i32) * d_lock;
            (d - expected).abs() <= POST_LOCK_RTOL * expected + POST_LOCK_ATOL
        }
    })
}

/// Collision-driven contraction bound, in the max norm:
/// `d_t <= (1 - a) d_{t-1} + a D_L [s_t != s'_t] + 1e-9`.
pub fn check_collision_bound(result: &TrajectoryPairResult, trace: &SymbolTrace, a: f64, d_l: f64) -> bool {
    let d = &result.max_abs_distances;
    trace.a.iter().zip(&trace.b).enumerate().all(|(i, (sa, sb))| {
        let t = trace.first_step + i;
        if t == 0 || t >= d.len() {
            return true;
        }
        let collision = if sa != sb { 1.0 } else { 0.0 };
        d[t] <= (1.0 - a) * d[t - 1] + a * d_l * collision + 1e-9
    })
}

/// Runs two trajectories from the same initial state whose inputs differ only
/// at step `perturb_time`, returning their L2 distance for
/// `t = perturb_time..=horizon`.
///
/// Brownian noise is shared between the two runs so that the trace measures
/// the input perturbation alone.
pub fn fading_memory_probe(spec: &EspTestSpec, perturb_time: usize, trial_seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if perturb_time >= spec.horizon {
        return Err(EspError::invalid("perturb_time", "must be before the horizon"));
    }
    let m = build_reservoir(&ReservoirConfig {
        seed: trial_seed,
        ..spec.reservoir
    })?;
    let inputs = gen_inputs(spec.distribution, spec.horizon, m.input_dim(), trial_seed)?;
    let mut perturbed = inputs.clone();
    let replacement = gen_inputs(
        spec.distribution,
        1,
        m.input_dim(),
        rng::derive_seed(&[trial_seed, tag::PERTURB]),
    )?;
    perturbed
        .row_mut(perturb_time)
        .copy_from_slice(replacement.row(0));
    let x0 = init_state(InitMode::RandomScaled, m.n(), trial_seed)?.x;
    let noise = spec
        .activation
        .is_stochastic()
        .then(|| rng::substream(trial_seed, tag::NOISE_A));
    fading_memory_trace(spec, &m, &x0, &inputs, &perturbed, perturb_time, noise)
}

pub fn fading_memory_trace(
    spec: &EspTestSpec,
    m: &ReservoirMatrices,
    x0: &[f64],
    inputs: &InputSequence,
    perturbed: &InputSequence,
    from: usize,
    noise: Option<StreamRng>,
) -> Result<Vec<f64>> {
    let steps = inputs.len().min(perturbed.len());
    let leak = spec.reservoir.leak;
    let mut sim_a = Simulator::new(m, spec.activation, leak)?;
    let mut sim_b = Simulator::new(m, spec.activation, leak)?;
    let mut noise_b = noise.clone();
    let mut noise_a = noise;
    let (mut xa, mut xb) = (x0.to_vec(), x0.to_vec());
    let mut trace = Vec::with_capacity(steps + 1 - from.min(steps));
    if from == 0 {
        trace.push(0.0);
    }
    for t in 1..=steps {
        let fa = sim_a.step(&mut xa, inputs.row(t - 1), noise_a.as_mut())?;
        let fb = sim_b.step(&mut xb, perturbed.row(t - 1), noise_b.as_mut())?;
        if t >= from {
            let d = if fa && fb {
                l2_and_inf(&xa, &xb).0
            } else {
                f64::INFINITY
            };
            trace.push(d);
            if !d.is_finite() {
                break;
            }
        }
    }
    Ok(trace)
}

/// Initial conditions for attractor enumeration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSet {
    Explicit(Vec<Vec<f64>>),
    /// Every vector in `codebook^N`.
    Exhaustive,
    /// Random states with `‖x_0‖∞ = 2`.
    Random {
        count: usize,
        seed: u64,
    },
}

/// One limit cycle of the leak-free quantized map, rotated to a canonical
/// starting point. `phases[i]` is the input-cycle position at which
/// `states[i]` is emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub states: Vec<Vec<f64>>,
    pub phases: Vec<usize>,
    /// Number of initial conditions that ended on this cycle.
    pub basin: usize,
}

impl LimitCycle {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub cycles: Vec<LimitCycle>,
    pub unique: bool,
    pub initial_conditions: usize,
    /// Distinct (input phase, symbol state) pairs seen over all walks.
    pub distinct_states: usize,
    /// Longest walk, in distinct states, before a repeat was found.
    pub max_walk: usize,
}

impl AttractorReport {
    pub fn basin_counts(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.basin).collect()
    }
}

pub const MAX_ATTRACTOR_N: usize = 8;

type Key = (usize, Vec<u16>);

/// With `a = 1` the next state is a function of the current symbol vector
/// and the input phase alone, so every walk is eventually periodic. Each
/// initial condition is iterated until a (phase, symbols) pair repeats; the
/// resulting cycles are grouped up to rotation.
pub fn enumerate_quantized_attractors(
    m: &ReservoirMatrices,
    spec: &ActivationSpec,
    input_cycle: &[Vec<f64>],
    inits: &InitSet,
    budget: usize,
) -> Result<AttractorReport> {
    let n = m.n();
    if n > MAX_ATTRACTOR_N {
        return Err(EspError::invalid(
            "attractor enumeration n",
            format!("must be at most {MAX_ATTRACTOR_N}"),
        ));
    }
    if spec.is_stochastic() {
        return Err(EspError::UnsupportedFamily {
            operation: "attractor enumeration",
            family: spec.family().name(),
        });
    }
    let codebook = spec.codebook().ok_or(EspError::UnsupportedFamily {
        operation: "attractor enumeration",
        family: spec.family().name(),
    })?;
    if input_cycle.is_empty() || input_cycle.iter().any(|u| u.len() != m.input_dim()) {
        return Err(EspError::invalid(
            "input cycle",
            format!("needs at least one row of length {}", m.input_dim()),
        ));
    }
    let period = input_cycle.len();
    let initial: Vec<Vec<f64>> = match inits {
        InitSet::Explicit(v) => {
            if v.iter().any(|x| x.len() != n) {
                return Err(EspError::invalid(
                    "initial state",
                    format!("must have {n} components"),
                ));
            }
            v.clone()
        }
        InitSet::Exhaustive => {
            let k = codebook.len();
            let total = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
            if total > budget as u128 {
                return Err(EspError::StateBudgetExceeded { budget, visited: 0 });
            }
            (0..total as usize)
                .map(|mut code| {
                    (0..n)
                        .map(|_| {
                            let level = codebook.levels()[code % k];
                            code /= k;
                            level
                        })
                        .collect()
                })
                .collect()
        }
        InitSet::Random { count, seed } => (0..*count)
            .map(|i| init_state(InitMode::RandomScaled, n, rng::derive_seed(&[*seed, i as u64])).map(|s| s.x))
            .collect::<Result<_>>()?,
    };

    let mut pre = vec![0.0; n];
    let mut next = |x: &[f64], phase: usize, out: &mut Vec<f64>| -> Result<()> {
        m.pre_activation_into(x, &input_cycle[phase], &mut pre);
        out.resize(n, 0.0);
        spec.apply_into(&pre, out, None::<&mut StreamRng>)
    };
    let encode = |x: &[f64]| -> Vec<u16> {
        x.iter()
            .map(|&v| {
                codebook
                    .index_of(v)
                    .expect("activation output lies on its codebook") as u16
            })
            .collect()
    };

    // Resolved keys map to the index of the cycle they drain into.
    let mut resolved: HashMap<Key, usize> = HashMap::new();
    let mut canonical_ids: HashMap<Vec<Key>, usize> = HashMap::new();
    let mut cycles: Vec<LimitCycle> = Vec::new();
    let mut max_walk = 0usize;

    for x0 in &initial {
        let mut state = Vec::with_capacity(n);
        next(x0, 0, &mut state)?;
        let mut phase = 1 % period;
        let mut path: Vec<Key> = Vec::new();
        let mut on_path: HashMap<Key, usize> = HashMap::new();
        let cycle_id = loop {
            let key = (phase, encode(&state));
            if let Some(&id) = resolved.get(&key) {
                break id;
            }
            if let Some(&start) = on_path.get(&key) {
                let body = &path[start..];
                let min_pos = (0..body.len())
                    .min_by(|&i, &j| body[i].cmp(&body[j]))
                    .expect("cycle is nonempty");
                let canonical: Vec<Key> = body[min_pos..].iter().chain(&body[..min_pos]).cloned().collect();
                let next_id = cycles.len();
                let id = *canonical_ids.entry(canonical.clone()).or_insert(next_id);
                if id == next_id {
                    cycles.push(LimitCycle {
                        states: canonical
                            .iter()
                            .map(|(_, idx)| idx.iter().map(|&i| codebook.levels()[i as usize]).collect())
                            .collect(),
                        phases: canonical.iter().map(|(p, _)| *p).collect(),
                        basin: 0,
                    });
                }
                break id;
            }
            if resolved.len() + path.len() >= budget {
                return Err(EspError::StateBudgetExceeded {
                    budget,
                    visited: resolved.len() + path.len(),
                });
            }
            on_path.insert(key.clone(), path.len());
            path.push(key);
            let mut out = Vec::with_capacity(n);
            next(&state, phase, &mut out)?;
            state = out;
            phase = (phase + 1) % period;
        };
        max_walk = max_walk.max(path.len());
        cycles[cycle_id].basin += 1;
        for key in path {
            resolved.insert(key, cycle_id);
        }
    }

    Ok(AttractorReport {
        unique: cycles.len() == 1,
        initial_conditions: initial.len(),
        distinct_states: resolved.len(),
        max_walk,
        cycles,
    })
}

/// Convenience: the distinct-state bound `k^N · period` for a walk.
pub fn state_space_bound(k: usize, n: usize, period: usize) -> u128 {
    (k as u128)
        .saturating_pow(n as u32)
        .saturating_mul(period as u128)
}
