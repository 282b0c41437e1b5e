//! Sparse random reservoirs scaled to an exact spectral radius, input
//! generation and the leaky state update
//! `x' = (1 - a) x + a f(W_in u + W_res x)`.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::error::{EspError, Result};
use crate::io;
use crate::rng::{self, tag, StreamRng};

/// Largest size for which the achieved spectral radius is re-measured after
/// scaling. Above it the scaled value is taken from the exact product.
pub const VERIFY_RHO_MAX_N: usize = 600;

const MAX_REDRAWS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub n: usize,
    pub rho_target: f64,
    pub leak: f64,
    pub density: f64,
    pub input_scaling: f64,
    pub input_dim: usize,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            n: 100,
            rho_target: 0.95,
            leak: 0.7,
            density: 0.08,
            input_scaling: 1.0,
            input_dim: 1,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(EspError::invalid("reservoir n", "must be at least 1"));
        }
        if !(self.rho_target > 0.0 && self.rho_target.is_finite()) {
            return Err(EspError::invalid("rho_target", "must be positive and finite"));
        }
        validate_leak(self.leak)?;
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(EspError::invalid("density", "must lie in (0, 1]"));
        }
        if !self.input_scaling.is_finite() {
            return Err(EspError::invalid("input_scaling", "must be finite"));
        }
        if self.input_dim < 1 {
            return Err(EspError::invalid("input_dim", "must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn validate_leak(a: f64) -> Result<()> {
    if a > 0.0 && a <= 1.0 {
        Ok(())
    } else {
        Err(EspError::invalid("leak", "must lie in (0, 1]"))
    }
}

/// Compressed sparse row copy of a matrix, used for the per-step product.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(m: &Mat<f64>) -> Self {
        let mut indptr = Vec::with_capacity(m.nrows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: m.nrows(),
            n_cols: m.ncols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = self * x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            *o = self.indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// Nonzero triples in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.values[k]))
        })
    }
}

/// Reservoir and input weights. Immutable once built.
#[derive(Debug, Clone)]
pub struct ReservoirMatrices {
    w_res: Mat<f64>,
    w_in: Mat<f64>,
    csr: CsrMatrix,
    achieved_rho: f64,
    redraws: u32,
}

impl ReservoirMatrices {
    /// Wraps explicit matrices, measuring their spectral radius.
    pub fn from_dense(w_res: Mat<f64>, w_in: Mat<f64>) -> Result<Self> {
        if w_res.nrows() != w_res.ncols() || w_res.nrows() == 0 {
            return Err(EspError::invalid("w_res", "must be square and nonempty"));
        }
        if w_in.nrows() != w_res.nrows() || w_in.ncols() == 0 {
            return Err(EspError::invalid(
                "w_in",
                format!("must have {} rows and at least one column", w_res.nrows()),
            ));
        }
        let achieved_rho = spectral_radius(&w_res)?;
        Ok(ReservoirMatrices {
            csr: CsrMatrix::from_dense(&w_res),
            w_res,
            w_in,
            achieved_rho,
            redraws: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.w_res.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn w_res(&self) -> &Mat<f64> {
        &self.w_res
    }

    pub fn w_in(&self) -> &Mat<f64> {
        &self.w_in
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn achieved_rho(&self) -> f64 {
        self.achieved_rho
    }

    /// Number of degenerate draws (zero or nilpotent pattern) that were
    /// discarded before this one.
    pub fn redraws(&self) -> u32 {
        self.redraws
    }

    /// `out = W_in u + W_res x`.
    pub fn pre_activation_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.csr.matvec_into(x, out);
        for (j, &uj) in u.iter().enumerate() {
            if uj != 0.0 {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.w_in[(i, j)] * uj;
                }
            }
        }
    }

    pub fn write_matrix_csv(&self, path: &std::path::Path) -> Result<()> {
        let body = io::csv(
            "row,col,value",
            self.csr
                .triples()
                .map(|(i, j, v)| [i.to_string(), j.to_string(), io::fmt_f64(v)]),
        );
        io::write_atomic(path, body.as_bytes())
    }

    pub fn write_eigenvalues_csv(&self, path: &std::path::Path) -> Result<()> {
        let ev = eigenvalues(&self.w_res)?;
        let body = io::csv(
            "re,im",
            ev.iter().map(|&(re, im)| [io::fmt_f64(re), io::fmt_f64(im)]),
        );
        io::write_atomic(path, body.as_bytes())
    }
}

/// All eigenvalues as `(re, im)` pairs, from a dense decomposition.
pub fn eigenvalues(m: &Mat<f64>) -> Result<Vec<(f64, f64)>> {
    if m.nrows() != m.ncols() {
        return Err(EspError::invalid("matrix", "must be square"));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if (0..m.ncols()).any(|j| (0..m.nrows()).any(|i| !m[(i, j)].is_finite())) {
        return Err(EspError::invalid("matrix", "entries must be finite"));
    }
    let ev = m
        .eigenvalues()
        .map_err(|_| EspError::EigenNonConvergence { n: m.nrows() })?;
    Ok(ev.into_iter().map(|c| (c.re, c.im)).collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// Induced infinity norm (max absolute row sum).
pub fn inf_norm(m: &Mat<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Which matrix norm stands in for `‖W_res‖` in gain formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorNorm {
    #[default]
    SpectralRadius,
    InducedInf,
}

pub fn operator_norm(m: &ReservoirMatrices, kind: OperatorNorm) -> f64 {
    match kind {
        OperatorNorm::SpectralRadius => m.achieved_rho(),
        OperatorNorm::InducedInf => inf_norm(m.w_res()),
    }
}

fn draw_sparse(n: usize, density: f64, rng: &mut StreamRng) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(n, n);
    // Row-major draw order keeps the stream layout independent of faer's
    // column-major storage.
    for i in 0..n {
        for j in 0..n {
            if rng.random::<f64>() < density {
                m[(i, j)] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    m
}

/// Draws `W_res` with the given density, scales it to `rho_target`, and
/// draws `W_in` uniform on `[-1, 1]` times `input_scaling`.
///
/// Draws whose spectral radius is zero, or too small to scale reliably, are
/// discarded and redrawn from a perturbed seed; the count is kept on the
/// result.
pub fn build_reservoir(config: &ReservoirConfig) -> Result<ReservoirMatrices> {
    config.validate()?;
    let n = config.n;
    let mut redraws = 0u32;
    let (w_res, achieved_rho) = loop {
        if redraws >= MAX_REDRAWS {
            return Err(EspError::DegenerateReservoir { attempts: redraws });
        }
        let seed = if redraws == 0 {
            config.seed
        } else {
            rng::derive_seed(&[config.seed, tag::REDRAW, redraws as u64])
        };
        let mut w = draw_sparse(n, config.density, &mut rng::substream(seed, tag::RESERVOIR));
        let scale_ref = w.norm_l2();
        let rho = spectral_radius(&w)?;
        if scale_ref == 0.0 || rho <= 1e-8 * scale_ref {
            redraws += 1;
            continue;
        }
        let factor = config.rho_target / rho;
        w *= faer::Scale(factor);
        let achieved = if n <= VERIFY_RHO_MAX_N {
            spectral_radius(&w)?
        } else {
            rho * factor
        };
        if ((achieved - config.rho_target) / config.rho_target).abs() > 1e-7 {
            redraws += 1;
            continue;
        }
        break (w, achieved);
    };
    let mut in_rng = rng::substream(config.seed, tag::INPUT_WEIGHTS);
    let mut w_in = Mat::<f64>::zeros(n, config.input_dim);
    for i in 0..n {
        for j in 0..config.input_dim {
            w_in[(i, j)] = rng_uniform(&mut in_rng) * config.input_scaling;
        }
    }
    Ok(ReservoirMatrices {
        csr: CsrMatrix::from_dense(&w_res),
        w_res,
        w_in,
        achieved_rho,
        redraws,
    })
}

#[inline]
fn rng_uniform(rng: &mut StreamRng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputDistribution {
    Gaussian,
    Uniform,
    Sparse,
}

impl InputDistribution {
    pub const ALL: [InputDistribution; 3] = [
        InputDistribution::Gaussian,
        InputDistribution::Uniform,
        InputDistribution::Sparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputDistribution::Gaussian => "gaussian",
            InputDistribution::Uniform => "uniform",
            InputDistribution::Sparse => "sparse",
        }
    }

    fn sample(self, rng: &mut StreamRng) -> f64 {
        match self {
            InputDistribution::Gaussian => rng.sample(StandardNormal),
            InputDistribution::Uniform => rng_uniform(rng),
            InputDistribution::Sparse => {
                if rng.random::<f64>() < 0.9 {
                    0.0
                } else {
                    rng_uniform(rng)
                }
            }
        }
    }
}

impl fmt::Display for InputDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputDistribution {
    type Err = EspError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        InputDistribution::ALL
            .into_iter()
            .find(|d| d.name() == norm)
            .ok_or_else(|| EspError::Parse {
                what: "input distribution".into(),
                reason: format!("unknown distribution `{s}` (expected gaussian, uniform or sparse)"),
            })
    }
}

/// `t_len` rows of `input_dim` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    pub dist: InputDistribution,
    pub input_dim: usize,
    pub seed: u64,
    values: Vec<f64>,
}

impl InputSequence {
    pub fn from_values(dist: InputDistribution, input_dim: usize, values: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || !values.len().is_multiple_of(input_dim) {
            return Err(EspError::invalid(
                "input sequence",
                "length must be a multiple of input_dim",
            ));
        }
        Ok(InputSequence {
            dist,
            input_dim,
            seed: 0,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.input_dim..(t + 1) * self.input_dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.input_dim..(t + 1) * self.input_dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Values are drawn sequentially, so a longer sequence from the same seed
/// extends a shorter one.
pub fn gen_inputs(
    dist: InputDistribution,
    t_len: usize,
    input_dim: usize,
    seed: u64,
) -> Result<InputSequence> {
    if t_len < 1 {
        return Err(EspError::invalid("t_len", "must be at least 1"));
    }
    if input_dim < 1 {
        return Err(EspError::invalid("input_dim", "must be at least 1"));
    }
    let mut rng = rng::substream(seed, tag::INPUTS);
    let values = (0..t_len * input_dim).map(|_| dist.sample(&mut rng)).collect();
    Ok(InputSequence {
        dist,
        input_dim,
        seed,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Zero,
    /// Uniform on `[-1, 1]^N`, rescaled so that `‖x‖∞ = 2`.
    RandomScaled,
}

/// Max-norm of a random-scaled initial state.
pub const INIT_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub t: usize,
}

impl StateVector {
    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.x)
    }
}

pub(crate) fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn init_state(mode: InitMode, n: usize, seed: u64) -> Result<StateVector> {
    if n < 1 {
        return Err(EspError::invalid("state dimension", "must be at least 1"));
    }
    let x = match mode {
        InitMode::Zero => vec![0.0; n],
        InitMode::RandomScaled => {
            let mut rng = rng::substream(seed, tag::INIT);
            loop {
                let v: Vec<f64> = (0..n).map(|_| rng_uniform(&mut rng)).collect();
                let m = max_abs(&v);
                if m > 0.0 {
                    break v.into_iter().map(|x| x / m * INIT_SCALE).collect();
                }
            }
        }
    };
    Ok(StateVector { x, t: 0 })
}

fn check_dims(m: &ReservoirMatrices, x: &[f64], u: &[f64]) -> Result<()> {
    if x.len() != m.n() {
        return Err(EspError::invalid(
            "state",
            format!("has {} components, reservoir has {}", x.len(), m.n()),
        ));
    }
    if u.len() != m.input_dim() {
        return Err(EspError::invalid(
            "input row",
            format!("has {} components, expected {}", u.len(), m.input_dim()),
        ));
    }
    Ok(())
}

/// Reusable buffers for stepping one trajectory.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    m: &'a ReservoirMatrices,
    spec: ActivationSpec,
    leak: f64,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(m: &'a ReservoirMatrices, spec: ActivationSpec, leak: f64) -> Result<Self> {
        validate_leak(leak)?;
        spec.validate()?;
        Ok(Simulator {
            m,
            spec,
            leak,
            pre: vec![0.0; m.n()],
            out: vec![0.0; m.n()],
        })
    }

    /// Advances `x` in place and returns `false` if any component became
    /// non-finite.
    pub fn step(&mut self, x: &mut [f64], u: &[f64], rng: Option<&mut StreamRng>) -> Result<bool> {
        check_dims(self.m, x, u)?;
        let spec = self.spec;
        leaky_update_with(
            self.m,
            self.leak,
            x,
            u,
            &mut self.pre,
            &mut self.out,
            |pre, out| spec.apply_into(pre, out, rng),
        )
    }

    /// Pre-activation values from the last step.
    pub fn last_pre_activation(&self) -> &[f64] {
        &self.pre
    }

    /// Activation outputs from the last step.
    pub fn last_output(&self) -> &[f64] {
        &self.out
    }
}

/// One leaky update with a caller-supplied elementwise map, so tests and
/// diagnostics can substitute their own activation.
pub fn leaky_update_with<F>(
    m: &ReservoirMatrices,
    leak: f64,
    x: &mut [f64],
    u: &[f64],
    pre: &mut [f64],
    out: &mut [f64],
    f: F,
) -> Result<bool>
where
    F: FnOnce(&[f64], &mut [f64]) -> Result<()>,
{
    m.pre_activation_into(x, u, pre);
    f(pre, out)?;
    let keep = 1.0 - leak;
    let mut finite = true;
    for (xi, &oi) in x.iter_mut().zip(out.iter()) {
        *xi = keep * *xi + leak * oi;
        finite &= xi.is_finite();
    }
    Ok(finite)
}

/// `x' = (1 - a) x + a f(W_in u + W_res x)`.
///
/// A non-finite result is returned as is; callers check
/// [`StateVector::is_finite`] and treat it as divergence.
pub fn step(
    x: &StateVector,
    u: &[f64],
    m: &ReservoirMatrices,
    spec: &ActivationSpec,
    a: f64,
    rng: Option<&mut StreamRng>,
) -> Result<StateVector> {
    let mut sim = Simulator::new(m, *spec, a)?;
    let mut next = x.x.clone();
    sim.step(&mut next, u, rng)?;
    Ok(StateVector { x: next, t: x.t + 1 })
}

/// Full record of one run: states `x_0..=x_T` and the pre-activations that
/// produced `x_1..=x_T`. Stops early, flagged, at the first non-finite state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.pre_activations.len()
    }
}

pub fn simulate(
    m: &ReservoirMatrices,
    spec: &ActivationSpec,
    a: f64,
    x0: &[f64],
    inputs: &InputSequence,
    mut rng: Option<&mut StreamRng>,
) -> Result<Trajectory> {
    let mut sim = Simulator::new(m, *spec, a)?;
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut pre_activations = Vec::with_capacity(inputs.len());
    states.push(x.clone());
    let mut diverged_at = None;
    for t in 0..inputs.len() {
        let finite = sim.step(&mut x, inputs.row(t), rng.as_deref_mut())?;
        pre_activations.push(sim.last_pre_activation().to_vec());
        states.push(x.clone());
        if !finite {
            diverged_at = Some(t + 1);
            break;
        }
    }
    Ok(Trajectory {
        states,
        pre_activations,
        diverged_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum IssOutcome {
    Holds,
    Violated {
        t: usize,
        norm: f64,
        bound: f64,
    },
    /// The activation has no finite bound, so the check does not apply.
    Skipped,
}

impl IssOutcome {
    /// `None` when the check was skipped.
    pub fn holds(&self) -> Option<bool> {
        match self {
            IssOutcome::Holds => Some(true),
            IssOutcome::Violated { .. } => Some(false),
            IssOutcome::Skipped => None,
        }
    }
}

/// Checks `‖x_t‖ ≤ (1-a)^t ‖x_0‖ + B (‖W_res‖ + ‖W_in‖ u_max)` at every
/// recorded step, all norms induced infinity norms.
pub fn check_iss_bound(
    trajectory: &Trajectory,
    m: &ReservoirMatrices,
    spec: &ActivationSpec,
    a: f64,
    u_max: f64,
) -> IssOutcome {
    let bounds = spec.declared_bounds();
    if !bounds.is_bounded() {
        return IssOutcome::Skipped;
    }
    let b = bounds.magnitude();
    let forcing = b * (inf_norm(m.w_res()) + inf_norm(m.w_in()) * u_max);
    let x0 = trajectory.states.first().map_or(0.0, |x| max_abs(x));
    let mut decay = 1.0;
    for (t, x) in trajectory.states.iter().enumerate() {
        let bound = decay * x0 + forcing;
        let norm = max_abs(x);
        if !(norm <= bound + 1e-12) {
            return IssOutcome::Violated { t, norm, bound };
        }
        decay *= 1.0 - a;
    }
    IssOutcome::Holds
}
