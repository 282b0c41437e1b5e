//! The ten activation families: smooth baselines, Mandelbrot escape time,
//! logistic map, Weierstrass series, Cantor function and set, and a
//! Brownian-noise variant of tanh.
//!
//! All families except [`Family::Brownian`] are pure functions of their input.
//! Brownian evaluation draws a truncated Gaussian increment from a
//! caller-supplied stream.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Tanh,
    Relu,
    MandelbrotDiscrete,
    MandelbrotContinuous,
    LogisticSigmoid,
    LogisticModulo,
    Weierstrass,
    CantorFunction,
    CantorSet,
    Brownian,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Tanh,
        Family::Relu,
        Family::MandelbrotDiscrete,
        Family::MandelbrotContinuous,
        Family::LogisticSigmoid,
        Family::LogisticModulo,
        Family::Weierstrass,
        Family::CantorFunction,
        Family::CantorSet,
        Family::Brownian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Tanh => "tanh",
            Family::Relu => "relu",
            Family::MandelbrotDiscrete => "mandelbrot-discrete",
            Family::MandelbrotContinuous => "mandelbrot-continuous",
            Family::LogisticSigmoid => "logistic-sigmoid",
            Family::LogisticModulo => "logistic-modulo",
            Family::Weierstrass => "weierstrass",
            Family::CantorFunction => "cantor-function",
            Family::CantorSet => "cantor-set",
            Family::Brownian => "brownian",
        }
    }

    /// Families whose output is non-decreasing in the input.
    pub fn is_monotone(self) -> bool {
        matches!(self, Family::Tanh | Family::Relu | Family::CantorFunction)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = EspError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| EspError::Parse {
                what: "activation family".into(),
                reason: format!(
                    "unknown family `{s}` (expected one of: {})",
                    Family::ALL.map(Family::name).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MandelbrotParams {
    /// Input scale: `c = x / scale`.
    pub scale: f64,
    pub t_max: u32,
    /// Escape happens when `|z| > bailout` (strict).
    pub bailout: f64,
}

impl Default for MandelbrotParams {
    fn default() -> Self {
        MandelbrotParams {
            scale: 2.0,
            t_max: 20,
            bailout: 2.0,
        }
    }
}

impl MandelbrotParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_max < 1 {
            return Err(EspError::invalid("mandelbrot t_max", "must be at least 1"));
        }
        if !(self.bailout >= 2.0) {
            return Err(EspError::invalid("mandelbrot bailout", "must be at least 2"));
        }
        if !(self.scale.is_finite() && self.scale != 0.0) {
            return Err(EspError::invalid(
                "mandelbrot scale",
                "must be finite and nonzero",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapeTime {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogisticWrapper {
    Sigmoid,
    Modulo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub r: f64,
    pub eps: f64,
    pub wrapper: LogisticWrapper,
}

impl LogisticParams {
    pub fn new(wrapper: LogisticWrapper) -> Self {
        LogisticParams {
            r: 3.7,
            eps: 1e-10,
            wrapper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 4.0) {
            return Err(EspError::invalid("logistic r", "must lie in (0, 4]"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(EspError::invalid("logistic eps", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeierstrassParams {
    pub a: f64,
    pub b: f64,
    pub terms: u32,
    /// Input scale inside the cosine. Not pinned down by the construction;
    /// results that depend on it should say which value they used.
    pub scale: f64,
}

impl Default for WeierstrassParams {
    fn default() -> Self {
        WeierstrassParams {
            a: 0.5,
            b: 3.0,
            terms: 10,
            scale: 1.0,
        }
    }
}

impl WeierstrassParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(EspError::invalid("weierstrass a", "must lie in (0, 1)"));
        }
        if !(self.a * self.b > 1.0) {
            return Err(EspError::invalid("weierstrass b", "a*b must exceed 1"));
        }
        if self.terms < 1 {
            return Err(EspError::invalid("weierstrass terms", "must be at least 1"));
        }
        if !self.scale.is_finite() {
            return Err(EspError::invalid("weierstrass scale", "must be finite"));
        }
        Ok(())
    }

    /// `(1 - a^K) / (1 - a)^2`, the sup of `|f|`.
    pub fn bound(&self) -> f64 {
        (1.0 - self.a.powi(self.terms as i32)) / ((1.0 - self.a) * (1.0 - self.a))
    }
}

/// Depth is capped at 64; below `3^-40` the sigmoid output has no more
/// ternary digits to resolve anyway.
pub const MAX_CANTOR_DEPTH: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantorParams {
    pub depth: u32,
}

impl Default for CantorParams {
    fn default() -> Self {
        CantorParams { depth: 10 }
    }
}

impl CantorParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_CANTOR_DEPTH).contains(&self.depth) {
            return Err(EspError::invalid(
                "cantor depth",
                format!("must lie in 1..={MAX_CANTOR_DEPTH}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianParams {
    pub eta: f64,
    pub dt: f64,
    /// Increments are clamped to `±k_sigma * sqrt(dt)`.
    pub k_sigma: f64,
}

impl Default for BrownianParams {
    fn default() -> Self {
        BrownianParams {
            eta: 0.3,
            dt: 0.01,
            k_sigma: 3.0,
        }
    }
}

impl BrownianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(EspError::invalid("brownian eta", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(EspError::invalid("brownian dt", "must be positive"));
        }
        if !(self.k_sigma > 0.0) {
            return Err(EspError::invalid("brownian k_sigma", "must be positive"));
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        self.eta * (1.0 + self.k_sigma * self.dt.sqrt())
    }
}

/// Closed output interval `[lo, hi]`; `hi` is infinite for ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// `max(|lo|, |hi|)`, the absorbing-set half width.
    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// Finite, sorted set of output levels of a quantized activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    levels: Vec<f64>,
}

impl Codebook {
    pub fn new(mut levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(EspError::invalid("codebook", "levels must be finite"));
        }
        levels.sort_by(f64::total_cmp);
        if levels.len() < 2 {
            return Err(EspError::invalid("codebook", "needs at least two levels"));
        }
        if levels.windows(2).any(|w| w[0] == w[1]) {
            return Err(EspError::invalid("codebook", "levels must be distinct"));
        }
        Ok(Codebook { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of `v` in the codebook under exact equality.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        self.levels.binary_search_by(|probe| probe.total_cmp(&v)).ok()
    }
}

/// One activation family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationSpec {
    Tanh,
    Relu,
    Mandelbrot {
        params: MandelbrotParams,
        variant: EscapeTime,
    },
    Logistic(LogisticParams),
    Weierstrass(WeierstrassParams),
    CantorFunction(CantorParams),
    CantorSet(CantorParams),
    Brownian(BrownianParams),
}

impl ActivationSpec {
    /// The family with its default parameters.
    pub fn new(family: Family) -> Self {
        match family {
            Family::Tanh => ActivationSpec::Tanh,
            Family::Relu => ActivationSpec::Relu,
            Family::MandelbrotDiscrete => ActivationSpec::Mandelbrot {
                params: MandelbrotParams::default(),
                variant: EscapeTime::Discrete,
            },
            Family::MandelbrotContinuous => ActivationSpec::Mandelbrot {
                params: MandelbrotParams::default(),
                variant: EscapeTime::Continuous,
            },
            Family::LogisticSigmoid => {
                ActivationSpec::Logistic(LogisticParams::new(LogisticWrapper::Sigmoid))
            }
            Family::LogisticModulo => ActivationSpec::Logistic(LogisticParams::new(LogisticWrapper::Modulo)),
            Family::Weierstrass => ActivationSpec::Weierstrass(WeierstrassParams::default()),
            Family::CantorFunction => ActivationSpec::CantorFunction(CantorParams::default()),
            Family::CantorSet => ActivationSpec::CantorSet(CantorParams::default()),
            Family::Brownian => ActivationSpec::Brownian(BrownianParams::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ActivationSpec::Tanh => Family::Tanh,
            ActivationSpec::Relu => Family::Relu,
            ActivationSpec::Mandelbrot {
                variant: EscapeTime::Discrete,
                ..
            } => Family::MandelbrotDiscrete,
            ActivationSpec::Mandelbrot {
                variant: EscapeTime::Continuous,
                ..
            } => Family::MandelbrotContinuous,
            ActivationSpec::Logistic(p) => match p.wrapper {
                LogisticWrapper::Sigmoid => Family::LogisticSigmoid,
                LogisticWrapper::Modulo => Family::LogisticModulo,
            },
            ActivationSpec::Weierstrass(_) => Family::Weierstrass,
            ActivationSpec::CantorFunction(_) => Family::CantorFunction,
            ActivationSpec::CantorSet(_) => Family::CantorSet,
            ActivationSpec::Brownian(_) => Family::Brownian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActivationSpec::Tanh | ActivationSpec::Relu => Ok(()),
            ActivationSpec::Mandelbrot { params, .. } => params.validate(),
            ActivationSpec::Logistic(p) => p.validate(),
            ActivationSpec::Weierstrass(p) => p.validate(),
            ActivationSpec::CantorFunction(p) | ActivationSpec::CantorSet(p) => p.validate(),
            ActivationSpec::Brownian(p) => p.validate(),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, ActivationSpec::Brownian(_))
    }

    pub fn declared_bounds(&self) -> Bounds {
        match self {
            ActivationSpec::Tanh => Bounds { lo: -1.0, hi: 1.0 },
            ActivationSpec::Relu => Bounds {
                lo: 0.0,
                hi: f64::INFINITY,
            },
            ActivationSpec::Mandelbrot { .. }
            | ActivationSpec::CantorFunction(_)
            | ActivationSpec::CantorSet(_) => Bounds { lo: 0.0, hi: 1.0 },
            ActivationSpec::Logistic(p) => Bounds {
                lo: 0.0,
                hi: p.r / 4.0,
            },
            ActivationSpec::Weierstrass(p) => {
                let c = p.bound();
                Bounds { lo: -c, hi: c }
            }
            ActivationSpec::Brownian(p) => {
                let c = p.bound();
                Bounds { lo: -c, hi: c }
            }
        }
    }

    /// Output levels for the quantized families (discrete Mandelbrot and the
    /// Cantor set indicator), `None` otherwise.
    pub fn codebook(&self) -> Option<Codebook> {
        match self {
            ActivationSpec::Mandelbrot {
                params,
                variant: EscapeTime::Discrete,
            } => {
                let t_max = params.t_max as f64;
                let levels = (0..=params.t_max).map(|n| n as f64 / t_max).collect();
                Codebook::new(levels).ok()
            }
            ActivationSpec::CantorSet(_) => Codebook::new(vec![0.0, 1.0]).ok(),
            _ => None,
        }
    }

    /// Evaluates a deterministic family. Brownian needs a noise stream and is
    /// rejected here; use [`ActivationSpec::eval_with`] instead.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            ActivationSpec::Brownian(_) => Err(EspError::UnsupportedFamily {
                operation: "deterministic evaluation",
                family: Family::Brownian.name(),
            }),
            _ => Ok(self.eval_pure(x)),
        }
    }

    pub fn eval_with<R: Rng + ?Sized>(&self, x: f64, rng: Option<&mut R>) -> Result<f64> {
        match (self, rng) {
            (ActivationSpec::Brownian(p), Some(rng)) => Ok(eval_brownian(x, p, rng)),
            (ActivationSpec::Brownian(_), None) => Err(missing_noise_stream()),
            _ => Ok(self.eval_pure(x)),
        }
    }

    // Callers guarantee this is never reached with Brownian.
    #[inline]
    fn eval_pure(&self, x: f64) -> f64 {
        match self {
            ActivationSpec::Tanh => eval_baseline(x, Family::Tanh),
            ActivationSpec::Relu => eval_baseline(x, Family::Relu),
            ActivationSpec::Mandelbrot { params, variant } => eval_mandelbrot(x, params, *variant),
            ActivationSpec::Logistic(p) => eval_logistic(x, p),
            ActivationSpec::Weierstrass(p) => eval_weierstrass(x, p),
            ActivationSpec::CantorFunction(p) => eval_cantor_function(x, p),
            ActivationSpec::CantorSet(p) => eval_cantor_set(x, p),
            ActivationSpec::Brownian(p) => p.eta * x.tanh(),
        }
    }

    /// Writes `f(input[i])` into `out[i]`. Brownian draws one independent
    /// increment per component, in index order.
    pub fn apply_into<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        out: &mut [f64],
        rng: Option<&mut R>,
    ) -> Result<()> {
        if input.len() != out.len() {
            return Err(EspError::invalid(
                "activation output",
                format!("length {} does not match input length {}", out.len(), input.len()),
            ));
        }
        match (self, rng) {
            (ActivationSpec::Brownian(p), Some(rng)) => {
                for (o, &x) in out.iter_mut().zip(input) {
                    *o = eval_brownian(x, p, rng);
                }
            }
            (ActivationSpec::Brownian(_), None) => return Err(missing_noise_stream()),
            _ => {
                for (o, &x) in out.iter_mut().zip(input) {
                    *o = self.eval_pure(x);
                }
            }
        }
        Ok(())
    }

    pub fn apply_elementwise<R: Rng + ?Sized>(&self, v: &[f64], rng: Option<&mut R>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out, rng)?;
        Ok(out)
    }

    fn non_default_params(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |key: &'static str, value: f64, default: f64| {
            if value != default {
                out.push((key, value.to_string()));
            }
        };
        match self {
            ActivationSpec::Tanh | ActivationSpec::Relu => {}
            ActivationSpec::Mandelbrot { params, .. } => {
                let d = MandelbrotParams::default();
                push("s", params.scale, d.scale);
                push("t_max", params.t_max as f64, d.t_max as f64);
                push("bailout", params.bailout, d.bailout);
            }
            ActivationSpec::Logistic(p) => {
                let d = LogisticParams::new(p.wrapper);
                push("r", p.r, d.r);
                push("eps", p.eps, d.eps);
            }
            ActivationSpec::Weierstrass(p) => {
                let d = WeierstrassParams::default();
                push("a", p.a, d.a);
                push("b", p.b, d.b);
                push("terms", p.terms as f64, d.terms as f64);
                push("s", p.scale, d.scale);
            }
            ActivationSpec::CantorFunction(p) | ActivationSpec::CantorSet(p) => {
                push("depth", p.depth as f64, CantorParams::default().depth as f64);
            }
            ActivationSpec::Brownian(p) => {
                let d = BrownianParams::default();
                push("eta", p.eta, d.eta);
                push("dt", p.dt, d.dt);
                push("k_sigma", p.k_sigma, d.k_sigma);
            }
        }
        out
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let unknown = || EspError::Parse {
            what: "activation parameter".into(),
            reason: format!("`{key}` is not a parameter of this family"),
        };
        let as_u32 = |v: f64| -> Result<u32> {
            if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(EspError::Parse {
                    what: "activation parameter".into(),
                    reason: format!("`{key}` must be a non-negative integer"),
                })
            }
        };
        match self {
            ActivationSpec::Tanh | ActivationSpec::Relu => return Err(unknown()),
            ActivationSpec::Mandelbrot { params, .. } => match key {
                "s" | "scale" => params.scale = value,
                "t_max" => params.t_max = as_u32(value)?,
                "bailout" => params.bailout = value,
                _ => return Err(unknown()),
            },
            ActivationSpec::Logistic(p) => match key {
                "r" => p.r = value,
                "eps" => p.eps = value,
                _ => return Err(unknown()),
            },
            ActivationSpec::Weierstrass(p) => match key {
                "a" => p.a = value,
                "b" => p.b = value,
                "terms" | "k" => p.terms = as_u32(value)?,
                "s" | "scale" => p.scale = value,
                _ => return Err(unknown()),
            },
            ActivationSpec::CantorFunction(p) | ActivationSpec::CantorSet(p) => match key {
                "depth" | "d" => p.depth = as_u32(value)?,
                _ => return Err(unknown()),
            },
            ActivationSpec::Brownian(p) => match key {
                "eta" => p.eta = value,
                "dt" => p.dt = value,
                "k_sigma" => p.k_sigma = value,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }
}

fn missing_noise_stream() -> EspError {
    EspError::invalid(
        "activation configuration",
        "the brownian activation requires a random stream",
    )
}

/// Renders as the family name, followed by `:key=value,...` for every
/// parameter that differs from its default.
impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family().name())?;
        let params = self.non_default_params();
        for (i, (k, v)) in params.iter().enumerate() {
            let sep = if i == 0 { ':' } else { ',' };
            write!(f, "{sep}{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for ActivationSpec {
    type Err = EspError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let mut spec = ActivationSpec::new(name.parse()?);
        for pair in rest
            .into_iter()
            .flat_map(|r| r.split(','))
            .filter(|p| !p.trim().is_empty())
        {
            let (k, v) = pair.split_once('=').ok_or_else(|| EspError::Parse {
                what: "activation parameter".into(),
                reason: format!("expected key=value, got `{pair}`"),
            })?;
            let value: f64 = v.trim().parse().map_err(|_| EspError::Parse {
                what: "activation parameter".into(),
                reason: format!("`{v}` is not a number"),
            })?;
            spec.set_param(k.trim(), value)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for ActivationSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn eval_baseline(x: f64, family: Family) -> f64 {
    match family {
        Family::Relu => x.max(0.0),
        _ => x.tanh(),
    }
}

/// Escape time of `z -> z^2 + c`, `c = x / scale`, normalised by `t_max`.
///
/// With a real `c` and `z_0 = 0` every iterate is real, so the recurrence is
/// run in real arithmetic.
pub fn eval_mandelbrot(x: f64, params: &MandelbrotParams, variant: EscapeTime) -> f64 {
    let c = x / params.scale;
    let t_max = params.t_max as f64;
    let mut z = 0.0_f64;
    for n in 1..=params.t_max {
        z = z * z + c;
        let modulus = z.abs();
        if modulus > params.bailout {
            let t = match variant {
                EscapeTime::Discrete => n as f64,
                EscapeTime::Continuous => (n as f64 - modulus.log2().log2()).clamp(0.0, t_max),
            };
            return t / t_max;
        }
    }
    1.0
}

pub fn eval_logistic(x: f64, params: &LogisticParams) -> f64 {
    let y = match params.wrapper {
        LogisticWrapper::Sigmoid => sigmoid(x),
        LogisticWrapper::Modulo => x.abs().fract().clamp(params.eps, 1.0 - params.eps),
    };
    params.r * y * (1.0 - y)
}

pub fn eval_weierstrass(x: f64, params: &WeierstrassParams) -> f64 {
    let base = std::f64::consts::PI * params.scale * x;
    let mut amp = 1.0;
    let mut freq = 1.0;
    let mut sum = 0.0;
    for _ in 0..params.terms {
        sum += amp * (freq * base).cos();
        amp *= params.a;
        freq *= params.b;
    }
    sum / (1.0 - params.a)
}

/// Devil's staircase `c_d(sigmoid(x))`.
///
/// The ternary branch taken at each level is recorded on the way down and the
/// halvings are replayed innermost-first, which reproduces the recursive
/// definition bit for bit without recursing.
pub fn eval_cantor_function(x: f64, params: &CantorParams) -> f64 {
    let depth = params.depth.min(MAX_CANTOR_DEPTH) as usize;
    let mut y = sigmoid(x);
    let mut upper = 0u64;
    let mut levels = 0usize;
    let mut inner = None;
    while levels < depth {
        if y <= 1.0 / 3.0 {
            y *= 3.0;
        } else if y < 2.0 / 3.0 {
            inner = Some(0.5);
            break;
        } else {
            upper |= 1 << levels;
            y = 3.0 * y - 2.0;
        }
        levels += 1;
    }
    let mut v = inner.unwrap_or(y);
    for level in (0..levels).rev() {
        v = if upper & (1 << level) != 0 {
            0.5 + 0.5 * v
        } else {
            0.5 * v
        };
    }
    v
}

/// Indicator of the depth-`d` ternary Cantor set applied to `sigmoid(x)`.
pub fn eval_cantor_set(x: f64, params: &CantorParams) -> f64 {
    let y = sigmoid(x);
    let mut pow3 = 1.0;
    for _ in 0..params.depth {
        if (pow3 * y).rem_euclid(3.0).floor() == 1.0 {
            return 0.0;
        }
        pow3 *= 3.0;
    }
    1.0
}

/// `eta * (tanh(x) + w)` with `w ~ N(0, dt)` clamped to `±k_sigma * sqrt(dt)`.
pub fn eval_brownian<R: Rng + ?Sized>(x: f64, params: &BrownianParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    eval_brownian_with_increment(x, params, z * params.dt.sqrt())
}

pub fn eval_brownian_with_increment(x: f64, params: &BrownianParams, w: f64) -> f64 {
    let m = params.k_sigma * params.dt.sqrt();
    params.eta * (x.tanh() + w.clamp(-m, m))
}
