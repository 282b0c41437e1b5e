//! Stability diagnostics: empirical Lipschitz statistics, the leak-adjusted
//! effective gain, the crowding ratio and codebook separations.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::error::{EspError, Result};
use crate::io;
use crate::reservoir::{operator_norm, OperatorNorm, ReservoirMatrices, Trajectory};
use crate::rng;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_DOMAIN: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzStats {
    pub max: f64,
    pub median: f64,
    pub p95: f64,
    pub sample_count: usize,
    pub epsilon: f64,
    pub domain: (f64, f64),
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn deterministic(spec: &ActivationSpec, operation: &'static str) -> Result<()> {
    if spec.is_stochastic() {
        return Err(EspError::UnsupportedFamily {
            operation,
            family: spec.family().name(),
        });
    }
    spec.validate()
}

fn validate_probe(epsilon: f64, domain: (f64, f64)) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EspError::invalid("epsilon", "must be positive and finite"));
    }
    if !(domain.0 < domain.1 && domain.0.is_finite() && domain.1.is_finite()) {
        return Err(EspError::invalid(
            "domain",
            "must be a finite interval with lo < hi",
        ));
    }
    Ok(())
}

/// Forward-difference slopes `|f(x + ε) - f(x)| / ε` at `samples` points
/// drawn uniformly from `domain`.
pub fn estimate_lipschitz(
    spec: &ActivationSpec,
    epsilon: f64,
    samples: usize,
    domain: (f64, f64),
    seed: u64,
) -> Result<LipschitzStats> {
    deterministic(spec, "Lipschitz estimation")?;
    validate_probe(epsilon, domain)?;
    if samples < 1 {
        return Err(EspError::invalid("samples", "must be at least 1"));
    }
    let mut r = rng::stream(seed);
    let xs: Vec<f64> = (0..samples).map(|_| r.random_range(domain.0..domain.1)).collect();
    lipschitz_stats_at(spec, &xs, epsilon, domain)
}

/// Same statistics at explicit sample points.
pub fn lipschitz_stats_at(
    spec: &ActivationSpec,
    xs: &[f64],
    epsilon: f64,
    domain: (f64, f64),
) -> Result<LipschitzStats> {
    deterministic(spec, "Lipschitz estimation")?;
    validate_probe(epsilon, domain)?;
    if xs.is_empty() {
        return Err(EspError::invalid("samples", "must be nonempty"));
    }
    let mut slopes = xs
        .iter()
        .map(|&x| Ok((spec.eval(x + epsilon)? - spec.eval(x)?).abs() / epsilon))
        .collect::<Result<Vec<f64>>>()?;
    slopes.sort_by(f64::total_cmp);
    Ok(LipschitzStats {
        max: *slopes.last().expect("nonempty"),
        median: percentile(&slopes, 0.5),
        p95: percentile(&slopes, 0.95),
        sample_count: slopes.len(),
        epsilon,
        domain,
    })
}

pub fn write_lipschitz_csv(rows: &[(ActivationSpec, LipschitzStats)], path: &Path) -> Result<()> {
    let body = io::csv(
        "family,max,median,p95",
        rows.iter().map(|(spec, s)| {
            [
                spec.to_string(),
                io::fmt_f64(s.max),
                io::fmt_f64(s.median),
                io::fmt_f64(s.p95),
            ]
        }),
    );
    io::write_atomic(path, body.as_bytes())
}

/// `(1 - a) + a · l_g · ‖W‖`, a sufficient contraction rate when below one.
pub fn effective_gain(a: f64, l_g: f64, w_norm: f64) -> f64 {
    (1.0 - a) + a * l_g * w_norm
}

/// Reservoir size over number of quantization levels.
pub fn crowding_ratio(n: usize, k: usize) -> Result<f64> {
    if n < 1 {
        return Err(EspError::invalid("n", "must be at least 1"));
    }
    if k < 2 {
        return Err(EspError::invalid("k", "a codebook needs at least two levels"));
    }
    Ok(n as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    /// Largest pairwise separation.
    pub d_l: f64,
    /// Smallest separation between distinct levels.
    pub delta_l: f64,
    pub k: usize,
}

pub fn codebook_stats(levels: &[f64]) -> Result<CodebookStats> {
    if levels.len() < 2 {
        return Err(EspError::invalid("codebook", "needs at least two levels"));
    }
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(EspError::invalid("codebook", "levels must be finite"));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut delta_l = f64::INFINITY;
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap == 0.0 {
            return Err(EspError::invalid("codebook", "levels must be distinct"));
        }
        delta_l = delta_l.min(gap);
    }
    Ok(CodebookStats {
        d_l: sorted[sorted.len() - 1] - sorted[0],
        delta_l,
        k: sorted.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainProxy {
    /// Time average of `(1 - a) + a · mean slope · ‖W‖`.
    pub value: f64,
    /// Pre-activation samples skipped because they sit on a jump.
    pub excluded: usize,
    pub evaluated: usize,
    pub w_norm: f64,
}

/// Leak-adjusted gain averaged along a recorded trajectory, using central
/// differences of the activation at every pre-activation value. For
/// quantized activations any point whose two probes land on different levels
/// is a jump and is left out of the mean.
pub fn mean_jacobian_gain_proxy(
    trajectory: &Trajectory,
    spec: &ActivationSpec,
    m: &ReservoirMatrices,
    a: f64,
    epsilon: f64,
    norm: OperatorNorm,
) -> Result<GainProxy> {
    deterministic(spec, "Jacobian gain proxy")?;
    let quantized = spec.codebook().is_some();
    let f = |x: f64| spec.eval(x).expect("deterministic family");
    gain_proxy_with(
        &trajectory.pre_activations,
        f,
        |lo, hi| quantized && lo != hi,
        a,
        operator_norm(m, norm),
        epsilon,
    )
}

/// Core of [`mean_jacobian_gain_proxy`] with an arbitrary scalar map and jump
/// predicate (called with `f(x - ε)` and `f(x + ε)`).
pub fn gain_proxy_with<F, J>(
    pre_activations: &[Vec<f64>],
    f: F,
    is_jump: J,
    a: f64,
    w_norm: f64,
    epsilon: f64,
) -> Result<GainProxy>
where
    F: Fn(f64) -> f64,
    J: Fn(f64, f64) -> bool,
{
    crate::reservoir::validate_leak(a)?;
    validate_probe(epsilon, (0.0, 1.0))?;
    if pre_activations.is_empty() {
        return Err(EspError::invalid("trajectory", "has no recorded steps"));
    }
    let (mut excluded, mut evaluated) = (0usize, 0usize);
    let mut slope_total = 0.0;
    for row in pre_activations {
        let (mut sum, mut count) = (0.0, 0usize);
        for &x in row {
            let (lo, hi) = (f(x - epsilon), f(x + epsilon));
            if is_jump(lo, hi) {
                excluded += 1;
                continue;
            }
            sum += (hi - lo).abs() / (2.0 * epsilon);
            count += 1;
        }
        evaluated += count;
        if count > 0 {
            slope_total += sum / count as f64;
        }
    }
    // The gain is affine in the slope, so averaging slopes first is the same
    // time average and keeps the zero-slope case exact.
    let mean_slope = slope_total / pre_activations.len() as f64;
    Ok(GainProxy {
        value: effective_gain(a, mean_slope, w_norm),
        excluded,
        evaluated,
        w_norm,
    })
}
