//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use faer::Mat;

/// Spectral radius by repeated squaring: `‖W^(2^j)‖^(1/2^j) → ρ(W)`.
///
/// The matrix is renormalised after every squaring and the log of the
/// discarded scale is carried separately, so nothing overflows. Uses only
/// matrix products, never an eigen solver.
pub fn spectral_radius_by_squaring(w: &Mat<f64>, rounds: u32) -> f64 {
    let mut b = w.clone();
    let norm = b.norm_l2();
    if norm == 0.0 {
        return 0.0;
    }
    b = &b * faer::Scale(1.0 / norm);
    let mut log_scale = norm.ln();
    for j in 1..=rounds {
        let sq = &b * &b;
        let c = sq.norm_l2();
        if c == 0.0 {
            return 0.0;
        }
        b = &sq * faer::Scale(1.0 / c);
        log_scale = 2.0 * log_scale + c.ln();
        if j == rounds {
            break;
        }
    }
    (log_scale / 2f64.powi(rounds as i32)).exp()
}

/// Literal four-branch recursion of the depth-`d` Cantor function.
pub fn cantor_recursive(y: f64, d: u32) -> f64 {
    if d == 0 {
        y
    } else if y <= 1.0 / 3.0 {
        0.5 * cantor_recursive(3.0 * y, d - 1)
    } else if y < 2.0 / 3.0 {
        0.5
    } else {
        0.5 + 0.5 * cantor_recursive(3.0 * y - 2.0, d - 1)
    }
}

/// `D_L` and `δ_L` by enumerating every pair.
pub fn pairwise_separations(levels: &[f64]) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut min = f64::INFINITY;
    for (i, a) in levels.iter().enumerate() {
        for b in &levels[i + 1..] {
            let d = (a - b).abs();
            max = max.max(d);
            if d > 0.0 {
                min = min.min(d);
            }
        }
    }
    (max, min)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}
