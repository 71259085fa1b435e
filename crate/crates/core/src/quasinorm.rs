//! Step quasi-norms `rho_A(x) = |det A|^j` for `x` in the shell
//! `A^{j+1} Delta \ A^j Delta`, built from an ellipsoid `Delta` with
//! `Delta ⊂ r Delta ⊂ A Delta` and unit volume.

use std::f64::consts::PI;

use nalgebra::{DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use crate::equivalence::PairFrame;
use crate::linalg::{self, rows_serde, Mat};
use crate::spectral::random_unit;
use crate::{Error, Result};

/// Boundary points sampled when certifying the nesting ratio.
pub const CERTIFICATION_SAMPLES: usize = 2000;
const SERIES_CUTOFF: f64 = 1e-12;
const MAX_SERIES_TERMS: usize = 1_000_000;
const EXACT_CHECK_MAX_DIM: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct StepQuasiNorm {
    #[serde(with = "rows_serde")]
    pub matrix: Mat,
    #[serde(skip)]
    pub matrix_inv: Mat,
    /// `Delta = {x : x^T P x < s}`.
    #[serde(with = "rows_serde")]
    pub p: Mat,
    pub s: f64,
    pub det_abs: f64,
    pub nesting_ratio: f64,
    pub delta: f64,
    /// Largest sampled `r^2 q(A^{-1} x) / q(x)`, required below `1 - 1e-9`.
    pub certified_ratio: f64,
}

/// Volume of the euclidean unit ball in dimension `d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

pub fn build_ellipsoid(a: &Mat, delta: Option<f64>) -> Result<StepQuasiNorm> {
    build_ellipsoid_seeded(a, delta, 0)
}

/// `P = sum_k delta^{2k} (A^{-k})^T A^{-k}`, so that
/// `q(A^{-1} x) = delta^{-2} (q(x) - |x|^2) < delta^{-2} q(x)`. The nesting
/// ratio is `r = delta`, certified on sampled boundary points (and exactly
/// for `d <= 8`).
pub fn build_ellipsoid_seeded(a: &Mat, delta: Option<f64>, seed: u64) -> Result<StepQuasiNorm> {
    let min_mod = linalg::require_expansive(a)?;
    let d = a.nrows();
    let margin = 0.05f64.min((min_mod - 1.0) / (2.0 * min_mod));
    let lambda_minus = min_mod * (1.0 - margin);
    let delta = delta.unwrap_or((1.0 + lambda_minus) / 2.0);
    if !(delta > 1.0 && delta < min_mod) {
        return Err(Error::InvalidInput(format!(
            "delta must lie in (1, {min_mod}), got {delta}"
        )));
    }
    let a_inv = a.clone().try_inverse().ok_or(Error::SingularMatrix {
        min_modulus: min_mod,
    })?;

    let step = &a_inv * delta;
    let mut p = Mat::identity(d, d);
    let mut term = Mat::identity(d, d);
    for _ in 0..MAX_SERIES_TERMS {
        term = &step * term;
        let t = term.transpose() * &term;
        let tn = linalg::operator_norm(&t);
        p += t;
        if tn < SERIES_CUTOFF * linalg::operator_norm(&p) {
            break;
        }
    }
    p = (&p + p.transpose()) * 0.5;

    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("ellipsoid form is not positive definite".into()))?;
    let det_p: f64 = chol.l().diagonal().iter().map(|x| x * x).product();
    let s = (det_p.sqrt() / unit_ball_volume(d)).powf(2.0 / d as f64);

    let r = delta;
    let l_inv_t = chol
        .l()
        .try_inverse()
        .ok_or(Error::SingularMatrix { min_modulus: 0.0 })?
        .transpose();
    let form = |x: &DVector<f64>| (x.transpose() * &p * x)[(0, 0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CERTIFICATION_SAMPLES {
        let x = &l_inv_t * random_unit(&mut rng, d);
        worst = worst.max(r * r * form(&(&a_inv * &x)) / form(&x));
    }
    if d <= EXACT_CHECK_MAX_DIM {
        // largest generalized eigenvalue of (A^{-T} P A^{-1}, P)
        let m = l_inv_t.transpose() * a_inv.transpose() * &p * &a_inv * &l_inv_t;
        let m = (&m + m.transpose()) * 0.5;
        let top = SymmetricEigen::new(m).eigenvalues.max();
        worst = worst.max(r * r * top);
    }
    if !(worst <= 1.0 - 1e-9) {
        return Err(Error::CertificationFailed { worst });
    }
    Ok(StepQuasiNorm {
        matrix: a.clone(),
        matrix_inv: a_inv,
        p,
        s,
        det_abs: linalg::determinant(a).abs(),
        nesting_ratio: r,
        delta,
        certified_ratio: worst,
    })
}

impl StepQuasiNorm {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn form(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }

    /// Shell index `j` with `q(A^{-(j+1)} x) < s <= q(A^{-j} x)`, together
    /// with the smaller relative distance of the two tests to the boundary.
    /// `None` for `x = 0`.
    pub fn shell(&self, x: &DVector<f64>) -> Option<(i64, f64)> {
        if x.iter().all(|v| *v == 0.0) {
            return None;
        }
        let s = self.s;
        let mut j = 0i64;
        let mut y = x.clone();
        let mut qy = self.form(&y);
        if qy < s {
            // x inside Delta: step down until q(A^{-j} x) >= s
            while qy < s {
                y = &self.matrix * y;
                qy = self.form(&y);
                j -= 1;
            }
        }
        // now q(A^{-j} x) >= s; step up while the next one is still >= s
        loop {
            let next = &self.matrix_inv * &y;
            let qn = self.form(&next);
            if qn < s {
                let margin = (qy / s - 1.0).abs().min((qn / s - 1.0).abs());
                return Some((j, margin));
            }
            y = next;
            qy = qn;
            j += 1;
        }
    }

    pub fn shell_index(&self, x: &DVector<f64>) -> Option<i64> {
        self.shell(x).map(|(j, _)| j)
    }

    /// `ln rho_A(x)`; `-inf` at the origin.
    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        self.shell_index(x)
            .map_or(f64::NEG_INFINITY, |j| j as f64 * self.det_abs.ln())
    }
}

/// `rho_A(x)`.
pub fn qn_eval(q: &StepQuasiNorm, x: &DVector<f64>) -> f64 {
    match q.shell_index(x) {
        None => 0.0,
        Some(j) => q.det_abs.powi(j as i32),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSample {
    pub radius: f64,
    pub direction: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QnComparison {
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub ratio_low_far: f64,
    pub ratio_high_far: f64,
    pub radius_decades: u32,
    pub samples: Vec<RatioSample>,
}

impl QnComparison {
    /// `ratio_high / ratio_low`.
    pub fn spread(&self) -> f64 {
        self.ratio_high / self.ratio_low
    }

    pub fn far_spread(&self) -> f64 {
        self.ratio_high_far / self.ratio_low_far
    }

    /// Rows `radius,direction,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,direction,ratio\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::report::fmt_f64(s.radius),
                s.direction,
                crate::report::fmt_f64(s.ratio)
            ));
        }
        out
    }
}

/// Radii sampled by [`qn_compare`]: `10^e`, `e` from `-decades` to
/// `decades` in steps of `1/8`.
pub fn comparison_radii(decades: u32) -> Vec<f64> {
    let n = 8 * decades as i64;
    (-n..=n).map(|i| 10f64.powf(i as f64 / 8.0)).collect()
}

pub fn qn_compare(
    qa: &StepQuasiNorm,
    qb: &StepQuasiNorm,
    n_samples: usize,
    radius_decades: u32,
) -> Result<QnComparison> {
    qn_compare_seeded(qa, qb, n_samples, radius_decades, 0)
}

/// `rho_B(x) / rho_A(x)` over `n_samples` random directions and log-spaced
/// radii; the far field is `|x| >= 10^(decades - 1)`.
pub fn qn_compare_seeded(
    qa: &StepQuasiNorm,
    qb: &StepQuasiNorm,
    n_samples: usize,
    radius_decades: u32,
    seed: u64,
) -> Result<QnComparison> {
    if qa.dim() != qb.dim() {
        return Err(Error::DimensionMismatch {
            left: qa.dim(),
            right: qb.dim(),
        });
    }
    if n_samples == 0 || radius_decades == 0 {
        return Err(Error::InvalidInput(
            "comparison needs at least one direction and one decade".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<_> = (0..n_samples)
        .map(|_| random_unit(&mut rng, qa.dim()))
        .collect();
    let far = 10f64.powi(radius_decades as i32 - 1) * (1.0 - 1e-12);
    let mut samples = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_far, mut hi_far) = (f64::INFINITY, f64::NEG_INFINITY);
    for radius in comparison_radii(radius_decades) {
        for (i, u) in dirs.iter().enumerate() {
            let x = u * radius;
            let log_ratio = qb.log_eval(&x) - qa.log_eval(&x);
            lo = lo.min(log_ratio);
            hi = hi.max(log_ratio);
            if radius >= far {
                lo_far = lo_far.min(log_ratio);
                hi_far = hi_far.max(log_ratio);
            }
            samples.push(RatioSample {
                radius,
                direction: i,
                ratio: log_ratio.exp(),
            });
        }
    }
    Ok(QnComparison {
        ratio_low: lo.exp(),
        ratio_high: hi.exp(),
        ratio_low_far: lo_far.exp(),
        ratio_high_far: hi_far.exp(),
        radius_decades,
        samples,
    })
}

/// `max - min` of `ln(rho_B(x) / rho_A(x))` over the orbit points
/// `x = A^k u` and `x = B^k u`, `|k| <= k_max`, of `n_dirs` random unit
/// vectors `u`. Orbits reach the directions where the two quasi-norms
/// separate, which random radial samples rarely hit.
///
/// With `m = floor(eps k)`, `rho_A(A^k u) = |det A|^k rho_A(u)` and
/// `rho_B(A^k u) = |det B|^m rho_B(B^{-m} A^k u)`, the product formed in
/// the Jordan frame of `A`.
pub fn qn_orbit_log_spread(
    qa: &StepQuasiNorm,
    qb: &StepQuasiNorm,
    k_max: usize,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    if qa.dim() != qb.dim() {
        return Err(Error::DimensionMismatch {
            left: qa.dim(),
            right: qb.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<_> = (0..n_dirs)
        .map(|_| random_unit(&mut rng, qa.dim()))
        .collect();
    let tol = crate::Tolerances::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    // orbit of `qx`, ratio taken as sign * ln(rho_other / rho_x)
    for (qx, qy, sign) in [(qa, qb, 1.0), (qb, qa, -1.0)] {
        let pf = PairFrame::new(&qx.matrix, &qy.matrix, &tol)?;
        let (lx, ly) = (qx.det_abs.ln(), qy.det_abs.ln());
        let d = qx.dim();
        let mut products = vec![(0, Mat::identity(d, d), 0.0)];
        for dir in [1i64, -1] {
            let ps = pf.products(k_max, dir, true);
            products.extend(
                ps.into_iter()
                    .enumerate()
                    .map(|(n, (m, sc))| (dir * (n as i64 + 1), m, sc)),
            );
        }
        for (k, m, scale) in products {
            if scale.abs() > 600.0 {
                continue;
            }
            let m = pf.frame.from_frame(&m) * scale.exp();
            let shift = pf.floor.apply(k);
            for u in &dirs {
                let (Some(jx), Some(jy)) = (qx.shell_index(u), qy.shell_index(&(&m * u))) else {
                    continue;
                };
                let r = sign * ((jy + shift) as f64 * ly - (jx + k) as f64 * lx);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    Ok(hi - lo)
}

/// Empirical `max rho(x + y) / (rho(x) + rho(y))` over random pairs with
/// radii log-uniform in `[10^-3, 10^3]`.
pub fn quasi_triangle_constant(q: &StepQuasiNorm, n_pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expo = Uniform::new(-3.0f64, 3.0).expect("valid range");
    let d = q.dim();
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let x = random_unit(&mut rng, d) * 10f64.powf(expo.sample(&mut rng));
        let y = random_unit(&mut rng, d) * 10f64.powf(expo.sample(&mut rng));
        let sum = &x + &y;
        let num = qn_eval(q, &sum);
        let den = qn_eval(q, &x) + qn_eval(q, &y);
        worst = worst.max(num / den);
    }
    worst
}
