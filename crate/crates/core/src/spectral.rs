//! Generalized eigenspace filtration `E(A, r, m)`, asymptotic growth of
//! `|A^k z|`, and eigenvalue sandwich constants for powers of `A`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, kernel_staircase, orth, Mat, C64};
use crate::{Error, Result, Tolerances};

/// Orthonormal real basis of a subspace `E(A, r, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenFiltrationSpace {
    pub modulus: f64,
    pub order: usize,
    /// `d x k`, orthonormal columns.
    #[serde(with = "crate::spectral::basis_serde")]
    pub basis: Mat,
}

impl EigenFiltrationSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Distance from `v` to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        let proj = &self.basis * (self.basis.transpose() * v);
        (v - proj).norm()
    }
}

pub(crate) mod basis_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    // columns, since the basis may be empty or rectangular
    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cols: Vec<Vec<f64>> = m
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        cols.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let cols = Vec::<Vec<f64>>::deserialize(d)?;
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(serde::de::Error::custom("ragged basis"));
        }
        Ok(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
    }
}

/// Distinct eigenvalues with multiplicities, taken from the (escalating)
/// clustering of the real Jordan form so that defective clusters are not
/// split. Only one member of each conjugate pair is returned.
fn eigen_clusters(a: &Mat, tol: &Tolerances) -> Result<Vec<(C64, usize)>> {
    let j = linalg::real_jordan_form(a, tol)?;
    Ok(j.blocks
        .iter()
        .map(|b| (b.eigenvalue(), b.dim() / b.cell_dim()))
        .collect())
}

/// Real vectors spanning `Ker(A - lambda I)^power` together with its
/// conjugate.
fn realified_kernel(a: &Mat, lambda: C64, power: usize, rank: f64) -> Vec<DVector<f64>> {
    let d = a.nrows();
    if power == 0 {
        return Vec::new();
    }
    let scale = linalg::operator_norm(a);
    if lambda.im == 0.0 {
        let m = a - Mat::identity(d, d) * lambda.re;
        let ks = kernel_staircase(&m, power, rank, scale);
        ks.last()
            .expect("non-empty")
            .column_iter()
            .map(|c| c.into_owned())
            .collect()
    } else {
        let m: DMatrix<C64> = a.map(C64::from) - DMatrix::<C64>::identity(d, d) * lambda;
        let ks = kernel_staircase(&m, power, rank, scale);
        ks.last()
            .expect("non-empty")
            .column_iter()
            .flat_map(|c| [c.map(|z| z.re), c.map(|z| z.im)])
            .collect()
    }
}

fn span_of(d: usize, vectors: Vec<DVector<f64>>) -> Mat {
    if vectors.is_empty() {
        return Mat::zeros(d, 0);
    }
    orth(&Mat::from_columns(&vectors), 1e-8)
}

fn filtration(
    a: &Mat,
    r: f64,
    m: usize,
    modulus_tol: f64,
    include_below: bool,
    tol: &Tolerances,
) -> Result<EigenFiltrationSpace> {
    linalg::check_matrix(a)?;
    if !(r > 0.0) {
        return Err(Error::InvalidInput("modulus must be positive".into()));
    }
    let d = a.nrows();
    let close = modulus_tol * r.max(1.0);
    let mut vectors = Vec::new();
    for (lambda, _) in eigen_clusters(a, tol)? {
        let modulus = lambda.norm();
        if (modulus - r).abs() <= close {
            vectors.extend(realified_kernel(a, lambda, m.min(d), tol.rank));
        } else if include_below && modulus < r {
            vectors.extend(realified_kernel(a, lambda, d, tol.rank));
        }
    }
    Ok(EigenFiltrationSpace {
        modulus: r,
        order: m,
        basis: span_of(d, vectors),
    })
}

/// `E(A, r, m)`: kernels of `(A - lambda I)^m` over `|lambda| = r` plus full
/// generalized eigenspaces below modulus `r`, realified. `tol` is the
/// relative modulus matching tolerance.
pub fn generalized_eigenspace(a: &Mat, r: f64, m: usize, tol: f64) -> Result<EigenFiltrationSpace> {
    filtration(a, r, m, tol, true, &Tolerances::default())
}

/// Only the `|lambda| = r` part: span of `Ker(A - lambda I)^m`, `|lambda| = r`.
pub fn modulus_kernel_span(a: &Mat, r: f64, m: usize, tol: f64) -> Result<EigenFiltrationSpace> {
    filtration(a, r, m, tol, false, &Tolerances::default())
}

/// Sine of the largest principal angle; 1 when dimensions differ.
pub fn subspace_distance(u: &Mat, v: &Mat) -> f64 {
    if u.ncols() != v.ncols() {
        return 1.0;
    }
    if u.ncols() == 0 {
        return 0.0;
    }
    let resid = v - u * (u.transpose() * v);
    linalg::operator_norm(&resid).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub rate: f64,
    pub polynomial_degree: usize,
    /// Root mean square of `log|A^k z| - log(c k^m r^k)` over the range.
    pub fit_residual: f64,
    pub k_range: (usize, usize),
    /// Unconstrained fit of `log|A^k z| ~ c0 + c1 log k + c2 k`, diagnostics only.
    pub continuous_degree: f64,
    pub continuous_rate: f64,
}

/// `log|A^k z|` for `k = 0..=k_max`, renormalizing every step.
///
/// The orbit is iterated in the real Jordan frame of `A`, with coordinates
/// of `z` below `tol.rank` relative to the largest one set to zero: in the
/// original basis rounding leaks into faster blocks and eventually
/// dominates the orbit of a vector in a slow generalized eigenspace.
/// Falls back to dense iteration when no Jordan basis is available.
pub fn log_orbit_norms(a: &Mat, z: &DVector<f64>, k_max: usize) -> Result<Vec<f64>> {
    let n0 = z.norm();
    if n0 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let tol = Tolerances::default();
    let (step, basis, mut v) = match linalg::real_jordan_form(a, &tol) {
        Ok(j) => {
            let mut y = &j.basis_inv * z;
            let cut = tol.rank * y.amax();
            y.iter_mut()
                .filter(|x| x.abs() <= cut)
                .for_each(|x| *x = 0.0);
            (j.jordan, Some(j.basis), y)
        }
        Err(e) if e.is_numerical() => (a.clone(), None, z.clone()),
        Err(e) => return Err(e),
    };
    let norm = |v: &DVector<f64>| basis.as_ref().map_or_else(|| v.norm(), |c| (c * v).norm());
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(norm(&v).ln());
    for _ in 0..k_max {
        v = &step * v;
        let n = v.amax();
        if n == 0.0 {
            return Err(Error::SingularMatrix { min_modulus: 0.0 });
        }
        acc += n.ln();
        v /= n;
        out.push(acc + norm(&v).ln());
    }
    Ok(out)
}

/// Least squares on the columns of `design`.
pub(crate) fn lstsq(design: &Mat, y: &DVector<f64>) -> DVector<f64> {
    let svd = design.clone().svd(true, true);
    svd.solve(y, 1e-12).expect("SVD computed with U and V")
}

/// Fits `log|A^k z| = log c + m log k + k log r` with integer `m` in
/// `0..d`, choosing the `m` with the smallest residual.
pub fn growth_exponents(
    a: &Mat,
    z: &DVector<f64>,
    k_min: usize,
    k_max: usize,
) -> Result<GrowthEstimate> {
    linalg::check_matrix(a)?;
    if z.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            left: a.nrows(),
            right: z.len(),
        });
    }
    if k_min < 1 || k_max < k_min + 20 {
        return Err(Error::InvalidInput(
            "growth fit needs 1 <= k_min and k_max - k_min >= 20".into(),
        ));
    }
    let logs = log_orbit_norms(a, z, k_max)?;
    let ks: Vec<f64> = (k_min..=k_max).map(|k| k as f64).collect();
    let y = DVector::from_iterator(ks.len(), (k_min..=k_max).map(|k| logs[k]));
    let n = ks.len();

    let lin = Mat::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ks[i] });
    let mut best: Option<(usize, f64, f64)> = None;
    for m in 0..a.nrows() {
        let ym = DVector::from_fn(n, |i, _| y[i] - m as f64 * ks[i].ln());
        let coef = lstsq(&lin, &ym);
        let resid = ((0..n)
            .map(|i| (ym[i] - coef[0] - coef[1] * ks[i]).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        if best.is_none_or(|(_, r, _)| resid < r) {
            best = Some((m, resid, coef[1].exp()));
        }
    }
    let (m, resid, rate) = best.expect("d >= 1");

    let full = Mat::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => ks[i].ln(),
        _ => ks[i],
    });
    let coef = lstsq(&full, &y);
    Ok(GrowthEstimate {
        rate,
        polynomial_degree: m,
        fit_residual: resid,
        k_range: (k_min, k_max),
        continuous_degree: coef[1],
        continuous_rate: coef[2].exp(),
    })
}

/// Constants with `(1/c) lambda_-^j |x| <= |A^j x| <= c lambda_+^j |x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBounds {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub c: f64,
}

/// Largest power checked when fitting and certifying the sandwich constant.
pub const SANDWICH_POWERS: usize = 40;
const SANDWICH_SAMPLES: usize = 100;

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

fn sandwich_worst(a: &Mat, lm: f64, lp: f64, xs: &[DVector<f64>]) -> f64 {
    let mut worst = 1.0f64;
    for x in xs {
        let mut v = x.clone();
        for j in 0..=SANDWICH_POWERS {
            if j > 0 {
                v = a * v;
            }
            let n = v.norm();
            let (up, down) = (lp.powi(j as i32), lm.powi(j as i32));
            worst = worst.max(n / up).max(down / n);
        }
    }
    worst
}

/// `lambda_- = min|lambda| (1 - margin)`, `lambda_+ = max|lambda| (1 + margin)`
/// and a sampled, then certified, constant `c`.
pub fn eigen_bounds(a: &Mat, margin: f64) -> Result<EigenBounds> {
    eigen_bounds_seeded(a, margin, 0)
}

pub fn eigen_bounds_seeded(a: &Mat, margin: f64, seed: u64) -> Result<EigenBounds> {
    let min_mod = linalg::require_expansive(a)?;
    let max_mod = linalg::eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidInput("margin must lie in (0, 1)".into()));
    }
    let lambda_minus = min_mod * (1.0 - margin);
    if lambda_minus <= 1.0 {
        return Err(Error::NotExpansive(format!(
            "margin {margin} leaves lambda_minus = {lambda_minus} <= 1"
        )));
    }
    let lambda_plus = max_mod * (1.0 + margin);
    let d = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<_> = (0..SANDWICH_SAMPLES)
        .map(|_| random_unit(&mut rng, d))
        .collect();
    let mut c = sandwich_worst(a, lambda_minus, lambda_plus, &sample) * 1.1;

    // certify on fresh samples and on the extreme singular directions of
    // each power
    let fresh: Vec<_> = (0..SANDWICH_SAMPLES)
        .map(|_| random_unit(&mut rng, d))
        .collect();
    let mut extremes = Vec::new();
    let mut p = Mat::identity(d, d);
    for j in 0..=SANDWICH_POWERS {
        if j > 0 {
            p = &p * a;
        }
        let svd = p.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        extremes.extend(v_t.row_iter().map(|r| r.transpose()));
    }
    for _ in 0..8 {
        let worst = sandwich_worst(a, lambda_minus, lambda_plus, &fresh).max(sandwich_worst(
            a,
            lambda_minus,
            lambda_plus,
            &extremes,
        ));
        if worst <= c {
            return Ok(EigenBounds {
                lambda_minus,
                lambda_plus,
                c,
            });
        }
        c = worst * 1.1;
    }
    Err(Error::CertificationFailed { worst: c })
}
