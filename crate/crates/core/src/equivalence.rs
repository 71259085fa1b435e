//! Equivalence and coarse equivalence of expansive matrices.
//!
//! Exact decisions go through the expansive normal form: the unique matrix
//! with positive eigenvalues and determinant 2 inducing the same quasi-norm
//! class. Numeric oracles (power-product probes, eigenspace filtrations) run
//! alongside and their agreement is recorded as evidence.

use std::f64::consts::LN_2;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{
    self, exp_blocks, nilpotent_log_unchecked, real_jordan_form, rows_serde, snap, JordanBlock,
    JordanFrame, Mat, RealJordanDecomposition,
};
use crate::report::fmt_f64;
use crate::spectral::{self, subspace_distance};
use crate::{Error, Result, Tolerances};

/// Default number of powers examined per probe side.
pub const DEFAULT_PROBE_KMAX: usize = 100;
pub const MIN_PROBE_KMAX: usize = 50;
const BOUNDED_SLOPE_K: f64 = 1e-3;
const BOUNDED_SLOPE_LOG_K: f64 = 0.15;
/// Relative modulus tolerance when matching eigenvalues across matrices.
const MODULUS_MATCH: f64 = 1e-6;

/// `ln|det A|` from the LU factors.
pub fn log_abs_det(a: &Mat) -> f64 {
    a.clone()
        .lu()
        .u()
        .diagonal()
        .iter()
        .map(|x| x.abs().ln())
        .sum()
}

/// `ln|det A| / ln|det B|`.
pub fn epsilon(a: &Mat, b: &Mat) -> Result<f64> {
    linalg::require_expansive(a)?;
    linalg::require_expansive(b)?;
    Ok(log_abs_det(a) / log_abs_det(b))
}

/// `k -> floor(eps k)`, exact in integers when `eps` is (numerically) a
/// rational with small denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledFloor {
    pub eps: f64,
    /// `(p, q)` with `|eps - p/q| <= 1e-12`, `q <= 10^6`.
    pub ratio: Option<(i64, i64)>,
}

const MAX_DENOMINATOR: i64 = 1_000_000;

fn best_rational(x: f64, max_den: i64) -> Option<(i64, i64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut y = x;
    let mut best = None;
    for _ in 0..64 {
        let a = y.floor();
        if !a.is_finite() || a.abs() > 1e15 {
            break;
        }
        let a = a as i64;
        let (Some(h2), Some(k2)) = (
            a.checked_mul(h1).and_then(|v| v.checked_add(h0)),
            a.checked_mul(k1).and_then(|v| v.checked_add(k0)),
        ) else {
            break;
        };
        if k2 > max_den {
            break;
        }
        best = Some((h2, k2));
        let frac = y - a as f64;
        if frac <= 1e-15 {
            break;
        }
        y = 1.0 / frac;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    best
}

impl ScaledFloor {
    pub fn new(eps: f64) -> Self {
        let ratio = best_rational(eps, MAX_DENOMINATOR)
            .filter(|&(p, q)| (eps - p as f64 / q as f64).abs() <= 1e-12);
        Self { eps, ratio }
    }

    pub fn apply(&self, k: i64) -> i64 {
        match self.ratio {
            Some((p, q)) => (i128::from(p) * i128::from(k)).div_euclid(i128::from(q)) as i64,
            None => {
                let x = self.eps * k as f64;
                let r = x.round();
                if (x - r).abs() <= 0.5 * f64::EPSILON * x.abs() {
                    r as i64
                } else {
                    x.floor() as i64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSide {
    TwoSided,
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Growth {
    Bounded,
    Polynomial {
        degree: f64,
    },
    /// `rate` is the fitted per-step growth factor.
    Exponential {
        rate: f64,
    },
}

impl Growth {
    pub fn is_bounded(&self) -> bool {
        matches!(self, Growth::Bounded)
    }

    fn severity(&self) -> (u8, f64) {
        match *self {
            Growth::Bounded => (0, 0.0),
            Growth::Polynomial { degree } => (1, degree),
            Growth::Exponential { rate } => (2, rate),
        }
    }

    fn worst(self, other: Growth) -> Growth {
        if other.severity() > self.severity() {
            other
        } else {
            self
        }
    }

    fn from_slopes(slope_log_k: f64, slope_k: f64) -> Growth {
        if slope_k.abs() < BOUNDED_SLOPE_K {
            if slope_log_k.abs() < BOUNDED_SLOPE_LOG_K {
                Growth::Bounded
            } else {
                Growth::Polynomial {
                    degree: slope_log_k,
                }
            }
        } else {
            Growth::Exponential {
                rate: slope_k.exp(),
            }
        }
    }
}

impl std::fmt::Display for Growth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Growth::Bounded => f.write_str("bounded"),
            Growth::Polynomial { degree } => write!(f, "polynomial degree={}", fmt_f64(degree)),
            Growth::Exponential { rate } => write!(f, "exponential rate={}", fmt_f64(rate)),
        }
    }
}

/// Regression of the running maximum of one probe side on
/// `{1, ln|k|, |k|}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideFit {
    /// `+1` for `k > 0`, `-1` for `k < 0`.
    pub direction: i8,
    /// Range of `|k|` used in the fit.
    pub window: (usize, usize),
    pub intercept: f64,
    pub slope_log_k: f64,
    pub slope_k: f64,
    pub classification: Growth,
}

/// `log‖A^{-k} B^{floor(eps k)}‖` over a range of `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSeries {
    pub epsilon: f64,
    pub side: ProbeSide,
    pub ks: Vec<i64>,
    pub log_norms: Vec<f64>,
    pub fits: Vec<SideFit>,
    pub classification: Growth,
}

impl ProbeSeries {
    pub fn is_bounded(&self) -> bool {
        self.classification.is_bounded()
    }
}

/// Divides by the largest entry and returns its logarithm.
pub(crate) fn renormalize(m: &mut Mat) -> f64 {
    let s = m.amax();
    if s == 0.0 || !s.is_finite() {
        return 0.0;
    }
    *m /= s;
    s.ln()
}

/// `A` and `B` expressed in the real Jordan frame of `A`. In this frame
/// `A` is exactly block diagonal and structural zeros of `B` are exact, so
/// long products do not accumulate cancellation error.
pub(crate) struct PairFrame {
    pub frame: JordanFrame,
    pub a: Mat,
    pub a_inv: Mat,
    pub b: Mat,
    pub b_inv: Mat,
    pub floor: ScaledFloor,
}

impl PairFrame {
    pub fn new(a: &Mat, b: &Mat, tol: &Tolerances) -> Result<Self> {
        linalg::check_matrix(a)?;
        linalg::check_matrix(b)?;
        linalg::check_same_dim(a, b)?;
        let eps = epsilon(a, b)?;
        let j = real_jordan_form(a, tol)?;
        let frame = JordanFrame::new(&j, tol.verdict);
        let invert = |m: &Mat| -> Result<Mat> {
            let mut inv = m
                .clone()
                .try_inverse()
                .ok_or(Error::SingularMatrix { min_modulus: 0.0 })?;
            snap(&mut inv, tol.verdict);
            Ok(inv)
        };
        let b_f = frame.to_frame(b);
        Ok(Self {
            a_inv: invert(&j.jordan)?,
            b_inv: invert(&b_f)?,
            a: j.jordan,
            b: b_f,
            frame,
            floor: ScaledFloor::new(eps),
        })
    }

    /// Logarithm of the operator norm of `exp(scale) * p` (frame
    /// coordinates) in the original coordinates.
    pub fn log_norm(&self, p: &Mat, scale: f64) -> f64 {
        scale + linalg::operator_norm(&self.frame.from_frame(p)).ln()
    }

    /// Normalized products with log scales for `k = dir * (1..=k_max)`:
    /// `A^{-k} B^{floor(eps k)}`, or with `inverse` its inverse
    /// `B^{-floor(eps k)} A^k`.
    pub fn products(&self, k_max: usize, dir: i64, inverse: bool) -> Vec<(Mat, f64)> {
        let d = self.a.nrows();
        let mut p = Mat::identity(d, d);
        let mut scale = 0.0;
        let mut prev = 0i64;
        let mut out = Vec::with_capacity(k_max);
        for n in 1..=k_max as i64 {
            let e = self.floor.apply(dir * n);
            let de = e - prev;
            prev = e;
            if inverse {
                p = &p * if dir > 0 { &self.a } else { &self.a_inv };
                let left = if de > 0 { &self.b_inv } else { &self.b };
                for _ in 0..de.unsigned_abs() {
                    p = left * &p;
                    scale += renormalize(&mut p);
                }
            } else {
                p = if dir > 0 { &self.a_inv } else { &self.a } * &p;
                let right = if de > 0 { &self.b } else { &self.b_inv };
                for _ in 0..de.unsigned_abs() {
                    p = &p * right;
                    scale += renormalize(&mut p);
                }
            }
            scale += renormalize(&mut p);
            out.push((p.clone(), scale));
        }
        out
    }

    /// `log‖A^{-k} B^{floor(eps k)}‖` for `k = dir * 1 ..= dir * k_max`.
    fn side(&self, k_max: usize, dir: i64) -> Vec<f64> {
        self.products(k_max, dir, false)
            .iter()
            .map(|(p, s)| self.log_norm(p, *s))
            .collect()
    }
}

fn fit_side(log_norms: &[f64], dir: i8) -> SideFit {
    let k_max = log_norms.len();
    let lo = k_max.div_ceil(4).max(1);
    let n = k_max - lo + 1;
    let design = Mat::from_fn(n, 3, |i, j| {
        let k = (lo + i) as f64;
        match j {
            0 => 1.0,
            1 => k.ln(),
            _ => k,
        }
    });
    // running maximum: the question is whether the supremum stays finite,
    // and bounded series may oscillate (parity of floor(eps k))
    let envelope: Vec<f64> = log_norms
        .iter()
        .scan(f64::NEG_INFINITY, |m, &v| {
            *m = m.max(v);
            Some(*m)
        })
        .collect();
    let y = nalgebra::DVector::from_fn(n, |i, _| envelope[lo + i - 1]);
    let c = spectral::lstsq(&design, &y);
    SideFit {
        direction: dir,
        window: (lo, k_max),
        intercept: c[0],
        slope_log_k: c[1],
        slope_k: c[2],
        classification: Growth::from_slopes(c[1], c[2]),
    }
}

/// `A^{-k} B^{floor(eps k)}` for `k = 1..=k_max`, formed in the Jordan
/// frame of `A`.
pub fn probe_products(a: &Mat, b: &Mat, k_max: usize, tol: &Tolerances) -> Result<Vec<Mat>> {
    let pf = PairFrame::new(a, b, tol)?;
    Ok(pf
        .products(k_max, 1, false)
        .into_iter()
        .map(|(p, scale)| pf.frame.from_frame(&p) * scale.exp())
        .collect())
}

/// Samples `‖A^{-k} B^{floor(eps k)}‖` for `0 < |k| <= k_max` (both signs
/// for `TwoSided`) and classifies its growth. Bounded two-sided series
/// characterize equivalence, bounded positive-side series coarse
/// equivalence.
pub fn boundedness_probe(a: &Mat, b: &Mat, k_max: usize, side: ProbeSide) -> Result<ProbeSeries> {
    boundedness_probe_with(a, b, k_max, side, &Tolerances::default())
}

pub fn boundedness_probe_with(
    a: &Mat,
    b: &Mat,
    k_max: usize,
    side: ProbeSide,
    tol: &Tolerances,
) -> Result<ProbeSeries> {
    if k_max < MIN_PROBE_KMAX {
        return Err(Error::InvalidInput(format!(
            "probe needs k_max >= {MIN_PROBE_KMAX}, got {k_max}"
        )));
    }
    let pf = PairFrame::new(a, b, tol)?;
    let pos = pf.side(k_max, 1);
    let mut fits = vec![fit_side(&pos, 1)];
    let mut ks = Vec::new();
    let mut log_norms = Vec::new();
    if side == ProbeSide::TwoSided {
        let neg = pf.side(k_max, -1);
        fits.push(fit_side(&neg, -1));
        for (n, v) in neg.iter().enumerate().rev() {
            ks.push(-(n as i64 + 1));
            log_norms.push(*v);
        }
        ks.push(0);
        log_norms.push(0.0);
    }
    for (n, v) in pos.iter().enumerate() {
        ks.push(n as i64 + 1);
        log_norms.push(*v);
    }
    let classification = fits
        .iter()
        .fold(Growth::Bounded, |g, f| g.worst(f.classification));
    Ok(ProbeSeries {
        epsilon: pf.floor.eps,
        side,
        ks,
        log_norms,
        fits,
        classification,
    })
}

/// `D2` of the factorization `J = D1 D2` in Jordan coordinates: rotation
/// parts removed, so every block becomes `r I + N'` with `r` the modulus.
fn positive_part_jordan(j: &RealJordanDecomposition) -> Mat {
    let d = j.dim();
    let mut out = Mat::zeros(d, d);
    for b in &j.blocks {
        let o = b.offset;
        let r = b.modulus;
        let [w0, w1] = b.rotation;
        if b.complex {
            for c in 0..b.size {
                out[(o + 2 * c, o + 2 * c)] = r;
                out[(o + 2 * c + 1, o + 2 * c + 1)] = r;
            }
            for (c, &z) in b.superdiag.iter().enumerate() {
                if z == 1 {
                    let (p, q) = (o + 2 * c, o + 2 * c + 2);
                    // M_{conj w}
                    out[(p, q)] = w0;
                    out[(p, q + 1)] = -w1;
                    out[(p + 1, q)] = w1;
                    out[(p + 1, q + 1)] = w0;
                }
            }
        } else {
            let sign = w0.signum();
            for c in 0..b.size {
                out[(o + c, o + c)] = r;
            }
            for (c, &z) in b.superdiag.iter().enumerate() {
                out[(o + c, o + c + 1)] = sign * f64::from(z);
            }
        }
    }
    out
}

/// Logarithm of a block diagonal `r I + N` matrix, per block.
fn log_positive_blocks(m: &Mat, blocks: &[JordanBlock]) -> Mat {
    let d = m.nrows();
    let mut out = Mat::zeros(d, d);
    for b in blocks {
        let r = b.range();
        let n = r.len();
        let mb = m.view((r.start, r.start), (n, n)).into_owned();
        let y = mb / b.modulus - Mat::identity(n, n);
        let xb = nilpotent_log_unchecked(&y) + Mat::identity(n, n) * b.modulus.ln();
        out.view_mut((r.start, r.start), (n, n)).copy_from(&xb);
    }
    out
}

/// Equivalent matrix with positive spectrum and the same `|det|`.
pub fn positivize(a: &Mat) -> Result<Mat> {
    positivize_with(a, &Tolerances::default())
}

pub fn positivize_with(a: &Mat, tol: &Tolerances) -> Result<Mat> {
    linalg::require_expansive(a)?;
    let j = real_jordan_form(a, tol)?;
    Ok(&j.basis * positive_part_jordan(&j) * &j.basis_inv)
}

/// Real logarithm `X` with `exp(X) = A1` for a matrix with positive
/// spectrum, built per Jordan block.
pub fn matrix_log_expansive(a1: &Mat) -> Result<Mat> {
    matrix_log_expansive_with(a1, &Tolerances::default())
}

pub fn matrix_log_expansive_with(a1: &Mat, tol: &Tolerances) -> Result<Mat> {
    linalg::check_matrix(a1)?;
    let j = real_jordan_form(a1, tol)?;
    if j.blocks.iter().any(|b| b.complex || b.rotation[0] <= 0.0) {
        return Err(Error::NonPositiveSpectrum);
    }
    let x = log_positive_blocks(&j.jordan, &j.blocks);
    Ok(&j.basis * x * &j.basis_inv)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalFormBlock {
    pub eigenvalue: f64,
    pub start: usize,
    pub end: usize,
}

/// Expansive normal form `A'` of `A` with the Jordan basis `C` of `A`.
#[derive(Debug, Clone, Serialize)]
pub struct NormalForm {
    #[serde(with = "rows_serde")]
    pub matrix: Mat,
    #[serde(with = "rows_serde")]
    pub basis: Mat,
    #[serde(skip)]
    pub basis_inv: Mat,
    /// `C^{-1} A' C`: block diagonal, one upper triangular block per
    /// eigenvalue, eigenvalues strictly decreasing.
    #[serde(with = "rows_serde")]
    pub jordan_coords: Mat,
    pub block_pattern: Vec<NormalFormBlock>,
    /// `ln 2 / ln|det A|`.
    pub t_scale: f64,
    /// SHA-256 of the source matrix (dimension and IEEE bits).
    pub provenance: String,
    /// Relative clustering distance the Jordan form of the source used.
    pub cluster_tolerance: f64,
}

impl NormalForm {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues repeated by multiplicity, decreasing.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.block_pattern
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.eigenvalue, b.end - b.start))
            .collect()
    }

    fn group_of(&self) -> Vec<usize> {
        let mut g = vec![0; self.dim()];
        for (i, b) in self.block_pattern.iter().enumerate() {
            g[b.start..b.end].iter_mut().for_each(|x| *x = i);
        }
        g
    }
}

pub fn matrix_hash(a: &Mat) -> String {
    let mut h = Sha256::new();
    h.update((a.nrows() as u64).to_le_bytes());
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            h.update(a[(r, c)].to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn expansive_normal_form(a: &Mat) -> Result<NormalForm> {
    expansive_normal_form_with(a, &Tolerances::default())
}

/// Positivize, take the block logarithm `X`, and return `exp(t X)` with
/// `t = ln 2 / ln|det A|`.
pub fn expansive_normal_form_with(a: &Mat, tol: &Tolerances) -> Result<NormalForm> {
    linalg::require_expansive(a)?;
    let j = real_jordan_form(a, tol)?;
    let x = log_positive_blocks(&positive_part_jordan(&j), &j.blocks);
    let t = LN_2 / x.trace();
    let groups = j.modulus_groups();
    let ranges: Vec<Range<usize>> = groups.iter().map(|(_, r)| r.clone()).collect();
    let nf_j = exp_blocks(&(x * t), &ranges);
    let block_pattern = groups
        .iter()
        .map(|(m, r)| NormalFormBlock {
            eigenvalue: m.powf(t),
            start: r.start,
            end: r.end,
        })
        .collect();
    Ok(NormalForm {
        matrix: &j.basis * &nf_j * &j.basis_inv,
        jordan_coords: nf_j,
        block_pattern,
        t_scale: t,
        provenance: matrix_hash(a),
        cluster_tolerance: j.cluster_tolerance / linalg::operator_norm(a),
        basis: j.basis,
        basis_inv: j.basis_inv,
    })
}

/// `‖NF(A) - NF(B)‖ / max(1, ‖NF(A)‖)`.
pub fn normal_form_distance(nfa: &NormalForm, nfb: &NormalForm) -> f64 {
    let scale = linalg::operator_norm(&nfa.matrix).max(1.0);
    linalg::operator_norm(&(&nfa.matrix - &nfb.matrix)) / scale
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseCheck {
    pub coarse: bool,
    pub spectra_match: bool,
    /// Largest entry of `C^{-1} NF(B) C - C^{-1} NF(A) C` on or below the
    /// block diagonal, relative to `max(1, ‖C^{-1} NF(A) C‖)`; infinite
    /// when the spectra differ.
    pub margin: f64,
}

pub fn spectra_match(nfa: &NormalForm, nfb: &NormalForm) -> bool {
    let (ea, eb) = (nfa.eigenvalues(), nfb.eigenvalues());
    let rel = nfa
        .cluster_tolerance
        .max(nfb.cluster_tolerance)
        .max(MODULUS_MATCH);
    ea.len() == eb.len()
        && ea
            .iter()
            .zip(&eb)
            .all(|(x, y)| (x - y).abs() <= rel * x.max(*y))
}

/// Coarse test: equal spectra, and `NF(B) - NF(A)` in the Jordan frame of
/// `A` vanishing on and below the block diagonal (eigenvalue groups in
/// decreasing order).
pub fn coarse_check(nfa: &NormalForm, nfb: &NormalForm, tol: f64) -> CoarseCheck {
    if !spectra_match(nfa, nfb) {
        return CoarseCheck {
            coarse: false,
            spectra_match: false,
            margin: f64::INFINITY,
        };
    }
    let diff = &nfa.basis_inv * &nfb.matrix * &nfa.basis - &nfa.jordan_coords;
    let scale = linalg::operator_norm(&nfa.jordan_coords).max(1.0);
    let g = nfa.group_of();
    let mut worst = 0.0f64;
    for p in 0..diff.nrows() {
        for q in 0..diff.ncols() {
            if g[p] >= g[q] {
                worst = worst.max(diff[(p, q)].abs());
            }
        }
    }
    let margin = worst / scale;
    CoarseCheck {
        coarse: margin <= tol,
        spectra_match: true,
        margin,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceDecision {
    pub equivalent: bool,
    pub distance: f64,
    pub tolerance: f64,
    pub probe: ProbeSeries,
    pub probe_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseDecision {
    #[serde(flatten)]
    pub check: CoarseCheck,
    pub tolerance: f64,
    pub probe: ProbeSeries,
    pub probe_agrees: bool,
}

/// `true` iff the normal forms agree to `tol` (relative).
pub fn decide_equivalent(a: &Mat, b: &Mat, tol: f64) -> Result<bool> {
    let t = Tolerances {
        verdict: tol,
        ..Tolerances::default()
    };
    Ok(equivalence_decision(a, b, &t, DEFAULT_PROBE_KMAX)?.equivalent)
}

/// `true` iff `NF(B)` has the diagonal blocks of `NF(A)` and nothing below
/// them, in the Jordan frame of `A`.
pub fn decide_coarsely_equivalent(a: &Mat, b: &Mat, tol: f64) -> Result<bool> {
    let t = Tolerances {
        verdict: tol,
        ..Tolerances::default()
    };
    Ok(coarse_decision(a, b, &t, DEFAULT_PROBE_KMAX)?.check.coarse)
}

pub fn equivalence_decision(
    a: &Mat,
    b: &Mat,
    tol: &Tolerances,
    k_max: usize,
) -> Result<EquivalenceDecision> {
    linalg::check_same_dim(a, b)?;
    let nfa = expansive_normal_form_with(a, tol)?;
    let nfb = expansive_normal_form_with(b, tol)?;
    equivalence_from_forms(a, b, &nfa, &nfb, tol, k_max)
}

fn equivalence_from_forms(
    a: &Mat,
    b: &Mat,
    nfa: &NormalForm,
    nfb: &NormalForm,
    tol: &Tolerances,
    k_max: usize,
) -> Result<EquivalenceDecision> {
    let distance = normal_form_distance(nfa, nfb);
    let equivalent = distance <= tol.verdict;
    let probe = boundedness_probe_with(a, b, k_max, ProbeSide::TwoSided, tol)?;
    Ok(EquivalenceDecision {
        equivalent,
        distance,
        tolerance: tol.verdict,
        probe_agrees: probe.is_bounded() == equivalent,
        probe,
    })
}

pub fn coarse_decision(a: &Mat, b: &Mat, tol: &Tolerances, k_max: usize) -> Result<CoarseDecision> {
    linalg::check_same_dim(a, b)?;
    let nfa = expansive_normal_form_with(a, tol)?;
    let nfb = expansive_normal_form_with(b, tol)?;
    coarse_from_forms(a, b, &nfa, &nfb, tol, k_max)
}

fn coarse_from_forms(
    a: &Mat,
    b: &Mat,
    nfa: &NormalForm,
    nfb: &NormalForm,
    tol: &Tolerances,
    k_max: usize,
) -> Result<CoarseDecision> {
    let check = coarse_check(nfa, nfb, tol.verdict);
    let probe = boundedness_probe_with(a, b, k_max, ProbeSide::PositiveOnly, tol)?;
    Ok(CoarseDecision {
        probe_agrees: probe.is_bounded() == check.coarse,
        tolerance: tol.verdict,
        check,
        probe,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceComparison {
    /// `A^{-1}` or `A` side, depending on the part.
    pub part: EigenspacePart,
    /// Modulus on the `B` side; the `A` side uses `modulus^eps`.
    pub modulus: f64,
    pub order: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenspacePart {
    /// `E(A^{-1}, r^eps, m)` vs `E(B^{-1}, r, m)`.
    InverseFiltration,
    /// Kernels of `(A - lambda)^m` over `|lambda| = r^eps` vs those of `B`
    /// over `|lambda| = r`.
    ModulusKernels,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenspaceReport {
    pub epsilon: f64,
    pub coarse: bool,
    pub comparisons: Vec<SubspaceComparison>,
    pub max_distance: f64,
}

fn distinct_moduli(m: &Mat, tol: &Tolerances) -> Result<Vec<f64>> {
    let j = real_jordan_form(m, tol)?;
    Ok(j.modulus_groups().into_iter().map(|(r, _)| r).collect())
}

/// Necessary conditions for (coarse) equivalence in terms of generalized
/// eigenspaces. Passing does not imply equivalence.
pub fn eigenspace_consistency_check(a: &Mat, b: &Mat, coarse: bool) -> Result<EigenspaceReport> {
    let tol = Tolerances::default();
    linalg::check_same_dim(a, b)?;
    let eps = epsilon(a, b)?;
    let d = a.nrows();
    let inv = |m: &Mat| {
        m.clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { min_modulus: 0.0 })
    };
    let (a_inv, b_inv) = (inv(a)?, inv(b)?);
    let mut comparisons = Vec::new();
    let mut compare = |part, r: f64, m: usize, sa: Mat, sb: Mat| {
        comparisons.push(SubspaceComparison {
            part,
            modulus: r,
            order: m,
            dim_a: sa.ncols(),
            dim_b: sb.ncols(),
            distance: subspace_distance(&sa, &sb),
        });
    };
    for r in distinct_moduli(&b_inv, &tol)? {
        for m in 1..=d {
            let sa = spectral::generalized_eigenspace(&a_inv, r.powf(eps), m, MODULUS_MATCH)?;
            let sb = spectral::generalized_eigenspace(&b_inv, r, m, MODULUS_MATCH)?;
            compare(EigenspacePart::InverseFiltration, r, m, sa.basis, sb.basis);
        }
    }
    if !coarse {
        for r in distinct_moduli(b, &tol)? {
            for m in 1..=d {
                let sa = spectral::modulus_kernel_span(a, r.powf(eps), m, MODULUS_MATCH)?;
                let sb = spectral::modulus_kernel_span(b, r, m, MODULUS_MATCH)?;
                compare(EigenspacePart::ModulusKernels, r, m, sa.basis, sb.basis);
            }
        }
    }
    let max_distance = comparisons.iter().map(|c| c.distance).fold(0.0, f64::max);
    Ok(EigenspaceReport {
        epsilon: eps,
        coarse,
        comparisons,
        max_distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub tolerances: Tolerances,
    pub k_max: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            k_max: DEFAULT_PROBE_KMAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub k_max: usize,
    /// Two-sided probe on `(A, B)`.
    pub two_sided: Growth,
    pub two_sided_agrees: bool,
    /// Positive-side probe on `(A^T, B^T)`.
    pub positive_transposed: Growth,
    pub positive_transposed_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margins {
    /// Relative normal-form distance behind the homogeneous verdict.
    pub equivalence_distance: f64,
    /// Largest relative entry on or below the block diagonal behind the
    /// inhomogeneous verdict (transposes).
    pub coarse_margin: f64,
    pub verdict_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub equivalence: EquivalenceDecision,
    pub coarse_transposed: CoarseDecision,
    pub eigenspace: EigenspaceReport,
    /// False when the coarse test rejected a pair the equivalence test
    /// accepted; the inhomogeneous verdict is then forced to true.
    pub consistent: bool,
}

/// Besov and Hardy scale verdicts for a pair of expansive matrices.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub hom_besov_equal: bool,
    pub inhom_besov_equal: bool,
    pub hardy_equal: bool,
    pub epsilon: f64,
    #[serde(rename = "normal_form_A")]
    pub normal_form_a: NormalForm,
    #[serde(rename = "normal_form_B")]
    pub normal_form_b: NormalForm,
    pub probe_summary: ProbeSummary,
    pub margins: Margins,
    pub tolerances: Tolerances,
    pub evidence: Evidence,
}

/// Homogeneous scales (and Hardy spaces) coincide iff `A ~ B`; the
/// inhomogeneous scales coincide iff `A^T` and `B^T` are coarsely
/// equivalent.
pub fn classify_pair(a: &Mat, b: &Mat, config: &ClassifyConfig) -> Result<Verdict> {
    let tol = &config.tolerances;
    tol.validate()?;
    linalg::check_matrix(a)?;
    linalg::check_matrix(b)?;
    linalg::check_same_dim(a, b)?;
    let eps = epsilon(a, b)?;
    let nfa = expansive_normal_form_with(a, tol)?;
    let nfb = expansive_normal_form_with(b, tol)?;
    let equivalence = equivalence_from_forms(a, b, &nfa, &nfb, tol, config.k_max)?;

    let (at, bt) = (a.transpose(), b.transpose());
    let nfat = expansive_normal_form_with(&at, tol)?;
    let nfbt = expansive_normal_form_with(&bt, tol)?;
    let coarse_t = coarse_from_forms(&at, &bt, &nfat, &nfbt, tol, config.k_max)?;
    let eigenspace = eigenspace_consistency_check(a, b, false)?;

    let hom = equivalence.equivalent;
    let consistent = !hom || coarse_t.check.coarse;
    Ok(Verdict {
        hom_besov_equal: hom,
        inhom_besov_equal: coarse_t.check.coarse || hom,
        hardy_equal: hom,
        epsilon: eps,
        normal_form_a: nfa,
        normal_form_b: nfb,
        probe_summary: ProbeSummary {
            k_max: config.k_max,
            two_sided: equivalence.probe.classification,
            two_sided_agrees: equivalence.probe_agrees,
            positive_transposed: coarse_t.probe.classification,
            positive_transposed_agrees: coarse_t.probe_agrees,
        },
        margins: Margins {
            equivalence_distance: equivalence.distance,
            coarse_margin: coarse_t.check.margin,
            verdict_tolerance: tol.verdict,
        },
        tolerances: *tol,
        evidence: Evidence {
            equivalence,
            coarse_transposed: coarse_t,
            eigenspace,
            consistent,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;

    fn m(rows: &[&[f64]]) -> Mat {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn epsilon_examples() {
        let a = m(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let b = m(&[&[4.0, 0.0], &[0.0, 4.0]]);
        assert!((epsilon(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((epsilon(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        let c = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let d = m(&[&[2.0, 4.0], &[0.0, 2.0]]);
        assert!((epsilon(&c, &d).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            epsilon(&m(&[&[1.0, 0.0], &[0.0, 2.0]]), &a),
            Err(Error::NotExpansive(_))
        ));
    }

    #[test]
    fn scaled_floor_is_exact_for_rationals() {
        let f = ScaledFloor::new(0.5);
        assert_eq!(f.ratio, Some((1, 2)));
        assert_eq!(f.apply(7), 3);
        assert_eq!(f.apply(-7), -4);
        let third = ScaledFloor::new(1.0 / 3.0);
        assert_eq!(third.ratio, Some((1, 3)));
        assert_eq!(third.apply(300), 100);
        assert_eq!(third.apply(-3), -1);
        let eps = 2f64.ln() / 3f64.ln();
        let irr = ScaledFloor::new(eps);
        for k in -500..500 {
            assert_eq!(irr.apply(k), (k as f64 * eps).floor() as i64);
        }
        let sqrt2 = ScaledFloor::new(2f64.sqrt());
        assert_eq!(sqrt2.ratio, None);
        assert_eq!(sqrt2.apply(1000), 1414);
    }

    #[test]
    fn probe_of_identical_pair_is_bounded() {
        let a = m(&[&[3.0, 1.0], &[-1.0, 2.0]]);
        let p = boundedness_probe(&a, &a, 60, ProbeSide::TwoSided).unwrap();
        assert!(p.is_bounded());
        assert_eq!(p.ks.len(), 121);
        assert!(p.log_norms.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn probe_of_counterexample_is_linear() {
        let a = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let b = m(&[&[2.0, 4.0], &[0.0, 2.0]]);
        let p = boundedness_probe(&a, &b, 100, ProbeSide::PositiveOnly).unwrap();
        let Growth::Polynomial { degree } = p.classification else {
            panic!("{:?}", p.classification)
        };
        assert!((degree - 1.0).abs() < 0.1);
        let k = 100.0f64;
        let exact = ((k + (k * k + 4.0).sqrt()) / 2.0).ln();
        assert!((p.log_norms[99] - exact).abs() < 1e-9);
    }

    #[test]
    fn probe_in_one_dimension_alternates() {
        let p = boundedness_probe(&m(&[&[2.0]]), &m(&[&[4.0]]), 50, ProbeSide::TwoSided).unwrap();
        assert!(p.is_bounded(), "{:?}", p.fits);
        for (k, v) in p.ks.iter().zip(&p.log_norms) {
            let expect = if k.rem_euclid(2) == 0 { 0.0 } else { -LN_2 };
            assert!((v - expect).abs() < 1e-12, "k={k} {v}");
        }
    }

    #[test]
    fn positivize_examples() {
        assert!(close(
            &positivize(&m(&[&[-2.0]])).unwrap(),
            &m(&[&[2.0]]),
            1e-12
        ));
        let rot = m(&[&[0.0, -2.0], &[2.0, 0.0]]);
        assert!(close(
            &positivize(&rot).unwrap(),
            &(Mat::identity(2, 2) * 2.0),
            1e-12
        ));
        let pos = m(&[&[3.0, 1.0], &[0.0, 2.0]]);
        assert!(close(&positivize(&pos).unwrap(), &pos, 1e-12));
    }

    #[test]
    fn log_examples() {
        let two = Mat::identity(2, 2) * 2.0;
        assert!(close(
            &matrix_log_expansive(&two).unwrap(),
            &(Mat::identity(2, 2) * LN_2),
            1e-14
        ));
        let j = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let x = matrix_log_expansive(&j).unwrap();
        assert!(close(&x, &m(&[&[LN_2, 1.0], &[0.0, LN_2]]), 1e-12));
        assert!(close(&linalg::structured_exp(&x, None), &j, 1e-12));
        assert_eq!(
            matrix_log_expansive(&m(&[&[-2.0, 0.0], &[0.0, 3.0]])),
            Err(Error::NonPositiveSpectrum)
        );
    }

    #[test]
    fn normal_form_examples() {
        let nf = expansive_normal_form(&(Mat::identity(2, 2) * 4.0)).unwrap();
        assert!(close(
            &nf.matrix,
            &(Mat::identity(2, 2) * 2f64.sqrt()),
            1e-12
        ));
        assert!((nf.t_scale - 0.25).abs() < 1e-15);

        let nf = expansive_normal_form(&m(&[&[2.0, 2.0], &[0.0, 2.0]])).unwrap();
        let s = 2f64.sqrt();
        assert!(close(&nf.matrix, &m(&[&[s, s / 2.0], &[0.0, s]]), 1e-12));
        assert!((linalg::determinant(&nf.matrix) - 2.0).abs() < 1e-12);

        let nf = expansive_normal_form(&m(&[&[-2.0]])).unwrap();
        assert!(close(&nf.matrix, &m(&[&[2.0]]), 1e-14));
    }

    #[test]
    fn decisions_on_reference_pairs() {
        let a = m(&[&[3.0, 0.0], &[0.0, 2.0]]);
        let upper = m(&[&[3.0, 1.0], &[0.0, 2.0]]);
        let lower = upper.transpose();
        assert!(decide_equivalent(&a, &a, 1e-7).unwrap());
        assert!(decide_equivalent(&upper, &(&upper * &upper), 1e-7).unwrap());
        assert!(!decide_equivalent(&a, &upper, 1e-7).unwrap());
        assert!(decide_coarsely_equivalent(&a, &upper, 1e-7).unwrap());
        assert!(!decide_coarsely_equivalent(&a, &lower, 1e-7).unwrap());

        let c = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let d = m(&[&[2.0, 4.0], &[0.0, 2.0]]);
        assert!(!decide_coarsely_equivalent(&c, &d, 1e-7).unwrap());
    }

    #[test]
    fn coarse_probe_of_upper_pattern_is_bounded_to_200() {
        let a = m(&[&[3.0, 0.0], &[0.0, 2.0]]);
        let b = m(&[&[3.0, 1.0], &[0.0, 2.0]]);
        let p = boundedness_probe(&a, &b, 200, ProbeSide::PositiveOnly).unwrap();
        assert!(p.is_bounded(), "{:?}", p.fits);
        let p = boundedness_probe(&a, &b, 200, ProbeSide::TwoSided).unwrap();
        assert!(matches!(p.classification, Growth::Exponential { .. }));
    }

    #[test]
    fn eigenspace_check_examples() {
        let a = m(&[&[3.0, 0.0], &[0.0, 2.0]]);
        assert!(
            eigenspace_consistency_check(&a, &a, false)
                .unwrap()
                .max_distance
                < 1e-12
        );
        let c = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let d = m(&[&[2.0, 4.0], &[0.0, 2.0]]);
        assert!(
            eigenspace_consistency_check(&c, &d, false)
                .unwrap()
                .max_distance
                <= 1e-8
        );
        let swapped = m(&[&[2.0, 0.0], &[0.0, 3.0]]);
        assert!(
            eigenspace_consistency_check(&a, &swapped, true)
                .unwrap()
                .max_distance
                > 0.5
        );
    }

    #[test]
    fn classify_reference_pairs() {
        let cfg = ClassifyConfig::default();
        let a = m(&[&[3.0, 0.0], &[0.0, 2.0]]);
        let b = m(&[&[3.0, 0.0], &[1.0, 2.0]]);
        let v = classify_pair(&a, &b, &cfg).unwrap();
        assert!(!v.hom_besov_equal && !v.hardy_equal && v.inhom_besov_equal);
        assert!(v.evidence.consistent);
        assert!(v.probe_summary.two_sided_agrees && v.probe_summary.positive_transposed_agrees);

        let c = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let d = m(&[&[2.0, 4.0], &[0.0, 2.0]]);
        let v = classify_pair(&c, &d, &cfg).unwrap();
        assert!(!v.hom_besov_equal && !v.hardy_equal && !v.inhom_besov_equal);

        let v = classify_pair(&c, &c, &cfg).unwrap();
        assert!(v.hom_besov_equal && v.hardy_equal && v.inhom_besov_equal);
    }
}
