//! Dense real linear algebra: spectra, real Jordan normal form, structured
//! exponential and logarithm, operator norms.
//!
//! Matrices are plain `nalgebra::DMatrix<f64>`. Complex arithmetic only
//! appears inside the eigen-solver and the Jordan chain construction; every
//! public result is real, with complex eigenvalues `a + ib` carried by 2x2
//! cells `[[a, b], [-b, a]]`.

use std::cmp::Ordering;
use std::ops::Range;

use nalgebra::{Complex, ComplexField, DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tolerances};

pub type Mat = DMatrix<f64>;
pub(crate) type C64 = Complex<f64>;

/// Singular values below this fraction of the largest one are treated as
/// zero when orthonormalizing already well-separated vectors.
const ORTH_TOL: f64 = 1e-10;

/// Number of tenfold escalations of the clustering distance tried by
/// [`real_jordan_form`] before giving up.
const CLUSTER_ESCALATIONS: u32 = 4;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::InvalidInput("matrix has no rows".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!(
            "row {i} has {} entries, expected {d} (matrix must be square)",
            rows[i].len()
        )));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    check_matrix(&m)?;
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Square, non-empty, all entries finite.
pub fn check_matrix(m: &Mat) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

pub fn check_same_dim(a: &Mat, b: &Mat) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    Ok(())
}

/// Serde adapter: a matrix as a JSON array of row arrays.
pub mod rows_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Largest singular value.
pub fn operator_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

pub fn identity(d: usize) -> Mat {
    Mat::identity(d, d)
}

/// `m^k` for any integer `k`, by repeated squaring.
pub fn matrix_power(m: &Mat, k: i64) -> Result<Mat> {
    let base = if k < 0 {
        m.clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { min_modulus: 0.0 })?
    } else {
        m.clone()
    };
    let mut e = k.unsigned_abs();
    let mut acc = identity(m.nrows());
    let mut sq = base;
    while e > 0 {
        if e & 1 == 1 {
            acc = &acc * &sq;
        }
        e >>= 1;
        if e > 0 {
            sq = &sq * &sq;
        }
    }
    Ok(acc)
}

pub fn determinant(a: &Mat) -> f64 {
    a.clone().determinant()
}

/// Complex eigenvalues, conjugate pairs exact.
pub fn eigenvalues(a: &Mat) -> Result<Vec<C64>> {
    check_matrix(a)?;
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::JordanStructure("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    let d = t.nrows();
    let mut out = Vec::with_capacity(d);
    let mut i = 0;
    while i < d {
        if i + 1 < d && t[(i + 1, i)] != 0.0 {
            let (p, q, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half_tr = 0.5 * (p + s);
            let disc = 0.25 * (p - s) * (p - s) + q * r;
            if disc >= 0.0 {
                let root = disc.sqrt();
                out.push(C64::new(half_tr + root, 0.0));
                out.push(C64::new(half_tr - root, 0.0));
            } else {
                let root = (-disc).sqrt();
                out.push(C64::new(half_tr, root));
                out.push(C64::new(half_tr, -root));
            }
            i += 2;
        } else {
            out.push(C64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

impl EigenCluster {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    pub fn modulus(&self) -> f64 {
        self.value().norm()
    }

    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Ordered by decreasing modulus, then decreasing real part, then
    /// positive imaginary part first.
    pub clusters: Vec<EigenCluster>,
    /// Absolute clustering distance that produced `clusters`.
    pub cluster_tolerance: f64,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.clusters.iter().map(|c| c.multiplicity).sum()
    }

    pub fn min_modulus(&self) -> f64 {
        self.clusters
            .iter()
            .map(EigenCluster::modulus)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_modulus(&self) -> f64 {
        self.clusters
            .iter()
            .map(EigenCluster::modulus)
            .fold(0.0, f64::max)
    }
}

fn cluster_order(a: &EigenCluster, b: &EigenCluster, thr: f64) -> Ordering {
    let (ma, mb) = (a.modulus(), b.modulus());
    if (ma - mb).abs() > thr {
        return mb.partial_cmp(&ma).unwrap_or(Ordering::Equal);
    }
    if (a.re - b.re).abs() > thr {
        return b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal);
    }
    b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal)
}

/// Single-linkage clustering at absolute distance `thr`.
fn cluster_eigenvalues(eigs: &[C64], thr: f64) -> Result<Spectrum> {
    let n = eigs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= thr {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: Vec<(usize, C64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += eigs[i];
                g.2 += 1;
            }
            None => groups.push((r, eigs[i], 1)),
        }
    }
    let mut clusters: Vec<EigenCluster> = groups
        .into_iter()
        .map(|(_, sum, m)| {
            let c = sum / m as f64;
            EigenCluster {
                re: c.re,
                im: if c.im.abs() <= thr { 0.0 } else { c.im },
                multiplicity: m,
            }
        })
        .collect();
    clusters.sort_by(|a, b| cluster_order(a, b, thr));

    for c in clusters.iter().filter(|c| c.im > 0.0) {
        let paired = clusters.iter().any(|o| {
            o.im < 0.0
                && (o.value() - c.value().conj()).norm() <= thr
                && o.multiplicity == c.multiplicity
        });
        if !paired {
            return Err(Error::JordanStructure(format!(
                "eigenvalue cluster {}+{}i has no conjugate partner",
                c.re, c.im
            )));
        }
    }
    Ok(Spectrum {
        clusters,
        cluster_tolerance: thr,
    })
}

/// Eigenvalue clusters at the relative tolerance `tol` (scaled by `‖A‖`).
pub fn spectrum(a: &Mat, tol: f64) -> Result<Spectrum> {
    let eigs = eigenvalues(a)?;
    let thr = tol * operator_norm(a).max(f64::MIN_POSITIVE);
    cluster_eigenvalues(&eigs, thr)
}

fn check_nonsingular(eigs: &[C64], a: &Mat) -> Result<f64> {
    let min_mod = eigs.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if min_mod < 1e-12 * operator_norm(a).max(1.0) {
        return Err(Error::SingularMatrix {
            min_modulus: min_mod,
        });
    }
    Ok(min_mod)
}

/// True iff every eigenvalue modulus exceeds `1 + tol`.
pub fn is_expansive(a: &Mat, tol: f64) -> Result<bool> {
    let eigs = eigenvalues(a)?;
    let min_mod = check_nonsingular(&eigs, a)?;
    Ok(min_mod > 1.0 + tol)
}

pub(crate) fn require_expansive(a: &Mat) -> Result<f64> {
    let eigs = eigenvalues(a)?;
    let min_mod = check_nonsingular(&eigs, a)?;
    if min_mod <= 1.0 {
        return Err(Error::NotExpansive(format!(
            "smallest eigenvalue modulus is {min_mod}"
        )));
    }
    Ok(min_mod)
}

/// One aggregate real Jordan block: every Jordan chain belonging to a single
/// eigenvalue (or conjugate pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanBlock {
    pub modulus: f64,
    /// Unit complex number `w` with `lambda = modulus * w`; `(±1, 0)` for
    /// real eigenvalues.
    pub rotation: [f64; 2],
    /// Number of 1x1 (real) or 2x2 (complex) cells.
    pub size: usize,
    /// Superdiagonal cell flags `z_1 .. z_{size-1}`, 0 at chain boundaries.
    pub superdiag: Vec<u8>,
    /// Chain lengths, descending.
    pub chains: Vec<usize>,
    /// First column of this block in the basis.
    pub offset: usize,
    pub complex: bool,
}

impl JordanBlock {
    pub fn eigenvalue(&self) -> C64 {
        C64::new(self.rotation[0], self.rotation[1]) * self.modulus
    }

    pub fn cell_dim(&self) -> usize {
        if self.complex {
            2
        } else {
            1
        }
    }

    pub fn dim(&self) -> usize {
        self.size * self.cell_dim()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.dim()
    }
}

/// `A = C J C^{-1}` with `J` in real Jordan normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealJordanDecomposition {
    #[serde(with = "rows_serde")]
    pub basis: Mat,
    #[serde(with = "rows_serde")]
    pub basis_inv: Mat,
    #[serde(with = "rows_serde")]
    pub jordan: Mat,
    pub blocks: Vec<JordanBlock>,
    /// `‖C J C^{-1} - A‖`.
    pub reconstruction_error: f64,
    pub condition: f64,
    pub cluster_tolerance: f64,
}

impl RealJordanDecomposition {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Column ranges sharing one eigenvalue modulus, in block order
    /// (strictly decreasing modulus).
    pub fn modulus_groups(&self) -> Vec<(f64, Range<usize>)> {
        let tol = self.cluster_tolerance;
        let mut out: Vec<(f64, Range<usize>)> = Vec::new();
        for b in &self.blocks {
            match out.last_mut() {
                Some((m, r)) if (*m - b.modulus).abs() <= tol && r.end == b.offset => {
                    r.end = b.range().end;
                }
                _ => out.push((b.modulus, b.range())),
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat {
        &self.basis * &self.jordan * &self.basis_inv
    }
}

/// Orthonormal basis of the column span (singular values above
/// `rel_tol * sigma_max`).
pub(crate) fn orth<T>(cols: &DMatrix<T>, rel_tol: f64) -> DMatrix<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let d = cols.nrows();
    if cols.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(d, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * smax)
        .collect();
    DMatrix::from_fn(d, keep.len(), |i, j| u[(i, keep[j])])
}

/// Null space with singular values at most `rel_tol * scale`, where `scale`
/// defaults to the largest singular value.
fn null_basis<T>(m: &DMatrix<T>, rel_tol: f64, scale: Option<f64>) -> DMatrix<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;
    let smax = scale.unwrap_or_else(|| sv.max());
    let mut keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= rel_tol * smax).collect();
    // wide SVD only returns min(r, c) vectors; square inputs are complete
    debug_assert_eq!(v_t.nrows(), n);
    keep.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap_or(Ordering::Equal));
    DMatrix::from_fn(n, keep.len(), |i, j| v_t[(keep[j], i)].conjugate())
}

/// Orthonormal bases of `Ker m^k` for `k = 0..=levels`, stopping early
/// once the dimension stops growing (the last entry is then `Ker m^d`). Computed as
/// `Ker m^{k+1} = Ker(P_k^perp m)` with `P_k` the projection onto `Ker m^k`,
/// so each level involves a single product and singular values are
/// compared against `rank_tol * max(‖m‖, scale)`.
pub(crate) fn kernel_staircase<T>(
    m: &DMatrix<T>,
    levels: usize,
    rank_tol: f64,
    scale: f64,
) -> Vec<DMatrix<T>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let d = m.nrows();
    let threshold_scale = m.clone().svd(false, false).singular_values.max().max(scale);
    let mut kernels: Vec<DMatrix<T>> = vec![DMatrix::zeros(d, 0)];
    for _ in 0..levels {
        let q = kernels.last().expect("non-empty");
        let reduced = m - q * (q.adjoint() * m);
        let kb = null_basis(&reduced, rank_tol, Some(threshold_scale));
        if kb.ncols() <= q.ncols() {
            break;
        }
        let full = kb.ncols() == d;
        kernels.push(kb);
        if full {
            break;
        }
    }
    kernels
}

/// Jordan chains of the nilpotent-on-cluster matrix `m = A - mu I`, each
/// ordered bottom first: `[m^{k-1} v, .., m v, v]`. Chains sorted by length,
/// descending.
fn jordan_chains<T>(
    m: &DMatrix<T>,
    mult: usize,
    rank_tol: f64,
    scale: f64,
) -> Result<Vec<Vec<DVector<T>>>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let d = m.nrows();
    let kernels = kernel_staircase(m, mult, rank_tol, scale);
    let top = kernels.last().map_or(0, |k| k.ncols());
    if top != mult {
        return Err(Error::JordanStructure(format!(
            "generalized eigenspace has dimension {top}, multiplicity is {mult}"
        )));
    }
    let p = kernels.len() - 1;
    // counts[k] = number of chains of length >= k
    let mut counts = vec![0usize; p + 2];
    for k in 1..=p {
        counts[k] = kernels[k].ncols() - kernels[k - 1].ncols();
    }
    if (1..p).any(|k| counts[k] < counts[k + 1]) {
        return Err(Error::JordanStructure(
            "kernel growth is not a valid Jordan structure".into(),
        ));
    }

    let mut chains: Vec<Vec<DVector<T>>> = Vec::new();
    for k in (1..=p).rev() {
        let need = counts[k] - counts[k + 1];
        if need == 0 {
            continue;
        }
        let lower = &kernels[k - 1];
        let mut span_cols: Vec<DVector<T>> = lower.column_iter().map(|c| c.into_owned()).collect();
        span_cols.extend(chains.iter().map(|c| c[k - 1].clone()));
        let q = if span_cols.is_empty() {
            DMatrix::zeros(d, 0)
        } else {
            orth(&DMatrix::from_columns(&span_cols), ORTH_TOL)
        };
        let kk = &kernels[k];
        let proj = kk - &q * (q.adjoint() * kk);
        let svd = proj.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap_or(Ordering::Equal));
        if order.len() < need || sv[order[need - 1]] < rank_tol.sqrt() {
            return Err(Error::JordanStructure(format!(
                "could not find {need} independent chain heads of length {k}"
            )));
        }
        for &idx in order.iter().take(need) {
            let r: DVector<T> = v_t.row(idx).adjoint();
            let v = kk * r;
            let mut chain = vec![v];
            for _ in 1..k {
                let next = m * chain.last().expect("non-empty");
                chain.push(next);
            }
            chain.reverse();
            let scale = chain.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if scale > 0.0 {
                for c in chain.iter_mut() {
                    *c /= T::from_real(scale);
                }
            }
            chains.push(chain);
        }
    }
    chains.sort_by_key(|c| std::cmp::Reverse(c.len()));
    Ok(chains)
}

fn jordan_attempt(
    a: &Mat,
    eigs: &[C64],
    thr: f64,
    tol: &Tolerances,
) -> Result<RealJordanDecomposition> {
    let d = a.nrows();
    let spec = cluster_eigenvalues(eigs, thr)?;
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut blocks = Vec::new();
    let mut jordan = Mat::zeros(d, d);
    let a_norm = operator_norm(a);

    for cl in spec.clusters.iter().filter(|c| c.im >= 0.0) {
        let offset = columns.len();
        let (complex, chain_lengths) = if cl.is_real() {
            let m = a - identity(d) * cl.re;
            let chains = jordan_chains(&m, cl.multiplicity, tol.rank, a_norm)?;
            let lens: Vec<usize> = chains.iter().map(Vec::len).collect();
            columns.extend(chains.into_iter().flatten());
            (false, lens)
        } else {
            let mu = cl.value();
            let ac: DMatrix<C64> = a.map(C64::from);
            let m = ac - DMatrix::<C64>::identity(d, d) * mu;
            let chains = jordan_chains(&m, cl.multiplicity, tol.rank, a_norm)?;
            let lens: Vec<usize> = chains.iter().map(Vec::len).collect();
            for v in chains.into_iter().flatten() {
                columns.push(v.map(|z| z.re));
                columns.push(v.map(|z| z.im));
            }
            (true, lens)
        };
        let size: usize = chain_lengths.iter().sum();
        let mut superdiag = Vec::with_capacity(size.saturating_sub(1));
        for (ci, &len) in chain_lengths.iter().enumerate() {
            superdiag.extend(std::iter::repeat_n(1u8, len - 1));
            if ci + 1 < chain_lengths.len() {
                superdiag.push(0);
            }
        }
        let modulus = cl.modulus();
        let block = JordanBlock {
            modulus,
            rotation: [cl.re / modulus, cl.im / modulus],
            size,
            superdiag,
            chains: chain_lengths,
            offset,
            complex,
        };
        fill_block(&mut jordan, &block, cl.re, cl.im);
        blocks.push(block);
    }
    if columns.len() != d {
        return Err(Error::JordanStructure(format!(
            "collected {} basis vectors for dimension {d}",
            columns.len()
        )));
    }
    let basis = Mat::from_columns(&columns);
    let sv = basis.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= tol.cond_cap) {
        return Err(Error::IllConditionedBasis {
            cond: condition,
            cap: tol.cond_cap,
        });
    }
    let basis_inv = basis
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditionedBasis {
            cond: f64::INFINITY,
            cap: tol.cond_cap,
        })?;
    let reconstruction_error = operator_norm(&(&basis * &jordan * &basis_inv - a));
    if reconstruction_error > tol.jordan * operator_norm(a) {
        return Err(Error::JordanStructure(format!(
            "reconstruction error {reconstruction_error:e} above tolerance"
        )));
    }
    Ok(RealJordanDecomposition {
        basis,
        basis_inv,
        jordan,
        blocks,
        reconstruction_error,
        condition,
        cluster_tolerance: thr,
    })
}

fn fill_block(j: &mut Mat, b: &JordanBlock, re: f64, im: f64) {
    let o = b.offset;
    if b.complex {
        for c in 0..b.size {
            let p = o + 2 * c;
            j[(p, p)] = re;
            j[(p, p + 1)] = im;
            j[(p + 1, p)] = -im;
            j[(p + 1, p + 1)] = re;
        }
        for (c, &z) in b.superdiag.iter().enumerate() {
            if z == 1 {
                let (r, q) = (o + 2 * c, o + 2 * c + 2);
                j[(r, q)] = 1.0;
                j[(r + 1, q + 1)] = 1.0;
            }
        }
    } else {
        for c in 0..b.size {
            j[(o + c, o + c)] = re;
        }
        for (c, &z) in b.superdiag.iter().enumerate() {
            j[(o + c, o + c + 1)] = f64::from(z);
        }
    }
}

/// Real Jordan normal form `A = C J C^{-1}`.
///
/// Eigenvalues are clustered at `tol.eig * ‖A‖`; when the resulting chain
/// structure is inconsistent or the basis exceeds `tol.cond_cap`, the
/// clustering distance is widened tenfold (a defective eigenvalue of
/// multiplicity `m` scatters like `eps^{1/m}`), up to four times.
pub fn real_jordan_form(a: &Mat, tol: &Tolerances) -> Result<RealJordanDecomposition> {
    check_matrix(a)?;
    tol.validate()?;
    let eigs = eigenvalues(a)?;
    let scale = operator_norm(a).max(f64::MIN_POSITIVE);
    let mut last_err = None;
    for level in 0..=CLUSTER_ESCALATIONS {
        let thr = tol.eig * 10f64.powi(level as i32) * scale;
        match jordan_attempt(a, &eigs, thr, tol) {
            Ok(j) => return Ok(j),
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// `log(U)` for unipotent `U` by the terminating series
/// `sum_{n=1}^{d-1} (-1)^{n+1} (U - I)^n / n`.
pub fn nilpotent_log(u: &Mat) -> Result<Mat> {
    check_matrix(u)?;
    let d = u.nrows();
    let y = u - identity(d);
    let scale = operator_norm(&y).max(1.0).powi(d as i32);
    let residual = operator_norm(&matrix_power(&y, d as i64)?);
    if residual > 1e-9 * scale {
        return Err(Error::NotUnipotent { residual });
    }
    Ok(nilpotent_log_unchecked(&y))
}

/// `log(I + y)` for nilpotent `y`.
pub(crate) fn nilpotent_log_unchecked(y: &Mat) -> Mat {
    let d = y.nrows();
    let mut out = Mat::zeros(d, d);
    let mut pow = identity(d);
    for n in 1..d {
        pow = &pow * y;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        out += &pow * (sign / n as f64);
    }
    out
}

/// `exp(n)` for nilpotent `n` by the terminating series.
pub(crate) fn nilpotent_exp(n: &Mat) -> Mat {
    let d = n.nrows();
    let mut out = identity(d);
    let mut term = identity(d);
    for k in 1..d {
        term = &term * n / k as f64;
        out += &term;
    }
    out
}

/// Dense matrix exponential: scaling and squaring around a Taylor kernel.
pub fn expm_dense(x: &Mat) -> Mat {
    let d = x.nrows();
    let norm1 = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 {
        (norm1 / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let xs = x / 2f64.powi(squarings);
    let mut sum = identity(d);
    let mut term = identity(d);
    for k in 1..=30 {
        term = &term * &xs / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-3 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Block-diagonal exponential in Jordan coordinates: each block of the form
/// `s I + N` with `N` nilpotent is exponentiated as `e^s * exp(N)`, anything
/// else falls back to the dense routine.
pub(crate) fn exp_blocks(xj: &Mat, ranges: &[Range<usize>]) -> Mat {
    let d = xj.nrows();
    let mut out = Mat::zeros(d, d);
    for r in ranges {
        let n = r.len();
        let xb = xj.view((r.start, r.start), (n, n)).into_owned();
        let s = xb.trace() / n as f64;
        let nil = &xb - identity(n) * s;
        let nscale = operator_norm(&nil).max(1.0).powi(n as i32);
        let nilpotent = matrix_power(&nil, n as i64)
            .map(|p| operator_norm(&p) <= 1e-12 * nscale)
            .unwrap_or(false);
        let eb = if nilpotent {
            nilpotent_exp(&nil) * s.exp()
        } else {
            expm_dense(&xb)
        };
        out.view_mut((r.start, r.start), (n, n)).copy_from(&eb);
    }
    out
}

/// `exp(X)`. With a Jordan hint whose blocks `X` respects, the exponential
/// is assembled per block in Jordan coordinates; otherwise (or when `X` is
/// not block compatible) dense scaling and squaring is used.
pub fn structured_exp(x: &Mat, jordan_hint: Option<&RealJordanDecomposition>) -> Mat {
    let Some(h) = jordan_hint.filter(|h| h.dim() == x.nrows()) else {
        return expm_dense(x);
    };
    let xj = &h.basis_inv * x * &h.basis;
    let ranges: Vec<Range<usize>> = h.blocks.iter().map(JordanBlock::range).collect();
    let mut off_block = 0.0f64;
    for (i, j) in (0..xj.nrows()).flat_map(|i| (0..xj.ncols()).map(move |j| (i, j))) {
        let same = ranges.iter().any(|r| r.contains(&i) && r.contains(&j));
        if !same {
            off_block = off_block.max(xj[(i, j)].abs());
        }
    }
    if off_block > 1e-12 * xj.amax().max(1.0) {
        return expm_dense(x);
    }
    &h.basis * exp_blocks(&xj, &ranges) * &h.basis_inv
}

/// Coordinates given by a real Jordan basis of a reference matrix. Matrices
/// moved into the frame have entries below `snap_tol * max|entry|` set to
/// exact zeros, so block-triangular structure survives repeated products.
#[derive(Debug, Clone)]
pub struct JordanFrame {
    pub basis: Mat,
    pub basis_inv: Mat,
    pub snap_tol: f64,
}

impl JordanFrame {
    pub fn new(j: &RealJordanDecomposition, snap_tol: f64) -> Self {
        Self {
            basis: j.basis.clone(),
            basis_inv: j.basis_inv.clone(),
            snap_tol,
        }
    }

    pub fn to_frame(&self, m: &Mat) -> Mat {
        let mut f = &self.basis_inv * m * &self.basis;
        snap(&mut f, self.snap_tol);
        f
    }

    pub fn from_frame(&self, m: &Mat) -> Mat {
        &self.basis * m * &self.basis_inv
    }
}

pub(crate) fn snap(m: &mut Mat, rel: f64) {
    let cut = rel * m.amax();
    m.iter_mut()
        .filter(|x| x.abs() <= cut)
        .for_each(|x| *x = 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Mat {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&identity(2)) - 1.0).abs() < 1e-12);
        assert!((operator_norm(&m(&[&[3.0, 0.0], &[0.0, 2.0]])) - 3.0).abs() < 1e-12);
        assert!((operator_norm(&m(&[&[0.0, 2.0], &[0.0, 0.0]])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn expansive_examples() {
        assert!(is_expansive(&m(&[&[2.0, 0.0], &[0.0, 3.0]]), 1e-9).unwrap());
        assert!(!is_expansive(&m(&[&[1.0, 0.0], &[0.0, 2.0]]), 1e-9).unwrap());
        // lambda^2 + 4 = 0
        assert!(is_expansive(&m(&[&[0.0, -2.0], &[2.0, 0.0]]), 1e-9).unwrap());
        assert!(matches!(
            is_expansive(&m(&[&[0.0, 0.0], &[0.0, 2.0]]), 1e-9),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(from_rows(&[]).is_err());
        assert!(from_rows(&[vec![1.0, 2.0]]).is_err());
        assert!(from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn jordan_of_diagonal() {
        let a = m(&[&[3.0, 0.0], &[0.0, 2.0]]);
        let j = real_jordan_form(&a, &Tolerances::default()).unwrap();
        assert_eq!(j.blocks.len(), 2);
        assert!((j.blocks[0].modulus - 3.0).abs() < 1e-12);
        assert!((j.blocks[1].modulus - 2.0).abs() < 1e-12);
        assert_eq!(j.blocks[0].rotation, [1.0, 0.0]);
        assert_eq!(j.blocks[0].size, 1);
        assert!((j.basis.abs() - identity(2)).amax() < 1e-12);
    }

    #[test]
    fn jordan_of_defective_block() {
        let a = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let j = real_jordan_form(&a, &Tolerances::default()).unwrap();
        assert_eq!(j.blocks.len(), 1);
        assert_eq!(j.blocks[0].size, 2);
        assert_eq!(j.blocks[0].superdiag, vec![1]);
        assert!((j.reconstruct() - &a).amax() < 1e-10);
    }

    #[test]
    fn jordan_of_rotation_scaling() {
        // eigenvalues 1 +- 2i
        let a = m(&[&[1.0, -2.0], &[2.0, 1.0]]);
        let j = real_jordan_form(&a, &Tolerances::default()).unwrap();
        assert_eq!(j.blocks.len(), 1);
        assert!(j.blocks[0].complex);
        let cell = m(&[&[1.0, 2.0], &[-2.0, 1.0]]);
        assert!((&j.jordan - cell).amax() < 1e-12);
        assert!((j.reconstruct() - &a).amax() < 1e-10);
    }

    #[test]
    fn jordan_of_complex_defective_block() {
        // M_{1+2i} cells with an identity superdiagonal cell, conjugated
        let mut jm = Mat::zeros(4, 4);
        for p in [0, 2] {
            jm[(p, p)] = 1.0;
            jm[(p, p + 1)] = 2.0;
            jm[(p + 1, p)] = -2.0;
            jm[(p + 1, p + 1)] = 1.0;
        }
        jm[(0, 2)] = 1.0;
        jm[(1, 3)] = 1.0;
        let c = m(&[
            &[1.0, 0.5, 0.0, 0.2],
            &[0.0, 1.0, 0.3, 0.0],
            &[0.1, 0.0, 1.0, 0.4],
            &[0.0, 0.2, 0.0, 1.0],
        ]);
        let a = &c * jm * c.clone().try_inverse().unwrap();
        let j = real_jordan_form(&a, &Tolerances::default()).unwrap();
        assert_eq!(j.blocks.len(), 1);
        assert_eq!(j.blocks[0].size, 2);
        assert_eq!(j.blocks[0].chains, vec![2]);
        assert!((j.reconstruct() - &a).amax() < 1e-9);
    }

    #[test]
    fn jordan_orders_by_modulus_and_merges_sub_blocks() {
        // eigenvalue 2 with chains (2, 1), eigenvalue 3 simple
        let a = m(&[
            &[2.0, 1.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0, 0.0],
            &[0.0, 0.0, 3.0, 0.0],
            &[0.0, 0.0, 0.0, 2.0],
        ]);
        let j = real_jordan_form(&a, &Tolerances::default()).unwrap();
        assert_eq!(j.blocks.len(), 2);
        assert!((j.blocks[0].modulus - 3.0).abs() < 1e-12);
        assert_eq!(j.blocks[1].chains, vec![2, 1]);
        assert_eq!(j.blocks[1].superdiag, vec![1, 0]);
        assert!((j.reconstruct() - &a).amax() < 1e-10);
    }

    #[test]
    fn nilpotent_log_examples() {
        assert_eq!(nilpotent_log(&identity(3)).unwrap(), Mat::zeros(3, 3));
        let u = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let n = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!((nilpotent_log(&u).unwrap() - &n).amax() < 1e-15);

        let u3 = m(&[&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0], &[0.0, 0.0, 1.0]]);
        let want = m(&[&[0.0, 1.0, -0.5], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let got = nilpotent_log(&u3).unwrap();
        assert!((&got - want).amax() < 1e-15);
        assert!((expm_dense(&got) - u3).amax() < 1e-10);

        assert!(matches!(
            nilpotent_log(&m(&[&[2.0, 0.0], &[0.0, 1.0]])),
            Err(Error::NotUnipotent { .. })
        ));
    }

    #[test]
    fn exp_examples() {
        assert!((structured_exp(&Mat::zeros(2, 2), None) - identity(2)).amax() < 1e-15);
        let l2 = std::f64::consts::LN_2;
        let e = structured_exp(&(identity(2) * l2), None);
        assert!((e - identity(2) * 2.0).amax() < 1e-13);

        let x = m(&[&[l2, 1.0], &[0.0, l2]]);
        let want = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        assert!((structured_exp(&x, None) - &want).amax() < 1e-12);
        let hint = real_jordan_form(&want, &Tolerances::default()).unwrap();
        assert!((structured_exp(&x, Some(&hint)) - &want).amax() < 1e-12);
    }

    #[test]
    fn dense_exp_of_rotation() {
        let x = m(&[&[0.0, -std::f64::consts::PI], &[std::f64::consts::PI, 0.0]]);
        assert!((expm_dense(&x) + identity(2)).amax() < 1e-12);
    }

    #[test]
    fn matrix_power_negative() {
        let a = m(&[&[2.0, 2.0], &[0.0, 2.0]]);
        let p = matrix_power(&a, -3).unwrap() * matrix_power(&a, 3).unwrap();
        assert!((p - identity(2)).amax() < 1e-14);
    }
}
