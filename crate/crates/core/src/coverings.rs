//! Frequency coverings induced by expansive matrices, at finite scale.
//!
//! A covering `Q_j = A^j Q_0` is stored analytically: with the step
//! quasi-norm `rho_A = |det A|^J`, the base annulus `a <= rho_A <= b` is the
//! shell range `J in [lo, hi]` and `Q_j` is `J in [lo + j, hi + j]`.
//! Sampling only appears when verifying.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equivalence::{PairFrame, ProbeSide};
use crate::linalg::{self, Mat};
use crate::quasinorm::{build_ellipsoid_seeded, qn_orbit_log_spread, StepQuasiNorm};
use crate::report::fmt_f64;
use crate::spectral::random_unit;
use crate::{Error, Result, Tolerances};

/// Directions sampled per verification.
pub const DEFAULT_DIRECTIONS: usize = 1000;
/// Consecutive failures of the decaying norm condition that end a scan.
const SCAN_PATIENCE: usize = 8;
const SCAN_CAP: i64 = 100_000;
const LARGEST_LOG_SCALE: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveringKind {
    Homogeneous,
    Inhomogeneous,
}

#[derive(Debug, Clone, Serialize)]
pub struct InducedCovering {
    pub kind: CoveringKind,
    /// `Q_0 = {a <= rho_A <= b}`; for the inhomogeneous kind `Q_0` is the
    /// central set `{rho_A <= b}`.
    pub base_annulus: (f64, f64),
    pub quasi_norm: StepQuasiNorm,
    /// Inclusive index range considered.
    pub index_range: (i64, i64),
    /// Shell indices `[lo, hi]` of `Q_0` (of `Q_1 A^{-1}` when inhomogeneous).
    pub shells: (i64, i64),
}

/// `log_base(x)`, snapped to the nearest integer within `1e-9`.
fn log_snapped(x: f64, base: f64) -> f64 {
    let y = x.ln() / base.ln();
    if (y - y.round()).abs() <= 1e-9 {
        y.round()
    } else {
        y
    }
}

impl InducedCovering {
    /// Default base: `(1, |det A|)`, or `(1, 1.5 |det A|)` for the
    /// inhomogeneous kind so that the central set overlaps `Q_1`.
    pub fn new(
        a: &Mat,
        kind: CoveringKind,
        base: Option<(f64, f64)>,
        index_range: (i64, i64),
        seed: u64,
    ) -> Result<Self> {
        let q = build_ellipsoid_seeded(a, None, seed)?;
        Self::from_quasi_norm(q, kind, base, index_range)
    }

    pub fn from_quasi_norm(
        q: StepQuasiNorm,
        kind: CoveringKind,
        base: Option<(f64, f64)>,
        index_range: (i64, i64),
    ) -> Result<Self> {
        let det = q.det_abs;
        let (a, b) = base.unwrap_or(match kind {
            CoveringKind::Homogeneous => (1.0, det),
            CoveringKind::Inhomogeneous => (1.0, 1.5 * det),
        });
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "base annulus needs 0 < a < b, got ({a}, {b})"
            )));
        }
        let lo = log_snapped(a, det).ceil() as i64;
        let hi = log_snapped(b, det).floor() as i64;
        if hi < lo {
            return Err(Error::InvalidInput(format!(
                "base annulus ({a}, {b}) contains no value of rho"
            )));
        }
        if index_range.1 < index_range.0
            || (kind == CoveringKind::Inhomogeneous && index_range.0 < 0)
        {
            return Err(Error::InvalidInput("invalid covering index range".into()));
        }
        Ok(Self {
            kind,
            base_annulus: (a, b),
            quasi_norm: q,
            index_range,
            shells: (lo, hi),
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.quasi_norm.matrix
    }

    pub fn dim(&self) -> usize {
        self.quasi_norm.dim()
    }

    /// `hi - lo`: members `j`, `l` meet iff `|j - l| <= width`.
    pub fn width(&self) -> i64 {
        self.shells.1 - self.shells.0
    }

    /// Shell range of `Q_j`; `None` as lower end means unbounded below.
    pub fn member_shells(&self, j: i64) -> (Option<i64>, i64) {
        let (lo, hi) = self.shells;
        if self.kind == CoveringKind::Inhomogeneous && j == 0 {
            (None, hi)
        } else {
            (Some(lo + j), hi + j)
        }
    }

    /// `x in Q_j`, decided through `rho_A`.
    pub fn contains(&self, j: i64, x: &DVector<f64>) -> bool {
        match self.quasi_norm.shell_index(x) {
            None => self.kind == CoveringKind::Inhomogeneous && j == 0,
            Some(s) => {
                let (lo, hi) = self.member_shells(j);
                lo.is_none_or(|l| s >= l) && s <= hi
            }
        }
    }

    /// `x in Q_j`, decided as `A^{-j} x in Q_0` (central set excluded).
    pub fn contains_affine(&self, j: i64, x: &DVector<f64>) -> Result<bool> {
        let y = linalg::matrix_power(self.matrix(), -j)? * x;
        Ok(self.contains(0, &y))
    }
}

/// `ceil(log_{|det A|}(b / a))`.
pub fn admissibility_gap(cov: &InducedCovering) -> i64 {
    let (a, b) = cov.base_annulus;
    log_snapped(b / a, cov.quasi_norm.det_abs).ceil() as i64
}

/// Samples points of every `Q_j` in the index range and checks that they
/// lie in no `Q_i` with `|i - j| > admissibility_gap`.
pub fn verify_admissibility(cov: &InducedCovering, n_dirs: usize, seed: u64) -> Result<bool> {
    let gap = admissibility_gap(cov);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i0, i1) = cov.index_range;
    for _ in 0..n_dirs {
        let u = random_unit(&mut rng, cov.dim());
        for j in i0..=i1 {
            let (lo, hi) = cov.member_shells(j);
            for shell in [lo.unwrap_or(hi), hi] {
                let x = &u * ray_exit(&cov.quasi_norm, &u, shell) * (1.0 - 1e-9);
                for i in i0..=i1 {
                    if (i - j).abs() > gap && cov.contains(i, &x) {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Largest `t` with `J(t u) <= shell`: the ray leaves `A^{shell+1} Delta`.
fn ray_exit(q: &StepQuasiNorm, u: &DVector<f64>, shell: i64) -> f64 {
    let y = linalg::matrix_power(&q.matrix_inv, shell + 1).expect("non-singular") * u;
    (q.s / q.form(&y)).sqrt()
}

/// Smallest `t` with `J(t u) >= shell`: the ray leaves `A^shell Delta`.
fn ray_entry(q: &StepQuasiNorm, u: &DVector<f64>, shell: i64) -> f64 {
    ray_exit(q, u, shell - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountRow {
    pub i: i64,
    pub count: usize,
    pub witnesses: Vec<i64>,
}

/// Pairs `(i, j)` with `‖A^{-j} B^i‖ >= 1/R` and `‖B^{-i} A^j‖ >= 1/R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakCounts {
    pub r: f64,
    pub range: usize,
    pub side: ProbeSide,
    /// `max_i |{j}|`.
    pub max_j_count: usize,
    /// `max_j |{i}|`.
    pub max_i_count: usize,
    pub rows: Vec<CountRow>,
}

impl WeakCounts {
    pub fn max_count(&self) -> usize {
        self.max_j_count.max(self.max_i_count)
    }

    /// Rows `i,count,witness_j_list` (witnesses separated by `;`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,count,witness_j_list\n");
        for r in &self.rows {
            let w: Vec<String> = r.witnesses.iter().map(i64::to_string).collect();
            out.push_str(&format!("{},{},{}\n", r.i, r.count, w.join(";")));
        }
        out
    }
}

pub fn weak_equivalence_counts(
    a: &Mat,
    b: &Mat,
    r: f64,
    range: usize,
    side: ProbeSide,
) -> Result<WeakCounts> {
    weak_equivalence_counts_with(a, b, r, range, side, &Tolerances::default())
}

/// For each `i` (in `-range..=range`, or `0..=range` for the positive
/// side) counts the `j` satisfying both norm conditions. Every `j` is
/// written `floor(i / eps) + t` and `t` is scanned outwards until the
/// decaying condition has failed several times in a row.
pub fn weak_equivalence_counts_with(
    a: &Mat,
    b: &Mat,
    r: f64,
    range: usize,
    side: ProbeSide,
    tol: &Tolerances,
) -> Result<WeakCounts> {
    if !(r > 1.0) {
        return Err(Error::InvalidInput("R must exceed 1".into()));
    }
    // frame of B: P_i = B^{-i} A^{j0(i)}, Q_i = A^{-j0(i)} B^i
    let pf = PairFrame::new(b, a, tol)?;
    let thr = -r.ln();
    let d = a.nrows();
    let a_step = &pf.b;
    let a_step_inv = &pf.b_inv;

    let mut seeds: Vec<(i64, i64, Mat, f64, Mat, f64)> = Vec::new();
    let ident = Mat::identity(d, d);
    seeds.push((0, 0, ident.clone(), 0.0, ident, 0.0));
    let dirs: &[i64] = match side {
        ProbeSide::TwoSided => &[1, -1],
        ProbeSide::PositiveOnly => &[1],
    };
    for &dir in dirs {
        let fwd = pf.products(range, dir, false);
        let inv = pf.products(range, dir, true);
        for (n, ((p, ps), (q, qs))) in fwd.into_iter().zip(inv).enumerate() {
            let i = dir * (n as i64 + 1);
            seeds.push((i, pf.floor.apply(i), p, ps, q, qs));
        }
    }
    seeds.sort_by_key(|s| s.0);

    let mut rows = Vec::with_capacity(seeds.len());
    let mut pairs: Vec<(i64, i64)> = Vec::new();
    for (i, j0, p, ps, q, qs) in seeds {
        let mut witnesses = Vec::new();
        // t >= 0: ‖A^{-t} Q_i‖ decays
        let mut m1 = q.clone();
        let mut s1 = qs;
        let mut m2 = p.clone();
        let mut s2 = ps;
        let mut misses = 0;
        let mut t = 0i64;
        while misses < SCAN_PATIENCE && t < SCAN_CAP {
            let c1 = pf.log_norm(&m1, s1) >= thr;
            let c2 = pf.log_norm(&m2, s2) >= thr;
            if c1 && c2 {
                witnesses.push(j0 + t);
            }
            misses = if c1 { 0 } else { misses + 1 };
            m1 = a_step_inv * m1;
            s1 += crate::equivalence::renormalize(&mut m1);
            m2 *= a_step;
            s2 += crate::equivalence::renormalize(&mut m2);
            t += 1;
        }
        // t < 0: ‖B^{-i} A^{j0 + t}‖ decays
        let (mut m1, mut s1, mut m2, mut s2) = (q, qs, p, ps);
        misses = 0;
        t = 0;
        loop {
            m1 = a_step * m1;
            s1 += crate::equivalence::renormalize(&mut m1);
            m2 *= a_step_inv;
            s2 += crate::equivalence::renormalize(&mut m2);
            t -= 1;
            if misses >= SCAN_PATIENCE || t <= -SCAN_CAP {
                break;
            }
            let c1 = pf.log_norm(&m1, s1) >= thr;
            let c2 = pf.log_norm(&m2, s2) >= thr;
            if c1 && c2 {
                witnesses.push(j0 + t);
            }
            misses = if c2 { 0 } else { misses + 1 };
        }
        witnesses.sort_unstable();
        pairs.extend(witnesses.iter().map(|&j| (i, j)));
        rows.push(CountRow {
            i,
            count: witnesses.len(),
            witnesses,
        });
    }
    let max_j_count = rows.iter().map(|r| r.count).max().unwrap_or(0);
    pairs.sort_unstable_by_key(|&(i, j)| (j, i));
    let max_i_count = pairs
        .chunk_by(|x, y| x.1 == y.1)
        .map(<[(i64, i64)]>::len)
        .max()
        .unwrap_or(0);
    Ok(WeakCounts {
        r,
        range,
        side,
        max_j_count,
        max_i_count,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubordinationRow {
    pub i: i64,
    /// Extreme `P`-shells met by sampled points of `Q_i`; `None` when
    /// unbounded below (central set).
    pub shell_min: Option<i64>,
    pub shell_max: i64,
    /// Smallest `k` with `Q_i ⊂ P_j^{k*}` for some `j`; `None` if no `k`
    /// up to the search cap works.
    pub k: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubordinationProfile {
    pub rows: Vec<SubordinationRow>,
    /// `max_i k_i`, `None` when some member is not subordinate.
    pub index: Option<u32>,
}

impl SubordinationProfile {
    /// Rows `i,k,shell_min,shell_max`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,k,shell_min,shell_max\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.i,
                r.k.map_or("none".into(), |k| k.to_string()),
                r.shell_min.map_or("-inf".into(), |s| s.to_string()),
                r.shell_max
            ));
        }
        out
    }
}

const K_SEARCH_CAP: u32 = 100_000;

/// Smallest `k` with `[lo, hi] ⊂` the shell range of some `P_j^{k*}`.
fn neighborhood_order(p: &InducedCovering, lo: Option<i64>, hi: i64) -> Option<u32> {
    let w = p.width();
    let (plo, phi) = p.shells;
    for k in 0..=K_SEARCH_CAP {
        let kw = i64::from(k) * w;
        let fits = match p.kind {
            CoveringKind::Homogeneous => match lo {
                None => false,
                Some(lo) => hi - lo <= 2 * kw + w,
            },
            CoveringKind::Inhomogeneous => {
                // smallest admissible j meeting the upper end
                let j = (hi - kw - phi).max(0);
                j - kw <= 0 || lo.is_some_and(|lo| j - kw + plo <= lo)
            }
        };
        if fits {
            return Some(k);
        }
        if w == 0 {
            return None;
        }
    }
    None
}

pub fn subordination_index(
    cov_q: &InducedCovering,
    cov_p: &InducedCovering,
    k_max: u32,
) -> Result<Option<u32>> {
    let prof = subordination_profile(cov_q, cov_p, DEFAULT_DIRECTIONS, 0)?;
    Ok(prof.index.filter(|&k| k <= k_max))
}

/// For each `i` in the index range of `Q`: the `P`-shells met by `Q_i`,
/// from the endpoints of sampled rays through `Q_0` (shells are monotone
/// along rays), using `J_B(A^i y) = m_i + J_B(B^{-m_i} A^i y)` with
/// `m_i = floor(eps i)`.
pub fn subordination_profile(
    cov_q: &InducedCovering,
    cov_p: &InducedCovering,
    n_dirs: usize,
    seed: u64,
) -> Result<SubordinationProfile> {
    if cov_q.kind != cov_p.kind {
        return Err(Error::KindMismatch);
    }
    if cov_q.dim() != cov_p.dim() {
        return Err(Error::DimensionMismatch {
            left: cov_q.dim(),
            right: cov_p.dim(),
        });
    }
    let (qa, qb) = (&cov_q.quasi_norm, &cov_p.quasi_norm);
    let pf = PairFrame::new(&qa.matrix, &qb.matrix, &Tolerances::default())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cov_q.shells;
    let endpoints = |u: &DVector<f64>| {
        let outer = u * ray_exit(qa, u, hi) * (1.0 - 1e-9);
        let inner = u * ray_entry(qa, u, lo) * (1.0 + 1e-9);
        (inner, outer)
    };
    let rays: Vec<(DVector<f64>, DVector<f64>)> = (0..n_dirs)
        .map(|_| endpoints(&random_unit(&mut rng, cov_q.dim())))
        .collect();

    let (i0, i1) = cov_q.index_range;
    let d = cov_q.dim();
    let max_abs = i0.unsigned_abs().max(i1.unsigned_abs()) as usize;
    let pos = pf.products(max_abs, 1, true);
    let neg = pf.products(max_abs, -1, true);
    let mut rows = Vec::new();
    for i in i0..=i1 {
        let (m, scale) = match i {
            0 => (Mat::identity(d, d), 0.0),
            i if i > 0 => pos[i as usize - 1].clone(),
            i => neg[i.unsigned_abs() as usize - 1].clone(),
        };
        let shift = pf.floor.apply(i);
        let central = cov_q.kind == CoveringKind::Inhomogeneous && i == 0;
        let row = if scale.abs() > LARGEST_LOG_SCALE {
            SubordinationRow {
                i,
                shell_min: None,
                shell_max: i64::MAX,
                k: None,
            }
        } else {
            let m = pf.frame.from_frame(&m) * scale.exp();
            let shell = |y: &DVector<f64>| qb.shell_index(&(&m * y)).map(|s| s + shift);
            // extremes of |m y| sit in thin cones around the singular
            // directions of m, which random rays miss once m is far from
            // normal
            let svd = m.clone().svd(false, true);
            let singular = svd.v_t.iter().flat_map(|vt| {
                vt.row_iter()
                    .map(|r| endpoints(&r.transpose()))
                    .collect::<Vec<_>>()
            });
            let mut smin = i64::MAX;
            let mut smax = i64::MIN;
            for (inner, outer) in rays.iter().cloned().chain(singular) {
                if let Some(s) = shell(&outer) {
                    smax = smax.max(s);
                }
                if let Some(s) = shell(&inner) {
                    smin = smin.min(s);
                }
            }
            let shell_min = if central { None } else { Some(smin) };
            SubordinationRow {
                i,
                shell_min,
                shell_max: smax,
                k: neighborhood_order(cov_p, shell_min, smax),
            }
        };
        rows.push(row);
    }
    let index = rows.iter().try_fold(0u32, |acc, r| r.k.map(|k| acc.max(k)));
    Ok(SubordinationProfile { rows, index })
}

/// A statistic evaluated at a base scale and at `factor` times that scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleCheck {
    pub base_scale: usize,
    pub large_scale: usize,
    pub at_base: f64,
    pub at_large: f64,
    pub slack: f64,
    /// `at_large - at_base <= slack`.
    pub bounded: bool,
}

impl ScaleCheck {
    fn new(base_scale: usize, large_scale: usize, at_base: f64, at_large: f64, slack: f64) -> Self {
        Self {
            base_scale,
            large_scale,
            at_base,
            at_large,
            slack,
            bounded: at_large - at_base <= slack,
        }
    }
}

/// Ranges are multiplied by `2^doublings` between the two evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleLadder {
    pub range: usize,
    pub doublings: u32,
    pub count_slack: usize,
}

impl Default for ScaleLadder {
    fn default() -> Self {
        Self {
            range: 50,
            doublings: 3,
            count_slack: 2,
        }
    }
}

impl ScaleLadder {
    pub fn large_range(&self) -> usize {
        self.range << self.doublings
    }
}

/// Weak counts at `range` and at the enlarged range; unbounded when the
/// maximum count grows by more than the slack.
pub fn weak_counts_check(
    a: &Mat,
    b: &Mat,
    r: f64,
    ladder: &ScaleLadder,
    side: ProbeSide,
) -> Result<ScaleCheck> {
    let small = weak_equivalence_counts(a, b, r, ladder.range, side)?;
    let large = weak_equivalence_counts(a, b, r, ladder.large_range(), side)?;
    Ok(ScaleCheck::new(
        ladder.range,
        ladder.large_range(),
        small.max_count() as f64,
        large.max_count() as f64,
        ladder.count_slack as f64,
    ))
}

/// Subordination index of the covering induced by `A` in the one induced
/// by `B` over both index ranges; unbounded when it grows at all or is
/// undefined.
pub fn subordination_check(
    a: &Mat,
    b: &Mat,
    kind: CoveringKind,
    ladder: &ScaleLadder,
    n_dirs: usize,
    seed: u64,
) -> Result<ScaleCheck> {
    let qa = build_ellipsoid_seeded(a, None, seed)?;
    let qb = build_ellipsoid_seeded(b, None, seed)?;
    let cov_p = InducedCovering::from_quasi_norm(qb, kind, None, (0, 0))?;
    let lower = |n: usize| match kind {
        CoveringKind::Homogeneous => -(n as i64),
        CoveringKind::Inhomogeneous => 0,
    };
    let index_at = |n: usize| -> Result<f64> {
        let cov_q = InducedCovering::from_quasi_norm(qa.clone(), kind, None, (lower(n), n as i64))?;
        let p = subordination_profile(&cov_q, &cov_p, n_dirs, seed)?;
        Ok(p.index.map_or(f64::INFINITY, f64::from))
    };
    let (small, large) = (index_at(ladder.range)?, index_at(ladder.large_range())?);
    let mut check = ScaleCheck::new(ladder.range, ladder.large_range(), small, large, 0.0);
    check.bounded &= large.is_finite();
    Ok(check)
}

/// Orbit log-spread of `rho_B / rho_A` at `k_max` and at `2^doublings`
/// times `k_max`; unbounded when it grows by more than
/// `ln max(|det A|, |det B|)`, the resolution of the step quasi-norms.
pub fn qn_orbit_check(
    a: &Mat,
    b: &Mat,
    k_max: usize,
    doublings: u32,
    n_dirs: usize,
    seed: u64,
) -> Result<ScaleCheck> {
    let qa = build_ellipsoid_seeded(a, None, seed)?;
    let qb = build_ellipsoid_seeded(b, None, seed)?;
    let large = k_max << doublings;
    let small_spread = qn_orbit_log_spread(&qa, &qb, k_max, n_dirs, seed)?;
    let large_spread = qn_orbit_log_spread(&qa, &qb, large, n_dirs, seed)?;
    let slack = qa.det_abs.max(qb.det_abs).ln();
    Ok(ScaleCheck::new(
        k_max,
        large,
        small_spread,
        large_spread,
        slack,
    ))
}

pub fn format_scale_check(c: &ScaleCheck) -> String {
    format!(
        "{} -> {}: {} -> {} (slack {}) {}",
        c.base_scale,
        c.large_scale,
        fmt_f64(c.at_base),
        fmt_f64(c.at_large),
        c.slack,
        if c.bounded { "bounded" } else { "unbounded" }
    )
}
