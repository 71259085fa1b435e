//! Random expansive matrices with a known real Jordan structure, and the
//! matrix pairs shared by the property and acceptance suites.
#![allow(dead_code)]

use dilequiv::linalg::{from_rows, Mat};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn m(rows: &[&[f64]]) -> Mat {
    from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random matrix with singular values in `[1, cond]`.
pub fn conditioned(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> Mat {
    let svd = gaussian(rng, d, d).svd(true, true);
    let s = Mat::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| {
        rng.random_range(1.0..=cond)
    }));
    svd.u.unwrap() * s * svd.v_t.unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Real(f64),
    Complex { modulus: f64, angle: f64 },
}

impl Cell {
    fn width(self) -> usize {
        match self {
            Cell::Real(_) => 1,
            Cell::Complex { .. } => 2,
        }
    }

    fn modulus(self) -> f64 {
        match self {
            Cell::Real(l) => l.abs(),
            Cell::Complex { modulus, .. } => modulus,
        }
    }

    fn block(self) -> Mat {
        match self {
            Cell::Real(l) => Mat::from_element(1, 1, l),
            Cell::Complex { modulus, angle } => {
                let (re, im) = (modulus * angle.cos(), modulus * angle.sin());
                m(&[&[re, im], &[-im, re]])
            }
        }
    }
}

/// A Jordan chain: `size` copies of `cell` on the diagonal and identities
/// on the block superdiagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chain {
    pub cell: Cell,
    pub size: usize,
}

pub fn jordan_matrix(chains: &[Chain]) -> Mat {
    let d: usize = chains.iter().map(|c| c.cell.width() * c.size).sum();
    let mut j = Mat::zeros(d, d);
    let mut at = 0;
    for c in chains {
        let w = c.cell.width();
        let b = c.cell.block();
        for k in 0..c.size {
            let o = at + k * w;
            j.view_mut((o, o), (w, w)).copy_from(&b);
            if k + 1 < c.size {
                j.view_mut((o, o + w), (w, w)).fill_with_identity();
            }
        }
        at += w * c.size;
    }
    j
}

#[derive(Debug, Clone, Copy)]
pub struct Family {
    pub max_dim: usize,
    pub positive: bool,
    pub moduli: (f64, f64),
    pub cond: f64,
}

impl Default for Family {
    fn default() -> Self {
        Self {
            max_dim: 5,
            positive: false,
            moduli: (1.1, 4.0),
            cond: 4.0,
        }
    }
}

/// Chains with separated moduli (relative gap at least 12%), occasional
/// complex pairs, defective chains and repeated eigenvalues.
pub fn random_chains(rng: &mut ChaCha8Rng, d: usize, fam: &Family) -> Vec<Chain> {
    let mut chains: Vec<Chain> = Vec::new();
    let mut left = d;
    while left > 0 {
        if let Some(prev) = chains.last().copied() {
            if rng.random_bool(0.15) && prev.cell.width() <= left {
                chains.push(Chain {
                    cell: prev.cell,
                    size: 1,
                });
                left -= prev.cell.width();
                continue;
            }
        }
        let modulus = loop {
            let r = rng.random_range(fam.moduli.0..=fam.moduli.1);
            if chains
                .iter()
                .all(|c| (c.cell.modulus() / r).ln().abs() > 0.12)
            {
                break r;
            }
        };
        let complex = !fam.positive && left >= 2 && rng.random_bool(0.35);
        let cell = if complex {
            Cell::Complex {
                modulus,
                angle: rng.random_range(0.3..std::f64::consts::PI - 0.3),
            }
        } else if fam.positive || rng.random_bool(0.7) {
            Cell::Real(modulus)
        } else {
            Cell::Real(-modulus)
        };
        let max_size = (left / cell.width()).min(3);
        let size = if rng.random_bool(0.6) {
            1
        } else {
            rng.random_range(1..=max_size)
        };
        chains.push(Chain { cell, size });
        left -= cell.width() * size;
    }
    chains
}

pub fn random_dimension(rng: &mut ChaCha8Rng, fam: &Family) -> usize {
    rng.random_range(1..=fam.max_dim)
}

/// `C J C^{-1}` for a random Jordan matrix `J` and a conditioned `C`.
pub fn random_expansive(rng: &mut ChaCha8Rng, fam: &Family) -> Mat {
    let d = random_dimension(rng, fam);
    let chains = random_chains(rng, d, fam);
    conjugate(rng, &jordan_matrix(&chains), fam.cond)
}

pub fn conjugate(rng: &mut ChaCha8Rng, j: &Mat, cond: f64) -> Mat {
    let c = conditioned(rng, j.nrows(), cond);
    let ci = c.clone().try_inverse().unwrap();
    c * j * ci
}

/// `C (Lambda + N) C^{-1}` with eigenvalue real parts in `[0.1, 1.3]`, so
/// that `exp` of it is expansive.
pub fn random_generator(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let mut x = Mat::zeros(d, d);
    let mut i = 0;
    while i < d {
        let re = rng.random_range(0.1..1.3);
        if i + 1 < d && rng.random_bool(0.4) {
            let im = rng.random_range(0.2..2.5);
            x[(i, i)] = re;
            x[(i + 1, i + 1)] = re;
            x[(i, i + 1)] = im;
            x[(i + 1, i)] = -im;
            i += 2;
        } else {
            x[(i, i)] = re;
            i += 1;
        }
    }
    for r in 0..d {
        for c in r + 1..d {
            if rng.random_bool(0.3) {
                x[(r, c)] += rng.random_range(-0.5..0.5);
            }
        }
    }
    conjugate(rng, &x, 3.0)
}

/// Random unipotent `C (I + N) C^{-1}`.
pub fn random_unipotent(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let mut u = Mat::identity(d, d);
    for r in 0..d {
        for c in r + 1..d {
            u[(r, c)] = rng.random_range(-1.0..1.0);
        }
    }
    conjugate(rng, &u, 3.0)
}

pub fn counterexample() -> (Mat, Mat) {
    (
        m(&[&[2.0, 2.0], &[0.0, 2.0]]),
        m(&[&[2.0, 4.0], &[0.0, 2.0]]),
    )
}

pub fn split_pair() -> (Mat, Mat) {
    (
        m(&[&[3.0, 0.0], &[0.0, 2.0]]),
        m(&[&[3.0, 0.0], &[1.0, 2.0]]),
    )
}

/// `C (J + E) C^{-1}` where `E` couples the top modulus to a lower one
/// above the diagonal: coarsely equivalent to `A = C J C^{-1}` and not
/// equivalent to it.
pub fn upper_pattern(seed: u64) -> (Mat, Mat) {
    let mut r = rng(seed);
    let hi = r.random_range(2.6..3.6);
    let lo = r.random_range(1.3..2.2);
    let mut chains = vec![
        Chain {
            cell: Cell::Real(hi),
            size: 1,
        },
        Chain {
            cell: Cell::Real(lo),
            size: 1,
        },
    ];
    if r.random_bool(0.5) {
        chains.push(Chain {
            cell: Cell::Real(r.random_range(1.05..1.2)),
            size: 1,
        });
    }
    let j = jordan_matrix(&chains);
    let mut e = Mat::zeros(j.nrows(), j.ncols());
    e[(0, 1)] = r.random_range(0.5..2.0);
    let c = conditioned(&mut r, j.nrows(), 3.0);
    let ci = c.clone().try_inverse().unwrap();
    (&c * &j * &ci, &c * (j + e) * &ci)
}
