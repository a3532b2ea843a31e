//! Random instances and reference computations that do not go through the
//! library's own factorizations (nalgebra's QL eigen-solver and LU instead).
#![allow(dead_code)]

use logdet_lmi::{Kind, SymmetricMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn sym(m: DMatrix<f64>) -> SymmetricMatrix {
    SymmetricMatrix::new(m).unwrap()
}

/// `B B^T / n + shift I`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> SymmetricMatrix {
    let b = uniform(rng, n, n);
    sym(&b * b.transpose() / n as f64 + DMatrix::identity(n, n) * shift)
}

/// `B B^T` with `B` of size `n x rank`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> SymmetricMatrix {
    if rank == 0 {
        return SymmetricMatrix::zeros(n);
    }
    let b = uniform(rng, n, rank);
    sym(&b * b.transpose())
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymmetricMatrix {
    let a = uniform(rng, n, n) * scale;
    sym((&a + a.transpose()) * 0.5)
}

/// A PSD `K` that is zero, rank-deficient or PD depending on the draw.
pub fn random_k(rng: &mut ChaCha8Rng, n: usize) -> SymmetricMatrix {
    match rng.random_range(0..4) {
        0 => SymmetricMatrix::zeros(n),
        1 => {
            let rank = rng.random_range(0..n);
            random_psd(rng, n, rank)
        }
        _ => random_pd(rng, n, 0.1),
    }
}

pub fn eigvals(a: &SymmetricMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = a.as_matrix().clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

pub fn logdet(a: &DMatrix<f64>) -> f64 {
    let s = SymmetricMatrix::new(a.clone()).unwrap();
    eigvals(&s).iter().map(|l| l.ln()).sum()
}

pub fn inv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().unwrap()
}

pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    // Round-off eigenvalues of a singular K are zeroed, as the library does.
    let e = a.clone().symmetric_eigen();
    let floor = 1e-10 * e.eigenvalues.amax();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| if l <= floor { 0.0 } else { l.sqrt() }));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn eval(kind: Kind, k: &SymmetricMatrix, x: &SymmetricMatrix) -> f64 {
    let (k, x) = (k.as_matrix(), x.as_matrix());
    match kind {
        Kind::F => logdet(&(x + k)) - logdet(x),
        Kind::G => {
            let m = k + inv(x);
            logdet(&((&m + m.transpose()) * 0.5))
        }
    }
}

pub fn z_star(kind: Kind, k: &SymmetricMatrix, x: &SymmetricMatrix) -> DMatrix<f64> {
    let (k, x) = (k.as_matrix(), x.as_matrix());
    let n = k.nrows();
    match kind {
        Kind::F => {
            let s = sqrt_psd(k);
            DMatrix::identity(n, n) - &s * inv(&(x + k)) * &s
        }
        Kind::G => inv(&(k + inv(x))),
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}
