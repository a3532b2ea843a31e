mod common;

use common::*;
use logdet_lmi::linalg::{
    classify_cone, embed_hermitian, logdet_pd, schur_complement, solve_pd, sqrt_psd, sym_eig, Cone,
};
use logdet_lmi::SymmetricMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn eig_reconstructs_and_is_orthogonal(seed in any::<u64>(), n in 1usize..=8, scale in 0.01f64..100.0) {
        let a = random_symmetric(&mut rng(seed), n, scale);
        let e = sym_eig(&a).unwrap();
        let lam = DMatrix::from_diagonal(&e.values);
        let rebuilt = &e.vectors * lam * e.vectors.transpose();
        let tol = 1e-10 * (1.0 + a.norm());
        prop_assert!(max_abs(&(rebuilt - a.as_matrix())) <= tol);
        let vtv = e.vectors.transpose() * &e.vectors;
        prop_assert!(max_abs(&(vtv - DMatrix::identity(n, n))) <= 1e-10);
        for w in e.values.as_slice().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let reference = eigvals(&a);
        for (x, y) in e.values.iter().zip(&reference) {
            prop_assert!((x - y).abs() <= tol);
        }
    }

    #[test]
    fn construction_is_exactly_symmetric(seed in any::<u64>(), n in 1usize..=6) {
        let raw = uniform(&mut rng(seed), n, n);
        let s = SymmetricMatrix::new(raw).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }

    #[test]
    fn classification_follows_min_eigenvalue(seed in any::<u64>(), n in 1usize..=6, tol in 0.0f64..0.5) {
        let a = random_symmetric(&mut rng(seed), n, 1.0);
        let c = classify_cone(&a, tol).unwrap();
        let min = eigvals(&a)[0];
        prop_assert!((c.min_eigenvalue - min).abs() < 1e-10);
        prop_assert_eq!(c.tolerance_used, tol);
        let expected = if c.min_eigenvalue > tol {
            Cone::Pd
        } else if c.min_eigenvalue >= -tol {
            Cone::Psd
        } else {
            Cone::Indefinite
        };
        prop_assert_eq!(c.classification, expected);
    }

    #[test]
    fn sqrt_squares_back(seed in any::<u64>(), n in 1usize..=8, rank_frac in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let rank = ((n as f64) * rank_frac).round() as usize;
        let k = random_psd(&mut r, n, rank);
        let s = sqrt_psd(&k, 1e-9).unwrap();
        let sq = s.as_matrix() * s.as_matrix();
        prop_assert!(max_abs(&(sq - k.as_matrix())) <= 1e-8 * (1.0 + k.norm()));
        prop_assert!(eigvals(&s)[0] >= -1e-10);
    }

    #[test]
    fn logdet_of_inverse_negates(seed in any::<u64>(), n in 1usize..=6) {
        let a = random_pd(&mut rng(seed), n, 0.2);
        let l = logdet_pd(&a).unwrap();
        let inv_a = SymmetricMatrix::new(inv(a.as_matrix())).unwrap();
        prop_assert!((logdet_pd(&inv_a).unwrap() + l).abs() <= 1e-9);
        prop_assert!((l - logdet(a.as_matrix())).abs() <= 1e-9 * (1.0 + l.abs()));
    }

    #[test]
    fn solve_residual_is_small(seed in any::<u64>(), n in 1usize..=6, m in 1usize..=4) {
        let mut r = rng(seed);
        let a = random_pd(&mut r, n, 0.2);
        let b = uniform(&mut r, n, m);
        let x = solve_pd(&a, &b).unwrap();
        let residual = a.as_matrix() * &x - &b;
        prop_assert!(residual.norm() <= 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn schur_complement_preserves_semidefiniteness(
        seed in any::<u64>(),
        split in 1usize..=3,
        rest in 1usize..=3,
        shift in -1.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let n = split + rest;
        let c = random_pd(&mut r, rest, 0.3);
        let b = uniform(&mut r, split, rest);
        let a = random_symmetric(&mut r, split, 0.5);
        // Shift A so that both signs of the complement occur.
        let sc_oracle = a.as_matrix() - &b * inv(c.as_matrix()) * b.transpose();
        let a = a.as_matrix() + DMatrix::identity(split, split) * (shift - eigvals(&sym(sc_oracle))[0]);
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (split, split)).copy_from(&a);
        m.view_mut((0, split), (split, rest)).copy_from(&b);
        m.view_mut((split, 0), (rest, split)).copy_from(&b.transpose());
        m.view_mut((split, split), (rest, rest)).copy_from(c.as_matrix());
        let m = sym(m);
        let sc = schur_complement(&m, split).unwrap();
        let sc_min = eigvals(&sc)[0];
        prop_assume!(sc_min.abs() > 1e-6);
        let whole = classify_cone(&m, 1e-12).unwrap();
        let part = classify_cone(&sc, 1e-12).unwrap();
        prop_assert_eq!(whole.is_psd(), part.is_psd());
        prop_assert_eq!(whole.classification == Cone::Pd, part.classification == Cone::Pd);
    }

    #[test]
    fn hermitian_embedding_doubles_spectrum(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let re = random_symmetric(&mut r, n, 1.0);
        let g = uniform(&mut r, n, n);
        let im = (&g - g.transpose()) * 0.5;
        let e = embed_hermitian(&re, &im).unwrap();
        // The complex Hermitian eigenvalues each appear twice.
        let h = nalgebra::DMatrix::from_fn(n, n, |i, j| nalgebra::Complex::new(re.get(i, j), im[(i, j)]));
        let mut herm: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().flat_map(|&l| [l, l]).collect();
        herm.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, y) in eigvals(&e).iter().zip(&herm) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn literal_symmetry_tolerance() {
    let ok = SymmetricMatrix::from_literal(&[vec![1.0, 0.5], vec![0.5 + 1e-10, 1.0]]).unwrap();
    assert_eq!(ok.get(0, 1), ok.get(1, 0));
    assert!(SymmetricMatrix::from_literal(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
    assert!(SymmetricMatrix::from_literal(&[vec![1.0, 0.5]]).is_err());
}

#[test]
fn logdet_avoids_overflow() {
    let a = SymmetricMatrix::from_diagonal(&[1e200, 1e200, 1e200]);
    let l = logdet_pd(&a).unwrap();
    assert!((l - 3.0 * 200.0 * 10f64.ln()).abs() < 1e-9 * l);
}
