mod common;

use std::collections::BTreeMap;

use common::*;
use logdet_lmi::linalg::{classify_cone, schur_complement};
use logdet_lmi::lmi::{lift, lift_f, lift_g, ConstraintSpec, OBJECTIVE_VAR, X_VAR};
use logdet_lmi::{AffineExpr, Assignment, Kind, LmiConstraint, SymmetricMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = Kind> {
    prop_oneof![Just(Kind::F), Just(Kind::G)]
}

fn xz(x: SymmetricMatrix, z: SymmetricMatrix) -> Assignment {
    Assignment::new().with(X_VAR, x).with(OBJECTIVE_VAR, z)
}

/// A three-block LMI mixing constants, left/right multipliers and transposes.
fn mixed_constraint(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> LmiConstraint {
    let a = uniform(r, n, n);
    let b = uniform(r, n, 2);
    let x = AffineExpr::var("X", n);
    let y = AffineExpr::var("Y", n);
    let c0 = random_symmetric(r, n, 1.0);
    let top = AffineExpr::sym(&c0) + AffineExpr::lmul(a.clone(), AffineExpr::rmul(x.clone(), a.transpose())) - y.clone().scale(0.5);
    let off = AffineExpr::rmul(x.clone() + y.clone(), b.clone());
    let corner = AffineExpr::identity(2) + AffineExpr::lmul(b.transpose(), AffineExpr::rmul(y, b));
    LmiConstraint::new(
        "mixed",
        vec![vec![Some(top), Some(off), None], vec![Some(corner), None], vec![Some(AffineExpr::scale(x, 2.0))]],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembly_is_affine(seed in any::<u64>(), n in 1usize..=4, lambda in 0.0f64..=1.0, kind in kind_strategy()) {
        let mut r = rng(seed);
        let k = random_k(&mut r, n);
        let c = lift(kind, &k).unwrap().constraint;
        let a = xz(random_symmetric(&mut r, n, 3.0), random_symmetric(&mut r, n, 3.0));
        let b = xz(random_symmetric(&mut r, n, 3.0), random_symmetric(&mut r, n, 3.0));
        let mixed = a.convex_combination(&b, lambda).unwrap();
        let lhs = c.assemble(&mixed).unwrap();
        let rhs = &(&c.assemble(&a).unwrap() * lambda) + &(&c.assemble(&b).unwrap() * (1.0 - lambda));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + rhs.norm()));

        let m = mixed_constraint(&mut r, n);
        let a = Assignment::new().with("X", random_symmetric(&mut r, n, 2.0)).with("Y", random_symmetric(&mut r, n, 2.0));
        let b = Assignment::new().with("X", random_symmetric(&mut r, n, 2.0)).with("Y", random_symmetric(&mut r, n, 2.0));
        let lhs = m.assemble(&a.convex_combination(&b, lambda).unwrap()).unwrap();
        let rhs = &(&m.assemble(&a).unwrap() * lambda) + &(&m.assemble(&b).unwrap() * (1.0 - lambda));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn lifting_is_tight_at_closed_form(seed in any::<u64>(), n in 1usize..=4, kind in kind_strategy()) {
        let mut r = rng(seed);
        let k = random_k(&mut r, n);
        let x = random_pd(&mut r, n, 0.2);
        let c = lift(kind, &k).unwrap().constraint;
        let z = sym(z_star(kind, &k, &x));
        let margin = c.feasibility_margin(&xz(x.clone(), z.clone())).unwrap();
        prop_assert!(margin.abs() <= 1e-7, "margin {}", margin);
        let eps = SymmetricMatrix::identity(n);
        let above = &z + &(&eps * 1e-3);
        prop_assert!(c.feasibility_margin(&xz(x.clone(), above)).unwrap() < 0.0);
        let below = &z - &(&eps * 1e-3);
        prop_assert!(c.feasibility_margin(&xz(x, below)).unwrap() > 0.0);
    }

    #[test]
    fn feasible_exactly_below_closed_form(seed in any::<u64>(), n in 1usize..=3, kind in kind_strategy()) {
        // Z feasible iff Z <= Z*, checked on random perturbations of Z*.
        let mut r = rng(seed);
        let k = random_k(&mut r, n);
        let x = random_pd(&mut r, n, 0.2);
        let c = lift(kind, &k).unwrap().constraint;
        let zs = z_star(kind, &k, &x);
        let p = random_symmetric(&mut r, n, 0.3);
        let gap = eigvals(&-&p);
        prop_assume!(gap.iter().all(|l| l.abs() > 1e-6));
        let margin = c.feasibility_margin(&xz(x, sym(&zs + p.as_matrix()))).unwrap();
        prop_assert_eq!(margin >= 0.0, gap[0] >= 0.0);
    }

    #[test]
    fn schur_sign_matches_margin(seed in any::<u64>(), n in 1usize..=4, kind in kind_strategy()) {
        let mut r = rng(seed);
        let k = random_k(&mut r, n);
        let x = random_pd(&mut r, n, 0.2);
        let z = random_symmetric(&mut r, n, 1.0);
        let c = lift(kind, &k).unwrap().constraint;
        let a = xz(x, z);
        let m = c.assemble(&a).unwrap();
        // Trailing block is X + K (f) or I + K^1/2 X K^1/2 (g): PD here.
        let sc = schur_complement(&m, n).unwrap();
        let sc_min = eigvals(&sc)[0];
        prop_assume!(sc_min.abs() > 1e-8);
        let margin = c.feasibility_margin(&a).unwrap();
        prop_assert_eq!(margin >= 0.0, sc_min >= 0.0);
        prop_assert_eq!(classify_cone(&m, 0.0).unwrap().is_psd(), classify_cone(&sc, 0.0).unwrap().is_psd());
    }

    #[test]
    fn spec_round_trips(seed in any::<u64>(), n in 1usize..=4, kind in kind_strategy()) {
        let mut r = rng(seed);
        let k = random_k(&mut r, n);
        let c = lift(kind, &k).unwrap().constraint;
        let text = serde_json::to_string(&c.to_spec()).unwrap();
        let spec: ConstraintSpec = serde_json::from_str(&text).unwrap();
        let dims = BTreeMap::from([(X_VAR.to_string(), n), (OBJECTIVE_VAR.to_string(), n)]);
        let back = spec.to_constraint(&dims).unwrap();
        prop_assert!(back.structurally_eq(&c, 1e-12));
        prop_assert_eq!(back.to_string(), c.to_string());

        let m = mixed_constraint(&mut r, n);
        let text = serde_json::to_string(&m.to_spec()).unwrap();
        let spec: ConstraintSpec = serde_json::from_str(&text).unwrap();
        let dims = BTreeMap::from([("X".to_string(), n), ("Y".to_string(), n)]);
        let back = spec.to_constraint(&dims).unwrap();
        prop_assert!(back.structurally_eq(&m, 1e-12));
        let a = Assignment::new().with("X", random_symmetric(&mut r, n, 2.0)).with("Y", random_symmetric(&mut r, n, 2.0));
        prop_assert!(back.assemble(&a).unwrap().max_abs_diff(&m.assemble(&a).unwrap()) <= 1e-12);
    }

    #[test]
    fn lower_blocks_mirror_upper(seed in any::<u64>(), n in 1usize..=3) {
        let mut r = rng(seed);
        let m = mixed_constraint(&mut r, n);
        let a = Assignment::new().with("X", random_symmetric(&mut r, n, 2.0)).with("Y", random_symmetric(&mut r, n, 2.0));
        for i in 0..3 {
            for j in 0..3 {
                let up = m.block(i, j).eval(&a).unwrap();
                let low = m.block(j, i).eval(&a).unwrap();
                prop_assert!(max_abs(&(up - low.transpose())) <= 1e-14);
            }
        }
    }
}

#[test]
fn displayed_liftings() {
    assert_eq!(lift_f(&SymmetricMatrix::scalar(1.0)).unwrap().constraint.to_string(), "[[I−Z, 1],[1, X+1]] ⪰ 0");
    assert_eq!(
        lift_g(&SymmetricMatrix::scalar(4.0)).unwrap().constraint.to_string(),
        "[[X−Z, 2·X],[2·X, I+4·X]] ⪰ 0"
    );
    let zero = lift_f(&SymmetricMatrix::zeros(2)).unwrap().constraint;
    let a = xz(SymmetricMatrix::from_diagonal(&[2.0, 3.0]), SymmetricMatrix::zeros(2));
    let m = zero.assemble(&a).unwrap();
    assert_eq!(m.as_matrix().view((0, 2), (2, 2)).amax(), 0.0);
}

#[test]
fn scalar_lifting_at_half_is_singular() {
    let c = lift_f(&SymmetricMatrix::scalar(1.0)).unwrap().constraint;
    let m = c.assemble(&xz(SymmetricMatrix::scalar(1.0), SymmetricMatrix::scalar(0.5))).unwrap();
    assert_eq!(m.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 2.0]));
    assert!(schur_complement(&m, 1).unwrap().get(0, 0).abs() < 1e-15);
}

#[test]
fn unknown_variables_are_rejected() {
    let spec: ConstraintSpec = serde_json::from_str(r#"{"blocks": [[[{"var": "W"}]]]}"#).unwrap();
    let dims = BTreeMap::from([("X".to_string(), 1)]);
    assert!(spec.to_constraint(&dims).is_err());
    let c = lift_f(&SymmetricMatrix::scalar(1.0)).unwrap().constraint;
    assert!(c.assemble(&Assignment::new().with("X", SymmetricMatrix::scalar(1.0))).is_err());
}
