//! The two log-determinant functions
//!
//! ```text
//! f(X) = log det(I + K X^{-1})
//! g(X) = log det(K + X^{-1})
//! ```
//!
//! for fixed `K >= 0` and `X > 0`, together with the closed-form minimizers
//! `Z*(X)` of their slack-variable programs and analytic gradients.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    default_clamp_threshold, logdet_pd_named, psd_sqrt_from_eig, solve_pd_named, sym_eig,
    SymmetricMatrix, DEFAULT_CONE_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    /// `log det(I + K X^{-1})`
    F,
    /// `log det(K + X^{-1})`
    G,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::F => "F",
            Kind::G => "G",
        })
    }
}

/// Thresholds used when the analytic quantities are checked numerically.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ValidationPolicy {
    /// Central-difference step is `fd_rel_step * (1 + ||X||)`.
    pub fd_rel_step: f64,
    /// Relative agreement required between analytic and finite-difference gradients.
    pub grad_rel_tol: f64,
    /// Second differences below this count as a convexity failure.
    pub hessian_floor: f64,
    /// Agreement of the closed-form and determinant identities.
    pub identity_tol: f64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            fd_rel_step: 1e-5,
            grad_rel_tol: 1e-4,
            hessian_floor: -1e-4,
            identity_tol: 1e-8,
        }
    }
}

/// `f` or `g` for a fixed PSD `K`, with `K^{1/2}` precomputed.
#[derive(Clone, Debug)]
pub struct LogDetObjective {
    kind: Kind,
    k: SymmetricMatrix,
    k_sqrt: SymmetricMatrix,
    k_min_eigenvalue: f64,
}

impl LogDetObjective {
    pub fn new(kind: Kind, k: SymmetricMatrix) -> Result<Self> {
        Self::with_tolerance(kind, k, DEFAULT_CONE_TOL)
    }

    /// Validates `K` as PSD with the given cone tolerance.
    pub fn with_tolerance(kind: Kind, k: SymmetricMatrix, tol: f64) -> Result<Self> {
        let eig = sym_eig(&k)?;
        if eig.min() < -tol {
            return Err(Error::cone("K", eig.min()));
        }
        let k_sqrt = psd_sqrt_from_eig(&eig, default_clamp_threshold(&eig));
        Ok(Self {
            kind,
            k,
            k_sqrt,
            k_min_eigenvalue: eig.min(),
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn k(&self) -> &SymmetricMatrix {
        &self.k
    }

    pub fn k_sqrt(&self) -> &SymmetricMatrix {
        &self.k_sqrt
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    pub fn k_min_eigenvalue(&self) -> f64 {
        self.k_min_eigenvalue
    }

    pub fn k_is_pd(&self, tol: f64) -> bool {
        self.k_min_eigenvalue > tol
    }

    fn check_x(&self, x: &SymmetricMatrix) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::shape(format!(
                "X is {m}x{m} but K is {n}x{n}",
                m = x.dim(),
                n = self.dim()
            )));
        }
        logdet_pd_named(x, "X")
    }

    pub fn eval(&self, x: &SymmetricMatrix) -> Result<f64> {
        let logdet_x = self.check_x(x)?;
        match self.kind {
            Kind::F => Ok(logdet_pd_named(&(x + &self.k), "X + K")? - logdet_x),
            Kind::G => {
                let x_inv = x.inverse_pd()?;
                logdet_pd_named(&(&self.k + &x_inv), "K + X^-1")
            }
        }
    }

    /// Closed-form minimizer of the slack program.
    pub fn z_star(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        self.check_x(x)?;
        let n = self.dim();
        match self.kind {
            Kind::F => {
                // I - K^{1/2} (X + K)^{-1} K^{1/2}
                let s = self.k_sqrt.as_matrix();
                let inner = solve_pd_named(&(x + &self.k), s, "X + K")?;
                SymmetricMatrix::new(DMatrix::identity(n, n) - s * inner)
            }
            Kind::G => {
                let x_inv = x.inverse_pd()?;
                (&self.k + &x_inv).inverse_pd()
            }
        }
    }

    /// `X - X K^{1/2} (I + K^{1/2} X K^{1/2})^{-1} K^{1/2} X`, the
    /// matrix-inversion-lemma form of `(K + X^{-1})^{-1}`.
    pub fn z_star_g_woodbury(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        self.check_x(x)?;
        let n = self.dim();
        let s = self.k_sqrt.as_matrix();
        let inner = &SymmetricMatrix::identity(n) + &x.congruence(&self.k_sqrt);
        let sx = s * x.as_matrix();
        let solved = solve_pd_named(&inner, &sx, "I + K^1/2 X K^1/2")?;
        SymmetricMatrix::new(x.as_matrix() - sx.transpose() * solved)
    }

    pub fn grad(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        self.check_x(x)?;
        match self.kind {
            Kind::F => Ok(&(x + &self.k).inverse_pd()? - &x.inverse_pd()?),
            Kind::G => {
                let xkx = self.k.congruence(x);
                Ok(-&(x + &xkx).inverse_pd()?)
            }
        }
    }

    /// `(log det(I + K X^{-1}), log det(I + K^{1/2} X^{-1} K^{1/2}))`; both
    /// sides agree by Sylvester's determinant identity.
    pub fn sylvester_pair(&self, x: &SymmetricMatrix) -> Result<(f64, f64)> {
        let f = LogDetObjective {
            kind: Kind::F,
            ..self.clone()
        };
        let lhs = f.eval(x)?;
        let x_inv = x.inverse_pd()?;
        let rhs = logdet_pd_named(
            &(&SymmetricMatrix::identity(self.dim()) + &x_inv.congruence(&self.k_sqrt)),
            "I + K^1/2 X^-1 K^1/2",
        )?;
        Ok((lhs, rhs))
    }

    /// `[h(X + tD) - h(X - tD)] / 2t`.
    pub fn central_difference(
        &self,
        x: &SymmetricMatrix,
        d: &SymmetricMatrix,
        step: f64,
    ) -> Result<f64> {
        let plus = self.eval(&(x + &(d * step)))?;
        let minus = self.eval(&(x - &(d * step)))?;
        Ok((plus - minus) / (2.0 * step))
    }

    /// `[h(X + tD) - 2 h(X) + h(X - tD)] / t^2`.
    pub fn second_difference(
        &self,
        x: &SymmetricMatrix,
        d: &SymmetricMatrix,
        step: f64,
    ) -> Result<f64> {
        let plus = self.eval(&(x + &(d * step)))?;
        let mid = self.eval(x)?;
        let minus = self.eval(&(x - &(d * step)))?;
        Ok((plus - 2.0 * mid + minus) / (step * step))
    }
}

pub fn eval_f(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<f64> {
    LogDetObjective::new(Kind::F, k.clone())?.eval(x)
}

pub fn eval_g(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<f64> {
    LogDetObjective::new(Kind::G, k.clone())?.eval(x)
}

pub fn sylvester_check(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<(f64, f64)> {
    LogDetObjective::new(Kind::F, k.clone())?.sylvester_pair(x)
}

pub fn z_star_f(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    LogDetObjective::new(Kind::F, k.clone())?.z_star(x)
}

pub fn z_star_g(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    LogDetObjective::new(Kind::G, k.clone())?.z_star(x)
}

pub fn grad_f(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    LogDetObjective::new(Kind::F, k.clone())?.grad(x)
}

pub fn grad_g(k: &SymmetricMatrix, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    LogDetObjective::new(Kind::G, k.clone())?.grad(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::logdet_pd;
    use approx::assert_abs_diff_eq;

    fn sm(rows: &[&[f64]]) -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn scalar(x: f64) -> SymmetricMatrix {
        SymmetricMatrix::scalar(x)
    }

    #[test]
    fn f_values() {
        let x = sm(&[&[3.0, 1.0], &[1.0, 2.0]]);
        assert_eq!(eval_f(&SymmetricMatrix::zeros(2), &x).unwrap(), 0.0);
        let i2 = SymmetricMatrix::identity(2);
        assert_abs_diff_eq!(eval_f(&i2, &i2).unwrap(), 4f64.ln(), epsilon = 1e-14);
        let k = sm(&[&[1.0, 0.5], &[0.5, 1.0]]);
        assert_abs_diff_eq!(eval_f(&k, &i2).unwrap(), 3.75f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn g_values() {
        assert_abs_diff_eq!(
            eval_g(&SymmetricMatrix::zeros(2), &SymmetricMatrix::from_diagonal(&[2.0, 2.0]))
                .unwrap(),
            -4f64.ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(eval_g(&scalar(1.0), &scalar(1.0)).unwrap(), 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(eval_g(&scalar(2.0), &scalar(4.0)).unwrap(), 2.25f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn errors() {
        let i2 = SymmetricMatrix::identity(2);
        let bad_x = sm(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(eval_f(&i2, &bad_x), Err(Error::ConeViolation { ref what, .. }) if what == "X"));
        assert!(matches!(eval_g(&i2, &SymmetricMatrix::identity(3)), Err(Error::Shape(_))));
        assert!(matches!(eval_f(&bad_x, &i2), Err(Error::ConeViolation { ref what, .. }) if what == "K"));
        // X + K may be PD while X is not; z_star still insists on X > 0.
        assert!(z_star_f(&SymmetricMatrix::from_diagonal(&[5.0, 5.0]), &bad_x).is_err());
    }

    #[test]
    fn sylvester_examples() {
        let i2 = SymmetricMatrix::identity(2);
        let (l, r) = sylvester_check(&i2, &i2).unwrap();
        assert_abs_diff_eq!(l, 1.3862944, epsilon = 1e-7);
        assert_abs_diff_eq!(r, 1.3862944, epsilon = 1e-7);
        let (l, r) = sylvester_check(&SymmetricMatrix::zeros(2), &sm(&[&[2.0, 0.3], &[0.3, 1.0]])).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
        let k = sm(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let (l, r) = sylvester_check(&k, &SymmetricMatrix::from_diagonal(&[1.0, 2.0])).unwrap();
        assert!((l - r).abs() <= 1e-8 * (1.0 + l.abs()));
    }

    #[test]
    fn z_star_examples() {
        let i2 = SymmetricMatrix::identity(2);
        let z = z_star_f(&i2, &i2).unwrap();
        assert!(z.max_abs_diff(&(&i2 * 0.5)) < 1e-15);
        let z = z_star_f(&SymmetricMatrix::zeros(2), &sm(&[&[2.0, 0.1], &[0.1, 3.0]])).unwrap();
        assert!(z.max_abs_diff(&i2) < 1e-15);
        let z = z_star_f(&scalar(2.0), &scalar(1.0)).unwrap();
        assert_abs_diff_eq!(z.get(0, 0), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(-logdet_pd(&z).unwrap(), 3f64.ln(), epsilon = 1e-14);

        let x = SymmetricMatrix::from_diagonal(&[2.0, 2.0]);
        let z = z_star_g(&SymmetricMatrix::zeros(2), &x).unwrap();
        assert!(z.max_abs_diff(&x) < 1e-15);
        assert_abs_diff_eq!(z_star_g(&scalar(1.0), &scalar(1.0)).unwrap().get(0, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            z_star_g(&scalar(2.0), &scalar(4.0)).unwrap().get(0, 0),
            1.0 / 2.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn woodbury_form_matches() {
        let k = sm(&[&[2.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]);
        let x = sm(&[&[1.5, 0.2, -0.1], &[0.2, 0.8, 0.0], &[-0.1, 0.0, 2.0]]);
        let obj = LogDetObjective::new(Kind::G, k).unwrap();
        let a = obj.z_star(&x).unwrap();
        let b = obj.z_star_g_woodbury(&x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-8);
    }

    #[test]
    fn gradient_examples() {
        let x = sm(&[&[2.0, 0.5], &[0.5, 1.0]]);
        assert!(grad_f(&SymmetricMatrix::zeros(2), &x).unwrap().max_abs_diff(&SymmetricMatrix::zeros(2)) == 0.0);
        assert_abs_diff_eq!(grad_f(&scalar(1.0), &scalar(1.0)).unwrap().get(0, 0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad_f(&scalar(2.0), &scalar(1.0)).unwrap().get(0, 0), -2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(grad_g(&scalar(0.0), &scalar(2.0)).unwrap().get(0, 0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad_g(&scalar(1.0), &scalar(1.0)).unwrap().get(0, 0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad_g(&scalar(2.0), &scalar(4.0)).unwrap().get(0, 0), -1.0 / 36.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_gradients_match_difference_quotients() {
        // d/dx log(1 + 2/x) at x = 1 and d/dx log(2 + 1/x) at x = 4.
        let h = 1e-6;
        let f = |x: f64| (1.0 + 2.0 / x).ln();
        let g = |x: f64| (2.0 + 1.0 / x).ln();
        let fd_f = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let fd_g = (g(4.0 + h) - g(4.0 - h)) / (2.0 * h);
        assert_abs_diff_eq!(fd_f, -2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fd_g, -1.0 / 36.0, epsilon = 1e-8);
    }
}
