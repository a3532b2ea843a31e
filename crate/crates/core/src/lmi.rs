//! Affine matrix expressions, block linear matrix inequalities, and the
//! slack-variable liftings of `f` and `g`.
//!
//! For `K >= 0` and `X > 0`:
//!
//! ```text
//! f(X) = min -log det Z  s.t.  [[I - Z, K^{1/2}], [K^{1/2}, X + K]] >= 0
//! g(X) = min -log det Z  s.t.  [[X - Z, X K^{1/2}], [K^{1/2} X, I + K^{1/2} X K^{1/2}]] >= 0
//! ```
//!
//! Both constraints are affine in `(X, Z)` jointly.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt as render;
use crate::linalg::{rows_to_matrix, sym_eig, SymmetricMatrix};
use crate::objective::{Kind, LogDetObjective};

/// Name of the slack variable whose `-log det` is minimized.
pub const OBJECTIVE_VAR: &str = "Z";
/// Name of the argument variable of `f` and `g`.
pub const X_VAR: &str = "X";

/// An expression affine in named symmetric matrix variables.
///
/// There is no variable-times-variable node, so every expression is affine
/// by construction. Constants may be rectangular.
#[derive(Clone, Debug, PartialEq)]
pub enum AffineExpr {
    Const(DMatrix<f64>),
    Identity(usize),
    Var { name: String, dim: usize },
    Scale(f64, Box<AffineExpr>),
    LMul(DMatrix<f64>, Box<AffineExpr>),
    RMul(Box<AffineExpr>, DMatrix<f64>),
    Sum(Vec<AffineExpr>),
    Neg(Box<AffineExpr>),
    Transpose(Box<AffineExpr>),
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        AffineExpr::Const(m)
    }

    pub fn sym(m: &SymmetricMatrix) -> Self {
        AffineExpr::Const(m.as_matrix().clone())
    }

    pub fn identity(n: usize) -> Self {
        AffineExpr::Identity(n)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineExpr::Const(DMatrix::zeros(rows, cols))
    }

    pub fn var(name: impl Into<String>, dim: usize) -> Self {
        AffineExpr::Var {
            name: name.into(),
            dim,
        }
    }

    pub fn scale(self, a: f64) -> Self {
        AffineExpr::Scale(a, Box::new(self))
    }

    pub fn lmul(c: DMatrix<f64>, e: AffineExpr) -> Self {
        AffineExpr::LMul(c, Box::new(e))
    }

    pub fn rmul(e: AffineExpr, c: DMatrix<f64>) -> Self {
        AffineExpr::RMul(Box::new(e), c)
    }

    pub fn transpose(self) -> Self {
        AffineExpr::Transpose(Box::new(self))
    }

    pub fn shape(&self) -> Result<(usize, usize)> {
        match self {
            AffineExpr::Const(m) => Ok((m.nrows(), m.ncols())),
            AffineExpr::Identity(n) => Ok((*n, *n)),
            AffineExpr::Var { dim, .. } => Ok((*dim, *dim)),
            AffineExpr::Scale(_, e) | AffineExpr::Neg(e) => e.shape(),
            AffineExpr::LMul(c, e) => {
                let (r, cols) = e.shape()?;
                if c.ncols() != r {
                    return Err(Error::shape(format!(
                        "left multiplier is {}x{} but operand has {r} rows",
                        c.nrows(),
                        c.ncols()
                    )));
                }
                Ok((c.nrows(), cols))
            }
            AffineExpr::RMul(e, c) => {
                let (rows, k) = e.shape()?;
                if c.nrows() != k {
                    return Err(Error::shape(format!(
                        "right multiplier is {}x{} but operand has {k} columns",
                        c.nrows(),
                        c.ncols()
                    )));
                }
                Ok((rows, c.ncols()))
            }
            AffineExpr::Sum(items) => {
                let mut it = items.iter();
                let first = it
                    .next()
                    .ok_or_else(|| Error::shape("empty sum has no shape"))?
                    .shape()?;
                for e in it {
                    let s = e.shape()?;
                    if s != first {
                        return Err(Error::shape(format!(
                            "sum of {}x{} and {}x{} terms",
                            first.0, first.1, s.0, s.1
                        )));
                    }
                }
                Ok(first)
            }
            AffineExpr::Transpose(e) => e.shape().map(|(r, c)| (c, r)),
        }
    }

    pub fn eval(&self, a: &Assignment) -> Result<DMatrix<f64>> {
        Ok(match self {
            AffineExpr::Const(m) => m.clone(),
            AffineExpr::Identity(n) => DMatrix::identity(*n, *n),
            AffineExpr::Var { name, dim } => {
                let v = a.get(name)?;
                if v.dim() != *dim {
                    return Err(Error::shape(format!(
                        "variable `{name}` is declared {dim}x{dim} but bound to a {m}x{m} value",
                        m = v.dim()
                    )));
                }
                v.as_matrix().clone()
            }
            AffineExpr::Scale(s, e) => e.eval(a)? * *s,
            AffineExpr::Neg(e) => -e.eval(a)?,
            AffineExpr::LMul(c, e) => {
                self.shape()?;
                c * e.eval(a)?
            }
            AffineExpr::RMul(e, c) => {
                self.shape()?;
                e.eval(a)? * c
            }
            AffineExpr::Sum(items) => {
                let (r, c) = self.shape()?;
                let mut acc = DMatrix::zeros(r, c);
                for e in items {
                    acc += e.eval(a)?;
                }
                acc
            }
            AffineExpr::Transpose(e) => e.eval(a)?.transpose(),
        })
    }

    /// Collects every variable with its dimension.
    pub fn collect_vars(&self, out: &mut BTreeMap<String, usize>) -> Result<()> {
        match self {
            AffineExpr::Const(_) | AffineExpr::Identity(_) => Ok(()),
            AffineExpr::Var { name, dim } => match out.get(name) {
                Some(d) if d != dim => Err(Error::shape(format!(
                    "variable `{name}` used with dimensions {d} and {dim}"
                ))),
                _ => {
                    out.insert(name.clone(), *dim);
                    Ok(())
                }
            },
            AffineExpr::Scale(_, e)
            | AffineExpr::Neg(e)
            | AffineExpr::LMul(_, e)
            | AffineExpr::RMul(e, _)
            | AffineExpr::Transpose(e) => e.collect_vars(out),
            AffineExpr::Sum(items) => items.iter().try_for_each(|e| e.collect_vars(out)),
        }
    }

    /// The transpose with the operation pushed down to the leaves; variables
    /// are symmetric, so `(X C)^T` becomes `C^T X`.
    pub fn transposed(&self) -> AffineExpr {
        match self {
            AffineExpr::Const(m) => AffineExpr::Const(m.transpose()),
            AffineExpr::Identity(_) | AffineExpr::Var { .. } => self.clone(),
            AffineExpr::Scale(s, e) => AffineExpr::Scale(*s, Box::new(e.transposed())),
            AffineExpr::Neg(e) => AffineExpr::Neg(Box::new(e.transposed())),
            AffineExpr::LMul(c, e) => AffineExpr::RMul(Box::new(e.transposed()), c.transpose()),
            AffineExpr::RMul(e, c) => AffineExpr::LMul(c.transpose(), Box::new(e.transposed())),
            AffineExpr::Sum(items) => AffineExpr::Sum(items.iter().map(|e| e.transposed()).collect()),
            AffineExpr::Transpose(e) => (**e).clone(),
        }
    }

    /// Normal form: an ordered list of constants and terms `coef * L * V * R`,
    /// with scalar factors folded into `coef` and zero pieces dropped.
    pub fn pieces(&self) -> Vec<Piece> {
        let mut out = match self {
            AffineExpr::Const(m) => vec![Piece::Const(ConstPart::Matrix(m.clone()))],
            AffineExpr::Identity(n) => vec![Piece::Const(ConstPart::Identity(*n))],
            AffineExpr::Var { name, dim } => vec![Piece::Term(Term {
                coef: 1.0,
                left: None,
                var: name.clone(),
                dim: *dim,
                right: None,
            })],
            AffineExpr::Scale(s, e) => e.pieces().into_iter().map(|p| p.scaled(*s)).collect(),
            AffineExpr::Neg(e) => e.pieces().into_iter().map(|p| p.scaled(-1.0)).collect(),
            AffineExpr::LMul(c, e) => e.pieces().into_iter().map(|p| p.left_mul(c)).collect(),
            AffineExpr::RMul(e, c) => e.pieces().into_iter().map(|p| p.right_mul(c)).collect(),
            AffineExpr::Sum(items) => items.iter().flat_map(|e| e.pieces()).collect(),
            AffineExpr::Transpose(e) => e.pieces().into_iter().map(Piece::transposed).collect(),
        };
        out.retain(|p| match p {
            Piece::Term(t) => t.coef != 0.0,
            Piece::Const(ConstPart::Matrix(m)) => m.iter().any(|&v| v != 0.0),
            Piece::Const(ConstPart::Identity(_)) => true,
        });
        out
    }

    /// Rebuilds an expression from a normal form.
    pub fn from_pieces(pieces: &[Piece]) -> AffineExpr {
        let mut items: Vec<AffineExpr> = pieces
            .iter()
            .map(|p| match p {
                Piece::Const(ConstPart::Identity(n)) => AffineExpr::Identity(*n),
                Piece::Const(ConstPart::Matrix(m)) => AffineExpr::Const(m.clone()),
                Piece::Term(t) => {
                    let mut e = AffineExpr::var(t.var.clone(), t.dim);
                    if let Some(r) = &t.right {
                        e = AffineExpr::rmul(e, r.clone());
                    }
                    if let Some(l) = &t.left {
                        e = AffineExpr::lmul(l.clone(), e);
                    }
                    if t.coef != 1.0 {
                        e = e.scale(t.coef);
                    }
                    e
                }
            })
            .collect();
        if items.len() == 1 {
            items.pop().unwrap()
        } else {
            AffineExpr::Sum(items)
        }
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        let mut items = match self {
            AffineExpr::Sum(v) => v,
            e => vec![e],
        };
        match rhs {
            AffineExpr::Sum(v) => items.extend(v),
            e => items.push(e),
        }
        AffineExpr::Sum(items)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        AffineExpr::Neg(Box::new(self))
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_pieces(&self.pieces()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstPart {
    Identity(usize),
    Matrix(DMatrix<f64>),
}

impl ConstPart {
    fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            ConstPart::Identity(n) => DMatrix::identity(*n, *n),
            ConstPart::Matrix(m) => m.clone(),
        }
    }
}

/// `coef * left * var * right`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub left: Option<DMatrix<f64>>,
    pub var: String,
    pub dim: usize,
    pub right: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Piece {
    Const(ConstPart),
    Term(Term),
}

/// `Some(s)` when `c == s * I`.
fn scalar_identity(c: &DMatrix<f64>) -> Option<f64> {
    if !c.is_square() {
        return None;
    }
    let s = c[(0, 0)];
    let n = c.nrows();
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { s } else { 0.0 };
            if c[(i, j)] != want {
                return None;
            }
        }
    }
    Some(s)
}

impl Piece {
    fn scaled(self, s: f64) -> Piece {
        match self {
            Piece::Const(ConstPart::Identity(n)) if s == 1.0 => Piece::Const(ConstPart::Identity(n)),
            Piece::Const(c) => Piece::Const(ConstPart::Matrix(c.to_matrix() * s)),
            Piece::Term(mut t) => {
                t.coef *= s;
                Piece::Term(t)
            }
        }
    }

    fn left_mul(self, c: &DMatrix<f64>) -> Piece {
        if let Some(s) = scalar_identity(c) {
            return self.scaled(s);
        }
        match self {
            Piece::Const(k) => Piece::Const(ConstPart::Matrix(c * k.to_matrix())),
            Piece::Term(mut t) => {
                t.left = Some(match t.left {
                    Some(l) => c * l,
                    None => c.clone(),
                });
                Piece::Term(t)
            }
        }
    }

    fn right_mul(self, c: &DMatrix<f64>) -> Piece {
        if let Some(s) = scalar_identity(c) {
            return self.scaled(s);
        }
        match self {
            Piece::Const(k) => Piece::Const(ConstPart::Matrix(k.to_matrix() * c)),
            Piece::Term(mut t) => {
                t.right = Some(match t.right {
                    Some(r) => r * c,
                    None => c.clone(),
                });
                Piece::Term(t)
            }
        }
    }

    fn transposed(self) -> Piece {
        match self {
            Piece::Const(ConstPart::Matrix(m)) => Piece::Const(ConstPart::Matrix(m.transpose())),
            p @ Piece::Const(ConstPart::Identity(_)) => p,
            Piece::Term(t) => Piece::Term(Term {
                coef: t.coef,
                left: t.right.map(|r| r.transpose()),
                var: t.var,
                dim: t.dim,
                right: t.left.map(|l| l.transpose()),
            }),
        }
    }

    fn approx_eq(&self, other: &Piece, tol: f64) -> bool {
        fn mat_eq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
            a.shape() == b.shape() && (a - b).amax() <= tol
        }
        fn opt_eq(a: &Option<DMatrix<f64>>, b: &Option<DMatrix<f64>>, tol: f64) -> bool {
            match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => mat_eq(a, b, tol),
                _ => false,
            }
        }
        match (self, other) {
            (Piece::Const(ConstPart::Identity(a)), Piece::Const(ConstPart::Identity(b))) => a == b,
            (Piece::Const(ConstPart::Matrix(a)), Piece::Const(ConstPart::Matrix(b))) => {
                mat_eq(a, b, tol)
            }
            (Piece::Term(a), Piece::Term(b)) => {
                a.var == b.var
                    && a.dim == b.dim
                    && (a.coef - b.coef).abs() <= tol
                    && opt_eq(&a.left, &b.left, tol)
                    && opt_eq(&a.right, &b.right, tol)
            }
            _ => false,
        }
    }
}

fn render_const(m: &DMatrix<f64>) -> (bool, String) {
    if m.nrows() == 1 && m.ncols() == 1 {
        let v = m[(0, 0)];
        return (v < 0.0, render::num(v.abs()));
    }
    if m.iter().all(|&v| v == 0.0) {
        return (false, "0".into());
    }
    if scalar_identity(m) == Some(1.0) {
        return (false, "I".into());
    }
    (false, render::matrix(m))
}

fn render_pieces(pieces: &[Piece]) -> String {
    if pieces.is_empty() {
        return "0".into();
    }
    let mut out = String::new();
    for (i, p) in pieces.iter().enumerate() {
        let (negative, body) = match p {
            Piece::Const(ConstPart::Identity(_)) => (false, "I".to_string()),
            Piece::Const(ConstPart::Matrix(m)) => render_const(m),
            Piece::Term(t) => {
                let mut body = String::new();
                let mag = t.coef.abs();
                if mag != 1.0 {
                    body.push_str(&render::num(mag));
                    body.push('·');
                }
                if let Some(l) = &t.left {
                    body.push_str(&render::matrix(l));
                    body.push('·');
                }
                body.push_str(&t.var);
                if let Some(r) = &t.right {
                    body.push('·');
                    body.push_str(&render::matrix(r));
                }
                (t.coef < 0.0, body)
            }
        };
        match (i, negative) {
            (_, true) => out.push('−'),
            (0, false) => {}
            (_, false) => out.push('+'),
        }
        out.push_str(&body);
    }
    out
}

/// Values bound to named matrix variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Assignment {
    values: BTreeMap<String, SymmetricMatrix>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: SymmetricMatrix) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: SymmetricMatrix) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&SymmetricMatrix> {
        self.values
            .get(name)
            .ok_or_else(|| Error::UnboundVariable(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SymmetricMatrix)> {
        self.values.iter()
    }

    /// `lambda * self + (1 - lambda) * other`, over the variables of `self`.
    pub fn convex_combination(&self, other: &Assignment, lambda: f64) -> Result<Assignment> {
        let mut out = Assignment::new();
        for (name, a) in &self.values {
            let b = other.get(name)?;
            if a.dim() != b.dim() {
                return Err(Error::shape(format!("`{name}` has different dimensions")));
            }
            out.insert(name.clone(), &(a * lambda) + &(b * (1.0 - lambda)));
        }
        Ok(out)
    }
}

/// A block-symmetric LMI `[[B_ij]] >= 0`.
///
/// Only the upper triangle is stored; block `(j, i)` is the transpose of
/// block `(i, j)`.
#[derive(Clone, Debug)]
pub struct LmiConstraint {
    name: String,
    sizes: Vec<usize>,
    upper: Vec<Vec<AffineExpr>>,
    vars: BTreeMap<String, usize>,
}

impl LmiConstraint {
    /// `upper[i]` lists blocks `(i, i), (i, i + 1), ...`; `None` off the
    /// diagonal is a zero block.
    pub fn new(name: impl Into<String>, upper: Vec<Vec<Option<AffineExpr>>>) -> Result<Self> {
        let name = name.into();
        let r = upper.len();
        if r == 0 {
            return Err(Error::shape(format!("LMI `{name}` has no blocks")));
        }
        let mut sizes = Vec::with_capacity(r);
        for (i, row) in upper.iter().enumerate() {
            if row.len() != r - i {
                return Err(Error::shape(format!(
                    "LMI `{name}`: row {i} must list {} upper-triangular blocks, got {}",
                    r - i,
                    row.len()
                )));
            }
            let diag = row[0].as_ref().ok_or_else(|| {
                Error::shape(format!("LMI `{name}`: diagonal block ({i},{i}) is missing"))
            })?;
            let (a, b) = diag.shape()?;
            if a != b {
                return Err(Error::shape(format!(
                    "LMI `{name}`: diagonal block ({i},{i}) is {a}x{b}"
                )));
            }
            sizes.push(a);
        }
        let mut blocks = Vec::with_capacity(r);
        let mut vars = BTreeMap::new();
        for (i, row) in upper.into_iter().enumerate() {
            let mut out_row = Vec::with_capacity(row.len());
            for (off, b) in row.into_iter().enumerate() {
                let j = i + off;
                let b = b.unwrap_or_else(|| AffineExpr::zeros(sizes[i], sizes[j]));
                let shape = b.shape()?;
                if shape != (sizes[i], sizes[j]) {
                    return Err(Error::shape(format!(
                        "LMI `{name}`: block ({i},{j}) is {}x{} but must be {}x{}",
                        shape.0, shape.1, sizes[i], sizes[j]
                    )));
                }
                b.collect_vars(&mut vars)?;
                out_row.push(b);
            }
            blocks.push(out_row);
        }
        Ok(Self {
            name,
            sizes,
            upper: blocks,
            vars,
        })
    }

    /// A single-block LMI `e >= 0`.
    pub fn single(name: impl Into<String>, e: AffineExpr) -> Result<Self> {
        Self::new(name, vec![vec![Some(e)]])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn variables(&self) -> &BTreeMap<String, usize> {
        &self.vars
    }

    /// Block `(i, j)`; below the diagonal this is derived by transposition.
    pub fn block(&self, i: usize, j: usize) -> AffineExpr {
        if j >= i {
            self.upper[i][j - i].clone()
        } else {
            self.upper[j][i - j].transposed()
        }
    }

    pub fn assemble(&self, a: &Assignment) -> Result<SymmetricMatrix> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut row0 = 0;
        for (i, row) in self.upper.iter().enumerate() {
            let mut col0 = row0;
            for (off, b) in row.iter().enumerate() {
                let j = i + off;
                let v = b.eval(a)?;
                m.view_mut((row0, col0), (self.sizes[i], self.sizes[j])).copy_from(&v);
                if j != i {
                    m.view_mut((col0, row0), (self.sizes[j], self.sizes[i]))
                        .copy_from(&v.transpose());
                }
                col0 += self.sizes[j];
            }
            row0 += self.sizes[i];
        }
        SymmetricMatrix::new(m)
    }

    /// Minimum eigenvalue of the assembled matrix.
    pub fn feasibility_margin(&self, a: &Assignment) -> Result<f64> {
        Ok(sym_eig(&self.assemble(a)?)?.min())
    }

    /// Upper-triangle normal forms, row by row.
    pub fn normal_form(&self) -> Vec<Vec<Vec<Piece>>> {
        self.upper
            .iter()
            .map(|row| row.iter().map(|b| b.pieces()).collect())
            .collect()
    }

    /// Same block layout, same terms, constants equal within `tol`.
    pub fn structurally_eq(&self, other: &LmiConstraint, tol: f64) -> bool {
        self.sizes == other.sizes
            && self
                .normal_form()
                .iter()
                .flatten()
                .zip(other.normal_form().iter().flatten())
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.approx_eq(q, tol)))
    }

    pub fn to_spec(&self) -> ConstraintSpec {
        ConstraintSpec {
            name: Some(self.name.clone()),
            blocks: self
                .normal_form()
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|pieces| {
                            if pieces.is_empty() {
                                None
                            } else {
                                Some(pieces.iter().map(PieceSpec::from_piece).collect())
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl fmt::Display for LmiConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.sizes.len();
        let rows: Vec<String> = (0..r)
            .map(|i| {
                let cells: Vec<String> = (0..r).map(|j| self.block(i, j).to_string()).collect();
                format!("[{}]", cells.join(", "))
            })
            .collect();
        write!(f, "[{}] ⪰ 0", rows.join(","))
    }
}

/// Serialized constant: `{"identity": n}` or a row-major literal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstSpec {
    Identity { identity: usize },
    Matrix(Vec<Vec<f64>>),
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// One summand of a serialized block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PieceSpec {
    Const {
        #[serde(rename = "const")]
        constant: ConstSpec,
    },
    Term {
        var: String,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        coef: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        left: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        right: Option<Vec<Vec<f64>>>,
    },
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl PieceSpec {
    fn from_piece(p: &Piece) -> Self {
        match p {
            Piece::Const(ConstPart::Identity(n)) => PieceSpec::Const {
                constant: ConstSpec::Identity { identity: *n },
            },
            Piece::Const(ConstPart::Matrix(m)) => PieceSpec::Const {
                constant: ConstSpec::Matrix(matrix_rows(m)),
            },
            Piece::Term(t) => PieceSpec::Term {
                var: t.var.clone(),
                coef: t.coef,
                left: t.left.as_ref().map(matrix_rows),
                right: t.right.as_ref().map(matrix_rows),
            },
        }
    }

    fn to_piece(&self, dims: &BTreeMap<String, usize>) -> Result<Piece> {
        Ok(match self {
            PieceSpec::Const {
                constant: ConstSpec::Identity { identity },
            } => {
                if *identity == 0 {
                    return Err(Error::Parse("identity block must have size >= 1".into()));
                }
                Piece::Const(ConstPart::Identity(*identity))
            }
            PieceSpec::Const {
                constant: ConstSpec::Matrix(rows),
            } => Piece::Const(ConstPart::Matrix(rows_to_matrix(rows)?)),
            PieceSpec::Term {
                var,
                coef,
                left,
                right,
            } => {
                let dim = *dims.get(var).ok_or_else(|| {
                    Error::InvalidProblem(format!("constraint references undeclared variable `{var}`"))
                })?;
                Piece::Term(Term {
                    coef: *coef,
                    left: left.as_deref().map(rows_to_matrix).transpose()?,
                    var: var.clone(),
                    dim,
                    right: right.as_deref().map(rows_to_matrix).transpose()?,
                })
            }
        })
    }
}

/// Serialized LMI: upper-triangular rows of blocks, `null` for zero blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub blocks: Vec<Vec<Option<Vec<PieceSpec>>>>,
}

impl ConstraintSpec {
    /// Builds the constraint, resolving variable dimensions from `dims`.
    pub fn to_constraint(&self, dims: &BTreeMap<String, usize>) -> Result<LmiConstraint> {
        let mut upper = Vec::with_capacity(self.blocks.len());
        for row in &self.blocks {
            let mut out = Vec::with_capacity(row.len());
            for block in row {
                out.push(match block {
                    None => None,
                    Some(ps) if ps.is_empty() => None,
                    Some(ps) => {
                        let pieces = ps.iter().map(|p| p.to_piece(dims)).collect::<Result<Vec<_>>>()?;
                        Some(AffineExpr::from_pieces(&pieces))
                    }
                });
            }
            upper.push(out);
        }
        LmiConstraint::new(self.name.clone().unwrap_or_else(|| "H".into()), upper)
    }
}

/// A slack-variable program `min -log det Z s.t. constraint >= 0`.
#[derive(Clone, Debug)]
pub struct Lifting {
    pub kind: Kind,
    pub objective_var: String,
    pub constraint: LmiConstraint,
    pub k_sqrt: SymmetricMatrix,
}

/// Lifting of `f` with `X` as a free variable.
pub fn lift_f(k: &SymmetricMatrix) -> Result<Lifting> {
    lift(Kind::F, k)
}

/// Lifting of `g` with `X` as a free variable.
pub fn lift_g(k: &SymmetricMatrix) -> Result<Lifting> {
    lift(Kind::G, k)
}

pub fn lift(kind: Kind, k: &SymmetricMatrix) -> Result<Lifting> {
    let obj = LogDetObjective::new(kind, k.clone())?;
    let n = obj.dim();
    lift_objective(&obj, AffineExpr::var(X_VAR, n))
}

/// Lifting with an arbitrary `n x n` expression in the role of `X`, e.g. a
/// constant when `X` is frozen.
pub fn lift_objective(obj: &LogDetObjective, x: AffineExpr) -> Result<Lifting> {
    let n = obj.dim();
    if x.shape()? != (n, n) {
        return Err(Error::shape(format!("X expression must be {n}x{n}")));
    }
    let s = obj.k_sqrt().as_matrix().clone();
    let z = AffineExpr::var(OBJECTIVE_VAR, n);
    let upper = match obj.kind() {
        Kind::F => vec![
            vec![
                Some(AffineExpr::identity(n) - z),
                Some(AffineExpr::constant(s)),
            ],
            vec![Some(x + AffineExpr::sym(obj.k()))],
        ],
        Kind::G => vec![
            vec![
                Some(x.clone() - z),
                Some(AffineExpr::rmul(x.clone(), s.clone())),
            ],
            vec![Some(
                AffineExpr::identity(n) + AffineExpr::lmul(s.clone(), AffineExpr::rmul(x, s)),
            )],
        ],
    };
    let name = match obj.kind() {
        Kind::F => "lift_f",
        Kind::G => "lift_g",
    };
    Ok(Lifting {
        kind: obj.kind(),
        objective_var: OBJECTIVE_VAR.to_string(),
        constraint: LmiConstraint::new(name, upper)?,
        k_sqrt: obj.k_sqrt().clone(),
    })
}
