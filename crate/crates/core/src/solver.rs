//! Barrier path-following solver for determinant maximization over LMIs.
//!
//! A [`MaxDetProblem`] minimizes `-log det Z` for one designated variable
//! `Z` subject to block LMIs and strict positivity of selected variables.
//! Symmetric variables are flattened to their upper triangle (or their
//! diagonal under [`Structure::Diagonal`]); every constraint then becomes an
//! affine map `F(x) = F0 + sum_k x_k F_k` of the flat coordinates, and the
//! centering problems
//!
//! ```text
//! minimize  t * (-log det Z(x)) - sum_i log det F_i(x) - sum_v log det V(x)
//! ```
//!
//! are solved by damped Newton with explicit Hessian assembly. `t` grows by
//! `barrier_mu` until `m / t < duality_gap_tol`, where `m` is the total
//! barrier dimension.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymmetricMatrix};
use crate::lmi::{lift_objective, AffineExpr, Assignment, LmiConstraint, OBJECTIVE_VAR, X_VAR};
use crate::objective::{Kind, LogDetObjective};

const ARMIJO_ALPHA: f64 = 0.25;
const ARMIJO_BETA: f64 = 0.5;
/// Below this Newton decrement the full step is taken without a sufficient
/// decrease test (quadratic convergence region of self-concordant functions).
const PURE_NEWTON_DECREMENT: f64 = 0.25;
const MIN_STEP: f64 = 1e-14;
const DIVERGENCE_BOUND: f64 = 1e6;
const NONUNIQUE_CURVATURE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Structure {
    #[default]
    Full,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub dim: usize,
    pub structure: Structure,
}

impl VarDecl {
    pub fn full(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            structure: Structure::Full,
        }
    }

    pub fn diagonal(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            structure: Structure::Diagonal,
        }
    }

    fn n_coords(&self) -> usize {
        match self.structure {
            Structure::Full => self.dim * (self.dim + 1) / 2,
            Structure::Diagonal => self.dim,
        }
    }
}

/// `minimize -log det(objective_var)` subject to `lmis >= 0` and `pd_vars > 0`.
#[derive(Clone, Debug)]
pub struct MaxDetProblem {
    pub variables: Vec<VarDecl>,
    pub objective_var: String,
    pub lmis: Vec<LmiConstraint>,
    pub pd_vars: Vec<String>,
    /// Optional starting point; used when strictly feasible, otherwise phase 1
    /// starts from it.
    pub warm_start: Option<Assignment>,
}

impl MaxDetProblem {
    pub fn new(
        variables: Vec<VarDecl>,
        objective_var: impl Into<String>,
        lmis: Vec<LmiConstraint>,
    ) -> Result<Self> {
        let objective_var = objective_var.into();
        let p = Self {
            pd_vars: vec![objective_var.clone()],
            variables,
            objective_var,
            lmis,
            warm_start: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_pd_var(mut self, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if !self.pd_vars.contains(&name) {
            self.pd_vars.push(name);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_warm_start(mut self, start: Assignment) -> Self {
        self.warm_start = Some(start);
        self
    }

    fn decl(&self, name: &str) -> Option<&VarDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for v in &self.variables {
            if v.dim == 0 {
                return Err(Error::InvalidProblem(format!("variable `{}` has dimension 0", v.name)));
            }
            if seen.insert(v.name.as_str(), v.dim).is_some() {
                return Err(Error::InvalidProblem(format!("variable `{}` declared twice", v.name)));
            }
        }
        if self.decl(&self.objective_var).is_none() {
            return Err(Error::InvalidProblem(format!(
                "objective variable `{}` is not declared",
                self.objective_var
            )));
        }
        if !self.pd_vars.contains(&self.objective_var) {
            return Err(Error::InvalidProblem("objective variable must be required PD".into()));
        }
        for name in &self.pd_vars {
            if self.decl(name).is_none() {
                return Err(Error::InvalidProblem(format!("PD variable `{name}` is not declared")));
            }
        }
        for lmi in &self.lmis {
            for (name, dim) in lmi.variables() {
                match seen.get(name.as_str()) {
                    None => {
                        return Err(Error::InvalidProblem(format!(
                            "LMI `{}` uses undeclared variable `{name}`",
                            lmi.name()
                        )))
                    }
                    Some(d) if d != dim => {
                        return Err(Error::InvalidProblem(format!(
                            "LMI `{}` uses `{name}` as {dim}x{dim}, declared {d}x{d}",
                            lmi.name()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub barrier_t0: f64,
    pub barrier_mu: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub duality_gap_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Phase 1 must reach margin `feasibility_shift` to count as strictly feasible.
    pub feasibility_shift: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            barrier_t0: 1.0,
            barrier_mu: 10.0,
            newton_tol: 1e-9,
            duality_gap_tol: 1e-7,
            max_outer: 60,
            max_newton: 50,
            feasibility_shift: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("barrier_t0", self.barrier_t0),
            ("newton_tol", self.newton_tol),
            ("duality_gap_tol", self.duality_gap_tol),
            ("feasibility_shift", self.feasibility_shift),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidProblem(format!("solver option {name} must be positive")));
            }
        }
        if !(self.barrier_mu > 1.0 && self.barrier_mu.is_finite()) {
            return Err(Error::InvalidProblem("solver option barrier_mu must exceed 1".into()));
        }
        if self.max_outer == 0 || self.max_newton == 0 {
            return Err(Error::InvalidProblem("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "OPTIMAL",
            Status::MaxIter => "MAX_ITER",
            Status::Infeasible => "INFEASIBLE",
        })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub final_t: f64,
    /// `m / t` at termination.
    pub gap_bound: f64,
    pub barrier_dim: usize,
    /// `-log det Z` after each completed centering.
    pub outer_objectives: Vec<f64>,
    /// Final phase-1 value of `s` when phase 1 ran.
    pub phase1_s: Option<f64>,
    pub warm_started: bool,
    pub max_abs_coordinate: f64,
    /// Iterate coordinates exceeded `1e6` in magnitude.
    pub diverging: bool,
    /// Smallest curvature of the objective in `X` at the solution
    /// (constrained `f`/`g` problems only).
    pub x_min_curvature: Option<f64>,
    /// Set when `x_min_curvature < 1e-8`: the optimal `X` may not be unique.
    pub nonunique_x: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Solution {
    pub assignment: Assignment,
    /// `-log det Z`; `+inf` when infeasible.
    pub objective: f64,
    /// Minimum eigenvalue of each LMI at the returned point.
    pub margins: Vec<(String, f64)>,
    pub status: Status,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Main,
}

/// One Newton step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceRecord {
    pub phase: Phase,
    pub outer: usize,
    pub newton: usize,
    pub t: f64,
    /// `-log det Z` in the main phase, the shift `s` in phase 1.
    pub objective: f64,
    /// Newton decrement `lambda`.
    pub decrement: f64,
    pub min_margin: f64,
    pub step: f64,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::fmt::num;
        let phase = match self.phase {
            Phase::Phase1 => "phase1",
            Phase::Main => "main",
        };
        write!(
            f,
            "{phase} outer={} newton={} t={} objective={} decrement={} min_margin={} step={}",
            self.outer,
            self.newton,
            num(self.t),
            num(self.objective),
            num(self.decrement),
            num(self.min_margin),
            num(self.step)
        )
    }
}

pub type TraceSink<'a> = &'a mut dyn FnMut(&TraceRecord);

// ---------------------------------------------------------------------------
// Flattened representation

#[derive(Clone, Debug)]
struct Layout {
    vars: Vec<(VarDecl, usize)>,
    total: usize,
}

impl Layout {
    fn new(vars: &[VarDecl]) -> Self {
        let mut offset = 0;
        let vars = vars
            .iter()
            .map(|v| {
                let at = offset;
                offset += v.n_coords();
                (v.clone(), at)
            })
            .collect();
        Self { vars, total: offset }
    }

    /// `(coordinate, i, j)` with `i <= j` for every free entry of `var`.
    fn entries(&self, idx: usize) -> Vec<(usize, usize, usize)> {
        let (decl, offset) = &self.vars[idx];
        let n = decl.dim;
        match decl.structure {
            Structure::Full => {
                let mut out = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in i..n {
                        out.push((offset + out.len(), i, j));
                    }
                }
                out
            }
            Structure::Diagonal => (0..n).map(|i| (offset + i, i, i)).collect(),
        }
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|(d, _)| d.name == name)
    }

    fn to_assignment(&self, x: &DVector<f64>) -> Assignment {
        let mut a = Assignment::new();
        for (idx, (decl, _)) in self.vars.iter().enumerate() {
            let mut m = DMatrix::zeros(decl.dim, decl.dim);
            for (k, i, j) in self.entries(idx) {
                m[(i, j)] = x[k];
                m[(j, i)] = x[k];
            }
            a.insert(decl.name.clone(), SymmetricMatrix::symmetrized(m));
        }
        a
    }

    /// Coordinates of `a`; unbound variables start at the identity.
    fn flatten(&self, a: Option<&Assignment>) -> DVector<f64> {
        let mut x = DVector::zeros(self.total);
        for (idx, (decl, _)) in self.vars.iter().enumerate() {
            let value = a
                .and_then(|a| a.get(&decl.name).ok())
                .filter(|v| v.dim() == decl.dim);
            for (k, i, j) in self.entries(idx) {
                x[k] = match value {
                    Some(v) => v.get(i, j),
                    None if i == j => 1.0,
                    None => 0.0,
                };
            }
        }
        x
    }
}

/// `F(x) = constant + sum_k x_k * coeffs[k]`, only nonzero coefficients stored.
#[derive(Clone, Debug)]
struct AffineMap {
    constant: DMatrix<f64>,
    coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl AffineMap {
    fn size(&self) -> usize {
        self.constant.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, a) in &self.coeffs {
            m += a * x[*k];
        }
        m
    }

    fn from_lmi(lmi: &LmiConstraint, layout: &Layout) -> Result<Self> {
        let zero = layout.to_assignment(&DVector::zeros(layout.total));
        let constant = lmi.assemble(&zero)?.into_matrix();
        let mut coeffs = Vec::new();
        for (idx, (decl, _)) in layout.vars.iter().enumerate() {
            if !lmi.variables().contains_key(&decl.name) {
                continue;
            }
            for (k, i, j) in layout.entries(idx) {
                let mut e = DMatrix::zeros(decl.dim, decl.dim);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                let mut a = zero.clone();
                a.insert(decl.name.clone(), SymmetricMatrix::symmetrized(e));
                let coeff = lmi.assemble(&a)?.into_matrix() - &constant;
                if coeff.iter().any(|&v| v != 0.0) {
                    coeffs.push((k, coeff));
                }
            }
        }
        Ok(Self { constant, coeffs })
    }

    fn from_var(layout: &Layout, idx: usize) -> Self {
        let n = layout.vars[idx].0.dim;
        let coeffs = layout
            .entries(idx)
            .into_iter()
            .map(|(k, i, j)| {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                (k, e)
            })
            .collect();
        Self {
            constant: DMatrix::zeros(n, n),
            coeffs,
        }
    }

    /// Adds `s * I` with `s` at coordinate `k`.
    fn with_shift(mut self, k: usize) -> Self {
        let n = self.size();
        self.coeffs.push((k, DMatrix::identity(n, n)));
        self
    }
}

#[derive(Clone, Copy, Debug)]
enum Goal {
    /// `t * (-log det F(x))` for the map at this index.
    LogDet(usize),
    /// `t * x_k`.
    Linear(usize),
}

/// Barrier problem over flat coordinates.
struct Barrier {
    maps: Vec<AffineMap>,
    goal: Goal,
    dim: usize,
}

struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn neg_logdet(m: &DMatrix<f64>) -> Option<(f64, Cholesky<f64, nalgebra::Dyn>)> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let s: f64 = (0..m.nrows()).map(|i| l[(i, i)].ln()).sum();
    s.is_finite().then_some((-2.0 * s, chol))
}

impl Barrier {
    fn barrier_dim(&self) -> usize {
        self.maps.iter().map(|m| m.size()).sum()
    }

    fn weight(&self, i: usize, t: f64) -> f64 {
        match self.goal {
            Goal::LogDet(g) if g == i => 1.0 + t,
            _ => 1.0,
        }
    }

    fn goal_value(&self, x: &DVector<f64>) -> f64 {
        match self.goal {
            Goal::LogDet(g) => neg_logdet(&self.maps[g].eval(x)).map_or(f64::INFINITY, |v| v.0),
            Goal::Linear(k) => x[k],
        }
    }

    /// Barrier value, `None` outside the domain.
    fn value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut total = match self.goal {
            Goal::Linear(k) => t * x[k],
            Goal::LogDet(_) => 0.0,
        };
        for (i, map) in self.maps.iter().enumerate() {
            total += self.weight(i, t) * neg_logdet(&map.eval(x))?.0;
        }
        total.is_finite().then_some(total)
    }

    fn local(&self, x: &DVector<f64>, t: f64) -> Option<Local> {
        let mut value = 0.0;
        let mut grad = DVector::zeros(self.dim);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        if let Goal::Linear(k) = self.goal {
            value += t * x[k];
            grad[k] += t;
        }
        for (i, map) in self.maps.iter().enumerate() {
            let w = self.weight(i, t);
            let (v, chol) = neg_logdet(&map.eval(x))?;
            value += w * v;
            let solved: Vec<(usize, DMatrix<f64>)> = map
                .coeffs
                .iter()
                .map(|(k, a)| (*k, chol.solve(a)))
                .collect();
            for (a, (k, wk)) in solved.iter().enumerate() {
                grad[*k] -= w * wk.trace();
                for (l, wl) in &solved[a..] {
                    // tr(W_k W_l) = sum_ij W_k[i,j] W_l[j,i]
                    let h = w * wk.dot(&wl.transpose());
                    hess[(*k, *l)] += h;
                    if k != l {
                        hess[(*l, *k)] += h;
                    }
                }
            }
        }
        value.is_finite().then_some(Local { value, grad, hess })
    }

    fn min_margin(&self, x: &DVector<f64>, skip_shift: Option<usize>) -> f64 {
        self.maps
            .iter()
            .map(|m| {
                let mut m = m.clone();
                if let Some(k) = skip_shift {
                    m.coeffs.retain(|(c, _)| *c != k);
                }
                min_eig(&m.eval(x))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricMatrix::new(m.clone())
        .and_then(|s| sym_eig(&s))
        .map(|e| e.min())
        .unwrap_or(f64::NAN)
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let rhs = -grad;
    if let Some(ch) = Cholesky::new(hess.clone()) {
        return Some(ch.solve(&rhs));
    }
    let scale = hess.diagonal().amax().max(1.0);
    let mut reg = hess.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-12 * scale;
    }
    if let Some(ch) = Cholesky::new(reg) {
        return Some(ch.solve(&rhs));
    }
    hess.clone().lu().solve(&rhs)
}

struct Counters {
    newton_steps: usize,
}

enum CenterExit {
    Converged,
    /// Line search or factorization failed; usually round-off near the optimum.
    Stalled,
    /// `max_newton` steps without converging.
    IterationCap,
    /// Stop criterion met mid-centering (phase 1 only).
    Early,
}

/// Damped Newton on the barrier at fixed `t`.
#[allow(clippy::too_many_arguments)]
fn center(
    barrier: &Barrier,
    x: &mut DVector<f64>,
    t: f64,
    opts: &SolverOptions,
    phase: Phase,
    outer: usize,
    counters: &mut Counters,
    early_exit: &dyn Fn(&DVector<f64>) -> bool,
    trace: &mut Option<TraceSink<'_>>,
) -> CenterExit {
    let shift = match barrier.goal {
        Goal::Linear(k) => Some(k),
        Goal::LogDet(_) => None,
    };
    for newton in 0..opts.max_newton {
        let Some(local) = barrier.local(x, t) else {
            return CenterExit::Stalled;
        };
        let Some(dx) = newton_direction(&local.hess, &local.grad) else {
            return CenterExit::Stalled;
        };
        let slope = local.grad.dot(&dx);
        let lambda_sq = (-slope).max(0.0);
        let lambda = lambda_sq.sqrt();
        if lambda_sq / 2.0 <= opts.newton_tol {
            return CenterExit::Converged;
        }

        let mut step = 1.0;
        loop {
            let cand = &*x + &dx * step;
            match barrier.value(&cand, t) {
                Some(_) if lambda < PURE_NEWTON_DECREMENT => break,
                Some(v) if v <= local.value + ARMIJO_ALPHA * step * slope => break,
                _ => {}
            }
            step *= ARMIJO_BETA;
            if step < MIN_STEP {
                return CenterExit::Stalled;
            }
        }
        *x += &dx * step;
        counters.newton_steps += 1;
        emit(trace, barrier, x, t, phase, outer, newton + 1, lambda, step, shift);
        if early_exit(x) {
            return CenterExit::Early;
        }
    }
    CenterExit::IterationCap
}

#[allow(clippy::too_many_arguments)]
fn emit(
    trace: &mut Option<TraceSink<'_>>,
    barrier: &Barrier,
    x: &DVector<f64>,
    t: f64,
    phase: Phase,
    outer: usize,
    newton: usize,
    decrement: f64,
    step: f64,
    shift: Option<usize>,
) {
    if let Some(sink) = trace.as_mut() {
        sink(&TraceRecord {
            phase,
            outer,
            newton,
            t,
            objective: barrier.goal_value(x),
            decrement,
            min_margin: barrier.min_margin(x, shift),
            step,
        });
    }
}

/// A problem reduced to flat coordinates.
struct Compiled {
    layout: Layout,
    lmi_maps: Vec<AffineMap>,
    pd_maps: Vec<AffineMap>,
    /// Index into `pd_maps` of the objective variable.
    objective: Option<usize>,
}

impl Compiled {
    fn new(
        vars: &[VarDecl],
        lmis: &[LmiConstraint],
        pd_vars: &[String],
        objective_var: Option<&str>,
    ) -> Result<Self> {
        let layout = Layout::new(vars);
        let lmi_maps = lmis
            .iter()
            .map(|l| AffineMap::from_lmi(l, &layout))
            .collect::<Result<Vec<_>>>()?;
        let pd_maps = pd_vars
            .iter()
            .map(|name| {
                let idx = layout
                    .index(name)
                    .ok_or_else(|| Error::InvalidProblem(format!("unknown PD variable `{name}`")))?;
                Ok(AffineMap::from_var(&layout, idx))
            })
            .collect::<Result<Vec<_>>>()?;
        let objective = objective_var.and_then(|o| pd_vars.iter().position(|p| p == o));
        Ok(Self {
            layout,
            lmi_maps,
            pd_maps,
            objective,
        })
    }

    fn all_maps(&self) -> impl Iterator<Item = &AffineMap> {
        self.lmi_maps.iter().chain(self.pd_maps.iter())
    }

    fn min_margin(&self, x: &DVector<f64>) -> f64 {
        self.all_maps()
            .map(|m| min_eig(&m.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    fn main_barrier(&self) -> Barrier {
        let maps: Vec<AffineMap> = self.all_maps().cloned().collect();
        let goal = Goal::LogDet(self.lmi_maps.len() + self.objective.expect("objective variable"));
        Barrier {
            maps,
            goal,
            dim: self.layout.total,
        }
    }

    fn phase1(
        &self,
        start: DVector<f64>,
        opts: &SolverOptions,
        counters: &mut Counters,
        trace: &mut Option<TraceSink<'_>>,
    ) -> Phase1Result {
        let delta = opts.feasibility_shift;
        let margin = self.min_margin(&start);
        if margin > delta {
            return Phase1Result::Feasible { x: start, s: -margin };
        }
        let s_at = self.layout.total;
        let barrier = Barrier {
            maps: self.all_maps().cloned().map(|m| m.with_shift(s_at)).collect(),
            goal: Goal::Linear(s_at),
            dim: s_at + 1,
        };
        let m = barrier.barrier_dim() as f64;
        let mut x = start.clone().insert_row(s_at, 0.0);
        x[s_at] = if margin.is_finite() { 1.0 - margin } else { 1.0 };
        let mut t = opts.barrier_t0;
        let strictly = |x: &DVector<f64>| x[x.len() - 1] < -delta;
        let deep = |x: &DVector<f64>| x[x.len() - 1] < -1.0;
        for outer in 0..opts.max_outer {
            let exit = center(&barrier, &mut x, t, opts, Phase::Phase1, outer, counters, &deep, trace);
            let s = x[s_at];
            if matches!(exit, CenterExit::Early) || strictly(&x) {
                return Phase1Result::Feasible {
                    x: x.rows(0, s_at).into_owned(),
                    s,
                };
            }
            if s - m / t >= -delta {
                return Phase1Result::Infeasible {
                    x: x.rows(0, s_at).into_owned(),
                    s,
                };
            }
            t *= opts.barrier_mu;
        }
        Phase1Result::Infeasible {
            s: x[s_at],
            x: x.rows(0, s_at).into_owned(),
        }
    }
}

enum Phase1Result {
    Feasible { x: DVector<f64>, s: f64 },
    Infeasible { x: DVector<f64>, s: f64 },
}

/// Outcome of the feasibility search.
#[derive(Clone, Debug)]
pub enum Phase1Outcome {
    /// Strictly feasible point; `s` is minus its smallest margin over all
    /// LMIs and PD variables.
    Feasible { assignment: Assignment, s: f64 },
    /// `s` could not be driven below `-feasibility_shift`.
    Infeasible { assignment: Assignment, s: f64 },
}

/// Finds a point where every LMI and PD variable has margin above
/// `feasibility_shift` by minimizing `s` subject to `LMI_i + s I >= 0`.
pub fn phase1(p: &MaxDetProblem, opts: &SolverOptions) -> Result<Phase1Outcome> {
    p.validate()?;
    opts.validate()?;
    let c = Compiled::new(&p.variables, &p.lmis, &p.pd_vars, Some(&p.objective_var))?;
    let start = c.layout.flatten(p.warm_start.as_ref());
    let mut counters = Counters { newton_steps: 0 };
    Ok(match c.phase1(start, opts, &mut counters, &mut None) {
        Phase1Result::Feasible { x, s } => Phase1Outcome::Feasible {
            assignment: c.layout.to_assignment(&x),
            s,
        },
        Phase1Result::Infeasible { x, s } => Phase1Outcome::Infeasible {
            assignment: c.layout.to_assignment(&x),
            s,
        },
    })
}

pub fn solve(p: &MaxDetProblem, opts: &SolverOptions) -> Result<Solution> {
    solve_traced(p, opts, None)
}

/// [`solve`] with one [`TraceRecord`] per Newton step sent to `trace`.
pub fn solve_traced(
    p: &MaxDetProblem,
    opts: &SolverOptions,
    mut trace: Option<TraceSink<'_>>,
) -> Result<Solution> {
    p.validate()?;
    opts.validate()?;
    let c = Compiled::new(&p.variables, &p.lmis, &p.pd_vars, Some(&p.objective_var))?;
    let mut counters = Counters { newton_steps: 0 };
    let mut diagnostics = Diagnostics::default();

    let start = c.layout.flatten(p.warm_start.as_ref());
    let mut x = if p.warm_start.is_some() && c.min_margin(&start) > 0.0 {
        diagnostics.warm_started = true;
        start
    } else {
        match c.phase1(start, opts, &mut counters, &mut trace) {
            Phase1Result::Feasible { x, s } => {
                diagnostics.phase1_s = Some(s);
                x
            }
            Phase1Result::Infeasible { x, s } => {
                diagnostics.phase1_s = Some(s);
                diagnostics.max_abs_coordinate = x.amax();
                diagnostics.diverging = diagnostics.max_abs_coordinate > DIVERGENCE_BOUND;
                let assignment = c.layout.to_assignment(&x);
                return Ok(Solution {
                    margins: margins(&p.lmis, &assignment)?,
                    assignment,
                    objective: f64::INFINITY,
                    status: Status::Infeasible,
                    outer_iterations: 0,
                    newton_steps: counters.newton_steps,
                    diagnostics,
                });
            }
        }
    };

    let barrier = c.main_barrier();
    let m = barrier.barrier_dim() as f64;
    diagnostics.barrier_dim = barrier.barrier_dim();
    let mut t = opts.barrier_t0;
    let mut status = Status::MaxIter;
    let mut outer = 0;
    while outer < opts.max_outer {
        let exit = center(&barrier, &mut x, t, opts, Phase::Main, outer, &mut counters, &|_| false, &mut trace);
        outer += 1;
        diagnostics.outer_objectives.push(barrier.goal_value(&x));
        if m / t < opts.duality_gap_tol {
            // The gap bound only holds at a centered point; an unbounded
            // objective never centers.
            if !matches!(exit, CenterExit::IterationCap) {
                status = Status::Optimal;
            }
            break;
        }
        t *= opts.barrier_mu;
    }
    diagnostics.final_t = t;
    diagnostics.gap_bound = m / t;
    debug_assert!(status != Status::Optimal || diagnostics.gap_bound < opts.duality_gap_tol);
    diagnostics.max_abs_coordinate = x.amax();
    diagnostics.diverging = diagnostics.max_abs_coordinate > DIVERGENCE_BOUND;

    let assignment = c.layout.to_assignment(&x);
    let objective = barrier.goal_value(&x);
    Ok(Solution {
        margins: margins(&p.lmis, &assignment)?,
        assignment,
        objective,
        status,
        outer_iterations: outer,
        newton_steps: counters.newton_steps,
        diagnostics,
    })
}

fn margins(lmis: &[LmiConstraint], a: &Assignment) -> Result<Vec<(String, f64)>> {
    lmis.iter()
        .map(|l| Ok((l.name().to_string(), l.feasibility_margin(a)?)))
        .collect()
}

/// `Z*(X) - (lambda_min(Z*(X)) / 2) I`, strictly feasible for the lifting at `X`.
fn analytic_slack_start(obj: &LogDetObjective, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let z = obj.z_star(x)?;
    let shift = sym_eig(&z)?.min() / 2.0;
    Ok(&z - &(&SymmetricMatrix::identity(z.dim()) * shift))
}

/// Solves the lifted program of `f` or `g` with `X` frozen at a constant.
pub fn solve_lifted(
    kind: Kind,
    k: &SymmetricMatrix,
    x: &SymmetricMatrix,
    opts: &SolverOptions,
) -> Result<Solution> {
    let obj = LogDetObjective::new(kind, k.clone())?;
    solve_lifted_objective(&obj, x, opts, None)
}

pub fn solve_lifted_objective(
    obj: &LogDetObjective,
    x: &SymmetricMatrix,
    opts: &SolverOptions,
    trace: Option<TraceSink<'_>>,
) -> Result<Solution> {
    obj.eval(x)?;
    let n = obj.dim();
    let lifting = lift_objective(obj, AffineExpr::sym(x))?;
    let start = Assignment::new().with(OBJECTIVE_VAR, analytic_slack_start(obj, x)?);
    let p = MaxDetProblem::new(
        vec![VarDecl::full(OBJECTIVE_VAR, n)],
        OBJECTIVE_VAR,
        vec![lifting.constraint],
    )?
    .with_warm_start(start);
    solve_traced(&p, opts, trace)
}

/// Optimal value of the lifted program at frozen `X`; equals `f(X)` or `g(X)`.
pub fn solve_lifted_value(
    kind: Kind,
    k: &SymmetricMatrix,
    x: &SymmetricMatrix,
    opts: &SolverOptions,
) -> Result<f64> {
    let sol = solve_lifted(kind, k, x, opts)?;
    match sol.status {
        Status::Optimal => Ok(sol.objective),
        status => Err(Error::Solver { status }),
    }
}

/// `min f(X)` or `min g(X)` over `X > 0` with `H(X) >= 0`, through the lifting
/// with both `X` and `Z` free.
pub fn solve_constrained(
    kind: Kind,
    k: &SymmetricMatrix,
    h: &LmiConstraint,
    structure: Structure,
    opts: &SolverOptions,
) -> Result<Solution> {
    let obj = LogDetObjective::new(kind, k.clone())?;
    solve_constrained_objective(&obj, h, structure, opts, None)
}

pub fn solve_constrained_objective(
    obj: &LogDetObjective,
    h: &LmiConstraint,
    structure: Structure,
    opts: &SolverOptions,
    mut trace: Option<TraceSink<'_>>,
) -> Result<Solution> {
    opts.validate()?;
    let n = obj.dim();
    for (name, dim) in h.variables() {
        if name != X_VAR || *dim != n {
            return Err(Error::InvalidProblem(format!(
                "constraint H may only depend on the {n}x{n} variable `{X_VAR}`, found `{name}` ({dim}x{dim})"
            )));
        }
    }
    let x_decl = VarDecl {
        name: X_VAR.into(),
        dim: n,
        structure,
    };

    // Strictly feasible X for H alone, then the analytic slack start.
    let sub = Compiled::new(std::slice::from_ref(&x_decl), std::slice::from_ref(h), &[X_VAR.to_string()], None)?;
    let mut counters = Counters { newton_steps: 0 };
    let x0 = match sub.phase1(sub.layout.flatten(None), opts, &mut counters, &mut trace) {
        Phase1Result::Feasible { x, .. } => sub.layout.to_assignment(&x),
        Phase1Result::Infeasible { x, s } => {
            let assignment = sub.layout.to_assignment(&x);
            return Ok(Solution {
                margins: margins(std::slice::from_ref(h), &assignment)?,
                assignment,
                objective: f64::INFINITY,
                status: Status::Infeasible,
                outer_iterations: 0,
                newton_steps: counters.newton_steps,
                diagnostics: Diagnostics {
                    phase1_s: Some(s),
                    max_abs_coordinate: x.amax(),
                    diverging: x.amax() > DIVERGENCE_BOUND,
                    ..Diagnostics::default()
                },
            });
        }
    };
    let x0_value = x0.get(X_VAR)?.clone();
    let z0 = analytic_slack_start(obj, &x0_value)?;

    let lifting = lift_objective(obj, AffineExpr::var(X_VAR, n))?;
    let p = MaxDetProblem::new(
        vec![x_decl, VarDecl::full(OBJECTIVE_VAR, n)],
        OBJECTIVE_VAR,
        vec![h.clone(), lifting.constraint],
    )?
    .with_pd_var(X_VAR)?
    .with_warm_start(x0.with(OBJECTIVE_VAR, z0));

    let mut sol = solve_traced(&p, opts, trace)?;
    sol.newton_steps += counters.newton_steps;
    if sol.status != Status::Infeasible {
        let curvature = objective_curvature(obj, sol.assignment.get(X_VAR)?, structure);
        sol.diagnostics.x_min_curvature = curvature;
        sol.diagnostics.nonunique_x = curvature.map(|c| c < NONUNIQUE_CURVATURE);
    }
    Ok(sol)
}

/// Smallest eigenvalue of the objective's Hessian in the free coordinates of
/// `X`, by central differences of the analytic gradient.
fn objective_curvature(obj: &LogDetObjective, x: &SymmetricMatrix, structure: Structure) -> Option<f64> {
    let n = x.dim();
    let layout = Layout::new(&[VarDecl {
        name: X_VAR.into(),
        dim: n,
        structure,
    }]);
    let dirs: Vec<SymmetricMatrix> = layout
        .entries(0)
        .into_iter()
        .map(|(_, i, j)| {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            SymmetricMatrix::symmetrized(e)
        })
        .collect();
    let min_x = sym_eig(x).ok()?.min();
    let h = (1e-5 * (1.0 + x.norm())).min(0.25 * min_x);
    let d = dirs.len();
    let mut hess = DMatrix::zeros(d, d);
    for (l, dl) in dirs.iter().enumerate() {
        let gp = obj.grad(&(x + &(dl * h))).ok()?;
        let gm = obj.grad(&(x - &(dl * h))).ok()?;
        let dg = (gp.into_matrix() - gm.into_matrix()) / (2.0 * h);
        for (k, dk) in dirs.iter().enumerate() {
            hess[(k, l)] = dg.dot(dk.as_matrix());
        }
    }
    let hess = SymmetricMatrix::new(hess).ok()?;
    sym_eig(&hess).ok().map(|e| e.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{lift_f, lift_g};
    use approx::assert_abs_diff_eq;

    fn s(x: f64) -> SymmetricMatrix {
        SymmetricMatrix::scalar(x)
    }

    fn frozen(kind: Kind, k: f64, x: f64) -> MaxDetProblem {
        let obj = LogDetObjective::new(kind, s(k)).unwrap();
        let l = lift_objective(&obj, AffineExpr::sym(&s(x))).unwrap();
        MaxDetProblem::new(vec![VarDecl::full("Z", 1)], "Z", vec![l.constraint]).unwrap()
    }

    #[test]
    fn frozen_f_from_phase1() {
        let sol = solve(&frozen(Kind::F, 1.0, 1.0), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.diagnostics.phase1_s.is_some());
        assert_abs_diff_eq!(sol.assignment.get("Z").unwrap().get(0, 0), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, 2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn frozen_g_with_zero_k() {
        let sol = solve(&frozen(Kind::G, 0.0, 2.0), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_abs_diff_eq!(sol.assignment.get("Z").unwrap().get(0, 0), 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, -2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn phase1_examples() {
        let l = lift_f(&s(1.0)).unwrap();
        let p = MaxDetProblem::new(
            vec![VarDecl::full("X", 1), VarDecl::full("Z", 1)],
            "Z",
            vec![l.constraint.clone()],
        )
        .unwrap()
        .with_pd_var("X")
        .unwrap()
        .with_warm_start(Assignment::new().with("X", s(1.0)));
        match phase1(&p, &SolverOptions::default()).unwrap() {
            Phase1Outcome::Feasible { assignment, s } => {
                assert!(s < -1e-6);
                assert!(l.constraint.feasibility_margin(&assignment).unwrap() > 0.0);
            }
            other => panic!("expected feasible, got {other:?}"),
        }

        let neg = LmiConstraint::single("neg", AffineExpr::constant(DMatrix::from_element(1, 1, -1.0))).unwrap();
        let p = MaxDetProblem::new(vec![VarDecl::full("Z", 1)], "Z", vec![neg]).unwrap();
        match phase1(&p, &SolverOptions::default()).unwrap() {
            Phase1Outcome::Infeasible { s, .. } => assert!(s > -1e-6),
            other => panic!("expected infeasible, got {other:?}"),
        }
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
        assert_eq!(sol.objective, f64::INFINITY);
    }

    #[test]
    fn analytic_start_is_strictly_feasible() {
        let obj = LogDetObjective::new(Kind::G, s(1.0)).unwrap();
        let z0 = analytic_slack_start(&obj, &s(1.0)).unwrap();
        assert_abs_diff_eq!(z0.get(0, 0), 0.25, epsilon = 1e-15);
        let l = lift_g(&s(1.0)).unwrap();
        let a = Assignment::new().with("X", s(1.0)).with("Z", z0);
        assert!(l.constraint.feasibility_margin(&a).unwrap() > 0.0);
    }

    #[test]
    fn option_validation() {
        let bad = SolverOptions {
            barrier_mu: 1.0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            newton_tol: 0.0,
            ..SolverOptions::default()
        };
        assert!(solve(&frozen(Kind::F, 1.0, 1.0), &bad).is_err());
    }

    #[test]
    fn problem_validation() {
        let l = lift_f(&s(1.0)).unwrap();
        let err = MaxDetProblem::new(vec![VarDecl::full("Z", 1)], "Z", vec![l.constraint.clone()]);
        assert!(matches!(err, Err(Error::InvalidProblem(_))));
        let err = MaxDetProblem::new(vec![VarDecl::full("X", 1)], "Z", vec![]);
        assert!(matches!(err, Err(Error::InvalidProblem(_))));
        let err = MaxDetProblem::new(
            vec![VarDecl::full("X", 2), VarDecl::full("Z", 1)],
            "Z",
            vec![l.constraint],
        );
        assert!(matches!(err, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn trace_reports_each_newton_step() {
        let mut lines = Vec::new();
        let mut sink = |r: &TraceRecord| lines.push(r.to_string());
        let sol = solve_traced(&frozen(Kind::F, 1.0, 1.0), &SolverOptions::default(), Some(&mut sink)).unwrap();
        assert!(lines.len() >= sol.newton_steps);
        assert!(lines.iter().any(|l| l.starts_with("phase1 ")));
        assert!(lines.iter().any(|l| l.starts_with("main ") && l.contains("decrement=")));
    }

    #[test]
    fn layout_round_trip() {
        let layout = Layout::new(&[VarDecl::full("A", 3), VarDecl::diagonal("B", 2)]);
        assert_eq!(layout.total, 8);
        let a = SymmetricMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]]).unwrap();
        let b = SymmetricMatrix::from_diagonal(&[7.0, 8.0]);
        let asg = Assignment::new().with("A", a.clone()).with("B", b.clone());
        let x = layout.flatten(Some(&asg));
        let back = layout.to_assignment(&x);
        assert_eq!(back.get("A").unwrap(), &a);
        assert_eq!(back.get("B").unwrap(), &b);
    }
}
