//! Numerical probes of convexity and strict convexity of `f` and `g`.
//!
//! Nothing here proves anything. A sweep reports whether a seeded sampler
//! found a counterexample, and for singular `K` it constructs explicit pairs
//! `X != Y` on which `f` is affine (and `Z*` coincides), which is where
//! strict convexity of `f` breaks down.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{sym_eig, SymmetricMatrix, DEFAULT_CONE_TOL};
use crate::objective::{Kind, LogDetObjective};

/// Slack below `-VIOLATION_TOL * (1 + |h(X)| + |h(Y)|)` is a convexity violation.
pub const VIOLATION_TOL: f64 = 1e-7;
/// Slack within `TIGHT_TOL * (1 + |h(X)| + |h(Y)|)` of zero counts as tight.
pub const TIGHT_TOL: f64 = 1e-10;
/// Pairs closer than this (Frobenius) are not used for strictness checks.
pub const MIN_SEPARATION: f64 = 0.1;
/// The strictness floor is this fraction of the smallest pilot ratio.
pub const STRICTNESS_SAFETY: f64 = 1e-3;
/// `Z*` values closer than this count as a collision.
pub const ZSTAR_SEPARATION_FLOOR: f64 = 1e-9;

const MAX_WITNESSES: usize = 16;
const CONSTRUCTED_PAIRS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    ConvexConsistent,
    StrictConsistent,
    Violation,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::ConvexConsistent => "CONVEX_CONSISTENT",
            Verdict::StrictConsistent => "STRICT_CONSISTENT",
            Verdict::Violation => "VIOLATION",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SampleConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub condition_cap: f64,
    pub lambda_grid: Vec<f64>,
    /// Pairs used to calibrate the strictness floor.
    pub pilot_trials: usize,
    /// Pairs evaluated in addition to the random ones.
    pub extra_pairs: Vec<(SymmetricMatrix, SymmetricMatrix)>,
}

impl SampleConfig {
    pub fn new(n: usize, trials: usize, seed: u64) -> Self {
        Self {
            n,
            trials,
            seed,
            condition_cap: 100.0,
            lambda_grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            pilot_trials: 50,
            extra_pairs: Vec::new(),
        }
    }

    fn validate(&self) {
        assert!(self.n >= 1, "dimension must be at least 1");
        assert!(self.condition_cap >= 1.0, "condition cap must be at least 1");
        assert!(
            self.lambda_grid.iter().all(|&l| l > 0.0 && l < 1.0),
            "lambda values must lie strictly inside (0, 1)"
        );
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub x: SymmetricMatrix,
    pub y: SymmetricMatrix,
    pub lambda: f64,
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub kind: Kind,
    pub n: usize,
    pub seed: u64,
    pub trials: usize,
    pub evaluations: usize,
    /// Most negative normalized slack `slack / (1 + |h(X)| + |h(Y)|)`, or 0.
    pub worst_violation: f64,
    pub min_slack: f64,
    pub tolerance: f64,
    pub strictness_expected: bool,
    /// Smallest `slack / (lambda (1 - lambda) ||X - Y||^2)` in the pilot run.
    pub pilot_min_ratio: Option<f64>,
    /// Floor `c` each strictness check must clear.
    pub strictness_floor: Option<f64>,
    pub witness_count: usize,
    /// Up to 16 pairs with (near) zero slack or slack below the floor.
    pub strictness_witnesses: Vec<Witness>,
    pub verdict: Verdict,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of sub-stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)) ^ index)
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn spectrum(n: usize, rng: &mut ChaCha8Rng, condition_cap: f64) -> Vec<f64> {
    let span = condition_cap.ln();
    (0..n)
        .map(|_| ((rng.random::<f64>() - 0.5) * span).exp())
        .collect()
}

/// Deterministic PD matrix `Q diag(lambda) Q^T` with log-uniform eigenvalues
/// in `[cap^{-1/2}, cap^{1/2}]`, so its condition number is at most `cap`.
pub fn random_spd(n: usize, seed: u64, condition_cap: f64) -> SymmetricMatrix {
    assert!(n >= 1, "dimension must be at least 1");
    assert!(condition_cap >= 1.0, "condition cap must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = spectrum(n, &mut rng, condition_cap);
    let q = random_orthogonal(n, &mut rng);
    conjugate(&q, &lambda)
}

/// Like [`random_spd`] but with `n - rank` eigenvalues set to zero.
pub fn random_psd(n: usize, rank: usize, seed: u64, condition_cap: f64) -> SymmetricMatrix {
    assert!(rank <= n, "rank cannot exceed dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda = spectrum(n, &mut rng, condition_cap);
    for l in lambda.iter_mut().skip(rank) {
        *l = 0.0;
    }
    let q = random_orthogonal(n, &mut rng);
    conjugate(&q, &lambda)
}

fn conjugate(q: &DMatrix<f64>, lambda: &[f64]) -> SymmetricMatrix {
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[j];
    }
    SymmetricMatrix::symmetrized(scaled * q.transpose())
}

/// Random symmetric direction with unit Frobenius norm.
pub fn random_direction(n: usize, seed: u64) -> SymmetricMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = SymmetricMatrix::symmetrized(g);
    let norm = s.norm();
    &s * (1.0 / norm)
}

/// `lambda h(X) + (1 - lambda) h(Y) - h(lambda X + (1 - lambda) Y)`.
pub fn midpoint_slack(
    kind: Kind,
    k: &SymmetricMatrix,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    lambda: f64,
) -> Result<f64> {
    let obj = LogDetObjective::new(kind, k.clone())?;
    slack_of(&obj, x, y, lambda).map(|s| s.slack)
}

struct Slack {
    slack: f64,
    scale: f64,
}

fn slack_of(obj: &LogDetObjective, x: &SymmetricMatrix, y: &SymmetricMatrix, lambda: f64) -> Result<Slack> {
    let hx = obj.eval(x)?;
    let hy = obj.eval(y)?;
    let mid = &(x * lambda) + &(y * (1.0 - lambda));
    let hm = obj.eval(&mid)?;
    Ok(Slack {
        slack: lambda * hx + (1.0 - lambda) * hy - hm,
        scale: 1.0 + hx.abs() + hy.abs(),
    })
}

/// Two PD matrices that agree on the range of `K` and differ on its null
/// space, written in the eigenbasis of `K`. `None` when `K` is PD.
fn null_space_pair(
    obj: &LogDetObjective,
    seed: u64,
    condition_cap: f64,
) -> Result<Option<(SymmetricMatrix, SymmetricMatrix)>> {
    let eig = sym_eig(obj.k())?;
    let n = obj.dim();
    let tol = DEFAULT_CONE_TOL.max(1e-10 * eig.max_abs());
    // Ascending order puts the null space first.
    let nullity = eig.values.iter().take_while(|&&l| l <= tol).count();
    if nullity == 0 {
        return Ok(None);
    }
    let rank = n - nullity;
    let range_block = (rank > 0).then(|| random_spd(rank, derive_seed(seed, 1, 0), condition_cap));
    let build = |null_block: SymmetricMatrix| {
        let mut inner = DMatrix::zeros(n, n);
        inner
            .view_mut((0, 0), (nullity, nullity))
            .copy_from(null_block.as_matrix());
        if let Some(a) = &range_block {
            inner.view_mut((nullity, nullity), (rank, rank)).copy_from(a.as_matrix());
        }
        SymmetricMatrix::symmetrized(&eig.vectors * inner * eig.vectors.transpose())
    };
    let b1 = random_spd(nullity, derive_seed(seed, 2, 0), condition_cap);
    let mut b2 = random_spd(nullity, derive_seed(seed, 3, 0), condition_cap);
    if b2.max_abs_diff(&b1) < MIN_SEPARATION {
        b2 = &b1 + &SymmetricMatrix::identity(nullity);
    }
    Ok(Some((build(b1), build(b2))))
}

struct PairOutcome {
    min_norm_slack: f64,
    min_slack: f64,
    witnesses: Vec<Witness>,
    ratios: Vec<f64>,
}

fn evaluate_pair(
    obj: &LogDetObjective,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    grid: &[f64],
    floor: Option<f64>,
) -> Result<PairOutcome> {
    let dist_sq = (x - y).norm().powi(2);
    let separated = dist_sq.sqrt() >= MIN_SEPARATION;
    let mut out = PairOutcome {
        min_norm_slack: f64::INFINITY,
        min_slack: f64::INFINITY,
        witnesses: Vec::new(),
        ratios: Vec::new(),
    };
    for &lambda in grid {
        let Slack { slack, scale } = slack_of(obj, x, y, lambda)?;
        out.min_norm_slack = out.min_norm_slack.min(slack / scale);
        out.min_slack = out.min_slack.min(slack);
        let ratio = slack / (lambda * (1.0 - lambda) * dist_sq);
        if separated {
            out.ratios.push(ratio);
        }
        let tight = slack.abs() <= TIGHT_TOL * scale;
        let below_floor = match floor {
            Some(c) => separated && ratio < c,
            None => false,
        };
        if (tight && dist_sq > 0.0) || below_floor {
            out.witnesses.push(Witness {
                x: x.clone(),
                y: y.clone(),
                lambda,
                slack,
            });
        }
    }
    Ok(out)
}

/// Samples `(X, Y, lambda)` and checks the convexity inequality; see
/// [`ConvexityReport`] for what is recorded.
///
/// Strictness is expected for `g` always and for `f` when `K` is PD. In that
/// case a pilot run calibrates a floor `c` and every separated pair must have
/// `slack >= c lambda (1 - lambda) ||X - Y||^2`. For `f` with singular `K`,
/// pairs differing only on the null space of `K` are added; they are tight.
pub fn convexity_sweep(kind: Kind, k: &SymmetricMatrix, cfg: &SampleConfig) -> Result<ConvexityReport> {
    cfg.validate();
    let obj = LogDetObjective::new(kind, k.clone())?;
    let strictness_expected = kind == Kind::G || obj.k_is_pd(DEFAULT_CONE_TOL);
    let pair = |stream: u64, i: usize| {
        (
            random_spd(cfg.n, derive_seed(cfg.seed, stream, 2 * i as u64), cfg.condition_cap),
            random_spd(cfg.n, derive_seed(cfg.seed, stream, 2 * i as u64 + 1), cfg.condition_cap),
        )
    };

    let (pilot_min_ratio, floor) = if strictness_expected {
        let ratios: Vec<f64> = (0..cfg.pilot_trials)
            .into_par_iter()
            .map(|i| {
                let (x, y) = pair(100, i);
                evaluate_pair(&obj, &x, &y, &cfg.lambda_grid, None).map(|o| o.ratios)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_finite() && min > 0.0 {
            (Some(min), Some(STRICTNESS_SAFETY * min))
        } else {
            (min.is_finite().then_some(min), None)
        }
    } else {
        (None, None)
    };

    let mut pairs: Vec<(SymmetricMatrix, SymmetricMatrix)> = cfg.extra_pairs.clone();
    if !strictness_expected {
        for i in 0..CONSTRUCTED_PAIRS.min(cfg.trials.max(1)) {
            if let Some(p) = null_space_pair(&obj, derive_seed(cfg.seed, 200, i as u64), cfg.condition_cap)? {
                pairs.push(p);
            }
        }
    }
    let constructed = pairs.len();
    let outcomes: Vec<PairOutcome> = (0..cfg.trials + constructed)
        .into_par_iter()
        .map(|i| {
            let (x, y) = if i < constructed {
                pairs[i].clone()
            } else {
                pair(0, i - constructed)
            };
            evaluate_pair(&obj, &x, &y, &cfg.lambda_grid, floor)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut worst = 0.0f64;
    let mut min_slack = f64::INFINITY;
    let mut witnesses = Vec::new();
    let mut witness_count = 0;
    for o in outcomes {
        worst = worst.min(o.min_norm_slack);
        min_slack = min_slack.min(o.min_slack);
        witness_count += o.witnesses.len();
        for w in o.witnesses {
            if witnesses.len() < MAX_WITNESSES {
                witnesses.push(w);
            }
        }
    }
    let verdict = if worst < -VIOLATION_TOL {
        Verdict::Violation
    } else if strictness_expected && witness_count == 0 {
        Verdict::StrictConsistent
    } else {
        Verdict::ConvexConsistent
    };
    Ok(ConvexityReport {
        kind,
        n: cfg.n,
        seed: cfg.seed,
        trials: cfg.trials + constructed,
        evaluations: (cfg.trials + constructed) * cfg.lambda_grid.len(),
        worst_violation: worst,
        min_slack,
        tolerance: VIOLATION_TOL,
        strictness_expected,
        pilot_min_ratio,
        strictness_floor: floor,
        witness_count,
        strictness_witnesses: witnesses,
        verdict,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Collision {
    pub x: SymmetricMatrix,
    pub y: SymmetricMatrix,
    pub separation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InjectivityReport {
    pub seed: u64,
    pub trials: usize,
    pub k_is_pd: bool,
    /// Smallest `||Z*(X) - Z*(Y)||` over random pairs.
    pub min_random_separation: f64,
    pub collisions: Vec<Collision>,
    pub injective: bool,
}

/// Checks whether `X -> Z*(X)` (the slack minimizer of `f`) separates
/// sampled pairs; for singular `K`, constructed pairs must collide.
pub fn zstar_injectivity_probe(k: &SymmetricMatrix, trials: usize, seed: u64) -> Result<InjectivityReport> {
    let obj = LogDetObjective::new(Kind::F, k.clone())?;
    let n = obj.dim();
    let k_is_pd = obj.k_is_pd(DEFAULT_CONE_TOL);
    let cap = 100.0;
    let separations: Vec<(f64, SymmetricMatrix, SymmetricMatrix)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let x = random_spd(n, derive_seed(seed, 300, 2 * i as u64), cap);
            let y = random_spd(n, derive_seed(seed, 300, 2 * i as u64 + 1), cap);
            let sep = (&obj.z_star(&x)? - &obj.z_star(&y)?).norm();
            Ok((sep, x, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let min_random_separation = separations.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let mut collisions: Vec<Collision> = separations
        .into_iter()
        .filter(|s| s.0 <= ZSTAR_SEPARATION_FLOOR)
        .map(|(separation, x, y)| Collision { x, y, separation })
        .take(MAX_WITNESSES)
        .collect();
    if !k_is_pd {
        for i in 0..4 {
            if let Some((x, y)) = null_space_pair(&obj, derive_seed(seed, 400, i), cap)? {
                let separation = (&obj.z_star(&x)? - &obj.z_star(&y)?).norm();
                if separation <= ZSTAR_SEPARATION_FLOOR {
                    collisions.push(Collision { x, y, separation });
                }
            }
        }
    }
    Ok(InjectivityReport {
        seed,
        trials,
        k_is_pd,
        min_random_separation,
        injective: collisions.is_empty(),
        collisions,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HessianProbe {
    pub seed: u64,
    pub step: f64,
    pub directions: usize,
    pub evaluated: usize,
    /// Directions dropped because `X +- hD` left the PD cone even after shrinking.
    pub skipped: Vec<String>,
    pub min_quadratic_form: f64,
}

/// Minimum over random unit directions `D` of the second central difference
/// `[h(X + tD) - 2 h(X) + h(X - tD)] / t^2`. Directions are halved (up to 30
/// times) until `X +- tD` is PD.
pub fn hessian_psd_check(
    kind: Kind,
    k: &SymmetricMatrix,
    x: &SymmetricMatrix,
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<HessianProbe> {
    let obj = LogDetObjective::new(kind, k.clone())?;
    obj.eval(x)?;
    let mut probe = HessianProbe {
        seed,
        step,
        directions,
        evaluated: 0,
        skipped: Vec::new(),
        min_quadratic_form: f64::INFINITY,
    };
    for i in 0..directions {
        let mut d = random_direction(x.dim(), derive_seed(seed, 500, i as u64));
        let mut value = None;
        for _ in 0..30 {
            match obj.second_difference(x, &d, step) {
                Ok(v) => {
                    value = Some(v);
                    break;
                }
                Err(_) => d = &d * 0.5,
            }
        }
        match value {
            Some(v) => {
                probe.evaluated += 1;
                probe.min_quadratic_form = probe.min_quadratic_form.min(v);
            }
            None => probe
                .skipped
                .push(format!("direction {i}: X +- hD not positive definite after rescaling")),
        }
    }
    Ok(probe)
}
