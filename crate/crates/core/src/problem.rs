//! JSON problem files.
//!
//! ```json
//! {
//!   "version": "1",
//!   "kind": "G",
//!   "K": [[1]],
//!   "H": { "blocks": [[[{"const": [[2]]}, {"var": "X", "coef": -1}], null],
//!                     [[{"var": "X"}, {"const": [[-0.5]]}]]] },
//!   "structure": "FULL",
//!   "options": { "max_outer": 80 }
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SymmetricMatrix, DEFAULT_CONE_TOL};
use crate::lmi::{ConstraintSpec, LmiConstraint, X_VAR};
use crate::objective::{Kind, LogDetObjective};
use crate::solver::{SolverOptions, Structure};

pub const FORMAT_VERSION: &str = "1";
pub const TOL_ENV: &str = "LOGDET_LMI_TOL";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: String,
    pub kind: Kind,
    #[serde(rename = "K")]
    pub k: SymmetricMatrix,
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<SymmetricMatrix>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<ConstraintSpec>,
    #[serde(default)]
    pub structure: Structure,
    #[serde(default)]
    pub options: SolverOptions,
}

/// A loaded and validated problem file.
#[derive(Clone, Debug)]
pub struct Problem {
    pub file: ProblemFile,
    pub objective: LogDetObjective,
    pub constraint: Option<LmiConstraint>,
    pub cone_tol: f64,
}

impl Problem {
    pub fn kind(&self) -> Kind {
        self.file.kind
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn x(&self) -> Option<&SymmetricMatrix> {
        self.file.x.as_ref()
    }
}

/// Cone tolerance from `LOGDET_LMI_TOL`, or the default when unset.
pub fn cone_tolerance_from_env() -> Result<f64> {
    match std::env::var(TOL_ENV) {
        Err(_) => Ok(DEFAULT_CONE_TOL),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
            _ => Err(Error::Parse(format!("{TOL_ENV} must be a non-negative decimal, got `{s}`"))),
        },
    }
}

pub fn parse_problem(text: &str, cone_tol: f64) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format version `{}` (expected `{FORMAT_VERSION}`)",
            file.version
        )));
    }
    file.options.validate()?;
    let objective = LogDetObjective::with_tolerance(file.kind, file.k.clone(), cone_tol)?;
    let n = objective.dim();
    if let Some(x) = &file.x {
        // Shape and PD checks happen inside `eval`.
        objective.eval(x)?;
    }
    let constraint = match &file.h {
        None => None,
        Some(spec) => {
            let dims = BTreeMap::from([(X_VAR.to_string(), n)]);
            Some(spec.to_constraint(&dims)?)
        }
    };
    Ok(Problem {
        file,
        objective,
        constraint,
        cone_tol,
    })
}

pub fn load_problem(path: &Path, cone_tol: f64) -> Result<Problem> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text, cone_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_box_problem() {
        let text = r#"{
            "version": "1", "kind": "G", "K": [[1]],
            "H": {"blocks": [[[{"const": [[2]]}, {"var": "X", "coef": -1}], null],
                             [[{"var": "X"}, {"const": [[-0.5]]}]]]}
        }"#;
        let p = parse_problem(text, DEFAULT_CONE_TOL).unwrap();
        assert_eq!(p.kind(), Kind::G);
        assert_eq!(p.constraint.unwrap().to_string(), "[[2−X, 0],[0, X−0.5]] ⪰ 0");
        assert_eq!(p.file.structure, Structure::Full);
    }

    #[test]
    fn rejects_bad_input() {
        let bad_version = r#"{"version": "2", "kind": "F", "K": [[1]]}"#;
        assert!(matches!(parse_problem(bad_version, 1e-9), Err(Error::Parse(_))));
        let asym = r#"{"version": "1", "kind": "F", "K": [[1, 0.5], [0, 1]]}"#;
        assert!(matches!(parse_problem(asym, 1e-9), Err(Error::Parse(_))));
        let not_psd = r#"{"version": "1", "kind": "F", "K": [[-1]]}"#;
        assert!(matches!(parse_problem(not_psd, 1e-9), Err(Error::ConeViolation { .. })));
        let x_not_pd = r#"{"version": "1", "kind": "F", "K": [[1]], "X": [[0]]}"#;
        assert!(matches!(parse_problem(x_not_pd, 1e-9), Err(Error::ConeViolation { .. })));
        let unknown = r#"{"version": "1", "kind": "F", "K": [[1]], "bogus": 1}"#;
        assert!(matches!(parse_problem(unknown, 1e-9), Err(Error::Parse(_))));
    }

    #[test]
    fn tolerance_admits_slightly_negative_k() {
        let text = r#"{"version": "1", "kind": "F", "K": [[-1e-7]]}"#;
        assert!(parse_problem(text, 1e-9).is_err());
        assert!(parse_problem(text, 1e-6).is_ok());
    }
}
