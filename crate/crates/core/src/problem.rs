//! JSON problem files:
//!
//! ```json
//! {"A": [[1, 3], [3, 2], [1, 5]], "b": [2, 1, 3], "lambda": 1, "upper": 5}
//! ```
//!
//! `upper` (and the optional `lower`, nonnegative magnitudes `l` of the box
//! `[−l, u]`) is either an array or a scalar applied to every coordinate.
//! A present `lower` makes the problem two-sided; it is split before solving.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxSet, ProblemSpec};
use crate::splitting::{split, TwoSidedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Bound {
    fn expand(&self, field: &str, n: usize) -> Result<DVector<f64>> {
        match self {
            Bound::Scalar(v) => Ok(DVector::from_element(n, *v)),
            Bound::Vector(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Bound::Vector(v) => Err(Error::Config(format!(
                "field \"{field}\": expected {n} entries (one per column of A), got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub upper: Bound,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Bound>,
    /// Starting point in the original (unsplit) coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

/// A problem ready for the solver. Two-sided problems carry their split form.
#[derive(Debug, Clone)]
pub enum LoadedProblem {
    OneSided(ProblemSpec),
    TwoSided { original: TwoSidedSpec, split: ProblemSpec },
}

impl LoadedProblem {
    /// The one-sided problem handed to the solver.
    pub fn solver_spec(&self) -> &ProblemSpec {
        match self {
            LoadedProblem::OneSided(s) => s,
            LoadedProblem::TwoSided { split, .. } => split,
        }
    }

    /// Dimension in the original coordinates.
    pub fn dim(&self) -> usize {
        match self {
            LoadedProblem::OneSided(s) => s.dim(),
            LoadedProblem::TwoSided { original, .. } => original.dim(),
        }
    }
}

impl ProblemFile {
    /// Parses a problem file; errors carry the offending field and line.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let parsed: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("field \"{path}\": {inner}"))
            }
        })?;
        de.end()?;
        Ok(parsed)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let m = self.a.len();
        if m == 0 {
            return Err(Error::Config("field \"A\": matrix has no rows".into()));
        }
        let n = self.a[0].len();
        if n == 0 {
            return Err(Error::Config("field \"A\": matrix has no columns".into()));
        }
        if let Some(i) = self.a.iter().position(|r| r.len() != n) {
            return Err(Error::Config(format!(
                "field \"A\": row {i} has {} entries, row 0 has {n}",
                self.a[i].len()
            )));
        }
        if self.b.len() != m {
            return Err(Error::Config(format!(
                "field \"b\": expected {m} entries (one per row of A), got {}",
                self.b.len()
            )));
        }
        Ok(DMatrix::from_fn(m, n, |i, j| self.a[i][j]))
    }

    pub fn into_problem(&self) -> Result<LoadedProblem> {
        let a = self.matrix()?;
        let n = a.ncols();
        let b = DVector::from_column_slice(&self.b);
        let upper = self.upper.expand("upper", n)?;
        match &self.lower {
            None => Ok(LoadedProblem::OneSided(ProblemSpec::quadratic(
                a,
                b,
                BoxSet::one_sided(upper)?,
                self.lambda,
            )?)),
            Some(lower) => {
                let original = TwoSidedSpec::quadratic(a, b, lower.expand("lower", n)?, upper, self.lambda)?;
                let split = split(&original)?;
                Ok(LoadedProblem::TwoSided { original, split })
            }
        }
    }

    pub fn x0(&self) -> Option<DVector<f64>> {
        self.x0.as_ref().map(|v| DVector::from_column_slice(v))
    }
}
