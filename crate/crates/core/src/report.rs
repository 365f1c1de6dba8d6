//! Residual checks shared by the verification passes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Where a check attained its worst residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<Vec<usize>>,
}

/// One named condition evaluated over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Witness>,
}

impl Check {
    /// Pass iff `residual < tol`. The witness is kept for failures and
    /// passes alike, when known.
    pub fn new(name: impl Into<String>, worst: Worst, tol: f64) -> Check {
        let residual = worst.residual;
        Check {
            name: name.into(),
            residual,
            tol,
            pass: residual.is_finite() && residual < tol,
            witness: worst.witness,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<32} {:>11.4e}  tol {:>9.2e}  {}",
            self.name,
            self.residual,
            self.tol,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if let (false, Some(w)) = (self.pass, &self.witness) {
            write!(f, "  at {:?}", w.point)?;
            if let Some(index) = &w.index {
                write!(f, " index {index:?}")?;
            }
        }
        Ok(())
    }
}

/// Running maximum of a residual with its location.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Worst {
    pub residual: f64,
    pub witness: Option<Witness>,
}

impl Worst {
    fn beaten_by(&self, residual: f64) -> bool {
        self.witness.is_none()
            || (!self.residual.is_nan() && (residual.is_nan() || residual > self.residual))
    }

    pub fn observe(&mut self, residual: f64, point: &[f64], index: Option<Vec<usize>>) {
        if self.beaten_by(residual) {
            self.residual = residual;
            self.witness = Some(Witness {
                point: point.to_vec(),
                index,
            });
        }
    }

    pub fn merge(self, other: Worst) -> Worst {
        if other.witness.is_some() && self.beaten_by(other.residual) {
            other
        } else {
            self
        }
    }
}
