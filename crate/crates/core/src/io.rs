//! JSON files for factorizations and recursive-mechanism configs.
//!
//! Only the roots are stored; residues are rebuilt on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blt_params::{degree1_closed_form, BltFactorization, Method};
use crate::error::{Error, Result};
use crate::rational_approx::ra_blt_build;

/// Current file version.
pub const FORMAT_VERSION: u32 = 1;

/// Metadata block of a factorization file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BltMeta {
    /// Construction method.
    pub method: Method,
    /// File version.
    pub version: u32,
    /// Horizon the optimizer targeted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_target: Option<usize>,
    /// Optimizer iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// MaxErr over `OptLTToe` at `n_target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_ratio: Option<f64>,
}

impl BltMeta {
    /// Metadata with only the method set.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            version: FORMAT_VERSION,
            n_target: None,
            iterations: None,
            final_ratio: None,
        }
    }
}

/// On-disk form of a factorization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BltFile {
    /// Number of buffers.
    pub degree: usize,
    /// Reciprocal poles of `C⁻¹`'s generator.
    pub theta: Vec<f64>,
    /// Reciprocal zeros of `C⁻¹`'s generator; empty when only the poles are known.
    pub theta_hat: Vec<f64>,
    /// Target step count.
    pub n: usize,
    /// Provenance.
    pub meta: BltMeta,
}

impl BltFile {
    /// Captures `fact` with the given metadata.
    pub fn from_factorization(fact: &BltFactorization, meta: BltMeta) -> Self {
        Self {
            degree: fact.degree(),
            theta: fact.theta().to_vec(),
            theta_hat: fact.theta_hat().to_vec(),
            n: fact.n(),
            meta,
        }
    }

    /// Rebuilds the factorization.
    ///
    /// Rational-approximation files are regenerated from their degree and the
    /// stored poles are checked against the rebuild.
    pub fn to_factorization(&self) -> Result<BltFactorization> {
        if self.meta.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.meta.version)));
        }
        let fact = match self.meta.method {
            Method::Ra => {
                let f = ra_blt_build(self.degree, self.n)?;
                if f.theta().len() != self.theta.len()
                    || f.theta().iter().zip(&self.theta).any(|(a, b)| (a - b).abs() > 1e-12)
                {
                    return Err(Error::Format(format!(
                        "stored poles do not match the degree-{} rational approximation",
                        self.degree
                    )));
                }
                f
            }
            Method::Identity => {
                if self.degree != 0 || !self.theta.is_empty() || !self.theta_hat.is_empty() {
                    return Err(Error::Format("identity factorization must have degree 0".into()));
                }
                BltFactorization::identity(self.n)?
            }
            Method::Opt | Method::Degree1 => {
                if self.theta.len() != self.degree || self.theta_hat.len() != self.degree {
                    return Err(Error::Format(format!(
                        "expected {} roots per side, found {} and {}",
                        self.degree,
                        self.theta.len(),
                        self.theta_hat.len()
                    )));
                }
                BltFactorization::from_roots(self.theta.clone(), self.theta_hat.clone(), self.n, self.meta.method)?
            }
        };
        Ok(fact)
    }
}

/// Serializes `fact` to pretty JSON.
pub fn to_json(fact: &BltFactorization, meta: BltMeta) -> Result<String> {
    Ok(serde_json::to_string_pretty(&BltFile::from_factorization(fact, meta))?)
}

/// Parses a factorization from JSON.
pub fn from_json(text: &str) -> Result<BltFactorization> {
    serde_json::from_str::<BltFile>(text)?.to_factorization()
}

/// Writes `fact` to `path`.
pub fn save(fact: &BltFactorization, meta: BltMeta, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(fact, meta)?)?;
    Ok(())
}

/// Reads a factorization from `path`.
pub fn load(path: impl AsRef<Path>) -> Result<BltFactorization> {
    from_json(&std::fs::read_to_string(path)?)
}

/// Degree-1 factorization for horizon `n`.
pub fn degree1_factorization(n: usize) -> Result<BltFactorization> {
    degree1_closed_form(n)?.factorization(n)
}

/// Recursive mechanism config, stored next to noise metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursiveConfig {
    /// Path of the base factorization file.
    pub base: String,
    /// Recursion depth.
    pub levels: usize,
}
