//! Synthesis artifact: a JSON file holding the gain schedule, the invariant
//! set in both representations, and the diagnostics of the run that made it.
//!
//! Layout:
//!
//! ```json
//! {
//!   "version": "lanekeep-artifact/1",
//!   "checksum": "<sha256 of the compact payload JSON>",
//!   "payload": {
//!     "model_hash": "...",
//!     "gains": { "k1": [[..]], "k2": [[..]], "p1": [[..]], "p2": [[..]],
//!                "q_syn": [[..]], "r_syn": [[..]], "p_min": .., "p_max": .., "lmi_margin": .. },
//!     "rpi": { "h": {"dim", "g", "h"}, "v": {"dim", "vertices"}, "iterations_used": .. },
//!     "metadata": { "rpi_tol": .., "lmi_feasibility_margin": .., ... }
//!   }
//! }
//! ```
//!
//! Matrices are row-major nested arrays.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gains::GainSchedule;
use super::rpi::RpiSet;
use crate::error::{Error, Result};
use crate::polytope::{HPolytope, VPolytope};

pub const ARTIFACT_VERSION: &str = "lanekeep-artifact/1";

/// Tolerances and diagnostics recorded alongside the synthesis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub rpi_tol: f64,
    pub lmi_feasibility_margin: f64,
    pub invariance_tol: f64,
    pub rpi_max_iter: usize,
    pub n_vertices: usize,
    pub n_facets: usize,
    pub lmi_newton_steps: usize,
    /// Worst margin of the invariance check run at synthesis time, if any.
    pub validation_worst_margin: Option<f64>,
    pub validation_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub model_hash: String,
    pub gains: GainSchedule,
    pub rpi: RpiSet,
    pub metadata: ArtifactMetadata,
}

#[derive(Serialize, Deserialize)]
struct GainsRepr {
    k1: Vec<Vec<f64>>,
    k2: Vec<Vec<f64>>,
    p1: Vec<Vec<f64>>,
    p2: Vec<Vec<f64>>,
    q_syn: Vec<Vec<f64>>,
    r_syn: Vec<Vec<f64>>,
    p_min: f64,
    p_max: f64,
    lmi_margin: f64,
}

#[derive(Serialize, Deserialize)]
struct RpiRepr {
    h: HPolytope,
    v: VPolytope,
    iterations_used: usize,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    model_hash: String,
    gains: GainsRepr,
    rpi: RpiRepr,
    metadata: ArtifactMetadata,
}

#[derive(Serialize, Deserialize)]
struct FileRepr {
    version: String,
    checksum: String,
    payload: Payload,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Artifact(format!(
            "{name}: expected {}x{} matrix",
            shape.0, shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |r, c| rows[r][c]))
}

fn checksum(payload: &Payload) -> Result<String> {
    let bytes = serde_json::to_vec(payload).map_err(|e| Error::Artifact(e.to_string()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Artifact {
    fn to_payload(&self) -> Payload {
        let g = &self.gains;
        Payload {
            model_hash: self.model_hash.clone(),
            gains: GainsRepr {
                k1: rows(&g.k1),
                k2: rows(&g.k2),
                p1: rows(&g.p1),
                p2: rows(&g.p2),
                q_syn: rows(&g.q_syn),
                r_syn: rows(&g.r_syn),
                p_min: g.p_min,
                p_max: g.p_max,
                lmi_margin: g.lmi_margin,
            },
            rpi: RpiRepr {
                h: self.rpi.h.clone(),
                v: self.rpi.v.clone(),
                iterations_used: self.rpi.iterations_used,
            },
            metadata: self.metadata.clone(),
        }
    }

    fn from_payload(p: Payload) -> Result<Self> {
        let nx = p.rpi.h.dim();
        let nu = p.gains.r_syn.len();
        if p.rpi.v.dim() != nx {
            return Err(Error::Artifact("rpi: H and V dimensions differ".into()));
        }
        let g = &p.gains;
        let gains = GainSchedule {
            k1: matrix("k1", &g.k1, (nu, nx))?,
            k2: matrix("k2", &g.k2, (nu, nx))?,
            p1: matrix("p1", &g.p1, (nx, nx))?,
            p2: matrix("p2", &g.p2, (nx, nx))?,
            q_syn: matrix("q_syn", &g.q_syn, (nx, nx))?,
            r_syn: matrix("r_syn", &g.r_syn, (nu, nu))?,
            p_min: g.p_min,
            p_max: g.p_max,
            lmi_margin: g.lmi_margin,
        };
        Ok(Self {
            model_hash: p.model_hash,
            gains,
            rpi: RpiSet {
                h: p.rpi.h,
                v: p.rpi.v,
                iterations_used: p.rpi.iterations_used,
            },
            metadata: p.metadata,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let payload = self.to_payload();
        let file = FileRepr {
            version: ARTIFACT_VERSION.to_string(),
            checksum: checksum(&payload)?,
            payload,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Artifact(e.to_string()))
    }

    /// Parses and verifies version and checksum. When `expected_model_hash`
    /// is given, a different model hash is rejected.
    pub fn from_json(text: &str, expected_model_hash: Option<&str>) -> Result<Self> {
        let file: FileRepr =
            serde_json::from_str(text).map_err(|e| Error::Artifact(format!("parse: {e}")))?;
        if file.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported version {:?} (expected {ARTIFACT_VERSION:?})",
                file.version
            )));
        }
        let actual = checksum(&file.payload)?;
        if actual != file.checksum {
            return Err(Error::Artifact("checksum mismatch; file was modified".into()));
        }
        if let Some(model) = expected_model_hash {
            if model != file.payload.model_hash {
                return Err(Error::HashMismatch {
                    artifact: file.payload.model_hash,
                    model: model.to_string(),
                });
            }
        }
        Self::from_payload(file.payload)
    }
}

pub fn save_artifact(path: impl AsRef<Path>, artifact: &Artifact) -> Result<()> {
    fs::write(path, artifact.to_json()?)?;
    Ok(())
}

pub fn load_artifact(path: impl AsRef<Path>, expected_model_hash: Option<&str>) -> Result<Artifact> {
    let text = fs::read_to_string(path)?;
    Artifact::from_json(&text, expected_model_hash)
}
