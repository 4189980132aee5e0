//! End-to-end offline job and the weight search used to keep `S` small.

use nalgebra::{DMatrix, DVector};

use super::artifact::{Artifact, ArtifactMetadata};
use super::gains::{synthesize_gains, LmiCertificate};
use super::rpi::{compute_rpi, validate_invariance, InvarianceReport, INVARIANCE_TOL, RPI_TOL};
use crate::error::Result;
use crate::vehicle::LpvModel;

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub rpi_max_iter: usize,
    /// Monte-Carlo invariance samples run before the artifact is written; 0 skips.
    pub validation_samples: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            rpi_max_iter: 500,
            validation_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub artifact: Artifact,
    pub certificate: LmiCertificate,
    pub validation: Option<InvarianceReport>,
}

/// Gains, invariant set, optional invariance check, artifact.
pub fn synthesize(
    model: &LpvModel,
    q_syn: &DMatrix<f64>,
    r_syn: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<SynthesisOutput> {
    let (gains, certificate) = synthesize_gains(model, q_syn, r_syn)?;
    let rpi = compute_rpi(model, &gains, opts.rpi_max_iter)?;
    let validation = if opts.validation_samples > 0 {
        Some(validate_invariance(&rpi, model, &gains, opts.validation_samples, opts.seed)?)
    } else {
        None
    };
    let metadata = ArtifactMetadata {
        rpi_tol: RPI_TOL,
        lmi_feasibility_margin: certificate.margin,
        invariance_tol: INVARIANCE_TOL,
        rpi_max_iter: opts.rpi_max_iter,
        n_vertices: rpi.n_vertices(),
        n_facets: rpi.n_facets(),
        lmi_newton_steps: certificate.newton_steps,
        validation_worst_margin: validation.as_ref().map(|v| v.worst_margin),
        validation_samples: opts.validation_samples,
    };
    let artifact = Artifact {
        model_hash: model.hash(),
        gains,
        rpi,
        metadata,
    };
    Ok(SynthesisOutput {
        artifact,
        certificate,
        validation,
    })
}

/// One candidate of [`search_synthesis_weights`].
#[derive(Debug, Clone)]
pub struct WeightTrial {
    pub q_diag: Vec<f64>,
    pub r: f64,
    /// Vertex count of `S`, or the error text when synthesis failed.
    pub outcome: std::result::Result<usize, String>,
}

/// Tries every `(q, r)` pair and returns the trials sorted by vertex count,
/// failures last. The first entry is the weighting that keeps the tube QP
/// smallest.
pub fn search_synthesis_weights(
    model: &LpvModel,
    q_candidates: &[Vec<f64>],
    r_candidates: &[f64],
    rpi_max_iter: usize,
) -> Vec<WeightTrial> {
    let mut trials = Vec::new();
    for q in q_candidates {
        for &r in r_candidates {
            let qm = DMatrix::from_diagonal(&DVector::from_row_slice(q));
            let rm = DMatrix::from_element(1, 1, r);
            let outcome = synthesize_gains(model, &qm, &rm)
                .and_then(|(g, _)| compute_rpi(model, &g, rpi_max_iter))
                .map(|s| s.n_vertices())
                .map_err(|e| e.to_string());
            log::info!("weights q = {q:?}, r = {r}: {outcome:?}");
            trials.push(WeightTrial {
                q_diag: q.clone(),
                r,
                outcome,
            });
        }
    }
    trials.sort_by_key(|t| t.outcome.as_ref().map_or(usize::MAX, |n| *n));
    trials
}
