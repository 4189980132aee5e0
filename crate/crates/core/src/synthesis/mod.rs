//! Offline synthesis: vertex gains, the robust invariant terminal set and the
//! artifact file that carries both to the online controller.

pub mod artifact;
pub mod gains;
pub mod pipeline;
pub mod rpi;

pub use artifact::{load_artifact, save_artifact, Artifact, ArtifactMetadata, ARTIFACT_VERSION};
pub use gains::{
    interpolate_gain, lyapunov_residual, spectral_radius, synthesize_gains, synthesize_vertex_gains, weight_scale,
    GainSchedule, InterpolatedGain, LmiCertificate,
};
pub use pipeline::{search_synthesis_weights, synthesize, SynthesisOptions, SynthesisOutput, WeightTrial};
pub use rpi::{compute_rpi, validate_invariance, InvarianceReport, RpiSet};
