//! Hybrid surrogate constitutive models: a neural encoder maps strain
//! features to the parameters of a classical plasticity model, which then
//! produces stress, tangent and history.

pub mod encoder;
pub mod error;
pub mod features;
pub mod fesolve;
pub mod hybrid;
pub mod materials;
pub mod paths;
pub mod stability;
pub mod tensors;

pub use error::{Error, Result};
pub use features::FeatureKind;
pub use fesolve::{DemoConfig, LoadCase, Mesh, SolverControls, StripGeometry};
pub use hybrid::{DecoderKind, EvalMask, HybridSurrogate, TrainConfig, TrainingCheckpoint, TrainingReport};
pub use materials::{ConstitutiveModel, ElasticParams, InternalState, J2Params, MelroParams, ReferenceMaterial};
pub use paths::{DatasetConfig, PathDataset, PathKind, StrainPath};
pub use stability::StabilizationConfig;
pub use tensors::{Regime, StrainState, StressState, Tangent};
