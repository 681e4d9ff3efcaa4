//! Small-strain 2D finite elements with linear triangles, hosting either a
//! fixed constitutive model or the hybrid surrogate.

mod assemble;
mod demo;
mod mesh;
mod solver;
mod wrapper;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{FeatureState, FeatureVector};
use crate::materials::{update, ConstitutiveModel, InternalState, MaterialResponse, ReferenceMaterial};
use crate::tensors::{Regime, StrainState};

pub use assemble::{assemble, element_strain, evaluate_substepped, Assembly, FirstIteration, MaterialBinding};
pub use demo::{
    compare_curves, run_demo, run_reference, run_surrogate, DemoConfig, DemoCurves, DemoParts, LoadCase, SweepResult,
};
pub use mesh::{BMatrix, Hole, Mesh, StripGeometry, LEFT, RIGHT};
pub use solver::{Boundary, LoadProgram, RunOutcome, SolveState, Solver, SolverControls, StepRecord, StepResult};
pub use wrapper::{StabilizationLogRow, SurrogateBinding};

/// History of one Gauss point. Only the fields a binding needs are used:
/// fixed models ignore everything past `alpha_old`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    /// Last converged strain.
    pub eps_old: StrainState,
    /// Last converged internal state.
    pub alpha_old: InternalState,
    /// Decoder parameters, frozen within a step.
    pub theta: Vec<f64>,
    pub feature_state: Option<FeatureState>,
    /// Features of `eps_old`.
    pub phi_old: FeatureVector,
    /// Acoustic determinant at the start of the run.
    pub det_q0: f64,
}

impl PointState {
    pub fn fresh(regime: Regime) -> Self {
        Self {
            eps_old: StrainState::zero(regime),
            alpha_old: InternalState::default(),
            theta: Vec::new(),
            feature_state: None,
            phi_old: Vec::new(),
            det_q0: 0.0,
        }
    }
}

/// A constitutive model with constant parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBinding<M> {
    pub model: M,
    pub symmetric: bool,
}

impl<M> ModelBinding<M> {
    pub fn new(model: M, symmetric: bool) -> Self {
        Self { model, symmetric }
    }
}

pub type ReferenceBinding = ModelBinding<ReferenceMaterial>;

impl ReferenceBinding {
    pub fn reference(model: ReferenceMaterial) -> Self {
        Self::new(model, false)
    }
}

impl<M: ConstitutiveModel + Sync> MaterialBinding for ModelBinding<M> {
    fn evaluate(&self, _point: &PointState, prev: &InternalState, strain: &StrainState) -> Result<MaterialResponse> {
        update(&self.model, strain, prev)
    }

    fn commit(&self, point: &mut PointState, strain: &StrainState, response: &MaterialResponse) -> Result<()> {
        point.eps_old = response.strain(strain);
        point.alpha_old = response.state;
        Ok(())
    }

    fn init_point(&self, regime: Regime) -> Result<PointState> {
        Ok(PointState::fresh(regime))
    }

    fn symmetric_tangent(&self) -> bool {
        self.symmetric
    }
}
