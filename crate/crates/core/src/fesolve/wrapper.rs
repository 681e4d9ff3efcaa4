//! The surrogate as a Gauss-point material. Parameters are frozen while
//! the global solver iterates and refreshed only after convergence or after
//! an online stabilization of the encoder.

use serde::{Deserialize, Serialize};

use super::assemble::{FirstIteration, MaterialBinding};
use super::PointState;
use crate::error::Result;
use crate::features::commit;
use crate::hybrid::{DecoderKind, HybridSurrogate, PreparedPath};
use crate::materials::{InternalState, MaterialResponse};
use crate::stability::{acoustic_det_min, stabilize_network, StabilizationConfig, UnstablePoint};
use crate::tensors::{Regime, StrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationLogRow {
    pub step: usize,
    pub unstable: usize,
    pub negative_before: f64,
    pub negative_after: f64,
    pub epochs: usize,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SurrogateBinding {
    pub surrogate: HybridSurrogate,
    /// `None` only counts unstable points.
    pub stabilization: Option<StabilizationConfig>,
    pub retrain: Vec<PreparedPath>,
    pub validation: Option<Vec<PreparedPath>>,
    pub log: Vec<StabilizationLogRow>,
    /// Number of encoder updates so far.
    pub updates: usize,
}

impl SurrogateBinding {
    pub fn new(surrogate: HybridSurrogate) -> Self {
        Self { surrogate, stabilization: None, retrain: Vec::new(), validation: None, log: Vec::new(), updates: 0 }
    }

    pub fn with_stabilization(
        mut self,
        config: StabilizationConfig,
        retrain: Vec<PreparedPath>,
        validation: Option<Vec<PreparedPath>>,
    ) -> Self {
        self.stabilization = Some(config);
        self.retrain = retrain;
        self.validation = validation;
        self
    }

    /// Refreshes `theta` from the point's stored features.
    fn refresh(&self, p: &mut PointState) -> Result<()> {
        p.theta = self.surrogate.theta(&p.phi_old)?;
        Ok(())
    }
}

impl MaterialBinding for SurrogateBinding {
    fn evaluate(&self, point: &PointState, prev: &InternalState, strain: &StrainState) -> Result<MaterialResponse> {
        self.surrogate.decoder_update(&point.theta, strain, prev)
    }

    fn commit(&self, point: &mut PointState, strain: &StrainState, response: &MaterialResponse) -> Result<()> {
        let s = &self.surrogate;
        point.eps_old = response.strain(strain);
        point.alpha_old = response.state;
        commit(s.feature, point.feature_state.as_mut(), &point.eps_old)?;
        point.phi_old = s.features(&point.eps_old, point.feature_state.as_ref())?;
        self.refresh(point)
    }

    fn first_iteration(
        &mut self,
        points: &mut [PointState],
        strains: &[StrainState],
        responses: &[MaterialResponse],
        step: usize,
    ) -> Result<FirstIteration> {
        let unstable: Vec<UnstablePoint> = points
            .iter()
            .zip(strains.iter().zip(responses))
            .filter(|(_, (_, r))| acoustic_det_min(&r.tangent, false).det < 0.0)
            .map(|(p, (s, _))| UnstablePoint {
                strain: *s,
                alpha: p.alpha_old,
                features: p.phi_old.clone(),
                det_q0: p.det_q0,
            })
            .collect();
        let n = unstable.len();
        let Some(config) = &self.stabilization else {
            return Ok(FirstIteration { unstable: n, updated: false });
        };
        if n == 0 {
            return Ok(FirstIteration::default());
        }
        let config = StabilizationConfig { seed: config.seed.wrapping_add(self.updates as u64), ..config.clone() };
        let report =
            stabilize_network(&mut self.surrogate, &unstable, &config, &self.retrain, self.validation.as_deref())?;
        self.updates += 1;
        self.log.push(StabilizationLogRow {
            step,
            unstable: n,
            negative_before: report.negative_before,
            negative_after: report.negative_after,
            epochs: report.epochs,
            val_loss: report.val_loss,
        });
        for p in points.iter_mut() {
            self.refresh(p)?;
        }
        Ok(FirstIteration { unstable: n, updated: true })
    }

    fn init_point(&self, regime: Regime) -> Result<PointState> {
        let s = &self.surrogate;
        let eps = StrainState::zero(regime);
        let feature_state = s.initial_feature_state();
        let phi = s.features(&eps, feature_state.as_ref())?;
        let theta = s.theta(&phi)?;
        let r = s.decoder_update(&theta, &eps, &InternalState::default())?;
        let det_q0 = acoustic_det_min(&r.tangent, false).det;
        Ok(PointState { eps_old: eps, alpha_old: InternalState::default(), theta, feature_state, phi_old: phi, det_q0 })
    }

    fn symmetric_tangent(&self) -> bool {
        self.surrogate.decoder.kind != DecoderKind::Melro
    }
}
