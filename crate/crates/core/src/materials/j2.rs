use serde::{Deserialize, Serialize};

use super::{
    all_finite, deviatoric_projector, engineering, return_map_tangent, ConstitutiveModel, ElasticParams,
    InternalState, Update3d,
};
use crate::error::{Error, Result};
use crate::tensors::{deviator6, stress_norm, Voigt6};

/// Perfectly plastic von Mises model with associative flow.
///
/// `phi = sqrt(3 J2) - sigma_y`, `d eps_p = dgamma sqrt(3/2) S / ||S||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct J2Params {
    pub elastic: ElasticParams,
    pub yield_stress: f64,
}

const SQRT_3_2: f64 = 1.224_744_871_391_589;

impl J2Params {
    pub fn new(elastic: ElasticParams, yield_stress: f64) -> Self {
        Self { elastic, yield_stress }
    }

    fn equivalent(s: &Voigt6) -> f64 {
        SQRT_3_2 * stress_norm(&deviator6(s))
    }
}

impl ConstitutiveModel for J2Params {
    fn elastic(&self) -> ElasticParams {
        self.elastic
    }

    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d> {
        let sy = self.yield_stress;
        if !(sy.is_finite() && sy > 0.0 && self.elastic.is_admissible()) || !all_finite(eps.as_slice()) {
            return Err(Error::ReturnMapDiverged { iterations: 0, residual: f64::NAN });
        }
        let de = self.elastic.stiffness();
        let trial = de * (eps - prev.eps_p6());
        let s_tr = deviator6(&trial);
        let s_norm_tr = stress_norm(&s_tr);
        let q_tr = SQRT_3_2 * s_norm_tr;
        if q_tr - sy <= 0.0 {
            return Ok(Update3d { stress: trial, tangent: de, state: *prev, delta_gamma: 0.0 });
        }

        // r(dgamma) = q_tr - 3 G dgamma - sigma_y is linear
        let g = self.elastic.shear();
        let dgamma = (q_tr - sy) / (3.0 * g);

        let n = s_tr / s_norm_tr;
        let stress = trial - n * (2.0 * g * SQRT_3_2 * dgamma);
        let flow = engineering(&n) * SQRT_3_2;
        let eps_p = prev.eps_p6() + flow * dgamma;

        let s_norm = stress_norm(&deviator6(&stress));
        let ne = engineering(&n);
        let dm = (deviatoric_projector() - ne * ne.transpose()) * (SQRT_3_2 / s_norm);
        let tangent = return_map_tangent(&self.elastic.compliance(), dgamma, &dm, &flow, &flow);

        let mut state = *prev;
        state.eps_p.copy_from_slice(eps_p.as_slice());
        Ok(Update3d { stress, tangent, state, delta_gamma: dgamma })
    }

    fn yield_function(&self, stress: &Voigt6, _state: &InternalState) -> f64 {
        Self::equivalent(stress) - self.yield_stress
    }

    fn yield_scale(&self, _state: &InternalState) -> f64 {
        self.yield_stress
    }
}
