use serde::{Deserialize, Serialize};

use super::{
    all_finite, deviatoric_projector, engineering, return_map_tangent, ConstitutiveModel, ElasticParams,
    InternalState, Update3d, RETURN_MAP_MAX_ITER, RETURN_MAP_TOL,
};
use crate::error::{Error, Result};
use crate::tensors::{deviator6, stress_invariants6, Voigt6, Voigt66};

/// Pressure-dependent, non-associative plasticity with constant yield stresses.
///
/// `phi = 6 J2 + 2 I1 (sigma_c - sigma_t) - 2 sigma_c sigma_t`
/// `d eps_p = dgamma (3 S + (1 - 2 nu_p) / (1 + nu_p) I1 1)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelroParams {
    pub elastic: ElasticParams,
    /// Tensile yield stress (MPa).
    pub sigma_t: f64,
    /// `sigma_c / sigma_t`.
    pub ratio_ct: f64,
    /// Plastic Poisson's ratio.
    pub nu_p: f64,
}

impl MelroParams {
    pub fn new(elastic: ElasticParams, sigma_t: f64, ratio_ct: f64, nu_p: f64) -> Self {
        Self { elastic, sigma_t, ratio_ct, nu_p }
    }

    pub fn sigma_c(&self) -> f64 {
        self.sigma_t * self.ratio_ct
    }
}

impl ConstitutiveModel for MelroParams {
    fn elastic(&self) -> ElasticParams {
        self.elastic
    }

    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d> {
        let (u, _) = return_map(&self.elastic, self.sigma_t, self.sigma_c(), self.nu_p, eps, prev, true)?;
        Ok(u)
    }

    fn yield_function(&self, stress: &Voigt6, _state: &InternalState) -> f64 {
        yield_value(stress, self.sigma_t, self.sigma_c())
    }

    fn yield_scale(&self, _state: &InternalState) -> f64 {
        2.0 * self.sigma_t * self.sigma_c()
    }
}

pub(crate) fn yield_value(stress: &Voigt6, sigma_t: f64, sigma_c: f64) -> f64 {
    let (i1, _, j2) = stress_invariants6(stress);
    6.0 * j2 + 2.0 * i1 * (sigma_c - sigma_t) - 2.0 * sigma_c * sigma_t
}

/// Backward-Euler return map with frozen yield stresses. Returns the update
/// (with `kappa` untouched) and the plastic strain increment. Without
/// `with_tangent` the plastic tangent is left as zeros.
pub(crate) fn return_map(
    elastic: &ElasticParams,
    sigma_t: f64,
    sigma_c: f64,
    nu_p: f64,
    eps: &Voigt6,
    prev: &InternalState,
    with_tangent: bool,
) -> Result<(Update3d, Voigt6)> {
    let diverged = |iterations, residual| Error::ReturnMapDiverged { iterations, residual };
    if !all_finite(&[sigma_t, sigma_c, nu_p])
        || sigma_t <= 0.0
        || sigma_c <= 0.0
        || nu_p <= -1.0
        || !elastic.is_admissible()
        || !all_finite(eps.as_slice())
    {
        return Err(diverged(0, f64::NAN));
    }
    let de = elastic.stiffness();
    let trial = de * (eps - prev.eps_p6());
    let (i1_tr, _, j2_tr) = stress_invariants6(&trial);
    let scale = 2.0 * sigma_c * sigma_t;
    let phi_tr = 6.0 * j2_tr + 2.0 * i1_tr * (sigma_c - sigma_t) - scale;
    if phi_tr <= 0.0 {
        return Ok((Update3d { stress: trial, tangent: de, state: *prev, delta_gamma: 0.0 }, Voigt6::zeros()));
    }

    let g = elastic.shear();
    let k = elastic.bulk();
    let alpha = (1.0 - 2.0 * nu_p) / (1.0 + nu_p);
    let a = 6.0 * j2_tr;
    let b = 2.0 * (sigma_c - sigma_t) * i1_tr;
    // S = S_tr / (1 + 6 G x), I1 = I1_tr / (1 + 9 K alpha x)
    let phi = |x: f64| {
        let ds = 1.0 + 6.0 * g * x;
        let dv = 1.0 + 9.0 * k * alpha * x;
        let f = a / (ds * ds) + b / dv - scale;
        let df = -12.0 * g * a / (ds * ds * ds) - 9.0 * k * alpha * b / (dv * dv);
        (f, df)
    };

    // bracket the root on x >= 0; phi(0) > 0 and phi -> -scale as x grows
    let mut lo = 0.0;
    let mut hi = 1.0 / (6.0 * g);
    let mut f_hi = phi(hi).0;
    let mut expansions = 0;
    while !(f_hi < 0.0) {
        if expansions == 200 || !f_hi.is_finite() {
            return Err(diverged(0, phi_tr));
        }
        lo = hi;
        hi *= 2.0;
        f_hi = phi(hi).0;
        expansions += 1;
    }

    let tol = RETURN_MAP_TOL * scale;
    let mut x = lo;
    let (mut f, mut df) = phi(x);
    let mut iterations = 0;
    while f.abs() > tol {
        if iterations == RETURN_MAP_MAX_ITER {
            return Err(diverged(iterations, f));
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / df;
        x = if newton > lo && newton < hi && newton.is_finite() { newton } else { 0.5 * (lo + hi) };
        (f, df) = phi(x);
        iterations += 1;
    }

    let dgamma = x;
    let s_tr = deviator6(&trial);
    let s = s_tr / (1.0 + 6.0 * g * dgamma);
    let i1 = i1_tr / (1.0 + 9.0 * k * alpha * dgamma);
    let mut stress = s;
    for i in 0..3 {
        stress[i] += i1 / 3.0;
    }

    let unit = Voigt6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
    let flow = engineering(&(s * 3.0)) + unit * (alpha * i1);
    let tangent = if with_tangent {
        let normal = engineering(&(s * 6.0)) + unit * (2.0 * (sigma_c - sigma_t));
        let dm: Voigt66 = deviatoric_projector() * 3.0 + unit * unit.transpose() * alpha;
        return_map_tangent(&elastic.compliance(), dgamma, &dm, &flow, &normal)
    } else {
        Voigt66::zeros()
    };

    let deps_p = flow * dgamma;
    let mut state = *prev;
    let eps_p = prev.eps_p6() + deps_p;
    state.eps_p.copy_from_slice(eps_p.as_slice());
    Ok((Update3d { stress, tangent, state, delta_gamma: dgamma }, deps_p))
}
