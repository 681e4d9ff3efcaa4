//! Constitutive decoders behind one update contract.
//!
//! Every model implements [`ConstitutiveModel::update_3d`] on full
//! six-component strains. [`update`] reduces that to the planar regimes:
//! plane strain extracts the in-plane block, plane stress iterates on
//! `eps_zz` until `sig_zz` vanishes and condenses the tangent.

mod elastic;
mod j2;
mod melro;
mod reference;

pub use elastic::ElasticParams;
pub use j2::J2Params;
pub use melro::MelroParams;
pub use reference::{HardeningLaw, ReferenceMaterial};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{Regime, StrainState, StressState, Tangent, Voigt6, Voigt66};

/// Newton iteration cap for scalar return maps.
pub const RETURN_MAP_MAX_ITER: usize = 50;
/// Relative residual tolerance for return maps (scaled by the yield magnitude).
pub const RETURN_MAP_TOL: f64 = 1e-10;
/// Iteration cap for the plane-stress `eps_zz` loop.
pub const PLANE_STRESS_MAX_ITER: usize = 20;

/// History variables: plastic strain (engineering shear) and accumulated
/// equivalent plastic strain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InternalState {
    pub eps_p: [f64; 6],
    pub kappa: f64,
}

impl InternalState {
    /// Number of scalars in the flattened representation.
    pub const LEN: usize = 7;
    /// Flattened index of `kappa`.
    pub const KAPPA: usize = 6;

    pub fn plastic(eps_p: [f64; 6], kappa: f64) -> Self {
        Self { eps_p, kappa }
    }

    pub fn eps_p6(&self) -> Voigt6 {
        Voigt6::from_column_slice(&self.eps_p)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let p = &self.eps_p;
        [p[0], p[1], p[2], p[3], p[4], p[5], self.kappa]
    }

    pub fn from_array(a: &[f64; 7]) -> Self {
        Self { eps_p: [a[0], a[1], a[2], a[3], a[4], a[5]], kappa: a[6] }
    }

    /// In-plane components `(eps_p_xx, eps_p_yy, gamma_p_xy)`.
    pub fn planar(&self) -> [f64; 3] {
        [self.eps_p[0], self.eps_p[1], self.eps_p[3]]
    }

    pub fn rotated(&self, angle: f64) -> Self {
        let r = crate::tensors::rotate_strain6(&self.eps_p6(), angle);
        Self { eps_p: [r[0], r[1], r[2], r[3], r[4], r[5]], kappa: self.kappa }
    }
}

/// Result of a full 3D update.
#[derive(Debug, Clone, Copy)]
pub struct Update3d {
    pub stress: Voigt6,
    pub tangent: Voigt66,
    pub state: InternalState,
    /// Plastic multiplier increment of this step (zero for elastic steps).
    pub delta_gamma: f64,
}

/// Output of a planar update `(sigma, D, alpha)`.
#[derive(Debug, Clone, Copy)]
pub struct MaterialResponse {
    pub stress: StressState,
    pub tangent: Tangent,
    pub state: InternalState,
    /// Out-of-plane strain: zero in plane strain, solved for in plane stress.
    pub eps_zz: f64,
    pub delta_gamma: f64,
}

impl MaterialResponse {
    /// The strain this response was computed at, with `eps_zz` filled in.
    pub fn strain(&self, input: &StrainState) -> StrainState {
        StrainState { eps: input.eps, eps_zz: self.eps_zz, regime: input.regime }
    }
}

pub trait ConstitutiveModel {
    fn elastic(&self) -> ElasticParams;

    /// Maps total strain and previous history to stress, consistent tangent
    /// and new history. Must not depend on anything but its arguments.
    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d>;

    /// Yield function value at a stress state for the given history
    /// (negative inside the elastic domain). Elastic models return `-inf`.
    fn yield_function(&self, stress: &Voigt6, state: &InternalState) -> f64;

    /// Scale used to express yield residuals in relative terms.
    fn yield_scale(&self, state: &InternalState) -> f64;
}

/// Planar update dispatching on the strain's regime.
pub fn update<M: ConstitutiveModel + ?Sized>(
    model: &M,
    strain: &StrainState,
    prev: &InternalState,
) -> Result<MaterialResponse> {
    match strain.regime {
        Regime::PlaneStrain => {
            let u = model.update_3d(&strain.voigt6(), prev)?;
            Ok(MaterialResponse {
                stress: StressState::from_voigt6(&u.stress),
                tangent: Tangent(planar_block(&u.tangent)),
                state: u.state,
                eps_zz: 0.0,
                delta_gamma: u.delta_gamma,
            })
        }
        Regime::PlaneStress => plane_stress_update(model, strain, prev),
    }
}

const PLANAR: [usize; 3] = [0, 1, 3];

fn planar_block(d: &Voigt66) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| d[(PLANAR[i], PLANAR[j])])
}

fn plane_stress_update<M: ConstitutiveModel + ?Sized>(
    model: &M,
    strain: &StrainState,
    prev: &InternalState,
) -> Result<MaterialResponse> {
    let el = model.elastic();
    let (lambda, mu) = el.lame();
    let p = &prev.eps_p;
    // elastic predictor for sig_zz = 0 with the previous plastic strain
    let mut eps_zz = p[2] - lambda / (lambda + 2.0 * mu) * ((strain.eps[0] - p[0]) + (strain.eps[1] - p[1]));
    let mut last = f64::NAN;
    for _ in 0..PLANE_STRESS_MAX_ITER {
        let e = Voigt6::new(strain.eps[0], strain.eps[1], eps_zz, strain.eps[2], 0.0, 0.0);
        let u = model.update_3d(&e, prev)?;
        let szz = u.stress[2];
        let scale = crate::tensors::stress_norm(&u.stress);
        // tight tolerance keeps finite differences of the update clean; a
        // stagnating residual that is already small is accepted
        let stalled = szz.abs() >= 0.5 * last.abs() && szz.abs() <= 1e-9 * scale + 1e-12;
        last = szz;
        if szz.abs() <= 1e-13 * scale + 1e-13 || stalled {
            let d = &u.tangent;
            let dzz = d[(2, 2)];
            let cond = Matrix3::from_fn(|i, j| {
                let (a, b) = (PLANAR[i], PLANAR[j]);
                d[(a, b)] - d[(a, 2)] * d[(2, b)] / dzz
            });
            return Ok(MaterialResponse {
                stress: StressState::from_voigt6(&u.stress),
                tangent: Tangent(cond),
                state: u.state,
                eps_zz,
                delta_gamma: u.delta_gamma,
            });
        }
        let dzz = u.tangent[(2, 2)];
        if !(dzz.is_finite() && dzz.abs() > 0.0) {
            break;
        }
        eps_zz -= szz / dzz;
    }
    Err(Error::PlaneStressDiverged { iterations: PLANE_STRESS_MAX_ITER, residual: last })
}

/// Central finite-difference tangent of [`update`] with respect to the
/// in-plane strain components.
pub fn numerical_tangent<M: ConstitutiveModel + ?Sized>(
    model: &M,
    strain: &StrainState,
    prev: &InternalState,
) -> Result<Tangent> {
    let h = 1e-6 * strain.norm().max(1e-8);
    let mut d = Matrix3::zeros();
    for j in 0..3 {
        let mut plus = *strain;
        let mut minus = *strain;
        plus.eps[j] += h;
        minus.eps[j] -= h;
        let sp = update(model, &plus, prev)?.stress.planar();
        let sm = update(model, &minus, prev)?.stress.planar();
        d.set_column(j, &((sp - sm) / (2.0 * h)));
    }
    Ok(Tangent(d))
}

/// Consistent tangent of a backward-Euler return map with frozen yield
/// parameters:
///
/// `Xi = (C + dgamma * dm/dsigma)^-1`,
/// `D = Xi - (Xi m)(n^T Xi) / (n^T Xi m)`
///
/// where `m` is the flow direction and `n = d phi / d sigma`, both strain-like.
pub(crate) fn return_map_tangent(
    compliance: &Voigt66,
    delta_gamma: f64,
    dm_dsigma: &Voigt66,
    flow: &Voigt6,
    normal: &Voigt6,
) -> Voigt66 {
    let a = compliance + dm_dsigma * delta_gamma;
    let xi = a.try_inverse().unwrap_or_else(|| Voigt66::from_element(f64::NAN));
    let xm = xi * flow;
    let nx = normal.transpose() * xi;
    let denom = (nx * flow)[0];
    xi - xm * nx / denom
}

/// `d S_eng / d sigma` in mixed Voigt form: deviatoric projector with the
/// engineering factor on shear rows.
pub(crate) fn deviatoric_projector() -> Voigt66 {
    let mut p = Voigt66::zeros();
    for i in 0..3 {
        for j in 0..3 {
            p[(i, j)] = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
        }
        p[(i + 3, i + 3)] = 2.0;
    }
    p
}

/// Converts a stress-like tensor vector into its strain-like (engineering
/// shear) counterpart, e.g. for gradients of scalar functions of stress.
pub(crate) fn engineering(v: &Voigt6) -> Voigt6 {
    Voigt6::new(v[0], v[1], v[2], 2.0 * v[3], 2.0 * v[4], 2.0 * v[5])
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
