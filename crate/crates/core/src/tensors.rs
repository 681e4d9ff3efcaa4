//! Small-strain tensor algebra for two-dimensional problems.
//!
//! Planar states are stored in Voigt form `(xx, yy, xy)` together with the
//! out-of-plane normal component. Strains use engineering shear
//! `gamma_xy = 2 eps_xy`, stresses store the tensor component `tau_xy`.
//! Three-dimensional work (return maps, invariants) uses six-component
//! vectors ordered `(xx, yy, zz, xy, yz, zx)` with the same shear conventions.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Six-component symmetric tensor in Voigt order `(xx, yy, zz, xy, yz, zx)`.
pub type Voigt6 = Vector6<f64>;
/// Fourth-order operator acting on [`Voigt6`] vectors.
pub type Voigt66 = Matrix6<f64>;

/// Two-dimensional reduction of the 3D small-strain problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[serde(alias = "PlaneStrain")]
    PlaneStrain,
    #[serde(alias = "PlaneStress")]
    PlaneStress,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PlaneStrain => "plane_strain",
            Regime::PlaneStress => "plane_stress",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane_strain" | "PlaneStrain" => Ok(Regime::PlaneStrain),
            "plane_stress" | "PlaneStress" => Ok(Regime::PlaneStress),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Planar strain state `(eps_xx, eps_yy, gamma_xy)` plus `eps_zz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrainState {
    pub eps: [f64; 3],
    pub eps_zz: f64,
    pub regime: Regime,
}

impl StrainState {
    pub fn plane_strain(eps: [f64; 3]) -> Self {
        Self { eps, eps_zz: 0.0, regime: Regime::PlaneStrain }
    }

    /// Plane-stress strain; `eps_zz` is normally filled in by a material update.
    pub fn plane_stress(eps: [f64; 3], eps_zz: f64) -> Self {
        Self { eps, eps_zz, regime: Regime::PlaneStress }
    }

    pub fn zero(regime: Regime) -> Self {
        Self { eps: [0.0; 3], eps_zz: 0.0, regime }
    }

    /// Euclidean norm of the three in-plane Voigt components.
    pub fn norm(&self) -> f64 {
        self.eps.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn voigt6(&self) -> Voigt6 {
        let zz = match self.regime {
            Regime::PlaneStrain => 0.0,
            Regime::PlaneStress => self.eps_zz,
        };
        Voigt6::new(self.eps[0], self.eps[1], zz, self.eps[2], 0.0, 0.0)
    }

    /// Full symmetric tensor (tensor shear components).
    pub fn tensor(&self) -> Matrix3<f64> {
        let e = self.voigt6();
        strain_tensor(&e)
    }
}

/// Planar stress state `(sig_xx, sig_yy, tau_xy)` plus `sig_zz`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StressState {
    pub sig: [f64; 3],
    pub sig_zz: f64,
}

impl StressState {
    pub fn new(sig: [f64; 3], sig_zz: f64) -> Self {
        Self { sig, sig_zz }
    }

    pub fn from_voigt6(s: &Voigt6) -> Self {
        Self { sig: [s[0], s[1], s[3]], sig_zz: s[2] }
    }

    pub fn voigt6(&self) -> Voigt6 {
        Voigt6::new(self.sig[0], self.sig[1], self.sig_zz, self.sig[2], 0.0, 0.0)
    }

    pub fn planar(&self) -> Vector3<f64> {
        Vector3::new(self.sig[0], self.sig[1], self.sig[2])
    }

    /// Frobenius norm of the full stress tensor.
    pub fn norm(&self) -> f64 {
        stress_norm(&self.voigt6())
    }

    pub fn rotated(&self, angle: f64) -> Self {
        let r = rotate_stress6(&self.voigt6(), angle);
        Self::from_voigt6(&r)
    }
}

/// Consistent algorithmic tangent `d sigma / d eps` in planar Voigt form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent(pub Matrix3<f64>);

impl Tangent {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `||D - D^T|| / ||D||`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.0.norm();
        if n == 0.0 {
            return 0.0;
        }
        (self.0 - self.0.transpose()).norm() / n
    }
}

pub(crate) fn strain_tensor(e: &Voigt6) -> Matrix3<f64> {
    Matrix3::new(
        e[0],
        0.5 * e[3],
        0.5 * e[5],
        0.5 * e[3],
        e[1],
        0.5 * e[4],
        0.5 * e[5],
        0.5 * e[4],
        e[2],
    )
}

pub(crate) fn stress_tensor(s: &Voigt6) -> Matrix3<f64> {
    Matrix3::new(s[0], s[3], s[5], s[3], s[1], s[4], s[5], s[4], s[2])
}

pub(crate) fn strain_from_tensor(t: &Matrix3<f64>) -> Voigt6 {
    Voigt6::new(t[(0, 0)], t[(1, 1)], t[(2, 2)], 2.0 * t[(0, 1)], 2.0 * t[(1, 2)], 2.0 * t[(0, 2)])
}

pub(crate) fn stress_from_tensor(t: &Matrix3<f64>) -> Voigt6 {
    Voigt6::new(t[(0, 0)], t[(1, 1)], t[(2, 2)], t[(0, 1)], t[(1, 2)], t[(0, 2)])
}

/// Frobenius norm of a stress-like Voigt vector.
pub fn stress_norm(s: &Voigt6) -> f64 {
    (s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])).sqrt()
}

/// Trace and `tr(A^2)` of a symmetric tensor given its normal and tensor-shear parts.
fn trace_and_square(normal: [f64; 3], shear: [f64; 3]) -> (f64, f64) {
    let tr = normal[0] + normal[1] + normal[2];
    let sq = normal.iter().map(|v| v * v).sum::<f64>() + 2.0 * shear.iter().map(|v| v * v).sum::<f64>();
    (tr, sq)
}

fn invariants_from(tr: f64, tr_sq: f64) -> (f64, f64, f64) {
    let i2 = 0.5 * (tr * tr - tr_sq);
    // J2 = I1^2/3 - I2 = (tr(A^2) - I1^2/3)/2, evaluated in the cancellation-free form
    let j2 = (0.5 * (tr_sq - tr * tr / 3.0)).max(0.0);
    (tr, i2, j2)
}

/// `(I1, I2, J2)` of a strain-like Voigt vector (engineering shear).
pub fn strain_invariants6(e: &Voigt6) -> (f64, f64, f64) {
    let (tr, sq) = trace_and_square([e[0], e[1], e[2]], [0.5 * e[3], 0.5 * e[4], 0.5 * e[5]]);
    invariants_from(tr, sq)
}

/// `(I1, I2, J2)` of a stress-like Voigt vector.
pub fn stress_invariants6(s: &Voigt6) -> (f64, f64, f64) {
    let (tr, sq) = trace_and_square([s[0], s[1], s[2]], [s[3], s[4], s[5]]);
    invariants_from(tr, sq)
}

/// First, second and deviatoric-second invariants of the full 3D strain tensor.
pub fn strain_invariants(e: &StrainState) -> (f64, f64, f64) {
    strain_invariants6(&e.voigt6())
}

/// `(I1, J2)` of the full 3D stress tensor.
pub fn stress_invariants(s: &StressState) -> (f64, f64) {
    let (i1, _, j2) = stress_invariants6(&s.voigt6());
    (i1, j2)
}

/// Deviatoric part of a stress-like Voigt vector.
pub fn deviator6(s: &Voigt6) -> Voigt6 {
    let p = (s[0] + s[1] + s[2]) / 3.0;
    Voigt6::new(s[0] - p, s[1] - p, s[2] - p, s[3], s[4], s[5])
}

/// Deviatoric stress `S = sigma - I1/3 * 1` as `(xx, yy, zz, xy, yz, zx)`.
pub fn deviatoric_stress(s: &StressState) -> [f64; 6] {
    let d = deviator6(&s.voigt6());
    [d[0], d[1], d[2], d[3], d[4], d[5]]
}

fn rotation(angle: f64) -> Matrix3<f64> {
    let (sn, c) = angle.sin_cos();
    Matrix3::new(c, -sn, 0.0, sn, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotates a strain-like Voigt vector about the z axis.
pub fn rotate_strain6(e: &Voigt6, angle: f64) -> Voigt6 {
    let r = rotation(angle);
    strain_from_tensor(&(r * strain_tensor(e) * r.transpose()))
}

/// Rotates a stress-like Voigt vector about the z axis.
pub fn rotate_stress6(s: &Voigt6, angle: f64) -> Voigt6 {
    let r = rotation(angle);
    stress_from_tensor(&(r * stress_tensor(s) * r.transpose()))
}

/// In-plane rotation `R eps R^T` of a plane-strain state.
pub fn rotate_in_plane(e: &StrainState, angle: f64) -> Result<StrainState> {
    if e.regime != Regime::PlaneStrain {
        return Err(Error::RequiresPlaneStrain);
    }
    let r = rotate_strain6(&e.voigt6(), angle);
    Ok(StrainState::plane_strain([r[0], r[1], r[3]]))
}
