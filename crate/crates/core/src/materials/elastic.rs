use serde::{Deserialize, Serialize};

use super::{ConstitutiveModel, InternalState, Update3d};
use crate::error::Result;
use crate::tensors::{Voigt6, Voigt66};

/// Isotropic linear elasticity; also the decoder with no internal variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Young's modulus (MPa).
    pub young: f64,
    pub poisson: f64,
}

impl ElasticParams {
    pub fn new(young: f64, poisson: f64) -> Self {
        Self { young, poisson }
    }

    pub fn is_admissible(&self) -> bool {
        self.young > 0.0 && self.poisson > -1.0 && self.poisson < 0.5
    }

    pub fn bulk(&self) -> f64 {
        self.young / (3.0 * (1.0 - 2.0 * self.poisson))
    }

    pub fn shear(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    /// `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        let mu = self.shear();
        (self.bulk() - 2.0 * mu / 3.0, mu)
    }

    /// Stiffness mapping engineering-shear strain to tensor-shear stress.
    pub fn stiffness(&self) -> Voigt66 {
        let (lambda, mu) = self.lame();
        let mut d = Voigt66::zeros();
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = lambda;
            }
            d[(i, i)] += 2.0 * mu;
            d[(i + 3, i + 3)] = mu;
        }
        d
    }

    pub fn compliance(&self) -> Voigt66 {
        let (e, nu) = (self.young, self.poisson);
        let mut c = Voigt66::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = -nu / e;
            }
            c[(i, i)] = 1.0 / e;
            c[(i + 3, i + 3)] = 1.0 / self.shear();
        }
        c
    }
}

impl ConstitutiveModel for ElasticParams {
    fn elastic(&self) -> ElasticParams {
        *self
    }

    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d> {
        let d = self.stiffness();
        Ok(Update3d { stress: d * eps, tangent: d, state: *prev, delta_gamma: 0.0 })
    }

    fn yield_function(&self, _stress: &Voigt6, _state: &InternalState) -> f64 {
        f64::NEG_INFINITY
    }

    fn yield_scale(&self, _state: &InternalState) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{numerical_tangent, update};
    use crate::tensors::{StrainState, StressState};
    use approx::assert_abs_diff_eq;

    /// Index-notation stiffness `D_ijkl = G(d_ik d_jl + d_il d_jk) + (K - 2G/3) d_ij d_kl`.
    fn index_stiffness(k: f64, g: f64) -> [[[[f64; 3]; 3]; 3]; 3] {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut t = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for kk in 0..3 {
                    for l in 0..3 {
                        t[i][j][kk][l] =
                            g * (d(i, kk) * d(j, l) + d(i, l) * d(j, kk)) + (k - 2.0 * g / 3.0) * d(i, j) * d(kk, l);
                    }
                }
            }
        }
        t
    }

    #[test]
    fn decoupled_when_poisson_zero() {
        let m = ElasticParams::new(2.0, 0.0);
        let r = update(&m, &StrainState::plane_strain([0.1, 0.0, 0.0]), &InternalState::default()).unwrap();
        assert_abs_diff_eq!(r.stress.sig[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig_zz, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_strain_zero_stress() {
        let m = ElasticParams::new(3000.0, 0.3);
        let r = update(&m, &StrainState::plane_strain([0.0; 3]), &InternalState::default()).unwrap();
        assert_eq!(r.stress, StressState::default());
    }

    #[test]
    fn matches_index_notation_assembly() {
        let m = ElasticParams::new(1.0, 0.3);
        let t = index_stiffness(m.bulk(), m.shear());
        let eps = [[0.01, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let mut sig = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        sig[i][j] += t[i][j][k][l] * eps[k][l];
                    }
                }
            }
        }
        let r = update(&m, &StrainState::plane_strain([0.01, 0.0, 0.0]), &InternalState::default()).unwrap();
        assert_abs_diff_eq!(r.stress.sig[0], sig[0][0], epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig[1], sig[1][1], epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig_zz, sig[2][2], epsilon = 1e-15);
        assert_abs_diff_eq!(r.stress.sig[2], sig[0][1], epsilon = 1e-15);
    }

    #[test]
    fn plane_stress_condensation() {
        let m = ElasticParams::new(1000.0, 0.25);
        let s = StrainState::plane_stress([0.01, 0.0, 0.0], 0.0);
        let r = update(&m, &s, &InternalState::default()).unwrap();
        assert!(r.stress.sig_zz.abs() < 1e-10);
        // uniaxial-in-plane plane stress: sig_xx = E/(1-nu^2) eps_xx
        assert_abs_diff_eq!(r.stress.sig[0], 1000.0 / (1.0 - 0.0625) * 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(r.eps_zz, -0.25 / 0.75 * 0.01, epsilon = 1e-12);
        let num = numerical_tangent(&m, &s, &InternalState::default()).unwrap();
        assert!((num.0 - r.tangent.0).norm() <= 1e-6 * r.tangent.0.norm());
    }

    #[test]
    fn compliance_inverts_stiffness() {
        let m = ElasticParams::new(3760.0, 0.3);
        let id = m.stiffness() * m.compliance();
        assert!((id - Voigt66::identity()).norm() < 1e-12);
    }
}
