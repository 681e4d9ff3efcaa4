use serde::{Deserialize, Serialize};

use super::melro::{return_map, yield_value};
use super::{ConstitutiveModel, ElasticParams, InternalState, MelroParams, Update3d, RETURN_MAP_MAX_ITER};
use crate::error::Result;
use crate::tensors::{Voigt6, Voigt66};

const TANGENT_STEP: f64 = 1e-7;

/// Saturating exponential `s(k) = s0 + (s_inf - s0)(1 - exp(-k / k0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardeningLaw {
    pub initial: f64,
    pub saturated: f64,
    pub kappa0: f64,
}

impl HardeningLaw {
    pub fn new(initial: f64, saturated: f64, kappa0: f64) -> Self {
        Self { initial, saturated, kappa0 }
    }

    pub fn eval(&self, kappa: f64) -> f64 {
        self.initial + (self.saturated - self.initial) * (1.0 - (-kappa.max(0.0) / self.kappa0).exp())
    }
}

/// Synthetic ground truth: Melro plasticity whose yield stresses harden with
/// the accumulated equivalent plastic strain `kappa`.
///
/// Integrated by backward Euler with the yield stresses taken at the end of
/// the step; the tangent is a central finite difference of that update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMaterial {
    pub elastic: ElasticParams,
    pub tension: HardeningLaw,
    pub compression: HardeningLaw,
    pub nu_p: f64,
}

impl Default for ReferenceMaterial {
    fn default() -> Self {
        Self {
            elastic: ElasticParams::new(3760.0, 0.3),
            tension: HardeningLaw::new(60.0, 90.0, 0.01),
            compression: HardeningLaw::new(90.0, 135.0, 0.01),
            nu_p: 0.3,
        }
    }
}

impl ReferenceMaterial {
    /// `(sigma_t, sigma_c)` at a given `kappa`.
    pub fn yield_stresses(&self, kappa: f64) -> (f64, f64) {
        (self.tension.eval(kappa), self.compression.eval(kappa))
    }

    /// One backward-Euler step with the yield stresses evaluated at the end
    /// of the step. The hardening increment is found by regula falsi on
    /// `g(dk) = dk`, where `g` is the equivalent plastic strain of a return
    /// map with stresses frozen at `kappa + dk` (`g` is non-increasing).
    fn implicit_step(&self, eps: &Voigt6, prev: &InternalState) -> Result<(Update3d, f64)> {
        let run = |dk: f64| -> Result<(Update3d, f64)> {
            let (st, sc) = self.yield_stresses(prev.kappa + dk);
            let (u, deps_p) = return_map(&self.elastic, st, sc, self.nu_p, eps, prev, false)?;
            Ok((u, equivalent_increment(&deps_p)))
        };
        let (u0, g0) = run(0.0)?;
        if g0 == 0.0 {
            return Ok((u0, 0.0));
        }
        let (mut lo, mut h_lo) = (0.0, g0);
        let (mut hi, mut h_hi) = (g0, run(g0)?.1 - g0);
        if h_hi >= 0.0 {
            return Ok((run(g0)?.0, g0));
        }
        let mut side = 0;
        let mut best = (u0, 0.0);
        for _ in 0..RETURN_MAP_MAX_ITER {
            let x = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
            let (u, g) = run(x)?;
            let h = g - x;
            best = (u, x);
            if h.abs() <= 1e-13 * g0 || hi - lo <= 1e-15 * g0 {
                break;
            }
            // Illinois modification keeps both ends moving
            if h > 0.0 {
                lo = x;
                h_lo = h;
                if side == 1 {
                    h_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = x;
                h_hi = h;
                if side == -1 {
                    h_lo *= 0.5;
                }
                side = -1;
            }
        }
        Ok(best)
    }

    /// Constant-parameter Melro model frozen at `kappa`.
    pub fn frozen(&self, kappa: f64) -> MelroParams {
        let (st, sc) = self.yield_stresses(kappa);
        MelroParams::new(self.elastic, st, sc / st, self.nu_p)
    }
}

/// `sqrt(2/3) ||d eps_p||` with tensor shear components.
pub(crate) fn equivalent_increment(deps_p: &Voigt6) -> f64 {
    let d = deps_p;
    let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + 0.5 * (d[3] * d[3] + d[4] * d[4] + d[5] * d[5]);
    (2.0 / 3.0 * sq).sqrt()
}

impl ConstitutiveModel for ReferenceMaterial {
    fn elastic(&self) -> ElasticParams {
        self.elastic
    }

    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d> {
        let (mut u, dk) = self.implicit_step(eps, prev)?;
        u.state.kappa = prev.kappa + dk;
        if u.delta_gamma == 0.0 {
            u.tangent = self.elastic.stiffness();
            return Ok(u);
        }
        // central differences; out-of-plane shear never enters the planar reductions
        let g = self.elastic.shear();
        u.tangent = Voigt66::zeros();
        for j in 0..4 {
            let mut plus = *eps;
            let mut minus = *eps;
            plus[j] += TANGENT_STEP;
            minus[j] -= TANGENT_STEP;
            let sp = self.implicit_step(&plus, prev)?.0.stress;
            let sm = self.implicit_step(&minus, prev)?.0.stress;
            u.tangent.set_column(j, &((sp - sm) / (2.0 * TANGENT_STEP)));
        }
        u.tangent[(4, 4)] = g;
        u.tangent[(5, 5)] = g;
        Ok(u)
    }

    fn yield_function(&self, stress: &Voigt6, state: &InternalState) -> f64 {
        let (st, sc) = self.yield_stresses(state.kappa);
        yield_value(stress, st, sc)
    }

    fn yield_scale(&self, state: &InternalState) -> f64 {
        let (st, sc) = self.yield_stresses(state.kappa);
        2.0 * st * sc
    }
}
