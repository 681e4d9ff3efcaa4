//! Backpropagation through the decoder and through time.
//!
//! Decoder partials come from central differences; the encoder chain is
//! exact. The adjoint of the internal state is carried backwards so the
//! cost stays linear in the path length.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

use super::HybridSurrogate;
use crate::encoder::{ForwardCache, Mode};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::materials::InternalState;
use crate::tensors::{StrainState, StressState};

/// Relative finite-difference step for decoder partials.
pub const FD_RELATIVE: f64 = 1e-6;
/// Absolute floor of the finite-difference step.
pub const FD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct StepCache {
    pub features: FeatureVector,
    pub encoder: ForwardCache,
    pub theta: Vec<f64>,
    pub alpha: InternalState,
    pub stress: StressState,
    /// `d sigma_t / d theta_t` (3 x n_theta).
    pub ds_dtheta: DMatrix<f64>,
    /// `d sigma_t / d alpha_{t-1}` (3 x n_alpha).
    pub ds_dalpha: DMatrix<f64>,
    /// `d alpha_t / d theta_t` (n_alpha x n_theta).
    pub da_dtheta: DMatrix<f64>,
    /// `d alpha_t / d alpha_{t-1}` (n_alpha x n_alpha).
    pub da_dalpha: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PathLossCache {
    pub steps: Vec<StepCache>,
}

impl PathLossCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn predictions(&self) -> Vec<StressState> {
        self.steps.iter().map(|s| s.stress).collect()
    }
}

fn fd_step(x: f64) -> f64 {
    (FD_RELATIVE * x.abs()).max(FD_FLOOR)
}

/// Central difference of a vector function along one coordinate, retried
/// once with a tenth of the step when a perturbed evaluation fails.
fn central<F>(f: F, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let attempt = |h: f64| -> Result<DVector<f64>> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    attempt(h).or_else(|_| attempt(0.1 * h))
}

impl HybridSurrogate {
    /// Decoder output `(sigma, alpha_active)` as one vector.
    fn decoder_outputs(&self, theta: &[f64], strain: &StrainState, prev: &InternalState) -> Result<DVector<f64>> {
        let r = self.decoder_update(theta, strain, prev)?;
        let active = self.decoder.kind.active_state();
        let a = r.state.to_array();
        let sig = r.stress.planar();
        Ok(DVector::from_iterator(3 + active.len(), sig.iter().copied().chain(active.iter().map(|&i| a[i]))))
    }

    /// Forward sweep storing everything the reverse sweep needs.
    pub fn forward_path<R: Rng + ?Sized>(
        &self,
        strains: &[StrainState],
        features: &[FeatureVector],
        mode: Mode,
        rng: &mut R,
    ) -> Result<PathLossCache> {
        if strains.len() != features.len() {
            return Err(Error::DimensionMismatch { expected: strains.len(), got: features.len() });
        }
        let active = self.decoder.kind.active_state();
        let (nt, na) = (self.decoder.kind.num_params(), active.len());
        let mut alpha = InternalState::default();
        let mut steps = Vec::with_capacity(strains.len());
        for (t, (strain, phi)) in strains.iter().zip(features).enumerate() {
            let step = (|| -> Result<StepCache> {
                let (theta, encoder) = self.network.forward(phi, mode, rng)?;
                let r = self.decoder_update(&theta, strain, &alpha)?;
                let mut ds_dtheta = DMatrix::zeros(3, nt);
                let mut da_dtheta = DMatrix::zeros(na, nt);
                for j in 0..nt {
                    let col = central(
                        |h| {
                            let mut th = theta.clone();
                            th[j] += h;
                            self.decoder_outputs(&th, strain, &alpha)
                        },
                        fd_step(theta[j]),
                    )?;
                    ds_dtheta.set_column(j, &col.rows(0, 3));
                    da_dtheta.set_column(j, &col.rows(3, na));
                }
                let mut ds_dalpha = DMatrix::zeros(3, na);
                let mut da_dalpha = DMatrix::zeros(na, na);
                let base = alpha.to_array();
                for (j, &k) in active.iter().enumerate() {
                    let col = central(
                        |h| {
                            let mut a = base;
                            a[k] += h;
                            self.decoder_outputs(&theta, strain, &InternalState::from_array(&a))
                        },
                        fd_step(base[k]),
                    )?;
                    ds_dalpha.set_column(j, &col.rows(0, 3));
                    da_dalpha.set_column(j, &col.rows(3, na));
                }
                Ok(StepCache {
                    features: phi.clone(),
                    encoder,
                    theta,
                    alpha: r.state,
                    stress: r.stress,
                    ds_dtheta,
                    ds_dalpha,
                    da_dtheta,
                    da_dalpha,
                })
            })()
            .map_err(|e| e.at_step(t))?;
            alpha = step.alpha;
            steps.push(step);
        }
        Ok(PathLossCache { steps })
    }

    /// Loss of the cached sweep against `target` and its gradient with
    /// respect to the encoder weights.
    pub fn path_gradient(&self, cache: &PathLossCache, target: &[StressState]) -> Result<(f64, Vec<f64>)> {
        if cache.len() != target.len() {
            return Err(Error::DimensionMismatch { expected: cache.len(), got: target.len() });
        }
        let na = self.decoder.kind.active_state().len();
        let mut grad = vec![0.0; self.network.num_weights()];
        let mut lambda = DVector::zeros(na);
        let mut total = 0.0;
        for (step, tgt) in cache.steps.iter().zip(target).rev() {
            let r: Vector3<f64> = step.stress.planar() - tgt.planar();
            total += 0.5 * r.norm_squared();
            let r = DVector::from_column_slice(r.as_slice());
            let g_theta = step.ds_dtheta.tr_mul(&r) + step.da_dtheta.tr_mul(&lambda);
            lambda = step.ds_dalpha.tr_mul(&r) + step.da_dalpha.tr_mul(&lambda);
            self.network.backward_into(&step.encoder, g_theta.as_slice(), &mut grad)?;
        }
        Ok((total, grad))
    }

    /// Forward sweep plus reverse accumulation for one path.
    pub fn loss_and_gradient<R: Rng + ?Sized>(
        &self,
        strains: &[StrainState],
        features: &[FeatureVector],
        target: &[StressState],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_path(strains, features, mode, rng)?;
        self.path_gradient(&cache, target)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::surrogate;
    use super::super::{loss, DecoderKind};
    use super::*;
    use crate::features::FeatureKind;
    use crate::materials::ReferenceMaterial;
    use crate::paths::{generate_path, PathControl, PathKind};
    use crate::tensors::Regime;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(kind: PathKind, regime: Regime, seed: u64) -> crate::paths::StrainPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = crate::paths::sample_direction(&mut rng);
        generate_path(kind, d, regime, &ReferenceMaterial::default(), &PathControl::default(), &mut rng).unwrap().0
    }

    fn fd_check(kind: DecoderKind, p: &crate::paths::StrainPath, coords: usize) -> f64 {
        let mut s = surrogate(kind, FeatureKind::InvI1J2, 11);
        let strains = p.strains();
        let target = p.stresses();
        let phi = s.path_features(&strains).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = s.loss_and_gradient(&strains, &phi, &target, Mode::Eval, &mut rng).unwrap();
        let mut worst: f64 = 0.0;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..coords {
            let k = (i * 7919) % s.network.num_weights();
            let w = s.network.weights()[k];
            let h = 1e-6 * w.abs().max(1e-2);
            s.network.set_weight(k, w + h);
            let lp = loss(&s.predict_strains(&strains).unwrap(), &target);
            s.network.set_weight(k, w - h);
            let lm = loss(&s.predict_strains(&strains).unwrap(), &target);
            s.network.set_weight(k, w);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / (fd.abs().max(g[k].abs()).max(1e-3 * gmax)));
        }
        worst
    }

    #[test]
    fn gradient_matches_whole_loss_differences() {
        for (kind, regime) in [
            (DecoderKind::Elastic, Regime::PlaneStrain),
            (DecoderKind::J2, Regime::PlaneStrain),
            (DecoderKind::Melro, Regime::PlaneStrain),
            (DecoderKind::Melro, Regime::PlaneStress),
        ] {
            let p = path(PathKind::UnloadReload, regime, 21);
            let err = fd_check(kind, &p, 20);
            assert!(err < 1e-3, "{kind:?} {regime:?}: relative error {err}");
        }
    }

    #[test]
    fn elastic_decoder_has_no_state_partials() {
        let s = surrogate(DecoderKind::Elastic, FeatureKind::InvI1I2, 2);
        let p = path(PathKind::Monotonic, Regime::PlaneStrain, 3);
        let strains = p.strains();
        let phi = s.path_features(&strains).unwrap();
        let c = s.forward_path(&strains, &phi, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.len(), 30);
        assert!(c.steps.iter().all(|st| st.ds_dalpha.ncols() == 0 && st.da_dalpha.nrows() == 0));
    }

    #[test]
    fn zero_misfit_gives_zero_gradient() {
        let s = surrogate(DecoderKind::Melro, FeatureKind::InvI1J2, 4);
        let p = path(PathKind::Monotonic, Regime::PlaneStrain, 5);
        let strains = p.strains();
        let pred = s.predict_strains(&strains).unwrap();
        let phi = s.path_features(&strains).unwrap();
        let (l, g) =
            s.loss_and_gradient(&strains, &phi, &pred, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut s = surrogate(DecoderKind::J2, FeatureKind::InvJ2, 6);
        let p = path(PathKind::Monotonic, Regime::PlaneStrain, 7);
        let strains = p.strains();
        let phi = s.path_features(&strains).unwrap();
        let c = s.forward_path(&strains, &phi, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = s.network.weights()[0];
        s.network.set_weight(0, w);
        assert!(matches!(s.path_gradient(&c, &p.stresses()), Err(Error::StaleCache)));
    }
}
