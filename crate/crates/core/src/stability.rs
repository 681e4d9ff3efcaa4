//! Acoustic-tensor localization checks and online stabilization of the
//! encoder.

use nalgebra::{Matrix2, Matrix3, Matrix3x2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Adam, Mode};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::hybrid::{HybridSurrogate, PreparedPath};
use crate::materials::InternalState;
use crate::tensors::{StrainState, Tangent};

/// Number of sweep angles over `[0, pi)`.
const SWEEP_STEPS: usize = 180;
/// Target half-width of the refined minimizer bracket (radians).
const REFINE_TOL: f64 = 0.01 * std::f64::consts::PI / 180.0 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticProbe {
    pub angle: f64,
    pub normal: [f64; 2],
    pub q: Matrix2<f64>,
    pub det: f64,
}

/// `Q_ik = n_j D_ijkl n_l` for a planar Voigt tangent.
pub fn acoustic_tensor(d: &Matrix3<f64>, angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    // strain (xx, yy, gamma_xy) produced by the jump n (x) a
    let n = Matrix3x2::new(c, 0.0, 0.0, s, s, c);
    n.transpose() * d * n
}

fn probe(d: &Matrix3<f64>, angle: f64) -> AcousticProbe {
    let q = acoustic_tensor(d, angle);
    AcousticProbe { angle, normal: [angle.cos(), angle.sin()], q, det: q.determinant() }
}

/// Golden-section minimization of `det Q` on `[a, b]`.
fn golden(d: &Matrix3<f64>, mut a: f64, mut b: f64) -> AcousticProbe {
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| probe(d, x).det;
    let mut x1 = b - gr * (b - a);
    let mut x2 = a + gr * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 2.0 * REFINE_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = f(x2);
        }
    }
    probe(d, (0.5 * (a + b)).rem_euclid(std::f64::consts::PI))
}

/// Minimum of `det Q` over directions: a 1 degree sweep (first minimizer
/// wins ties), optionally refined by golden-section search to 0.01 degree
/// around every local minimum of the sweep.
pub fn acoustic_det_min(d: &Tangent, refine: bool) -> AcousticProbe {
    let d = d.matrix();
    let step = std::f64::consts::PI / SWEEP_STEPS as f64;
    let sweep: Vec<AcousticProbe> = (0..SWEEP_STEPS).map(|k| probe(d, k as f64 * step)).collect();
    // sin/cos round-off must not break ties between equal determinants
    let tie = 1e-12 * d.norm().powi(2);
    let mut best = sweep[0];
    for p in &sweep[1..] {
        if p.det < best.det - tie {
            best = *p;
        }
    }
    if !refine {
        return best;
    }
    let n = sweep.len();
    let mut refined = best;
    for k in 0..n {
        let (l, c, r) = (sweep[(k + n - 1) % n].det, sweep[k].det, sweep[(k + 1) % n].det);
        if c <= l && c <= r {
            let p = golden(d, sweep[k].angle - step, sweep[k].angle + step);
            if p.det < refined.det - tie {
                refined = p;
            }
        }
    }
    refined
}

/// `-<det_q>_- / det_q0`.
pub fn stability_loss(det_q: f64, det_q0: f64) -> Result<f64> {
    if !(det_q0 > 0.0) {
        return Err(Error::NonpositiveReference(det_q0));
    }
    Ok((-det_q).max(0.0) / det_q0)
}

/// Material point flagged as unstable during the first iteration of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstablePoint {
    pub strain: StrainState,
    /// Converged internal state of the previous step.
    pub alpha: InternalState,
    /// Standardized features that produced the step's frozen parameters.
    pub features: FeatureVector,
    pub det_q0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizationConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub retrain_paths: usize,
    pub retrain_learning_rate: f64,
    pub refine: bool,
    pub seed: u64,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self { epochs: 5, learning_rate: 1e-5, retrain_paths: 1, retrain_learning_rate: 1e-9, refine: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub unstable: usize,
    /// `sum <det Q>_-` over the flagged points (non-positive).
    pub negative_before: f64,
    pub negative_after: f64,
    pub epochs: usize,
    pub val_loss: Option<f64>,
}

/// Minimum acoustic determinant of the surrogate at a point.
pub fn point_det(s: &HybridSurrogate, p: &UnstablePoint, refine: bool) -> Result<AcousticProbe> {
    let theta = s.theta(&p.features)?;
    let r = s.decoder_update(&theta, &p.strain, &p.alpha)?;
    Ok(acoustic_det_min(&r.tangent, refine))
}

fn negative_part_sum(s: &HybridSurrogate, points: &[UnstablePoint], refine: bool) -> Result<f64> {
    let mut sum = 0.0;
    for p in points {
        sum += point_det(s, p, refine)?.det.min(0.0);
    }
    Ok(sum)
}

/// `sum_p L_Q` and its gradient with respect to the encoder weights. The
/// minimizing direction is held fixed while differencing in `theta`.
pub fn stability_gradient(s: &HybridSurrogate, points: &[UnstablePoint], refine: bool) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; s.network.num_weights()];
    let mut total = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in points {
        let (theta, cache) = s.network.forward(&p.features, Mode::Eval, &mut rng)?;
        let d = s.decoder_update(&theta, &p.strain, &p.alpha)?;
        let pr = acoustic_det_min(&d.tangent, refine);
        let l = stability_loss(pr.det, p.det_q0)?;
        total += l;
        if l == 0.0 {
            continue;
        }
        let det_at = |th: &[f64]| -> Result<f64> {
            let r = s.decoder_update(th, &p.strain, &p.alpha)?;
            Ok(acoustic_tensor(r.tangent.matrix(), pr.angle).determinant())
        };
        let mut dl = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            let h = (crate::hybrid::FD_RELATIVE * theta[j].abs()).max(crate::hybrid::FD_FLOOR);
            let diff = |h: f64| -> Result<f64> {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[j] += h;
                b[j] -= h;
                Ok((det_at(&a)? - det_at(&b)?) / (2.0 * h))
            };
            let dd = diff(h).or_else(|_| diff(0.1 * h))?;
            dl[j] = -dd / p.det_q0;
        }
        s.network.backward_into(&cache, &dl, &mut grad)?;
    }
    Ok((total, grad))
}

/// Stabilization epochs on `sum L_Q` followed by one retraining minibatch on
/// randomly chosen training paths. Never fails for lack of stabilization.
pub fn stabilize_network(
    s: &mut HybridSurrogate,
    points: &[UnstablePoint],
    config: &StabilizationConfig,
    retrain: &[PreparedPath],
    validation: Option<&[PreparedPath]>,
) -> Result<StabilizationReport> {
    let negative_before = negative_part_sum(s, points, config.refine)?;
    if points.is_empty() {
        return Ok(StabilizationReport { unstable: 0, negative_before, negative_after: 0.0, epochs: 0, val_loss: None });
    }
    let mut adam = Adam::new(s.network.num_weights(), config.learning_rate);
    let mut epochs = 0;
    for _ in 0..config.epochs {
        let (l, g) = stability_gradient(s, points, config.refine)?;
        if l == 0.0 {
            break;
        }
        adam.step(&mut s.network, &g)?;
        epochs += 1;
    }
    let k = config.retrain_paths.min(retrain.len());
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let batch: Vec<usize> = sample(&mut rng, retrain.len(), k).into_vec();
        let mut adam = Adam::new(s.network.num_weights(), config.retrain_learning_rate);
        crate::hybrid::batch_step(s, &mut adam, retrain, &batch, Mode::Train, config.seed, 0)?;
    }
    let negative_after = negative_part_sum(s, points, config.refine)?;
    let val_loss = validation.map(|v| crate::hybrid::eval_loss(s, v).0);
    Ok(StabilizationReport { unstable: points.len(), negative_before, negative_after, epochs, val_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{update, ElasticParams, J2Params};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn isotropic_determinant_is_direction_free() {
        // lambda = 0, mu = 0.5
        let d = Tangent(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5));
        for k in 0..36 {
            assert_abs_diff_eq!(acoustic_tensor(d.matrix(), k as f64 * 0.1).determinant(), 0.5, epsilon = 1e-14);
        }
        let p = acoustic_det_min(&d, true);
        assert_abs_diff_eq!(p.det, 0.5, epsilon = 1e-14);
        let e = ElasticParams::new(100.0, 0.25);
        let (l, m) = e.lame();
        let r = update(&e, &StrainState::plane_strain([0.0; 3]), &InternalState::default()).unwrap();
        assert_abs_diff_eq!(acoustic_det_min(&r.tangent, false).det, (l + 2.0 * m) * m, epsilon = 1e-9);
    }

    #[test]
    fn scaling_and_ties() {
        let d = Tangent(Matrix3::new(3.0, 0.5, 0.1, 0.5, 2.0, -0.2, 0.1, -0.2, 0.7));
        let a = acoustic_det_min(&d, false);
        let b = acoustic_det_min(&Tangent(d.0 * 3.0), false);
        assert_abs_diff_eq!(b.det, 9.0 * a.det, epsilon = 1e-12);
        assert_eq!(a.angle, b.angle);
        // direction-free determinant: the first angle wins
        let iso = Tangent(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5));
        assert_eq!(acoustic_det_min(&iso, false).angle, 0.0);
    }

    #[test]
    fn negative_mode_along_x() {
        // softening in xx only
        let d = Tangent(Matrix3::new(-1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 2.0));
        let p = acoustic_det_min(&d, true);
        assert!(p.det < 0.0);
        let a = p.angle.min(std::f64::consts::PI - p.angle);
        assert!(a < 1f64.to_radians());
    }

    #[test]
    fn stability_loss_cases() {
        assert_eq!(stability_loss(5.0, 10.0).unwrap(), 0.0);
        assert_abs_diff_eq!(stability_loss(-2.0, 10.0).unwrap(), 0.2);
        assert_eq!(stability_loss(0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(stability_loss(1.0, 0.0), Err(Error::NonpositiveReference(_))));
    }

    #[test]
    fn j2_tangents_are_stable() {
        let m = J2Params::new(ElasticParams::new(3760.0, 0.3), 60.0);
        for k in 0..50 {
            let a = k as f64 * 0.13;
            let s = StrainState::plane_strain([0.05 * a.cos(), -0.02 * a.sin(), 0.03 * (2.0 * a).cos()]);
            let r = update(&m, &s, &InternalState::default()).unwrap();
            assert!(acoustic_det_min(&r.tangent, true).det > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn refinement_matches_brute_force(v in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let m = Matrix3::from_row_slice(&v);
            let d = Tangent(m + Matrix3::identity() * 2.0);
            let p = acoustic_det_min(&d, true);
            let mut brute = f64::INFINITY;
            for k in 0..18_000 {
                brute = brute.min(acoustic_tensor(d.matrix(), k as f64 * std::f64::consts::PI / 18_000.0).determinant());
            }
            let scale = d.0.norm().powi(2);
            prop_assert!((p.det - brute).abs() <= 1e-6 * scale);
        }
    }
}
