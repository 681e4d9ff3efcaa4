//! Encoder + feature extractor + constitutive decoder.
//!
//! At every step the features of the current strain are mapped to material
//! parameters `theta_t`, which drive one update of the decoder from the
//! previous internal state.

mod gradient;
mod train;

pub use gradient::{PathLossCache, StepCache, FD_FLOOR, FD_RELATIVE};
pub use train::{
    batch_step, eval_loss, train, EpochRecord, PreparedPath, TrainConfig, Trainer, TrainingCheckpoint, TrainingReport,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Bounds, Network};
use crate::error::{Error, Result};
use crate::features::{commit, extract, FeatureKind, FeatureState, FeatureVector};
use crate::materials::{
    update, ConstitutiveModel, ElasticParams, InternalState, J2Params, MaterialResponse, MelroParams, ReferenceMaterial,
    Update3d,
};
use crate::paths::StrainPath;
use crate::tensors::{StrainState, StressState, Voigt6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Elastic,
    J2,
    Melro,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::Elastic, DecoderKind::J2, DecoderKind::Melro];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Elastic => "elastic",
            DecoderKind::J2 => "j2",
            DecoderKind::Melro => "melro",
        }
    }

    /// Names of the learned parameters, in encoder output order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            DecoderKind::Elastic => &["young", "poisson"],
            DecoderKind::J2 => &["yield_stress"],
            DecoderKind::Melro => &["sigma_t", "ratio_ct", "nu_p"],
        }
    }

    pub fn num_params(self) -> usize {
        self.parameter_names().len()
    }

    pub fn default_bounds(self) -> Bounds {
        let (low, high) = match self {
            DecoderKind::Elastic => (vec![1e1, 0.0], vec![1e5, 0.5]),
            DecoderKind::J2 => (vec![1e1], vec![1e3]),
            DecoderKind::Melro => (vec![1e1, 1.0, 0.0], vec![1e4, 100.0, 0.5]),
        };
        Bounds { low, high }
    }

    /// Parameters the output layer is biased towards before training.
    pub fn default_theta_init(self, reference: &ReferenceMaterial) -> Vec<f64> {
        let (st, sc) = reference.yield_stresses(0.0);
        match self {
            DecoderKind::Elastic => vec![reference.elastic.young, reference.elastic.poisson],
            DecoderKind::J2 => vec![st],
            DecoderKind::Melro => vec![st, sc / st, reference.nu_p],
        }
    }

    /// Flattened internal-state indices the decoder actually evolves.
    pub fn active_state(self) -> &'static [usize] {
        match self {
            DecoderKind::Elastic => &[],
            DecoderKind::J2 | DecoderKind::Melro => &[0, 1, 2, 3],
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecoderKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Decoder kind plus the parameters that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    /// Elastic constants of the plastic decoders (ignored by `Elastic`).
    pub elastic: ElasticParams,
}

impl DecoderSpec {
    pub fn new(kind: DecoderKind, elastic: ElasticParams) -> Self {
        Self { kind, elastic }
    }

    pub fn build(&self, theta: &[f64]) -> Result<Decoder> {
        if theta.len() != self.kind.num_params() {
            return Err(Error::DimensionMismatch { expected: self.kind.num_params(), got: theta.len() });
        }
        let bad = || Error::ReturnMapDiverged { iterations: 0, residual: f64::NAN };
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(bad());
        }
        Ok(match self.kind {
            DecoderKind::Elastic => {
                let e = ElasticParams::new(theta[0], theta[1]);
                if !e.is_admissible() {
                    return Err(bad());
                }
                Decoder::Elastic(e)
            }
            DecoderKind::J2 => Decoder::J2(J2Params::new(self.elastic, theta[0])),
            DecoderKind::Melro => Decoder::Melro(MelroParams::new(self.elastic, theta[0], theta[1], theta[2])),
        })
    }
}

/// A decoder instance with concrete parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoder {
    Elastic(ElasticParams),
    J2(J2Params),
    Melro(MelroParams),
}

impl ConstitutiveModel for Decoder {
    fn elastic(&self) -> ElasticParams {
        match self {
            Decoder::Elastic(m) => m.elastic(),
            Decoder::J2(m) => m.elastic(),
            Decoder::Melro(m) => m.elastic(),
        }
    }

    fn update_3d(&self, eps: &Voigt6, prev: &InternalState) -> Result<Update3d> {
        match self {
            Decoder::Elastic(m) => m.update_3d(eps, prev),
            Decoder::J2(m) => m.update_3d(eps, prev),
            Decoder::Melro(m) => m.update_3d(eps, prev),
        }
    }

    fn yield_function(&self, stress: &Voigt6, state: &InternalState) -> f64 {
        match self {
            Decoder::Elastic(m) => m.yield_function(stress, state),
            Decoder::J2(m) => m.yield_function(stress, state),
            Decoder::Melro(m) => m.yield_function(stress, state),
        }
    }

    fn yield_scale(&self, state: &InternalState) -> f64 {
        match self {
            Decoder::Elastic(m) => m.yield_scale(state),
            Decoder::J2(m) => m.yield_scale(state),
            Decoder::Melro(m) => m.yield_scale(state),
        }
    }
}

/// Per-component affine map applied to raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Mean and (population) standard deviation over all given vectors.
    /// Near-constant components keep unit scale.
    pub fn fit<'a>(dim: usize, features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for f in features {
            n += 1;
            for i in 0..dim {
                sum[i] += f[i];
                sq[i] += f[i] * f[i];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let v = (q / n as f64 - m * m).max(0.0).sqrt();
                if v > 1e-12 * (1.0 + m.abs()) {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, f: &[f64]) -> FeatureVector {
        f.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect()
    }
}

/// The trainable surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSurrogate {
    pub feature: FeatureKind,
    /// Model driven by the precalibrated extractors.
    pub precal: ReferenceMaterial,
    pub network: Network,
    pub decoder: DecoderSpec,
    pub standardizer: Standardizer,
}

impl HybridSurrogate {
    /// Fresh surrogate with LeCun-initialized hidden layers and the output
    /// bias set so that the untrained network emits `theta_init`.
    pub fn new(
        feature: FeatureKind,
        decoder: DecoderSpec,
        hidden: &[usize],
        dropout: f64,
        bounds: Bounds,
        theta_init: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if bounds.len() != decoder.kind.num_params() {
            return Err(Error::DimensionMismatch { expected: decoder.kind.num_params(), got: bounds.len() });
        }
        if !bounds.contains_strictly(theta_init) {
            return Err(Error::ConfigInvalid(format!("initial parameters {theta_init:?} outside bounds")));
        }
        let mut sizes = vec![feature.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(bounds.len());
        let logits = bounds.logit(theta_init);
        let mut network = Network::init_weights(&sizes, dropout, bounds, seed)?;
        let off = network.bias_offset(sizes.len() - 2);
        for (i, z) in logits.into_iter().enumerate() {
            network.set_weight(off + i, z);
        }
        Ok(Self {
            feature,
            precal: ReferenceMaterial::default(),
            network,
            decoder,
            standardizer: Standardizer::identity(feature.dim()),
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.network.bounds
    }

    pub fn initial_feature_state(&self) -> Option<FeatureState> {
        self.feature.initial_state(&self.precal)
    }

    /// Standardized features of the current strain.
    pub fn features(&self, strain: &StrainState, state: Option<&FeatureState>) -> Result<FeatureVector> {
        Ok(self.standardizer.apply(&extract(self.feature, strain, state)?))
    }

    /// Standardized features of every step of a strain sequence.
    pub fn path_features(&self, strains: &[StrainState]) -> Result<Vec<FeatureVector>> {
        let mut state = self.initial_feature_state();
        let mut out = Vec::with_capacity(strains.len());
        for (t, s) in strains.iter().enumerate() {
            out.push(self.features(s, state.as_ref()).map_err(|e| e.at_step(t))?);
            commit(self.feature, state.as_mut(), s).map_err(|e| e.at_step(t))?;
        }
        Ok(out)
    }

    /// Eval-mode parameters for standardized features.
    pub fn theta(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.network.predict(phi)
    }

    pub fn decoder_update(&self, theta: &[f64], strain: &StrainState, prev: &InternalState) -> Result<MaterialResponse> {
        update(&self.decoder.build(theta)?, strain, prev)
    }

    /// Eval-mode sweep returning `theta_t` and the decoder response per step.
    pub fn sweep(&self, strains: &[StrainState]) -> Result<Vec<(Vec<f64>, MaterialResponse)>> {
        let features = self.path_features(strains)?;
        self.sweep_with_features(strains, &features)
    }

    pub fn sweep_with_features(
        &self,
        strains: &[StrainState],
        features: &[FeatureVector],
    ) -> Result<Vec<(Vec<f64>, MaterialResponse)>> {
        let mut alpha = InternalState::default();
        let mut out = Vec::with_capacity(strains.len());
        for (t, (s, phi)) in strains.iter().zip(features).enumerate() {
            let theta = self.theta(phi).map_err(|e| e.at_step(t))?;
            let r = self.decoder_update(&theta, s, &alpha).map_err(|e| e.at_step(t))?;
            alpha = r.state;
            out.push((theta, r));
        }
        Ok(out)
    }

    pub fn predict_strains(&self, strains: &[StrainState]) -> Result<Vec<StressState>> {
        Ok(self.sweep(strains)?.into_iter().map(|(_, r)| r.stress).collect())
    }

    pub fn predict_path(&self, path: &StrainPath) -> Result<Vec<StressState>> {
        self.predict_strains(&path.strains())
    }

    pub fn save(&self, file: &Path) -> Result<()> {
        fs::write(file, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(file: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&fs::read_to_string(file)?)?;
        s.network.check()?;
        if s.network.output_dim() != s.decoder.kind.num_params() || s.network.input_dim() != s.feature.dim() {
            return Err(Error::DimensionMismatch { expected: s.decoder.kind.num_params(), got: s.network.output_dim() });
        }
        Ok(s)
    }
}

/// `1/2 sum_n ||sigma_n - sigma_hat_n||^2` over in-plane components.
pub fn loss(pred: &[StressState], target: &[StressState]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| 0.5 * (p.planar() - t.planar()).norm_squared()).sum()
}

/// Noise precision consistent with a loss `l` over `n` steps.
pub fn beta(n: usize, l: f64) -> f64 {
    n as f64 / (2.0 * l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMask {
    AllSteps,
    NonMonotonicStepsOnly,
}

/// Mean in-plane stress error over the steps selected by `mask`.
pub fn evaluate(s: &HybridSurrogate, paths: &[&StrainPath], mask: EvalMask) -> Result<f64> {
    evaluate_with(|p| s.predict_path(p), paths, mask)
}

/// [`evaluate`] for any path predictor.
pub fn evaluate_with<F>(predict: F, paths: &[&StrainPath], mask: EvalMask) -> Result<f64>
where
    F: Fn(&StrainPath) -> Result<Vec<StressState>>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in paths {
        let pred = predict(p)?;
        let sel = match mask {
            EvalMask::AllSteps => vec![true; p.len()],
            EvalMask::NonMonotonicStepsOnly => p.non_monotonic_mask(),
        };
        for ((q, step), keep) in pred.iter().zip(&p.steps).zip(sel) {
            if keep {
                sum += (q.planar() - step.stress.planar()).norm();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(sum / n as f64)
}

/// Mean per-path loss in Eval mode.
pub fn mean_path_loss(s: &HybridSurrogate, paths: &[&StrainPath]) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut total = 0.0;
    for p in paths {
        total += loss(&s.predict_path(p)?, &p.stresses());
    }
    Ok(total / paths.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::paths::{generate_path, PathControl, PathKind};
    use crate::tensors::{rotate_in_plane, Regime};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn surrogate(kind: DecoderKind, feature: FeatureKind, seed: u64) -> HybridSurrogate {
        let r = ReferenceMaterial::default();
        HybridSurrogate::new(
            feature,
            DecoderSpec::new(kind, r.elastic),
            &[8, 8],
            0.0,
            kind.default_bounds(),
            &kind.default_theta_init(&r),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn untrained_network_emits_initial_parameters() {
        let r = ReferenceMaterial::default();
        let s = HybridSurrogate::new(
            FeatureKind::InvI1I2,
            DecoderSpec::new(DecoderKind::Melro, r.elastic),
            &[50; 5],
            0.01,
            DecoderKind::Melro.default_bounds(),
            &DecoderKind::Melro.default_theta_init(&r),
            4,
        )
        .unwrap();
        // zero input: only biases contribute
        let theta = s.theta(&[0.0, 0.0]).unwrap();
        for (a, b) in theta.iter().zip(DecoderKind::Melro.default_theta_init(&r)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6 * b);
        }
    }

    #[test]
    fn constant_elastic_encoder_is_linear_elastic() {
        let mut s = surrogate(DecoderKind::Elastic, FeatureKind::RawStrain, 1);
        // zero every weight but the output bias
        let off = s.network.bias_offset(2);
        for i in 0..off {
            s.network.set_weight(i, 0.0);
        }
        let theta = s.theta(&[0.3, -0.2, 0.1]).unwrap();
        let d = ElasticParams::new(theta[0], theta[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, _) = generate_path(
            PathKind::SlowCycle,
            [0.6, 0.0, 0.8],
            Regime::PlaneStrain,
            &ReferenceMaterial::default(),
            &PathControl::default(),
            &mut rng,
        )
        .unwrap();
        for (q, step) in s.predict_path(&p).unwrap().iter().zip(&p.steps) {
            let exact = d.stiffness() * step.strain.voigt6();
            assert!((q.voigt6() - exact).norm() <= 1e-10 * exact.norm().max(1.0));
        }
    }

    #[test]
    fn zero_strain_path_gives_zero_stress() {
        for kind in DecoderKind::ALL {
            let s = surrogate(kind, FeatureKind::InvI1J2, 3);
            let strains = vec![StrainState::zero(Regime::PlaneStress); 5];
            for q in s.predict_strains(&strains).unwrap() {
                assert!(q.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_and_beta_arithmetic() {
        let z = StressState::new([0.0; 3], 0.0);
        let one = StressState::new([1.0, 0.0, 0.0], 0.0);
        assert_eq!(loss(&[one], &[one]), 0.0);
        assert_eq!(loss(&[z], &[one]), 0.5);
        assert_eq!(beta(10, 2.5), 2.0);
    }

    #[test]
    fn rotated_paths_give_rotated_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, _) = generate_path(
            PathKind::UnloadReload,
            [0.8, -0.36, 0.48],
            Regime::PlaneStrain,
            &ReferenceMaterial::default(),
            &PathControl::default(),
            &mut rng,
        )
        .unwrap();
        for kind in DecoderKind::ALL {
            let s = surrogate(kind, FeatureKind::InvI1J2, 5);
            let base = s.predict_path(&p).unwrap();
            let rot: Vec<StrainState> = p.strains().iter().map(|e| rotate_in_plane(e, 0.7).unwrap()).collect();
            let out = s.predict_strains(&rot).unwrap();
            for (a, b) in base.iter().zip(&out) {
                let expect = a.rotated(0.7);
                assert!((expect.voigt6() - b.voigt6()).norm() <= 1e-8 * a.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn evaluation_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = ReferenceMaterial::default();
        let (p, _) =
            generate_path(PathKind::Monotonic, [1.0, 0.0, 0.0], Regime::PlaneStrain, &m, &PathControl::default(), &mut rng)
                .unwrap();
        let s = surrogate(DecoderKind::J2, FeatureKind::InvI1J2, 8);
        assert!(matches!(evaluate(&s, &[&p], EvalMask::NonMonotonicStepsOnly), Err(Error::EmptySelection)));
        let pred = s.predict_path(&p).unwrap();
        let mean = pred.iter().zip(&p.steps).map(|(q, t)| (q.planar() - t.stress.planar()).norm()).sum::<f64>() / 30.0;
        assert_abs_diff_eq!(evaluate(&s, &[&p], EvalMask::AllSteps).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = surrogate(DecoderKind::Melro, FeatureKind::PrecalStressInv, 9);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("model.json");
        s.save(&f).unwrap();
        let back = HybridSurrogate::load(&f).unwrap();
        assert_eq!(back, s);
        let strains: Vec<StrainState> =
            (1..=10).map(|k| StrainState::plane_strain([0.004 * k as f64, -0.001 * k as f64, 0.0])).collect();
        assert_eq!(back.predict_strains(&strains).unwrap(), s.predict_strains(&strains).unwrap());
    }
}
