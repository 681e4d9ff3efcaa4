use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss, DecoderKind, DecoderSpec, HybridSurrogate, Standardizer};
use crate::encoder::{Adam, Bounds, Mode, Network};
use crate::error::{Error, Result};
use crate::features::{extract_path, FeatureKind, FeatureVector};
use crate::materials::ReferenceMaterial;
use crate::paths::StrainPath;
use crate::tensors::{StrainState, StressState};

/// Stream offset separating dropout draws from the shuffling stream.
const DROPOUT_STREAM: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub decoder: DecoderKind,
    pub feature: FeatureKind,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Defaults to the decoder's admissible box.
    pub bounds: Option<Bounds>,
    /// Defaults to the reference material's initial parameters.
    pub theta_init: Option<Vec<f64>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Supplies the fixed elastic constants and the precalibrated model.
    pub material: ReferenceMaterial,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderKind::Melro,
            feature: FeatureKind::PrecalStressInv,
            hidden: vec![50; 5],
            dropout: 0.01,
            bounds: None,
            theta_init: None,
            epochs: 20_000,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            material: ReferenceMaterial::default(),
        }
    }
}

impl TrainConfig {
    pub fn bounds(&self) -> Bounds {
        self.bounds.clone().unwrap_or_else(|| self.decoder.default_bounds())
    }

    pub fn theta_init(&self) -> Vec<f64> {
        self.theta_init.clone().unwrap_or_else(|| self.decoder.default_theta_init(&self.material))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden layers {:?}", self.hidden));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        let b = self.bounds();
        b.validate()?;
        if b.len() != self.decoder.num_params() {
            return bad(format!("{} bounds for {} parameters", b.len(), self.decoder.num_params()));
        }
        if !b.contains_strictly(&self.theta_init()) {
            return bad(format!("initial parameters {:?} outside bounds", self.theta_init()));
        }
        Ok(())
    }

    /// Untrained surrogate described by this configuration.
    pub fn surrogate(&self) -> Result<HybridSurrogate> {
        self.validate()?;
        let mut s = HybridSurrogate::new(
            self.feature,
            DecoderSpec::new(self.decoder, self.material.elastic),
            &self.hidden,
            self.dropout,
            self.bounds(),
            &self.theta_init(),
            self.seed,
        )?;
        s.precal = self.material;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-path loss (dropout active; epoch 0 is the untrained network
    /// in Eval mode).
    pub train_loss: f64,
    /// Mean per-path validation loss in Eval mode.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Path evaluations dropped because the decoder failed.
    pub skipped: usize,
}

impl TrainingReport {
    /// One row per epoch, after an optional `#` header line.
    pub fn write_csv(&self, file: &Path, header: Option<&str>) -> Result<()> {
        let mut out = std::fs::File::create(file)?;
        if let Some(h) = header {
            use std::io::Write;
            writeln!(out, "{h}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn val_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }
}

/// A path with its standardized features precomputed.
#[derive(Debug, Clone)]
pub struct PreparedPath {
    pub strains: Vec<StrainState>,
    pub features: Vec<FeatureVector>,
    pub target: Vec<StressState>,
}

pub(crate) fn prepare(s: &HybridSurrogate, raw: Vec<Vec<FeatureVector>>, paths: &[&StrainPath]) -> Vec<PreparedPath> {
    paths
        .iter()
        .zip(raw)
        .map(|(p, f)| PreparedPath {
            strains: p.strains(),
            features: f.iter().map(|x| s.standardizer.apply(x)).collect(),
            target: p.stresses(),
        })
        .collect()
}

impl HybridSurrogate {
    /// Standardized features and targets of the given paths.
    pub fn prepare_paths(&self, paths: &[&StrainPath]) -> Result<Vec<PreparedPath>> {
        Ok(prepare(self, raw_features(self, paths)?, paths))
    }
}

pub(crate) fn raw_features(s: &HybridSurrogate, paths: &[&StrainPath]) -> Result<Vec<Vec<FeatureVector>>> {
    paths.par_iter().map(|p| extract_path(s.feature, &s.precal, &p.strains())).collect()
}

/// Mean Eval-mode loss; failing paths count as infinite.
pub fn eval_loss(s: &HybridSurrogate, set: &[PreparedPath]) -> (f64, usize) {
    let losses: Vec<Option<f64>> = set
        .par_iter()
        .map(|p| {
            s.sweep_with_features(&p.strains, &p.features)
                .ok()
                .map(|out| loss(&out.iter().map(|(_, r)| r.stress).collect::<Vec<_>>(), &p.target))
        })
        .collect();
    let failed = losses.iter().filter(|l| l.is_none()).count();
    let total: f64 = losses.iter().map(|l| l.unwrap_or(f64::INFINITY)).sum();
    (total / set.len() as f64, failed)
}

/// One optimizer step on the summed loss of `batch`. Returns the batch loss
/// and the number of paths whose decoder failed.
pub fn batch_step(
    s: &mut HybridSurrogate,
    adam: &mut Adam,
    set: &[PreparedPath],
    batch: &[usize],
    mode: Mode,
    seed: u64,
    epoch: usize,
) -> Result<(f64, usize)> {
    let snapshot = &*s;
    let results: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(DROPOUT_STREAM + ((epoch as u64) << 24) + i as u64);
            let p = &set[i];
            snapshot.loss_and_gradient(&p.strains, &p.features, &p.target, mode, &mut rng)
        })
        .collect();
    let mut grad = vec![0.0; s.network.num_weights()];
    let mut total = 0.0;
    let mut skipped = 0;
    for (r, &i) in results.into_iter().zip(batch) {
        match r {
            Ok((l, g)) => {
                if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, detail: format!("path {i}: loss {l}") });
                }
                total += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            Err(e) if e.is_numerical() => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped < batch.len() {
        adam.step(&mut s.network, &grad)?;
    }
    Ok((total, skipped))
}

/// Everything needed to continue a training run bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub config: TrainConfig,
    /// Last completed epoch.
    pub epoch: usize,
    pub surrogate: HybridSurrogate,
    pub adam: Adam,
    pub best_network: Network,
    pub report: TrainingReport,
}

impl TrainingCheckpoint {
    pub fn save(&self, file: &Path) -> Result<()> {
        std::fs::write(file, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(file: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(file)?)?)
    }
}

/// Minibatch training with best-validation model selection, one epoch at
/// a time.
pub struct Trainer {
    config: TrainConfig,
    epoch: usize,
    surrogate: HybridSurrogate,
    adam: Adam,
    best_network: Network,
    report: TrainingReport,
    train_data: Vec<PreparedPath>,
    val_data: Vec<PreparedPath>,
}

fn check_sets(train_set: &[&StrainPath], val_set: &[&StrainPath]) -> Result<()> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::ConfigInvalid("training and validation sets must be non-empty".into()));
    }
    let ids: HashSet<(usize, u64)> = train_set.iter().map(|p| (p.id, p.seed)).collect();
    if val_set.iter().any(|p| ids.contains(&(p.id, p.seed))) {
        return Err(Error::ConfigInvalid("training and validation sets overlap".into()));
    }
    Ok(())
}

impl Trainer {
    /// Fits the standardizer and evaluates the untrained network as epoch 0.
    pub fn new(train_set: &[&StrainPath], val_set: &[&StrainPath], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        check_sets(train_set, val_set)?;
        let mut s = config.surrogate()?;
        let raw_train = raw_features(&s, train_set)?;
        let raw_val = raw_features(&s, val_set)?;
        s.standardizer = Standardizer::fit(s.feature.dim(), raw_train.iter().flatten());
        let train_data = prepare(&s, raw_train, train_set);
        let val_data = prepare(&s, raw_val, val_set);
        let (train0, f0) = eval_loss(&s, &train_data);
        let (val0, f1) = eval_loss(&s, &val_data);
        let report = TrainingReport {
            records: vec![EpochRecord { epoch: 0, train_loss: train0, val_loss: val0 }],
            best_epoch: 0,
            best_val_loss: val0,
            skipped: f0 + f1,
        };
        Ok(Self {
            config: config.clone(),
            epoch: 0,
            adam: Adam::new(s.network.num_weights(), config.learning_rate),
            best_network: s.network.clone(),
            surrogate: s,
            report,
            train_data,
            val_data,
        })
    }

    /// Continues from a checkpoint on the same path sets.
    pub fn resume(checkpoint: TrainingCheckpoint, train_set: &[&StrainPath], val_set: &[&StrainPath]) -> Result<Self> {
        checkpoint.config.validate()?;
        check_sets(train_set, val_set)?;
        let s = checkpoint.surrogate;
        let train_data = s.prepare_paths(train_set)?;
        let val_data = s.prepare_paths(val_set)?;
        Ok(Self {
            config: checkpoint.config,
            epoch: checkpoint.epoch,
            surrogate: s,
            adam: checkpoint.adam,
            best_network: checkpoint.best_network,
            report: checkpoint.report,
            train_data,
            val_data,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train_data.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut used = 0;
        for batch in order.chunks(c.batch_size) {
            let (l, k) =
                batch_step(&mut self.surrogate, &mut self.adam, &self.train_data, batch, Mode::Train, c.seed, epoch)?;
            total += l;
            used += batch.len() - k;
            self.report.skipped += k;
        }
        let (val_loss, failed) = eval_loss(&self.surrogate, &self.val_data);
        self.report.skipped += failed;
        let train_loss = if used > 0 { total / used as f64 } else { f64::INFINITY };
        let rec = EpochRecord { epoch, train_loss, val_loss };
        self.report.records.push(rec);
        if val_loss < self.report.best_val_loss {
            self.report.best_epoch = epoch;
            self.report.best_val_loss = val_loss;
            self.best_network = self.surrogate.network.clone();
        }
        self.epoch = epoch;
        Ok(rec)
    }

    /// Runs until `config.epochs` epochs are done.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let r = self.step_epoch()?;
            on_epoch(&r);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> TrainingCheckpoint {
        TrainingCheckpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            surrogate: self.surrogate.clone(),
            adam: self.adam.clone(),
            best_network: self.best_network.clone(),
            report: self.report.clone(),
        }
    }

    /// The best-validation surrogate and the full report.
    pub fn finish(self) -> (HybridSurrogate, TrainingReport) {
        let mut s = self.surrogate;
        s.network = self.best_network;
        (s, self.report)
    }
}

/// Minibatch training with best-validation model selection.
pub fn train(
    train_set: &[&StrainPath],
    val_set: &[&StrainPath],
    config: &TrainConfig,
) -> Result<(HybridSurrogate, TrainingReport)> {
    let mut t = Trainer::new(train_set, val_set, config)?;
    t.run(|_| {})?;
    Ok(t.finish())
}
