//! Strip-in-tension runs comparing the reference material with a trained
//! surrogate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mesh::{Mesh, StripGeometry};
use super::solver::{Boundary, LoadProgram, RunOutcome, Solver, SolverControls};
use super::wrapper::{StabilizationLogRow, SurrogateBinding};
use super::ReferenceBinding;
use crate::error::{Error, Result};
use crate::hybrid::{eval_loss, HybridSurrogate, PreparedPath};
use crate::materials::ReferenceMaterial;
use crate::stability::StabilizationConfig;
use crate::tensors::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadCase {
    Monotonic,
    UnloadReload,
}

impl LoadCase {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadCase::Monotonic => "monotonic",
            LoadCase::UnloadReload => "unload_reload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub geometry: StripGeometry,
    pub regime: Regime,
    pub material: ReferenceMaterial,
    /// Final right-edge displacement (mm).
    pub max_displacement: f64,
    pub reference_increment: f64,
    /// Surrogate increment as a fraction of the reference one.
    pub surrogate_ratio: f64,
    /// Unload/reload switch: unload at `unload_at` down to `unload_to`, then
    /// reload to `max_displacement`.
    pub unload_at: f64,
    pub unload_to: f64,
    pub controls: SolverControls,
    pub stabilize: bool,
    pub stabilization: StabilizationConfig,
    pub sweep_epochs: Vec<usize>,
    /// Multipliers of the surrogate increment for the step-size sweep.
    pub dt_factors: Vec<f64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            geometry: StripGeometry::default(),
            regime: Regime::PlaneStrain,
            material: ReferenceMaterial::default(),
            max_displacement: 1.5,
            reference_increment: 0.03,
            surrogate_ratio: 0.1,
            unload_at: 0.9,
            unload_to: 0.45,
            controls: SolverControls::default(),
            stabilize: true,
            stabilization: StabilizationConfig::default(),
            sweep_epochs: vec![2, 5, 10, 50, 100],
            dt_factors: vec![0.1, 1.0, 10.0, 100.0],
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        self.controls.validate()?;
        let ok = self.max_displacement > 0.0
            && self.reference_increment > 0.0
            && self.surrogate_ratio > 0.0
            && 0.0 < self.unload_to
            && self.unload_to < self.unload_at
            && self.unload_at < self.max_displacement
            && self.dt_factors.iter().all(|f| *f > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid("demo displacements must satisfy 0 < unload_to < unload_at < max".into()))
        }
    }

    pub fn surrogate_increment(&self) -> f64 {
        self.reference_increment * self.surrogate_ratio
    }

    pub fn program(&self, case: LoadCase, increment: f64) -> LoadProgram {
        match case {
            LoadCase::Monotonic => LoadProgram::monotonic(self.max_displacement, increment),
            LoadCase::UnloadReload => LoadProgram {
                increment,
                waypoints: vec![self.unload_at, self.unload_to, self.max_displacement],
            },
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        self.geometry.mesh()
    }
}

/// Runs the reference material.
pub fn run_reference(config: &DemoConfig, case: LoadCase) -> Result<RunOutcome> {
    let mesh = config.mesh()?;
    let mut s = Solver::new(
        &mesh,
        ReferenceBinding::reference(config.material.clone()),
        Boundary::strip(&mesh)?,
        config.controls.clone(),
    )?;
    let mut st = s.init_state(config.regime)?;
    s.run(&mut st, &config.program(case, config.reference_increment), |_| {})
}

/// Runs the surrogate at `increment`; `stabilization` enables online
/// encoder updates with the given retraining and validation sets.
pub fn run_surrogate(
    config: &DemoConfig,
    case: LoadCase,
    surrogate: &HybridSurrogate,
    increment: f64,
    stabilization: Option<(&StabilizationConfig, &[PreparedPath], Option<&[PreparedPath]>)>,
) -> Result<(RunOutcome, SurrogateBinding)> {
    let mesh = config.mesh()?;
    let mut binding = SurrogateBinding::new(surrogate.clone());
    if let Some((c, retrain, val)) = stabilization {
        binding = binding.with_stabilization(c.clone(), retrain.to_vec(), val.map(|v| v.to_vec()));
    }
    let mut s = Solver::new(&mesh, binding, Boundary::strip(&mesh)?, config.controls.clone())?;
    let mut st = s.init_state(config.regime)?;
    let out = s.run(&mut st, &config.program(case, increment), |_| {})?;
    Ok((out, s.into_binding()))
}

/// Arc length along the displacement history.
fn travel(curve: &[(f64, f64)]) -> Vec<f64> {
    let mut t = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    for (i, p) in curve.iter().enumerate() {
        if i > 0 {
            acc += (p.0 - curve[i - 1].0).abs();
        }
        t.push(acc);
    }
    t
}

/// RMS difference between two load-displacement curves sampled at the
/// first curve's points (matched by cumulative travel), divided by the
/// first curve's peak load. `None` when `other` stops short.
pub fn compare_curves(reference: &[(f64, f64)], other: &[(f64, f64)]) -> Option<f64> {
    let (tr, to) = (travel(reference), travel(other));
    let end = *tr.last()?;
    if *to.last()? < end * (1.0 - 1e-9) {
        return None;
    }
    let peak = reference.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    if peak == 0.0 {
        return None;
    }
    let mut sum = 0.0;
    let mut j = 0;
    for (t, p) in tr.iter().zip(reference) {
        while j + 2 < to.len() && to[j + 1] < *t {
            j += 1;
        }
        let (t0, t1) = (to[j], to[(j + 1).min(to.len() - 1)]);
        let (f0, f1) = (other[j].1, other[(j + 1).min(to.len() - 1)].1);
        let f = if t1 > t0 { f0 + (f1 - f0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { f0 };
        sum += (f - p.1).powi(2);
    }
    Some((sum / reference.len() as f64).sqrt() / peak)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub epochs: usize,
    pub retrain: bool,
    pub outcome: RunOutcome,
    pub log: Vec<StabilizationLogRow>,
    /// Validation loss of the encoder at the end of the run.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCurves {
    pub case: LoadCase,
    pub reference: RunOutcome,
    pub surrogate: RunOutcome,
    pub log: Vec<StabilizationLogRow>,
    pub sweeps: Vec<SweepResult>,
    /// `(increment, outcome)` per step-size factor.
    pub dt_sweep: Vec<(f64, RunOutcome)>,
}

impl DemoCurves {
    pub fn surrogate_error(&self) -> Option<f64> {
        compare_curves(&self.reference.curve(), &self.surrogate.curve())
    }

    /// Writes every curve family into `dir` with an optional header line.
    pub fn write(&self, dir: &Path, header: Option<&str>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let case = self.case.as_str();
        self.reference.write_csv(&dir.join(format!("{case}_reference.csv")), header)?;
        self.surrogate.write_csv(&dir.join(format!("{case}_surrogate.csv")), header)?;
        write_log(&dir.join(format!("{case}_stabilization_log.csv")), &self.log, header)?;
        for s in &self.sweeps {
            let tag = if s.retrain { "retrain" } else { "noretrain" };
            s.outcome.write_csv(&dir.join(format!("{case}_stab_{}_{tag}.csv", s.epochs)), header)?;
        }
        if !self.sweeps.is_empty() {
            let mut w = csv_with_header(&dir.join(format!("{case}_stab_summary.csv")), header)?;
            w.write_record(["epochs", "retrain", "completed", "final_displacement", "cancelled", "unstable", "val_loss"])?;
            for s in &self.sweeps {
                w.write_record([
                    s.epochs.to_string(),
                    s.retrain.to_string(),
                    s.outcome.completed().to_string(),
                    format!("{:?}", s.outcome.records.last().map(|r| r.displacement).unwrap_or(0.0)),
                    s.outcome.cancelled.to_string(),
                    s.outcome.unstable.to_string(),
                    s.val_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
        }
        for (du, out) in &self.dt_sweep {
            out.write_csv(&dir.join(format!("{case}_dt_{du:e}.csv")), header)?;
        }
        Ok(())
    }
}

fn csv_with_header(file: &Path, header: Option<&str>) -> Result<csv::Writer<std::fs::File>> {
    let mut out = std::fs::File::create(file)?;
    if let Some(h) = header {
        use std::io::Write;
        writeln!(out, "{h}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn write_log(file: &Path, log: &[StabilizationLogRow], header: Option<&str>) -> Result<()> {
    let mut w = csv_with_header(file, header)?;
    w.write_record(["step", "unstable", "negative_before", "negative_after", "epochs", "val_loss"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            r.unstable.to_string(),
            format!("{:?}", r.negative_before),
            format!("{:?}", r.negative_after),
            r.epochs.to_string(),
            r.val_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Which curve families [`run_demo`] produces beyond the reference and the
/// default surrogate run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DemoParts {
    pub sweeps: bool,
    pub dt_sweep: bool,
}

/// Reference run, surrogate run at the configured ratio, and optionally
/// the stabilization and step-size sweeps.
pub fn run_demo(
    config: &DemoConfig,
    case: LoadCase,
    surrogate: &HybridSurrogate,
    retrain: &[PreparedPath],
    validation: Option<&[PreparedPath]>,
    parts: DemoParts,
) -> Result<DemoCurves> {
    config.validate()?;
    let reference = run_reference(config, case)?;
    let du = config.surrogate_increment();
    let stab = config.stabilize.then_some((&config.stabilization, retrain, validation));
    let (main, binding) = run_surrogate(config, case, surrogate, du, stab)?;
    let mut sweeps = Vec::new();
    if parts.sweeps {
        for &epochs in &config.sweep_epochs {
            for retrain_on in [true, false] {
                let c = StabilizationConfig {
                    epochs,
                    retrain_paths: if retrain_on { config.stabilization.retrain_paths.max(1) } else { 0 },
                    ..config.stabilization.clone()
                };
                let (outcome, b) = run_surrogate(config, case, surrogate, du, Some((&c, retrain, validation)))?;
                let val_loss = validation.map(|v| eval_loss(&b.surrogate, v).0);
                sweeps.push(SweepResult { epochs, retrain: retrain_on, outcome, log: b.log, val_loss });
            }
        }
    }
    let mut dt_sweep = Vec::new();
    if parts.dt_sweep {
        for &f in &config.dt_factors {
            let (out, _) = run_surrogate(config, case, surrogate, du * f, stab)?;
            dt_sweep.push((du * f, out));
        }
    }
    Ok(DemoCurves { case, reference, surrogate: main, log: binding.log, sweeps, dt_sweep })
}
