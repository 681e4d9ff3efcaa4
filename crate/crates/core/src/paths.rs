//! Strain-path datasets driven through the reference material.
//!
//! Every path is an amplitude program `a(t)` along a unit direction in
//! `(eps_xx, eps_yy, gamma_xy)` space. Raw paths are integrated with adaptive
//! increments, then balanced to a fixed number of snapshots whose stresses
//! are re-integrated (never interpolated).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{update, InternalState, ReferenceMaterial};
use crate::tensors::{Regime, StrainState, StressState};

pub const GENERATOR_VERSION: u32 = 1;
/// Resampling attempts before a path slot is given up.
const MAX_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Monotonic,
    UnloadReload,
    SlowCycle,
}

impl PathKind {
    pub const ALL: [PathKind; 3] = [PathKind::Monotonic, PathKind::UnloadReload, PathKind::SlowCycle];

    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::Monotonic => "monotonic",
            PathKind::UnloadReload => "unload_reload",
            PathKind::SlowCycle => "slow_cycle",
        }
    }
}

impl std::str::FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PathKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub strain: StrainState,
    pub stress: StressState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrainPath {
    pub id: usize,
    pub kind: PathKind,
    pub regime: Regime,
    pub direction: [f64; 3],
    pub steps: Vec<Step>,
    pub seed: u64,
    pub generator_version: u32,
}

impl StrainPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn strains(&self) -> Vec<StrainState> {
        self.steps.iter().map(|s| s.strain).collect()
    }

    pub fn stresses(&self) -> Vec<StressState> {
        self.steps.iter().map(|s| s.stress).collect()
    }

    /// In-plane strain norms per step.
    pub fn norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.strain.norm()).collect()
    }

    /// Steps whose strain norm is below the largest norm reached before them
    /// (unloading, and reloading below the previous peak).
    pub fn non_monotonic_mask(&self) -> Vec<bool> {
        let mut peak: f64 = 0.0;
        self.norms()
            .into_iter()
            .map(|n| {
                let flag = n < peak;
                peak = peak.max(n);
                flag
            })
            .collect()
    }
}

/// Stepping parameters for raw path integration and balancing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathControl {
    pub final_norm: f64,
    pub steps: usize,
    pub initial_increment: f64,
    pub max_increment: f64,
    pub min_increment: f64,
    pub growth: f64,
}

impl Default for PathControl {
    fn default() -> Self {
        Self {
            final_norm: 0.10,
            steps: 30,
            initial_increment: 1e-3,
            max_increment: 2.5e-3,
            min_increment: 1e-7,
            growth: 1.2,
        }
    }
}

/// Uniform direction on the unit sphere of `(eps_xx, eps_yy, gamma_xy)`.
pub fn sample_direction<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Turning points of the amplitude program (the first branch starts at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub turning: Vec<f64>,
}

impl Program {
    pub fn sample<R: Rng + ?Sized>(kind: PathKind, a_max: f64, rng: &mut R) -> Self {
        let turning = match kind {
            PathKind::Monotonic => vec![a_max],
            PathKind::UnloadReload => {
                let switch = rng.random_range(0.3..0.9) * a_max;
                let f = rng.random_range(0.1..0.9);
                vec![switch, f * switch, a_max]
            }
            PathKind::SlowCycle => {
                let r = rng.random_range(0.3..1.0);
                vec![a_max, -r * a_max, a_max, -r * a_max, a_max, -r * a_max]
            }
        };
        Self { turning }
    }

    fn branches(&self) -> Vec<(f64, f64)> {
        let mut start = 0.0;
        self.turning
            .iter()
            .map(|&end| {
                let b = (start, end);
                start = end;
                b
            })
            .collect()
    }

    /// `n` amplitudes, equally spaced within each branch, with steps allotted
    /// to branches by largest remainder of their share of the total length.
    pub fn balanced(&self, n: usize) -> Vec<f64> {
        let branches = self.branches();
        let lengths: Vec<f64> = branches.iter().map(|(a, b)| (b - a).abs()).collect();
        let total: f64 = lengths.iter().sum();
        let nb = branches.len();
        let spare = n.saturating_sub(nb);
        let quotas: Vec<f64> = lengths.iter().map(|l| l / total * spare as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
        let mut left = n.saturating_sub(counts.iter().sum());
        let mut order: Vec<usize> = (0..nb).collect();
        order.sort_by(|&i, &j| (quotas[j] - quotas[j].floor()).total_cmp(&(quotas[i] - quotas[i].floor())).then(i.cmp(&j)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        let mut out = Vec::with_capacity(n);
        for ((a, b), c) in branches.iter().zip(counts) {
            for k in 1..=c {
                out.push(if k == c { *b } else { a + (b - a) * k as f64 / c as f64 });
            }
        }
        out
    }
}

fn strain_at(direction: &[f64; 3], a: f64, regime: Regime) -> StrainState {
    let eps = [direction[0] * a, direction[1] * a, direction[2] * a];
    match regime {
        Regime::PlaneStrain => StrainState::plane_strain(eps),
        Regime::PlaneStress => StrainState::plane_stress(eps, 0.0),
    }
}

/// Drives the material through the given amplitudes from a virgin state.
pub fn integrate(
    material: &ReferenceMaterial,
    direction: &[f64; 3],
    regime: Regime,
    amplitudes: &[f64],
) -> Result<Vec<Step>> {
    let mut state = InternalState::default();
    let mut out = Vec::with_capacity(amplitudes.len());
    for (t, &a) in amplitudes.iter().enumerate() {
        let input = strain_at(direction, a, regime);
        let r = update(material, &input, &state).map_err(|e| e.at_step(t))?;
        state = r.state;
        out.push(Step { strain: r.strain(&input), stress: r.stress });
    }
    Ok(out)
}

/// Raw adaptive integration of an amplitude program. Returns the accepted
/// amplitudes and steps.
pub fn integrate_adaptive(
    material: &ReferenceMaterial,
    direction: &[f64; 3],
    regime: Regime,
    program: &Program,
    control: &PathControl,
) -> Result<(Vec<f64>, Vec<Step>)> {
    let mut state = InternalState::default();
    let mut amps = Vec::new();
    let mut steps = Vec::new();
    let mut a = 0.0;
    let mut da = control.initial_increment;
    for &target in &program.turning {
        let sign = if target >= a { 1.0 } else { -1.0 };
        while (target - a) * sign > 1e-15 {
            let next = if (target - a).abs() <= da { target } else { a + sign * da };
            let input = strain_at(direction, next, regime);
            match update(material, &input, &state) {
                Ok(r) => {
                    state = r.state;
                    a = next;
                    amps.push(a);
                    steps.push(Step { strain: r.strain(&input), stress: r.stress });
                    da = (da * control.growth).min(control.max_increment);
                }
                Err(e) if e.is_numerical() => {
                    da *= 0.5;
                    if da < control.min_increment {
                        return Err(Error::GenerationFailed(format!("increment below {} at amplitude {a}", control.min_increment)));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((amps, steps))
}

/// Resamples a raw path to `control.steps` snapshots at equally spaced
/// amplitudes per branch and re-integrates the stresses.
pub fn balance_path(raw: &StrainPath, program: &Program, material: &ReferenceMaterial, control: &PathControl) -> Result<StrainPath> {
    let min_raw = if raw.kind == PathKind::Monotonic { 2 } else { program.turning.len() };
    if raw.steps.len() < min_raw {
        return Err(Error::TooFewIncrements(raw.steps.len()));
    }
    let amps = program.balanced(control.steps);
    let steps = integrate(material, &raw.direction, raw.regime, &amps)?;
    Ok(StrainPath { steps, ..raw.clone() })
}

/// Generates one balanced path of the given kind.
pub fn generate_path<R: Rng + ?Sized>(
    kind: PathKind,
    direction: [f64; 3],
    regime: Regime,
    material: &ReferenceMaterial,
    control: &PathControl,
    rng: &mut R,
) -> Result<(StrainPath, Program)> {
    let dn = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if !(control.final_norm > 0.0 && control.final_norm.is_finite()) || (dn - 1.0).abs() > 1e-9 {
        return Err(Error::GenerationFailed("degenerate amplitude or non-unit direction".into()));
    }
    if control.steps < 2 {
        return Err(Error::TooFewIncrements(control.steps));
    }
    let program = Program::sample(kind, control.final_norm, rng);
    let (_, steps) = integrate_adaptive(material, &direction, regime, &program, control)?;
    let raw = StrainPath { id: 0, kind, regime, direction, steps, seed: 0, generator_version: GENERATOR_VERSION };
    let balanced = balance_path(&raw, &program, material, control)?;
    Ok((balanced, program))
}

/// Desk-scale dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test_per_kind: usize,
    pub regimes: Vec<Regime>,
    pub material: ReferenceMaterial,
    pub control: PathControl,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_train: 1500,
            n_validation: 500,
            n_test_per_kind: 50,
            regimes: vec![Regime::PlaneStrain, Regime::PlaneStress],
            material: ReferenceMaterial::default(),
            control: PathControl::default(),
        }
    }
}

impl DatasetConfig {
    pub fn smoke() -> Self {
        Self { n_train: 20, n_validation: 5, n_test_per_kind: 5, ..Self::default() }
    }

    pub fn paths_per_regime(&self) -> usize {
        self.n_train + self.n_validation + 3 * self.n_test_per_kind
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_validation == 0 {
            return Err(Error::ConfigInvalid("training and validation sets must be non-empty".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::ConfigInvalid("no regimes requested".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Stream id of a path so every (regime, id) pair has its own RNG.
fn stream(regime: Regime, id: usize) -> u64 {
    let r = match regime {
        Regime::PlaneStrain => 0u64,
        Regime::PlaneStress => 1u64,
    };
    (r << 40) | id as u64
}

/// Kind and split of the `id`-th path of a dataset.
pub fn slot(config: &DatasetConfig, id: usize) -> (PathKind, Split) {
    let (nt, nv, nk) = (config.n_train, config.n_validation, config.n_test_per_kind);
    if id < nt {
        (PathKind::Monotonic, Split::Train)
    } else if id < nt + nv {
        (PathKind::Monotonic, Split::Validation)
    } else {
        (PathKind::ALL[((id - nt - nv) / nk.max(1)).min(2)], Split::Test)
    }
}

/// Generates the `id`-th path, resampling direction and program on failure.
pub fn generate_slot(config: &DatasetConfig, regime: Regime, id: usize) -> Result<StrainPath> {
    let (kind, _) = slot(config, id);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream(regime, id));
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let direction = sample_direction(&mut rng);
        match generate_path(kind, direction, regime, &config.material, &config.control, &mut rng) {
            Ok((mut p, _)) => {
                p.id = id;
                p.seed = config.seed;
                return Ok(p);
            }
            Err(e) if e.is_numerical() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed(format!("path {id}: {}", last.map(|e| e.to_string()).unwrap_or_default())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathDataset {
    pub regime: Regime,
    pub paths: Vec<StrainPath>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl PathDataset {
    pub fn generate(config: &DatasetConfig, regime: Regime) -> Result<Self> {
        config.validate()?;
        let paths = (0..config.paths_per_regime())
            .into_par_iter()
            .map(|id| generate_slot(config, regime, id))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Self { regime, paths, train: vec![], validation: vec![], test: vec![], seed: config.seed };
        for id in 0..config.paths_per_regime() {
            match slot(config, id).1 {
                Split::Train => ds.train.push(id),
                Split::Validation => ds.validation.push(id),
                Split::Test => ds.test.push(id),
            }
        }
        Ok(ds)
    }

    pub fn select(&self, ids: &[usize]) -> Vec<&StrainPath> {
        ids.iter().map(|&i| &self.paths[i]).collect()
    }

    pub fn train_paths(&self) -> Vec<&StrainPath> {
        self.select(&self.train)
    }

    pub fn validation_paths(&self) -> Vec<&StrainPath> {
        self.select(&self.validation)
    }

    pub fn test_paths(&self, kind: Option<PathKind>) -> Vec<&StrainPath> {
        self.select(&self.test).into_iter().filter(|p| kind.is_none_or(|k| p.kind == k)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    path_id: usize,
    kind: PathKind,
    step: usize,
    eps_xx: f64,
    eps_yy: f64,
    gamma_xy: f64,
    eps_zz: f64,
    sig_xx: f64,
    sig_yy: f64,
    tau_xy: f64,
    sig_zz: f64,
}

pub fn write_csv<W: std::io::Write>(paths: &[StrainPath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in paths {
        for (step, s) in p.steps.iter().enumerate() {
            w.serialize(Row {
                path_id: p.id,
                kind: p.kind,
                step,
                eps_xx: s.strain.eps[0],
                eps_yy: s.strain.eps[1],
                gamma_xy: s.strain.eps[2],
                eps_zz: s.strain.eps_zz,
                sig_xx: s.stress.sig[0],
                sig_yy: s.stress.sig[1],
                tau_xy: s.stress.sig[2],
                sig_zz: s.stress.sig_zz,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads paths back; the direction is recovered from the first nonzero strain.
pub fn read_csv<R: std::io::Read>(input: R, regime: Regime, seed: u64) -> Result<Vec<StrainPath>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut by_id: BTreeMap<usize, StrainPath> = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        let p = by_id.entry(row.path_id).or_insert_with(|| StrainPath {
            id: row.path_id,
            kind: row.kind,
            regime,
            direction: [0.0; 3],
            steps: vec![],
            seed,
            generator_version: GENERATOR_VERSION,
        });
        if row.step != p.steps.len() {
            return Err(Error::Parse(format!("path {} step {} out of order", row.path_id, row.step)));
        }
        p.steps.push(Step {
            strain: StrainState { eps: [row.eps_xx, row.eps_yy, row.gamma_xy], eps_zz: row.eps_zz, regime },
            stress: StressState::new([row.sig_xx, row.sig_yy, row.tau_xy], row.sig_zz),
        });
    }
    let mut out: Vec<StrainPath> = by_id.into_values().collect();
    for p in &mut out {
        if let Some(s) = p.steps.iter().find(|s| s.strain.norm() > 0.0) {
            let n = s.strain.norm();
            p.direction = [s.strain.eps[0] / n, s.strain.eps[1] / n, s.strain.eps[2] / n];
        }
    }
    Ok(out)
}

/// Split membership and provenance of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: u32,
    pub config: DatasetConfig,
    pub files: BTreeMap<String, String>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn regime_file_name(regime: Regime) -> String {
    format!("{}.csv", regime.as_str())
}

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Generates every requested regime and writes CSV files plus the manifest,
/// each starting with `header` (a `#` comment line) when given.
pub fn build_datasets(config: &DatasetConfig, dir: &Path, header: Option<&str>) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut splits = None;
    for &regime in &config.regimes {
        let ds = PathDataset::generate(config, regime)?;
        let name = regime_file_name(regime);
        let mut f = fs::File::create(dir.join(&name))?;
        if let Some(h) = header {
            use std::io::Write;
            writeln!(f, "{h}")?;
        }
        write_csv(&ds.paths, f)?;
        files.insert(regime.as_str().to_string(), name);
        splits = Some((ds.train, ds.validation, ds.test));
    }
    let (train, validation, test) = splits.expect("at least one regime");
    let manifest = Manifest { generator_version: GENERATOR_VERSION, config: config.clone(), files, train, validation, test };
    let body = toml::to_string(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), header.map_or(body.clone(), |h| format!("{h}\n{body}")))?;
    Ok(manifest)
}

/// Loads one regime of a dataset written by [`build_datasets`].
pub fn load_dataset(dir: &Path, regime: Regime) -> Result<(Manifest, PathDataset)> {
    let manifest: Manifest = toml::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let name = manifest
        .files
        .get(regime.as_str())
        .ok_or_else(|| Error::ConfigInvalid(format!("dataset has no {} file", regime.as_str())))?;
    let paths = read_csv(fs::File::open(dir.join(name))?, regime, manifest.config.seed)?;
    if paths.len() != manifest.config.paths_per_regime() || paths.iter().enumerate().any(|(i, p)| p.id != i) {
        return Err(Error::Parse(format!("{name}: path ids do not match the manifest")));
    }
    let ds = PathDataset {
        regime,
        paths,
        train: manifest.train.clone(),
        validation: manifest.validation.clone(),
        test: manifest.test.clone(),
        seed: manifest.config.seed,
    };
    Ok((manifest, ds))
}
