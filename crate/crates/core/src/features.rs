//! Feature extractors mapping macroscopic strain (and optionally its
//! history) to encoder inputs.
//!
//! In plane stress the out-of-plane strain is an output of the decoder, so
//! strain-based features see only the in-plane components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{update, InternalState, ReferenceMaterial};
use crate::tensors::{strain_invariants6, stress_invariants, StrainState, Voigt6};

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "RawStrain")]
    RawStrain,
    #[serde(rename = "Inv_I1")]
    InvI1,
    #[serde(rename = "Inv_I1I2")]
    InvI1I2,
    #[serde(rename = "Inv_J2")]
    InvJ2,
    #[serde(rename = "Inv_I1J2")]
    InvI1J2,
    #[serde(rename = "HistMax_I1I2")]
    HistMaxI1I2,
    #[serde(rename = "Precal_PlasticStrain")]
    PrecalPlasticStrain,
    #[serde(rename = "Precal_StressInv")]
    PrecalStressInv,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 8] = [
        FeatureKind::RawStrain,
        FeatureKind::InvI1,
        FeatureKind::InvI1I2,
        FeatureKind::InvJ2,
        FeatureKind::InvI1J2,
        FeatureKind::HistMaxI1I2,
        FeatureKind::PrecalPlasticStrain,
        FeatureKind::PrecalStressInv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::RawStrain => "RawStrain",
            FeatureKind::InvI1 => "Inv_I1",
            FeatureKind::InvI1I2 => "Inv_I1I2",
            FeatureKind::InvJ2 => "Inv_J2",
            FeatureKind::InvI1J2 => "Inv_I1J2",
            FeatureKind::HistMaxI1I2 => "HistMax_I1I2",
            FeatureKind::PrecalPlasticStrain => "Precal_PlasticStrain",
            FeatureKind::PrecalStressInv => "Precal_StressInv",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::InvI1 | FeatureKind::InvJ2 => 1,
            FeatureKind::InvI1I2 | FeatureKind::InvI1J2 | FeatureKind::HistMaxI1I2 | FeatureKind::PrecalStressInv => 2,
            FeatureKind::RawStrain | FeatureKind::PrecalPlasticStrain => 3,
        }
    }

    pub fn is_stateful(self) -> bool {
        matches!(self, FeatureKind::HistMaxI1I2 | FeatureKind::PrecalPlasticStrain | FeatureKind::PrecalStressInv)
    }

    /// Whether every emitted feature is unchanged by in-plane rotations.
    pub fn is_rotation_invariant(self) -> bool {
        !matches!(self, FeatureKind::RawStrain | FeatureKind::PrecalPlasticStrain)
    }

    /// Fresh history for stateful kinds; `None` otherwise.
    pub fn initial_state(self, precal: &ReferenceMaterial) -> Option<FeatureState> {
        match self {
            FeatureKind::HistMaxI1I2 => Some(FeatureState::HistMax(HistoryMaxState::default())),
            FeatureKind::PrecalPlasticStrain => Some(FeatureState::Precal(PrecalibratedExtractor::new(
                *precal,
                PrecalMode::PlasticStrain,
            ))),
            FeatureKind::PrecalStressInv => Some(FeatureState::Precal(PrecalibratedExtractor::new(
                *precal,
                PrecalMode::StressInvariants,
            ))),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Running maximum of `I1^2 + J2` and the `(I1, I2)` where it was attained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryMaxState {
    pub max: f64,
    pub i1: f64,
    pub i2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecalMode {
    PlasticStrain,
    StressInvariants,
}

/// Imaginary material point driven by the macroscopic strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecalibratedExtractor {
    model: ReferenceMaterial,
    pub state: InternalState,
    pub mode: PrecalMode,
}

impl PrecalibratedExtractor {
    pub fn new(model: ReferenceMaterial, mode: PrecalMode) -> Self {
        Self { model, state: InternalState::default(), mode }
    }

    pub fn model(&self) -> &ReferenceMaterial {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureState {
    HistMax(HistoryMaxState),
    Precal(PrecalibratedExtractor),
}

fn feature_strain(strain: &StrainState) -> Voigt6 {
    Voigt6::new(strain.eps[0], strain.eps[1], 0.0, strain.eps[2], 0.0, 0.0)
}

fn precal_strain(strain: &StrainState) -> StrainState {
    StrainState { eps_zz: 0.0, ..*strain }
}

/// `(I1, I2, I1^2 + J2)` of the strain.
fn histmax_measure(strain: &StrainState) -> (f64, f64, f64) {
    let (i1, i2, j2) = strain_invariants6(&feature_strain(strain));
    (i1, i2, i1 * i1 + j2)
}

pub fn extract(kind: FeatureKind, strain: &StrainState, state: Option<&FeatureState>) -> Result<FeatureVector> {
    let (i1, i2, j2) = strain_invariants6(&feature_strain(strain));
    let missing = Error::MissingState(kind.as_str());
    Ok(match kind {
        FeatureKind::RawStrain => strain.eps.to_vec(),
        FeatureKind::InvI1 => vec![i1],
        FeatureKind::InvI1I2 => vec![i1, i2],
        FeatureKind::InvJ2 => vec![j2],
        FeatureKind::InvI1J2 => vec![i1, j2],
        FeatureKind::HistMaxI1I2 => match state {
            Some(FeatureState::HistMax(h)) => {
                let (i1, i2, m) = histmax_measure(strain);
                if m >= h.max {
                    vec![i1, i2]
                } else {
                    vec![h.i1, h.i2]
                }
            }
            _ => return Err(missing),
        },
        FeatureKind::PrecalPlasticStrain | FeatureKind::PrecalStressInv => match state {
            Some(FeatureState::Precal(p)) => {
                let r = update(&p.model, &precal_strain(strain), &p.state)?;
                if kind == FeatureKind::PrecalPlasticStrain {
                    r.state.planar().to_vec()
                } else {
                    let (si1, sj2) = stress_invariants(&r.stress);
                    vec![si1, sj2]
                }
            }
            _ => return Err(missing),
        },
    })
}

/// Advances the history of stateful kinds at a converged step.
pub fn commit(kind: FeatureKind, state: Option<&mut FeatureState>, strain: &StrainState) -> Result<()> {
    if !kind.is_stateful() {
        return Ok(());
    }
    match state {
        Some(FeatureState::HistMax(h)) => {
            let (i1, i2, m) = histmax_measure(strain);
            if m >= h.max {
                *h = HistoryMaxState { max: m, i1, i2 };
            }
            Ok(())
        }
        Some(FeatureState::Precal(p)) => {
            p.state = update(&p.model, &precal_strain(strain), &p.state)?.state;
            Ok(())
        }
        None => Err(Error::MissingState(kind.as_str())),
    }
}

/// Features of every step of a strain path, committing between steps.
pub fn extract_path(kind: FeatureKind, precal: &ReferenceMaterial, strains: &[StrainState]) -> Result<Vec<FeatureVector>> {
    let mut state = kind.initial_state(precal);
    let mut out = Vec::with_capacity(strains.len());
    for (t, s) in strains.iter().enumerate() {
        out.push(extract(kind, s, state.as_ref()).map_err(|e| e.at_step(t))?);
        commit(kind, state.as_mut(), s).map_err(|e| e.at_step(t))?;
    }
    Ok(out)
}
