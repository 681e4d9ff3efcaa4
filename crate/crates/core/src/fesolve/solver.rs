//! Displacement-controlled Newton-Raphson with adaptive increments.

use std::path::Path;
use std::time::Instant;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble, Assembly, MaterialBinding};
use super::mesh::{Mesh, LEFT, RIGHT};
use super::PointState;
use crate::error::{Error, Result};
use crate::stability::acoustic_det_min;
use crate::tensors::Regime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    /// Relative force-residual tolerance.
    pub tolerance: f64,
    /// Absolute floor as a fraction of the largest reaction seen so far.
    pub absolute_floor: f64,
    pub max_iterations: usize,
    /// Increment growth after a converged step (capped at the nominal size).
    pub growth: f64,
    /// Smallest increment as a fraction of the nominal one.
    pub min_increment_ratio: f64,
    pub max_cancelled: usize,
    pub max_substeps: usize,
    /// Record the smallest acoustic determinant over all points at every
    /// converged step.
    pub track_stability: bool,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            absolute_floor: 1e-10,
            max_iterations: 25,
            growth: 1.2,
            min_increment_ratio: 1e-6,
            max_cancelled: 100,
            max_substeps: 64,
            track_stability: false,
        }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.absolute_floor >= 0.0
            && self.max_iterations > 0
            && self.growth >= 1.0
            && self.min_increment_ratio > 0.0
            && self.min_increment_ratio < 1.0
            && self.max_substeps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid solver controls {self:?}")))
        }
    }
}

/// Dirichlet conditions: `fixed` dofs stay at zero, `loaded` dofs follow
/// the applied displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub fixed: Vec<usize>,
    pub loaded: Vec<usize>,
}

impl Boundary {
    /// Left edge clamped, right edge pulled in `x`.
    pub fn strip(mesh: &Mesh) -> Result<Self> {
        let fixed = mesh.set(LEFT)?.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        let loaded = mesh.set(RIGHT)?.iter().map(|&n| 2 * n).collect();
        Ok(Self { fixed, loaded })
    }
}

/// Piecewise-linear displacement program visiting `waypoints` in order
/// from zero with nominal increment `increment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub increment: f64,
    pub waypoints: Vec<f64>,
}

impl LoadProgram {
    pub fn monotonic(max: f64, increment: f64) -> Self {
        Self { increment, waypoints: vec![max] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.increment > 0.0) || self.waypoints.is_empty() || !self.waypoints.iter().all(|w| w.is_finite()) {
            return Err(Error::ConfigInvalid(format!("invalid load program {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveState {
    pub u: Vec<f64>,
    pub points: Vec<PointState>,
    pub applied: f64,
    pub step: usize,
    pub reaction: f64,
    /// Largest constrained-force norm at a converged step.
    pub reference_reaction: f64,
    /// Tangent of the last converged state, used for the predictor.
    pub tangent: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub iterations: usize,
    pub reaction: f64,
    pub unstable: usize,
    pub min_det: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub displacement: f64,
    pub reaction: f64,
    pub seconds: f64,
    pub unstable: usize,
    pub cancelled: usize,
    pub iterations: usize,
    pub min_det: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    /// Reason the run stopped early.
    pub failure: Option<String>,
    pub cancelled: usize,
    pub unstable: usize,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.displacement, r.reaction)).collect()
    }

    pub fn write_csv(&self, file: &Path, header: Option<&str>) -> Result<()> {
        let mut out = std::fs::File::create(file)?;
        if let Some(h) = header {
            use std::io::Write;
            writeln!(out, "{h}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "displacement", "reaction", "seconds", "unstable", "cancelled", "iterations", "min_det"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                format!("{:?}", r.displacement),
                format!("{:?}", r.reaction),
                format!("{:.6}", r.seconds),
                r.unstable.to_string(),
                r.cancelled.to_string(),
                r.iterations.to_string(),
                r.min_det.map(|d| format!("{d:?}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct Solver<'m, B> {
    mesh: &'m Mesh,
    binding: B,
    boundary: Boundary,
    pub controls: SolverControls,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

impl<'m, B: MaterialBinding> Solver<'m, B> {
    pub fn new(mesh: &'m Mesh, binding: B, boundary: Boundary, controls: SolverControls) -> Result<Self> {
        controls.validate()?;
        let n = mesh.num_dofs();
        let mut constrained = vec![false; n];
        for &d in boundary.fixed.iter().chain(&boundary.loaded) {
            if d >= n {
                return Err(Error::Mesh(format!("constrained dof {d} out of range")));
            }
            constrained[d] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&d| !constrained[d]).collect();
        let mut free_index = vec![None; n];
        for (i, &d) in free.iter().enumerate() {
            free_index[d] = Some(i);
        }
        Ok(Self { mesh, binding, boundary, controls, free, free_index })
    }

    pub fn binding(&self) -> &B {
        &self.binding
    }

    pub fn binding_mut(&mut self) -> &mut B {
        &mut self.binding
    }

    pub fn into_binding(self) -> B {
        self.binding
    }

    pub fn init_state(&self, regime: Regime) -> Result<SolveState> {
        let points = (0..self.mesh.triangles.len())
            .map(|_| self.binding.init_point(regime))
            .collect::<Result<Vec<_>>>()?;
        Ok(SolveState {
            u: vec![0.0; self.mesh.num_dofs()],
            points,
            applied: 0.0,
            step: 0,
            reaction: 0.0,
            reference_reaction: 0.0,
            tangent: None,
        })
    }

    fn solve_free(&self, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.free.len();
        let t: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .filter_map(|&(r, c, v)| Some(Triplet::new(self.free_index[r]?, self.free_index[c]?, v)))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::StepFailed(format!("sparse assembly: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::StepFailed(format!("factorization: {e:?}")))?;
        let x = lu.solve(Mat::from_fn(n, 1, |i, _| rhs[i]));
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::StepFailed("singular tangent".into()))
        }
    }

    fn reaction(&self, a: &Assembly) -> f64 {
        self.boundary.loaded.iter().map(|&d| a.internal[d]).sum()
    }

    /// One attempt at advancing the applied displacement by `delta`. On
    /// failure `state` is left exactly as it was.
    pub fn solve_step(&mut self, state: &mut SolveState, delta: f64) -> Result<StepResult> {
        let mut u = state.u.clone();
        for &d in &self.boundary.loaded {
            u[d] += delta;
        }
        let ms = self.controls.max_substeps;
        let initial;
        let k = match &state.tangent {
            Some(k) => k,
            None => {
                initial = assemble(self.mesh, &state.points, &state.u, &self.binding, ms)?.triplets;
                &initial
            }
        };
        // linear predictor with the converged tangent
        let mut rhs = vec![0.0; self.free.len()];
        for &(r, c, v) in k {
            if let Some(i) = self.free_index[r] {
                if self.free_index[c].is_none() && self.boundary.loaded.contains(&c) {
                    rhs[i] -= v * delta;
                }
            }
        }
        let du = self.solve_free(k, &rhs)?;
        for (i, &d) in self.free.iter().enumerate() {
            u[d] += du[i];
        }
        let mut iterations = 1;
        let mut points = state.points.clone();
        let mut unstable = 0;
        let mut asm = assemble(self.mesh, &points, &u, &self.binding, ms)?;
        let hook = self.binding.first_iteration(&mut points, &asm.strains, &asm.responses, state.step + 1)?;
        unstable += hook.unstable;
        if hook.updated {
            asm = assemble(self.mesh, &points, &u, &self.binding, ms)?;
        }
        loop {
            let residual = norm(self.free.iter().map(|&d| asm.internal[d]));
            let forces = norm(self.boundary.fixed.iter().chain(&self.boundary.loaded).map(|&d| asm.internal[d]));
            if !residual.is_finite() {
                return Err(Error::StepFailed("non-finite residual".into()));
            }
            let scale = forces.max(state.reference_reaction);
            if residual <= self.controls.tolerance * forces || residual <= self.controls.absolute_floor * scale {
                break;
            }
            if iterations >= self.controls.max_iterations {
                return Err(Error::StepFailed(format!(
                    "no convergence in {iterations} iterations (residual {residual:.3e}, forces {forces:.3e})"
                )));
            }
            let rhs: Vec<f64> = self.free.iter().map(|&d| -asm.internal[d]).collect();
            let du = self.solve_free(&asm.triplets, &rhs)?;
            for (i, &d) in self.free.iter().enumerate() {
                u[d] += du[i];
            }
            iterations += 1;
            asm = assemble(self.mesh, &points, &u, &self.binding, ms)?;
        }
        let binding = &self.binding;
        points
            .par_iter_mut()
            .zip(asm.strains.par_iter().zip(&asm.responses))
            .enumerate()
            .try_for_each(|(e, (p, (s, r)))| binding.commit(p, s, r).map_err(|err| err.at_element(e)))?;
        let min_det = self
            .controls
            .track_stability
            .then(|| asm.responses.iter().map(|r| acoustic_det_min(&r.tangent, false).det).fold(f64::INFINITY, f64::min));
        let reaction = self.reaction(&asm);
        let forces = norm(self.boundary.fixed.iter().chain(&self.boundary.loaded).map(|&d| asm.internal[d]));
        state.u = u;
        state.points = points;
        state.applied += delta;
        state.step += 1;
        state.reaction = reaction;
        state.reference_reaction = state.reference_reaction.max(forces);
        state.tangent = Some(asm.triplets);
        Ok(StepResult { iterations, reaction, unstable, min_det })
    }

    /// Follows `program`, halving the increment after a cancelled attempt
    /// and growing it by `growth` after a converged one. Numerical failures
    /// end the run with `failure` set; other errors propagate.
    pub fn run(
        &mut self,
        state: &mut SolveState,
        program: &LoadProgram,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<RunOutcome> {
        program.validate()?;
        let start = Instant::now();
        let nominal = program.increment;
        let mut dt = nominal;
        let mut cancelled = 0;
        let mut unstable = 0;
        let first = StepRecord {
            step: state.step,
            displacement: state.applied,
            reaction: state.reaction,
            seconds: 0.0,
            unstable: 0,
            cancelled: 0,
            iterations: 0,
            min_det: None,
        };
        on_step(&first);
        let mut records = vec![first];
        let tiny = 1e-12 * program.waypoints.iter().fold(nominal, |m, w| m.max(w.abs()));
        for &target in &program.waypoints {
            while (target - state.applied).abs() > tiny {
                let remaining = target - state.applied;
                let delta = remaining.signum() * dt.min(remaining.abs());
                match self.solve_step(state, delta) {
                    Ok(r) => {
                        unstable += r.unstable;
                        let rec = StepRecord {
                            step: state.step,
                            displacement: state.applied,
                            reaction: r.reaction,
                            seconds: start.elapsed().as_secs_f64(),
                            unstable,
                            cancelled,
                            iterations: r.iterations,
                            min_det: r.min_det,
                        };
                        on_step(&rec);
                        records.push(rec);
                        dt = (dt * self.controls.growth).min(nominal);
                    }
                    Err(e) if e.is_numerical() => {
                        cancelled += 1;
                        dt *= 0.5;
                        let stop = if cancelled >= self.controls.max_cancelled {
                            Some(format!("{cancelled} cancelled increments; last: {e}"))
                        } else if dt < self.controls.min_increment_ratio * nominal {
                            Some(format!("increment below minimum at u = {}; last: {e}", state.applied))
                        } else {
                            None
                        };
                        if stop.is_some() {
                            return Ok(RunOutcome { records, failure: stop, cancelled, unstable });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(RunOutcome { records, failure: None, cancelled, unstable })
    }
}
