//! Element loop for constant-strain triangles.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use super::mesh::Mesh;
use super::PointState;
use crate::error::{Error, Result};
use crate::materials::MaterialResponse;
use crate::tensors::{Regime, StrainState};

/// Constitutive behaviour seen by the solver.
pub trait MaterialBinding: Sync {
    /// Single update to `strain` from the history `prev`.
    fn evaluate(
        &self,
        point: &PointState,
        prev: &crate::materials::InternalState,
        strain: &StrainState,
    ) -> Result<MaterialResponse>;

    /// Commits a converged response and prepares the point for the next step.
    fn commit(&self, point: &mut PointState, strain: &StrainState, response: &MaterialResponse) -> Result<()>;

    /// Hook run once after the first global iteration of every attempt.
    /// Returns the number of unstable points found and whether any point's
    /// frozen parameters changed (which forces a re-assembly).
    fn first_iteration(
        &mut self,
        _points: &mut [PointState],
        _strains: &[StrainState],
        _responses: &[MaterialResponse],
        _step: usize,
    ) -> Result<FirstIteration> {
        Ok(FirstIteration::default())
    }

    /// Fresh point at zero strain.
    fn init_point(&self, regime: Regime) -> Result<PointState>;

    /// Whether every tangent this binding returns is symmetric.
    fn symmetric_tangent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FirstIteration {
    pub unstable: usize,
    pub updated: bool,
}

/// Element strain from the global displacement vector.
pub fn element_strain(mesh: &Mesh, e: usize, u: &[f64], regime: Regime, eps_zz: f64) -> StrainState {
    let (b, _) = mesh.b_matrix(e);
    let ue = SVector::<f64, 6>::from_iterator(mesh.element_dofs(e).iter().map(|&d| u[d]));
    let eps = b * ue;
    match regime {
        Regime::PlaneStrain => StrainState::plane_strain([eps[0], eps[1], eps[2]]),
        Regime::PlaneStress => StrainState::plane_stress([eps[0], eps[1], eps[2]], eps_zz),
    }
}

/// Update from the committed state, splitting the strain increment into
/// `k = 2, 4, ..., max_substeps` equal parts when a single step fails.
pub fn evaluate_substepped<B: MaterialBinding + ?Sized>(
    binding: &B,
    point: &PointState,
    strain: &StrainState,
    max_substeps: usize,
) -> Result<MaterialResponse> {
    let first = match binding.evaluate(point, &point.alpha_old, strain) {
        Ok(r) => return Ok(r),
        Err(e) if e.is_numerical() => e,
        Err(e) => return Err(e),
    };
    let old = point.eps_old;
    let mut k = 2;
    while k <= max_substeps {
        let mut alpha = point.alpha_old;
        let attempt = (|| -> Result<MaterialResponse> {
            let mut last = None;
            for i in 1..=k {
                let f = i as f64 / k as f64;
                let mut s = *strain;
                for c in 0..3 {
                    s.eps[c] = old.eps[c] + f * (strain.eps[c] - old.eps[c]);
                }
                s.eps_zz = old.eps_zz + f * (strain.eps_zz - old.eps_zz);
                let r = binding.evaluate(point, &alpha, &s)?;
                alpha = r.state;
                last = Some(r);
            }
            Ok(last.expect("k >= 2"))
        })();
        match attempt {
            Ok(r) => return Ok(r),
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
        k *= 2;
    }
    Err(first)
}

/// Internal forces, tangent triplets and the per-point responses.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub internal: Vec<f64>,
    /// `(row, col, value)` element contributions; duplicates are summed.
    pub triplets: Vec<(usize, usize, f64)>,
    pub strains: Vec<StrainState>,
    pub responses: Vec<MaterialResponse>,
}

type ElementMatrix = SMatrix<f64, 6, 6>;

/// `f = t A B^T sigma` and `K = t A B^T D B` for every element.
pub fn assemble<B: MaterialBinding + ?Sized>(
    mesh: &Mesh,
    points: &[PointState],
    u: &[f64],
    binding: &B,
    max_substeps: usize,
) -> Result<Assembly> {
    if points.len() != mesh.triangles.len() {
        return Err(Error::DimensionMismatch { expected: mesh.triangles.len(), got: points.len() });
    }
    if u.len() != mesh.num_dofs() {
        return Err(Error::DimensionMismatch { expected: mesh.num_dofs(), got: u.len() });
    }
    let symmetric = binding.symmetric_tangent();
    let per_element: Vec<(StrainState, MaterialResponse, SVector<f64, 6>, ElementMatrix)> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|e| {
            let p = &points[e];
            let strain = element_strain(mesh, e, u, p.eps_old.regime, p.eps_old.eps_zz);
            let r = evaluate_substepped(binding, p, &strain, max_substeps).map_err(|err| err.at_element(e))?;
            if !(r.stress.planar().iter().all(|v| v.is_finite()) && r.tangent.is_finite()) {
                return Err(Error::StepFailed("non-finite material response".into()).at_element(e));
            }
            let (b, area) = mesh.b_matrix(e);
            let w = mesh.thickness * area;
            let f = b.transpose() * r.stress.planar() * w;
            let mut d = *r.tangent.matrix();
            if symmetric {
                d = 0.5 * (d + d.transpose());
            }
            let k = b.transpose() * d * b * w;
            Ok((strain, r, f, k))
        })
        .collect::<Result<_>>()?;
    let mut internal = vec![0.0; mesh.num_dofs()];
    let mut triplets = Vec::with_capacity(36 * mesh.triangles.len());
    let mut strains = Vec::with_capacity(points.len());
    let mut responses = Vec::with_capacity(points.len());
    for (e, (s, r, f, k)) in per_element.into_iter().enumerate() {
        let dofs = mesh.element_dofs(e);
        for i in 0..6 {
            internal[dofs[i]] += f[i];
            for j in 0..6 {
                triplets.push((dofs[i], dofs[j], k[(i, j)]));
            }
        }
        strains.push(s);
        responses.push(r);
    }
    Ok(Assembly { internal, triplets, strains, responses })
}
