mod common;

use common::oracle::{Law, Oracle};
use hybrid_core::materials::{
    update, ConstitutiveModel, ElasticParams, InternalState, J2Params, MelroParams, ReferenceMaterial,
};
use hybrid_core::tensors::{stress_invariants, StrainState};
use proptest::prelude::*;

fn models() -> Vec<Box<dyn ConstitutiveModel>> {
    let el = ElasticParams::new(3760.0, 0.3);
    vec![
        Box::new(el),
        Box::new(J2Params::new(el, 55.0)),
        Box::new(MelroParams::new(el, 50.0, 1.4, 0.25)),
        Box::new(ReferenceMaterial::default()),
    ]
}

fn drive(model: &dyn ConstitutiveModel, dir: [f64; 3], steps: usize, scale: f64) -> InternalState {
    let mut state = InternalState::default();
    for t in 1..=steps {
        let f = scale * t as f64 / steps as f64;
        let s = StrainState::plane_strain([dir[0] * f, dir[1] * f, dir[2] * f]);
        state = update(model, &s, &state).unwrap().state;
    }
    state
}

#[test]
fn j2_single_step_matches_dense_oracle() {
    let m = J2Params::new(ElasticParams::new(1000.0, 0.0), 10.0);
    let s = StrainState::plane_strain([0.02, 0.0, 0.0]);
    let r = update(&m, &s, &InternalState::default()).unwrap();
    let (_, j2) = stress_invariants(&r.stress);
    assert!(((3.0 * j2).sqrt() - 10.0).abs() <= 1e-6);
    let mut o = Oracle::new(Law::J2 { sy: 10.0 }, 1000.0, 0.0);
    o.advance(&s.voigt6(), 10_000);
    assert!((r.stress.voigt6() - o.stress).norm() <= 1e-3 * o.stress.norm());
    let ep = hybrid_core::materials::InternalState::eps_p6(&r.state);
    assert!((ep - o.eps_p).norm() <= 1e-3 * o.eps_p.norm());
}

#[test]
fn melro_uniaxial_path_matches_dense_oracle() {
    let m = MelroParams::new(ElasticParams::new(3760.0, 0.3), 48.0, 1.7, 0.2);
    let mut o = Oracle::new(Law::Melro { st: 48.0, sc: 48.0 * 1.7, nu_p: 0.2 }, 3760.0, 0.3);
    let mut state = InternalState::default();
    let mut last = None;
    for t in 1..=30 {
        let s = StrainState::plane_strain([0.1 * t as f64 / 30.0, 0.0, 0.0]);
        let r = update(&m, &s, &state).unwrap();
        state = r.state;
        o.advance(&s.voigt6(), 10_000);
        last = Some(r);
    }
    let r = last.unwrap();
    assert!((r.stress.voigt6() - o.stress).norm() <= 1e-3 * o.stress.norm());
}

#[test]
fn reference_uniaxial_path_matches_dense_oracle() {
    let m = ReferenceMaterial::default();
    let mut o = Oracle::new(Law::Hardening { st: (60.0, 90.0), sc: (90.0, 135.0), k0: 0.01, nu_p: 0.3 }, 3760.0, 0.3);
    let mut state = InternalState::default();
    for t in 1..=30 {
        let s = StrainState::plane_strain([-0.1 * t as f64 / 30.0, 0.0, 0.0]);
        let r = update(&m, &s, &state).unwrap();
        state = r.state;
        o.advance(&s.voigt6(), 10_000);
        assert!((r.stress.voigt6() - o.stress).norm() <= 1e-3 * o.stress.norm(), "step {t}");
    }
}

#[test]
fn plane_stress_reference_converges() {
    let m = ReferenceMaterial::default();
    let mut state = InternalState::default();
    for t in 1..=30 {
        let f = 0.1 * t as f64 / 30.0;
        let r = update(&m, &StrainState::plane_stress([f, -0.3 * f, 0.5 * f], 0.0), &state).unwrap();
        assert!(r.stress.sig_zz.abs() <= 1e-8 * r.stress.norm() + 1e-12);
        state = r.state;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn elastic_unloading_from_plastic_states(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, k in 0usize..4,
    ) {
        let n = (a * a + b * b + c * c).sqrt().max(1e-3);
        let dir = [a / n, b / n, c / n];
        let model = &models()[k];
        let state = drive(model.as_ref(), dir, 10, 0.05);
        let at = StrainState::plane_strain([dir[0] * 0.05, dir[1] * 0.05, dir[2] * 0.05]);
        let base = update(model.as_ref(), &at, &state).unwrap();
        let back = StrainState::plane_strain([dir[0] * 0.0499, dir[1] * 0.0499, dir[2] * 0.0499]);
        let r = update(model.as_ref(), &back, &base.state).unwrap();
        prop_assert_eq!(r.delta_gamma, 0.0);
        let de = ElasticParams::new(3760.0, 0.3).stiffness();
        let ds = de * (back.voigt6() - at.voigt6());
        let got = r.stress.voigt6() - base.stress.voigt6();
        prop_assert!((got - ds).norm() <= 1e-8 * ds.norm().max(1e-12) + 1e-8 * base.stress.norm() * 1e-3);
    }

    #[test]
    fn plane_strain_updates_are_frame_invariant(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, angle in 0.0f64..std::f64::consts::PI,
        k in 0usize..4,
    ) {
        let n = (a * a + b * b + c * c).sqrt().max(1e-3);
        let dir = [a / n, b / n, c / n];
        let model = &models()[k];
        let state = drive(model.as_ref(), dir, 6, 0.04);
        let s = StrainState::plane_strain([dir[0] * 0.05, dir[1] * 0.03, dir[2] * 0.06]);
        let r = update(model.as_ref(), &s, &state).unwrap();
        let rs = hybrid_core::tensors::rotate_in_plane(&s, angle).unwrap();
        let rr = update(model.as_ref(), &rs, &state.rotated(angle)).unwrap();
        let expected = r.stress.rotated(angle);
        let scale = expected.norm().max(1e-12);
        prop_assert!((rr.stress.voigt6() - expected.voigt6()).norm() <= 1e-8 * scale);
    }
}
