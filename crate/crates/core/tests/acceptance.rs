//! End-to-end acceptance checks. Each test prints one PASS/FAIL line
//! (written past the test harness capture) before asserting.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::oracle::{Law, Oracle};
use hybrid_core::encoder::{Mode, Network, SELU_ALPHA, SELU_LAMBDA};
use hybrid_core::fesolve::{compare_curves, run_reference, run_surrogate, RunOutcome};
use hybrid_core::hybrid::{eval_loss, train, PreparedPath, TrainingReport};
use hybrid_core::materials::{update, ConstitutiveModel, ElasticParams, InternalState, J2Params, MelroParams};
use hybrid_core::paths::{generate_path, sample_direction, PathControl};
use hybrid_core::stability::{acoustic_det_min, point_det, stabilize_network, StabilizationConfig, UnstablePoint};
use hybrid_core::tensors::rotate_in_plane;
use hybrid_core::{
    DatasetConfig, DecoderKind, DemoConfig, EvalMask, FeatureKind, HybridSurrogate, LoadCase, PathDataset, PathKind,
    ReferenceMaterial, Regime, StrainPath, StrainState, TrainConfig, TrainingCheckpoint,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[acceptance] criterion {n:>2}: {tag}  {detail}").unwrap();
    out.flush().unwrap();
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_path(kind: PathKind, regime: Regime, r: &mut ChaCha8Rng) -> StrainPath {
    let d = sample_direction(r);
    generate_path(kind, d, regime, &ReferenceMaterial::default(), &PathControl::default(), r).unwrap().0
}

/// Monotonic training set, monotonic validation set and 50 test paths per kind.
struct Shared {
    data: PathDataset,
    melro: HybridSurrogate,
    melro_report: TrainingReport,
    retrain: Vec<PreparedPath>,
    validation: Vec<PreparedPath>,
}

const TRAIN_EPOCHS: usize = 300;

fn shared_config(decoder: DecoderKind) -> TrainConfig {
    TrainConfig { decoder, feature: FeatureKind::PrecalStressInv, epochs: TRAIN_EPOCHS, ..TrainConfig::default() }
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let t = Instant::now();
        let c = DatasetConfig { n_train: 150, n_validation: 50, n_test_per_kind: 50, ..DatasetConfig::default() };
        let data = PathDataset::generate(&c, Regime::PlaneStrain).unwrap();
        let (melro, melro_report) =
            train(&data.train_paths(), &data.validation_paths(), &shared_config(DecoderKind::Melro)).unwrap();
        let retrain = melro.prepare_paths(&data.train_paths()).unwrap();
        let validation = melro.prepare_paths(&data.validation_paths()).unwrap();
        eprintln!(
            "melro surrogate: best epoch {} val {:.3} ({:.0?})",
            melro_report.best_epoch,
            melro_report.best_val_loss,
            t.elapsed()
        );
        Shared { data, melro, melro_report, retrain, validation }
    })
}

#[test]
fn criterion_01_return_maps_match_dense_oracle() {
    let t = Instant::now();
    let el = ElasticParams::new(3760.0, 0.3);
    let reference = ReferenceMaterial::default();
    let j2 = J2Params::new(el, 60.0);
    let melro = MelroParams::new(el, 60.0, 1.5, 0.3);
    let cases: Vec<(&str, &dyn ConstitutiveModel, Law, f64)> = vec![
        ("j2", &j2, Law::J2 { sy: 60.0 }, 1e-8),
        ("melro", &melro, Law::Melro { st: 60.0, sc: 90.0, nu_p: 0.3 }, 1e-6),
        ("reference", &reference, Law::Hardening { st: (60.0, 90.0), sc: (90.0, 135.0), k0: 0.01, nu_p: 0.3 }, 1e-6),
    ];
    let mut r = rng(101);
    let dirs: Vec<[f64; 3]> = (0..20).map(|_| sample_direction(&mut r)).collect();
    let mut worst_stress: f64 = 0.0;
    let mut worst_yield: f64 = 0.0;
    let mut plastic_steps = 0;
    for (name, model, law, ytol) in &cases {
        for d in &dirs {
            let mut o = Oracle::new(*law, 3760.0, 0.3);
            let mut state = InternalState::default();
            for t in 1..=30 {
                let a = 0.1 * t as f64 / 30.0;
                let s = StrainState::plane_strain([d[0] * a, d[1] * a, d[2] * a]);
                let res = update(*model, &s, &state).unwrap();
                o.advance(&s.voigt6(), 10_000);
                let err = (res.stress.voigt6() - o.stress).norm() / o.stress.norm();
                worst_stress = worst_stress.max(err);
                if res.state.to_array() != state.to_array() {
                    plastic_steps += 1;
                    let phi = model.yield_function(&res.stress.voigt6(), &res.state).abs();
                    let rel = phi / model.yield_scale(&res.state) / ytol;
                    assert!(rel <= 1.0, "{name}: yield residual {phi:e} at step {t}");
                    worst_yield = worst_yield.max(rel);
                }
                state = res.state;
            }
        }
    }
    let ok = worst_stress <= 1e-3 && worst_yield <= 1.0 && plastic_steps > 0 && t.elapsed().as_secs() < 60;
    verdict(
        1,
        ok,
        &format!(
            "max relative stress error {worst_stress:.2e} (tol 1e-3), {plastic_steps} plastic steps, \
             worst yield residual {worst_yield:.2} of tolerance, {:.1?}",
            t.elapsed()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_02_path_gradient_matches_finite_differences() {
    let t = Instant::now();
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, kind) in DecoderKind::ALL.into_iter().enumerate() {
        let cfg = TrainConfig { decoder: kind, feature: FeatureKind::InvI1J2, seed: 40 + i as u64, ..TrainConfig::default() };
        let mut s = cfg.surrogate().unwrap();
        for p in 0..5 {
            let path = random_path(PathKind::ALL[p % 3], Regime::PlaneStrain, &mut r);
            let strains = path.strains();
            let target = path.stresses();
            let phi = s.path_features(&strains).unwrap();
            let (_, g) = s.loss_and_gradient(&strains, &phi, &target, Mode::Eval, &mut rng(0)).unwrap();
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let total = |s: &HybridSurrogate| hybrid_core::hybrid::loss(&s.predict_strains(&strains).unwrap(), &target);
            for _ in 0..50 {
                let k = r.random_range(0..s.network.num_weights());
                let w = s.network.weights()[k];
                let h = 1e-6 * w.abs().max(1e-2);
                s.network.set_weight(k, w + h);
                let lp = total(&s);
                s.network.set_weight(k, w - h);
                let lm = total(&s);
                s.network.set_weight(k, w);
                let fd = (lp - lm) / (2.0 * h);
                // coordinates with a negligible gradient are compared on the gradient's scale
                let scale = fd.abs().max(g[k].abs()).max(1e-3 * gmax);
                worst = worst.max((fd - g[k]).abs() / scale);
                checked += 1;
            }
        }
    }
    let ok = worst <= 1e-3 && t.elapsed().as_secs() < 300;
    verdict(2, ok, &format!("{checked} coordinates, worst relative difference {worst:.2e} (tol 1e-3), {:.1?}", t.elapsed()));
    assert!(ok);
}

#[test]
fn criterion_03_rotated_paths_give_rotated_predictions() {
    let t = Instant::now();
    let features: Vec<FeatureKind> = FeatureKind::ALL.into_iter().filter(|f| f.is_rotation_invariant()).collect();
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let kind = DecoderKind::ALL[i % 3];
        let feature = features[i % features.len()];
        let cfg = TrainConfig { decoder: kind, feature, hidden: vec![16, 16], seed: i as u64, ..TrainConfig::default() };
        let s = cfg.surrogate().unwrap();
        let path = random_path(PathKind::ALL[(i / 3) % 3], Regime::PlaneStrain, &mut r);
        let angle = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let base = s.predict_path(&path).unwrap();
        let rotated: Vec<StrainState> = path.strains().iter().map(|e| rotate_in_plane(e, angle).unwrap()).collect();
        let out = s.predict_strains(&rotated).unwrap();
        for (a, b) in base.iter().zip(&out) {
            let expect = a.rotated(angle);
            worst = worst.max((expect.voigt6() - b.voigt6()).norm() / a.norm().max(1e-12));
        }
    }
    let ok = worst <= 1e-8 && t.elapsed().as_secs() < 60;
    verdict(3, ok, &format!("100 (path, angle) pairs, worst relative deviation {worst:.2e} (tol 1e-8), {:.1?}", t.elapsed()));
    assert!(ok);
}

/// Secant stiffness of the first unloading branch relative to the elastic one.
fn unloading_stiffness_ratio(pred: &[hybrid_core::StressState], path: &StrainPath, el: &ElasticParams) -> Option<f64> {
    let n = path.norms();
    let peak = (0..n.len() - 1).find(|&t| n[t + 1] < n[t])?;
    let mut trough = peak;
    while trough + 1 < n.len() && n[trough + 1] < n[trough] {
        trough += 1;
    }
    if trough < peak + 2 {
        return None;
    }
    let de = Vector3::from(path.steps[trough].strain.eps) - Vector3::from(path.steps[peak].strain.eps);
    let ds = pred[trough].planar() - pred[peak].planar();
    let probe = StrainState::plane_strain([de[0], de[1], de[2]]);
    let elastic = update(el, &probe, &InternalState::default()).unwrap().stress.planar();
    Some(ds.dot(&de) / elastic.dot(&de))
}

#[test]
fn criterion_04_monotonic_training_extrapolates_to_unloading() {
    let t = Instant::now();
    let sh = shared();
    let (elastic, _) =
        train(&sh.data.train_paths(), &sh.data.validation_paths(), &shared_config(DecoderKind::Elastic)).unwrap();
    let test = sh.data.test_paths(Some(PathKind::UnloadReload));
    assert_eq!(test.len(), 50);
    assert!(sh.data.train_paths().iter().all(|p| p.kind == PathKind::Monotonic));
    let e_melro = hybrid_core::hybrid::evaluate(&sh.melro, &test, EvalMask::NonMonotonicStepsOnly).unwrap();
    let e_elastic = hybrid_core::hybrid::evaluate(&elastic, &test, EvalMask::NonMonotonicStepsOnly).unwrap();
    let el = ReferenceMaterial::default().elastic;
    let ratios: Vec<f64> = test
        .iter()
        .filter_map(|p| unloading_stiffness_ratio(&sh.melro.predict_path(p).unwrap(), p, &el))
        .collect();
    let mean_dev = ratios.iter().map(|k| (k - 1.0).abs()).sum::<f64>() / ratios.len() as f64;
    let max_dev = ratios.iter().fold(0.0f64, |m, k| m.max((k - 1.0).abs()));
    let ok = ratios.len() >= 40 && mean_dev <= 0.05 && 3.0 * e_melro <= e_elastic && t.elapsed().as_secs() < 1800;
    verdict(
        4,
        ok,
        &format!(
            "unloading secant stiffness off by {:.2}% on average (max {:.2}%, {} paths, tol 5%); \
             non-monotonic error melro {e_melro:.2} vs elastic {e_elastic:.2} MPa (ratio {:.1}, need >= 3), {:.1?}",
            100.0 * mean_dev,
            100.0 * max_dev,
            ratios.len(),
            e_elastic / e_melro,
            t.elapsed()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_05_invariant_features_learn_faster() {
    let t = Instant::now();
    let mut invariant = Vec::new();
    let mut raw = Vec::new();
    for seed in 0..5u64 {
        let c = DatasetConfig { seed: 500 + seed, n_train: 20, n_validation: 20, n_test_per_kind: 1, ..DatasetConfig::default() };
        let data = PathDataset::generate(&c, Regime::PlaneStrain).unwrap();
        for (feature, out) in [(FeatureKind::InvI1I2, &mut invariant), (FeatureKind::RawStrain, &mut raw)] {
            let cfg = TrainConfig { decoder: DecoderKind::Elastic, feature, epochs: 2000, seed, ..TrainConfig::default() };
            let (_, rep) = train(&data.train_paths(), &data.validation_paths(), &cfg).unwrap();
            out.push(rep.best_val_loss);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&invariant), mean(&raw));
    let ok = a < b && t.elapsed().as_secs() < 1200;
    verdict(5, ok, &format!("mean validation loss (I1, I2) {a:.1} vs raw strain {b:.1} over 5 seeds, {:.1?}", t.elapsed()));
    assert!(ok);
}

/// Independent SELU.
fn selu(x: f64) -> f64 {
    let (lambda, alpha) = (1.050_700_987_355_480_5, 1.673_263_242_354_377_3);
    if x > 0.0 {
        lambda * x
    } else {
        lambda * alpha * (x.exp() - 1.0)
    }
}

#[test]
fn criterion_06_protocol_constants() {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let control = PathControl::default();
    check(control.steps == 30 && control.final_norm == 0.1, "path control");
    let mut r = rng(606);
    for kind in PathKind::ALL {
        let p = random_path(kind, Regime::PlaneStrain, &mut r);
        let peak = p.norms().into_iter().fold(0.0, f64::max);
        check(p.len() == 30 && (peak - 0.1).abs() <= 1e-12, "generated path length and peak norm");
    }
    let cfg = TrainConfig::default();
    check(cfg.hidden == vec![50; 5] && cfg.dropout == 0.01, "hidden layers and dropout");
    let expected = [
        (DecoderKind::Elastic, vec![1e1, 0.0], vec![1e5, 0.5]),
        (DecoderKind::J2, vec![1e1], vec![1e3]),
        (DecoderKind::Melro, vec![1e1, 1.0, 0.0], vec![1e4, 100.0, 0.5]),
    ];
    for (kind, low, high) in expected {
        let s = TrainConfig { decoder: kind, ..TrainConfig::default() }.surrogate().unwrap();
        check(s.bounds().low == low && s.bounds().high == high, "parameter bounds");
        check(s.network.layer_sizes()[1..6] == [50; 5], "network shape");
    }
    check(SELU_LAMBDA == 1.050_700_987_355_480_5 && SELU_ALPHA == 1.673_263_242_354_377_3, "SELU constants");
    // one hidden unit: theta = low + (high - low) * sigmoid(w2 * selu(w1 * x + b1) + b2)
    let b = DecoderKind::J2.default_bounds();
    let mut net = Network::init_weights(&[1, 1, 1], 0.0, b.clone(), 0).unwrap();
    net.set_weights(vec![-0.7, 0.2, 1.3, -0.4]).unwrap();
    let x = 0.9;
    let z = 1.3 * selu(-0.7 * x + 0.2) - 0.4;
    let expect = b.low[0] + (b.high[0] - b.low[0]) / (1.0 + (-z).exp());
    let got = net.predict(&[x]).unwrap()[0];
    check((got - expect).abs() <= 1e-12 * expect, "SELU hidden activation and bounded output");

    // best-historical-validation selection, inspected through a checkpoint
    let c = DatasetConfig { seed: 66, n_train: 12, n_validation: 6, n_test_per_kind: 1, ..DatasetConfig::default() };
    let data = PathDataset::generate(&c, Regime::PlaneStrain).unwrap();
    let tc = TrainConfig { decoder: DecoderKind::J2, hidden: vec![8, 8], epochs: 25, learning_rate: 3e-2, ..TrainConfig::default() };
    let mut trainer = hybrid_core::hybrid::Trainer::new(&data.train_paths(), &data.validation_paths(), &tc).unwrap();
    trainer.run(|_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    trainer.checkpoint().save(&dir.path().join("ckpt.json")).unwrap();
    let ckpt = TrainingCheckpoint::load(&dir.path().join("ckpt.json")).unwrap();
    let curve = ckpt.report.val_curve();
    let argmin = (0..curve.len()).min_by(|&i, &j| curve[i].total_cmp(&curve[j])).unwrap();
    check(ckpt.report.best_epoch == argmin && curve.len() == 26, "best epoch is the validation argmin");
    let (best, _) = trainer.finish();
    let val = best.prepare_paths(&data.validation_paths()).unwrap();
    check(eval_loss(&best, &val).0 == ckpt.report.best_val_loss, "returned network is the best one");
    check(ckpt.config.hidden == vec![8, 8] && ckpt.config.dropout == 0.01, "checkpoint keeps its config");

    let ok = failures.is_empty();
    verdict(6, ok, &if ok { "all protocol constants reproduced".to_string() } else { format!("mismatched: {failures:?}") });
    assert!(ok);
}

#[test]
fn criterion_07_j2_surrogate_states_are_stable() {
    let t = Instant::now();
    let s = TrainConfig { decoder: DecoderKind::J2, ..TrainConfig::default() }.surrogate().unwrap();
    let b = s.bounds().clone();
    let mut r = rng(707);
    let mut violations = 0;
    let mut min_det = f64::INFINITY;
    let mut plastic = 0;
    for _ in 0..10_000 {
        let theta = vec![b.low[0] * (b.high[0] / b.low[0]).powf(r.random::<f64>())];
        let d0 = sample_direction(&mut r);
        let a0 = r.random_range(0.0..0.1);
        let prev = s
            .decoder_update(&theta, &StrainState::plane_strain([d0[0] * a0, d0[1] * a0, d0[2] * a0]), &InternalState::default())
            .unwrap()
            .state;
        let d = sample_direction(&mut r);
        let a = r.random_range(0.0..0.1);
        let res = s.decoder_update(&theta, &StrainState::plane_strain([d[0] * a, d[1] * a, d[2] * a]), &prev).unwrap();
        if res.state.to_array() != prev.to_array() {
            plastic += 1;
        }
        let det = acoustic_det_min(&res.tangent, true).det;
        min_det = min_det.min(det);
        if det <= 0.0 {
            violations += 1;
        }
    }
    let ok = violations == 0 && t.elapsed().as_secs() < 120;
    verdict(
        7,
        ok,
        &format!("10000 states ({plastic} plastic), {violations} with det Q <= 0, smallest det {min_det:.3e}, {:.1?}", t.elapsed()),
    );
    assert!(ok);
}

/// First strain state along seeded random paths where the surrogate loses
/// stability.
fn unstable_points(s: &HybridSurrogate, seed: u64, want: usize) -> Vec<UnstablePoint> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for _ in 0..2000 {
        let path = random_path(PathKind::ALL[r.random_range(0..3)], Regime::PlaneStrain, &mut r);
        let strains = path.strains();
        let mut fs = s.initial_feature_state();
        let mut phi = s.features(&StrainState::zero(Regime::PlaneStrain), fs.as_ref()).unwrap();
        let mut alpha = InternalState::default();
        for e in &strains {
            let p = UnstablePoint { strain: *e, alpha, features: phi.clone(), det_q0: 0.0 };
            let probe = point_det(s, &p, false).unwrap();
            if probe.det < 0.0 {
                out.push(p);
                break;
            }
            let theta = s.theta(&phi).unwrap();
            alpha = s.decoder_update(&theta, e, &alpha).unwrap().state;
            hybrid_core::features::commit(s.feature, fs.as_mut(), e).unwrap();
            phi = s.features(e, fs.as_ref()).unwrap();
        }
        if out.len() == want {
            break;
        }
    }
    out
}

#[test]
fn criterion_08_stabilization_reduces_instability() {
    let t = Instant::now();
    let sh = shared();
    let mut points = unstable_points(&sh.melro, 808, 4);
    assert!(!points.is_empty(), "no unstable state found");
    let q0 = {
        let fs = sh.melro.initial_feature_state();
        let z = StrainState::zero(Regime::PlaneStrain);
        let phi = sh.melro.features(&z, fs.as_ref()).unwrap();
        point_det(&sh.melro, &UnstablePoint { strain: z, alpha: InternalState::default(), features: phi, det_q0: 0.0 }, false)
            .unwrap()
            .det
    };
    for p in &mut points {
        p.det_q0 = q0;
    }
    let only = StabilizationConfig { retrain_paths: 0, ..StabilizationConfig::default() };
    assert_eq!((only.epochs, only.learning_rate), (5, 1e-5));
    let mut s = sh.melro.clone();
    let a = stabilize_network(&mut s, &points, &only, &[], None).unwrap();
    let reduced = a.negative_after > a.negative_before;

    let full = StabilizationConfig::default();
    assert_eq!((full.retrain_paths, full.retrain_learning_rate), (1, 1e-9));
    let before = eval_loss(&sh.melro, &sh.validation).0;
    let mut s = sh.melro.clone();
    let b = stabilize_network(&mut s, &points, &full, &sh.retrain, Some(&sh.validation)).unwrap();
    let after = b.val_loss.unwrap();
    let change = (after - before).abs() / before;
    let ok = reduced && b.negative_after > b.negative_before && change < 0.01 && t.elapsed().as_secs() < 300;
    verdict(
        8,
        ok,
        &format!(
            "{} unstable points: sum <det Q>_- {:.4e} -> {:.4e}; with retraining validation loss {before:.3} -> {after:.3} \
             ({:.4}% change, tol 1%), {:.1?}",
            points.len(),
            a.negative_before,
            a.negative_after,
            100.0 * change,
            t.elapsed()
        ),
    );
    assert!(ok);
}

fn demo_run(config: &DemoConfig, case: LoadCase, increment: f64) -> (RunOutcome, usize) {
    let sh = shared();
    let st = config.stabilization.clone();
    let (out, binding) =
        run_surrogate(config, case, &sh.melro, increment, Some((&st, &sh.retrain[..], Some(&sh.validation[..])))).unwrap();
    (out, binding.updates)
}

#[test]
fn criterion_09_fe_curves_follow_the_reference() {
    let t = Instant::now();
    let sh = shared();
    let config = DemoConfig::default();
    assert!((config.surrogate_increment() - config.reference_increment / 10.0).abs() < 1e-15);
    let mut parts = Vec::new();
    let mut ok = true;
    for (case, tol) in [(LoadCase::Monotonic, 0.05), (LoadCase::UnloadReload, 0.08)] {
        let reference = run_reference(&config, case).unwrap();
        assert!(reference.completed(), "{:?}", reference.failure);
        let (out, updates) = demo_run(&config, case, config.surrogate_increment());
        let err = compare_curves(&reference.curve(), &out.curve());
        let pass = out.completed() && err.is_some_and(|e| e <= tol);
        ok &= pass;
        parts.push(format!(
            "{} {} (tol {:.0}%, {} steps, {} stabilizations)",
            case.as_str(),
            err.map_or("incomplete".into(), |e| format!("{:.2}%", 100.0 * e)),
            100.0 * tol,
            out.records.len() - 1,
            updates
        ));
    }
    let _ = sh.melro_report.best_epoch;
    ok &= t.elapsed().as_secs() < 1800;
    verdict(9, ok, &format!("RMS of peak load: {}, {:.1?}", parts.join("; "), t.elapsed()));
    assert!(ok);
}

#[test]
fn criterion_10_step_size_sensitivity() {
    let t = Instant::now();
    let config = DemoConfig::default();
    let du = config.surrogate_increment();
    let (base, _) = demo_run(&config, LoadCase::Monotonic, du);
    let (half, _) = demo_run(&config, LoadCase::Monotonic, 0.5 * du);
    let diff = compare_curves(&base.curve(), &half.curve());
    let (coarse, _) = demo_run(&config, LoadCase::Monotonic, 100.0 * du);
    let coarse_note = match compare_curves(&base.curve(), &coarse.curve()) {
        Some(e) if coarse.completed() => format!("completed, {:.2}% from default ({} cancellations)", 100.0 * e, coarse.cancelled),
        _ => format!("stopped early: {}", coarse.failure.clone().unwrap_or_default()),
    };
    let ok = base.completed() && half.completed() && diff.is_some_and(|e| e < 0.02);
    verdict(
        10,
        ok,
        &format!(
            "halved increment changes the curve by {} (tol 2%); 100x increment {coarse_note}, {:.1?}",
            diff.map_or("n/a".into(), |e| format!("{:.3}%", 100.0 * e)),
            t.elapsed()
        ),
    );
    assert!(ok);
}
