use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajsync::estimators::*;
use trajsync::intersection::fit_trajectory_known_time;
use trajsync::motion::{PolyTrajectory, TimeModel};
use trajsync::nlls::{analytic_jacobian, numeric_jacobian, SolveOptions};
use trajsync::simulator::*;
use trajsync::Error;

fn scene(order: usize, targets: usize, offset: f64) -> Scene {
    synthesize_scene(&SceneConfig::replica(order, targets, offset)).unwrap()
}

fn max_coeff_gap(a: &PolyTrajectory, b: &PolyTrajectory) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn sigma(result: &ReconstructionResult, s: &Scene, obs: &ObservationSet, target: usize) -> f64 {
    let times = observation_times(obs, &s.truth, target);
    localization_error(&result.trajectories[&target], &s.truth.trajectories[&target], &times)
        .unwrap()
        .sigma_3d
}

#[test]
fn multi_ti_is_exact_on_synchronized_cameras() {
    let s = scene(2, 2, 0.0);
    let r = reconstruct_multi_ti(&s.observations, 2).unwrap();
    for (id, truth) in &s.truth.trajectories {
        assert!(max_coeff_gap(&r.trajectories[id], truth) < 1e-8);
    }
    assert_eq!(r.time_models, s.observations.nominal_time_models());
}

#[test]
fn multi_ti_degrades_with_offset_while_algorithm1_does_not() {
    let s = scene(1, 1, 5.0);
    let obs = &s.observations;
    let multi = reconstruct_multi_ti(obs, 1).unwrap();
    let alg1 = reconstruct_algorithm1(obs, 1, false, &SolveOptions::default()).unwrap();
    assert!(sigma(&multi, &s, obs, 0) > 1.0);
    assert!(sigma(&alg1, &s, obs, 0) < 1e-6);
}

#[test]
fn empty_observations_are_underdetermined() {
    let mut obs = scene(1, 1, 0.0).observations;
    obs.observations.clear();
    for method in Method::ALL {
        let err = reconstruct(method, &obs, &[1], &MethodOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { .. }), "{method}: {err}");
    }
}

#[test]
fn algorithm1_recovers_half_second_offset() {
    let s = scene(1, 1, 5.0);
    let r = reconstruct_algorithm1(&s.observations, 1, false, &SolveOptions::default()).unwrap();
    assert!((r.time_models[1].beta - 0.5).abs() < 1e-6, "{:?}", r.time_models);
    assert_eq!(r.time_models[GAUGE_CAMERA], s.observations.cameras[0].nominal);
    assert!(r.report.is_monotone());
}

#[test]
fn algorithm1_recovers_frame_rate_from_wrong_nominal() {
    let cfg = SceneConfig::replica(1, 4, 5.0).with_nominal_fps(9.0);
    let s = synthesize_scene(&cfg).unwrap();
    assert_eq!(s.observations.cameras[1].nominal.alpha, 9.0);
    let r = reconstruct_algorithm1(&s.observations, 1, true, &SolveOptions::default()).unwrap();
    assert!((r.time_models[1].alpha - 10.0).abs() < 1e-6, "{:?}", r.time_models);
    assert!((r.time_models[1].beta - 0.5).abs() < 1e-6);
}

#[test]
fn li_recovers_offset_when_given_enough_iterations() {
    // Alternation converges linearly, so the default cap stops well short of 1e-6 s.
    let s = scene(1, 1, 5.0);
    let opts = LiOptions {
        max_outer_iterations: 500,
        tol: 1e-10,
    };
    let r = reconstruct_li(&s.observations, 1, &opts).unwrap();
    assert!((r.time_models[1].beta - 0.5).abs() < 1e-6, "{:?}", r.time_models);
    assert_eq!(r.time_models[1].alpha, 10.0);
}

#[test]
fn li_default_caps_iterations_and_keeps_cost_monotone() {
    let s = scene(2, 1, 3.0);
    let noisy = apply_noise(&s.observations, &NoiseConfig::high(1)).unwrap();
    let r = reconstruct_li(&noisy, 2, &LiOptions::default()).unwrap();
    assert!(r.report.iterations <= 20);
    assert!(r.report.is_monotone(), "{:?}", r.report.cost_history);
}

#[test]
fn li_leaves_synchronized_clocks_alone() {
    let s = scene(1, 1, 0.0);
    let r = reconstruct_li(&s.observations, 1, &LiOptions::default()).unwrap();
    assert!(r.time_models[1].beta.abs() < 1e-9);
    assert!(sigma(&r, &s, &s.observations, 0) < 1e-6);
}

#[test]
fn true_clocks_reduce_algorithm1_to_known_time_fit() {
    let s = scene(2, 1, 4.0);
    let noisy = apply_noise(&s.observations, &NoiseConfig::high(7)).unwrap();
    let init = reconstruct_multi_ti(&noisy, 2).unwrap();
    let config = JointConfig {
        optimize_offsets: false,
        ..Default::default()
    };
    let r = bundle_adjust(&noisy, &init.trajectories, &s.truth.time_models, &config).unwrap();
    assert!(r.report.iterations <= 2, "{:?}", r.report);
    let direct = fit_trajectory_known_time(&noisy.bundle(0, &s.truth.time_models).unwrap(), 2).unwrap();
    let t0 = noisy.mid_time(&s.truth.time_models);
    for k in 0..10 {
        let t = t0 + (k as f64 - 5.0) * 0.5;
        assert!((r.trajectories[&0].eval(t) - direct.eval(t)).norm() < 1e-9);
    }
}

#[test]
fn common_clock_shift_only_relabels_time() {
    let s = scene(1, 1, 3.0);
    let na = apply_noise(&s.observations, &NoiseConfig::high(3)).unwrap();
    let opts = SolveOptions::default();
    let ra = reconstruct_algorithm1(&na, 1, false, &opts).unwrap();

    // Identical observations, every nominal clock shifted by d.
    let d = 0.37;
    let mut shifted = na.clone();
    for cam in &mut shifted.cameras {
        cam.nominal.beta += d;
    }
    let rs = reconstruct_algorithm1(&shifted, 1, false, &opts).unwrap();
    for o in &na.observations {
        let pa = ra.trajectories[&0].eval(ra.time_models[o.camera].global_time(o.frame));
        let ps = rs.trajectories[&0].eval(rs.time_models[o.camera].global_time(o.frame));
        assert!((pa - ps).norm() < 1e-6, "{pa} vs {ps}");
    }
    assert!((rs.time_models[0].beta - d).abs() < 1e-15);
}

#[test]
fn algorithm1_never_ends_above_its_multi_ti_start() {
    for seed in 0..5 {
        let s = scene(1, 2, 6.0);
        let noisy = apply_noise(&s.observations, &NoiseConfig::high(seed)).unwrap();
        let multi = reconstruct_multi_ti(&noisy, 1).unwrap();
        let alg1 = reconstruct_algorithm1(&noisy, 1, false, &SolveOptions::default()).unwrap();
        let start = joint_cost(&noisy, &multi.trajectories, &multi.time_models);
        assert!(alg1.report.final_cost <= start + 1e-12);
        assert!(alg1.report.is_monotone());
    }
}

#[test]
fn algorithm2_rejects_single_target() {
    let s = scene(1, 1, 2.0);
    let err = reconstruct_algorithm2(&s.observations, &[1], false, 100.0, &SolveOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Underdetermined { .. }), "{err}");
}

#[test]
fn algorithm2_rejects_negative_prior() {
    let s = scene(1, 4, 2.0);
    let err = reconstruct_algorithm2(&s.observations, &[1], false, -1.0, &SolveOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn algorithm2_removes_rotation_noise() {
    let s = scene(1, 4, 3.0);
    let noise = NoiseConfig {
        rotation_random_sigma: 0.5,
        ..NoiseConfig::none(11)
    };
    let noisy = apply_noise(&s.observations, &noise).unwrap();
    let opts = SolveOptions::default();
    let alg1 = reconstruct_algorithm1(&noisy, 1, false, &opts).unwrap();
    let alg2 = reconstruct_algorithm2(&noisy, &[1], false, 0.0, &opts).unwrap();
    let e1 = sigma(&alg1, &s, &noisy, 0);
    let e2 = sigma(&alg2, &s, &noisy, 0);
    assert!(e2 < 0.2 * e1, "alg2 {e2} vs alg1 {e1}");
    let rotations = alg2.rotations.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for (&(c, f), q) in rotations {
        worst = worst.max(q.angle_to(&s.truth.poses[c][f].rotation).to_degrees());
    }
    assert!(worst < 0.05, "worst rotation error {worst} deg");
}

#[test]
fn orders_for_expands_and_rejects() {
    let obs = scene(1, 3, 0.0).observations;
    let one = orders_for(&obs, &[2]).unwrap();
    assert_eq!(one, BTreeMap::from([(0, 2), (1, 2), (2, 2)]));
    let each = orders_for(&obs, &[0, 1, 2]).unwrap();
    assert_eq!(each[&2], 2);
    assert!(orders_for(&obs, &[1, 2]).is_err());
    assert!(orders_for(&obs, &[9]).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("alg3".parse::<Method>().is_err());
}

#[test]
fn validate_reports_bad_references() {
    let mut obs = scene(1, 1, 0.0).observations;
    obs.observations[0].frame = 999;
    assert!(obs.validate().is_err());
    obs.observations[0].frame = 0;
    obs.observations[0].camera = 7;
    assert!(reconstruct_multi_ti(&obs, 1).is_err());
}

fn jacobian_gap(rotations: bool, rng_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cfg = SceneConfig::random(&mut rng, 2, 3, 2);
    let s = synthesize_scene(&cfg).unwrap();
    let noisy = apply_noise(&s.observations, &NoiseConfig::high(rng_seed)).unwrap();
    // Perturbed starting point so the Jacobian is not evaluated at the truth.
    let mut trajs = s.truth.trajectories.clone();
    for t in trajs.values_mut() {
        *t = t.translated(&nalgebra::Vector3::new(3.0, -2.0, 1.0));
    }
    let mut tms = s.truth.time_models.clone();
    tms[1].beta += 0.03;
    tms[1].alpha *= 1.01;
    let config = JointConfig {
        optimize_fps: true,
        optimize_rotations: rotations,
        rotation_prior_weight: if rotations { 50.0 } else { 0.0 },
        ..Default::default()
    };
    let problem = joint_problem(&noisy, &trajs, &tms, &config).unwrap();
    let a: DMatrix<f64> = analytic_jacobian(&problem);
    let n = numeric_jacobian(&problem, 1e-6);
    let scale = a.amax().max(1.0);
    (a - n).amax() / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn joint_jacobian_matches_finite_differences(seed in 0u64..10_000) {
        prop_assert!(jacobian_gap(false, seed) < 1e-5);
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences(seed in 0u64..10_000) {
        prop_assert!(jacobian_gap(true, seed) < 1e-5);
    }

    #[test]
    fn algorithm1_recovers_offsets_on_random_scenes(seed in 0u64..10_000, order in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SceneConfig::random(&mut rng, 2, 1, order);
        let s = synthesize_scene(&cfg).unwrap();
        let r = reconstruct_algorithm1(&s.observations, order, false, &SolveOptions::default()).unwrap();
        let truth: &TimeModel = &s.truth.time_models[1];
        prop_assert!((r.time_models[1].beta - truth.beta).abs() < 1e-6);
    }
}
