use nalgebra::{DMatrix, DVector};
use rand::Rng;

use epitrack_core::evolution::diffusion_threshold_closed_form;
use epitrack_core::filter::{predict, predict_with_noise, track, FilterState};
use epitrack_core::meanfield::{
    asymptotic_state, build_dynamics, build_dynamics_with, dense_tensors, mean_field_step, simulate_mean_field,
};
use epitrack_core::pcrlb::{pcrlb_run, PcrlbConfig};
use epitrack_core::sampling::gaussian_observation;
use epitrack_core::{rng_from_seed, DegreeDistribution, LambdaScope, TransitionKernel};

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f(lo) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn scalar_fixed_point_matches_root_finder() {
    for seed in 0..10 {
        let k = TransitionKernel::random(1, 1.0, seed).unwrap();
        let d = build_dynamics(&k, &DegreeDistribution::uniform(1).unwrap(), 3).unwrap();
        let fp = asymptotic_state(&d, &[0.5], 1e-14, 1_000_000).unwrap();
        assert!(fp.converged);
        let root = bisect(|x| (1.0 - x) * d.g_inc(1, x) - x * d.g_dec(1, x), 0.0, 1.0);
        assert!((fp.state[0] - root).abs() < 1e-9, "seed {seed}: {} vs {root}", fp.state[0]);
    }
}

#[test]
fn below_closed_form_threshold_dies_out() {
    let mut rng = rng_from_seed(4);
    for seed in 0..5 {
        let l = 5;
        let p21: Vec<f64> = (0..=l).map(|_| rng.random_range(0.1..1.0)).collect();
        let k = TransitionKernel::from_fn(l, 1.0, |_, a| (1.0, if a == 0 { 0.0 } else { p21[a] }))
            .unwrap();
        let rho = DegreeDistribution::power_law(2.5, l).unwrap();
        let lambda_star = diffusion_threshold_closed_form(rho.probs(), &k).unwrap();
        let below = k.with_lambda_unchecked(0.5 * lambda_star);
        let d = build_dynamics_with(&below, &rho, 1, LambdaScope::InfectionOnly).unwrap();
        let fp = asymptotic_state(&d, &vec![0.01; l], 1e-13, 1_000_000).unwrap();
        assert!(fp.state.iter().all(|&x| x.abs() < 1e-8), "seed {seed}: {:?}", fp.state);
    }
}

#[test]
fn tensor_form_matches_per_degree_map() {
    let mut rng = rng_from_seed(8);
    let k = TransitionKernel::random(3, 0.9, 8).unwrap();
    let d = build_dynamics(&k, &DegreeDistribution::uniform(3).unwrap(), 7).unwrap();
    let t = dense_tensors(&d, d.polynomial_degree()).unwrap();
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = t.evaluate(&x);
        let b = mean_field_step(&d, &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

fn affine_model() -> (epitrack_core::PolynomialDynamics, DMatrix<f64>, DVector<f64>) {
    let inc = [0.3, 0.1, 0.5];
    let dec = [0.2, 0.6, 0.1];
    let k = TransitionKernel::from_fn(3, 1.0, |l, _| (dec[l.max(1) - 1], inc[l.max(1) - 1])).unwrap();
    let d = build_dynamics(&k, &DegreeDistribution::uniform(3).unwrap(), 2).unwrap();
    let b = DMatrix::from_diagonal(&DVector::from_fn(3, |i, _| 1.0 - 0.5 * (inc[i] + dec[i])));
    let a = DVector::from_fn(3, |i, _| 0.5 * inc[i]);
    (d, b, a)
}

#[test]
fn affine_prediction_is_kalman_prediction() {
    let (d, b, a) = affine_model();
    let h = DMatrix::from_row_slice(3, 3, &[0.02, 0.005, 0.0, 0.005, 0.01, 0.002, 0.0, 0.002, 0.03]);
    let belief = FilterState::new(vec![0.2, 0.5, 0.7], h.clone()).unwrap();
    let p = predict(&d, &belief).unwrap();
    let mean = &b * &belief.mean + &a;
    let cov = &b * &h * b.transpose();
    assert!((&p.mean - mean).amax() < 1e-14);
    assert!((&p.cov - cov).amax() < 1e-14);
}

#[test]
fn affine_pcrlb_is_kalman_covariance_trace() {
    let (d, b, _) = affine_model();
    let r = 4e-3;
    let eps = 1e-6;
    let mut cfg = PcrlbConfig::identity_observations(3, r, 4, 30);
    cfg.epsilon = eps;
    let prior = FilterState::isotropic(3, 0.5, 1e-2).unwrap();
    let fisher = pcrlb_run(&d, &cfg, &prior, 1).unwrap();
    let mut p = prior.cov.clone();
    let eye = DMatrix::<f64>::identity(3, 3);
    assert!((fisher.traces[0] - p.trace()).abs() < 1e-8);
    for n in 1..=30 {
        p = &b * &p * b.transpose() + &eye * eps;
        let gain = &p * (&p + &eye * r).try_inverse().unwrap();
        p = (&eye - gain) * &p;
        assert!((fisher.traces[n] - p.trace()).abs() < 1e-8, "step {n}");
    }
}

#[test]
fn filter_tracks_mean_field_truth() {
    let k = TransitionKernel::random(4, 1.0, 21).unwrap();
    let d = build_dynamics(&k, &DegreeDistribution::power_law(2.5, 4).unwrap(), 20).unwrap();
    let run = simulate_mean_field(&d, &[0.5; 4], 200).unwrap();
    let truth = run.states[1..].to_vec();
    let mut rng = rng_from_seed(2);
    let obs: Vec<_> = truth.iter().map(|x| gaussian_observation(x, 5e-3, &mut rng).unwrap()).collect();
    let steps = track(&d, &obs, &FilterState::isotropic(4, 0.5, 1e-2).unwrap(), Some(&truth), 1e-8).unwrap();
    let early = steps[0].total_sq_error().unwrap();
    let late = steps.last().unwrap().total_sq_error().unwrap();
    assert!(late < early && late < 1e-4, "{early} -> {late}");
    for s in &steps {
        assert!(s.posterior.min_eigenvalue() > 0.0);
    }
}

#[test]
fn process_noise_inflates_prediction_covariance() {
    let (d, _, _) = affine_model();
    let belief = FilterState::isotropic(3, 0.4, 1e-3).unwrap();
    let a = predict(&d, &belief).unwrap();
    let b = predict_with_noise(&d, &belief, 1e-4).unwrap();
    assert!(((&b.cov - &a.cov) - DMatrix::<f64>::identity(3, 3) * 1e-4).amax() < 1e-15);
}
