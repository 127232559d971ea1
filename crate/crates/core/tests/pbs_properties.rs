mod common;

use common::*;
use proptest::prelude::*;
use sphere_dmc::pbs::{
    self, estimate_p_obs, particle_rng, step, wilson_interval, BoundaryStats, ParticleState, PbsConfig, PbsError,
    StepParams, Validity,
};
use sphere_dmc::{Execution, SphericalPoint};

fn cfg(dt: f64, n: usize, seed: u64, window: (f64, f64), bin: f64) -> PbsConfig {
    PbsConfig {
        dt,
        n_particles: n,
        seed,
        bin_width: bin,
        record_window: window,
    }
}

#[test]
fn degradation_survival_is_exponential() {
    let e = env(20.0, 0.0);
    let c = cfg(1e-4, 20_000, 3, (0.01, 0.1), 0.01);
    let est = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    for (t, alive) in est.times.iter().zip(&est.n_alive) {
        // Per-step survival probability is 1 − k_d dt.
        let p = (1.0 - 20.0 * 1e-4f64).powf((t / 1e-4).round());
        let n = 20_000.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((*alive as f64 - n * p).abs() < 4.0 * sigma, "t={t}: {alive} vs {}", n * p);
    }
}

#[test]
fn free_diffusion_mean_square_displacement() {
    let e = env(0.0, 0.0);
    let dt = 1e-6;
    let params = StepParams::new(&e, dt);
    let steps = 100;
    let n = 4000;
    let mut stats = BoundaryStats::default();
    let mut sum = 0.0;
    for i in 0..n {
        let mut rng = particle_rng(17, i);
        let mut p = ParticleState::at(&SphericalPoint::origin());
        for _ in 0..steps {
            step(&mut p, &params, &mut rng, &mut stats);
        }
        sum += p.position.iter().map(|x| x * x).sum::<f64>();
    }
    let msd = sum / n as f64;
    let expect = 6.0 * D * dt * steps as f64;
    // Squared displacement of a 3D Gaussian has relative spread sqrt(2/3).
    let tol = 4.0 * (2.0f64 / 3.0).sqrt() / (n as f64).sqrt();
    assert!(rel(msd, expect) < tol, "{msd:e} vs {expect:e}");
    assert_eq!(stats.contacts, 0);
}

#[test]
fn particles_are_conserved() {
    let e = env(20.0, KF_PARTIAL);
    let c = cfg(1e-5, 5_000, 1, (1e-3, 2e-2), 1e-3);
    let est = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    for i in 0..est.times.len() {
        assert_eq!(est.n_alive[i] + est.n_bound[i] + est.n_degraded[i], 5_000);
        assert!(est.counts[i] <= est.n_alive[i]);
    }
    assert!(est.n_bound.windows(2).all(|w| w[1] >= w[0]));
    assert!(matches!(est.validity, Validity::Warning(_)));
}

#[test]
fn deterministic_for_a_seed_and_independent_of_execution() {
    let e = env(20.0, KF_PARTIAL);
    let c = cfg(1e-5, 6_000, 9, (1e-3, 1e-2), 1e-3);
    let a = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    let b = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let other = estimate_p_obs(&tx(), &rx(1e-6), &e, &PbsConfig { seed: 10, ..c }, Execution::Parallel).unwrap();
    assert_ne!(a.counts, other.counts);
}

#[test]
fn reflective_equilibrium_is_volume_ratio() {
    let e = env(0.0, 0.0);
    let c = cfg(1e-4, 20_000, 5, (0.2, 0.3), 0.01);
    let est = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    let target = (1e-6 / R_S).powi(3);
    let total: u64 = est.counts.iter().sum();
    let trials = 20_000.0 * est.counts.len() as f64;
    let mean = total as f64 / trials;
    // Snapshots 10 ms apart are nearly independent (mixing time ~ r_s²/D).
    let sigma = (target * (1.0 - target) / trials).sqrt();
    assert!((mean - target).abs() < 4.0 * sigma, "{mean} vs {target}");
    assert!(est.boundary.reflections > 0);
    assert_eq!(est.n_bound.iter().sum::<u64>(), 0);
}

#[test]
fn absorbing_wall_only_removes() {
    let e = env(0.0, f64::INFINITY);
    let c = cfg(1e-5, 4_000, 2, (1e-2, 5e-2), 1e-2);
    let est = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    assert_eq!(est.boundary.reflections, 0);
    assert_eq!(est.validity.ratio(), 0.0);
    assert!(est.n_alive.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn oversized_step_is_rejected() {
    let e = env(0.0, 1e-2);
    let c = cfg(1e-5, 10, 1, (1e-3, 1e-2), 1e-3);
    assert!(matches!(
        estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel),
        Err(PbsError::Validity { .. })
    ));
}

#[test]
fn agreement_statistics() {
    let e = env(0.0, 0.0);
    let c = cfg(1e-4, 1_000, 1, (0.1, 0.125), 0.01);
    let mut est = estimate_p_obs(&tx(), &rx(1e-6), &e, &c, Execution::Parallel).unwrap();
    est.counts = vec![10, 20, 30];
    let a = pbs::agreement(&[0.01, 0.02, 0.03], &est);
    assert_eq!(a.peak_rel_dev, 0.0);
    assert_eq!(a.fraction_inside_ci, 1.0);
    let b = pbs::agreement(&[0.01, 0.02, 0.05], &est);
    assert!((b.peak_rel_dev - 0.4).abs() < 1e-12);
    assert!((b.fraction_inside_ci - 2.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn wilson_interval_brackets_estimate(k in 0u64..=1000, n in 1u64..1000) {
        let k = k.min(n);
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }
}
