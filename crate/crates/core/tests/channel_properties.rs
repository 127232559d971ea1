mod common;

use std::f64::consts::{PI, TAU};

use common::*;
use proptest::prelude::*;
use sphere_dmc::channel::{log_grid, mean_received};
use sphere_dmc::{Channel, Execution, Propagation, ReceiverSpec, SphericalPoint};

#[test]
fn sequential_and_parallel_curves_match() {
    let e = env(20.0, KF_PARTIAL);
    let (t, tr) = (table(&e), trunc(&e));
    let prop = Propagation::Bounded { env: &e, table: &t, trunc: &tr };
    let times = log_grid(1e-4, 0.1, 40);
    let seq = Channel::new(prop, tx(), rx(1e-6)).unwrap().with_execution(Execution::Sequential);
    let par = Channel::new(prop, tx(), rx(1e-6)).unwrap().with_execution(Execution::Parallel);
    assert_eq!(seq.approx_curve(&times).unwrap(), par.approx_curve(&times).unwrap());
    assert_eq!(seq.exact_curve(&times).unwrap(), par.exact_curve(&times).unwrap());
}

#[test]
fn exact_converges_to_approx_as_receiver_shrinks() {
    let e = env(20.0, KF_PARTIAL);
    let (t, tr) = (table(&e), trunc(&e));
    let at = [8e-3];
    let mut prev = f64::INFINITY;
    let mut devs = Vec::new();
    for radius in [1e-6, 0.5e-6, 0.2e-6, 0.05e-6] {
        let ch = Channel::new(Propagation::Bounded { env: &e, table: &t, trunc: &tr }, tx(), rx(radius)).unwrap();
        let a = ch.approx_curve(&at).unwrap().values[0];
        let x = ch.exact_curve(&at).unwrap()[0].value;
        let d = rel(a, x);
        assert!(d < prev, "R={radius}: {d} >= {prev}");
        prev = d;
        devs.push(d);
    }
    assert!(prev < 1e-3);
    // The leading correction is quadratic in the receiver radius.
    assert!(devs[3] < 0.02 * devs[1], "{devs:?}");
}

#[test]
fn peak_decreases_with_sphere_radius() {
    let mut prev = f64::INFINITY;
    for r_um in [5.0, 6.0, 7.0, 10.0] {
        let e = env_radius(r_um * 1e-6, 20.0, KF_PARTIAL);
        let (t, tr) = (table(&e), trunc(&e));
        let ch = Channel::new(Propagation::Bounded { env: &e, table: &t, trunc: &tr }, tx(), rx(1e-6)).unwrap();
        let peak = ch.find_peak_time((1e-6, 0.2)).unwrap();
        assert!(!peak.flat);
        assert!(peak.value < prev);
        prev = peak.value;
    }
    let free = Channel::new(
        Propagation::Unbounded {
            diffusivity: D,
            degradation: 20.0,
        },
        tx(),
        rx(1e-6),
    )
    .unwrap()
    .find_peak_time((1e-6, 0.2))
    .unwrap();
    assert!(free.value < prev);
}

#[test]
fn reflective_curve_settles_at_volume_ratio() {
    let e = env(0.0, 0.0);
    let (t, tr) = (table(&e), trunc(&e));
    let ch = Channel::new(Propagation::Bounded { env: &e, table: &t, trunc: &tr }, tx(), rx(1e-6)).unwrap();
    let late = ch.exact_curve(&[1.0]).unwrap()[0];
    assert!(late.converged);
    assert!(rel(late.value, (1e-6 / R_S).powi(3)) < 1e-8);
}

#[test]
fn peak_time_is_a_local_maximum() {
    let e = env(20.0, f64::INFINITY);
    let (t, tr) = (table(&e), trunc(&e));
    let ch = Channel::new(Propagation::Bounded { env: &e, table: &t, trunc: &tr }, tx(), rx(0.5e-6)).unwrap();
    let peak = ch.find_peak_time((1e-5, 0.1)).unwrap();
    for f in [0.99, 1.01] {
        assert!(ch.p_obs_approx(peak.time * f).unwrap().value < peak.value);
    }
}

#[test]
fn receivers_must_fit() {
    let e = env(0.0, KF_PARTIAL);
    let (t, tr) = (table(&e), trunc(&e));
    let big = ReceiverSpec::new(SphericalPoint::new(4.5e-6, 0.3, 0.0).unwrap(), 1e-6).unwrap();
    assert!(Channel::new(Propagation::Bounded { env: &e, table: &t, trunc: &tr }, tx(), big).is_err());
}

#[test]
fn received_mean_sums_active_slots() {
    let p = |t: f64| 1e-3 * (-t / 0.05).exp();
    let m = mean_received(&[true, false, true], 1e4, 0.01, 0.05, p);
    let expect = 1e4 * (p(0.01) + p(0.11));
    assert!((m - expect).abs() < 1e-12 * expect);
}

proptest! {
    #[test]
    fn log_grid_is_increasing(lo in 1e-7f64..1e-3, span in 1.5f64..1e4, n in 2usize..300) {
        let g = log_grid(lo, lo * span, n);
        prop_assert_eq!(g.len(), n);
        prop_assert_eq!(g[0], lo);
        prop_assert_eq!(g[n - 1], lo * span);
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cartesian_round_trip(r in 0.0f64..5e-6, theta in 0.0f64..PI, phi in 0.0f64..TAU) {
        let p = SphericalPoint::new(r, theta, phi).unwrap();
        let q = SphericalPoint::from_cartesian(p.to_cartesian());
        prop_assert!(p.distance(&q) <= 1e-12 * 5e-6);
    }
}
