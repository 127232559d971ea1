mod common;

use common::*;
use sphere_dmc::eigen::{count_sign_changes, find_roots, mode_norm, root_residual};
use sphere_dmc::quad::gauss_legendre_on;
use sphere_dmc::specfun::sph_bessel_j;
use sphere_dmc::{EigenvalueTable, Execution};

/// Bisection on a fine scan of `h(x)`; returns the first `count` roots.
fn scan_roots<F: Fn(f64) -> f64>(h: F, start: f64, count: usize) -> Vec<f64> {
    let dx = 1e-3;
    let mut out = Vec::new();
    let mut a = start;
    while out.len() < count {
        let b = a + dx;
        if h(a) * h(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if h(lo) * h(m) <= 0.0 {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        a = b;
    }
    out
}

#[test]
fn partial_boundary_roots_match_closed_form_scan() {
    // n = 0: x cos x + (ζ − 1) sin x = 0 with ζ = k_f r_s / D.
    let e = env(0.0, KF_PARTIAL);
    let zeta = KF_PARTIAL * R_S / D;
    let oracle = scan_roots(|x| x * x.cos() + (zeta - 1.0) * x.sin(), 1e-6, 20);
    let got = find_roots(0, &e, 20).unwrap();
    for (g, o) in got.iter().zip(&oracle) {
        assert!(rel(g * R_S, *o) < 1e-10, "{} vs {o}", g * R_S);
    }
    // n = 1: j_1 = sin/x² − cos/x, x j_1' + ζ j_1 = 0.
    let j1 = |x: f64| x.sin() / (x * x) - x.cos() / x;
    let j1p = |x: f64| (x * x - 2.0) * x.sin() / x.powi(3) + 2.0 * x.cos() / (x * x);
    let oracle = scan_roots(|x| x * j1p(x) + zeta * j1(x), 1e-3, 20);
    let got = find_roots(1, &e, 20).unwrap();
    for (g, o) in got.iter().zip(&oracle) {
        assert!(rel(g * R_S, *o) < 1e-10, "{} vs {o}", g * R_S);
    }
}

#[test]
fn dirichlet_roots_are_bessel_zeros() {
    let e = env(0.0, f64::INFINITY);
    // Zeros of j_1: tan x = x.
    let oracle = scan_roots(|x| x.sin() - x * x.cos(), 1.0, 15);
    for (g, o) in find_roots(1, &e, 15).unwrap().iter().zip(&oracle) {
        assert!(rel(g * R_S, *o) < 1e-10);
    }
    for n in 0..=30 {
        for l in find_roots(n, &e, 10).unwrap() {
            assert!(sph_bessel_j(n, l * R_S).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn roots_satisfy_equation_and_are_complete() {
    for kf in [0.0, 1e-6, KF_PARTIAL, 1e-2, f64::INFINITY] {
        let e = env(0.0, kf);
        for n in [0, 1, 7, 25, 40] {
            let roots = find_roots(n, &e, 30).unwrap();
            for l in &roots {
                assert!(root_residual(n, *l, &e).abs() < 1e-9, "n={n} kf={kf}");
            }
            assert!(roots.windows(2).all(|w| w[1] > w[0]));
            // No root skipped: a finer sign-change count up to just past the
            // last root finds exactly the same number.
            let x_hi = roots.last().unwrap() * R_S + 1e-3;
            assert_eq!(count_sign_changes(n, &e, x_hi, 200_000), roots.len(), "n={n} kf={kf}");
        }
    }
}

#[test]
fn roots_interlace_across_degrees() {
    for kf in [KF_PARTIAL, 1e-3, f64::INFINITY] {
        let e = env(0.0, kf);
        for n in 0..20 {
            let a = find_roots(n, &e, 20).unwrap();
            let b = find_roots(n + 1, &e, 20).unwrap();
            for k in 0..19 {
                assert!(a[k] < b[k] && b[k] < a[k + 1], "kf={kf} n={n} k={k}");
            }
        }
    }
}

#[test]
fn roots_grow_with_forward_rate() {
    let rates = [0.0, 1e-6, 1e-5, KF_PARTIAL, 1e-3, 1e-2, f64::INFINITY];
    for n in 0..6 {
        let lists: Vec<Vec<f64>> = rates
            .iter()
            .map(|&kf| {
                let mut r = find_roots(n, &env(0.0, kf), 12).unwrap();
                // The reflective constant mode continues as the first root
                // once k_f > 0.
                if kf == 0.0 && n == 0 {
                    r.insert(0, 0.0);
                }
                r.truncate(11);
                r
            })
            .collect();
        for w in lists.windows(2) {
            for (k, (hi, lo)) in w[1].iter().zip(&w[0]).enumerate() {
                assert!(hi > lo, "n={n} k={k}");
            }
        }
    }
}

#[test]
fn norms_match_quadrature() {
    let rule = gauss_legendre_on(400, 0.0, R_S);
    for kf in [0.0, KF_PARTIAL, f64::INFINITY] {
        let e = env(0.0, kf);
        let t = EigenvalueTable::build(&e, 12, 15, Execution::Parallel).unwrap();
        for n in [0, 3, 12] {
            for m in t.modes(n) {
                let q: f64 = rule.iter().map(|&(r, w)| w * r * r * sph_bessel_j(n, m.lambda * r).unwrap().powi(2)).sum();
                assert!(rel(m.norm, q) < 1e-10, "kf={kf} n={n} k={}", m.k);
                assert_eq!(m.norm, mode_norm(n, m.lambda, &e));
            }
        }
        if let Some(z) = t.zero_mode() {
            assert!(rel(z.norm, R_S.powi(3) / 3.0) < 1e-15);
        }
    }
}

#[test]
fn table_is_deterministic_and_independent_of_degradation() {
    let a = EigenvalueTable::build(&env(0.0, KF_PARTIAL), 10, 10, Execution::Parallel).unwrap();
    let b = EigenvalueTable::build(&env(20.0, KF_PARTIAL), 10, 10, Execution::Sequential).unwrap();
    for n in 0..=10 {
        assert_eq!(a.modes(n), b.modes(n));
    }
    assert_eq!(a.to_csv(), EigenvalueTable::build(&env(0.0, KF_PARTIAL), 10, 10, Execution::Parallel).unwrap().to_csv());
}

#[test]
fn csv_round_trip() {
    for kf in [0.0, KF_PARTIAL, f64::INFINITY] {
        let e = env(0.0, kf);
        let t = EigenvalueTable::build(&e, 6, 9, Execution::Parallel).unwrap();
        let text = t.to_csv();
        let back = EigenvalueTable::from_csv(&e, &text).unwrap();
        assert_eq!(back.to_csv(), text);
        assert_eq!(back.zero_mode_included(), kf == 0.0);
        assert!(EigenvalueTable::from_csv(&env(0.0, 2e-4), &text).is_err());
    }
}
