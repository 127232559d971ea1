#![allow(dead_code)]

use std::f64::consts::PI;

use sphere_dmc::{EigenvalueTable, Environment, Execution, ReceiverSpec, SphericalPoint, TruncationPolicy};

pub const R_S: f64 = 5e-6;
pub const D: f64 = 1e-9;
/// 100 μm/s.
pub const KF_PARTIAL: f64 = 1e-4;

pub fn env(k_d: f64, k_f: f64) -> Environment {
    Environment::new(R_S, D, k_d, k_f).unwrap()
}

pub fn env_radius(r_s: f64, k_d: f64, k_f: f64) -> Environment {
    Environment::new(r_s, D, k_d, k_f).unwrap()
}

pub fn table(env: &Environment) -> EigenvalueTable {
    EigenvalueTable::build(env, 40, 80, Execution::Parallel).unwrap()
}

pub fn trunc(env: &Environment) -> TruncationPolicy {
    TruncationPolicy::for_environment(env)
}

pub fn tx() -> SphericalPoint {
    SphericalPoint::new(3e-6, PI / 2.0, 0.0).unwrap()
}

pub fn rx_center() -> SphericalPoint {
    SphericalPoint::new(4e-6, PI / 4.0, 3.0 * PI / 4.0).unwrap()
}

pub fn rx(radius: f64) -> ReceiverSpec {
    ReceiverSpec::new(rx_center(), radius).unwrap()
}

/// Uniform point in the ball of radius `r_max`.
pub fn random_point<R: rand::Rng>(rng: &mut R, r_max: f64) -> SphericalPoint {
    let r = r_max * rng.random::<f64>().cbrt();
    let theta = (1.0 - 2.0 * rng.random::<f64>()).acos();
    let phi = 2.0 * PI * rng.random::<f64>();
    SphericalPoint::new(r, theta, phi).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}
