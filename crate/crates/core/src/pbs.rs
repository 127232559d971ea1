//! Particle-based Brownian simulator.
//!
//! Each molecule takes Gaussian steps of variance `2 D dt` per axis. After
//! each step it is degraded with probability `k_d dt`; a step that leaves
//! the sphere binds with probability `k_f √(π dt / D)` (always, for an
//! absorbing wall) and is otherwise reflected specularly. The receiver is
//! transparent: it only counts molecules inside its ball at recording times.
//!
//! Every particle owns a random stream derived from `(seed, index)`, so the
//! output does not depend on how particles are split across threads.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::cgf::SphericalPoint;
use crate::channel::ReceiverSpec;
use crate::csv::fmt17;
use crate::eigen::Environment;
use crate::ook::mix_seed;
use crate::par::{self, Execution};

/// Reflections attempted within one step before clamping to the wall.
pub const MAX_REFLECTIONS: usize = 8;
/// Validity ratio above which the simulation is refused.
pub const VALIDITY_ERROR: f64 = 0.1;
/// Validity ratio above which a warning is reported.
pub const VALIDITY_WARNING: f64 = 0.01;
const CHUNK: usize = 4096;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PbsError {
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("time step too large: binding probability k_f*sqrt(pi*dt/D) = {ratio:.4} exceeds {VALIDITY_ERROR}")]
    Validity { ratio: f64 },
    #[error("point outside the sphere: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbsConfig {
    /// Time step in s.
    pub dt: f64,
    pub n_particles: usize,
    pub seed: u64,
    /// Spacing of recording times in s.
    pub bin_width: f64,
    /// Recording times are the multiples of `bin_width` in this window.
    pub record_window: (f64, f64),
}

impl PbsConfig {
    pub fn validate(&self) -> Result<(), PbsError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PbsError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if self.n_particles == 0 {
            return Err(PbsError::InvalidConfig("n_particles must be at least 1".into()));
        }
        if !(self.bin_width >= self.dt) {
            return Err(PbsError::InvalidConfig(format!(
                "bin width {} is shorter than the time step {}",
                self.bin_width, self.dt
            )));
        }
        let (lo, hi) = self.record_window;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(PbsError::InvalidConfig(format!("record window ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Step indices at which the population is recorded.
    pub fn record_steps(&self) -> Vec<u64> {
        let (lo, hi) = self.record_window;
        let first = (lo / self.bin_width - 1e-9).ceil().max(1.0) as u64;
        let last = (hi / self.bin_width + 1e-9).floor() as u64;
        let mut steps: Vec<u64> = (first..=last)
            .map(|i| (i as f64 * self.bin_width / self.dt).round() as u64)
            .filter(|&s| s >= 1)
            .collect();
        steps.dedup();
        steps
    }
}

/// `k_f √(π dt / D)`: the per-contact binding probability, and the quantity
/// that must stay small for the discrete boundary model to be accurate.
/// Zero for reflective and for absorbing walls (the latter binds every
/// contact exactly, with no discretization of the reaction).
pub fn validity_ratio(env: &Environment, dt: f64) -> f64 {
    if env.is_absorbing() {
        0.0
    } else {
        env.forward_rate * (std::f64::consts::PI * dt / env.diffusivity).sqrt()
    }
}

/// Outcome of the validity check when it does not fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Validity {
    Ok(f64),
    Warning(f64),
}

impl Validity {
    pub fn ratio(&self) -> f64 {
        match *self {
            Validity::Ok(r) | Validity::Warning(r) => r,
        }
    }
}

pub fn check_validity(env: &Environment, dt: f64) -> Result<Validity, PbsError> {
    let r = validity_ratio(env, dt);
    if r > VALIDITY_ERROR {
        Err(PbsError::Validity { ratio: r })
    } else if r > VALIDITY_WARNING {
        Ok(Validity::Warning(r))
    } else {
        Ok(Validity::Ok(r))
    }
}

/// Probability that a boundary contact binds.
pub fn binding_probability(env: &Environment, dt: f64) -> f64 {
    if env.is_absorbing() {
        1.0
    } else {
        (env.forward_rate * (std::f64::consts::PI * dt / env.diffusivity).sqrt()).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Alive,
    Bound,
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    /// Cartesian position in m.
    pub position: [f64; 3],
    pub status: Status,
}

impl ParticleState {
    pub fn at(p: &SphericalPoint) -> Self {
        Self {
            position: p.to_cartesian(),
            status: Status::Alive,
        }
    }

    pub fn is_alive(&self) -> bool {
        self.status == Status::Alive
    }
}

/// Per-step constants.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub radius: f64,
    pub sigma: f64,
    pub degrade_prob: f64,
    pub bind_prob: f64,
}

impl StepParams {
    pub fn new(env: &Environment, dt: f64) -> Self {
        Self {
            radius: env.radius,
            sigma: (2.0 * env.diffusivity * dt).sqrt(),
            degrade_prob: (env.degradation * dt).min(1.0),
            bind_prob: binding_probability(env, dt),
        }
    }
}

/// Counters for boundary events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundaryStats {
    pub contacts: u64,
    pub reflections: u64,
    pub clamps: u64,
}

impl BoundaryStats {
    fn add(&mut self, o: &BoundaryStats) {
        self.contacts += o.contacts;
        self.reflections += o.reflections;
        self.clamps += o.clamps;
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Exit parameter `s ∈ [0, 1]` of the segment `x + s d` through the sphere.
fn exit_fraction(x: [f64; 3], d: [f64; 3], radius: f64) -> f64 {
    let a = dot(d, d);
    let b = dot(x, d);
    let c = dot(x, x) - radius * radius;
    let disc = (b * b - a * c).max(0.0);
    ((-b + disc.sqrt()) / a).clamp(0.0, 1.0)
}

/// Moves `p` towards `proposed`, applying the wall rules.
pub fn handle_boundary<R: Rng + ?Sized>(
    p: &mut ParticleState,
    proposed: [f64; 3],
    params: &StepParams,
    rng: &mut R,
    stats: &mut BoundaryStats,
) {
    let r2 = params.radius * params.radius;
    if dot(proposed, proposed) <= r2 {
        p.position = proposed;
        return;
    }
    stats.contacts += 1;
    // One binding test per crossing event.
    if params.bind_prob >= 1.0 || (params.bind_prob > 0.0 && rng.random::<f64>() < params.bind_prob) {
        p.status = Status::Bound;
        return;
    }
    let mut from = p.position;
    let mut to = proposed;
    for _ in 0..MAX_REFLECTIONS {
        let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
        let s = exit_fraction(from, d, params.radius);
        let hit = [from[0] + s * d[0], from[1] + s * d[1], from[2] + s * d[2]];
        let inv = 1.0 / dot(hit, hit).sqrt();
        let n = [hit[0] * inv, hit[1] * inv, hit[2] * inv];
        let out = [to[0] - hit[0], to[1] - hit[1], to[2] - hit[2]];
        let k = 2.0 * dot(out, n);
        let reflected = [to[0] - k * n[0], to[1] - k * n[1], to[2] - k * n[2]];
        stats.reflections += 1;
        if dot(reflected, reflected) <= r2 {
            p.position = reflected;
            return;
        }
        from = hit;
        to = reflected;
    }
    // Pull the last crossing point onto (or just inside) the wall.
    stats.clamps += 1;
    let norm = dot(from, from).sqrt();
    let scale = if norm > params.radius { params.radius / norm } else { 1.0 };
    p.position = [from[0] * scale, from[1] * scale, from[2] * scale];
}

/// One time step for one particle: Gaussian increment, degradation, wall.
pub fn step<R: Rng + ?Sized>(p: &mut ParticleState, params: &StepParams, rng: &mut R, stats: &mut BoundaryStats) {
    if !p.is_alive() {
        return;
    }
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    let dz: f64 = rng.sample(StandardNormal);
    let s = params.sigma;
    let proposed = [p.position[0] + s * dx, p.position[1] + s * dy, p.position[2] + s * dz];
    if params.degrade_prob > 0.0 && rng.random::<f64>() < params.degrade_prob {
        p.status = Status::Degraded;
        return;
    }
    handle_boundary(p, proposed, params, rng, stats);
}

/// Advances every particle by one step using a single shared stream.
pub fn step_all<R: Rng + ?Sized>(particles: &mut [ParticleState], params: &StepParams, rng: &mut R, stats: &mut BoundaryStats) {
    for p in particles {
        step(p, params, rng, stats);
    }
}

/// Stream for particle `index`.
pub fn particle_rng(seed: u64, index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix_seed(seed, index))
}

/// Wilson score interval at 95% for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = Z95 * Z95;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Simulated `p_obs` at the recording times.
#[derive(Debug, Clone, PartialEq)]
pub struct PbsEstimate {
    pub times: Vec<f64>,
    /// Particles inside the receiver.
    pub counts: Vec<u64>,
    pub n_alive: Vec<u64>,
    pub n_bound: Vec<u64>,
    pub n_degraded: Vec<u64>,
    pub n_particles: u64,
    pub validity: Validity,
    pub boundary: BoundaryStats,
}

impl PbsEstimate {
    /// Fraction of released particles inside the receiver.
    pub fn p_hat(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n_particles as f64).collect()
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.counts.iter().map(|&c| wilson_interval(c, self.n_particles)).collect()
    }

    /// `t_s,p_hat,ci_lo,ci_hi,n_alive` preceded by `# key=value` comments.
    pub fn to_csv(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(&format!("# validity_ratio={}\n", fmt17(self.validity.ratio())));
        out.push_str(&format!("# boundary_clamps={}\n", self.boundary.clamps));
        out.push_str("t_s,p_hat,ci_lo,ci_hi,n_alive\n");
        for (i, ((t, p), (lo, hi))) in self.times.iter().zip(self.p_hat()).zip(self.intervals()).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(*t),
                fmt17(p),
                fmt17(lo),
                fmt17(hi),
                self.n_alive[i]
            ));
        }
        out
    }
}

/// Agreement between the analytic curve and a simulator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    /// Relative deviation of the simulated curve over the peak plateau.
    pub peak_rel_dev: f64,
    pub fraction_inside_ci: f64,
}

/// Share of the analytic maximum that defines the peak plateau.
pub const PLATEAU_LEVEL: f64 = 0.9;

/// `peak_rel_dev` compares sums over the bins where the analytic curve is
/// within [`PLATEAU_LEVEL`] of its maximum; a single bin is too noisy.
pub fn agreement(analytic: &[f64], est: &PbsEstimate) -> Agreement {
    let ci = est.intervals();
    let p_hat = est.p_hat();
    let peak = analytic.iter().copied().fold(0.0, f64::max);
    let (mut sa, mut sp) = (0.0, 0.0);
    for (a, p) in analytic.iter().zip(&p_hat) {
        if *a >= PLATEAU_LEVEL * peak {
            sa += a;
            sp += p;
        }
    }
    let inside = analytic.iter().zip(&ci).filter(|(p, (lo, hi))| *lo <= **p && **p <= *hi).count();
    Agreement {
        peak_rel_dev: (sp - sa).abs() / sa,
        fraction_inside_ci: inside as f64 / analytic.len().max(1) as f64,
    }
}

#[derive(Default, Clone)]
struct Tally {
    inside: Vec<u64>,
    alive: Vec<u64>,
    bound: Vec<u64>,
    degraded: Vec<u64>,
    boundary: BoundaryStats,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            inside: vec![0; n],
            alive: vec![0; n],
            bound: vec![0; n],
            degraded: vec![0; n],
            boundary: BoundaryStats::default(),
        }
    }

    fn merge(&mut self, o: &Tally) {
        for (a, b) in [
            (&mut self.inside, &o.inside),
            (&mut self.alive, &o.alive),
            (&mut self.bound, &o.bound),
            (&mut self.degraded, &o.degraded),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.boundary.add(&o.boundary);
    }
}

/// Releases `cfg.n_particles` molecules at `tx` at `t = 0` and records the
/// fraction inside `rx` at every multiple of `cfg.bin_width` in the window.
pub fn estimate_p_obs(
    tx: &SphericalPoint,
    rx: &ReceiverSpec,
    env: &Environment,
    cfg: &PbsConfig,
    exec: Execution,
) -> Result<PbsEstimate, PbsError> {
    cfg.validate()?;
    env.validate().map_err(|e| PbsError::InvalidConfig(e.to_string()))?;
    let validity = check_validity(env, cfg.dt)?;
    if tx.r > env.radius {
        return Err(PbsError::Geometry(format!("transmitter at r = {}", tx.r)));
    }
    if !rx.fits_in(env.radius) {
        return Err(PbsError::Geometry("receiver does not fit in the sphere".into()));
    }
    let steps = cfg.record_steps();
    let n_rec = steps.len();
    let params = StepParams::new(env, cfg.dt);
    let start = ParticleState::at(tx);
    let n_chunks = cfg.n_particles.div_ceil(CHUNK);
    let tallies = par::map_indices(exec, n_chunks, |c| {
        let mut t = Tally::new(n_rec);
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(cfg.n_particles);
        for idx in lo..hi {
            let mut rng = particle_rng(cfg.seed, idx as u64);
            let mut p = start;
            let mut done = 0u64;
            for (j, &s) in steps.iter().enumerate() {
                while done < s && p.is_alive() {
                    step(&mut p, &params, &mut rng, &mut t.boundary);
                    done += 1;
                }
                match p.status {
                    Status::Alive => {
                        t.alive[j] += 1;
                        if rx.contains_cartesian(p.position) {
                            t.inside[j] += 1;
                        }
                    }
                    Status::Bound => t.bound[j] += 1,
                    Status::Degraded => t.degraded[j] += 1,
                }
            }
        }
        t
    });
    let mut total = Tally::new(n_rec);
    for t in &tallies {
        total.merge(t);
    }
    Ok(PbsEstimate {
        times: steps.iter().map(|&s| s as f64 * cfg.dt).collect(),
        counts: total.inside,
        n_alive: total.alive,
        n_bound: total.bound,
        n_degraded: total.degraded,
        n_particles: cfg.n_particles as u64,
        validity,
        boundary: total.boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn env(k_f: f64, k_d: f64) -> Environment {
        Environment::new(5e-6, 1e-9, k_d, k_f).unwrap()
    }

    #[test]
    fn table_one_binding_probability() {
        let e = env(1e-4, 0.0);
        let p = binding_probability(&e, 1e-5);
        assert!((p - 1e-4 * (PI * 1e-5 / 1e-9).sqrt()).abs() < 1e-15);
        assert!((p - 0.0177).abs() < 1e-4);
        assert!(matches!(check_validity(&e, 1e-5), Ok(Validity::Warning(_))));
        assert!(matches!(check_validity(&e, 1e-2), Err(PbsError::Validity { .. })));
        assert_eq!(binding_probability(&env(f64::INFINITY, 0.0), 1e-5), 1.0);
        assert_eq!(binding_probability(&env(0.0, 0.0), 1e-5), 0.0);
    }

    #[test]
    fn reflection_stays_inside() {
        let params = StepParams::new(&env(0.0, 0.0), 1e-5);
        let mut rng = particle_rng(1, 2);
        let mut stats = BoundaryStats::default();
        for _ in 0..10_000 {
            let mut p = ParticleState {
                position: [0.0, 0.0, 4.99e-6],
                status: Status::Alive,
            };
            let proposed = [
                rng.random_range(-1e-6..1e-6),
                rng.random_range(-1e-6..1e-6),
                5e-6 + rng.random_range(0.0..3e-7),
            ];
            handle_boundary(&mut p, proposed, &params, &mut rng, &mut stats);
            assert!(p.is_alive());
            assert!(dot(p.position, p.position).sqrt() <= 5e-6 * (1.0 + 1e-15));
        }
        assert!(stats.reflections >= 10_000);
    }

    #[test]
    fn normal_incidence_reflects_back() {
        let params = StepParams::new(&env(0.0, 0.0), 1e-5);
        let mut rng = particle_rng(0, 0);
        let mut p = ParticleState {
            position: [0.0, 0.0, 4.0e-6],
            status: Status::Alive,
        };
        handle_boundary(&mut p, [0.0, 0.0, 5.5e-6], &params, &mut rng, &mut BoundaryStats::default());
        assert!((p.position[2] - 4.5e-6).abs() < 1e-18);
    }

    #[test]
    fn absorbing_contact_binds() {
        let params = StepParams::new(&env(f64::INFINITY, 0.0), 1e-5);
        let mut rng = particle_rng(0, 0);
        let mut p = ParticleState {
            position: [0.0, 0.0, 4.9e-6],
            status: Status::Alive,
        };
        handle_boundary(&mut p, [0.0, 0.0, 5.1e-6], &params, &mut rng, &mut BoundaryStats::default());
        assert_eq!(p.status, Status::Bound);
    }

    #[test]
    fn zero_diffusivity_freezes_particles() {
        let params = StepParams {
            radius: 5e-6,
            sigma: 0.0,
            degrade_prob: 0.0,
            bind_prob: 0.0,
        };
        let mut ps = vec![
            ParticleState {
                position: [1e-6, 2e-6, -1e-6],
                status: Status::Alive,
            };
            10
        ];
        let mut rng = particle_rng(3, 0);
        for _ in 0..100 {
            step_all(&mut ps, &params, &mut rng, &mut BoundaryStats::default());
        }
        assert!(ps.iter().all(|p| p.position == [1e-6, 2e-6, -1e-6]));
    }

    #[test]
    fn record_steps_cover_window() {
        let cfg = PbsConfig {
            dt: 1e-5,
            n_particles: 1,
            seed: 0,
            bin_width: 1e-3,
            record_window: (0.0, 5e-3),
        };
        assert_eq!(cfg.record_steps(), vec![100, 200, 300, 400, 500]);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(500, 1000);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }
}
