//! Concentration Green's function (CGF) inside the sphere.
//!
//! For an impulsive point release at `tx` and time `t0`,
//!
//! ```text
//! C(r̄, t) = Σ_n Σ_{m≤n} Σ_k H_mnk cos(m(φ − φ_tx)) P_n^m(cos θ) j_n(λ_nk r)
//!           · exp(−(D λ_nk² + k_d)(t − t0))
//! H_mnk   = L_m (2n+1)/2 (n−m)!/(n+m)! P_n^m(cos θ_tx) j_n(λ_nk r_tx) / N_nk
//! ```
//!
//! with `L_0 = 1/2π`, `L_m = 1/π`, and `N_nk` the radial orthogonality norm.
//! For a reflective boundary the constant mode contributes
//! `3/(4π r_s³) · exp(−k_d (t − t0))`.
//!
//! Evaluation goes through [`ModalSeries`]: the time-independent weight of
//! every retained mode is computed once, after which the series can be
//! evaluated at any `τ = t − t0` no smaller than the one it was built for.

use std::f64::consts::PI;

use thiserror::Error;

use crate::eigen::{EigenvalueTable, Environment, Mode};
use crate::quad::AdaptiveGauss;
use crate::specfun::{self, sph_j, NormalizedLegendre, SpecFunError};

/// Extra e-folds beyond `ln(1/rel_tol)` before the root sum is cut.
const EXPONENT_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CgfError {
    #[error("evaluation time precedes the release time (t - t0 = {0})")]
    BeforeRelease(f64),
    #[error("point at r = {r} lies outside the sphere of radius {radius}")]
    OutsideSphere { r: f64, radius: f64 },
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid truncation policy: {0}")]
    InvalidTruncation(String),
    #[error("eigenvalue table was built for a different geometry or boundary")]
    TableMismatch,
    #[error("table does not contain degree {n}, root {k}")]
    MissingMode { n: usize, k: usize },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// Location in the sphere-centred spherical coordinate system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    /// Radial coordinate in m.
    pub r: f64,
    /// Elevation in `[0, π]`.
    pub theta: f64,
    /// Azimuth in `[0, 2π)`.
    pub phi: f64,
}

impl SphericalPoint {
    pub fn new(r: f64, theta: f64, phi: f64) -> Result<Self, CgfError> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(CgfError::InvalidPoint(format!("radius {r}")));
        }
        if !(theta.is_finite() && (0.0..=PI).contains(&theta)) {
            return Err(CgfError::InvalidPoint(format!("elevation {theta}")));
        }
        if !phi.is_finite() {
            return Err(CgfError::InvalidPoint(format!("azimuth {phi}")));
        }
        Ok(Self {
            r,
            theta,
            phi: phi.rem_euclid(2.0 * PI),
        })
    }

    pub const fn origin() -> Self {
        Self {
            r: 0.0,
            theta: 0.0,
            phi: 0.0,
        }
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [self.r * st * cp, self.r * st * sp, self.r * ct]
    }

    pub fn from_cartesian(p: [f64; 3]) -> Self {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return Self::origin();
        }
        let theta = (p[2] / r).clamp(-1.0, 1.0).acos();
        let phi = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
        Self { r, theta, phi }
    }

    pub fn distance(&self, other: &SphericalPoint) -> f64 {
        let a = self.to_cartesian();
        let b = other.to_cartesian();
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Series cutoffs and tolerance controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    /// Largest Legendre degree used.
    pub n_max: usize,
    /// Largest number of radial roots per degree.
    pub k_max: usize,
    /// Target relative size of the neglected tail.
    pub rel_tol: f64,
    /// Smallest `t − t0` (s) at which a result may be reported as converged.
    pub t_min_guard: f64,
}

impl TruncationPolicy {
    /// `n_max = 40`, `k_max = 80`, `rel_tol = 1e-8`, guard `4e-4 · r_s²/D`
    /// (1e-5 s for a 5 μm sphere with `D = 1e-9 m²/s`).
    pub fn for_environment(env: &Environment) -> Self {
        Self {
            n_max: 40,
            k_max: 80,
            rel_tol: 1e-8,
            t_min_guard: 4e-4 * env.radius * env.radius / env.diffusivity,
        }
    }

    pub fn validate(&self) -> Result<(), CgfError> {
        if !(self.rel_tol > 0.0) {
            return Err(CgfError::InvalidTruncation("rel_tol must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(CgfError::InvalidTruncation("k_max must be at least 1".into()));
        }
        if !(self.t_min_guard >= 0.0) {
            return Err(CgfError::InvalidTruncation("t_min_guard must be non-negative".into()));
        }
        Ok(())
    }

    fn exponent_cutoff(&self) -> f64 {
        (1.0 / self.rel_tol).ln() + EXPONENT_MARGIN
    }
}

/// Concentration per released molecule (1/m³), with convergence bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentration {
    pub value: f64,
    pub converged: bool,
    /// Estimated magnitude of the neglected part of the series.
    pub est_tail: f64,
}

/// `3 / (4π r_s³)`, the uniform density of one molecule in the sphere.
pub fn uniform_density(env: &Environment) -> f64 {
    1.0 / env.volume()
}

fn check_table(env: &Environment, table: &EigenvalueTable) -> Result<(), CgfError> {
    let t = table.environment();
    let same_boundary = t.forward_rate == env.forward_rate || (t.forward_rate.is_infinite() && env.forward_rate.is_infinite());
    if t.radius == env.radius && t.diffusivity == env.diffusivity && same_boundary {
        Ok(())
    } else {
        Err(CgfError::TableMismatch)
    }
}

pub(crate) fn check_inside(p: &SphericalPoint, env: &Environment) -> Result<(), CgfError> {
    if p.r > env.radius * (1.0 + 1e-12) {
        return Err(CgfError::OutsideSphere {
            r: p.r,
            radius: env.radius,
        });
    }
    Ok(())
}

/// Angular factor of degree `n`:
/// `(2n+1)/2 Σ_m L_m (n−m)!/(n+m)! P_n^m(cos θ_a) P_n^m(cos θ_b) cos(m Δφ)`.
fn angular_factor(n: usize, la: &NormalizedLegendre, lb: &NormalizedLegendre, cos_m: &[f64]) -> f64 {
    let mut s = la.get(n, 0) * lb.get(n, 0) / (2.0 * PI);
    for (m, c) in cos_m.iter().enumerate().take(n + 1).skip(1) {
        s += la.get(n, m) * lb.get(n, m) * c / PI;
    }
    0.5 * (2 * n + 1) as f64 * s
}

/// `cos(m Δφ)` for `m = 0..=n_max`.
fn cos_multiples(n_max: usize, dphi: f64) -> Vec<f64> {
    (0..=n_max).map(|m| (m as f64 * dphi).cos()).collect()
}

/// Angular factors `A_n` for a pair of directions, `n = 0..=n_max`.
pub(crate) struct AngularPair {
    factors: Vec<f64>,
}

impl AngularPair {
    pub(crate) fn new(n_max: usize, a: &SphericalPoint, b: &SphericalPoint) -> Self {
        let lb = NormalizedLegendre::new(n_max, b.theta.cos());
        Self::with_table(n_max, a, &lb, b.phi)
    }

    /// As [`AngularPair::new`] with the Legendre table of the second
    /// direction precomputed (it is shared by many first directions).
    pub(crate) fn with_table(n_max: usize, a: &SphericalPoint, lb: &NormalizedLegendre, phi_b: f64) -> Self {
        let la = NormalizedLegendre::new(n_max, a.theta.cos());
        let cos_m = cos_multiples(n_max, a.phi - phi_b);
        let factors = (0..=n_max).map(|n| angular_factor(n, &la, lb, &cos_m)).collect();
        Self { factors }
    }

    pub(crate) fn get(&self, n: usize) -> f64 {
        self.factors[n]
    }
}

/// Mode coefficient `H_mnk` of the series.
pub fn coefficient_h(m: usize, n: usize, k: usize, tx: &SphericalPoint, table: &EigenvalueTable) -> Result<f64, CgfError> {
    if m > n {
        return Err(SpecFunError::OrderExceedsDegree {
            function: "coefficient_h",
            n,
            m,
        }
        .into());
    }
    let mode = lookup_mode(table, n, k)?;
    let l_m = if m == 0 { 1.0 / (2.0 * PI) } else { 1.0 / PI };
    let ratio = specfun::legendre_norm_ratio(n, m)?.value;
    let p = specfun::assoc_legendre_p(n, m, tx.theta.cos())?;
    let radial = if mode.lambda == 0.0 {
        1.0
    } else {
        specfun::sph_bessel_j(n, mode.lambda * tx.r)?
    };
    Ok(l_m * 0.5 * (2 * n + 1) as f64 * ratio * p * radial / mode.norm)
}

fn lookup_mode(table: &EigenvalueTable, n: usize, k: usize) -> Result<Mode, CgfError> {
    if k == 0 && n == 0 {
        return table.zero_mode().copied().ok_or(CgfError::MissingMode { n, k });
    }
    if n > table.n_max() || k == 0 || k > table.modes(n).len() {
        return Err(CgfError::MissingMode { n, k });
    }
    Ok(table.modes(n)[k - 1])
}

/// Terms of one angular degree: weights and diffusive decay rates `D λ²`.
#[derive(Debug, Clone)]
struct DegreeTerms {
    weights: Vec<f64>,
    rates: Vec<f64>,
    /// True when every root in the table was needed at the build time.
    root_cap_hit: bool,
}

/// Why the degree loop stopped while building a [`ModalSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DegreeStop {
    /// Two consecutive degrees were negligible.
    Negligible,
    /// Higher degrees vanish identically (e.g. a point at the origin).
    Exact,
    /// The degree cap was reached with non-negligible contributions.
    Cap,
}

/// Time-independent expansion `Σ w_nk exp(−D λ_nk² τ) + w_0`, multiplied by
/// `exp(−k_d τ)` on evaluation.
#[derive(Debug, Clone)]
pub struct ModalSeries {
    degrees: Vec<DegreeTerms>,
    constant: f64,
    degradation: f64,
    cutoff: f64,
    rel_tol: f64,
    guard: f64,
    floor: f64,
    tau_min: f64,
    stop: DegreeStop,
}

impl ModalSeries {
    /// Builds the series from per-degree weights.
    ///
    /// `weights(n, modes)` returns one weight per mode in `modes`; `constant`
    /// is the weight of the reflective constant mode (ignored when the table
    /// has none); `floor` is the absolute scale below which relative
    /// tolerances switch to absolute ones; `exact_degrees` marks the last
    /// degree that can be nonzero, if known.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_weights<F>(
        env: &Environment,
        table: &EigenvalueTable,
        trunc: &TruncationPolicy,
        tau_min: f64,
        floor: f64,
        constant: f64,
        exact_degrees: Option<usize>,
        mut weights: F,
    ) -> Result<Self, CgfError>
    where
        F: FnMut(usize, &[Mode]) -> Vec<f64>,
    {
        trunc.validate()?;
        check_table(env, table)?;
        if tau_min < 0.0 {
            return Err(CgfError::BeforeRelease(tau_min));
        }
        let cutoff = trunc.exponent_cutoff();
        let d = env.diffusivity;
        let constant = if table.zero_mode_included() { constant } else { 0.0 };
        let n_cap = trunc.n_max.min(table.n_max()).min(exact_degrees.unwrap_or(usize::MAX));
        let mut degrees = Vec::new();
        let mut partial = constant;
        let mut negligible_run = 0;
        let mut stop = DegreeStop::Cap;
        for n in 0..=n_cap {
            let all = table.modes(n);
            let avail = &all[..all.len().min(trunc.k_max)];
            let count = avail
                .iter()
                .position(|m| d * m.lambda * m.lambda * tau_min > cutoff)
                .unwrap_or(avail.len());
            let modes = &avail[..count];
            let w = weights(n, modes);
            let rates: Vec<f64> = modes.iter().map(|m| d * m.lambda * m.lambda).collect();
            // Bound on the degree's magnitude at any τ ≥ tau_min; judging by
            // the signed sum would stop too early while the signal has not
            // yet arrived.
            let bound: f64 = w.iter().zip(&rates).map(|(w, r)| w.abs() * (-r * tau_min).exp()).sum();
            partial += w.iter().zip(&rates).map(|(w, r)| w * (-r * tau_min).exp()).sum::<f64>();
            degrees.push(DegreeTerms {
                weights: w,
                rates,
                root_cap_hit: count == avail.len(),
            });
            if bound < trunc.rel_tol * partial.abs().max(floor) {
                negligible_run += 1;
            } else {
                negligible_run = 0;
            }
            if negligible_run == 2 {
                stop = DegreeStop::Negligible;
                break;
            }
        }
        if stop == DegreeStop::Cap && exact_degrees.is_some_and(|e| n_cap >= e) {
            stop = DegreeStop::Exact;
        }
        Ok(Self {
            degrees,
            constant,
            degradation: env.degradation,
            cutoff,
            rel_tol: trunc.rel_tol,
            guard: trunc.t_min_guard,
            floor,
            tau_min,
            stop,
        })
    }

    /// Series for the concentration at `obs` due to a release at `tx`, valid
    /// for `τ >= tau_min`.
    pub fn point_pair(
        obs: &SphericalPoint,
        tx: &SphericalPoint,
        env: &Environment,
        table: &EigenvalueTable,
        trunc: &TruncationPolicy,
        tau_min: f64,
    ) -> Result<Self, CgfError> {
        check_inside(obs, env)?;
        check_inside(tx, env)?;
        let n_cap = trunc.n_max.min(table.n_max());
        let angular = AngularPair::new(n_cap, obs, tx);
        let exact = (obs.r == 0.0 || tx.r == 0.0).then_some(0);
        let constant = angular.get(0) / (env.radius.powi(3) / 3.0);
        Self::from_weights(env, table, trunc, tau_min, uniform_density(env), constant, exact, |n, modes| {
            let a = angular.get(n);
            modes
                .iter()
                .map(|m| a * sph_j(n, m.lambda * tx.r) * sph_j(n, m.lambda * obs.r) / m.norm)
                .collect()
        })
    }

    /// Multiplies every weight by `factor` (the absolute floor scales too).
    pub fn scaled(mut self, factor: f64) -> Self {
        for d in &mut self.degrees {
            for w in &mut d.weights {
                *w *= factor;
            }
        }
        self.constant *= factor;
        self.floor *= factor.abs();
        self
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn degree_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn mode_count(&self) -> usize {
        self.degrees.iter().map(|d| d.weights.len()).sum()
    }

    /// Evaluates at `τ = t − t0`.
    pub fn eval(&self, tau: f64) -> Result<Concentration, CgfError> {
        if tau < 0.0 {
            return Err(CgfError::BeforeRelease(tau));
        }
        let mut value = self.constant;
        let mut tail = 0.0;
        let mut contributions = Vec::with_capacity(self.degrees.len());
        for deg in &self.degrees {
            let mut c = 0.0;
            let mut last = 0.0;
            let mut prev_rate = 0.0;
            let mut last_rate = 0.0;
            let mut used = 0;
            for (w, &r) in deg.weights.iter().zip(&deg.rates) {
                if r * tau > self.cutoff {
                    break;
                }
                let term = w * (-r * tau).exp();
                c += term;
                last = term;
                prev_rate = last_rate;
                last_rate = r;
                used += 1;
            }
            if used > 0 {
                // Geometric extrapolation of the remaining roots from the
                // ratio of the last two exponentials.
                let q = if used >= 2 { (-(last_rate - prev_rate) * tau).exp() } else { 0.0 };
                let exhausted = used == deg.weights.len() && deg.root_cap_hit;
                if exhausted && q >= 1.0 - 1e-12 {
                    tail += f64::INFINITY;
                } else if exhausted {
                    tail += last.abs() * q / (1.0 - q);
                } else if q < 1.0 {
                    tail += last.abs() * q.min(0.5) * (-self.cutoff).exp();
                }
            }
            value += c;
            contributions.push(c);
        }
        match self.stop {
            DegreeStop::Exact => {}
            DegreeStop::Negligible | DegreeStop::Cap => {
                let k = contributions.len();
                let trailing: f64 = contributions[k.saturating_sub(2)..].iter().map(|c| c.abs()).sum();
                tail += trailing;
            }
        }
        let decay = (-self.degradation * tau).exp();
        let value = value * decay;
        let est_tail = tail * decay;
        let converged = tau >= self.guard && tau >= self.tau_min && est_tail <= self.rel_tol * value.abs().max(self.floor * decay);
        Ok(Concentration {
            value,
            converged,
            est_tail,
        })
    }
}

/// `C(obs, t | tx, t0)`.
pub fn cgf_eval(
    obs: &SphericalPoint,
    t: f64,
    tx: &SphericalPoint,
    t0: f64,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<Concentration, CgfError> {
    let tau = t - t0;
    if tau < 0.0 {
        return Err(CgfError::BeforeRelease(tau));
    }
    ModalSeries::point_pair(obs, tx, env, table, trunc, tau)?.eval(tau)
}

/// CGF when one endpoint sits at the sphere centre and the other at radius
/// `r_other`; only the `n = 0` modes survive. Symmetric in which endpoint is
/// the source.
pub fn cgf_origin(
    r_other: f64,
    t: f64,
    t0: f64,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<Concentration, CgfError> {
    let tau = t - t0;
    if tau < 0.0 {
        return Err(CgfError::BeforeRelease(tau));
    }
    if !(r_other.is_finite() && r_other >= 0.0) {
        return Err(CgfError::InvalidPoint(format!("radius {r_other}")));
    }
    if r_other > env.radius * (1.0 + 1e-12) {
        return Err(CgfError::OutsideSphere {
            r: r_other,
            radius: env.radius,
        });
    }
    let a0 = 1.0 / (4.0 * PI);
    let constant = a0 / (env.radius.powi(3) / 3.0);
    ModalSeries::from_weights(env, table, trunc, tau, uniform_density(env), constant, Some(0), |_, modes| {
        modes.iter().map(|m| a0 * sph_j(0, m.lambda * r_other) / m.norm).collect()
    })?
    .eval(tau)
}

/// Free-space kernel `(4πDτ)^{-3/2} exp(−d²/(4Dτ)) exp(−k_d τ)`.
pub fn cgf_unbounded(distance: f64, t: f64, t0: f64, diffusivity: f64, degradation: f64) -> Result<Concentration, CgfError> {
    let tau = t - t0;
    if !(tau > 0.0) {
        return Err(CgfError::BeforeRelease(tau));
    }
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(CgfError::InvalidPoint(format!("distance {distance}")));
    }
    let four_dt = 4.0 * diffusivity * tau;
    let value = (PI * four_dt).powf(-1.5) * (-distance * distance / four_dt - degradation * tau).exp();
    Ok(Concentration {
        value,
        converged: true,
        est_tail: 0.0,
    })
}

/// Result of integrating the CGF over the whole sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassResult {
    /// `∫_sphere C dV` (dimensionless: surviving fraction of molecules).
    pub mass: f64,
    pub converged: bool,
}

/// Radial profile of the angle-averaged CGF for a source at radius `r_tx`:
/// only `n = 0` survives integration over the sphere of directions.
struct AngleAveraged {
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    constant: f64,
    converged: bool,
}

impl AngleAveraged {
    fn new(
        r_tx: f64,
        tau: f64,
        env: &Environment,
        table: &EigenvalueTable,
        trunc: &TruncationPolicy,
    ) -> Result<Self, CgfError> {
        // The n = 0 series with unit angular factor (the 1/4π of A_0 cancels
        // the solid angle 4π).
        let series = ModalSeries::from_weights(
            env,
            table,
            trunc,
            tau,
            1.0 / env.radius.powi(3),
            3.0 / env.radius.powi(3),
            Some(0),
            |_, modes| modes.iter().map(|m| sph_j(0, m.lambda * r_tx) / m.norm).collect(),
        )?;
        let conv = series.eval(tau)?.converged;
        let decay = (-env.degradation * tau).exp();
        let modes = table.modes(0);
        let deg = &series.degrees[0];
        let lambdas = modes[..deg.weights.len()].iter().map(|m| m.lambda).collect();
        let weights = deg
            .weights
            .iter()
            .zip(&deg.rates)
            .map(|(w, r)| w * (-r * tau).exp() * decay)
            .collect();
        Ok(Self {
            lambdas,
            weights,
            constant: series.constant * decay,
            converged: conv,
        })
    }

    /// `4π r² ⟨C⟩(r)`, the radial density of molecules.
    fn shell_density(&self, r: f64) -> f64 {
        let s: f64 = self.lambdas.iter().zip(&self.weights).map(|(l, w)| w * sph_j(0, l * r)).sum();
        (s + self.constant) * r * r
    }
}

/// `∫_sphere C(r̄, t | tx, t0) dV`, by adaptive quadrature of the
/// angle-averaged radial profile.
pub fn total_mass(
    tx: &SphericalPoint,
    t: f64,
    t0: f64,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<MassResult, CgfError> {
    check_inside(tx, env)?;
    let tau = t - t0;
    if tau < 0.0 {
        return Err(CgfError::BeforeRelease(tau));
    }
    let profile = AngleAveraged::new(tx.r, tau, env, table, trunc)?;
    let width = (2.0 * env.diffusivity * tau).sqrt();
    let breaks: Vec<f64> = (-8..=8).map(|i| tx.r + i as f64 * width).collect();
    let q = AdaptiveGauss::new(1e-12, 1e-12);
    let mass = q.integrate_with_breaks(|r| profile.shell_density(r), 0.0, env.radius, &breaks);
    Ok(MassResult {
        mass,
        converged: profile.converged,
    })
}

/// Same integral as [`total_mass`] using `∫_0^{r_s} j_0(λ r) r² dr = r_s² j_1(λ r_s)/λ`.
pub fn total_mass_closed_form(
    tx: &SphericalPoint,
    t: f64,
    t0: f64,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<MassResult, CgfError> {
    check_inside(tx, env)?;
    let tau = t - t0;
    if tau < 0.0 {
        return Err(CgfError::BeforeRelease(tau));
    }
    let profile = AngleAveraged::new(tx.r, tau, env, table, trunc)?;
    let rs = env.radius;
    let radial: f64 = profile
        .lambdas
        .iter()
        .zip(&profile.weights)
        .map(|(l, w)| w * rs * rs * sph_j(1, l * rs) / l)
        .sum();
    Ok(MassResult {
        mass: radial + profile.constant * rs.powi(3) / 3.0,
        converged: profile.converged,
    })
}
