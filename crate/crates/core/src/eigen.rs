//! Eigenvalues of the radial problem with a Robin (partially absorbing)
//! boundary at `r = r_s`.
//!
//! For each angular degree `n` the admissible radial wavenumbers are the
//! positive roots of
//!
//! ```text
//! D λ j_n'(λ r_s) = -k_f j_n(λ r_s)
//! ```
//!
//! which, with `x = λ r_s` and the Robin number `ζ = r_s k_f / D`, becomes
//! `g(x) = x j_n'(x) + ζ j_n(x) = 0`. A fully absorbing boundary (`k_f = ∞`)
//! is handled as the Dirichlet condition `j_n(x) = 0`.
//!
//! Roots are bracketed by scanning `g` on a grid of step `π/8` (the
//! asymptotic root spacing is `π`), then refined by bisection and a single
//! Newton step. For `n >= 1`, `g > 0` on `(0, sqrt(n(n+1)))`, so the scan
//! starts at `n/2` without missing roots.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::csv::{fmt17, sha256_prefix};
use crate::par::{self, Execution};
use crate::specfun::{self, sph_j, sph_j_minus_one, sph_j_pair, sph_j_prime};

/// Relative tolerance on refined roots.
pub const ROOT_REL_TOL: f64 = 1e-12;

const SCAN_STEP: f64 = PI / 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("root finder failed to converge for degree n = {n}, root k = {k}")]
    Convergence { n: usize, k: usize },
    #[error("degree {n} exceeds the supported maximum {max}")]
    DegreeTooLarge { n: usize, max: usize },
    #[error("malformed eigenvalue cache: {0}")]
    Cache(String),
}

/// Physical constants of the spherical environment (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    /// Sphere radius `r_s` in m.
    pub radius: f64,
    /// Diffusion coefficient `D` in m²/s.
    pub diffusivity: f64,
    /// First-order degradation rate `k_d` in 1/s.
    pub degradation: f64,
    /// Forward binding rate `k_f` in m/s; `0` is reflective, `+∞` fully absorbing.
    pub forward_rate: f64,
}

impl Environment {
    pub fn new(radius: f64, diffusivity: f64, degradation: f64, forward_rate: f64) -> Result<Self, EigenError> {
        let env = Self {
            radius,
            diffusivity,
            degradation,
            forward_rate,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), EigenError> {
        let bad = |what: &str| Err(EigenError::InvalidEnvironment(what.to_string()));
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad("sphere radius must be finite and positive");
        }
        if !(self.diffusivity.is_finite() && self.diffusivity > 0.0) {
            return bad("diffusion coefficient must be finite and positive");
        }
        if !(self.degradation.is_finite() && self.degradation >= 0.0) {
            return bad("degradation rate must be finite and non-negative");
        }
        if self.forward_rate.is_nan() || self.forward_rate < 0.0 {
            return bad("forward rate must be non-negative (or +inf)");
        }
        Ok(())
    }

    pub fn is_absorbing(&self) -> bool {
        self.forward_rate.is_infinite()
    }

    pub fn is_reflective(&self) -> bool {
        self.forward_rate == 0.0
    }

    /// Dimensionless Robin number `ζ = r_s k_f / D`.
    pub fn robin_number(&self) -> f64 {
        self.radius * self.forward_rate / self.diffusivity
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }

    /// Stable identifier of the four constants, used to key cache files.
    pub fn hash(&self) -> String {
        let text = format!(
            "r_s={};D={};k_d={};k_f={}",
            fmt17(self.radius),
            fmt17(self.diffusivity),
            fmt17(self.degradation),
            fmt17(self.forward_rate)
        );
        sha256_prefix(&text)
    }
}

/// One radial mode: `λ_nk` (1/m) and `N_nk = ∫_0^{r_s} j_n²(λ r) r² dr` (m³).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Root index starting at 1; the constant reflective mode uses 0.
    pub k: usize,
    pub lambda: f64,
    pub norm: f64,
}

/// Scaled eigenvalue function `g(x)` and its derivative.
#[derive(Debug, Clone, Copy)]
struct RootFunction {
    n: usize,
    /// `None` for a fully absorbing (Dirichlet) boundary.
    zeta: Option<f64>,
}

impl RootFunction {
    fn for_env(n: usize, env: &Environment) -> Self {
        let zeta = if env.is_absorbing() {
            None
        } else {
            Some(env.robin_number())
        };
        Self { n, zeta }
    }

    fn value(&self, x: f64) -> f64 {
        match self.zeta {
            None => sph_j(self.n, x),
            Some(z) => x * sph_j_prime(self.n, x) + z * sph_j(self.n, x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        let jp = sph_j_prime(self.n, x);
        match self.zeta {
            None => jp,
            Some(z) => {
                let j = sph_j(self.n, x);
                let l = (self.n * (self.n + 1)) as f64;
                (z - 1.0) * jp - (x - l / x) * j
            }
        }
    }

    /// Residual normalized by the local amplitude of `j_n`.
    fn normalized_residual(&self, x: f64) -> f64 {
        let j = sph_j(self.n, x);
        let jp = sph_j_prime(self.n, x);
        let amp = (j * j + jp * jp).sqrt();
        match self.zeta {
            None => j.abs() / amp,
            Some(z) => (x * jp + z * j).abs() / ((x + z) * amp),
        }
    }

    fn scan_start(&self) -> f64 {
        if self.n >= 1 {
            return 0.5 * self.n as f64;
        }
        match self.zeta {
            Some(z) if z > 0.0 => (0.1 * (3.0 * z).sqrt()).min(1e-4),
            _ => 1e-4,
        }
    }

    fn refine(&self, mut a: f64, mut b: f64, mut ga: f64) -> Option<f64> {
        for _ in 0..200 {
            if (b - a) <= 0.25 * ROOT_REL_TOL * a {
                break;
            }
            let mid = 0.5 * (a + b);
            let gm = self.value(mid);
            if gm == 0.0 {
                return Some(mid);
            }
            if (gm > 0.0) == (ga > 0.0) {
                a = mid;
                ga = gm;
            } else {
                b = mid;
            }
        }
        if (b - a) > ROOT_REL_TOL * a {
            return None;
        }
        let mid = 0.5 * (a + b);
        let d = self.derivative(mid);
        if d != 0.0 && d.is_finite() {
            let polished = mid - self.value(mid) / d;
            if polished >= a && polished <= b {
                return Some(polished);
            }
        }
        Some(mid)
    }
}

/// First `k_max` positive roots `λ_nk` (1/m) for degree `n`.
pub fn find_roots(n: usize, env: &Environment, k_max: usize) -> Result<Vec<f64>, EigenError> {
    env.validate()?;
    Ok(find_scaled_roots(n, env, k_max)?
        .into_iter()
        .map(|x| x / env.radius)
        .collect())
}

/// Roots in the dimensionless variable `x = λ r_s`.
pub fn find_scaled_roots(n: usize, env: &Environment, k_max: usize) -> Result<Vec<f64>, EigenError> {
    if n > specfun::DEFAULT_MAX_DEGREE {
        return Err(EigenError::DegreeTooLarge {
            n,
            max: specfun::DEFAULT_MAX_DEGREE,
        });
    }
    let f = RootFunction::for_env(n, env);
    let mut roots = Vec::with_capacity(k_max);
    let mut x_prev = f.scan_start();
    let mut g_prev = f.value(x_prev);
    // Roots k lie below (k + n/2 + 2) π; give the scan generous headroom.
    let max_steps = 8 * (k_max + n + 4) + 64;
    let mut steps = 0;
    while roots.len() < k_max {
        if steps > max_steps {
            return Err(EigenError::Convergence {
                n,
                k: roots.len() + 1,
            });
        }
        steps += 1;
        let x = x_prev + SCAN_STEP;
        let g = f.value(x);
        if !g.is_finite() {
            return Err(EigenError::Convergence {
                n,
                k: roots.len() + 1,
            });
        }
        if g == 0.0 {
            roots.push(x);
        } else if g_prev != 0.0 && (g > 0.0) != (g_prev > 0.0) {
            let root = f.refine(x_prev, x, g_prev).ok_or(EigenError::Convergence {
                n,
                k: roots.len() + 1,
            })?;
            roots.push(root);
        }
        x_prev = x;
        g_prev = g;
    }
    Ok(roots)
}

/// Normalized residual of the eigenvalue equation at `λ`.
pub fn root_residual(n: usize, lambda: f64, env: &Environment) -> f64 {
    RootFunction::for_env(n, env).normalized_residual(lambda * env.radius)
}

/// Number of sign changes of `g` on `(0, x_hi]`, counted on a uniform grid
/// of `steps` points starting at the same origin as the root scan.
pub fn count_sign_changes(n: usize, env: &Environment, x_hi: f64, steps: usize) -> usize {
    let f = RootFunction::for_env(n, env);
    let x0 = f.scan_start();
    let h = (x_hi - x0) / steps as f64;
    let mut count = 0;
    let mut prev = f.value(x0);
    for i in 1..=steps {
        let g = f.value(x0 + h * i as f64);
        if g != 0.0 && prev != 0.0 && (g > 0.0) != (prev > 0.0) {
            count += 1;
        }
        if g != 0.0 {
            prev = g;
        }
    }
    count
}

/// `N_nk = (r_s³/2) (j_n²(λ r_s) − j_{n−1}(λ r_s) j_{n+1}(λ r_s))`, with
/// `j_{-1}(x) = cos(x)/x`. The constant mode `λ = 0` returns `r_s³/3`.
pub fn mode_norm(n: usize, lambda: f64, env: &Environment) -> f64 {
    let rs3 = env.radius.powi(3);
    if lambda == 0.0 {
        return if n == 0 { rs3 / 3.0 } else { 0.0 };
    }
    let x = lambda * env.radius;
    let (jm1, jn) = if n == 0 {
        (sph_j_minus_one(x), sph_j(0, x))
    } else {
        sph_j_pair(n, x)
    };
    let jp1 = sph_j(n + 1, x);
    0.5 * rs3 * (jn * jn - jm1 * jp1)
}

/// Precomputed modes for degrees `0..=n_max`, `k_max` roots each.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvalueTable {
    env: Environment,
    rows: Vec<Vec<Mode>>,
    zero_mode: Option<Mode>,
}

impl EigenvalueTable {
    pub fn build(env: &Environment, n_max: usize, k_max: usize, exec: Execution) -> Result<Self, EigenError> {
        env.validate()?;
        if n_max > specfun::DEFAULT_MAX_DEGREE {
            return Err(EigenError::DegreeTooLarge {
                n: n_max,
                max: specfun::DEFAULT_MAX_DEGREE,
            });
        }
        let results = par::map_indices(exec, n_max + 1, |n| {
            find_roots(n, env, k_max).map(|roots| {
                roots
                    .into_iter()
                    .enumerate()
                    .map(|(i, lambda)| Mode {
                        k: i + 1,
                        lambda,
                        norm: mode_norm(n, lambda, env),
                    })
                    .collect::<Vec<_>>()
            })
        });
        let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let zero_mode = env.is_reflective().then(|| Mode {
            k: 0,
            lambda: 0.0,
            norm: env.radius.powi(3) / 3.0,
        });
        Ok(Self {
            env: *env,
            rows,
            zero_mode,
        })
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn k_max(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn modes(&self, n: usize) -> &[Mode] {
        &self.rows[n]
    }

    pub fn zero_mode(&self) -> Option<&Mode> {
        self.zero_mode.as_ref()
    }

    pub fn zero_mode_included(&self) -> bool {
        self.zero_mode.is_some()
    }

    /// CSV with columns `n,k,lambda_per_m,norm_m3`, preceded by a comment
    /// line carrying the environment hash.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# environment_hash={}", self.env.hash());
        out.push_str("n,k,lambda_per_m,norm_m3\n");
        if let Some(z) = &self.zero_mode {
            let _ = writeln!(out, "0,0,{},{}", fmt17(z.lambda), fmt17(z.norm));
        }
        for (n, row) in self.rows.iter().enumerate() {
            for m in row {
                let _ = writeln!(out, "{n},{},{},{}", m.k, fmt17(m.lambda), fmt17(m.norm));
            }
        }
        out
    }

    /// Loads a table written by [`to_csv`](Self::to_csv); the hash must match `env`.
    pub fn from_csv(env: &Environment, text: &str) -> Result<Self, EigenError> {
        let bad = |m: String| EigenError::Cache(m);
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let hash = head
            .strip_prefix("# environment_hash=")
            .ok_or_else(|| bad("missing hash line".into()))?;
        if hash != env.hash() {
            return Err(bad(format!("hash {hash} does not match environment {}", env.hash())));
        }
        if lines.next() != Some("n,k,lambda_per_m,norm_m3") {
            return Err(bad("unexpected header".into()));
        }
        let mut rows: Vec<Vec<Mode>> = Vec::new();
        let mut zero_mode = None;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", i + 3)));
            }
            let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {}: {e}", i + 3)));
            let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 3)));
            let n = parse_usize(fields[0])?;
            let mode = Mode {
                k: parse_usize(fields[1])?,
                lambda: parse_f64(fields[2])?,
                norm: parse_f64(fields[3])?,
            };
            if mode.k == 0 {
                zero_mode = Some(mode);
                continue;
            }
            if rows.len() <= n {
                rows.resize(n + 1, Vec::new());
            }
            rows[n].push(mode);
        }
        if rows.is_empty() {
            return Err(bad("no modes".into()));
        }
        Ok(Self {
            env: *env,
            rows,
            zero_mode,
        })
    }
}
