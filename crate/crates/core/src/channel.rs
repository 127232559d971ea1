//! Channel quantities derived from the CGF: the probability that a released
//! molecule is inside a transparent spherical receiver at time `t`, its
//! peak, and the Poisson mean of the received count including ISI.
//!
//! `p_obs` is a dimensionless probability of presence at a sampling instant
//! (not a density in time). Times are measured from the release.

use std::f64::consts::PI;

use thiserror::Error;

use crate::cgf::{self, AngularPair, CgfError, ModalSeries, SphericalPoint, TruncationPolicy};
use crate::eigen::{EigenvalueTable, Environment};
use crate::par::{self, Execution};
use crate::quad::gauss_legendre_on;
use crate::specfun::{sph_j, NormalizedLegendre};

/// Quadrature orders tried in turn by the ball-integrated probability.
pub const EXACT_ORDERS: [usize; 5] = [8, 12, 16, 24, 32];
/// Agreement required between successive quadrature orders.
pub const EXACT_REL_TOL: f64 = 1e-6;
/// Coarse grid size used before the golden-section peak refinement.
pub const PEAK_GRID_POINTS: usize = 96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error(transparent)]
    Cgf(#[from] CgfError),
    #[error("invalid receiver: {0}")]
    InvalidReceiver(String),
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
}

/// Transparent receiver: a counting ball that does not affect diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverSpec {
    pub center: SphericalPoint,
    /// Ball radius `R_rx` in m.
    pub radius: f64,
}

impl ReceiverSpec {
    pub fn new(center: SphericalPoint, radius: f64) -> Result<Self, ChannelError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ChannelError::InvalidReceiver(format!("radius {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }

    /// `|center| + R_rx ≤ r_s` (with a relative slack of 1e-12).
    pub fn fits_in(&self, sphere_radius: f64) -> bool {
        self.center.r + self.radius <= sphere_radius * (1.0 + 1e-12)
    }

    pub fn contains(&self, p: &SphericalPoint) -> bool {
        self.contains_cartesian(p.to_cartesian())
    }

    pub fn contains_cartesian(&self, p: [f64; 3]) -> bool {
        let c = self.center.to_cartesian();
        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
        d2 <= self.radius * self.radius
    }

    /// Tensor product rule over the ball: Gauss–Legendre in the local radius
    /// (weight ρ²) and in the cosine of the local polar angle, trapezoidal in
    /// the local azimuth. Returns `(point, weight)` with weights summing to
    /// the ball volume.
    pub fn quadrature(&self, order: usize) -> Vec<([f64; 3], f64)> {
        let q = order.max(2);
        let c = self.center.to_cartesian();
        let radial = gauss_legendre_on(q, 0.0, self.radius);
        let polar = gauss_legendre_on(q, -1.0, 1.0);
        let n_az = 2 * q;
        let w_az = 2.0 * PI / n_az as f64;
        let mut out = Vec::with_capacity(q * q * n_az);
        for &(rho, wr) in &radial {
            for &(ca, wa) in &polar {
                let sa = (1.0 - ca * ca).max(0.0).sqrt();
                for j in 0..n_az {
                    let b = (j as f64 + 0.5) * w_az;
                    let (sb, cb) = b.sin_cos();
                    let p = [c[0] + rho * sa * cb, c[1] + rho * sa * sb, c[2] + rho * ca];
                    out.push((p, wr * rho * rho * wa * w_az));
                }
            }
        }
        out
    }
}

/// How molecules propagate: inside the sphere, or in free space.
#[derive(Debug, Clone, Copy)]
pub enum Propagation<'a> {
    Bounded {
        env: &'a Environment,
        table: &'a EigenvalueTable,
        trunc: &'a TruncationPolicy,
    },
    Unbounded {
        diffusivity: f64,
        degradation: f64,
    },
}

impl Propagation<'_> {
    /// Smallest time at which results may be reported as converged.
    pub fn guard(&self) -> f64 {
        match self {
            Propagation::Bounded { trunc, .. } => trunc.t_min_guard,
            Propagation::Unbounded { .. } => 0.0,
        }
    }
}

/// A probability of presence with its convergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsProbability {
    pub value: f64,
    pub converged: bool,
}

/// `p_obs` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPdf {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: Vec<bool>,
    pub peak_time: f64,
    pub peak_value: f64,
}

impl ObservationPdf {
    pub fn new(times: Vec<f64>, values: Vec<f64>, converged: Vec<bool>) -> Self {
        let (mut peak_time, mut peak_value) = (f64::NAN, f64::NEG_INFINITY);
        for (&t, &v) in times.iter().zip(&values) {
            if v > peak_value {
                peak_time = t;
                peak_value = v;
            }
        }
        Self {
            times,
            values,
            converged,
            peak_time,
            peak_value,
        }
    }

    /// `t_s,p_obs` rows preceded by `# key=value` comment lines.
    pub fn to_csv(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("t_s,p_obs\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", crate::csv::fmt17(*t), crate::csv::fmt17(*v)));
        }
        out
    }
}

/// Result of the peak search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time: f64,
    pub value: f64,
    /// The coarse grid varied by less than 1% (the maximum is ill-defined).
    pub flat: bool,
}

/// `p_obs(t)` evaluable at any time after the one it was built for.
#[derive(Debug, Clone)]
pub enum PdfKernel {
    Series(ModalSeries),
    Unbounded {
        /// `(weight, distance)` pairs; a single pair for the point approximation.
        nodes: Vec<(f64, f64)>,
        diffusivity: f64,
        degradation: f64,
    },
}

impl PdfKernel {
    pub fn eval(&self, t: f64) -> Result<ObsProbability, ChannelError> {
        match self {
            PdfKernel::Series(s) => {
                let c = s.eval(t)?;
                Ok(ObsProbability {
                    value: c.value,
                    converged: c.converged,
                })
            }
            PdfKernel::Unbounded {
                nodes,
                diffusivity,
                degradation,
            } => {
                let mut v = 0.0;
                for &(w, d) in nodes {
                    v += w * cgf::cgf_unbounded(d, t, 0.0, *diffusivity, *degradation)?.value;
                }
                Ok(ObsProbability {
                    value: v,
                    converged: true,
                })
            }
        }
    }
}

/// A transmitter/receiver pair in a given propagation environment.
#[derive(Debug, Clone)]
pub struct Channel<'a> {
    prop: Propagation<'a>,
    tx: SphericalPoint,
    rx: ReceiverSpec,
    exec: Execution,
}

impl<'a> Channel<'a> {
    pub fn new(prop: Propagation<'a>, tx: SphericalPoint, rx: ReceiverSpec) -> Result<Self, ChannelError> {
        if let Propagation::Bounded { env, .. } = prop {
            if !rx.fits_in(env.radius) {
                return Err(ChannelError::InvalidReceiver(format!(
                    "ball of radius {} at r = {} does not fit in the sphere of radius {}",
                    rx.radius, rx.center.r, env.radius
                )));
            }
            cgf::check_inside(&tx, env)?;
        }
        Ok(Self {
            prop,
            tx,
            rx,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn propagation(&self) -> &Propagation<'a> {
        &self.prop
    }

    pub fn tx(&self) -> &SphericalPoint {
        &self.tx
    }

    pub fn rx(&self) -> &ReceiverSpec {
        &self.rx
    }

    /// The transmitter lies inside the receiver ball; the point
    /// approximation is then poor and the ball integrand singular.
    pub fn overlaps_transmitter(&self) -> bool {
        self.rx.contains(&self.tx)
    }

    /// Kernel for `(4π/3) R_rx³ · C(rx.center, t | tx)`, valid for `t ≥ t_min`.
    pub fn approx_kernel(&self, t_min: f64) -> Result<PdfKernel, ChannelError> {
        let vol = self.rx.volume();
        match self.prop {
            Propagation::Bounded { env, table, trunc } => Ok(PdfKernel::Series(
                ModalSeries::point_pair(&self.rx.center, &self.tx, env, table, trunc, t_min)?.scaled(vol),
            )),
            Propagation::Unbounded {
                diffusivity,
                degradation,
            } => Ok(PdfKernel::Unbounded {
                nodes: vec![(vol, self.rx.center.distance(&self.tx))],
                diffusivity,
                degradation,
            }),
        }
    }

    /// Kernel for the CGF integrated over the receiver ball with a rule of
    /// the given order, valid for `t ≥ t_min`.
    pub fn exact_kernel(&self, t_min: f64, order: usize) -> Result<PdfKernel, ChannelError> {
        let rule = self.rx.quadrature(order);
        match self.prop {
            Propagation::Bounded { env, table, trunc } => {
                let n_cap = trunc.n_max.min(table.n_max());
                let points: Vec<(SphericalPoint, f64)> = rule
                    .iter()
                    .map(|&(p, w)| {
                        let mut sp = SphericalPoint::from_cartesian(p);
                        sp.r = sp.r.min(env.radius);
                        (sp, w)
                    })
                    .collect();
                let ltx = NormalizedLegendre::new(n_cap, self.tx.theta.cos());
                let angular: Vec<AngularPair> = par::map_slice(self.exec, &points, |(p, _)| {
                    AngularPair::with_table(n_cap, p, &ltx, self.tx.phi)
                });
                let constant = angular
                    .iter()
                    .zip(&points)
                    .map(|(a, (_, w))| w * a.get(0))
                    .sum::<f64>()
                    / (env.radius.powi(3) / 3.0);
                let floor = cgf::uniform_density(env) * self.rx.volume();
                let r_tx = self.tx.r;
                let exec = self.exec;
                let series = ModalSeries::from_weights(env, table, trunc, t_min, floor, constant, None, |n, modes| {
                    par::map_slice(exec, modes, |m| {
                        let s: f64 = points
                            .iter()
                            .zip(&angular)
                            .map(|((p, w), a)| w * a.get(n) * sph_j(n, m.lambda * p.r))
                            .sum();
                        s * sph_j(n, m.lambda * r_tx) / m.norm
                    })
                })?;
                Ok(PdfKernel::Series(series))
            }
            Propagation::Unbounded {
                diffusivity,
                degradation,
            } => {
                let tx = self.tx.to_cartesian();
                let nodes = rule
                    .iter()
                    .map(|&(p, w)| {
                        let d = ((p[0] - tx[0]).powi(2) + (p[1] - tx[1]).powi(2) + (p[2] - tx[2]).powi(2)).sqrt();
                        (w, d)
                    })
                    .collect();
                Ok(PdfKernel::Unbounded {
                    nodes,
                    diffusivity,
                    degradation,
                })
            }
        }
    }

    /// Small-receiver approximation `(4π/3) R_rx³ · C(rx.center, t | tx)`.
    pub fn p_obs_approx(&self, t: f64) -> Result<ObsProbability, ChannelError> {
        self.approx_kernel(t)?.eval(t)
    }

    /// CGF integrated over the receiver ball.
    pub fn p_obs_exact(&self, t: f64) -> Result<ObsProbability, ChannelError> {
        Ok(self.exact_curve(&[t])?.first().copied().expect("one time"))
    }

    /// `p_obs_approx` on a strictly increasing grid of positive times.
    pub fn approx_curve(&self, times: &[f64]) -> Result<ObservationPdf, ChannelError> {
        check_grid(times)?;
        let kernel = self.approx_kernel(times[0])?;
        let vals = eval_grid(&kernel, times, self.exec)?;
        Ok(ObservationPdf::new(
            times.to_vec(),
            vals.iter().map(|v| v.value).collect(),
            vals.iter().map(|v| v.converged).collect(),
        ))
    }

    /// Ball-integrated `p_obs` on a grid. The quadrature order is raised
    /// through [`EXACT_ORDERS`] until two successive orders agree to
    /// [`EXACT_REL_TOL`] relative to the largest value on the grid; if none
    /// do, every point is reported as not converged.
    pub fn exact_curve(&self, times: &[f64]) -> Result<Vec<ObsProbability>, ChannelError> {
        check_grid(times)?;
        let mut prev: Option<Vec<ObsProbability>> = None;
        for &order in &EXACT_ORDERS {
            let kernel = self.exact_kernel(times[0], order)?;
            let cur = eval_grid(&kernel, times, self.exec)?;
            if let Some(p) = &prev {
                let scale = cur.iter().map(|v| v.value.abs()).fold(0.0, f64::max);
                let diff = cur.iter().zip(p).map(|(a, b)| (a.value - b.value).abs()).fold(0.0, f64::max);
                if diff <= EXACT_REL_TOL * scale {
                    return Ok(cur);
                }
            }
            prev = Some(cur);
        }
        let mut last = prev.expect("at least one order");
        for v in &mut last {
            v.converged = false;
        }
        Ok(last)
    }

    /// Maximizer of `p_obs_approx` on `window`: a log-spaced grid followed
    /// by golden-section refinement in `ln t`. In the bounded case the lower
    /// end is raised to the small-time guard.
    pub fn find_peak_time(&self, window: (f64, f64)) -> Result<Peak, ChannelError> {
        let (lo, hi) = window;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(ChannelError::InvalidWindow(format!("({lo}, {hi})")));
        }
        let lo = lo.max(self.prop.guard());
        if lo >= hi {
            return Err(ChannelError::InvalidWindow(format!(
                "window ends before the small-time guard {}",
                self.prop.guard()
            )));
        }
        let kernel = self.approx_kernel(lo)?;
        let grid = log_grid(lo, hi, PEAK_GRID_POINTS);
        let vals = eval_grid(&kernel, &grid, self.exec)?;
        let (mut best, mut vmin) = (0, f64::INFINITY);
        for (i, v) in vals.iter().enumerate() {
            if v.value > vals[best].value {
                best = i;
            }
            vmin = vmin.min(v.value);
        }
        let vmax = vals[best].value;
        let flat = !(vmax > 0.0 && (vmin <= 0.0 || vmax / vmin >= 1.01));
        let a = grid[best.saturating_sub(1)].ln();
        let b = grid[(best + 1).min(grid.len() - 1)].ln();
        let f = |u: f64| kernel.eval(u.exp()).map(|v| v.value);
        let (u, v) = golden_max(f, a, b, 1e-7)?;
        let (time, value) = if v >= vmax { (u.exp(), v) } else { (grid[best], vmax) };
        Ok(Peak { time, value, flat })
    }
}

fn check_grid(times: &[f64]) -> Result<(), ChannelError> {
    if times.is_empty() {
        return Err(ChannelError::InvalidWindow("empty time grid".into()));
    }
    if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ChannelError::InvalidWindow("times must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn eval_grid(kernel: &PdfKernel, times: &[f64], exec: Execution) -> Result<Vec<ObsProbability>, ChannelError> {
    par::map_slice(exec, times, |&t| kernel.eval(t)).into_iter().collect()
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
fn golden_max<F>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64), ChannelError>
where
    F: Fn(f64) -> Result<f64, ChannelError>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// `n` log-spaced points from `lo` to `hi` inclusive (`n = 1` gives `[lo]`).
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == n {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Default PDF grid: 256 log-spaced points from the guard to five slots.
pub fn default_grid(guard: f64, slot: f64) -> Vec<f64> {
    log_grid(guard.max(1e-7), 5.0 * slot, 256)
}

pub fn p_obs_approx(
    t: f64,
    rx: &ReceiverSpec,
    tx: &SphericalPoint,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<ObsProbability, ChannelError> {
    Channel::new(Propagation::Bounded { env, table, trunc }, *tx, *rx)?.p_obs_approx(t)
}

pub fn p_obs_exact(
    t: f64,
    rx: &ReceiverSpec,
    tx: &SphericalPoint,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
) -> Result<ObsProbability, ChannelError> {
    Channel::new(Propagation::Bounded { env, table, trunc }, *tx, *rx)?.p_obs_exact(t)
}

pub fn find_peak_time(
    rx: &ReceiverSpec,
    tx: &SphericalPoint,
    env: &Environment,
    table: &EigenvalueTable,
    trunc: &TruncationPolicy,
    window: (f64, f64),
) -> Result<Peak, ChannelError> {
    Channel::new(Propagation::Bounded { env, table, trunc }, *tx, *rx)?.find_peak_time(window)
}

/// `Σ_i b_i · N · p_obs(i T0 + t_s)`: the Poisson mean of the count sampled
/// in the current slot, where `bits[0]` is the current bit and `bits[i]` the
/// bit sent `i` slots earlier.
pub fn mean_received<F>(bits: &[bool], n_molecules: f64, t_s: f64, slot: f64, p_obs: F) -> f64
where
    F: Fn(f64) -> f64,
{
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| n_molecules * p_obs(i as f64 * slot + t_s))
        .sum()
}
