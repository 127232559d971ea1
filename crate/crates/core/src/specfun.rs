//! Spherical Bessel functions of the first kind and associated Legendre
//! functions of the first kind.
//!
//! `j_n(x)` is evaluated with three regimes:
//!
//! * `x <= 1`: power series about the origin, scaled by `x^n / (2n+1)!!`;
//! * `x > n`: upward recurrence from the closed forms of `j_0` and `j_1`;
//! * otherwise: Miller's downward recurrence, normalized against whichever of
//!   `j_0`, `j_1` has the larger magnitude at `x`.
//!
//! Associated Legendre functions are computed **without** the Condon–Shortley
//! phase, i.e. `P_1^1(x) = +sqrt(1 - x^2)`. Only products
//! `P_n^m(cos θ_tx) P_n^m(cos θ)` enter the Green's function, so the phase
//! convention never changes a concentration value.

use thiserror::Error;

/// Largest degree accepted by the public evaluators.
pub const DEFAULT_MAX_DEGREE: usize = 128;

/// Arguments at or below this value use the power series for `j_n`.
const SERIES_LIMIT: f64 = 1.0;

/// Magnitude at which Miller's recurrence rescales its running values.
const RESCALE_AT: f64 = 1e250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Ok,
    /// The true value is nonzero but below the smallest normal `f64`.
    UnderflowToZero,
    /// The value is finite but may carry fewer significant digits than usual.
    LossOfPrecision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecFunResult {
    pub value: f64,
    pub condition: Condition,
}

impl SpecFunResult {
    fn classify(value: f64) -> Self {
        let condition = if value != 0.0 && value.abs() < f64::MIN_POSITIVE {
            Condition::UnderflowToZero
        } else {
            Condition::Ok
        };
        Self { value, condition }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecFunError {
    #[error("{function}: argument {x} is outside the domain")]
    Domain { function: &'static str, x: f64 },
    #[error("{function}: degree {n} exceeds the supported maximum {max}")]
    DegreeTooLarge {
        function: &'static str,
        n: usize,
        max: usize,
    },
    #[error("{function}: order m = {m} exceeds degree n = {n}")]
    OrderExceedsDegree {
        function: &'static str,
        n: usize,
        m: usize,
    },
    #[error("{function}: value overflowed for n = {n}, m = {m}")]
    Overflow {
        function: &'static str,
        n: usize,
        m: usize,
    },
}

fn check_bessel_args(function: &'static str, n: usize, x: f64) -> Result<(), SpecFunError> {
    if n > DEFAULT_MAX_DEGREE {
        return Err(SpecFunError::DegreeTooLarge {
            function,
            n,
            max: DEFAULT_MAX_DEGREE,
        });
    }
    if !x.is_finite() || x < 0.0 {
        return Err(SpecFunError::Domain { function, x });
    }
    Ok(())
}

/// Spherical Bessel function of the first kind, `j_n(x)`.
pub fn sph_bessel_j(n: usize, x: f64) -> Result<f64, SpecFunError> {
    sph_bessel_j_checked(n, x).map(|r| r.value)
}

/// As [`sph_bessel_j`], with an underflow flag on the result.
pub fn sph_bessel_j_checked(n: usize, x: f64) -> Result<SpecFunResult, SpecFunError> {
    check_bessel_args("sph_bessel_j", n, x)?;
    let value = sph_j(n, x);
    let mut result = SpecFunResult::classify(value);
    if value == 0.0 && x > 0.0 && !is_exact_zero_argument(n, x) {
        result.condition = Condition::UnderflowToZero;
    }
    Ok(result)
}

// Exact zeros only occur at x = 0 for n >= 1; anything else reported as 0 is
// an underflow.
fn is_exact_zero_argument(n: usize, x: f64) -> bool {
    n >= 1 && x == 0.0
}

/// Derivative `d j_n / dx`.
///
/// Uses `j_n' = j_{n-1} - (n+1)/x j_n` for `n >= 1` and `j_0' = -j_1`.
pub fn sph_bessel_j_prime(n: usize, x: f64) -> Result<f64, SpecFunError> {
    check_bessel_args("sph_bessel_j_prime", n, x)?;
    Ok(sph_j_prime(n, x))
}

/// `j_0..=j_{n_max}` at one argument.
pub fn sph_bessel_j_seq(n_max: usize, x: f64) -> Result<Vec<f64>, SpecFunError> {
    check_bessel_args("sph_bessel_j_seq", n_max, x)?;
    let mut out = vec![0.0; n_max + 1];
    sph_j_fill(x, &mut out);
    Ok(out)
}

/// `j_{-1}(x) = cos(x) / x`, used by the mode normalization for `n = 0`.
pub(crate) fn sph_j_minus_one(x: f64) -> f64 {
    x.cos() / x
}

/// Unchecked `j_n(x)` for internal hot loops. `x` must be finite and `>= 0`.
pub(crate) fn sph_j(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if x <= SERIES_LIMIT {
        return series_j(n, x);
    }
    if n == 0 {
        return j0_closed(x);
    }
    if n == 1 {
        return j1_closed(x);
    }
    if x > n as f64 {
        let (_, jn) = upward(n, x);
        return jn;
    }
    let (_, jn) = miller_pair(n, x);
    jn
}

/// Unchecked `(j_{n-1}(x), j_n(x))` for `n >= 1`.
pub(crate) fn sph_j_pair(n: usize, x: f64) -> (f64, f64) {
    debug_assert!(n >= 1);
    if x == 0.0 {
        return (if n == 1 { 1.0 } else { 0.0 }, 0.0);
    }
    if x <= SERIES_LIMIT {
        return (series_j(n - 1, x), series_j(n, x));
    }
    if x > n as f64 {
        return upward(n, x);
    }
    miller_pair(n, x)
}

/// Unchecked derivative.
pub(crate) fn sph_j_prime(n: usize, x: f64) -> f64 {
    if n == 0 {
        return -sph_j(1, x);
    }
    if x == 0.0 {
        return if n == 1 { 1.0 / 3.0 } else { 0.0 };
    }
    let (jm1, jn) = sph_j_pair(n, x);
    jm1 - (n as f64 + 1.0) / x * jn
}

/// Fills `out[k] = j_k(x)` for `k = 0..out.len()`.
pub(crate) fn sph_j_fill(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let n_max = out.len() - 1;
    if x == 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    if x <= SERIES_LIMIT {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = series_j(k, x);
        }
        return;
    }
    if x > n_max as f64 {
        out[0] = j0_closed(x);
        if n_max >= 1 {
            out[1] = j1_closed(x);
        }
        for k in 1..n_max {
            out[k + 1] = (2 * k + 1) as f64 / x * out[k] - out[k - 1];
        }
        return;
    }
    miller_fill(x, out);
}

fn j0_closed(x: f64) -> f64 {
    x.sin() / x
}

fn j1_closed(x: f64) -> f64 {
    let (s, c) = x.sin_cos();
    (s / x - c) / x
}

fn series_j(n: usize, x: f64) -> f64 {
    // Leading factor x^n / (2n+1)!!, accumulated as a product so that it
    // underflows gradually instead of overflowing in the factorial.
    let mut lead = 1.0;
    for i in 1..=n {
        lead *= x / (2 * i + 1) as f64;
        if lead == 0.0 {
            return 0.0;
        }
    }
    let half_x2 = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= half_x2 / (k as f64 * (2 * n + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

fn upward(n: usize, x: f64) -> (f64, f64) {
    let mut prev = j0_closed(x);
    let mut cur = j1_closed(x);
    for k in 1..n {
        let next = (2 * k + 1) as f64 / x * cur - prev;
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

fn miller_start(n: usize, x: f64) -> usize {
    let m = (n as f64).max(x.ceil());
    (m + 2.0 * (40.0 * m).sqrt().ceil() + 20.0) as usize
}

/// Normalization factor turning an unnormalized downward sequence with
/// values `(u0, u1)` at orders 0 and 1 into `j_k`.
fn miller_scale(x: f64, u0: f64, u1: f64) -> f64 {
    let j0 = j0_closed(x);
    let j1 = j1_closed(x);
    if j0.abs() >= j1.abs() {
        j0 / u0
    } else {
        j1 / u1
    }
}

fn miller_pair(n: usize, x: f64) -> (f64, f64) {
    let start = miller_start(n, x);
    let mut upper = 0.0; // u_{k+1}
    let mut cur = 1e-300; // u_k
    let mut saved_n = 0.0;
    let mut saved_nm1 = 0.0;
    let mut k = start;
    let mut u1 = 0.0;
    loop {
        if k == n {
            saved_n = cur;
        }
        if k + 1 == n {
            saved_nm1 = cur;
        }
        if k == 1 {
            u1 = cur;
        }
        if k == 0 {
            break;
        }
        let lower = (2 * k + 1) as f64 / x * cur - upper;
        upper = cur;
        cur = lower;
        k -= 1;
        if cur.abs() > RESCALE_AT {
            let s = 1.0 / RESCALE_AT;
            cur *= s;
            upper *= s;
            saved_n *= s;
            saved_nm1 *= s;
            u1 *= s;
        }
    }
    let scale = miller_scale(x, cur, u1);
    (saved_nm1 * scale, saved_n * scale)
}

fn miller_fill(x: f64, out: &mut [f64]) {
    let n_max = out.len() - 1;
    let start = miller_start(n_max, x);
    let mut upper = 0.0;
    let mut cur = 1e-300;
    let mut k = start;
    loop {
        if k <= n_max {
            out[k] = cur;
        }
        if k == 0 {
            break;
        }
        let lower = (2 * k + 1) as f64 / x * cur - upper;
        upper = cur;
        cur = lower;
        k -= 1;
        if cur.abs() > RESCALE_AT {
            let s = 1.0 / RESCALE_AT;
            cur *= s;
            upper *= s;
            let from = k + 1;
            if from <= n_max {
                for v in &mut out[from..] {
                    *v *= s;
                }
            }
        }
    }
    let u1 = if n_max >= 1 { out[1] } else { 0.0 };
    let scale = if n_max >= 1 {
        miller_scale(x, out[0], u1)
    } else {
        j0_closed(x) / out[0]
    };
    for v in out.iter_mut() {
        *v *= scale;
    }
}

fn check_legendre_args(function: &'static str, n: usize, m: usize) -> Result<(), SpecFunError> {
    if n > DEFAULT_MAX_DEGREE {
        return Err(SpecFunError::DegreeTooLarge {
            function,
            n,
            max: DEFAULT_MAX_DEGREE,
        });
    }
    if m > n {
        return Err(SpecFunError::OrderExceedsDegree { function, n, m });
    }
    Ok(())
}

/// Associated Legendre function `P_n^m(x)` without the Condon–Shortley phase.
pub fn assoc_legendre_p(n: usize, m: usize, x: f64) -> Result<f64, SpecFunError> {
    check_legendre_args("assoc_legendre_p", n, m)?;
    if !(-1.0..=1.0).contains(&x) {
        return Err(SpecFunError::Domain {
            function: "assoc_legendre_p",
            x,
        });
    }
    let s = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    for i in 1..=m {
        pmm *= (2 * i - 1) as f64 * s;
    }
    if n == m {
        return finite_or_overflow(pmm, n, m);
    }
    let mut p_lo = pmm;
    let mut p_hi = x * (2 * m + 1) as f64 * pmm;
    for l in (m + 2)..=n {
        let next = (x * (2 * l - 1) as f64 * p_hi - (l + m - 1) as f64 * p_lo) / (l - m) as f64;
        p_lo = p_hi;
        p_hi = next;
    }
    finite_or_overflow(p_hi, n, m)
}

fn finite_or_overflow(v: f64, n: usize, m: usize) -> Result<f64, SpecFunError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SpecFunError::Overflow {
            function: "assoc_legendre_p",
            n,
            m,
        })
    }
}

/// `(n - m)! / (n + m)!` as a running product of reciprocals.
pub fn legendre_norm_ratio(n: usize, m: usize) -> Result<SpecFunResult, SpecFunError> {
    check_legendre_args("legendre_norm_ratio", n, m)?;
    let mut r = 1.0;
    for i in (n - m + 1)..=(n + m) {
        r /= i as f64;
    }
    let mut out = SpecFunResult::classify(r);
    if r == 0.0 {
        out.condition = Condition::UnderflowToZero;
    }
    Ok(out)
}

/// Triangular table of `sqrt((n-m)!/(n+m)!) P_n^m(x)` for `0 <= m <= n <= n_max`.
///
/// These values stay `O(1)` for every degree, so products of two of them
/// replace `ratio * P * P` without overflow.
#[derive(Debug, Clone)]
pub struct NormalizedLegendre {
    n_max: usize,
    values: Vec<f64>,
}

impl NormalizedLegendre {
    pub fn new(n_max: usize, x: f64) -> Self {
        let x = x.clamp(-1.0, 1.0);
        let s = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut values = vec![0.0; (n_max + 1) * (n_max + 2) / 2];
        let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
        let mut pmm = 1.0;
        for m in 0..=n_max {
            if m > 0 {
                pmm *= (((2 * m - 1) as f64) / ((2 * m) as f64)).sqrt() * s;
            }
            values[idx(m, m)] = pmm;
            if m == n_max {
                break;
            }
            let mut p_lo = pmm;
            let mut p_hi = x * ((2 * m + 1) as f64).sqrt() * pmm;
            values[idx(m + 1, m)] = p_hi;
            for l in (m + 2)..=n_max {
                let a = x * (2 * l - 1) as f64 / (((l - m) * (l + m)) as f64).sqrt();
                let b = (((l + m - 1) * (l - m - 1)) as f64 / ((l - m) * (l + m)) as f64).sqrt();
                let next = a * p_hi - b * p_lo;
                p_lo = p_hi;
                p_hi = next;
                values[idx(l, m)] = next;
            }
        }
        Self { n_max, values }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    #[inline]
    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * (n + 1) / 2 + m]
    }
}
