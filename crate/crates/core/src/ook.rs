//! On-off keying over the diffusion channel.
//!
//! A '1' releases `N` molecules, a '0' none. The count sampled in the
//! current slot is Poisson with mean `Σ_i b_i N p_i`, where `p_i` is the
//! observation probability `i` slots after a release (`p_0` is the current
//! slot). The detector decides '1' iff `y > Thr` with
//! `Thr = N p_0 / ln(1 + N p_0 / S)` and `S` the ISI mean of the previous
//! `M` bits: known bits in genie mode, earlier decisions in
//! decision-feedback mode.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::csv::fmt17;
use crate::par::{self, Execution};

/// Largest memory the analytic enumeration accepts.
pub const MAX_ENUMERATION_MEMORY: usize = 24;
/// Means above this use the regularized incomplete gamma function.
pub const DIRECT_SUM_LIMIT: f64 = 700.0;
/// Default number of simulated bits.
pub const DEFAULT_MC_BITS: u64 = 10_000_000;
const MC_BLOCK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OokError {
    #[error("invalid link configuration: {0}")]
    InvalidLink(String),
    #[error("no distinguishing signal (N * p0 = 0)")]
    DegenerateSignal,
    #[error("memory M = {m} is too large to enumerate (limit {MAX_ENUMERATION_MEMORY}); use the Monte Carlo estimate")]
    EnumerationTooLarge { m: usize },
    #[error("observation profile has {got} entries, expected M + 1 = {expected}")]
    ProfileLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectorMode {
    /// Previous bits are known exactly.
    #[default]
    Genie,
    /// Previous decisions stand in for previous bits.
    DecisionFeedback,
}

impl DetectorMode {
    pub fn label(self) -> &'static str {
        match self {
            DetectorMode::Genie => "genie",
            DetectorMode::DecisionFeedback => "decision_feedback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    /// Molecules released for a '1'.
    pub n_molecules: f64,
    /// Slot duration `T0` in s.
    pub slot: f64,
    /// Channel memory `M` in slots.
    pub memory: usize,
    /// Sampling time within a slot, `0 < t_s ≤ T0`.
    pub sampling_time: f64,
    pub mode: DetectorMode,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), OokError> {
        if !(self.n_molecules.is_finite() && self.n_molecules >= 0.0) {
            return Err(OokError::InvalidLink(format!("N = {}", self.n_molecules)));
        }
        if !(self.slot.is_finite() && self.slot > 0.0) {
            return Err(OokError::InvalidLink(format!("T0 = {}", self.slot)));
        }
        if !(self.sampling_time > 0.0 && self.sampling_time <= self.slot) {
            return Err(OokError::InvalidLink(format!(
                "sampling time {} outside (0, T0 = {}]",
                self.sampling_time, self.slot
            )));
        }
        Ok(())
    }

    /// Times `i T0 + t_s` at which the profile is needed, `i = 0..=M`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.memory).map(|i| i as f64 * self.slot + self.sampling_time).collect()
    }
}

/// `M = ceil(duration / T0)`, ignoring round-off just above an integer.
pub fn memory_from_duration(duration: f64, slot: f64) -> usize {
    ((duration / slot) - 1e-9).ceil().max(0.0) as usize
}

/// Observation probabilities `p_i = p_obs(i T0 + t_s)`, `i = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsiProfile {
    p: Vec<f64>,
}

impl IsiProfile {
    pub fn new(p: Vec<f64>) -> Self {
        Self { p }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(link: &LinkConfig, p_obs: F) -> Self {
        Self::new(link.sample_times().into_iter().map(p_obs).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    fn check(&self, link: &LinkConfig) -> Result<(), OokError> {
        link.validate()?;
        if self.p.len() != link.memory + 1 {
            return Err(OokError::ProfileLength {
                got: self.p.len(),
                expected: link.memory + 1,
            });
        }
        Ok(())
    }
}

/// `Thr = N p0 / ln(1 + N p0 / S)` with `S = Σ isi_means`; `0` when `S = 0`.
pub fn threshold(n_molecules: f64, p0: f64, isi_means: &[f64]) -> Result<f64, OokError> {
    let signal = n_molecules * p0;
    if !(signal > 0.0) {
        return Err(OokError::DegenerateSignal);
    }
    Ok(threshold_for(signal, isi_means.iter().sum()))
}

/// Threshold from the signal mean and the summed ISI mean. A zero signal
/// yields `0` so that the rule degenerates to "decide '1' iff `y > 0`".
pub fn threshold_for(signal: f64, isi: f64) -> f64 {
    if isi <= 0.0 || signal <= 0.0 {
        return 0.0;
    }
    signal / (signal / isi).ln_1p()
}

/// `Pr(Y ≤ k)` for `Y ~ Poisson(mean)`.
pub fn poisson_cdf(k: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 1.0;
    }
    if mean > DIRECT_SUM_LIMIT {
        return gamma_ur(k as f64 + 1.0, mean);
    }
    let mut term = (-mean).exp();
    let mut sum = term;
    for j in 1..=k {
        term *= mean / j as f64;
        sum += term;
        if term < 1e-17 * sum && j as f64 > mean {
            break;
        }
    }
    sum.min(1.0)
}

/// Error probability for one pattern given the signal mean `N p0`, the ISI
/// mean `S` actual in the channel, and the threshold in use.
fn pattern_error(b0: bool, signal: f64, isi: f64, thr: f64) -> f64 {
    let k = thr.floor().max(0.0) as u64;
    if b0 {
        poisson_cdf(k, signal + isi)
    } else {
        1.0 - poisson_cdf(k, isi)
    }
}

/// `Pr(error | b_0..b_M)` for the genie threshold. `bits[0]` is the current
/// bit and `bits[i]` the bit sent `i` slots earlier.
pub fn conditional_error(bits: &[bool], link: &LinkConfig, profile: &IsiProfile) -> Result<f64, OokError> {
    profile.check(link)?;
    if bits.len() != link.memory + 1 {
        return Err(OokError::InvalidLink(format!(
            "pattern has {} bits, expected M + 1 = {}",
            bits.len(),
            link.memory + 1
        )));
    }
    let p = profile.values();
    let signal = link.n_molecules * p[0];
    let isi = isi_sum(|i| bits[i], link.n_molecules, p);
    Ok(pattern_error(bits[0], signal, isi, threshold_for(signal, isi)))
}

fn isi_sum<F: Fn(usize) -> bool>(bit: F, n: f64, p: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, pi) in p.iter().enumerate().skip(1) {
        if bit(i) {
            s += n * pi;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerResult {
    pub ber: f64,
    /// Conditional error per pattern; bit `i` of the index is `b_i`.
    pub per_pattern: Vec<f64>,
    pub n_patterns: usize,
}

/// Exact BER by enumerating all `2^(M+1)` patterns with genie thresholds.
pub fn analytic_ber(link: &LinkConfig, profile: &IsiProfile, exec: Execution) -> Result<BerResult, OokError> {
    profile.check(link)?;
    let m = link.memory;
    if m > MAX_ENUMERATION_MEMORY {
        return Err(OokError::EnumerationTooLarge { m });
    }
    let p = profile.values();
    let signal = link.n_molecules * p[0];
    let n_isi = 1usize << m;
    // One entry per ISI history; each yields the b0 = 0 and b0 = 1 errors.
    let pairs = par::map_indices(exec, n_isi, |h| {
        let isi = isi_sum(|i| (h >> (i - 1)) & 1 == 1, link.n_molecules, p);
        let thr = threshold_for(signal, isi);
        (pattern_error(false, signal, isi, thr), pattern_error(true, signal, isi, thr))
    });
    let mut per_pattern = Vec::with_capacity(2 * n_isi);
    for (e0, e1) in &pairs {
        per_pattern.push(*e0);
        per_pattern.push(*e1);
    }
    let total: f64 = per_pattern.iter().sum();
    let n_patterns = per_pattern.len();
    Ok(BerResult {
        ber: total / n_patterns as f64,
        per_pattern,
        n_patterns,
    })
}

/// Monte Carlo BER for both detectors from the same bits and counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloBer {
    pub n_bits: u64,
    pub genie_errors: u64,
    pub df_errors: u64,
    /// Scored bits on which the two detectors decided differently.
    pub disagreements: u64,
}

impl MonteCarloBer {
    pub fn ber(&self, mode: DetectorMode) -> f64 {
        let e = match mode {
            DetectorMode::Genie => self.genie_errors,
            DetectorMode::DecisionFeedback => self.df_errors,
        };
        e as f64 / self.n_bits as f64
    }

    /// Half-width of the normal-approximation 95% interval.
    pub fn ci95(&self, mode: DetectorMode) -> f64 {
        let p = self.ber(mode);
        1.96 * (p * (1.0 - p) / self.n_bits as f64).sqrt()
    }
}

/// SplitMix64 finalizer; decorrelates `(seed, index)` into a stream seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates an i.i.d. equiprobable bit stream. Bits are processed in blocks
/// with independent streams derived from `(seed, block)`; each block starts
/// with `M` warm-up bits (not scored) so that ISI is at steady state.
pub fn monte_carlo(link: &LinkConfig, profile: &IsiProfile, n_bits: u64, seed: u64, exec: Execution) -> Result<MonteCarloBer, OokError> {
    profile.check(link)?;
    if n_bits == 0 {
        return Err(OokError::InvalidLink("n_bits must be at least 1".into()));
    }
    let p = profile.values();
    let m = link.memory;
    let n = link.n_molecules;
    let signal = n * p[0];
    let n_blocks = n_bits.div_ceil(MC_BLOCK);
    let counts = par::map_indices(exec, n_blocks as usize, |b| {
        let b = b as u64;
        let len = MC_BLOCK.min(n_bits - b * MC_BLOCK) as usize;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix_seed(seed, b));
        let total = m + len;
        let bits: Vec<bool> = (0..total).map(|_| rng.random::<bool>()).collect();
        let mut decided = vec![false; total];
        let (mut ge, mut de, mut dis) = (0u64, 0u64, 0u64);
        for s in 0..total {
            // Index i slots back from slot s.
            let back = |v: &[bool], i: usize| s >= i && v[s - i];
            let actual = isi_sum(|i| back(&bits, i), n, p);
            let mean = if bits[s] { signal + actual } else { actual };
            let y = if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut rng)
            } else {
                0.0
            };
            let genie = y > threshold_for(signal, actual);
            let fed_back = isi_sum(|i| back(&decided, i), n, p);
            let df = y > threshold_for(signal, fed_back);
            decided[s] = df;
            if s >= m {
                ge += (genie != bits[s]) as u64;
                de += (df != bits[s]) as u64;
                dis += (df != genie) as u64;
            }
        }
        (ge, de, dis)
    });
    let (genie_errors, df_errors, disagreements) =
        counts.iter().fold((0, 0, 0), |(a, b, c), (x, y, z)| (a + x, b + y, c + z));
    Ok(MonteCarloBer {
        n_bits,
        genie_errors,
        df_errors,
        disagreements,
    })
}

/// Monte Carlo BER for the detector selected in `link.mode`.
pub fn monte_carlo_ber(link: &LinkConfig, profile: &IsiProfile, n_bits: u64, seed: u64, exec: Execution) -> Result<f64, OokError> {
    Ok(monte_carlo(link, profile, n_bits, seed, exec)?.ber(link.mode))
}

/// One row of a BER sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerRow {
    pub slot: f64,
    pub memory: usize,
    pub ber_analytic: Option<f64>,
    pub ber_mc: Option<f64>,
    pub mc_ci95: Option<f64>,
}

/// `T0_s,M,ber_analytic,ber_mc,mc_ci95`; missing values are left empty.
pub fn ber_csv(rows: &[BerRow], header: &[(String, String)]) -> String {
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    let mut out = String::new();
    for (k, v) in header {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str("T0_s,M,ber_analytic,ber_mc,mc_ci95\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(r.slot),
            r.memory,
            opt(r.ber_analytic),
            opt(r.ber_mc),
            opt(r.mc_ci95)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(n: f64, m: usize) -> LinkConfig {
        LinkConfig {
            n_molecules: n,
            slot: 0.05,
            memory: m,
            sampling_time: 0.01,
            mode: DetectorMode::Genie,
        }
    }

    #[test]
    fn threshold_closed_forms() {
        assert_eq!(threshold(10.0, 1.0, &[0.0, 0.0]).unwrap(), 0.0);
        let t = threshold(10.0, 1.0, &[4.0, 6.0]).unwrap();
        assert!((t - 10.0 / 2f64.ln()).abs() < 1e-12);
        assert!((t - 14.4270).abs() < 1e-4);
        assert_eq!(threshold(0.0, 1.0, &[1.0]), Err(OokError::DegenerateSignal));
    }

    #[test]
    fn poisson_cdf_small_cases() {
        assert!((poisson_cdf(0, 2.0) - (-2f64).exp()).abs() < 1e-16);
        assert!((poisson_cdf(1, 2.0) - 3.0 * (-2f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_cdf(5, 0.0), 1.0);
        // Both branches agree near the switch-over.
        let direct = {
            let mut t = (-650f64).exp();
            let mut s = t;
            for j in 1..=640u64 {
                t *= 650.0 / j as f64;
                s += t;
            }
            s
        };
        assert!((gamma_ur(641.0, 650.0) - direct).abs() < 1e-12);
    }

    #[test]
    fn memory_rule() {
        assert_eq!(memory_from_duration(0.2, 0.02), 10);
        assert_eq!(memory_from_duration(0.2, 0.03), 7);
        assert_eq!(memory_from_duration(0.2, 0.2), 1);
        assert_eq!(memory_from_duration(0.2, 0.5), 1);
    }

    #[test]
    fn no_signal_gives_one_half() {
        let l = link(0.0, 3);
        let prof = IsiProfile::new(vec![1e-3, 5e-4, 2e-4, 1e-4]);
        let r = analytic_ber(&l, &prof, Execution::Sequential).unwrap();
        assert_eq!(r.ber, 0.5);
        assert_eq!(r.n_patterns, 16);
    }

    #[test]
    fn memoryless_link() {
        let l = link(1000.0, 0);
        let prof = IsiProfile::new(vec![2e-3]);
        let r = analytic_ber(&l, &prof, Execution::Sequential).unwrap();
        assert!((r.ber - 0.5 * (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn conditional_error_edge_cases() {
        let l = link(1000.0, 2);
        let prof = IsiProfile::new(vec![2e-3, 1e-3, 5e-4]);
        assert_eq!(conditional_error(&[false, false, false], &l, &prof).unwrap(), 0.0);
        let e = conditional_error(&[true, false, false], &l, &prof).unwrap();
        assert!((e - (-2f64).exp()).abs() < 1e-15);
        assert!(conditional_error(&[true], &l, &prof).is_err());
    }

    #[test]
    fn enumeration_limit() {
        let l = link(1000.0, 25);
        let prof = IsiProfile::new(vec![1e-3; 26]);
        assert_eq!(
            analytic_ber(&l, &prof, Execution::Sequential),
            Err(OokError::EnumerationTooLarge { m: 25 })
        );
    }

    #[test]
    fn execution_mode_does_not_change_results() {
        let l = link(5e4, 6);
        let prof = IsiProfile::new(vec![4e-4, 2e-4, 1e-4, 6e-5, 3e-5, 2e-5, 1e-5]);
        let a = analytic_ber(&l, &prof, Execution::Sequential).unwrap();
        let b = analytic_ber(&l, &prof, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let x = monte_carlo(&l, &prof, 200_000, 7, Execution::Sequential).unwrap();
        let y = monte_carlo(&l, &prof, 200_000, 7, Execution::Parallel).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn csv_leaves_missing_values_empty() {
        let rows = [BerRow {
            slot: 0.02,
            memory: 10,
            ber_analytic: Some(0.25),
            ber_mc: None,
            mc_ci95: None,
        }];
        let s = ber_csv(&rows, &[]);
        assert!(s.ends_with(",10,2.5000000000000000e-1,,\n"));
    }
}
