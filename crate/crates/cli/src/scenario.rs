//! Scenario files: flat `key = value` text, `#` comments.
//!
//! Lengths and times may be given in SI or with a unit suffix on the key
//! (`r_s_um = 5`, `slot_ms = 20`, `k_f_um_per_s = 100`). Angles accept
//! multiples of `pi` (`pi/2`, `3*pi/4`). Rates accept `inf`. A sphere
//! radius of `inf` selects the free-space model.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use sphere_dmc::channel::ReceiverSpec;
use sphere_dmc::csv::{fmt17, sha256_prefix};
use sphere_dmc::ook::{memory_from_duration, DetectorMode};
use sphere_dmc::pbs::PbsConfig;
use sphere_dmc::{Environment, SphericalPoint, TruncationPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Canonical SI keys, in emission order, with their defaults (Table-1 values
/// for the partially absorbing, degrading case).
const KEYS: &[(&str, &str)] = &[
    ("r_s", "5e-6"),
    ("d", "1e-9"),
    ("k_d", "20"),
    ("k_f", "1e-4"),
    ("tx_r", "3e-6"),
    ("tx_theta", "pi/2"),
    ("tx_phi", "0"),
    ("rx_r", "4e-6"),
    ("rx_theta", "pi/4"),
    ("rx_phi", "3*pi/4"),
    ("rx_radius", "1e-6"),
    ("n_molecules", "5e4"),
    ("slot", "0.05"),
    ("memory_duration", "0.2"),
    ("memory", "auto"),
    ("sampling_time", "peak"),
    ("detector", "genie"),
    ("slots", "0.02,0.04,0.06,0.08,0.1,0.12,0.14,0.16,0.18,0.2"),
    ("mc_bits", "1e7"),
    ("n_max", "40"),
    ("k_max", "80"),
    ("rel_tol", "1e-8"),
    ("t_min_guard", "auto"),
    ("grid_t_lo", "auto"),
    ("grid_t_hi", "auto"),
    ("grid_points", "256"),
    ("pbs_dt", "1e-5"),
    ("pbs_particles", "1e6"),
    ("pbs_bin_width", "5e-4"),
    ("pbs_t_lo", "5e-4"),
    ("pbs_t_hi", "0.03"),
    ("seed", "1"),
];

/// Unit-suffixed aliases: `(alias, canonical, factor to SI)`.
const ALIASES: &[(&str, &str, f64)] = &[
    ("r_s_um", "r_s", 1e-6),
    ("d_um2_per_s", "d", 1e-12),
    ("kf", "k_f", 1.0),
    ("k_f_um_per_s", "k_f", 1e-6),
    ("kd", "k_d", 1.0),
    ("tx_r_um", "tx_r", 1e-6),
    ("rx_r_um", "rx_r", 1e-6),
    ("rx_radius_um", "rx_radius", 1e-6),
    ("slot_ms", "slot", 1e-3),
    ("memory_duration_ms", "memory_duration", 1e-3),
    ("sampling_time_ms", "sampling_time", 1e-3),
    ("slots_ms", "slots", 1e-3),
    ("t_min_guard_ms", "t_min_guard", 1e-3),
    ("grid_t_lo_ms", "grid_t_lo", 1e-3),
    ("grid_t_hi_ms", "grid_t_hi", 1e-3),
    ("pbs_dt_ms", "pbs_dt", 1e-3),
    ("pbs_bin_width_ms", "pbs_bin_width", 1e-3),
    ("pbs_t_lo_ms", "pbs_t_lo", 1e-3),
    ("pbs_t_hi_ms", "pbs_t_hi", 1e-3),
];

/// Named presets. Figures without a stated receiver radius use the
/// tabulated 1 μm; the BER figure presets use the 0.5 μm given with them.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", ""),
    ("fig2", ""),
    ("fig4", "k_d = 0"),
    ("fig5", "k_d = 0\nrx_radius_um = 0.5"),
];

/// Parses a real number, `inf`, or a multiple of `pi`.
pub fn parse_real(text: &str) -> Result<f64, ConfigError> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let lower = s.to_ascii_lowercase();
    match lower.as_str() {
        "inf" | "+inf" | "infinity" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    if let Some(pos) = lower.find("pi") {
        let (head, tail) = (&lower[..pos], &lower[pos + 2..]);
        let head = head.strip_suffix('*').unwrap_or(head);
        let coef = match head {
            "" | "+" => 1.0,
            "-" => -1.0,
            h => h.parse::<f64>().map_err(|_| ConfigError(format!("bad number '{text}'")))?,
        };
        let div = match tail {
            "" => 1.0,
            t => t
                .strip_prefix('/')
                .and_then(|d| d.parse::<f64>().ok())
                .ok_or_else(|| ConfigError(format!("bad number '{text}'")))?,
        };
        return Ok(coef * PI / div);
    }
    lower.parse::<f64>().map_err(|_| ConfigError(format!("bad number '{text}'")))
}

fn parse_count(key: &str, text: &str) -> Result<u64, ConfigError> {
    let v = parse_real(text)?;
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63)) {
        return err(format!("{key}: expected a non-negative integer, got '{text}'"));
    }
    Ok(v as u64)
}

/// Raw key/value map after alias resolution; values are text in SI units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let mut c = Self::default();
        for (k, v) in KEYS {
            c.values.insert((*k).to_string(), (*v).to_string());
        }
        c
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ConfigError(format!("unknown preset '{name}' (expected fig1, fig2, fig4 or fig5)")))?;
        let mut c = Self::defaults();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one key, converting unit-suffixed aliases to SI.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if let Some((_, canon, factor)) = ALIASES.iter().find(|(a, _, _)| *a == key) {
            let converted = if *factor == 1.0 || is_symbolic(value) {
                value.to_string()
            } else {
                value
                    .split(',')
                    .map(|p| parse_real(p).map(|x| fmt17(x * factor)))
                    .collect::<Result<Vec<_>, _>>()?
                    .join(",")
            };
            self.values.insert((*canon).to_string(), converted);
            return Ok(());
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return err(format!("unknown key '{key}'"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }
}

fn is_symbolic(v: &str) -> bool {
    matches!(v.trim(), "auto" | "peak" | "inf")
}

/// Time grid for PDF curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub points: usize,
}

/// Fully resolved scenario in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `None` for the free-space model.
    pub environment: Option<Environment>,
    pub diffusivity: f64,
    pub degradation: f64,
    pub forward_rate: f64,
    pub tx: SphericalPoint,
    pub rx: ReceiverSpec,
    pub n_molecules: f64,
    pub slot: f64,
    pub memory_duration: f64,
    pub memory: Option<usize>,
    pub sampling_time: Option<f64>,
    pub detector: DetectorMode,
    pub slots: Vec<f64>,
    pub mc_bits: u64,
    pub trunc: TruncationPolicy,
    pub guard_auto: bool,
    pub grid: GridSpec,
    pub pbs: PbsConfig,
}

impl Scenario {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let real = |k: &str| parse_real(raw.get(k)).map_err(|e| ConfigError(format!("{k}: {}", e.0)));
        let auto = |k: &str| -> Result<Option<f64>, ConfigError> {
            match raw.get(k).trim() {
                "auto" | "peak" => Ok(None),
                _ => real(k).map(Some),
            }
        };
        let r_s = real("r_s")?;
        let d = real("d")?;
        let k_d = real("k_d")?;
        let k_f = real("k_f")?;
        let environment = if r_s.is_infinite() {
            None
        } else {
            Some(Environment::new(r_s, d, k_d, k_f).map_err(|e| ConfigError(e.to_string()))?)
        };
        if !(d > 0.0 && d.is_finite()) {
            return err("d: diffusivity must be positive");
        }
        if !(k_d >= 0.0 && k_d.is_finite()) {
            return err("k_d: degradation rate must be non-negative");
        }
        let point = |p: &str| -> Result<SphericalPoint, ConfigError> {
            SphericalPoint::new(real(&format!("{p}_r"))?, real(&format!("{p}_theta"))?, real(&format!("{p}_phi"))?)
                .map_err(|e| ConfigError(format!("{p}: {e}")))
        };
        let tx = point("tx")?;
        let rx = ReceiverSpec::new(point("rx")?, real("rx_radius")?).map_err(|e| ConfigError(e.to_string()))?;
        if let Some(env) = &environment {
            if tx.r > env.radius {
                return err("transmitter lies outside the sphere");
            }
            if !rx.fits_in(env.radius) {
                return err("receiver ball does not fit inside the sphere");
            }
        }
        let detector = match raw.get("detector").trim() {
            "genie" => DetectorMode::Genie,
            "decision_feedback" | "df" => DetectorMode::DecisionFeedback,
            other => return err(format!("detector: expected genie or decision_feedback, got '{other}'")),
        };
        let memory = match raw.get("memory").trim() {
            "auto" => None,
            m => Some(parse_count("memory", m)? as usize),
        };
        let slots = raw
            .get("slots")
            .split(',')
            .map(|s| parse_real(s).map_err(|e| ConfigError(format!("slots: {}", e.0))))
            .collect::<Result<Vec<_>, _>>()?;
        if slots.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return err("slots: every slot duration must be positive");
        }
        let mut trunc = TruncationPolicy {
            n_max: parse_count("n_max", raw.get("n_max"))? as usize,
            k_max: parse_count("k_max", raw.get("k_max"))? as usize,
            rel_tol: real("rel_tol")?,
            t_min_guard: 0.0,
        };
        let guard = auto("t_min_guard")?;
        trunc.t_min_guard = match (guard, &environment) {
            (Some(g), _) => g,
            (None, Some(env)) => TruncationPolicy::for_environment(env).t_min_guard,
            (None, None) => 0.0,
        };
        trunc.validate().map_err(|e| ConfigError(e.to_string()))?;
        let grid = GridSpec {
            t_lo: auto("grid_t_lo")?,
            t_hi: auto("grid_t_hi")?,
            points: parse_count("grid_points", raw.get("grid_points"))? as usize,
        };
        if grid.points == 0 {
            return err("grid_points must be at least 1");
        }
        let pbs = PbsConfig {
            dt: real("pbs_dt")?,
            n_particles: parse_count("pbs_particles", raw.get("pbs_particles"))? as usize,
            seed: parse_count("seed", raw.get("seed"))?,
            bin_width: real("pbs_bin_width")?,
            record_window: (real("pbs_t_lo")?, real("pbs_t_hi")?),
        };
        pbs.validate().map_err(|e| ConfigError(e.to_string()))?;
        let s = Self {
            environment,
            diffusivity: d,
            degradation: k_d,
            forward_rate: k_f,
            tx,
            rx,
            n_molecules: real("n_molecules")?,
            slot: real("slot")?,
            memory_duration: real("memory_duration")?,
            memory,
            sampling_time: auto("sampling_time")?,
            detector,
            slots,
            mc_bits: parse_count("mc_bits", raw.get("mc_bits"))?,
            trunc,
            guard_auto: guard.is_none(),
            grid,
            pbs,
        };
        if !(s.n_molecules >= 0.0 && s.n_molecules.is_finite()) {
            return err("n_molecules must be non-negative");
        }
        if !(s.slot > 0.0 && s.slot.is_finite()) {
            return err("slot must be positive");
        }
        if !(s.memory_duration >= 0.0 && s.memory_duration.is_finite()) {
            return err("memory_duration must be non-negative");
        }
        if let Some(t) = s.sampling_time {
            if !(t > 0.0 && t <= s.slot) {
                return err("sampling_time must lie in (0, slot]");
            }
        }
        Ok(s)
    }

    /// Memory for slot duration `slot`.
    pub fn memory_for(&self, slot: f64) -> usize {
        self.memory.unwrap_or_else(|| memory_from_duration(self.memory_duration, slot))
    }

    pub fn is_bounded(&self) -> bool {
        self.environment.is_some()
    }

    /// Resolved scenario as canonical SI `key = value` lines.
    pub fn emit(&self) -> String {
        let f = |x: f64| fmt17(x);
        let opt = |x: Option<f64>, none: &str| x.map(fmt17).unwrap_or_else(|| none.to_string());
        let r_s = self.environment.map(|e| e.radius).unwrap_or(f64::INFINITY);
        let lines: Vec<(&str, String)> = vec![
            ("r_s", f(r_s)),
            ("d", f(self.diffusivity)),
            ("k_d", f(self.degradation)),
            ("k_f", f(self.forward_rate)),
            ("tx_r", f(self.tx.r)),
            ("tx_theta", f(self.tx.theta)),
            ("tx_phi", f(self.tx.phi)),
            ("rx_r", f(self.rx.center.r)),
            ("rx_theta", f(self.rx.center.theta)),
            ("rx_phi", f(self.rx.center.phi)),
            ("rx_radius", f(self.rx.radius)),
            ("n_molecules", f(self.n_molecules)),
            ("slot", f(self.slot)),
            ("memory_duration", f(self.memory_duration)),
            ("memory", self.memory.map(|m| m.to_string()).unwrap_or_else(|| "auto".into())),
            ("sampling_time", opt(self.sampling_time, "peak")),
            ("detector", self.detector.label().to_string()),
            ("slots", self.slots.iter().map(|s| fmt17(*s)).collect::<Vec<_>>().join(",")),
            ("mc_bits", self.mc_bits.to_string()),
            ("n_max", self.trunc.n_max.to_string()),
            ("k_max", self.trunc.k_max.to_string()),
            ("rel_tol", f(self.trunc.rel_tol)),
            (
                "t_min_guard",
                if self.guard_auto { "auto".into() } else { f(self.trunc.t_min_guard) },
            ),
            ("grid_t_lo", opt(self.grid.t_lo, "auto")),
            ("grid_t_hi", opt(self.grid.t_hi, "auto")),
            ("grid_points", self.grid.points.to_string()),
            ("pbs_dt", f(self.pbs.dt)),
            ("pbs_particles", self.pbs.n_particles.to_string()),
            ("pbs_bin_width", f(self.pbs.bin_width)),
            ("pbs_t_lo", f(self.pbs.record_window.0)),
            ("pbs_t_hi", f(self.pbs.record_window.1)),
            ("seed", self.pbs.seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Short content hash of the resolved scenario.
    pub fn hash(&self) -> String {
        sha256_prefix(&self.emit())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_and_infinities() {
        assert_eq!(parse_real("pi").unwrap(), PI);
        assert_eq!(parse_real("pi/2").unwrap(), PI / 2.0);
        assert_eq!(parse_real("3*pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_real("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_real("-pi/4").unwrap(), -PI / 4.0);
        assert_eq!(parse_real("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_real(" 1e-6 ").unwrap(), 1e-6);
        assert!(parse_real("pie").is_err());
        assert!(parse_real("abc").is_err());
    }

    #[test]
    fn unit_suffixes_convert_to_si() {
        let mut raw = RawConfig::defaults();
        raw.apply_text("r_s_um = 6\nk_f_um_per_s = 100 # partial\nslots_ms = 20, 40\nkf_dummy_ignored_line_is_error = 1")
            .unwrap_err();
        let mut raw = RawConfig::defaults();
        raw.apply_text("r_s_um = 6\nk_f_um_per_s = 100\nslots_ms = 20, 40").unwrap();
        let s = Scenario::from_raw(&raw).unwrap();
        assert!((s.environment.unwrap().radius - 6e-6).abs() < 1e-21);
        assert!((s.forward_rate - 1e-4).abs() < 1e-19);
        assert_eq!(s.slots.len(), 2);
        assert!((s.slots[1] - 0.04).abs() < 1e-17);
    }

    #[test]
    fn kf_inf_is_absorbing() {
        let mut raw = RawConfig::defaults();
        raw.set("kf", "inf").unwrap();
        let s = Scenario::from_raw(&raw).unwrap();
        assert!(s.environment.unwrap().is_absorbing());
    }

    #[test]
    fn unbounded_radius() {
        let mut raw = RawConfig::defaults();
        raw.set("r_s_um", "inf").unwrap();
        let s = Scenario::from_raw(&raw).unwrap();
        assert!(!s.is_bounded());
        assert_eq!(s.trunc.t_min_guard, 0.0);
    }

    #[test]
    fn emit_round_trip_is_idempotent() {
        for (name, _) in PRESETS {
            let s = Scenario::from_raw(&RawConfig::preset(name).unwrap()).unwrap();
            let text = s.emit();
            let mut raw = RawConfig::defaults();
            raw.apply_text(&text).unwrap();
            let again = Scenario::from_raw(&raw).unwrap();
            assert_eq!(again.emit(), text);
            assert_eq!(again, s);
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (k, v) in [
            ("rx_radius_um", "2"),
            ("tx_r_um", "6"),
            ("detector", "oracle"),
            ("pbs_particles", "1.5"),
            ("slot", "0"),
        ] {
            let mut raw = RawConfig::defaults();
            raw.set(k, v).unwrap();
            assert!(Scenario::from_raw(&raw).is_err(), "{k} = {v}");
        }
        assert!(RawConfig::defaults().set("nonsense", "1").is_err());
        assert!(RawConfig::preset("fig3").is_err());
    }

    #[test]
    fn preset_receiver_radii() {
        let r = |p: &str| Scenario::from_raw(&RawConfig::preset(p).unwrap()).unwrap().rx.radius;
        assert_eq!(r("fig1"), 1e-6);
        assert_eq!(r("fig5"), 0.5e-6);
    }
}
