use std::fmt::Write as _;

use sphere_dmc::channel::{log_grid, ChannelError, ObsProbability};
use sphere_dmc::csv::fmt17;
use sphere_dmc::eigen::EigenError;
use sphere_dmc::ook::{self, BerRow, DetectorMode, IsiProfile, LinkConfig, OokError, MAX_ENUMERATION_MEMORY};
use sphere_dmc::pbs::{self, PbsError, PbsEstimate, Validity};
use sphere_dmc::{Channel, EigenvalueTable, Execution, Propagation};

use crate::scenario::Scenario;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Validity(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Validity(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Validity(m) | CliError::Io(m) => m,
        }
    }
}

impl From<EigenError> for CliError {
    fn from(e: EigenError) -> Self {
        match e {
            EigenError::InvalidEnvironment(_) | EigenError::Cache(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::InvalidReceiver(_) | ChannelError::InvalidWindow(_) => CliError::Config(e.to_string()),
            ChannelError::Cgf(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<PbsError> for CliError {
    fn from(e: PbsError) -> Self {
        match e {
            PbsError::Validity { .. } => CliError::Validity(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// What to compute in a BER sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BerMethod {
    Analytic,
    MonteCarlo,
    Both,
}

/// Scenario plus its eigenvalue table, if bounded.
pub struct Model<'s> {
    pub scenario: &'s Scenario,
    table: Option<EigenvalueTable>,
    exec: Execution,
}

impl<'s> Model<'s> {
    pub fn new(scenario: &'s Scenario, exec: Execution) -> Result<Self, CliError> {
        let table = match &scenario.environment {
            Some(env) => Some(EigenvalueTable::build(env, scenario.trunc.n_max, scenario.trunc.k_max, exec)?),
            None => None,
        };
        Ok(Self { scenario, table, exec })
    }

    pub fn channel(&self) -> Result<Channel<'_>, CliError> {
        let s = self.scenario;
        let prop = match (&s.environment, &self.table) {
            (Some(env), Some(table)) => Propagation::Bounded { env, table, trunc: &s.trunc },
            _ => Propagation::Unbounded {
                diffusivity: s.diffusivity,
                degradation: s.degradation,
            },
        };
        Ok(Channel::new(prop, s.tx, s.rx)?.with_execution(self.exec))
    }

    fn header(&self) -> Vec<(String, String)> {
        vec![("scenario_hash".into(), self.scenario.hash())]
    }
}

fn header_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

pub fn cmd_eigen(scenario: &Scenario, exec: Execution) -> Result<String, CliError> {
    let env = scenario
        .environment
        .as_ref()
        .ok_or_else(|| CliError::Config("eigen needs a bounded sphere (r_s is infinite)".into()))?;
    let table = EigenvalueTable::build(env, scenario.trunc.n_max, scenario.trunc.k_max, exec)?;
    Ok(format!("# scenario_hash={}\n{}", scenario.hash(), table.to_csv()))
}

/// Lower end of the default time grids.
fn grid_floor(s: &Scenario) -> f64 {
    if s.is_bounded() {
        s.trunc.t_min_guard.max(1e-7)
    } else {
        1e-5 * s.slot
    }
}

pub fn pdf_grid(s: &Scenario) -> Result<Vec<f64>, CliError> {
    let lo = s.grid.t_lo.unwrap_or_else(|| grid_floor(s));
    let hi = s.grid.t_hi.unwrap_or(5.0 * s.slot);
    if !(lo > 0.0 && (hi > lo || s.grid.points == 1) && hi.is_finite()) {
        return Err(CliError::Config(format!("invalid grid ({lo}, {hi})")));
    }
    Ok(log_grid(lo, hi, s.grid.points))
}

pub fn cmd_pdf(scenario: &Scenario, exact: bool, exec: Execution) -> Result<String, CliError> {
    let model = Model::new(scenario, exec)?;
    let ch = model.channel()?;
    let grid = pdf_grid(scenario)?;
    let approx = ch.approx_curve(&grid)?;
    let ex = if exact { Some(ch.exact_curve(&grid)?) } else { None };
    let mut head = model.header();
    head.push(("model".into(), if scenario.is_bounded() { "bounded" } else { "unbounded" }.into()));
    head.push(("peak_time".into(), fmt17(approx.peak_time)));
    head.push(("peak_value".into(), fmt17(approx.peak_value)));
    let mut out = header_text(&head);
    out.push_str(if exact {
        "t_s,p_obs_analytic,p_obs_exact,converged\n"
    } else {
        "t_s,p_obs_analytic,converged\n"
    });
    for (i, t) in grid.iter().enumerate() {
        let mut ok = approx.converged[i];
        let _ = write!(out, "{},{}", fmt17(*t), fmt17(approx.values[i]));
        if let Some(e) = &ex {
            ok &= e[i].converged;
            let _ = write!(out, ",{}", fmt17(e[i].value));
        }
        let _ = writeln!(out, ",{}", u8::from(ok));
    }
    Ok(out)
}

/// One slot duration of a BER sweep.
fn ber_row(
    model: &Model<'_>,
    ch: &Channel<'_>,
    slot: f64,
    method: BerMethod,
    seed: u64,
    notes: &mut Vec<String>,
) -> Result<BerRow, CliError> {
    let s = model.scenario;
    let memory = s.memory_for(slot);
    let mut row = BerRow {
        slot,
        memory,
        ber_analytic: None,
        ber_mc: None,
        mc_ci95: None,
    };
    let t_s = match s.sampling_time {
        Some(t) if t <= slot => t,
        Some(t) => {
            notes.push(format!("T0={}: sampling time {} exceeds the slot", fmt17(slot), fmt17(t)));
            return Ok(row);
        }
        None => {
            let guard = ch.propagation().guard();
            if guard >= slot {
                notes.push(format!("T0={}: slot ends before the small-time guard", fmt17(slot)));
                return Ok(row);
            }
            ch.find_peak_time((1e-6 * slot, slot))?.time
        }
    };
    let link = LinkConfig {
        n_molecules: s.n_molecules,
        slot,
        memory,
        sampling_time: t_s,
        mode: s.detector,
    };
    let kernel = ch.approx_kernel(t_s)?;
    let mut unconverged = 0;
    let mut p = Vec::with_capacity(memory + 1);
    for t in link.sample_times() {
        let ObsProbability { value, converged } = kernel.eval(t)?;
        unconverged += usize::from(!converged);
        p.push(value);
    }
    if unconverged > 0 {
        notes.push(format!("T0={}: {unconverged} profile values not converged", fmt17(slot)));
    }
    notes.push(format!("T0={}: t_s={}", fmt17(slot), fmt17(t_s)));
    let profile = IsiProfile::new(p);
    if method != BerMethod::MonteCarlo {
        if memory > MAX_ENUMERATION_MEMORY {
            notes.push(format!("T0={}: {}", fmt17(slot), OokError::EnumerationTooLarge { m: memory }));
        } else {
            match ook::analytic_ber(&link, &profile, model.exec) {
                Ok(r) => row.ber_analytic = Some(r.ber),
                Err(e) => notes.push(format!("T0={}: {e}", fmt17(slot))),
            }
        }
    }
    if method != BerMethod::Analytic {
        match ook::monte_carlo(&link, &profile, s.mc_bits, seed, model.exec) {
            Ok(mc) => {
                row.ber_mc = Some(mc.ber(s.detector));
                row.mc_ci95 = Some(mc.ci95(s.detector));
            }
            Err(e) => notes.push(format!("T0={}: {e}", fmt17(slot))),
        }
    }
    Ok(row)
}

pub fn cmd_ber(scenario: &Scenario, method: BerMethod, exec: Execution) -> Result<String, CliError> {
    let model = Model::new(scenario, exec)?;
    let ch = model.channel()?;
    let mut notes = Vec::new();
    let mut rows = Vec::with_capacity(scenario.slots.len());
    for &slot in &scenario.slots {
        rows.push(ber_row(&model, &ch, slot, method, scenario.pbs.seed, &mut notes)?);
    }
    let mut head = model.header();
    head.push(("detector".into(), scenario.detector.label().into()));
    if scenario.detector == DetectorMode::DecisionFeedback {
        head.push((
            "note".into(),
            "ber_analytic is genie-aided; decision_feedback (extension) is Monte Carlo only".into(),
        ));
    }
    head.push(("seed".into(), scenario.pbs.seed.to_string()));
    let mut out = String::new();
    for n in &notes {
        let _ = writeln!(out, "# {n}");
    }
    out.push_str(&ook::ber_csv(&rows, &[]));
    Ok(header_text(&head) + &out)
}

fn run_pbs(scenario: &Scenario, exec: Execution) -> Result<PbsEstimate, CliError> {
    let env = scenario
        .environment
        .as_ref()
        .ok_or_else(|| CliError::Config("the particle simulator needs a bounded sphere".into()))?;
    if let Validity::Warning(r) = pbs::check_validity(env, scenario.pbs.dt)? {
        eprintln!("warning: binding probability per step {r:.4} exceeds {}", pbs::VALIDITY_WARNING);
    }
    Ok(pbs::estimate_p_obs(&scenario.tx, &scenario.rx, env, &scenario.pbs, exec)?)
}

pub fn cmd_pbs(scenario: &Scenario, exec: Execution) -> Result<String, CliError> {
    let est = run_pbs(scenario, exec)?;
    let head = vec![
        ("scenario_hash".to_string(), scenario.hash()),
        ("seed".to_string(), scenario.pbs.seed.to_string()),
        ("n_particles".to_string(), est.n_particles.to_string()),
    ];
    Ok(est.to_csv(&head))
}

pub fn cmd_compare(scenario: &Scenario, exec: Execution) -> Result<String, CliError> {
    let est = run_pbs(scenario, exec)?;
    if est.times.is_empty() {
        return Err(CliError::Config("the recording window contains no bin".into()));
    }
    let model = Model::new(scenario, exec)?;
    let exact = model.channel()?.exact_curve(&est.times)?;
    let values: Vec<f64> = exact.iter().map(|v| v.value).collect();
    let a = pbs::agreement(&values, &est);
    let mut head = model.header();
    head.push(("seed".into(), scenario.pbs.seed.to_string()));
    head.push(("n_particles".into(), est.n_particles.to_string()));
    head.push(("validity_ratio".into(), fmt17(est.validity.ratio())));
    head.push(("peak_rel_dev".into(), fmt17(a.peak_rel_dev)));
    head.push(("fraction_inside_ci".into(), fmt17(a.fraction_inside_ci)));
    let mut out = header_text(&head);
    out.push_str("t_s,p_obs_exact,p_hat,ci_lo,ci_hi,inside_ci,converged\n");
    for (i, ((t, p), (lo, hi))) in est.times.iter().zip(est.p_hat()).zip(est.intervals()).enumerate() {
        let inside = lo <= values[i] && values[i] <= hi;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt17(*t),
            fmt17(values[i]),
            fmt17(p),
            fmt17(lo),
            fmt17(hi),
            u8::from(inside),
            u8::from(exact[i].converged)
        );
    }
    eprintln!(
        "peak_rel_dev = {:.4}, fraction_inside_ci = {:.3}",
        a.peak_rel_dev, a.fraction_inside_ci
    );
    Ok(out)
}
