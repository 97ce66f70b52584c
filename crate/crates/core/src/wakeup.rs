//! Discrete-event power simulation of a stored battery pack whose controller
//! sleeps between NFC readouts.
//!
//! Two wake-up designs are modeled:
//!
//! * **ED** (event detection): the tag stays in standby, powered by the pack
//!   controller; an RF field raises the tag's event pin which wakes the
//!   controller.
//! * **EH** (energy harvesting): the tag is unpowered while idle and boots from
//!   the reader's field; once awake, the controller supplies the tag for the
//!   rest of the session.
//!
//! A readout occupies `[start, start + session_length)`; the first
//! wake-latency of it is spent waking, the remainder in the active session.
//! All arithmetic is integer: millivolts, nanoamps, microseconds, picowatts,
//! attojoules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const US_PER_S: f64 = 1e6;
const US_PER_DAY: f64 = 86_400e6;
const AJ_PER_UJ: f64 = 1e12;
const PW_PER_UW: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid power model: {0}")]
    InvalidModel(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("readouts {first} and {second} overlap")]
    OverlappingSessions { first: usize, second: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ED", alias = "ed")]
    Ed,
    #[serde(rename = "EH", alias = "eh")]
    Eh,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Ed, Method::Eh];
}

/// Component currents and latencies. Only the supply voltage and the two idle
/// currents are measured values; active currents and latencies are
/// placeholders and meant to be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub supply_voltage_v: f64,
    pub bpc_vlps_current_ua: f64,
    pub bpc_active_current_ma: f64,
    pub ntag_standby_current_ua: f64,
    pub ntag_active_current_ma: f64,
    pub ed_wakeup_latency_ms: f64,
    pub eh_wakeup_latency_ms: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            supply_voltage_v: 3.3,
            bpc_vlps_current_ua: 29.8,
            bpc_active_current_ma: 40.0,
            ntag_standby_current_ua: 5.9,
            ntag_active_current_ma: 10.0,
            ed_wakeup_latency_ms: 5.0,
            eh_wakeup_latency_ms: 50.0,
        }
    }
}

/// Integer view of a validated [`PowerModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizedModel {
    pub voltage_mv: u64,
    pub bpc_vlps_na: u64,
    pub bpc_active_na: u64,
    pub ntag_standby_na: u64,
    pub ntag_active_na: u64,
    pub ed_latency_us: u64,
    pub eh_latency_us: u64,
}

fn quantize(value: f64, scale: f64, name: &str) -> Result<u64, SimError> {
    let q = (value * scale).round();
    if !q.is_finite() || q < 1.0 || q > u32::MAX as f64 {
        return Err(SimError::InvalidModel(format!(
            "{name} = {value} is not a positive value in range"
        )));
    }
    Ok(q as u64)
}

impl PowerModel {
    pub fn quantize(&self) -> Result<QuantizedModel, SimError> {
        let q = QuantizedModel {
            voltage_mv: quantize(self.supply_voltage_v, 1e3, "supply_voltage_v")?,
            bpc_vlps_na: quantize(self.bpc_vlps_current_ua, 1e3, "bpc_vlps_current_ua")?,
            bpc_active_na: quantize(self.bpc_active_current_ma, 1e6, "bpc_active_current_ma")?,
            ntag_standby_na: quantize(
                self.ntag_standby_current_ua,
                1e3,
                "ntag_standby_current_ua",
            )?,
            ntag_active_na: quantize(self.ntag_active_current_ma, 1e6, "ntag_active_current_ma")?,
            ed_latency_us: quantize(self.ed_wakeup_latency_ms, 1e3, "ed_wakeup_latency_ms")?,
            eh_latency_us: quantize(self.eh_wakeup_latency_ms, 1e3, "eh_wakeup_latency_ms")?,
        };
        if q.eh_latency_us < q.ed_latency_us {
            return Err(SimError::InvalidModel(
                "EH wake-up latency must not be shorter than ED latency".into(),
            ));
        }
        if q.bpc_active_na < q.bpc_vlps_na || q.ntag_active_na < q.ntag_standby_na {
            return Err(SimError::InvalidModel(
                "active currents must not be below the corresponding idle currents".into(),
            ));
        }
        Ok(q)
    }
}

impl QuantizedModel {
    fn power_pw(&self, current_na: u64) -> u64 {
        self.voltage_mv * current_na
    }

    pub fn idle_power_pw(&self, method: Method) -> u64 {
        match method {
            Method::Ed => self.power_pw(self.bpc_vlps_na + self.ntag_standby_na),
            Method::Eh => self.power_pw(self.bpc_vlps_na),
        }
    }

    pub fn latency_us(&self, method: Method) -> u64 {
        match method {
            Method::Ed => self.ed_latency_us,
            Method::Eh => self.eh_latency_us,
        }
    }

    pub fn state_power_pw(&self, state: PowerState) -> u64 {
        match state {
            PowerState::StandbyVlps | PowerState::EdPinWake => self.idle_power_pw(Method::Ed),
            // While harvesting, the tag runs off the field; the battery only
            // feeds the sleeping controller.
            PowerState::NtagOffVlps | PowerState::HarvestBoot => self.idle_power_pw(Method::Eh),
            PowerState::ActiveSession => self.power_pw(self.bpc_active_na + self.ntag_active_na),
            PowerState::AlwaysOnIdle => self.power_pw(self.bpc_active_na + self.ntag_standby_na),
        }
    }
}

/// Idle power in microwatts.
pub fn idle_power(model: &PowerModel, method: Method) -> Result<f64, SimError> {
    Ok(model.quantize()?.idle_power_pw(method) as f64 / PW_PER_UW)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    /// ED idle: controller in VLPS, tag in standby.
    StandbyVlps,
    /// ED: field detected, event pin asserted, controller waking.
    EdPinWake,
    /// EH idle: controller in VLPS, tag unpowered.
    NtagOffVlps,
    /// EH: tag booted from harvested energy, controller waking.
    HarvestBoot,
    /// Controller running and supplying the tag.
    ActiveSession,
    /// Baseline without any sleep mode.
    AlwaysOnIdle,
}

impl PowerState {
    pub fn idle_state(method: Method) -> Self {
        match method {
            Method::Ed => Self::StandbyVlps,
            Method::Eh => Self::NtagOffVlps,
        }
    }

    pub fn wake_state(method: Method) -> Self {
        match method {
            Method::Ed => Self::EdPinWake,
            Method::Eh => Self::HarvestBoot,
        }
    }

    pub fn is_idle(self) -> bool {
        matches!(
            self,
            Self::StandbyVlps | Self::NtagOffVlps | Self::AlwaysOnIdle
        )
    }
}

/// Edges of the wake-up flowchart for `method`.
pub fn is_valid_transition(method: Method, from: PowerState, to: PowerState) -> bool {
    let idle = PowerState::idle_state(method);
    let wake = PowerState::wake_state(method);
    (from == idle && to == wake)
        || (from == wake && to == PowerState::ActiveSession)
        || (from == PowerState::ActiveSession && to == idle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub start_time_s: f64,
    pub session_length_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageScenario {
    pub duration_days: f64,
    #[serde(default)]
    pub readouts: Vec<Readout>,
}

impl StorageScenario {
    pub fn idle(days: f64) -> Self {
        Self {
            duration_days: days,
            readouts: Vec::new(),
        }
    }

    /// One session of `session_s` seconds per day, starting at noon.
    pub fn daily(days: u32, session_s: f64) -> Self {
        Self {
            duration_days: days as f64,
            readouts: (0..days)
                .map(|d| Readout {
                    start_time_s: d as f64 * 86_400.0 + 43_200.0,
                    session_length_s: session_s,
                })
                .collect(),
        }
    }
}

/// A readout window in microseconds, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    start: u64,
    end: u64,
}

fn to_us(seconds: f64, what: &str) -> Result<u64, SimError> {
    let us = (seconds * US_PER_S).round();
    if !us.is_finite() || us < 0.0 || us > u64::MAX as f64 / 2.0 {
        return Err(SimError::InvalidScenario(format!("{what} = {seconds} s")));
    }
    Ok(us as u64)
}

fn validate_scenario(scenario: &StorageScenario) -> Result<(u64, Vec<Window>), SimError> {
    let duration = (scenario.duration_days * US_PER_DAY).round();
    if !duration.is_finite() || duration < 1.0 || duration > u64::MAX as f64 / 2.0 {
        return Err(SimError::InvalidScenario(format!(
            "duration_days = {}",
            scenario.duration_days
        )));
    }
    let duration = duration as u64;
    let mut windows = Vec::with_capacity(scenario.readouts.len());
    for (i, r) in scenario.readouts.iter().enumerate() {
        let start = to_us(r.start_time_s, "start_time_s")?;
        let len = to_us(r.session_length_s, "session_length_s")?;
        if len == 0 {
            return Err(SimError::InvalidScenario(format!(
                "readout {i} has zero length"
            )));
        }
        if start + len > duration {
            return Err(SimError::InvalidScenario(format!(
                "readout {i} ends after the storage period"
            )));
        }
        windows.push((
            i,
            Window {
                start,
                end: start + len,
            },
        ));
    }
    windows.sort_by_key(|(_, w)| w.start);
    for pair in windows.windows(2) {
        let ((a, wa), (b, wb)) = (pair[0], pair[1]);
        if wb.start < wa.end {
            return Err(SimError::OverlappingSessions {
                first: a.min(b),
                second: a.max(b),
            });
        }
    }
    Ok((duration, windows.into_iter().map(|(_, w)| w).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time_us: u64,
    pub state: PowerState,
    pub power_uw: f64,
    #[serde(skip)]
    pub power_pw: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WakeupTrace {
    pub method: Method,
    pub duration_us: u64,
    pub events: Vec<TraceEvent>,
    pub idle_energy_uj: f64,
    pub active_energy_uj: f64,
    pub avg_power_uw: f64,
    #[serde(skip)]
    pub idle_energy_aj: u128,
    #[serde(skip)]
    pub active_energy_aj: u128,
}

impl WakeupTrace {
    pub fn total_energy_aj(&self) -> u128 {
        self.idle_energy_aj + self.active_energy_aj
    }

    pub fn total_energy_uj(&self) -> f64 {
        self.total_energy_aj() as f64 / AJ_PER_UJ
    }
}

fn integrate(method: Method, duration_us: u64, events: Vec<(u64, PowerState, u64)>) -> WakeupTrace {
    let mut idle = 0u128;
    let mut active = 0u128;
    for (i, &(t, state, p)) in events.iter().enumerate() {
        let end = events.get(i + 1).map_or(duration_us, |e| e.0);
        let e = p as u128 * (end - t) as u128;
        if state.is_idle() {
            idle += e;
        } else {
            active += e;
        }
    }
    let total = idle + active;
    WakeupTrace {
        method,
        duration_us,
        events: events
            .into_iter()
            .map(|(time_us, state, power_pw)| TraceEvent {
                time_us,
                state,
                power_uw: power_pw as f64 / PW_PER_UW,
                power_pw,
            })
            .collect(),
        idle_energy_uj: idle as f64 / AJ_PER_UJ,
        active_energy_uj: active as f64 / AJ_PER_UJ,
        avg_power_uw: total as f64 / duration_us as f64 / PW_PER_UW,
        idle_energy_aj: idle,
        active_energy_aj: active,
    }
}

/// Runs the storage period for one wake-up method.
pub fn simulate(
    model: &PowerModel,
    scenario: &StorageScenario,
    method: Method,
) -> Result<WakeupTrace, SimError> {
    let q = model.quantize()?;
    let (duration, windows) = validate_scenario(scenario)?;
    let latency = q.latency_us(method);
    let idle = PowerState::idle_state(method);
    let wake = PowerState::wake_state(method);

    let mut events = vec![(0u64, idle, q.state_power_pw(idle))];
    for (i, w) in windows.iter().enumerate() {
        if w.end - w.start <= latency {
            return Err(SimError::InvalidScenario(format!(
                "readout {i} is not longer than the {method:?} wake-up latency"
            )));
        }
        // A readout at t = 0 replaces the initial idle segment.
        if w.start == 0 {
            events.clear();
        }
        events.push((w.start, wake, q.state_power_pw(wake)));
        events.push((
            w.start + latency,
            PowerState::ActiveSession,
            q.state_power_pw(PowerState::ActiveSession),
        ));
        events.push((w.end, idle, q.state_power_pw(idle)));
    }
    Ok(integrate(method, duration, events))
}

/// Baseline with the controller kept running for the whole period.
pub fn simulate_always_on(
    model: &PowerModel,
    scenario: &StorageScenario,
) -> Result<WakeupTrace, SimError> {
    let q = model.quantize()?;
    let (duration, windows) = validate_scenario(scenario)?;
    let idle = PowerState::AlwaysOnIdle;
    let mut events = vec![(0u64, idle, q.state_power_pw(idle))];
    for w in &windows {
        if w.start == 0 {
            events.clear();
        }
        events.push((
            w.start,
            PowerState::ActiveSession,
            q.state_power_pw(PowerState::ActiveSession),
        ));
        events.push((w.end, idle, q.state_power_pw(idle)));
    }
    // The baseline has no wake-up method; tag it ED since the tag stays powered.
    Ok(integrate(Method::Ed, duration, events))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Ranking {
    Ed,
    Eh,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub idle_power_uw: f64,
    pub avg_power_uw: f64,
    pub total_energy_uj: f64,
    pub wakeup_latency_ms: f64,
    pub prerequisites: &'static str,
    pub pros: Vec<&'static str>,
    pub cons: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub duration_days: f64,
    pub session_seconds: f64,
    pub ed: MethodSummary,
    pub eh: MethodSummary,
    pub always_on_avg_power_uw: f64,
    pub power_winner: Ranking,
    pub latency_winner: Ranking,
}

fn notes(method: Method) -> (&'static str, Vec<&'static str>, Vec<&'static str>) {
    match method {
        Method::Ed => (
            "tag exposes an event pin and stays supplied by the controller",
            vec!["shorter wake-up"],
            vec!["tag needs a permanent supply", "higher idle draw"],
        ),
        Method::Eh => (
            "tag configured for harvesting; reader must support it",
            vec![
                "tag unpowered while idle",
                "controller supplies the tag once awake",
            ],
            vec!["longer wake-up"],
        ),
    }
}

fn rank(ed: u128, eh: u128) -> Ranking {
    match ed.cmp(&eh) {
        std::cmp::Ordering::Less => Ranking::Ed,
        std::cmp::Ordering::Greater => Ranking::Eh,
        std::cmp::Ordering::Equal => Ranking::Tie,
    }
}

/// Simulates both methods plus the always-on baseline and ranks the methods
/// by average power and by wake-up latency.
pub fn compare_methods(
    model: &PowerModel,
    scenario: &StorageScenario,
) -> Result<MethodComparison, SimError> {
    let q = model.quantize()?;
    let summary = |method| -> Result<(MethodSummary, u128), SimError> {
        let trace = simulate(model, scenario, method)?;
        let (prerequisites, pros, cons) = notes(method);
        Ok((
            MethodSummary {
                method,
                idle_power_uw: q.idle_power_pw(method) as f64 / PW_PER_UW,
                avg_power_uw: trace.avg_power_uw,
                total_energy_uj: trace.total_energy_uj(),
                wakeup_latency_ms: q.latency_us(method) as f64 / 1e3,
                prerequisites,
                pros,
                cons,
            },
            trace.total_energy_aj(),
        ))
    };
    let (ed, ed_energy) = summary(Method::Ed)?;
    let (eh, eh_energy) = summary(Method::Eh)?;
    let baseline = simulate_always_on(model, scenario)?;
    Ok(MethodComparison {
        duration_days: scenario.duration_days,
        session_seconds: scenario.readouts.iter().map(|r| r.session_length_s).sum(),
        ed,
        eh,
        always_on_avg_power_uw: baseline.avg_power_uw,
        power_winner: rank(ed_energy, eh_energy),
        latency_winner: rank(q.ed_latency_us as u128, q.eh_latency_us as u128),
    })
}
