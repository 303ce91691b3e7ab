//! Declarative run configuration: a strict, documented TOML schema that
//! fully describes an apparatus and the experiments to run on it.
//!
//! Parsing is strict — unknown keys are errors, because a silently ignored
//! typo in a default is the main reproducibility hazard. Loading applies
//! all defaults and returns a *resolved* configuration in which every
//! optional quantity is concrete; `load_config(serialize(resolved))`
//! round-trips to an identical value.
//!
//! Schema sketch (all frequencies in Hz):
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//! pressures = [1e-4, 1e-3, 1e-2]        # sweep commands
//!
//! [environment]
//! pressure_mbar = 1e-3
//! t_bath = 295.0
//!
//! [[modes]]
//! label = "alpha"
//! inertia = 1e-30                        # kg m²
//! frequency = 330.4e3                    # Hz
//! gamma_ref = 2e4                        # 1/s at p_ref
//! p_ref = 1.0                            # mbar
//! calibration = 1.0                      # V/rad (optional, default 1)
//! s_ba = 0.0                             # N² m² / Hz (optional)
//! s_imp_exp = 1e-14                      # V²/Hz (optional)
//!
//! [[channels]]
//! mode = "alpha"
//! gain = 2.4e-3
//! phase_psi = 0.0                        # rad (optional)
//! enabled = true                         # optional
//! loop_bandwidth = 3304.0                # Hz (optional, default f/100)
//! capture_range = 33040.0                # Hz (optional, default f/10)
//!
//! [[schedule]]                           # optional actuation windows
//! t_start = 0.02
//! t_end = 0.025
//! modes = ["alpha"]
//! on = false
//!
//! [sim]                                  # every key optional
//! dt = 6.05e-8
//! duration = 0.05
//! sample_rate_out = 2e6
//! modulation_depth_limit = 0.01
//! runaway_bound = 0.5
//! record_torque = false
//!
//! [reheat]      # optional, see ReheatConfig
//! [sweep]       # optional, see SweepConfig
//! [calibration] # optional
//! [psd]         # optional
//! [tune]        # optional
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::WindowKind;
use crate::dynamics::{default_runaway_bound, SimConfig};
use crate::error::{Error, Result};
use crate::experiments::{CalibrationConfig, ChannelSpec, ReheatConfig, Setup, SweepConfig};
use crate::feedback::{PllConfig, Schedule, ScheduleWindow};
use crate::physics::{Environment, ModeParams};

/// One oscillator as declared in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCfg {
    pub label: String,
    /// Moment of inertia, kg·m².
    pub inertia: f64,
    /// Eigenfrequency, Hz.
    pub frequency: f64,
    /// Gas damping at the reference pressure, 1/s.
    pub gamma_ref: f64,
    /// Reference pressure, mbar.
    pub p_ref: f64,
    /// Detector calibration, V/rad.
    #[serde(default = "one")]
    pub calibration: f64,
    /// Backaction torque PSD, N²·m²/Hz.
    #[serde(default)]
    pub s_ba: f64,
    /// Detector imprecision floor, V²/Hz.
    #[serde(default)]
    pub s_imp_exp: f64,
}

fn one() -> f64 {
    1.0
}

impl ModeCfg {
    fn to_mode(&self) -> ModeParams {
        ModeParams {
            label: self.label.clone(),
            inertia: self.inertia,
            omega0: std::f64::consts::TAU * self.frequency,
            gamma_ref: self.gamma_ref,
            p_ref: self.p_ref,
            calibration: self.calibration,
        }
    }
}

/// One feedback channel, referencing its mode by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCfg {
    pub mode: String,
    pub gain: f64,
    #[serde(default)]
    pub phase_psi: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// PLL loop bandwidth, Hz; default frequency/100.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_bandwidth: Option<f64>,
    /// PLL capture range, Hz; default frequency/10.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_range: Option<f64>,
}

fn yes() -> bool {
    true
}

/// One actuation window, referencing the affected channels by mode label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowCfg {
    pub t_start: f64,
    pub t_end: f64,
    pub modes: Vec<String>,
    #[serde(default)]
    pub on: bool,
}

/// Integrator section; every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimCfg {
    /// Internal step, s; default 50 steps per period of the fastest mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Simulated span, s; default 0.05.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Output rate, Hz; default 5× the fastest mode frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulation_depth_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runaway_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_torque: Option<bool>,
}

/// Calibration-run section; every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationCfg {
    /// Calibration pressure, mbar; default: the environment pressure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pressure_mbar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_half: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_side: Option<f64>,
}

/// Spectral-estimation section for the `psd` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdCfg {
    pub segment_length: usize,
    pub overlap: f64,
    /// "hann", "hamming", or "rect".
    pub window: String,
}

impl Default for PsdCfg {
    fn default() -> Self {
        PsdCfg { segment_length: 8192, overlap: 0.5, window: "hann".into() }
    }
}

impl PsdCfg {
    pub fn window_kind(&self) -> Result<WindowKind> {
        WindowKind::parse(&self.window)
            .map_err(|e| Error::config("psd.window", e.to_string()))
    }
}

/// Feedback-phase auto-tune section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneCfg {
    /// Run the ψ scan before steady-state measurements.
    pub auto: bool,
    pub points: usize,
    pub settle_time: f64,
    pub measure_time: f64,
}

impl Default for TuneCfg {
    fn default() -> Self {
        TuneCfg { auto: false, points: 8, settle_time: 5.0e-3, measure_time: 5.0e-3 }
    }
}

/// Full declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: String,
    /// Pressure list for sweep commands, mbar.
    #[serde(default)]
    pub pressures: Vec<f64>,
    pub environment: Environment,
    pub modes: Vec<ModeCfg>,
    #[serde(default)]
    pub channels: Vec<ChannelCfg>,
    #[serde(default)]
    pub schedule: Vec<WindowCfg>,
    #[serde(default)]
    pub sim: SimCfg,
    #[serde(default)]
    pub reheat: ReheatConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub calibration: CalibrationCfg,
    #[serde(default)]
    pub psd: PsdCfg,
    #[serde(default)]
    pub tune: TuneCfg,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> String {
    "out".into()
}

/// Parse, validate, and resolve a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Same as [`load_config`] from an in-memory string.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RunConfig = toml::from_str(text)?;
    raw.resolve()
}

impl RunConfig {
    /// Apply every default, check all cross-references, and return a config
    /// in which every optional quantity is concrete.
    pub fn resolve(mut self) -> Result<RunConfig> {
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one mode is required"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].iter().any(|o| o.label == m.label) {
                return Err(Error::config(
                    format!("modes[{i}].label"),
                    format!("duplicate mode label `{}`", m.label),
                ));
            }
        }
        for (i, c) in self.channels.iter().enumerate() {
            let key = format!("channels[{i}].mode");
            if !self.modes.iter().any(|m| m.label == c.mode) {
                return Err(Error::config(key, format!("unknown mode label `{}`", c.mode)));
            }
            if self.channels[..i].iter().any(|o| o.mode == c.mode) {
                return Err(Error::config(
                    key,
                    format!("mode `{}` already has a feedback channel", c.mode),
                ));
            }
        }
        for (i, w) in self.schedule.iter().enumerate() {
            for label in &w.modes {
                if !self.channels.iter().any(|c| &c.mode == label) {
                    return Err(Error::config(
                        format!("schedule[{i}].modes"),
                        format!("no feedback channel for mode label `{label}`"),
                    ));
                }
            }
        }

        // fill channel PLL defaults
        let freqs: std::collections::HashMap<&str, f64> =
            self.modes.iter().map(|m| (m.label.as_str(), m.frequency)).collect();
        for c in &mut self.channels {
            let f = freqs[c.mode.as_str()];
            c.loop_bandwidth.get_or_insert(f / 100.0);
            c.capture_range.get_or_insert(f / 10.0);
        }

        // fill sim defaults
        let f_max = self.modes.iter().map(|m| m.frequency).fold(0.0f64, f64::max);
        if !(f_max > 0.0) {
            return Err(Error::config("modes", "mode frequencies must be > 0"));
        }
        self.sim.dt.get_or_insert(1.0 / (50.0 * f_max));
        self.sim.duration.get_or_insert(0.05);
        self.sim.sample_rate_out.get_or_insert(5.0 * f_max);
        self.sim.modulation_depth_limit.get_or_insert(0.01);
        self.sim.runaway_bound.get_or_insert(default_runaway_bound());
        self.sim.record_torque.get_or_insert(false);

        // fill calibration defaults
        self.calibration.pressure_mbar.get_or_insert(self.environment.pressure_mbar);
        self.calibration.duration.get_or_insert(0.05);
        self.calibration.segment_length.get_or_insert(8192);
        self.calibration.peak_half.get_or_insert(20.0e3);
        self.calibration.noise_side.get_or_insert(15.0e3);

        self.psd.window_kind()?;
        if self.tune.points < 2 {
            return Err(Error::config("tune.points", "need at least 2 phase points"));
        }

        // full semantic validation via the runtime types
        let setup = self.to_setup()?;
        setup.validate()?;
        self.to_schedule()?
            .validate(setup.channels.len(), self.sim.duration.unwrap())?;
        Ok(self)
    }

    /// Build the runtime apparatus description. Must be called on a
    /// resolved config.
    pub fn to_setup(&self) -> Result<Setup> {
        let modes: Vec<ModeParams> = self.modes.iter().map(|m| m.to_mode()).collect();
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mi = modes.iter().position(|m| m.label == c.mode).unwrap();
                Ok(ChannelSpec {
                    mode_index: mi,
                    pll: PllConfig {
                        center_freq: self.modes[mi].frequency,
                        loop_bandwidth: c
                            .loop_bandwidth
                            .ok_or_else(|| Error::config("channels", "config not resolved"))?,
                        capture_range: c
                            .capture_range
                            .ok_or_else(|| Error::config("channels", "config not resolved"))?,
                    },
                    gain: c.gain,
                    phase_psi: c.phase_psi,
                    enabled: c.enabled,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let need = |x: Option<f64>, key: &str| {
            x.ok_or_else(|| Error::config(key, "config not resolved"))
        };
        let sim = SimConfig {
            dt: need(self.sim.dt, "sim.dt")?,
            duration: need(self.sim.duration, "sim.duration")?,
            seed: self.seed,
            job: 0,
            sample_rate_out: need(self.sim.sample_rate_out, "sim.sample_rate_out")?,
            modulation_depth_limit: need(self.sim.modulation_depth_limit, "sim.modulation_depth_limit")?,
            runaway_bound: need(self.sim.runaway_bound, "sim.runaway_bound")?,
            record_torque: self.sim.record_torque.unwrap_or(false),
            initial_states: None,
        };
        Ok(Setup {
            modes,
            env: self.environment,
            s_ba: self.modes.iter().map(|m| m.s_ba).collect(),
            s_imp_exp: self.modes.iter().map(|m| m.s_imp_exp).collect(),
            channels,
            sim,
        })
    }

    /// Build the actuation schedule, mapping mode labels to channel indices.
    pub fn to_schedule(&self) -> Result<Schedule> {
        let windows = self
            .schedule
            .iter()
            .map(|w| {
                let channels = w
                    .modes
                    .iter()
                    .map(|label| {
                        self.channels
                            .iter()
                            .position(|c| &c.mode == label)
                            .ok_or_else(|| {
                                Error::config("schedule", format!("unknown mode label `{label}`"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ScheduleWindow { t_start: w.t_start, t_end: w.t_end, channels, on: w.on })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schedule { windows })
    }

    /// Calibration run parameters. Must be called on a resolved config.
    pub fn to_calibration(&self) -> Result<CalibrationConfig> {
        let c = &self.calibration;
        match (c.pressure_mbar, c.duration, c.segment_length, c.peak_half, c.noise_side) {
            (Some(p), Some(d), Some(n), Some(ph), Some(ns)) => Ok(CalibrationConfig {
                pressure_mbar: p,
                duration: d,
                segment_length: n,
                peak_half: ph,
                noise_side: ns,
            }),
            _ => Err(Error::config("calibration", "config not resolved")),
        }
    }

    /// Serialize the resolved config; `parse_config` of the result
    /// round-trips to an identical value.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
