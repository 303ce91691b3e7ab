//! Per-mode digital PLL tracking and parametric signal synthesis at twice
//! the tracked frequency, summed into one clamped actuator, with on/off
//! scheduling for reheating protocols.
//!
//! PLL structure: quadrature mixer phase detector with one-pole smoothing,
//! proportional-integral loop filter, numerically controlled oscillator.
//! Second-order type-II loop; gains follow the standard ζ = 0.707 design
//! with natural frequency ωn = 2π·loop_bandwidth:
//! kp = 2ζωn, ki = ωn².

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::Controller;
use crate::error::{Error, Result};

/// Loop design parameters of one PLL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllConfig {
    /// Expected carrier, Hz. The NCO free-runs here.
    pub center_freq: f64,
    /// Closed-loop bandwidth, Hz. Must be well below the carrier.
    pub loop_bandwidth: f64,
    /// Frequency estimates are confined to center ± capture_range, Hz.
    pub capture_range: f64,
}

impl PllConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_freq > 0.0) {
            return Err(Error::invalid("pll center_freq must be > 0"));
        }
        if !(self.loop_bandwidth > 0.0 && self.loop_bandwidth < self.center_freq / 4.0) {
            return Err(Error::invalid(
                "pll loop_bandwidth must be > 0 and well below center_freq",
            ));
        }
        if !(self.capture_range > 0.0 && self.capture_range < self.center_freq) {
            return Err(Error::invalid("pll capture_range must be in (0, center_freq)"));
        }
        Ok(())
    }
}

/// Mutable tracker state of one PLL.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PllState {
    /// NCO phase, wrapped to [0, 2π).
    pub nco_phase: f64,
    /// Current instantaneous frequency estimate, Hz.
    pub freq_estimate: f64,
    /// Loop-filter integrator, rad/s offset from center.
    pub freq_integrator: f64,
    /// Smoothed in-phase detector output (∝ sin of phase error).
    pub pd_i: f64,
    /// Smoothed quadrature detector output (∝ cos of phase error).
    pub pd_q: f64,
    /// 1 when confidently locked, ~0 on noise.
    pub lock_metric: f64,
}

/// One PLL: config plus state plus cached per-dt coefficients.
#[derive(Debug, Clone)]
pub struct Pll {
    pub cfg: PllConfig,
    pub state: PllState,
    cached_dt: f64,
    alpha_pd: f64,
    alpha_lock: f64,
    kp: f64,
    ki: f64,
}

impl Pll {
    pub fn new(cfg: PllConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pll {
            cfg,
            state: PllState {
                freq_estimate: cfg.center_freq,
                pd_q: 0.0,
                ..Default::default()
            },
            cached_dt: 0.0,
            alpha_pd: 0.0,
            alpha_lock: 0.0,
            kp: 0.0,
            ki: 0.0,
        })
    }

    fn refresh_coefficients(&mut self, dt: f64) {
        let wn = TAU * self.cfg.loop_bandwidth;
        self.kp = 2.0 * 0.707 * wn;
        self.ki = wn * wn;
        // phase-detector smoothing at 8× loop bandwidth: fast enough to add
        // little lag at the loop bandwidth, slow enough to reject the 2f
        // mixing product
        self.alpha_pd = 1.0 - (-TAU * 8.0 * self.cfg.loop_bandwidth * dt).exp();
        self.alpha_lock = 1.0 - (-TAU * self.cfg.loop_bandwidth * dt).exp();
        self.cached_dt = dt;
    }

    /// Advance by one input sample. Returns (nco phase, frequency estimate).
    ///
    /// Loss of lock is never an error; it shows up as `lock_metric` → 0.
    pub fn step(&mut self, sample: f64, dt: f64) -> (f64, f64) {
        if dt != self.cached_dt {
            debug_assert!(dt * self.cfg.center_freq < 0.5, "phase advance above Nyquist");
            self.refresh_coefficients(dt);
        }
        let s = &mut self.state;
        let (sin_p, cos_p) = s.nco_phase.sin_cos();
        // input A·sin(φ_in): mixing gives I ∝ sin(Δφ), Q ∝ cos(Δφ)
        s.pd_i += self.alpha_pd * (sample * cos_p - s.pd_i);
        s.pd_q += self.alpha_pd * (sample * sin_p - s.pd_q);
        let err = s.pd_i.atan2(s.pd_q);
        s.freq_integrator = (s.freq_integrator + self.ki * err * dt)
            .clamp(-TAU * self.cfg.capture_range, TAU * self.cfg.capture_range);
        let omega = TAU * self.cfg.center_freq + s.freq_integrator + self.kp * err;
        // readout is the integrator track; the proportional path carries 2f
        // mixer ripple and only steers the NCO
        s.freq_estimate = (self.cfg.center_freq + s.freq_integrator / TAU).clamp(
            self.cfg.center_freq - self.cfg.capture_range,
            self.cfg.center_freq + self.cfg.capture_range,
        );
        s.nco_phase = (s.nco_phase + omega * dt).rem_euclid(TAU);
        s.lock_metric = (s.lock_metric + self.alpha_lock * (err.cos() - s.lock_metric)).clamp(0.0, 1.0);
        (s.nco_phase, s.freq_estimate)
    }
}

/// u_k = G · sin(2·phase + ψ): stiffness modulation at twice the tracked
/// oscillation frequency.
pub fn parametric_signal(phase: f64, gain: f64, phase_psi: f64) -> f64 {
    gain * (2.0 * phase + phase_psi).sin()
}

/// Sum the per-mode contributions into the single shared actuator, clamped
/// to ±limit. Empty input sums to zero.
pub fn combine_channels(values: &[f64], limit: f64) -> Result<f64> {
    if !(limit > 0.0) {
        return Err(Error::invalid("actuator limit must be > 0"));
    }
    let mut sum = 0.0;
    for v in values {
        if !v.is_finite() {
            return Err(Error::invalid("non-finite feedback contribution"));
        }
        sum += v;
    }
    Ok(sum.clamp(-limit, limit))
}

/// One feedback channel: the PLL tracking a mode plus the 2Ω synthesis
/// parameters.
#[derive(Debug, Clone)]
pub struct FeedbackChannel {
    /// Index of the mode (and detector voltage) this channel listens to.
    pub mode_index: usize,
    pub pll: Pll,
    /// Modulation gain G (dimensionless).
    pub gain: f64,
    /// Feedback phase ψ, rad. 0 cools, π heats.
    pub phase_psi: f64,
    /// Static on/off; schedule windows override while active.
    pub enabled: bool,
}

impl FeedbackChannel {
    pub fn new(mode_index: usize, pll_cfg: PllConfig, gain: f64, phase_psi: f64) -> Result<Self> {
        if gain < 0.0 {
            return Err(Error::invalid("feedback gain must be >= 0"));
        }
        Ok(FeedbackChannel {
            mode_index,
            pll: Pll::new(pll_cfg)?,
            gain,
            phase_psi,
            enabled: true,
        })
    }
}

/// One actuation window: channel indices forced on or off in [t_start, t_end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleWindow {
    pub t_start: f64,
    pub t_end: f64,
    /// Channel indices the window applies to.
    pub channels: Vec<usize>,
    pub on: bool,
}

/// Time-ordered actuation schedule. Outside every window a channel follows
/// its static `enabled` flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub windows: Vec<ScheduleWindow>,
}

impl Schedule {
    pub fn empty() -> Self {
        Schedule::default()
    }

    /// Reject malformed schedules: inverted windows or overlapping windows
    /// on the same channel.
    pub fn validate(&self, n_channels: usize, duration: f64) -> Result<()> {
        for (i, w) in self.windows.iter().enumerate() {
            if !(w.t_start >= 0.0 && w.t_start < w.t_end) {
                return Err(Error::config(
                    format!("schedule[{i}]"),
                    "requires 0 <= t_start < t_end",
                ));
            }
            if w.t_end > duration {
                return Err(Error::config(
                    format!("schedule[{i}]"),
                    format!("t_end {} beyond duration {}", w.t_end, duration),
                ));
            }
            for &c in &w.channels {
                if c >= n_channels {
                    return Err(Error::config(
                        format!("schedule[{i}]"),
                        format!("channel index {c} out of range"),
                    ));
                }
            }
            for (j, v) in self.windows.iter().enumerate().skip(i + 1) {
                let share_channel = w.channels.iter().any(|c| v.channels.contains(c));
                let overlap = w.t_start < v.t_end && v.t_start < w.t_end;
                if share_channel && overlap {
                    return Err(Error::config(
                        format!("schedule[{i}]"),
                        format!("overlaps schedule[{j}] on a shared channel"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Effective enabled flag of channel `idx` at time `t`. Window edges are
    /// sample-exact: t_start inclusive, t_end exclusive.
    pub fn enabled_at(&self, idx: usize, static_flag: bool, t: f64) -> bool {
        for w in &self.windows {
            if w.channels.contains(&idx) && t >= w.t_start && t < w.t_end {
                return w.on;
            }
        }
        static_flag
    }
}

/// The complete libration feedback controller: one PLL + synthesizer per
/// mode, scheduled, summed, clamped. PLLs keep tracking while their
/// actuation is scheduled off.
#[derive(Debug, Clone)]
pub struct FeedbackBank {
    pub channels: Vec<FeedbackChannel>,
    pub schedule: Schedule,
    pub limit: f64,
}

impl FeedbackBank {
    pub fn new(channels: Vec<FeedbackChannel>, schedule: Schedule, limit: f64) -> Result<Self> {
        if !(limit > 0.0) {
            return Err(Error::invalid("actuator limit must be > 0"));
        }
        Ok(FeedbackBank { channels, schedule, limit })
    }
}

impl Controller for FeedbackBank {
    fn update(&mut self, t: f64, volts: &[f64], dt: f64) -> f64 {
        let mut contributions = Vec::with_capacity(self.channels.len());
        for (idx, ch) in self.channels.iter_mut().enumerate() {
            let (phase, _freq) = ch.pll.step(volts[ch.mode_index], dt);
            if self.schedule.enabled_at(idx, ch.enabled, t) {
                contributions.push(parametric_signal(phase, ch.gain, ch.phase_psi));
            }
        }
        combine_channels(&contributions, self.limit).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg(f0: f64) -> PllConfig {
        PllConfig {
            center_freq: f0,
            loop_bandwidth: f0 / 100.0,
            capture_range: f0 / 10.0,
        }
    }

    /// Drive a PLL with A·sin(2π f t + φ0) and return it after `dur` seconds.
    fn drive(pll: &mut Pll, f: f64, amp: f64, phi0: f64, fs: f64, dur: f64) -> (f64, f64) {
        let dt = 1.0 / fs;
        let n = (dur * fs) as usize;
        let mut out = (0.0, 0.0);
        for k in 0..n {
            let x = amp * (TAU * f * k as f64 * dt + phi0).sin();
            out = pll.step(x, dt);
        }
        out
    }

    #[test]
    fn locks_to_clean_sine_at_center() {
        let f0 = 330.4e3;
        let c = cfg(f0);
        let mut pll = Pll::new(c).unwrap();
        let fs = 16.0e6;
        // 10 / loop_bandwidth seconds of settling
        let (_phase, freq) = drive(&mut pll, f0, 1.0, 0.4, fs, 10.0 / c.loop_bandwidth);
        assert_relative_eq!(freq, f0, max_relative = 1e-4);
        assert!(pll.state.lock_metric > 0.95);
        // steady phase error < 0.01 rad: NCO phase must match input phase
        let dt = 1.0 / fs;
        let n_done = (10.0 / c.loop_bandwidth * fs) as usize;
        let input_phase = (TAU * f0 * n_done as f64 * dt + 0.4).rem_euclid(TAU);
        let mut diff = (pll.state.nco_phase - input_phase).rem_euclid(TAU);
        if diff > std::f64::consts::PI {
            diff -= TAU;
        }
        assert!(diff.abs() < 0.01, "phase error {diff}");
    }

    #[test]
    fn relocks_after_frequency_step() {
        let f0 = 330.4e3;
        let c = cfg(f0);
        let mut pll = Pll::new(c).unwrap();
        let fs = 16.0e6;
        drive(&mut pll, f0, 1.0, 0.0, fs, 10.0 / c.loop_bandwidth);
        // step by half the capture range, allow ≈ 5/loop_bandwidth to settle
        let f1 = f0 + 0.5 * c.capture_range;
        let (_p, freq) = drive(&mut pll, f1, 1.0, 0.0, fs, 5.0 / c.loop_bandwidth);
        assert_relative_eq!(freq, f1, max_relative = 1e-3);
        assert!(pll.state.lock_metric > 0.9);
    }

    #[test]
    fn noise_only_input_reports_unlocked() {
        let f0 = 330.4e3;
        let mut pll = Pll::new(cfg(f0)).unwrap();
        let fs = 16.0e6;
        let dt = 1.0 / fs;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..(0.2 * fs) as usize {
            pll.step(rng.sample::<f64, _>(StandardNormal), dt);
        }
        assert!(pll.state.lock_metric < 0.5, "metric {}", pll.state.lock_metric);
    }

    #[test]
    fn locked_phase_advances_two_pi_per_period() {
        let f0 = 100.0e3;
        let c = cfg(f0);
        let mut pll = Pll::new(c).unwrap();
        let fs = 8.0e6;
        drive(&mut pll, f0, 1.0, 0.0, fs, 10.0 / c.loop_bandwidth);
        // accumulate unwrapped phase over exactly 100 input periods
        let dt = 1.0 / fs;
        let steps_per_period = (fs / f0) as usize;
        let mut prev = pll.state.nco_phase;
        let mut acc = 0.0;
        let n_offset = (10.0 / c.loop_bandwidth * fs) as usize;
        for k in 0..100 * steps_per_period {
            let t = (n_offset + k) as f64 * dt;
            let x = (TAU * f0 * t).sin();
            let (phase, _) = pll.step(x, dt);
            let mut d = phase - prev;
            if d < 0.0 {
                d += TAU;
            }
            acc += d;
            prev = phase;
        }
        let periods = acc / TAU;
        assert_relative_eq!(periods, 100.0, max_relative = 2e-3);
    }

    #[test]
    fn parametric_signal_values() {
        assert_eq!(parametric_signal(1.3, 0.0, 0.7), 0.0);
        assert_eq!(parametric_signal(0.0, 0.1, 0.0), 0.0);
        assert_relative_eq!(
            parametric_signal(std::f64::consts::FRAC_PI_4, 0.1, 0.0),
            0.1,
            max_relative = 1e-14
        );
        // bounded by the gain
        for k in 0..100 {
            let p = k as f64 * 0.1;
            assert!(parametric_signal(p, 0.07, 1.1).abs() <= 0.07 + 1e-15);
        }
    }

    #[test]
    fn combine_clamps_and_handles_edge_cases() {
        assert_relative_eq!(combine_channels(&[0.3, 0.4], 0.5).unwrap(), 0.5);
        assert_eq!(combine_channels(&[], 0.5).unwrap(), 0.0);
        assert_relative_eq!(combine_channels(&[0.1, -0.1], 0.5).unwrap(), 0.0);
        assert!(combine_channels(&[f64::NAN], 0.5).is_err());
        assert!(combine_channels(&[0.1], 0.0).is_err());
    }

    #[test]
    fn schedule_overrides_and_validates() {
        let s = Schedule {
            windows: vec![ScheduleWindow {
                t_start: 1.0,
                t_end: 1.6,
                channels: vec![0],
                on: false,
            }],
        };
        s.validate(1, 2.0).unwrap();
        assert!(s.enabled_at(0, true, 0.5));
        assert!(!s.enabled_at(0, true, 1.0)); // start boundary inclusive
        assert!(!s.enabled_at(0, true, 1.3));
        assert!(s.enabled_at(0, true, 1.6)); // end boundary exclusive
        assert!(s.enabled_at(1, true, 1.3)); // other channels untouched

        let bad = Schedule {
            windows: vec![
                ScheduleWindow { t_start: 0.0, t_end: 1.0, channels: vec![0], on: false },
                ScheduleWindow { t_start: 0.5, t_end: 1.5, channels: vec![0], on: true },
            ],
        };
        assert!(bad.validate(1, 2.0).is_err());
    }

    #[test]
    fn empty_schedule_follows_static_flags() {
        let s = Schedule::empty();
        assert!(s.enabled_at(0, true, 0.0));
        assert!(!s.enabled_at(0, false, 0.0));
    }
}
