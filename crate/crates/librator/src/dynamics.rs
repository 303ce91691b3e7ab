//! Time-domain stochastic integration of N independent parametrically
//! driven underdamped oscillators sharing one actuator.
//!
//! Integrator: semi-implicit (symplectic) Euler for the deterministic part
//! with additive Euler-Maruyama noise injection,
//!
//! ```text
//! v' = v + dt·(−γ v − ω²(1+u) θ) + τ dt / I
//! θ' = θ + dt·v'
//! ```
//!
//! where the discrete noise torque τ is drawn per step with variance
//! S/(2 dt) (single-sided convention, fs = 1/dt). An independent
//! implementation given the same RNG streams reproduces trajectories
//! bit-exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::Timetrace;
use crate::detection::DetectorChannel;
use crate::error::{Error, Result};
use crate::physics::{damping_from_pressure, Environment, ModeParams, NoiseBudget, KB};
use crate::rng::{stream, NoiseKind};

/// Instantaneous state of one oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OscState {
    /// Libration angle, rad.
    pub theta: f64,
    /// Angular velocity, rad/s.
    pub theta_dot: f64,
}

impl OscState {
    /// Mechanical energy ½I(θ̇² + ω²θ²), J.
    pub fn energy(&self, inertia: f64, omega0: f64) -> f64 {
        0.5 * inertia * (self.theta_dot * self.theta_dot + omega0 * omega0 * self.theta * self.theta)
    }
}

/// Integration and output-sampling parameters of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Internal time step, s. Must resolve the fastest mode: dt ≤ 2π/(50·max ω).
    pub dt: f64,
    /// Simulated span, s.
    pub duration: f64,
    /// Master seed for all noise streams.
    pub seed: u64,
    /// Job index deriving per-trajectory streams (sweep points, tuning probes).
    #[serde(default)]
    pub job: u64,
    /// Output sample rate, Hz. Must exceed twice the highest mode frequency;
    /// realized as the nearest integer stride of the internal rate.
    pub sample_rate_out: f64,
    /// Hard bound on |u|.
    pub modulation_depth_limit: f64,
    /// Abort threshold on |θ|, rad. The small-angle model is meaningless
    /// beyond this.
    #[serde(default = "default_runaway_bound")]
    pub runaway_bound: f64,
    /// Record the injected torque per mode at the full internal rate
    /// (diagnostic; memory-heavy).
    #[serde(default)]
    pub record_torque: bool,
    /// Start states per mode; default is a thermal draw at the bath
    /// temperature from the initial-condition stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<Vec<OscState>>,
}

pub fn default_runaway_bound() -> f64 {
    0.5
}

impl SimConfig {
    /// Conservative defaults for a mode set: dt at 50 steps per period of
    /// the fastest mode, output rate at five times its frequency.
    pub fn for_modes(modes: &[ModeParams], duration: f64, seed: u64) -> Result<Self> {
        let omega_max = modes
            .iter()
            .map(|m| m.omega0)
            .fold(0.0f64, f64::max);
        if omega_max <= 0.0 {
            return Err(Error::invalid("need at least one mode with omega0 > 0"));
        }
        let cfg = SimConfig {
            dt: std::f64::consts::TAU / (50.0 * omega_max),
            duration,
            seed,
            job: 0,
            sample_rate_out: 5.0 * omega_max / std::f64::consts::TAU,
            modulation_depth_limit: 0.01,
            runaway_bound: default_runaway_bound(),
            record_torque: false,
            initial_states: None,
        };
        cfg.validate(modes)?;
        Ok(cfg)
    }

    pub fn validate(&self, modes: &[ModeParams]) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration must be > 0"));
        }
        let omega_max = modes.iter().map(|m| m.omega0).fold(0.0f64, f64::max);
        if omega_max > 0.0 && self.dt > std::f64::consts::TAU / (50.0 * omega_max) {
            return Err(Error::invalid(format!(
                "dt = {:.3e} s too coarse: need <= {:.3e} s (50 steps per period of the fastest mode)",
                self.dt,
                std::f64::consts::TAU / (50.0 * omega_max)
            )));
        }
        if self.sample_rate_out * std::f64::consts::PI <= omega_max {
            return Err(Error::invalid(format!(
                "sample_rate_out = {:.3e} Hz below Nyquist for the fastest mode",
                self.sample_rate_out
            )));
        }
        if !(self.modulation_depth_limit > 0.0 && self.modulation_depth_limit < 1.0) {
            return Err(Error::invalid("modulation_depth_limit must be in (0, 1)"));
        }
        if !(self.runaway_bound > 0.0) {
            return Err(Error::invalid("runaway_bound must be > 0"));
        }
        Ok(())
    }

    /// Decimation stride realizing `sample_rate_out` on the internal grid.
    pub fn stride(&self) -> usize {
        ((1.0 / self.dt) / self.sample_rate_out).round().max(1.0) as usize
    }

    /// Output rate actually realized by the integer stride.
    pub fn realized_sample_rate(&self) -> f64 {
        1.0 / (self.dt * self.stride() as f64)
    }
}

/// Closed-loop actuator policy. Receives the detector voltages of the
/// current step and returns the (pre-clamp) modulation depth.
pub trait Controller {
    fn update(&mut self, t: f64, volts: &[f64], dt: f64) -> f64;
}

/// Open-loop: u = 0 forever.
pub struct NoFeedback;

impl Controller for NoFeedback {
    fn update(&mut self, _t: f64, _volts: &[f64], _dt: f64) -> f64 {
        0.0
    }
}

/// Everything one trajectory records, all channels decimated to the same
/// realized output rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub sample_rate: f64,
    /// True angles per mode, rad.
    pub theta: Vec<Timetrace>,
    /// Detector voltages per mode, V.
    pub detector: Vec<Timetrace>,
    /// Clamped actuator value (dimensionless modulation depth).
    pub actuator: Timetrace,
    /// Injected torque per mode at the full internal rate, N·m. Present only
    /// when `record_torque` is set.
    pub torque_full: Option<Vec<Timetrace>>,
}

/// Advance one oscillator by one step.
///
/// `noise_torque` is the discrete Euler-Maruyama torque sample for this step
/// (already scaled to its per-step variance S/(2 dt)).
pub fn step_mode(
    state: OscState,
    mode: &ModeParams,
    gamma: f64,
    u: f64,
    noise_torque: f64,
    dt: f64,
) -> Result<OscState> {
    if !(state.theta.is_finite()
        && state.theta_dot.is_finite()
        && u.is_finite()
        && noise_torque.is_finite())
    {
        return Err(Error::IntegrationFault {
            step: 0,
            what: "non-finite input to step_mode".into(),
        });
    }
    Ok(step_mode_unchecked(state, mode.omega0, mode.inertia, gamma, u, noise_torque, dt))
}

#[inline]
fn step_mode_unchecked(
    state: OscState,
    omega0: f64,
    inertia: f64,
    gamma: f64,
    u: f64,
    noise_torque: f64,
    dt: f64,
) -> OscState {
    let omega_sq = omega0 * omega0 * (1.0 + u);
    let theta_dot = state.theta_dot
        + dt * (-gamma * state.theta_dot - omega_sq * state.theta)
        + noise_torque * dt / inertia;
    let theta = state.theta + dt * theta_dot;
    OscState { theta, theta_dot }
}

/// Run one closed-loop trajectory: detect → controller → clamp → step, every
/// internal step; bit-reproducible for identical inputs.
pub fn simulate(
    config: &SimConfig,
    modes: &[ModeParams],
    env: &Environment,
    budgets: &[NoiseBudget],
    detectors: &[DetectorChannel],
    controller: &mut dyn Controller,
) -> Result<TrajectoryRecord> {
    config.validate(modes)?;
    env.validate()?;
    if modes.is_empty() {
        return Err(Error::invalid("need at least one mode"));
    }
    if budgets.len() != modes.len() || detectors.len() != modes.len() {
        return Err(Error::invalid(
            "modes, budgets and detectors must have matching lengths",
        ));
    }
    for m in modes {
        m.validate()?;
    }
    let n_modes = modes.len();
    let dt = config.dt;
    let fs_int = 1.0 / dt;
    let n_steps = (config.duration / dt).round() as usize;
    let stride = config.stride();

    let gammas: Vec<f64> = modes
        .iter()
        .map(|m| damping_from_pressure(m, env.pressure_mbar))
        .collect::<Result<_>>()?;
    let sigma_th: Vec<f64> = budgets.iter().map(|b| (b.s_th * fs_int / 2.0).sqrt()).collect();
    let sigma_ba: Vec<f64> = budgets.iter().map(|b| (b.s_ba * fs_int / 2.0).sqrt()).collect();
    let sigma_imp: Vec<f64> = detectors.iter().map(|d| d.imprecision_sigma(fs_int)).collect();

    let mut rng_th: Vec<_> = (0..n_modes)
        .map(|m| stream(config.seed, config.job, m, NoiseKind::ThermalTorque))
        .collect();
    let mut rng_ba: Vec<_> = (0..n_modes)
        .map(|m| stream(config.seed, config.job, m, NoiseKind::BackactionTorque))
        .collect();
    let mut rng_imp: Vec<_> = (0..n_modes)
        .map(|m| stream(config.seed, config.job, m, NoiseKind::Imprecision))
        .collect();

    let mut states: Vec<OscState> = match &config.initial_states {
        Some(init) => {
            if init.len() != n_modes {
                return Err(Error::invalid("initial_states length must match modes"));
            }
            init.clone()
        }
        None => modes
            .iter()
            .enumerate()
            .map(|(m, mode)| {
                let mut rng = stream(config.seed, config.job, m, NoiseKind::InitialCondition);
                let theta_var = KB * env.t_bath / (mode.inertia * mode.omega0 * mode.omega0);
                let vel_var = KB * env.t_bath / mode.inertia;
                OscState {
                    theta: theta_var.sqrt() * rng.sample::<f64, _>(StandardNormal),
                    theta_dot: vel_var.sqrt() * rng.sample::<f64, _>(StandardNormal),
                }
            })
            .collect(),
    };

    let n_out = n_steps.div_ceil(stride);
    let mut theta_out: Vec<Vec<f64>> = vec![Vec::with_capacity(n_out); n_modes];
    let mut det_out: Vec<Vec<f64>> = vec![Vec::with_capacity(n_out); n_modes];
    let mut act_out: Vec<f64> = Vec::with_capacity(n_out);
    let mut torque_out: Vec<Vec<f64>> = if config.record_torque {
        vec![Vec::with_capacity(n_steps); n_modes]
    } else {
        Vec::new()
    };

    let mut volts = vec![0.0f64; n_modes];
    let limit = config.modulation_depth_limit;

    for k in 0..n_steps {
        let t = k as f64 * dt;

        for m in 0..n_modes {
            let noise = if sigma_imp[m] > 0.0 {
                sigma_imp[m] * rng_imp[m].sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            volts[m] = detectors[m].measure(states[m].theta, t, noise);
        }

        let u_raw = controller.update(t, &volts, dt);
        if !u_raw.is_finite() {
            return Err(Error::IntegrationFault {
                step: k,
                what: "controller produced non-finite actuator value".into(),
            });
        }
        let u = u_raw.clamp(-limit, limit);

        if k % stride == 0 {
            for m in 0..n_modes {
                theta_out[m].push(states[m].theta);
                det_out[m].push(volts[m]);
            }
            act_out.push(u);
        }

        for m in 0..n_modes {
            let mut tau = 0.0;
            if sigma_th[m] > 0.0 {
                tau += sigma_th[m] * rng_th[m].sample::<f64, _>(StandardNormal);
            }
            if sigma_ba[m] > 0.0 {
                tau += sigma_ba[m] * rng_ba[m].sample::<f64, _>(StandardNormal);
            }
            if config.record_torque {
                torque_out[m].push(tau);
            }
            states[m] = step_mode_unchecked(
                states[m],
                modes[m].omega0,
                modes[m].inertia,
                gammas[m],
                u,
                tau,
                dt,
            );
            if !states[m].theta.is_finite() || !states[m].theta_dot.is_finite() {
                return Err(Error::IntegrationFault {
                    step: k,
                    what: format!("non-finite state in mode {}", modes[m].label),
                });
            }
            if states[m].theta.abs() > config.runaway_bound {
                return Err(Error::Runaway {
                    step: k,
                    t,
                    theta: states[m].theta,
                    bound: config.runaway_bound,
                });
            }
        }
    }

    let fs_out = config.realized_sample_rate();
    let mk = |v: Vec<f64>| Timetrace::new(fs_out, 0.0, v);
    Ok(TrajectoryRecord {
        sample_rate: fs_out,
        theta: theta_out.into_iter().map(mk).collect::<Result<_>>()?,
        detector: det_out.into_iter().map(mk).collect::<Result<_>>()?,
        actuator: mk(act_out)?,
        torque_full: if config.record_torque {
            Some(
                torque_out
                    .into_iter()
                    .map(|v| Timetrace::new(fs_int, 0.0, v))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        },
    })
}
