//! Angle-to-voltage detection: calibration factor, imprecision noise, and
//! the bookkeeping that links detection quality to backaction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::HBAR;

/// One detector channel observing one libration mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorChannel {
    /// Calibration factor, V/rad.
    pub calibration: f64,
    /// Imprecision floor, V²/Hz (single-sided, at the channel's sample rate).
    pub s_imp_exp: f64,
    /// Heterodyne local-oscillator offset, Hz. Zero means pure homodyne.
    /// When nonzero the output is rotated by cos(2π·lo_offset·t) and the
    /// effective calibration is halved (sideband folding costs a factor of
    /// two in signal).
    pub lo_offset: f64,
}

impl DetectorChannel {
    pub fn new(calibration: f64, s_imp_exp: f64) -> Result<Self> {
        let ch = DetectorChannel { calibration, s_imp_exp, lo_offset: 0.0 };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.calibration > 0.0) {
            return Err(Error::invalid("detector calibration must be > 0"));
        }
        if self.s_imp_exp < 0.0 {
            return Err(Error::invalid("s_imp_exp must be >= 0"));
        }
        Ok(())
    }

    /// Effective gain after the heterodyne signal cost, V/rad.
    pub fn effective_calibration(&self) -> f64 {
        if self.lo_offset != 0.0 {
            self.calibration / 2.0
        } else {
            self.calibration
        }
    }

    /// Gaussian imprecision std per sample for a stream sampled at
    /// `sample_rate`, so that the single-sided voltage PSD is flat at
    /// `s_imp_exp` up to that stream's Nyquist.
    pub fn imprecision_sigma(&self, sample_rate: f64) -> f64 {
        (self.s_imp_exp * sample_rate / 2.0).sqrt()
    }

    /// One detector sample: v = c·θ + n_imp, with the optional heterodyne
    /// rotation applied to the signal part.
    pub fn measure(&self, theta: f64, t: f64, noise_sample: f64) -> f64 {
        let mut signal = self.effective_calibration() * theta;
        if self.lo_offset != 0.0 {
            signal *= (std::f64::consts::TAU * self.lo_offset * t).cos();
        }
        signal + noise_sample
    }

    /// Angle-referred imprecision, rad²/Hz.
    pub fn s_imp(&self) -> f64 {
        self.s_imp_exp / (self.effective_calibration() * self.effective_calibration())
    }
}

/// Ground-truth measurement efficiency η = ħ² / (S_ττ · S_imp), the oracle
/// the reheating-based estimator is validated against.
pub fn true_efficiency(channel: &DetectorChannel, s_tau_total: f64) -> Result<f64> {
    if !(s_tau_total > 0.0) {
        return Err(Error::invalid("total torque PSD must be > 0"));
    }
    if !(channel.s_imp_exp > 0.0) {
        return Err(Error::invalid("s_imp_exp must be > 0 for an efficiency"));
    }
    Ok(HBAR * HBAR / (s_tau_total * channel.s_imp()))
}

/// The detector-side noise PSD that realizes a target ground-truth
/// efficiency for a given total torque PSD, V²/Hz.
pub fn s_imp_exp_for_efficiency(calibration: f64, s_tau_total: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("eta must be in (0, 1]"));
    }
    if !(s_tau_total > 0.0) || !(calibration > 0.0) {
        return Err(Error::invalid("inputs must be > 0"));
    }
    Ok(HBAR * HBAR * calibration * calibration / (eta * s_tau_total))
}
