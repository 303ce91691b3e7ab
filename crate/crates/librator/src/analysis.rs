//! Spectral estimation, thermometry, lock-in demodulation, and the fitting
//! primitives of the measurement pipeline.
//!
//! PSD convention throughout: single-sided over real frequencies, normalized
//! so that the signal variance equals the integral of the PSD from 0 to the
//! Nyquist frequency ("single-sided, ⟨x²⟩=∫₀^∞ S df").

use std::f64::consts::TAU;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{ModeParams, KB};

/// The string written into every artifact that carries spectral data.
pub const PSD_CONVENTION: &str = "single-sided, \u{27e8}x\u{00b2}\u{27e9}=\u{222b}\u{2080}^\u{221e} S df";

/// Uniformly sampled real-valued channel. The universal interchange object
/// between the simulator, the analysis pipeline, and the file formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timetrace {
    /// Samples per second.
    pub sample_rate: f64,
    /// Time of the first sample, s.
    pub start_time: f64,
    pub samples: Vec<f64>,
}

impl Timetrace {
    pub fn new(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate must be > 0"));
        }
        if samples.len() < 2 {
            return Err(Error::invalid("a timetrace needs at least 2 samples"));
        }
        Ok(Timetrace { sample_rate, start_time, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Sample mean.
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Biased (1/N) variance about the mean.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }

    /// Mean square (second raw moment).
    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

/// Window applied to Welch segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rect,
}

impl WindowKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "hann" => Ok(WindowKind::Hann),
            "hamming" => Ok(WindowKind::Hamming),
            "rect" | "boxcar" => Ok(WindowKind::Rect),
            other => Err(Error::invalid(format!("unknown window `{other}`"))),
        }
    }

    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = TAU * i as f64 / n as f64;
                match self {
                    WindowKind::Hann => 0.5 * (1.0 - x.cos()),
                    WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
                    WindowKind::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// Single-sided power spectral density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    /// Bin spacing, Hz. Bin k sits at frequency k·df.
    pub df: f64,
    /// PSD values, unit²/Hz, bins 0..=n/2.
    pub values: Vec<f64>,
    pub n_segments_averaged: usize,
}

impl Psd {
    pub fn nyquist(&self) -> f64 {
        self.df * (self.values.len() - 1) as f64
    }

    /// Total integrated power, unit². Equals the input variance up to
    /// windowing tolerance (Parseval).
    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.df
    }

    /// Integrated power over `[f_lo, f_hi]` without floor subtraction.
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.bins_in(f_lo, f_hi).map(|k| self.values[k]).sum::<f64>() * self.df
    }

    fn bins_in(&self, f_lo: f64, f_hi: f64) -> impl Iterator<Item = usize> + '_ {
        let df = self.df;
        (0..self.values.len()).filter(move |&k| {
            let f = k as f64 * df;
            f >= f_lo && f <= f_hi
        })
    }
}

/// Frequency band of one mode's peak plus the sidebands used to estimate the
/// local noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRegion {
    pub f_lo: f64,
    pub f_hi: f64,
    pub noise_lo: (f64, f64),
    pub noise_hi: (f64, f64),
}

impl PeakRegion {
    /// Peak band centered on `f0` with half-width `half`, floor sidebands
    /// directly adjacent on both sides with width `side`.
    pub fn around(f0: f64, half: f64, side: f64) -> Self {
        PeakRegion {
            f_lo: f0 - half,
            f_hi: f0 + half,
            noise_lo: ((f0 - half - side).max(0.0), f0 - half),
            noise_hi: (f0 + half, f0 + half + side),
        }
    }

    fn validate(&self, psd: &Psd) -> Result<()> {
        if !(self.f_lo >= 0.0 && self.f_lo < self.f_hi) {
            return Err(Error::invalid("peak region must satisfy 0 <= f_lo < f_hi"));
        }
        if self.f_hi > psd.nyquist() {
            return Err(Error::invalid(format!(
                "peak region upper edge {} Hz beyond Nyquist {} Hz",
                self.f_hi,
                psd.nyquist()
            )));
        }
        let bands_ok = (self.noise_lo.1 <= self.f_lo || self.noise_lo.0 >= self.f_hi)
            && (self.noise_hi.1 <= self.f_lo || self.noise_hi.0 >= self.f_hi);
        if !bands_ok {
            return Err(Error::invalid("noise bands must be disjoint from the peak band"));
        }
        Ok(())
    }
}

/// Result of background-subtracted peak integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakArea {
    /// Floor-subtracted integrated power, unit². Clamped at zero.
    pub area: f64,
    /// Median floor level used for the subtraction, unit²/Hz.
    pub floor: f64,
    /// Set when the raw floor-subtracted integral was negative.
    pub clamped: bool,
}

/// Welch PSD estimate with the stated window and overlap.
///
/// Normalized by the window power so that the integrated PSD reproduces the
/// input variance (white-noise-exact; within windowing tolerance for tones).
pub fn welch_psd(
    trace: &Timetrace,
    segment_length: usize,
    overlap: f64,
    window: WindowKind,
) -> Result<Psd> {
    if segment_length < 2 {
        return Err(Error::invalid("segment_length must be >= 2"));
    }
    if segment_length > trace.len() {
        return Err(Error::invalid(format!(
            "trace of {} samples shorter than one segment of {}",
            trace.len(),
            segment_length
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap must be in [0, 1)"));
    }
    let n = segment_length;
    let hop = ((n as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let w = window.coefficients(n);
    let win_power: f64 = w.iter().map(|x| x * x).sum();

    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut acc = vec![0.0f64; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut n_segments = 0usize;
    let mut start = 0usize;
    while start + n <= trace.len() {
        for i in 0..n {
            buf[i] = Complex::new(trace.samples[start + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        n_segments += 1;
        start += hop;
    }
    debug_assert!(n_segments > 0);

    let fs = trace.sample_rate;
    let base = 1.0 / (fs * win_power * n_segments as f64);
    let last = acc.len() - 1;
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            // one-sided: double everything except DC and Nyquist
            let fold = if k == 0 || (k == last && n % 2 == 0) { 1.0 } else { 2.0 };
            fold * base * a
        })
        .collect();

    Ok(Psd {
        df: fs / n as f64,
        values,
        n_segments_averaged: n_segments,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Integrate the peak band with the median of the sideband bins subtracted
/// as the noise floor.
pub fn integrate_peak(psd: &Psd, region: &PeakRegion) -> Result<PeakArea> {
    region.validate(psd)?;
    let floor_bins: Vec<f64> = psd
        .bins_in(region.noise_lo.0, region.noise_lo.1)
        .chain(psd.bins_in(region.noise_hi.0, region.noise_hi.1))
        .map(|k| psd.values[k])
        .collect();
    let floor = if floor_bins.is_empty() { 0.0 } else { median(floor_bins) };
    let raw: f64 = psd
        .bins_in(region.f_lo, region.f_hi)
        .map(|k| psd.values[k] - floor)
        .sum::<f64>()
        * psd.df;
    Ok(PeakArea {
        area: raw.max(0.0),
        floor,
        clamped: raw < 0.0,
    })
}

/// Equipartition calibration: c² = I ω² ⟨v_cal²⟩ / (kB T_cal), V²/rad².
pub fn calibrate(v_cal_sq: f64, t_cal: f64, mode: &ModeParams) -> Result<f64> {
    if !(v_cal_sq > 0.0) || !(t_cal > 0.0) {
        return Err(Error::invalid("calibration inputs must be > 0"));
    }
    Ok(mode.inertia * mode.omega0 * mode.omega0 * v_cal_sq / (KB * t_cal))
}

/// Mode temperature from the integrated detector-signal peak area:
/// T = I ω² (area / c²) / kB.
pub fn mode_temperature(area_v_sq: f64, c_sq: f64, mode: &ModeParams) -> Result<f64> {
    if !(c_sq > 0.0) {
        return Err(Error::invalid("c_sq must be > 0"));
    }
    if area_v_sq < 0.0 {
        return Err(Error::invalid("peak area must be >= 0"));
    }
    Ok(mode.inertia * mode.omega0 * mode.omega0 * (area_v_sq / c_sq) / KB)
}

/// Fourth-order low-pass: four identical cascaded one-pole sections with the
/// per-stage cutoff placed so the cascade is −3 dB at `bandwidth`.
#[derive(Debug, Clone)]
pub struct CascadedLowPass {
    alpha: f64,
    state: [f64; 4],
}

impl CascadedLowPass {
    /// Cascade −3 dB point: (1 + (B/f1)²)⁴ = 2 ⇒ f1 = B / √(2^¼ − 1).
    pub fn new(bandwidth: f64, sample_rate: f64) -> Self {
        let f1 = bandwidth / (2.0f64.powf(0.25) - 1.0).sqrt();
        let alpha = 1.0 - (-TAU * f1 / sample_rate).exp();
        CascadedLowPass { alpha: alpha.min(1.0), state: [0.0; 4] }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let mut y = x;
        for s in &mut self.state {
            *s += self.alpha * (y - *s);
            y = *s;
        }
        y
    }
}

/// Streaming lock-in demodulator: quadrature mixing at `f_demod` followed by
/// the documented 4th-order low-pass of the given bandwidth.
#[derive(Debug, Clone)]
pub struct Lockin {
    f_demod: f64,
    lp_x: CascadedLowPass,
    lp_y: CascadedLowPass,
    x: f64,
    y: f64,
}

impl Lockin {
    pub fn new(f_demod: f64, bandwidth: f64, sample_rate: f64) -> Result<Self> {
        if !(f_demod > 0.0 && f_demod < sample_rate / 2.0) {
            return Err(Error::invalid("f_demod must be in (0, Nyquist)"));
        }
        if !(bandwidth > 0.0 && bandwidth < f_demod) {
            return Err(Error::invalid("bandwidth must be in (0, f_demod)"));
        }
        Ok(Lockin {
            f_demod,
            lp_x: CascadedLowPass::new(bandwidth, sample_rate),
            lp_y: CascadedLowPass::new(bandwidth, sample_rate),
            x: 0.0,
            y: 0.0,
        })
    }

    /// Advance by one sample taken at time `t`; returns the energy estimate
    /// (X² + Y²)/2, equal to the narrowband signal variance.
    pub fn step(&mut self, v: f64, t: f64) -> f64 {
        let (s, c) = (TAU * self.f_demod * t).sin_cos();
        self.x = self.lp_x.step(2.0 * v * c);
        self.y = self.lp_y.step(2.0 * v * s);
        self.energy()
    }

    pub fn energy(&self) -> f64 {
        0.5 * (self.x * self.x + self.y * self.y)
    }
}

/// Lock-in energy trace of a recorded signal (offline form of [`Lockin`]).
pub fn lockin_energy(trace: &Timetrace, f_demod: f64, bandwidth: f64) -> Result<Timetrace> {
    let mut li = Lockin::new(f_demod, bandwidth, trace.sample_rate)?;
    let dt = 1.0 / trace.sample_rate;
    let samples: Vec<f64> = trace
        .samples
        .iter()
        .enumerate()
        .map(|(i, &v)| li.step(v, trace.start_time + i as f64 * dt))
        .collect();
    Timetrace::new(trace.sample_rate, trace.start_time, samples)
}

/// Straight-line fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

/// Least squares with the intercept pinned at `e0`:
/// slope = Σ t (e − e0) / Σ t².
pub fn linear_fit_fixed_intercept(t: &[f64], e: &[f64], e0: f64) -> Result<LinearFit> {
    if t.len() != e.len() || t.len() < 2 {
        return Err(Error::invalid("fixed-intercept fit needs >= 2 paired points"));
    }
    let stt: f64 = t.iter().map(|x| x * x).sum();
    if stt == 0.0 {
        return Err(Error::invalid("all abscissa values are zero"));
    }
    let ste: f64 = t.iter().zip(e).map(|(x, y)| x * (y - e0)).sum();
    let slope = ste / stt;
    let ss_res: f64 = t
        .iter()
        .zip(e)
        .map(|(x, y)| {
            let r = y - e0 - slope * x;
            r * r
        })
        .sum();
    let dof = (t.len() - 1) as f64;
    let slope_stderr = (ss_res / dof / stt).sqrt();
    Ok(LinearFit {
        slope,
        intercept: e0,
        slope_stderr,
        intercept_stderr: 0.0,
    })
}

/// Ordinary least squares `rate = a·p + res` with standard errors; fits the
/// pressure law of the heating-rate sweep.
pub fn fit_pressure_law(p: &[f64], rate: &[f64]) -> Result<LinearFit> {
    if p.len() != rate.len() || p.len() < 2 {
        return Err(Error::invalid("pressure-law fit needs >= 2 paired points"));
    }
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("pressures must be >= 0"));
    }
    let n = p.len() as f64;
    let px = p.iter().sum::<f64>() / n;
    let ry = rate.iter().sum::<f64>() / n;
    let sxx: f64 = p.iter().map(|x| (x - px) * (x - px)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("need at least 2 distinct pressures"));
    }
    let sxy: f64 = p.iter().zip(rate).map(|(x, y)| (x - px) * (y - ry)).sum();
    let a = sxy / sxx;
    let res = ry - a * px;
    let ss_res: f64 = p
        .iter()
        .zip(rate)
        .map(|(x, y)| {
            let r = y - a * x - res;
            r * r
        })
        .sum();
    let (a_se, res_se) = if p.len() > 2 {
        let s2 = ss_res / (n - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n + px * px / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LinearFit {
        slope: a,
        intercept: res,
        slope_stderr: a_se,
        intercept_stderr: res_se,
    })
}
