//! PSD thermometry of an uncooled mode.
//!
//! Simulates a thermally driven libration mode at 295 K, estimates its PSD
//! with Welch's method, integrates the peak with noise-floor subtraction,
//! and converts the area back to a temperature via equipartition.
//!
//! Run with: cargo run --release --example equipartition_thermometry

use librator::analysis::{integrate_peak, welch_psd, PeakRegion, WindowKind};
use librator::config::parse_config;

const CONFIG: &str = r#"
[environment]
pressure_mbar = 1.0
t_bath = 295.0

[[modes]]
label = "alpha"
inertia = 1e-30
frequency = 330.4e3
gamma_ref = 2e4
p_ref = 1.0

[sim]
duration = 0.25
"#;

fn main() -> librator::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let setup = cfg.to_setup()?;
    let mode = &setup.modes[0];

    let rec = setup.run(
        librator::feedback::Schedule::empty(),
        setup.sim.duration,
        setup.env.pressure_mbar,
        0,
    )?;

    let psd = welch_psd(&rec.detector[0], 8192, 0.5, WindowKind::Hann)?;
    let region = PeakRegion::around(mode.frequency(), 100.0e3, 50.0e3);
    let peak = integrate_peak(&psd, &region)?;
    let c_sq = mode.calibration * mode.calibration;
    let temperature = librator::analysis::mode_temperature(peak.area, c_sq, mode)?;

    println!("segments averaged: {}", psd.n_segments_averaged);
    println!("peak area:         {:.4e} V^2", peak.area);
    println!("noise floor:       {:.4e} V^2/Hz", peak.floor);
    println!("temperature:       {:.2} K (bath: 295.00 K)", temperature);
    println!("relative error:    {:+.2}%", (temperature / 295.0 - 1.0) * 100.0);
    Ok(())
}
