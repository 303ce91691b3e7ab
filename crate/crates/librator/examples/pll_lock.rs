//! Digital PLL acquiring a detuned noisy tone.
//!
//! A type-II PLL centered at 330.4 kHz is fed a tone 800 Hz off-center
//! buried in white noise; the loop pulls in, and the frequency estimate and
//! lock metric are printed as the acquisition proceeds.
//!
//! Run with: cargo run --example pll_lock

use librator::feedback::{Pll, PllConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> librator::Result<()> {
    let f_center = 330.4e3;
    let f_tone = f_center + 800.0;
    let fs = 5.0e6;
    let dt = 1.0 / fs;

    let mut pll = Pll::new(PllConfig {
        center_freq: f_center,
        loop_bandwidth: 3.0e3,
        capture_range: 30.0e3,
    })?;

    let mut rng = librator::rng::stream(42, 0, 0, librator::rng::NoiseKind::Imprecision);
    let n = (0.02 * fs) as usize;
    println!("{:>10}  {:>12}  {:>6}", "t [ms]", "freq [Hz]", "lock");
    for k in 0..n {
        let t = k as f64 * dt;
        let noise: f64 = rng.sample(StandardNormal);
        let sample = (std::f64::consts::TAU * f_tone * t).sin() + 0.5 * noise;
        pll.step(sample, dt);
        if k % (n / 20) == 0 {
            println!(
                "{:>10.3}  {:>12.1}  {:>6.3}",
                t * 1e3,
                pll.state.freq_estimate,
                pll.state.lock_metric
            );
        }
    }
    let err = pll.state.freq_estimate - f_tone;
    println!("\nfinal frequency error: {err:.2} Hz, lock metric {:.3}", pll.state.lock_metric);
    Ok(())
}
