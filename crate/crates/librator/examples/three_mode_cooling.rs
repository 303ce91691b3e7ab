//! Simultaneous cooling of three non-degenerate modes through one shared,
//! clamped actuator, with automatic feedback-phase tuning.
//!
//! Each channel's phase is scanned over eight points and set to the
//! minimum of the steady-state lock-in energy; the cooling sweep then
//! reports every mode's temperature and phonon occupation.
//!
//! Run with: cargo run --release --example three_mode_cooling

use std::path::Path;

use librator::config::load_config;
use librator::experiments::{run_cooling_sweep, tune_feedback_phase};

fn main() -> librator::Result<()> {
    let cfg = load_config(Path::new("configs/three_mode.toml"))?;
    let mut setup = cfg.to_setup()?;

    for ci in 0..setup.channels.len() {
        let (psi, energy) = tune_feedback_phase(
            &setup,
            ci,
            cfg.tune.points,
            cfg.tune.settle_time,
            cfg.tune.measure_time,
        )?;
        let label = &setup.modes[setup.channels[ci].mode_index].label;
        println!("tuned {label:<6} psi = {psi:.3} rad (lock-in energy {energy:.3e} V^2)");
        setup.channels[ci].phase_psi = psi;
    }

    println!();
    let rows = run_cooling_sweep(&setup, &cfg.pressures, &cfg.sweep)?;
    println!("{:>10}  {:>6}  {:>10}  {:>12}  {:>10}", "p [mbar]", "mode", "T [K]", "factor", "n_bar");
    for r in &rows {
        match (r.temperature, r.n_bar) {
            (Some(t), Some(n)) => println!(
                "{:>10.1e}  {:>6}  {:>10.3}  {:>11.0}x  {:>10.0}",
                r.pressure_mbar,
                r.mode,
                t,
                setup.env.t_bath / t,
                n
            ),
            _ => println!(
                "{:>10.1e}  {:>6}  failed: {}",
                r.pressure_mbar,
                r.mode,
                r.error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    Ok(())
}
