//! Parametric feedback cooling of a single mode, and what the wrong phase
//! does.
//!
//! Runs the same apparatus three times — feedback off, feedback at the
//! energy-extracting phase, and feedback shifted by pi — and compares the
//! steady-state mean-square angle against the thermal value.
//!
//! Run with: cargo run --release --example parametric_cooling

use librator::config::parse_config;
use librator::feedback::Schedule;
use librator::physics::KB;

const CONFIG: &str = r#"
[environment]
pressure_mbar = 0.5
t_bath = 295.0

[[modes]]
label = "alpha"
inertia = 1e-30
frequency = 330.4e3
gamma_ref = 2e4
p_ref = 1.0

[[channels]]
mode = "alpha"
gain = 2.4e-3

[sim]
duration = 0.05
"#;

fn main() -> librator::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let base = cfg.to_setup()?;
    let mode = &base.modes[0];
    let thermal = KB * base.env.t_bath / (mode.inertia * mode.omega0 * mode.omega0);

    println!("thermal mean-square angle: {thermal:.3e} rad^2\n");
    for (name, enabled, psi) in [
        ("feedback off", false, 0.0),
        ("cooling (psi = 0)", true, 0.0),
        ("heating (psi = pi)", true, std::f64::consts::PI),
    ] {
        let mut setup = base.clone();
        setup.channels[0].enabled = enabled;
        setup.channels[0].phase_psi = psi;
        let rec = setup.run(Schedule::empty(), setup.sim.duration, setup.env.pressure_mbar, 0)?;
        let tail = &rec.theta[0].samples[rec.theta[0].len() / 2..];
        let ms = tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64;
        println!(
            "{name:<20} <theta^2> = {ms:.3e} rad^2   ({:.2}x thermal)",
            ms / thermal
        );
    }
    Ok(())
}
