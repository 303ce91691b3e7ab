//! Heating rate versus pressure: the linear gas law and its zero-pressure
//! saturation.
//!
//! With a pressure-independent backaction torque configured, the reheating
//! rate decreases linearly with pressure until it saturates at the residual
//! rate. A straight-line fit recovers both the gas slope and the residual
//! intercept; both are compared to their analytic values.
//!
//! Run with: cargo run --release --example heating_vs_pressure

use librator::config::parse_config;
use librator::experiments::{run_heating_vs_pressure, ReheatConfig};
use librator::physics::KB;

const CONFIG: &str = r#"
seed = 11

[environment]
pressure_mbar = 1e-3
t_bath = 295.0

[[modes]]
label = "alpha"
inertia = 1e-30
frequency = 330.4e3
gamma_ref = 2e4
p_ref = 1.0
s_ba = 1.629165820e-49    # backaction equal to gas heating at 5e-4 mbar
s_imp_exp = 1e-16

[[channels]]
mode = "alpha"
gain = 4.8e-3
"#;

fn main() -> librator::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let setup = cfg.to_setup()?;
    let mode = &setup.modes[0];

    // off_time is capped per pressure point at 0.1 equivalent damping times,
    // so each window stays in the near-linear growth regime.
    let reheat = ReheatConfig {
        off_time: 1.0,
        on_time: 4.0e-3,
        cycles: 300,
        lockin_bandwidth: 2.0e4,
        settle_time: 0.4,
    };
    let pressures = [1.0e-5, 3.2e-5, 1.0e-4, 3.2e-4, 1.0e-3];
    let r = run_heating_vs_pressure(&setup, &pressures, &reheat, 0)?;

    println!("{:>10}  {:>12}  {:>10}", "p [mbar]", "rate [V^2/s]", "t_off [ms]");
    for &(p, g, _, t_off) in &r.rows {
        println!("{p:>10.1e}  {g:>12.4e}  {:>10.3}", t_off * 1e3);
    }

    let c_sq = mode.calibration * mode.calibration;
    let a_expected = mode.gamma_ref / mode.p_ref * KB * setup.env.t_bath * c_sq
        / (mode.inertia * mode.omega0 * mode.omega0);
    let res_expected = setup.s_ba[0] * c_sq
        / (4.0 * mode.inertia * mode.inertia * mode.omega0 * mode.omega0);

    println!("\nfitted slope a:      {:.4e} V^2/(s mbar)  (analytic {:.4e})", r.fit.slope, a_expected);
    println!("fitted residual:     {:.4e} V^2/s          (analytic {:.4e})", r.fit.intercept, res_expected);
    Ok(())
}
