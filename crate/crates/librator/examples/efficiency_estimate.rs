//! End-to-end measurement-efficiency estimate from measurable quantities
//! only.
//!
//! Calibrates the detector against an uncooled equipartition run, measures
//! the heating rate with the reheating protocol, and combines them with
//! the imprecision floor into the efficiency — a formula in which the
//! moment of inertia never appears. The estimate is compared against the
//! ground truth constructed into the configuration, and the corresponding
//! cooling limit is printed.
//!
//! Run with: cargo run --release --example efficiency_estimate

use std::path::Path;

use librator::config::load_config;
use librator::experiments::run_efficiency_pipeline;

fn main() -> librator::Result<()> {
    let cfg = load_config(Path::new("configs/demo.toml"))?;
    let setup = cfg.to_setup()?;

    let report = run_efficiency_pipeline(&setup, 0, &cfg.to_calibration()?, &cfg.reheat, 0)?;

    println!("calibration peak:   {:.4e} V^2", report.v_cal_sq);
    println!("calibration c^2:    {:.4e} V^2/rad^2", report.c_sq);
    println!("heating rate:       {:.4e} +- {:.1e} V^2/s", report.gamma_exp, report.gamma_stderr);
    println!();
    println!("estimated eta:      {:.4e}", report.eta);
    println!("ground truth eta:   {:.4e}", report.eta_true);
    println!("relative error:     {:+.2}%", (report.eta / report.eta_true - 1.0) * 100.0);
    println!("cooling limit:      n_min = {:.3} phonons", report.n_min);
    Ok(())
}
