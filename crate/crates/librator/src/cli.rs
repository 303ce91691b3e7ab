//! Command-line entry points.
//!
//! Every subcommand loads a [`RunConfig`](crate::config::RunConfig),
//! applies flag overrides, runs one experiment, and writes its artifacts
//! plus a machine-readable `summary.json` into the output directory.
//!
//! Flags (also settable via environment variables with prefix `LIBRATOR_`):
//! `--config PATH`, `--seed N`, `--out DIR`, `--pressures LIST` (comma
//! separated, mbar), `--jobs N` (worker threads).
//!
//! Exit codes: 0 success; 1 configuration or input error; 2 runtime
//! failure; 3 sweep completed with some failed points (partial results
//! written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    lockin_energy, welch_psd, Timetrace, WindowKind, PSD_CONVENTION,
};
use crate::config::{load_config, RunConfig};
use crate::dynamics::{simulate, NoFeedback, SimConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    estimate_efficiency, estimate_efficiency_via_psd_product, run_cooling_sweep,
    run_efficiency_pipeline, run_heating_vs_pressure, run_reheating, tune_feedback_phase,
    EfficiencyInputs, Setup,
};
use crate::io::{write_csv, write_psd_csv, write_trace, CsvTable, CsvValue, RunSummary};
use crate::detection::DetectorChannel;
use crate::physics::{
    damping_from_pressure, min_occupation_from_efficiency, phonon_occupation, Environment,
    ModeParams, NoiseBudget, KB,
};
use crate::rng::{stream, NoiseKind};

#[derive(Parser)]
#[command(
    name = "librator",
    version,
    about = "Simulator and analysis toolkit for parametric feedback cooling of libration modes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, env = "LIBRATOR_CONFIG")]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long, env = "LIBRATOR_SEED")]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, env = "LIBRATOR_OUT")]
    out: Option<PathBuf>,
    /// Override the sweep pressure list, mbar.
    #[arg(long, env = "LIBRATOR_PRESSURES", value_delimiter = ',')]
    pressures: Option<Vec<f64>>,
    /// Worker threads for parallel sweep points.
    #[arg(long, env = "LIBRATOR_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write the raw traces.
    Simulate(Common),
    /// Integrate one trajectory and write Welch PSDs of the detector channels.
    Psd(Common),
    /// Steady-state cooling temperatures over a pressure list.
    CoolSweep(Common),
    /// Reheating protocol: averaged feedback-off energy growth and its rate.
    Reheat(Common),
    /// Reheating rate versus pressure and the linear pressure-law fit.
    HeatingSweep(Common),
    /// End-to-end measurement-efficiency estimate.
    Efficiency(Common),
    /// Run the built-in analytic invariant suite (no config needed).
    Selftest {
        #[arg(long, env = "LIBRATOR_JOBS")]
        jobs: Option<usize>,
    },
}

/// Parse arguments from the process environment and run.
pub fn main() -> ExitCode {
    run(Cli::parse())
}

fn exit(code: u8) -> ExitCode {
    ExitCode::from(code)
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Selftest { jobs } => {
            init_pool(jobs);
            return if selftest() { exit(0) } else { exit(2) };
        }
        Command::Simulate(c) => with_config(c, cmd_simulate),
        Command::Psd(c) => with_config(c, cmd_psd),
        Command::CoolSweep(c) => with_config(c, cmd_cool_sweep),
        Command::Reheat(c) => with_config(c, cmd_reheat),
        Command::HeatingSweep(c) => with_config(c, cmd_heating_sweep),
        Command::Efficiency(c) => with_config(c, cmd_efficiency),
    };
    match result {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config { .. } | Error::TomlParse(_) | Error::InvalidInput(_) => 1,
                _ => 2,
            };
            exit(code)
        }
    }
}

fn init_pool(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // ignore "already initialized" (tests may run several commands in
        // one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn with_config(common: Common, f: fn(&RunConfig, &Path) -> Result<u8>) -> Result<u8> {
    init_pool(common.jobs);
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(p) = &common.pressures {
        cfg.pressures = p.clone();
    }
    let cfg = cfg.resolve()?;
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out)?;
    f(&cfg, &out)
}

fn finish(summary: &mut RunSummary, out: &Path) -> Result<u8> {
    summary.artifacts.push("summary.json".into());
    summary.write(&out.join("summary.json"))?;
    println!("wrote {}", out.join("summary.json").display());
    Ok(0)
}

/// First enabled feedback channel — the one single-channel protocols act on.
fn active_channel(setup: &Setup) -> Result<usize> {
    setup
        .channels
        .iter()
        .position(|c| c.enabled)
        .ok_or_else(|| Error::config("channels", "no enabled feedback channel"))
}

fn sweep_pressures(cfg: &RunConfig) -> Result<Vec<f64>> {
    if cfg.pressures.is_empty() {
        return Err(Error::config(
            "pressures",
            "sweep commands need a pressure list (config key `pressures` or --pressures)",
        ));
    }
    Ok(cfg.pressures.clone())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let setup = cfg.to_setup()?;
    let rec = setup.run(
        cfg.to_schedule()?,
        setup.sim.duration,
        setup.env.pressure_mbar,
        0,
    )?;
    let mut summary = RunSummary::new("simulate", cfg);
    for (i, m) in setup.modes.iter().enumerate() {
        for (trace, prefix, unit) in [
            (&rec.theta[i], "theta", "rad"),
            (&rec.detector[i], "detector", "V"),
        ] {
            let name = format!("{prefix}_{}", m.label);
            let file = format!("{name}.f64");
            write_trace(&out.join(&file), trace, &name, unit)?;
            summary.artifacts.push(file.clone());
            summary.artifacts.push(format!("{file}.json"));
        }
        summary
            .derived
            .insert(format!("detector_mean_square_{}", m.label), rec.detector[i].mean_square());
    }
    write_trace(&out.join("actuator.f64"), &rec.actuator, "actuator", "1")?;
    summary.artifacts.push("actuator.f64".into());
    summary.artifacts.push("actuator.f64.json".into());
    finish(&mut summary, out)
}

fn cmd_psd(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let setup = cfg.to_setup()?;
    let rec = setup.run(
        cfg.to_schedule()?,
        setup.sim.duration,
        setup.env.pressure_mbar,
        0,
    )?;
    let window = cfg.psd.window_kind()?;
    let mut summary = RunSummary::new("psd", cfg);
    for (i, m) in setup.modes.iter().enumerate() {
        let psd = welch_psd(
            &rec.detector[i],
            cfg.psd.segment_length.min(rec.detector[i].len()),
            cfg.psd.overlap,
            window,
        )?;
        let file = format!("psd_{}.csv", m.label);
        write_psd_csv(&out.join(&file), &psd, "V^2/Hz")?;
        summary.artifacts.push(file);
        summary
            .derived
            .insert(format!("total_power_{}", m.label), psd.total_power());
    }
    finish(&mut summary, out)
}

fn cmd_cool_sweep(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let mut setup = cfg.to_setup()?;
    let mut summary = RunSummary::new("cool-sweep", cfg);
    if cfg.tune.auto {
        for ci in 0..setup.channels.len() {
            if !setup.channels[ci].enabled {
                continue;
            }
            let (psi, _) = tune_feedback_phase(
                &setup,
                ci,
                cfg.tune.points,
                cfg.tune.settle_time,
                cfg.tune.measure_time,
            )?;
            let label = setup.modes[setup.channels[ci].mode_index].label.clone();
            summary.derived.insert(format!("psi_{label}"), psi);
            setup.channels[ci].phase_psi = psi;
        }
    }
    let rows = run_cooling_sweep(&setup, &sweep_pressures(cfg)?, &cfg.sweep)?;
    let mut table = CsvTable::new(&[
        ("pressure", "mbar"),
        ("mode", "-"),
        ("temperature", "K"),
        ("n_bar", "1"),
        ("error", "-"),
    ]);
    let mut failed = 0usize;
    for r in &rows {
        if r.error.is_some() {
            failed += 1;
        }
        table.push(vec![
            CsvValue::Float(r.pressure_mbar),
            CsvValue::Text(r.mode.clone()),
            CsvValue::Float(r.temperature.unwrap_or(f64::NAN)),
            CsvValue::Float(r.n_bar.unwrap_or(f64::NAN)),
            CsvValue::Text(r.error.clone().unwrap_or_default()),
        ])?;
    }
    write_csv(&out.join("cool_sweep.csv"), &table)?;
    summary.artifacts.push("cool_sweep.csv".into());
    for r in &rows {
        if let (Some(t), Some(n)) = (r.temperature, r.n_bar) {
            summary
                .derived
                .insert(format!("T_{}_{:e}", r.mode, r.pressure_mbar), t);
            summary
                .derived
                .insert(format!("n_bar_{}_{:e}", r.mode, r.pressure_mbar), n);
        }
    }
    if failed == rows.len() {
        finish(&mut summary, out)?;
        eprintln!("error: every sweep point failed");
        return Ok(2);
    }
    let code = if failed > 0 { 3 } else { 0 };
    finish(&mut summary, out)?;
    Ok(code)
}

fn cmd_reheat(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let setup = cfg.to_setup()?;
    let channel = active_channel(&setup)?;
    let r = run_reheating(&cfg.reheat, &setup, channel, 0)?;
    let mut table = CsvTable::new(&[("time", "s"), ("energy", "V^2")]);
    for (k, &e) in r.energy_avg.samples.iter().enumerate() {
        table.push(vec![
            CsvValue::Float(k as f64 / r.energy_avg.sample_rate),
            CsvValue::Float(e),
        ])?;
    }
    write_csv(&out.join("reheat_energy.csv"), &table)?;
    let mut summary = RunSummary::new("reheat", cfg);
    summary.artifacts.push("reheat_energy.csv".into());
    summary.derived.insert("e0".into(), r.e0);
    summary.derived.insert("gamma_exp".into(), r.gamma_exp);
    summary.derived.insert("gamma_exp_stderr".into(), r.gamma_stderr);
    summary.derived.insert("cycles".into(), r.cycles as f64);
    finish(&mut summary, out)
}

fn cmd_heating_sweep(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let setup = cfg.to_setup()?;
    let channel = active_channel(&setup)?;
    let r = run_heating_vs_pressure(&setup, &sweep_pressures(cfg)?, &cfg.reheat, channel)?;
    let mut table = CsvTable::new(&[
        ("pressure", "mbar"),
        ("gamma_exp", "V^2/s"),
        ("gamma_exp_stderr", "V^2/s"),
        ("off_time", "s"),
    ]);
    for &(p, g, s, t_off) in &r.rows {
        table.push(vec![
            CsvValue::Float(p),
            CsvValue::Float(g),
            CsvValue::Float(s),
            CsvValue::Float(t_off),
        ])?;
    }
    write_csv(&out.join("heating_sweep.csv"), &table)?;
    let mut summary = RunSummary::new("heating-sweep", cfg);
    summary.artifacts.push("heating_sweep.csv".into());
    summary.derived.insert("a".into(), r.fit.slope);
    summary.derived.insert("a_stderr".into(), r.fit.slope_stderr);
    summary.derived.insert("gamma_res".into(), r.fit.intercept);
    summary
        .derived
        .insert("gamma_res_stderr".into(), r.fit.intercept_stderr);
    finish(&mut summary, out)
}

fn cmd_efficiency(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let setup = cfg.to_setup()?;
    let channel = active_channel(&setup)?;
    let report = run_efficiency_pipeline(&setup, channel, &cfg.to_calibration()?, &cfg.reheat, 0)?;
    let mut table = CsvTable::new(&[
        ("v_cal_sq", "V^2"),
        ("c_sq", "V^2/rad^2"),
        ("gamma_exp", "V^2/s"),
        ("eta", "1"),
        ("n_min", "1"),
    ]);
    table.push(vec![
        CsvValue::Float(report.v_cal_sq),
        CsvValue::Float(report.c_sq),
        CsvValue::Float(report.gamma_exp),
        CsvValue::Float(report.eta),
        CsvValue::Float(report.n_min),
    ])?;
    write_csv(&out.join("efficiency.csv"), &table)?;
    println!(
        "eta = {:.3e}   n_min = {:.3}",
        report.eta, report.n_min
    );
    let mut summary = RunSummary::new("efficiency", cfg);
    summary.artifacts.push("efficiency.csv".into());
    summary.derived.insert("v_cal_sq".into(), report.v_cal_sq);
    summary.derived.insert("c_sq".into(), report.c_sq);
    summary.derived.insert("gamma_exp".into(), report.gamma_exp);
    summary
        .derived
        .insert("gamma_exp_stderr".into(), report.gamma_stderr);
    summary.derived.insert("eta".into(), report.eta);
    summary.derived.insert("eta_true".into(), report.eta_true);
    summary.derived.insert("n_min".into(), report.n_min);
    finish(&mut summary, out)
}

// ---------------------------------------------------------------------------
// selftest

struct Check {
    name: &'static str,
    run: fn() -> std::result::Result<(), String>,
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(a.abs())
}

fn selftest_mode() -> ModeParams {
    ModeParams {
        label: "alpha".into(),
        inertia: 1.0e-30,
        omega0: std::f64::consts::TAU * 330.4e3,
        gamma_ref: 2.0e4,
        p_ref: 1.0,
        calibration: 1.0,
    }
}

fn check_damping_linearity() -> std::result::Result<(), String> {
    let m = selftest_mode();
    let g1 = damping_from_pressure(&m, 1.0e-3).map_err(|e| e.to_string())?;
    let g2 = damping_from_pressure(&m, 2.0e-3).map_err(|e| e.to_string())?;
    ensure!(close(g2, 2.0 * g1, 1e-12), "damping not linear in pressure: {g1} vs {g2}");
    Ok(())
}

fn check_cooling_limit() -> std::result::Result<(), String> {
    let n1 = min_occupation_from_efficiency(1.0).map_err(|e| e.to_string())?;
    ensure!(n1 == 0.0, "n_min(1) = {n1}, want exactly 0");
    let n = min_occupation_from_efficiency(0.005).map_err(|e| e.to_string())?;
    ensure!(close(n, 6.571, 1e-4), "n_min(0.005) = {n}, want 6.571");
    Ok(())
}

fn check_occupation_round_trip() -> std::result::Result<(), String> {
    let m = selftest_mode();
    let n = phonon_occupation(1.34e-3, m.omega0).map_err(|e| e.to_string())?;
    ensure!((n - 84.0).abs() < 1.0, "n_bar(1.34 mK) = {n}, want 84 +- 1");
    Ok(())
}

fn check_parseval() -> std::result::Result<(), String> {
    use rand::Rng;
    let mut rng = stream(12345, 0, 0, NoiseKind::ThermalTorque);
    let n = 64 * 1024;
    let samples: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let trace = Timetrace::new(1.0e4, 0.0, samples).map_err(|e| e.to_string())?;
    let var = trace.variance();
    let psd = welch_psd(&trace, 1024, 0.5, WindowKind::Hann).map_err(|e| e.to_string())?;
    let total = psd.total_power();
    ensure!(close(total, var, 0.02), "Parseval: integral {total} vs variance {var}");
    Ok(())
}

fn check_conservative_integrator() -> std::result::Result<(), String> {
    let m = selftest_mode();
    let env = Environment { pressure_mbar: 1.0e-12, t_bath: 295.0 };
    let modes = vec![m.clone()];
    let mut cfg = SimConfig::for_modes(&modes, 2.0e-3, 9).map_err(|e| e.to_string())?;
    cfg.initial_states = Some(vec![crate::dynamics::OscState { theta: 1.0e-3, theta_dot: 0.0 }]);
    let budgets = vec![NoiseBudget::new(&m, 1.0e-12, 295.0, 0.0, 0.0).map_err(|e| e.to_string())?];
    let det = vec![DetectorChannel::new(1.0, 0.0).map_err(|e| e.to_string())?];
    let rec = simulate(&cfg, &modes, &env, &budgets, &det, &mut NoFeedback)
        .map_err(|e| e.to_string())?;
    let e0 = rec.theta[0].samples[0];
    let e1 = *rec.theta[0].samples.last().unwrap();
    ensure!(
        e0.abs() <= 1.0e-3 * 1.001 && e1.abs() <= 1.0e-3 * 1.2,
        "free oscillation amplitude drifted: start {e0:.3e}, end {e1:.3e}"
    );
    Ok(())
}

fn check_lockin_tone() -> std::result::Result<(), String> {
    let fs = 1.0e6;
    let f0 = 5.0e4;
    let a = 0.3;
    let n = 200_000;
    let samples: Vec<f64> = (0..n)
        .map(|k| a * (std::f64::consts::TAU * f0 * k as f64 / fs).sin())
        .collect();
    let trace = Timetrace::new(fs, 0.0, samples).map_err(|e| e.to_string())?;
    let energy = lockin_energy(&trace, f0, 1.0e3).map_err(|e| e.to_string())?;
    let tail = &energy.samples[energy.len() / 2..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    ensure!(
        close(mean, a * a / 2.0, 0.01),
        "lock-in energy {mean} vs A^2/2 = {}",
        a * a / 2.0
    );
    Ok(())
}

fn check_rng_determinism() -> std::result::Result<(), String> {
    use rand::Rng;
    let draw = || -> Vec<f64> {
        let mut rng = stream(7, 3, 1, NoiseKind::Imprecision);
        (0..16).map(|_| rng.gen::<f64>()).collect()
    };
    ensure!(draw() == draw(), "identical stream parameters gave different draws");
    let mut other = stream(7, 3, 1, NoiseKind::ThermalTorque);
    let x: f64 = other.gen();
    ensure!(x != draw()[0], "distinct noise kinds share a stream");
    Ok(())
}

fn check_efficiency_identity() -> std::result::Result<(), String> {
    let inp = EfficiencyInputs {
        omega: std::f64::consts::TAU * 330.4e3,
        v_cal_sq: 3.2e-4,
        t_cal: 295.0,
        gamma_exp: 5.0e-5,
        s_imp_exp: 2.0e-15,
    };
    let direct = estimate_efficiency(&inp).map_err(|e| e.to_string())?;
    let via = estimate_efficiency_via_psd_product(&inp, 1.0e-31).map_err(|e| e.to_string())?;
    ensure!(close(direct, via, 1e-12), "efficiency routes disagree: {direct} vs {via}");
    Ok(())
}

fn check_equipartition_scale() -> std::result::Result<(), String> {
    let m = selftest_mode();
    let expected = KB * 295.0 / (m.inertia * m.omega0 * m.omega0);
    ensure!(
        expected > 0.0 && expected.sqrt() < 0.1,
        "desk-scale theta_rms {:.3e} rad out of range",
        expected.sqrt()
    );
    Ok(())
}

const CHECKS: &[Check] = &[
    Check { name: "gas damping linear in pressure", run: check_damping_linearity },
    Check { name: "cooling-limit formula", run: check_cooling_limit },
    Check { name: "phonon occupation round trip", run: check_occupation_round_trip },
    Check { name: "Welch PSD Parseval", run: check_parseval },
    Check { name: "conservative-limit integrator stability", run: check_conservative_integrator },
    Check { name: "lock-in tone energy", run: check_lockin_tone },
    Check { name: "seeded RNG stream determinism", run: check_rng_determinism },
    Check { name: "efficiency estimator dual-route identity", run: check_efficiency_identity },
    Check { name: "desk-scale small-angle regime", run: check_equipartition_scale },
];

/// Run every built-in invariant check, printing one pass/fail line each.
/// Returns true when all pass.
pub fn selftest() -> bool {
    println!("PSD convention: {PSD_CONVENTION}");
    let mut ok = true;
    for check in CHECKS {
        match (check.run)() {
            Ok(()) => println!("PASS  {}", check.name),
            Err(msg) => {
                ok = false;
                println!("FAIL  {} ({msg})", check.name);
            }
        }
    }
    ok
}
