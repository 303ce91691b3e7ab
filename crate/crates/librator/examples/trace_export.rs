//! Deterministic persistence: binary traces with sidecars, PSD CSVs, and
//! the run summary.
//!
//! Simulates a short trajectory, writes the detector trace as little-endian
//! f64 with JSON sidecar metadata, exports its Welch PSD as a CSV with
//! header and units rows, and demonstrates that re-running with the same
//! seed reproduces the files byte for byte.
//!
//! Run with: cargo run --release --example trace_export

use librator::analysis::{welch_psd, WindowKind};
use librator::config::parse_config;
use librator::feedback::Schedule;
use librator::io::{read_trace, write_psd_csv, write_trace};

const CONFIG: &str = r#"
seed = 3
[environment]
pressure_mbar = 1e-2
t_bath = 295.0

[[modes]]
label = "alpha"
inertia = 1e-30
frequency = 330.4e3
gamma_ref = 2e4
p_ref = 1.0
s_imp_exp = 1e-14

[sim]
duration = 0.01
"#;

fn main() -> librator::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let setup = cfg.to_setup()?;
    let dir = std::env::temp_dir().join("librator_trace_export");
    std::fs::create_dir_all(&dir)?;

    let mut files = Vec::new();
    for run in 0..2 {
        let rec = setup.run(Schedule::empty(), setup.sim.duration, setup.env.pressure_mbar, 0)?;
        let trace_path = dir.join(format!("detector_alpha_{run}.f64"));
        write_trace(&trace_path, &rec.detector[0], "detector_alpha", "V")?;
        let psd = welch_psd(&rec.detector[0], 4096, 0.5, WindowKind::Hann)?;
        let csv_path = dir.join(format!("psd_alpha_{run}.csv"));
        write_psd_csv(&csv_path, &psd, "V^2/Hz")?;
        files.push((trace_path, csv_path));
    }

    let (trace, meta) = read_trace(&files[0].0)?;
    println!("trace: {} samples of {} [{}] at {:.3e} Hz", trace.len(), meta.name, meta.unit, meta.sample_rate);
    println!("sidecar convention: {}", meta.psd_convention);

    let same_trace = std::fs::read(&files[0].0)? == std::fs::read(&files[1].0)?;
    let same_csv = std::fs::read(&files[0].1)? == std::fs::read(&files[1].1)?;
    println!("identical seed, identical trace bytes: {same_trace}");
    println!("identical seed, identical CSV bytes:   {same_csv}");
    assert!(same_trace && same_csv);
    Ok(())
}
