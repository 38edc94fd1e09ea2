use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Args;
use serde::Serialize;
use svo_acc::calibration::{grid_search_calibrate, CalibrationReport, GridSpec};
use svo_acc::ingest;
use svo_acc::model::SimConfig;

use crate::args::parse_axis;
use crate::common::load_series;
use crate::manifest::RunManifest;

/// Fit car-following parameters per follower by grid search over the
/// spacing RMSE.
#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Trajectory CSV with at least two vehicles.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Resample input onto this interval (seconds).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Odd moving-average window; 1 disables smoothing.
    #[arg(long, default_value_t = 1)]
    pub smooth_window: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Vehicle ids to calibrate (comma list); default: every non-leader.
    #[arg(long)]
    pub vehicles: Option<String>,
    /// Evaluate the grid serially instead of in parallel.
    #[arg(long)]
    pub serial: bool,
    #[arg(long, default_value = "5.0")]
    pub grid_v0: String,
    #[arg(long, default_value = "0.5:2.0:0.05")]
    pub grid_a_max: String,
    #[arg(long, default_value = "0.5:3.0:0.25")]
    pub grid_b: String,
    #[arg(long, default_value = "3.0")]
    pub grid_s0: String,
    #[arg(long, default_value = "1.5")]
    pub grid_tau: String,
    #[arg(long, default_value = "1.0:5.0:0.25")]
    pub grid_delta: String,
}

fn render_report_table(rows: &[(u32, &CalibrationReport)]) -> String {
    let mut out = String::new();
    out.push_str("Calibrated car-following parameters and spacing RMSE\n\n");
    writeln!(
        out,
        "{:<9}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>12}",
        "Vehicle", "v0", "a_max", "b", "s0", "tau", "delta", "RMSE (m)"
    )
    .unwrap();
    for (id, report) in rows {
        let p = report.best_params;
        writeln!(
            out,
            "{:<9}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>12.4}",
            format!("v{id}"),
            p.v0,
            p.a_max,
            p.b,
            p.s0,
            p.tau,
            p.delta,
            report.rmse
        )
        .unwrap();
    }
    out.push_str("\nRunner-up grid points per vehicle:\n");
    for (id, report) in rows {
        writeln!(out, "  v{id} ({} grid points evaluated)", report.evaluated_count).unwrap();
        for (p, rmse) in &report.runner_ups {
            writeln!(
                out,
                "    v0={:.2} a_max={:.2} b={:.2} s0={:.2} tau={:.2} delta={:.2} rmse={:.4}",
                p.v0, p.a_max, p.b, p.s0, p.tau, p.delta, rmse
            )
            .unwrap();
        }
    }
    out
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let grid = GridSpec {
        v0: parse_axis(&args.grid_v0)?,
        a_max: parse_axis(&args.grid_a_max)?,
        b: parse_axis(&args.grid_b)?,
        s0: parse_axis(&args.grid_s0)?,
        tau: parse_axis(&args.grid_tau)?,
        delta: parse_axis(&args.grid_delta)?,
    };
    grid.validate()?;

    let series = load_series(&args.data, args.dt, args.smooth_window)?;
    if series.len() < 2 {
        bail!("{} holds fewer than two vehicles", args.data.display());
    }
    let targets: Vec<u32> = match &args.vehicles {
        Some(text) => text
            .split(',')
            .map(|v| v.trim().parse::<u32>().map_err(|e| anyhow!("{e}: {v:?}")))
            .collect::<Result<_>>()?,
        None => series[1..].iter().map(|s| s.vehicle_id).collect(),
    };

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("calibrate", args.seed, args)?;
    manifest.add_input(&args.data)?;
    manifest.add_outputs(&["calibration.txt", "calibration.csv", "idm_params.csv"]);
    manifest.write(&args.out)?;

    let dt = series[0].dt;
    let cfg = SimConfig::new(dt, 0.0)?;
    let mut reports: Vec<(u32, CalibrationReport)> = Vec::new();
    for id in &targets {
        let index = series
            .iter()
            .position(|s| s.vehicle_id == *id)
            .ok_or_else(|| anyhow!("vehicle {id} not present in {}", args.data.display()))?;
        if index == 0 {
            bail!("vehicle {id} is the platoon leader and has no predecessor to follow");
        }
        let lead = &series[index - 1];
        let observed = &series[index];
        let report = grid_search_calibrate(&grid, lead, observed, &cfg, !args.serial)?;
        println!(
            "v{id}: rmse {:.4} m over {} grid points",
            report.rmse, report.evaluated_count
        );
        reports.push((*id, report));
    }

    let rows: Vec<(u32, &CalibrationReport)> =
        reports.iter().map(|(id, r)| (*id, r)).collect();
    std::fs::write(args.out.join("calibration.txt"), render_report_table(&rows))?;

    let mut machine = String::from("vehicle_id,v0,a_max,b,s0,tau,delta,rmse_m,evaluated_count\n");
    for (id, r) in &reports {
        let p = r.best_params;
        writeln!(
            machine,
            "{id},{},{},{},{},{},{},{},{}",
            p.v0, p.a_max, p.b, p.s0, p.tau, p.delta, r.rmse, r.evaluated_count
        )
        .unwrap();
    }
    std::fs::write(args.out.join("calibration.csv"), machine)?;

    let param_rows: Vec<_> = reports.iter().map(|(id, r)| (*id, r.best_params)).collect();
    ingest::save_params_csv(args.out.join("idm_params.csv"), &param_rows)?;
    Ok(())
}
