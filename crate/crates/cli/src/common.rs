//! Shared plumbing for the subcommands: scenario loading and table
//! rendering.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use svo_acc::ingest;
use svo_acc::metrics::EvaluationTable;
use svo_acc::model::{IdmParams, SimConfig, SvoAngle, TrajectorySeries};
use svo_acc::training::Scenario;

/// Loads trajectory series, optionally resampling and smoothing.
pub fn load_series(
    path: &Path,
    resample_to: Option<f64>,
    smooth_window: usize,
) -> Result<Vec<TrajectorySeries>> {
    let mut series = ingest::load_csv(path, resample_to)
        .with_context(|| format!("loading {}", path.display()))?;
    if smooth_window > 1 {
        series = series
            .iter()
            .map(|s| ingest::smooth(s, smooth_window))
            .collect::<svo_acc::Result<_>>()?;
    }
    Ok(series)
}

/// Assembles a training/evaluation scenario from a trajectory CSV and a
/// parameter CSV. Followers are every vehicle from the third onward; their
/// parameters are matched by vehicle id.
pub fn load_scenario(
    scenario_path: &Path,
    params_path: &Path,
    resample_to: Option<f64>,
    smooth_window: usize,
) -> Result<(Scenario, Vec<u32>)> {
    let series = load_series(scenario_path, resample_to, smooth_window)?;
    if series.len() < 3 {
        bail!(
            "{} holds {} vehicles; a scenario needs a leader, the AV slot, and followers",
            scenario_path.display(),
            series.len()
        );
    }
    let params = ingest::load_params_csv(params_path)
        .with_context(|| format!("loading {}", params_path.display()))?;
    let followers: Vec<IdmParams> = series[2..]
        .iter()
        .map(|s| {
            params
                .iter()
                .find(|(id, _)| *id == s.vehicle_id)
                .map(|(_, p)| *p)
                .ok_or_else(|| {
                    anyhow!(
                        "no parameters for vehicle {} in {}",
                        s.vehicle_id,
                        params_path.display()
                    )
                })
        })
        .collect::<Result<_>>()?;
    let ids = series.iter().map(|s| s.vehicle_id).collect();
    let scenario = Scenario::from_series(&series, &followers, SimConfig::DEFAULT_VEHICLE_LENGTH)?;
    Ok((scenario, ids))
}

/// Fixed-width angle label used in file names and table headers.
pub fn phi_label(phi: SvoAngle) -> String {
    format!("{:.4}", phi.radians())
}

/// Writes to stdout, exiting quietly when the downstream pipe has closed.
pub fn print_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout();
    if out.write_all(text.as_bytes()).is_err() || out.flush().is_err() {
        std::process::exit(0);
    }
}

fn pct_cell(value: Option<f64>) -> String {
    match value {
        Some(p) => format!("{p:+.2}%"),
        None => "undef".to_string(),
    }
}

/// Aligned text rendering of raw metrics plus both percentage-change tables.
pub fn render_tables(table: &EvaluationTable) -> String {
    let mut out = String::new();
    let labels: Vec<String> = table.phis.iter().map(|p| phi_label(*p)).collect();
    let baseline = &labels[table.baseline_index];

    out.push_str("Raw metrics per preference angle (energy indicator | average speed m/s)\n");
    out.push_str(&format!("{:<10}", "Vehicle"));
    for l in &labels {
        out.push_str(&format!("{:>26}", format!("phi={l}")));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("{:<10}", format!("v{}", row.vehicle_id)));
        for cell in &row.cells {
            out.push_str(&format!(
                "{:>26}",
                format!("{:.4} | {:.4}", cell.energy, cell.avg_speed)
            ));
        }
        out.push('\n');
    }

    for (title, pick) in [
        ("energy consumption indicator", 0usize),
        ("average speed", 1usize),
    ] {
        out.push_str(&format!(
            "\nPercentage change in {title} relative to phi={baseline}\n"
        ));
        out.push_str(&format!("{:<10}", "Vehicle"));
        for (i, l) in labels.iter().enumerate() {
            if i != table.baseline_index {
                out.push_str(&format!("{:>14}", format!("phi={l}")));
            }
        }
        out.push('\n');
        for row in &table.rows {
            out.push_str(&format!("{:<10}", format!("v{}", row.vehicle_id)));
            let changes = if pick == 0 { &row.energy_change } else { &row.speed_change };
            for (i, change) in changes.iter().enumerate() {
                if i != table.baseline_index {
                    out.push_str(&format!("{:>14}", pct_cell(*change)));
                }
            }
            out.push('\n');
        }
    }

    if !table.warnings.is_empty() {
        out.push_str("\nWarnings:\n");
        for w in &table.warnings {
            out.push_str(&format!("  - {w}\n"));
        }
    }
    out
}
