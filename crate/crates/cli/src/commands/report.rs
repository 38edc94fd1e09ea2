use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Args;
use serde::Serialize;
use svo_acc::metrics::{build_table_from_cells, MetricCell};
use svo_acc::model::SvoAngle;

use crate::common::{phi_label, print_stdout, render_tables};

/// Collate an evaluation directory into one human-readable summary.
#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory produced by `evaluate`.
    #[arg(long)]
    pub dir: PathBuf,
}

/// Parses metrics.csv back into per-angle cells, vehicle-major.
fn parse_metrics(body: &str) -> Result<(Vec<SvoAngle>, Vec<u32>, Vec<Vec<MetricCell>>)> {
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| anyhow!("metrics.csv is empty"))?;
    if header != "vehicle_id,phi,energy,avg_speed_mps" {
        bail!("metrics.csv has unexpected header {header:?}");
    }
    let mut phis: Vec<SvoAngle> = Vec::new();
    let mut ids: Vec<u32> = Vec::new();
    let mut cells: Vec<(usize, u32, MetricCell)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("metrics.csv line {} is malformed", n + 2);
        }
        let id: u32 = parts[0].parse()?;
        let phi = SvoAngle::new(parts[1].parse()?)?;
        let cell = MetricCell { energy: parts[2].parse()?, avg_speed: parts[3].parse()? };
        let phi_index = match phis.iter().position(|p| p.radians() == phi.radians()) {
            Some(i) => i,
            None => {
                phis.push(phi);
                phis.len() - 1
            }
        };
        if !ids.contains(&id) {
            ids.push(id);
        }
        cells.push((phi_index, id, cell));
    }
    let mut by_vehicle: Vec<Vec<MetricCell>> =
        vec![vec![MetricCell { energy: 0.0, avg_speed: 0.0 }; phis.len()]; ids.len()];
    for (phi_index, id, cell) in cells {
        let row = ids.iter().position(|i| *i == id).expect("id recorded above");
        by_vehicle[row][phi_index] = cell;
    }
    Ok((phis, ids, by_vehicle))
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let metrics_path = args.dir.join("metrics.csv");
    if !metrics_path.exists() {
        bail!("missing artifact: {}", metrics_path.display());
    }
    let body = std::fs::read_to_string(&metrics_path)?;
    let (phis, ids, cells) = parse_metrics(&body)?;
    if phis.is_empty() {
        bail!("{} contains no rows", metrics_path.display());
    }
    // The smallest angle present is the comparison baseline.
    let baseline = *phis
        .iter()
        .min_by(|a, b| a.radians().total_cmp(&b.radians()))
        .expect("non-empty");
    let table = build_table_from_cells(&phis, baseline, &ids, &cells)?;

    let mut out = format!(
        "Evaluation summary ({} preference angles, baseline phi={})\n\n",
        phis.len(),
        phi_label(baseline)
    );
    out.push_str(&render_tables(&table));

    // Headline deltas: the extreme angle against the baseline.
    let top_index = phis
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.radians().total_cmp(&b.radians()))
        .map(|(i, _)| i)
        .expect("non-empty");
    if phis[top_index].radians() != baseline.radians() {
        out.push_str(&format!(
            "\nHeadline (phi={} vs phi={}):\n",
            phi_label(phis[top_index]),
            phi_label(baseline)
        ));
        for row in &table.rows {
            let energy = row.energy_change[top_index]
                .map(|p| format!("{p:+.2}%"))
                .unwrap_or_else(|| "undef".to_string());
            let speed = row.speed_change[top_index]
                .map(|p| format!("{p:+.2}%"))
                .unwrap_or_else(|| "undef".to_string());
            out.push_str(&format!(
                "  v{}: energy {energy}, average speed {speed}\n",
                row.vehicle_id
            ));
        }
    }
    print_stdout(&out);
    Ok(())
}
