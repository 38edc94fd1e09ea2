use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Args;
use serde::Serialize;
use svo_acc::controller::ControllerParams;
use svo_acc::dynamics::RolloutResult;
use svo_acc::ingest;
use svo_acc::metrics::{build_table, EvaluationTable};
use svo_acc::model::SvoAngle;
use svo_acc::training::{rollout_with_controller, Scenario};

use crate::args::{parse_phi, parse_phi_list};
use crate::common::{load_scenario, phi_label, print_stdout, render_tables};
use crate::manifest::RunManifest;

/// Roll out a trained controller across preference angles and report the
/// energy/speed trade-off tables.
#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Trained controller checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trajectory CSV of the scenario to evaluate on.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Car-following parameter CSV covering every follower vehicle id.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Resample input onto this interval (seconds).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Odd moving-average window; 1 disables smoothing.
    #[arg(long, default_value_t = 1)]
    pub smooth_window: usize,
    /// Preference angles to evaluate (comma list).
    #[arg(long, default_value = "0,pi/4,pi/2")]
    pub phi: String,
    /// Baseline angle for the percentage tables.
    #[arg(long, default_value = "0")]
    pub baseline: String,
}

pub struct Evaluation {
    pub table: EvaluationTable,
    pub rollouts: Vec<(SvoAngle, RolloutResult)>,
    pub vehicle_ids: Vec<u32>,
    pub dt: f64,
}

pub fn evaluate(
    params: &ControllerParams,
    scenario: &Scenario,
    ids: &[u32],
    phis: &[SvoAngle],
    baseline: SvoAngle,
) -> Result<Evaluation> {
    let sim = scenario.sim_config()?;
    let mut rollouts = Vec::with_capacity(phis.len());
    for &phi in phis {
        let rollout = rollout_with_controller(scenario, params, phi, &sim)?;
        rollouts.push((phi, rollout));
    }
    let table = build_table(&rollouts, baseline, ids, sim.dt)?;
    Ok(Evaluation { table, rollouts, vehicle_ids: ids.to_vec(), dt: sim.dt })
}

pub fn metrics_csv(evaluation: &Evaluation) -> String {
    let mut out = String::from("vehicle_id,phi,energy,avg_speed_mps\n");
    for (i, phi) in evaluation.table.phis.iter().enumerate() {
        for row in &evaluation.table.rows {
            writeln!(
                out,
                "{},{},{},{}",
                row.vehicle_id,
                phi.radians(),
                row.cells[i].energy,
                row.cells[i].avg_speed
            )
            .unwrap();
        }
    }
    out
}

fn change_csv(evaluation: &Evaluation, energy: bool) -> String {
    let mut out = String::from("vehicle_id,phi,percent_change\n");
    for (i, phi) in evaluation.table.phis.iter().enumerate() {
        for row in &evaluation.table.rows {
            let cell = if energy { row.energy_change[i] } else { row.speed_change[i] };
            let rendered = cell.map(|p| format!("{p}")).unwrap_or_default();
            writeln!(out, "{},{},{}", row.vehicle_id, phi.radians(), rendered).unwrap();
        }
    }
    out
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let controller = ControllerParams::load_from_path(&args.checkpoint)
        .map_err(|e| anyhow!("loading {}: {e}", args.checkpoint.display()))?;
    let (scenario, ids) =
        load_scenario(&args.scenario, &args.params, args.dt, args.smooth_window)?;
    let phis = parse_phi_list(&args.phi)?;
    let baseline = parse_phi(&args.baseline)?;

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("evaluate", args.seed, args)?;
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.scenario)?;
    manifest.add_input(&args.params)?;
    let trajectory_names: Vec<String> = phis
        .iter()
        .map(|p| format!("trajectory_phi_{}.csv", phi_label(*p)))
        .collect();
    let mut outputs: Vec<&str> =
        vec!["metrics.csv", "energy_change.csv", "speed_change.csv", "tables.txt"];
    let name_refs: Vec<&str> = trajectory_names.iter().map(|s| s.as_str()).collect();
    outputs.extend(name_refs);
    manifest.add_outputs(&outputs);
    manifest.write(&args.out)?;

    let evaluation = evaluate(&controller, &scenario, &ids, &phis, baseline)?;

    for ((phi, rollout), name) in evaluation.rollouts.iter().zip(&trajectory_names) {
        let series = rollout.to_trajectories(&ids, evaluation.dt)?;
        ingest::save_csv(args.out.join(name), &series)?;
        if let Some(event) = &rollout.collision {
            println!(
                "phi={}: spacing floor contact at t={:.1}s (vehicle {})",
                phi_label(*phi),
                event.time,
                evaluation.vehicle_ids[event.vehicle]
            );
        }
    }
    std::fs::write(args.out.join("metrics.csv"), metrics_csv(&evaluation))?;
    std::fs::write(args.out.join("energy_change.csv"), change_csv(&evaluation, true))?;
    std::fs::write(args.out.join("speed_change.csv"), change_csv(&evaluation, false))?;
    let tables = render_tables(&evaluation.table);
    std::fs::write(args.out.join("tables.txt"), &tables)?;
    print_stdout(&tables);
    Ok(())
}
