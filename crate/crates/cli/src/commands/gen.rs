use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use svo_acc::ingest::{self, ScenarioSpec};

use crate::args::{parse_leader, parse_spacings};
use crate::manifest::RunManifest;

/// Generate a deterministic synthetic scenario (trajectory CSV plus
/// car-following parameters).
#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Output directory for scenario.csv, idm_params.csv, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Sample interval in seconds.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Scenario duration in seconds.
    #[arg(long, default_value_t = 120.0)]
    pub duration: f64,
    /// Platoon size including the leader and the AV slot.
    #[arg(long, default_value_t = 5)]
    pub n_vehicles: usize,
    /// Leader profile: sinusoid:mean,amplitude,period | piecewise:dur:speed,... | csv:path
    #[arg(long, default_value = "sinusoid:2.5,1.5,60")]
    pub leader: String,
    /// Initial gap between the AV slot and the leader, meters.
    #[arg(long, default_value_t = ScenarioSpec::REFERENCE_AV_GAP)]
    pub av_gap: f64,
    /// Explicit initial spacings (comma list, length n_vehicles - 1);
    /// overrides --av-gap and the follower equilibria.
    #[arg(long)]
    pub spacings: Option<String>,
}

pub fn run(args: &GenArgs) -> Result<()> {
    if args.n_vehicles < 2 {
        bail!("--n-vehicles must be at least 2");
    }
    let leader = parse_leader(&args.leader)?;
    let defaults = ingest::default_follower_params();
    let follower_params: Vec<_> = (0..args.n_vehicles.saturating_sub(2))
        .map(|i| defaults[i % defaults.len()])
        .collect();
    let av_params = defaults[0];

    let mut spec = ScenarioSpec {
        n_vehicles: args.n_vehicles,
        leader,
        initial_spacings: None,
        follower_params,
        av_params,
        duration: args.duration,
        dt: args.dt,
        seed: args.seed,
    };
    let spacings = match &args.spacings {
        Some(text) => parse_spacings(text)?,
        None => {
            let v_init = spec.leader_initial_speed()?;
            let mut spacings = vec![args.av_gap];
            for p in &spec.follower_params {
                spacings.push(p.equilibrium_spacing(v_init).with_context(|| {
                    format!(
                        "no equilibrium spacing at initial speed {v_init}; \
                         pass explicit --spacings"
                    )
                })?);
            }
            spacings
        }
    };
    spec.initial_spacings = Some(spacings);
    spec.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("gen-synthetic", args.seed, args)?;
    if let ingest::LeaderProfile::Csv(path) = &spec.leader {
        manifest.add_input(path)?;
    }
    manifest.add_outputs(&["scenario.csv", "idm_params.csv"]);
    manifest.write(&args.out)?;

    let synth = ingest::gen_synthetic(&spec)?;
    ingest::save_csv(args.out.join("scenario.csv"), &synth.trajectories)?;
    let mut param_rows = vec![(synth.trajectories[1].vehicle_id, synth.av_params)];
    for (series, params) in synth.trajectories[2..].iter().zip(&synth.follower_params) {
        param_rows.push((series.vehicle_id, *params));
    }
    ingest::save_params_csv(args.out.join("idm_params.csv"), &param_rows)?;
    println!(
        "wrote scenario with {} vehicles, {} samples to {}",
        synth.trajectories.len(),
        synth.trajectories[0].len(),
        args.out.display()
    );
    Ok(())
}
