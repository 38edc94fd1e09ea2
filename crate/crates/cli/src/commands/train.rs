use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use svo_acc::controller::ControllerParams;
use svo_acc::training::{
    self, CollectiveMode, LossWeights, OptimizerKind, TrainConfig, TrendForm, TrendRamp,
};

use crate::args::parse_phi_list;
use crate::common::load_scenario;
use crate::manifest::RunManifest;

/// Train the controller on a scenario by gradient descent through the
/// platoon rollout.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Trajectory CSV (leader, AV slot, followers).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Car-following parameter CSV covering every follower vehicle id.
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for checkpoint.bin, history.csv, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_SEED)]
    pub seed: u64,
    /// Resample input onto this interval (seconds).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Odd moving-average window; 1 disables smoothing.
    #[arg(long, default_value_t = 1)]
    pub smooth_window: usize,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.02)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Preference angles trained jointly (comma list; radians or pi/4-style
    /// literals).
    #[arg(long, default_value = "0,pi/4,pi/2")]
    pub phi: String,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_V_TARGET)]
    pub v_target: f64,
    #[arg(long, default_value_t = ControllerParams::DEFAULT_HIDDEN_DIM)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = ControllerParams::DEFAULT_SEQ_LEN)]
    pub seq_len: usize,
    #[arg(long, default_value_t = ControllerParams::DEFAULT_A_LIM)]
    pub a_lim: f64,
    /// adam | descent
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    /// first | all: followers entering the collective utility.
    #[arg(long, default_value = "first")]
    pub collective: String,
    /// hinge | symmetric trend-constraint form.
    #[arg(long, default_value = "hinge")]
    pub trend_form: String,
    /// Fraction of training after which the trend weight is fully ramped.
    #[arg(long, default_value_t = 0.5)]
    pub trend_ramp_knee: f64,
}

pub fn build_train_config(args: &TrainArgs) -> Result<(TrainConfig, LossWeights, Vec<u32>)> {
    let (scenario, ids) =
        load_scenario(&args.scenario, &args.params, args.dt, args.smooth_window)?;
    let mut phis = parse_phi_list(&args.phi)?;
    phis.sort_by(|a, b| a.radians().total_cmp(&b.radians()));
    let pairs = phis.windows(2).map(|w| (w[0], w[1])).collect();

    let mut cfg = TrainConfig::new(scenario)?;
    cfg.epochs = args.epochs;
    cfg.learning_rate = args.lr;
    cfg.seed = args.seed;
    cfg.phi_set = phis;
    cfg.phi_pairs = pairs;
    cfg.v_target = args.v_target;
    cfg.hidden_dim = args.hidden_dim;
    cfg.seq_len = args.seq_len;
    cfg.a_lim = args.a_lim;
    cfg.optimizer = match args.optimizer.as_str() {
        "adam" => OptimizerKind::Adam,
        "descent" => OptimizerKind::Descent,
        other => bail!("unknown optimizer {other:?} (use adam or descent)"),
    };
    cfg.collective = match args.collective.as_str() {
        "first" => CollectiveMode::FirstFollower,
        "all" => CollectiveMode::AllFollowers,
        other => bail!("unknown collective mode {other:?} (use first or all)"),
    };
    cfg.trend_form = match args.trend_form.as_str() {
        "hinge" => TrendForm::Hinge,
        "symmetric" => TrendForm::Symmetric,
        other => bail!("unknown trend form {other:?} (use hinge or symmetric)"),
    };
    cfg.validate()?;
    let weights = LossWeights {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        trend_ramp: TrendRamp::LinearUntil(args.trend_ramp_knee),
    };
    weights.validate()?;
    Ok((cfg, weights, ids))
}

pub fn render_history(history: &[training::LossBreakdown]) -> String {
    let mut out = String::from("epoch,total,prediction,cost,smoothness,trend,trend_ramp");
    if let Some(first) = history.first() {
        for i in 0..first.per_phi.len() {
            write!(out, ",phi_{i},u_self_{i},u_collective_{i}").unwrap();
        }
    }
    out.push('\n');
    for (epoch, b) in history.iter().enumerate() {
        write!(
            out,
            "{epoch},{},{},{},{},{},{}",
            b.total, b.prediction, b.cost, b.smoothness, b.trend, b.trend_ramp
        )
        .unwrap();
        for p in &b.per_phi {
            write!(out, ",{},{},{}", p.phi.radians(), p.u_self, p.u_collective).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let (cfg, weights, _) = build_train_config(args)?;

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("train", args.seed, args)?;
    manifest.add_input(&args.scenario)?;
    manifest.add_input(&args.params)?;
    manifest.add_outputs(&["checkpoint.bin", "history.csv"]);
    manifest.write(&args.out)?;

    let output = training::train(&cfg, &weights)?;
    output.params.save_to_path(args.out.join("checkpoint.bin"))?;
    std::fs::write(args.out.join("history.csv"), render_history(&output.history))?;

    let first = output.history.first().expect("at least one epoch");
    let last = output.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs: total loss {:.4} -> {:.4}",
        cfg.epochs, first.total, last.total
    );
    Ok(())
}
