//! Composite training loss, reverse-mode differentiation through the platoon
//! rollout, and the full-batch training loop for the controller.
//!
//! The loss combines four ingredients evaluated per social-preference angle:
//! an acceleration prediction error against recorded data, the
//! social-preference weighted utility cost, a jerk smoothness penalty, and a
//! trend constraint tying the utilities across preference angles. Gradients
//! flow through every controller invocation and through the Euler updates of
//! the simulated platoon; clamped updates (speed floor, spacing floor)
//! propagate the subgradient 0.

use rayon::prelude::*;

use crate::controller::{self, BackwardScratch, ControllerParams, LstmTrace};
use crate::dynamics::{self, AccelerationLaw, RolloutResult};
use crate::error::{Error, Result};
use crate::model::{IdmParams, PlatoonState, SimConfig, SvoAngle, TrajectorySeries};

/// Platoon slot of the controlled vehicle: directly behind the leader.
pub const AV_INDEX: usize = 1;

/// Index of the first human-driven follower behind the AV.
pub const FIRST_FOLLOWER_INDEX: usize = 2;

/// A training episode: recorded leader, initial platoon state, calibrated
/// follower models, the reference acceleration for the AV slot, and frozen
/// observation statistics for input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub leader: TrajectorySeries,
    pub initial: PlatoonState,
    pub follower_params: Vec<IdmParams>,
    /// Reference acceleration of the AV slot, one sample per step.
    pub a_true: Vec<f64>,
    /// Per-feature mean of the recorded AV-slot observations (s, dv, v).
    pub obs_mean: [f64; 3],
    /// Per-feature standard deviation of the same observations.
    pub obs_std: [f64; 3],
}

impl Scenario {
    /// Assembles a scenario from per-vehicle trajectory series (ordered front
    /// to back) and calibrated follower parameters.
    ///
    /// The AV slot's recorded series provides both the reference acceleration
    /// (forward differences of its speed) and the observation statistics.
    pub fn from_series(
        series: &[TrajectorySeries],
        followers: &[IdmParams],
        vehicle_length: f64,
    ) -> Result<Self> {
        if series.len() < 3 {
            return Err(Error::Config(format!(
                "a scenario needs a leader, an AV slot, and at least one follower; got {} series",
                series.len()
            )));
        }
        if followers.len() != series.len() - 2 {
            return Err(Error::Shape {
                what: "follower parameter sets",
                expected: series.len() - 2,
                actual: followers.len(),
            });
        }
        for s in series {
            let violations = crate::model::validate_trajectory(s);
            if !violations.is_empty() {
                return Err(Error::Config(format!(
                    "vehicle {} series invalid: {}",
                    s.vehicle_id, violations[0]
                )));
            }
        }
        let leader = &series[0];
        for s in &series[1..] {
            if (s.dt - leader.dt).abs() > 1e-9 * leader.dt {
                return Err(Error::Config("all series must share one dt".into()));
            }
            if (s.t0 - leader.t0).abs() > 1e-9 {
                return Err(Error::Config("all series must share one t0".into()));
            }
            if s.len() != leader.len() {
                return Err(Error::Shape {
                    what: "series length",
                    expected: leader.len(),
                    actual: s.len(),
                });
            }
            if s.spacings.is_none() {
                return Err(Error::Config(format!(
                    "vehicle {} series needs a spacing column",
                    s.vehicle_id
                )));
            }
        }
        for p in followers {
            p.validate()?;
        }

        let speeds0: Vec<f64> = series.iter().map(|s| s.speeds[0]).collect();
        let spacings0: Vec<f64> = series[1..]
            .iter()
            .map(|s| s.spacings.as_ref().expect("checked above")[0])
            .collect();
        let initial =
            PlatoonState::from_spacings(leader.t0, 0.0, speeds0, spacings0, vehicle_length)?;

        let av = &series[AV_INDEX];
        let a_true: Vec<f64> = av.speeds.windows(2).map(|w| (w[1] - w[0]) / av.dt).collect();

        let av_spacings = av.spacings.as_ref().expect("checked above");
        let rows: Vec<[f64; 3]> = (0..av.len())
            .map(|k| [av_spacings[k], leader.speeds[k] - av.speeds[k], av.speeds[k]])
            .collect();
        let (obs_mean, obs_std) = observation_stats(&rows);

        Ok(Self {
            leader: leader.clone(),
            initial,
            follower_params: followers.to_vec(),
            a_true,
            obs_mean,
            obs_std,
        })
    }

    pub fn n_vehicles(&self) -> usize {
        2 + self.follower_params.len()
    }

    pub fn n_steps(&self) -> usize {
        self.a_true.len()
    }

    pub fn dt(&self) -> f64 {
        self.leader.dt
    }

    /// Simulation configuration spanning exactly the scenario horizon.
    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(self.dt(), self.n_steps() as f64 * self.dt())
    }
}

/// Mean and population standard deviation per observation feature, with the
/// deviation floored to keep normalization well-defined on constant data.
fn observation_stats(rows: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = rows.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for row in rows {
        for c in 0..3 {
            mean[c] += row[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; 3];
    for row in rows {
        for c in 0..3 {
            let d = row[c] - mean[c];
            var[c] += d * d;
        }
    }
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (var[c] / n).sqrt().max(1e-6);
    }
    (mean, std)
}

/// Schedule for the trend-constraint weight: the fraction of gamma applied to
/// the trend term as a function of the epoch. Nondecreasing by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrendRamp {
    /// Linear from 0 at epoch 0 to 1 at `fraction` of the total epochs, then
    /// flat.
    LinearUntil(f64),
    /// Fixed factor in [0, 1].
    Constant(f64),
}

impl TrendRamp {
    pub fn factor(&self, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            TrendRamp::Constant(c) => c,
            TrendRamp::LinearUntil(fraction) => {
                let knee = (total_epochs as f64 * fraction).max(1.0);
                (epoch as f64 / knee).min(1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrendRamp::Constant(c) => (0.0..=1.0).contains(&c),
            TrendRamp::LinearUntil(f) => f.is_finite() && f > 0.0 && f <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid trend ramp {self:?}")))
        }
    }
}

/// Which form the trend constraint takes.
///
/// The hinge realizes the intended direction (self-utility nondecreasing and
/// collective utility nonincreasing in the preference angle); the symmetric
/// square penalizes any utility difference across angles and is kept as an
/// alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendForm {
    Hinge,
    Symmetric,
}

/// Which followers enter the collective utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveMode {
    /// Only the first follower behind the AV (the default).
    FirstFollower,
    /// Average over every human-driven follower.
    AllFollowers,
}

/// Weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub trend_ramp: TrendRamp,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} must be >= 0, got {v}")));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::Config("at least one loss weight must be nonzero".into()));
        }
        self.trend_ramp.validate()
    }
}

/// Default weights, chosen on the bundled reference scenario so that the
/// preference-weighted utilities shape behavior while the prediction term
/// regularizes toward the recorded reference and the constraint term keeps
/// profiles smooth and the utility trends ordered.
impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.02, beta: 1.0, gamma: 0.5, trend_ramp: TrendRamp::LinearUntil(0.5) }
    }
}

/// Optimizer choice for the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent `theta -= eta * grad`.
    Descent,
    /// Adam: descent with per-parameter first/second-moment step scaling,
    /// standard defaults (0.9, 0.999, 1e-8).
    Adam,
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Preference angles trained jointly with shared weights.
    pub phi_set: Vec<SvoAngle>,
    /// Ordered angle pairs (phi1 < phi2) entering the trend constraint.
    pub phi_pairs: Vec<(SvoAngle, SvoAngle)>,
    /// Desired speed in the collective utility, m/s.
    pub v_target: f64,
    pub scenario: Scenario,
    pub sim: SimConfig,
    pub hidden_dim: usize,
    pub seq_len: usize,
    pub a_lim: f64,
    pub optimizer: OptimizerKind,
    pub collective: CollectiveMode,
    pub trend_form: TrendForm,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 300;
    pub const DEFAULT_LEARNING_RATE: f64 = 0.02;
    pub const DEFAULT_SEED: u64 = 42;
    /// Target speed of the collective utility. Slightly above the reference
    /// leader's mean pace: attainable by trading headway for platoon speed,
    /// unlike the calibrated desired speed of 5 m/s which no follower can
    /// reach behind this leader.
    pub const DEFAULT_V_TARGET: f64 = 3.0;

    /// Defaults for a given scenario: the three canonical preference angles
    /// with consecutive trend pairs, Adam, and the architecture defaults.
    pub fn new(scenario: Scenario) -> Result<Self> {
        let sim = scenario.sim_config()?;
        let phi_set = vec![SvoAngle::EGOISTIC, SvoAngle::PROSOCIAL, SvoAngle::ALTRUISTIC];
        let phi_pairs = vec![
            (SvoAngle::EGOISTIC, SvoAngle::PROSOCIAL),
            (SvoAngle::PROSOCIAL, SvoAngle::ALTRUISTIC),
        ];
        let cfg = Self {
            epochs: Self::DEFAULT_EPOCHS,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            seed: Self::DEFAULT_SEED,
            phi_set,
            phi_pairs,
            v_target: Self::DEFAULT_V_TARGET,
            scenario,
            sim,
            hidden_dim: ControllerParams::DEFAULT_HIDDEN_DIM,
            seq_len: ControllerParams::DEFAULT_SEQ_LEN,
            a_lim: ControllerParams::DEFAULT_A_LIM,
            optimizer: OptimizerKind::Adam,
            collective: CollectiveMode::FirstFollower,
            trend_form: TrendForm::Hinge,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.phi_set.is_empty() {
            return Err(Error::Config("phi_set must not be empty".into()));
        }
        for (p1, p2) in &self.phi_pairs {
            if p1.radians() >= p2.radians() {
                return Err(Error::Config(format!(
                    "trend pair must satisfy phi1 < phi2, got ({}, {})",
                    p1.radians(),
                    p2.radians()
                )));
            }
        }
        if !self.v_target.is_finite() || self.v_target <= 0.0 {
            return Err(Error::Config(format!("v_target must be > 0, got {}", self.v_target)));
        }
        self.sim.validate()?;
        let steps = self.sim.n_steps();
        if steps != self.scenario.n_steps() {
            return Err(Error::Shape {
                what: "scenario reference accelerations",
                expected: steps,
                actual: self.scenario.n_steps(),
            });
        }
        if steps < 2 {
            return Err(Error::Config("scenario must cover at least two steps".into()));
        }
        if (self.sim.dt - self.scenario.dt()).abs() > 1e-9 * self.scenario.dt() {
            return Err(Error::Config("simulation dt must match the scenario dt".into()));
        }
        if self.scenario.follower_params.is_empty() {
            return Err(Error::Config(
                "the collective utility needs at least one follower".into(),
            ));
        }
        Ok(())
    }

    /// Seeded initial controller weights with the scenario's frozen
    /// normalization constants.
    pub fn initial_params(&self) -> Result<ControllerParams> {
        ControllerParams::init(
            self.hidden_dim,
            self.seq_len,
            self.a_lim,
            self.scenario.obs_mean,
            self.scenario.obs_std,
            self.seed,
        )
    }
}

/// Per-angle utilities of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiUtilities {
    pub phi: SvoAngle,
    pub u_self: f64,
    pub u_collective: f64,
}

/// Every component of one loss evaluation, together with the weights and the
/// ramp factor that combined them, so the decomposition identity can be
/// re-asserted from this record alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub cost: f64,
    pub smoothness: f64,
    pub trend: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Trend ramp factor applied at this epoch.
    pub trend_ramp: f64,
    pub per_phi: Vec<PhiUtilities>,
}

impl LossBreakdown {
    /// Recombines the stored components; equals `total` up to rounding.
    pub fn recombined(&self) -> f64 {
        self.alpha * self.prediction
            + self.beta * self.cost
            + self.gamma * (self.smoothness + self.trend_ramp * self.trend)
    }
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

/// Rectangle-rule discretization of the integrated squared acceleration
/// error.
pub fn loss_prediction(a_pred: &[f64], a_true: &[f64], dt: f64) -> Result<f64> {
    if a_pred.len() != a_true.len() {
        return Err(Error::Shape {
            what: "acceleration series",
            expected: a_true.len(),
            actual: a_pred.len(),
        });
    }
    Ok(a_pred
        .iter()
        .zip(a_true)
        .map(|(p, t)| {
            let d = p - t;
            d * d
        })
        .sum::<f64>()
        * dt)
}

/// Energy-consumption indicator: the integral of half the squared
/// acceleration. Unit-free by construction.
pub fn u_self(a: &[f64], dt: f64) -> f64 {
    a.iter().map(|a| 0.5 * a * a).sum::<f64>() * dt
}

/// Collective utility: integrated half squared deviation of a follower speed
/// from the target speed.
pub fn u_collective(speeds: &[f64], v_target: f64, dt: f64) -> f64 {
    speeds
        .iter()
        .map(|v| {
            let d = v - v_target;
            0.5 * d * d
        })
        .sum::<f64>()
        * dt
}

/// Preference-weighted utility cost `cos(phi)*u_self + sin(phi)*u_collective`.
pub fn loss_cost(u_s: f64, u_c: f64, phi: SvoAngle) -> f64 {
    let (cos_phi, sin_phi) = phi.weights();
    cos_phi * u_s + sin_phi * u_c
}

/// Integrated squared jerk over forward differences of the acceleration.
pub fn loss_smoothness(a: &[f64], dt: f64) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::Shape { what: "acceleration series", expected: 2, actual: a.len() });
    }
    Ok(a.windows(2)
        .map(|w| {
            let jerk = (w[1] - w[0]) / dt;
            jerk * jerk
        })
        .sum::<f64>()
        * dt)
}

fn phi_index(phis: &[SvoAngle], phi: SvoAngle) -> Result<usize> {
    phis.iter()
        .position(|p| p.radians() == phi.radians())
        .ok_or_else(|| Error::Config(format!("phi {} missing from the phi set", phi.radians())))
}

/// Trend constraint across preference-angle pairs.
///
/// In the hinge form the penalty is zero exactly when the self-utility is
/// nondecreasing and the collective utility nonincreasing across each pair;
/// the symmetric form squares the raw differences instead.
pub fn loss_trend(
    phis: &[SvoAngle],
    u_self_per_phi: &[f64],
    u_collective_per_phi: &[f64],
    pairs: &[(SvoAngle, SvoAngle)],
    form: TrendForm,
) -> Result<f64> {
    if u_self_per_phi.len() != phis.len() || u_collective_per_phi.len() != phis.len() {
        return Err(Error::Shape {
            what: "per-phi utilities",
            expected: phis.len(),
            actual: u_self_per_phi.len().min(u_collective_per_phi.len()),
        });
    }
    let mut total = 0.0;
    for (phi1, phi2) in pairs {
        let i1 = phi_index(phis, *phi1)?;
        let i2 = phi_index(phis, *phi2)?;
        let ds = u_self_per_phi[i1] - u_self_per_phi[i2];
        let dc = u_collective_per_phi[i2] - u_collective_per_phi[i1];
        let (ds, dc) = match form {
            TrendForm::Hinge => (ds.max(0.0), dc.max(0.0)),
            TrendForm::Symmetric => (ds, dc),
        };
        total += ds * ds + dc * dc;
    }
    Ok(total)
}

/// d(trend)/d(u_self), d(trend)/d(u_collective) per phi index.
fn trend_partials(
    phis: &[SvoAngle],
    us: &[f64],
    uc: &[f64],
    pairs: &[(SvoAngle, SvoAngle)],
    form: TrendForm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut dus = vec![0.0; phis.len()];
    let mut duc = vec![0.0; phis.len()];
    for (phi1, phi2) in pairs {
        let i1 = phi_index(phis, *phi1)?;
        let i2 = phi_index(phis, *phi2)?;
        let ds = us[i1] - us[i2];
        let dc = uc[i2] - uc[i1];
        let (gs, gc) = match form {
            TrendForm::Hinge => (2.0 * ds.max(0.0), 2.0 * dc.max(0.0)),
            TrendForm::Symmetric => (2.0 * ds, 2.0 * dc),
        };
        dus[i1] += gs;
        dus[i2] -= gs;
        duc[i2] += gc;
        duc[i1] -= gc;
    }
    Ok((dus, duc))
}

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

/// Rolls out the platoon with the controller in the AV slot at one
/// preference angle.
pub fn rollout_with_controller(
    scenario: &Scenario,
    params: &ControllerParams,
    phi: SvoAngle,
    sim: &SimConfig,
) -> Result<RolloutResult> {
    let mut laws = Vec::with_capacity(scenario.n_vehicles());
    laws.push(AccelerationLaw::Playback(&scenario.leader));
    laws.push(AccelerationLaw::Neural { controller: params, phi });
    for p in &scenario.follower_params {
        laws.push(AccelerationLaw::Idm(*p));
    }
    dynamics::rollout(&scenario.initial, &laws, sim)
}

struct PhiForward {
    phi: SvoAngle,
    rollout: RolloutResult,
}

fn forward_all_phis(params: &ControllerParams, cfg: &TrainConfig) -> Result<Vec<PhiForward>> {
    cfg.phi_set
        .par_iter()
        .map(|&phi| {
            let rollout = rollout_with_controller(&cfg.scenario, params, phi, &cfg.sim)?;
            Ok(PhiForward { phi, rollout })
        })
        .collect()
}

/// Per-vehicle weights of the collective utility (zero for vehicles outside
/// the collective).
fn collective_weights(n_vehicles: usize, mode: CollectiveMode) -> Vec<f64> {
    let mut w = vec![0.0; n_vehicles];
    match mode {
        CollectiveMode::FirstFollower => w[FIRST_FOLLOWER_INDEX] = 1.0,
        CollectiveMode::AllFollowers => {
            let count = (n_vehicles - FIRST_FOLLOWER_INDEX) as f64;
            for slot in w.iter_mut().skip(FIRST_FOLLOWER_INDEX) {
                *slot = 1.0 / count;
            }
        }
    }
    w
}

fn assemble_breakdown(
    cfg: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
    forwards: &[PhiForward],
) -> Result<LossBreakdown> {
    let dt = cfg.sim.dt;
    let n_steps = cfg.sim.n_steps();
    let collective = collective_weights(cfg.scenario.n_vehicles(), cfg.collective);

    let mut prediction = 0.0;
    let mut smoothness = 0.0;
    let mut cost = 0.0;
    let mut us_per_phi = Vec::with_capacity(forwards.len());
    let mut uc_per_phi = Vec::with_capacity(forwards.len());
    for fwd in forwards {
        let a_pred = &fwd.rollout.accelerations[AV_INDEX];
        prediction += loss_prediction(a_pred, &cfg.scenario.a_true, dt)?;
        smoothness += loss_smoothness(a_pred, dt)?;
        let us = u_self(a_pred, dt);
        let mut uc = 0.0;
        for (vehicle, w) in collective.iter().enumerate() {
            if *w > 0.0 {
                let speeds = fwd.rollout.speed_series(vehicle);
                uc += w * u_collective(&speeds[..n_steps], cfg.v_target, dt);
            }
        }
        cost += loss_cost(us, uc, fwd.phi);
        us_per_phi.push(us);
        uc_per_phi.push(uc);
    }
    let trend =
        loss_trend(&cfg.phi_set, &us_per_phi, &uc_per_phi, &cfg.phi_pairs, cfg.trend_form)?;
    let ramp = weights.trend_ramp.factor(epoch, cfg.epochs);
    let total = weights.alpha * prediction
        + weights.beta * cost
        + weights.gamma * (smoothness + ramp * trend);
    let per_phi = forwards
        .iter()
        .zip(us_per_phi.iter().zip(&uc_per_phi))
        .map(|(fwd, (&u_s, &u_c))| PhiUtilities { phi: fwd.phi, u_self: u_s, u_collective: u_c })
        .collect();
    Ok(LossBreakdown {
        prediction,
        cost,
        smoothness,
        trend,
        total,
        alpha: weights.alpha,
        beta: weights.beta,
        gamma: weights.gamma,
        trend_ramp: ramp,
        per_phi,
    })
}

/// Evaluates the composite loss at the given parameters. Deterministic for
/// fixed inputs; the per-angle rollouts may execute concurrently but are
/// reduced in a fixed order.
pub fn evaluate_loss(
    params: &ControllerParams,
    cfg: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let forwards = forward_all_phis(params, cfg)?;
    assemble_breakdown(cfg, weights, epoch, &forwards)
}

// ---------------------------------------------------------------------------
// Reverse-mode gradient through the rollout
// ---------------------------------------------------------------------------

/// Direct loss seeds for one rollout: d(total)/d(a_AV(k)) before accounting
/// for the dynamics, plus per-vehicle speed seeds from the collective
/// utility.
struct Seeds {
    accel: Vec<f64>,
    /// `speed[i][k]` seed for vehicle i at step k; empty when unused.
    speed: Vec<Vec<f64>>,
}

fn build_seeds(
    cfg: &TrainConfig,
    weights: &LossWeights,
    fwd: &PhiForward,
    w_self: f64,
    w_coll: f64,
) -> Seeds {
    let dt = cfg.sim.dt;
    let n_steps = cfg.sim.n_steps();
    let a_pred = &fwd.rollout.accelerations[AV_INDEX];
    let a_true = &cfg.scenario.a_true;
    let collective = collective_weights(cfg.scenario.n_vehicles(), cfg.collective);

    let mut accel = vec![0.0; n_steps];
    for (k, slot) in accel.iter_mut().enumerate() {
        let mut g = 2.0 * weights.alpha * (a_pred[k] - a_true[k]) * dt;
        g += w_self * a_pred[k] * dt;
        // Smoothness: sum over forward differences (a[k+1]-a[k])^2 / dt.
        if k >= 1 {
            g += weights.gamma * 2.0 * (a_pred[k] - a_pred[k - 1]) / dt;
        }
        if k + 1 < n_steps {
            g -= weights.gamma * 2.0 * (a_pred[k + 1] - a_pred[k]) / dt;
        }
        *slot = g;
    }

    let n = cfg.scenario.n_vehicles();
    let mut speed = vec![Vec::new(); n];
    for (vehicle, share) in collective.iter().enumerate() {
        if *share > 0.0 && w_coll != 0.0 {
            let speeds = fwd.rollout.speed_series(vehicle);
            speed[vehicle] = (0..n_steps)
                .map(|k| w_coll * share * (speeds[k] - cfg.v_target) * dt)
                .collect();
        }
    }
    Seeds { accel, speed }
}

/// Backpropagates one rollout: accumulates d(total)/d(theta) given the direct
/// seeds, chaining through the Euler updates, the follower car-following
/// model, and every controller invocation (including its observation
/// windows).
fn backward_phi(
    params: &ControllerParams,
    cfg: &TrainConfig,
    fwd: &PhiForward,
    seeds: &Seeds,
) -> Vec<f64> {
    let sim = &cfg.sim;
    let dt = sim.dt;
    let n = cfg.scenario.n_vehicles();
    let n_steps = cfg.sim.n_steps();
    let states = &fwd.rollout.states;
    let accels = &fwd.rollout.accelerations;
    let seq_len = params.seq_len();

    let mut grad = vec![0.0; params.theta().len()];
    if n_steps == 0 {
        return grad;
    }

    // Rebuild the AV observation history exactly as the forward engine saw it.
    let history: Vec<[f64; 3]> = (0..n_steps)
        .map(|k| {
            let st = &states[k];
            [
                st.spacings[AV_INDEX - 1],
                st.speeds[AV_INDEX - 1] - st.speeds[AV_INDEX],
                st.speeds[AV_INDEX],
            ]
        })
        .collect();

    // Adjoints of the AV observations, filled by controller backpropagation
    // at steps >= k and consumed when step k is processed.
    let mut obs_gs = vec![0.0; n_steps];
    let mut obs_gv = vec![0.0; n_steps];

    let mut lam_v = vec![0.0; n];
    let mut lam_s = vec![0.0; n]; // lam_s[i] is the adjoint of spacings[i-1]; slot 0 unused
    let mut new_v = vec![0.0; n];
    let mut new_s = vec![0.0; n];
    let mut d_a = vec![0.0; n];
    let mut idm_dv = vec![0.0; n];
    let mut idm_dvl = vec![0.0; n];
    let mut idm_ds = vec![0.0; n];
    // Speed-update pass-through per vehicle, plus the contact edge to the
    // predecessor when the spacing floor capped the speed.
    let mut pass_own = vec![0.0; n];
    let mut cap_prev = vec![0.0; n];

    let mut trace = LstmTrace::for_params(params);
    let mut scratch = BackwardScratch::new(params.hidden_dim());
    let mut window = Vec::with_capacity(seq_len);
    let mut obs_grad = vec![0.0; seq_len * 3];

    for k in (0..n_steps).rev() {
        let st = &states[k];

        // Clamp pass-through flags of the k -> k+1 transition, recomputed
        // with the same arithmetic the forward pass used.
        for i in 0..n {
            let v_pre = st.speeds[i] + accels[i][k] * dt;
            let vmax = v_pre.max(sim.speed_floor);
            let spacing_clamped = i >= 1
                && st.spacings[i - 1] + (st.speeds[i - 1] - st.speeds[i]) * dt
                    < sim.min_spacing_floor;
            let capped = spacing_clamped && vmax > st.speeds[i - 1];
            pass_own[i] = if capped || v_pre <= sim.speed_floor { 0.0 } else { 1.0 };
            cap_prev[i] = if capped { 1.0 } else { 0.0 };
            d_a[i] = lam_v[i] * dt * pass_own[i];
        }
        d_a[AV_INDEX] += seeds.accel[k];

        // Controller backward: parameter gradients plus window observation
        // adjoints, mapped back to the step each observation came from.
        if d_a[AV_INDEX] != 0.0 {
            controller::fill_window(&history[..k + 1], seq_len, &mut window);
            controller::forward_traced(params, &window, fwd.phi, &mut trace);
            obs_grad.iter_mut().for_each(|g| *g = 0.0);
            controller::backward_traced(
                params,
                fwd.phi,
                &trace,
                d_a[AV_INDEX],
                &mut grad,
                &mut obs_grad,
                &mut scratch,
            );
            for t in 0..seq_len {
                let j = (k + 1 + t).saturating_sub(seq_len);
                obs_gs[j] += obs_grad[t * 3];
                // dv = v_lead - v_self; the lead speed is exogenous playback.
                obs_gv[j] += obs_grad[t * 3 + 2] - obs_grad[t * 3 + 1];
            }
        }

        // Follower car-following partials at the time-k state.
        for i in FIRST_FOLLOWER_INDEX..n {
            let p = &cfg.scenario.follower_params[i - FIRST_FOLLOWER_INDEX];
            let s = st.spacings[i - 1].max(sim.min_spacing_floor);
            let (_, dv, dvl, ds) =
                dynamics::idm_accel_with_partials(p, st.speeds[i], st.speeds[i - 1], s);
            idm_dv[i] = dv;
            idm_dvl[i] = dvl;
            idm_ds[i] = ds;
        }

        for i in 0..n {
            let ps_own = if i >= 1
                && st.spacings[i - 1] + (st.speeds[i - 1] - st.speeds[i]) * dt
                    > sim.min_spacing_floor
            {
                1.0
            } else {
                0.0
            };
            let ps_next = if i + 1 < n
                && st.spacings[i] + (st.speeds[i] - st.speeds[i + 1]) * dt
                    > sim.min_spacing_floor
            {
                1.0
            } else {
                0.0
            };

            let mut gv = lam_v[i] * pass_own[i];
            if i + 1 < n {
                // Contact cap: the successor's next speed equals this speed.
                gv += lam_v[i + 1] * cap_prev[i + 1];
            }
            if i >= 1 {
                gv -= lam_s[i] * ps_own * dt;
            }
            if i + 1 < n {
                gv += lam_s[i + 1] * ps_next * dt;
            }
            if i >= FIRST_FOLLOWER_INDEX {
                gv += d_a[i] * idm_dv[i];
            }
            if i + 1 < n && i + 1 >= FIRST_FOLLOWER_INDEX {
                gv += d_a[i + 1] * idm_dvl[i + 1];
            }
            if i == AV_INDEX {
                gv += obs_gv[k];
            }
            if !seeds.speed[i].is_empty() {
                gv += seeds.speed[i][k];
            }

            let mut gs = 0.0;
            if i >= 1 {
                gs += lam_s[i] * ps_own;
            }
            if i >= FIRST_FOLLOWER_INDEX {
                gs += d_a[i] * idm_ds[i];
            }
            if i == AV_INDEX {
                gs += obs_gs[k];
            }
            new_v[i] = gv;
            new_s[i] = gs;
        }
        lam_v.copy_from_slice(&new_v);
        lam_s.copy_from_slice(&new_s);
    }
    grad
}

/// Evaluates the loss and its gradient with respect to every controller
/// weight in one pass. Per-angle work may run concurrently; gradients are
/// accumulated in the fixed phi order so results are scheduling-independent.
pub fn evaluate_with_gradient(
    params: &ControllerParams,
    cfg: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    weights.validate()?;
    let forwards = forward_all_phis(params, cfg)?;
    let breakdown = assemble_breakdown(cfg, weights, epoch, &forwards)?;

    let us: Vec<f64> = breakdown.per_phi.iter().map(|p| p.u_self).collect();
    let uc: Vec<f64> = breakdown.per_phi.iter().map(|p| p.u_collective).collect();
    let (dt_dus, dt_duc) = trend_partials(&cfg.phi_set, &us, &uc, &cfg.phi_pairs, cfg.trend_form)?;
    let ramp = breakdown.trend_ramp;

    let per_phi_grads: Vec<Vec<f64>> = forwards
        .par_iter()
        .enumerate()
        .map(|(i, fwd)| {
            let (cos_phi, sin_phi) = fwd.phi.weights();
            let w_self = weights.beta * cos_phi + weights.gamma * ramp * dt_dus[i];
            let w_coll = weights.beta * sin_phi + weights.gamma * ramp * dt_duc[i];
            let seeds = build_seeds(cfg, weights, fwd, w_self, w_coll);
            backward_phi(params, cfg, fwd, &seeds)
        })
        .collect();

    let mut grad = vec![0.0; params.theta().len()];
    for phi_grad in &per_phi_grads {
        for (g, p) in grad.iter_mut().zip(phi_grad) {
            *g += p;
        }
    }
    Ok((breakdown, grad))
}

/// Gradient of the total loss with respect to every controller weight, same
/// layout as [`ControllerParams::theta`].
pub fn gradient(
    params: &ControllerParams,
    cfg: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
) -> Result<Vec<f64>> {
    Ok(evaluate_with_gradient(params, cfg, weights, epoch)?.1)
}

/// Central finite differences of the total loss over every weight: the
/// independent verification oracle for [`gradient`]. Uses forward
/// evaluations only.
pub fn finite_difference_gradient(
    params: &ControllerParams,
    cfg: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let n = params.theta().len();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let original = params.theta()[i];
        probe.theta_mut()[i] = original + step;
        let plus = evaluate_loss(&probe, cfg, weights, epoch)?.total;
        probe.theta_mut()[i] = original - step;
        let minus = evaluate_loss(&probe, cfg, weights, epoch)?.total;
        probe.theta_mut()[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ControllerParams,
    /// One entry per epoch: the loss evaluated at the parameters entering
    /// that epoch's update.
    pub history: Vec<LossBreakdown>,
}

/// Full-batch training: seeded initialization, one loss/gradient evaluation
/// and one parameter update per epoch. Fully reproducible from the seed.
pub fn train(cfg: &TrainConfig, weights: &LossWeights) -> Result<TrainOutput> {
    cfg.validate()?;
    weights.validate()?;
    let mut params = cfg.initial_params()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut adam = AdamState::new(params.theta().len());

    for epoch in 0..cfg.epochs {
        let (breakdown, grad) = evaluate_with_gradient(&params, cfg, weights, epoch)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(breakdown);
        match cfg.optimizer {
            OptimizerKind::Descent => {
                for (w, g) in params.theta_mut().iter_mut().zip(&grad) {
                    *w -= cfg.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                adam.apply(params.theta_mut(), &grad, cfg.learning_rate);
            }
        }
        if params.theta().iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(TrainOutput { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_trajectory;

    fn table2_v3() -> IdmParams {
        IdmParams::new(5.00, 1.19, 0.50, 3.00, 1.50, 2.81).unwrap()
    }

    fn table2_v4() -> IdmParams {
        IdmParams::new(5.00, 1.31, 3.00, 3.00, 1.50, 5.00).unwrap()
    }

    /// Small synthetic scenario built from an all-IDM reference rollout
    /// behind a wavy leader.
    fn tiny_scenario(n_followers: usize, n_samples: usize, wave: f64) -> Scenario {
        let dt = 0.1;
        let speeds: Vec<f64> = (0..n_samples)
            .map(|k| 2.5 - wave * (2.0 * std::f64::consts::PI * k as f64 * dt / 12.0).cos())
            .collect();
        let leader = TrajectorySeries { vehicle_id: 1, dt, t0: 0.0, speeds, spacings: None };
        let followers: Vec<IdmParams> = (0..n_followers)
            .map(|i| if i % 2 == 0 { table2_v3() } else { table2_v4() })
            .collect();
        let av_params = table2_v3();

        let cfg = SimConfig::new(dt, (n_samples - 1) as f64 * dt).unwrap();
        let v_init = leader.speeds[0];
        let mut spacings = vec![av_params.equilibrium_spacing(v_init).unwrap()];
        for p in &followers {
            spacings.push(p.equilibrium_spacing(v_init).unwrap());
        }
        let initial = PlatoonState::from_spacings(
            0.0,
            0.0,
            vec![v_init; n_followers + 2],
            spacings,
            cfg.vehicle_length,
        )
        .unwrap();
        let mut laws = vec![AccelerationLaw::Playback(&leader)];
        laws.push(AccelerationLaw::Idm(av_params));
        for p in &followers {
            laws.push(AccelerationLaw::Idm(*p));
        }
        let reference = dynamics::rollout(&initial, &laws, &cfg).unwrap();
        let ids: Vec<u32> = (1..=(n_followers as u32 + 2)).collect();
        let series = reference.to_trajectories(&ids, dt).unwrap();
        for s in &series {
            assert!(validate_trajectory(s).is_empty());
        }
        Scenario::from_series(&series, &followers, cfg.vehicle_length).unwrap()
    }

    fn tiny_config(hidden: usize, scenario: Scenario) -> TrainConfig {
        let mut cfg = TrainConfig::new(scenario).unwrap();
        cfg.hidden_dim = hidden;
        cfg.seq_len = 5;
        cfg.epochs = 10;
        cfg
    }

    #[test]
    fn loss_prediction_reference_values() {
        assert_eq!(loss_prediction(&[1.0, 2.0], &[1.0, 2.0], 0.1).unwrap(), 0.0);
        let pred = vec![1.0; 10];
        let truth = vec![0.0; 10];
        assert!((loss_prediction(&pred, &truth, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            loss_prediction(&[1.0], &[1.0, 2.0], 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn loss_prediction_is_permutation_invariant() {
        let a = [0.3, -1.2, 0.7, 2.0];
        let b = [0.1, 0.4, -0.3, 1.0];
        let forward = loss_prediction(&a, &b, 0.25).unwrap();
        let a_rev: Vec<f64> = a.iter().rev().copied().collect();
        let b_rev: Vec<f64> = b.iter().rev().copied().collect();
        let reversed = loss_prediction(&a_rev, &b_rev, 0.25).unwrap();
        assert!((forward - reversed).abs() < 1e-15);
    }

    #[test]
    fn u_self_reference_values() {
        assert_eq!(u_self(&[0.0, 0.0], 0.1), 0.0);
        assert!((u_self(&[1.0, 1.0, 1.0], 1.0) - 1.5).abs() < 1e-15);
        let a = [0.5, -1.0, 2.0];
        let scaled: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        assert!((u_self(&scaled, 0.1) - 9.0 * u_self(&a, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn u_collective_reference_values() {
        assert_eq!(u_collective(&[5.0, 5.0], 5.0, 0.1), 0.0);
        assert!((u_collective(&[6.0, 6.0], 5.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((u_collective(&[4.0; 10], 5.0, 0.1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_cost_reference_values() {
        assert_eq!(loss_cost(2.0, 4.0, SvoAngle::EGOISTIC), 2.0);
        assert_eq!(loss_cost(2.0, 4.0, SvoAngle::ALTRUISTIC), 4.0);
        let mid = loss_cost(2.0, 4.0, SvoAngle::PROSOCIAL);
        assert!((mid - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn loss_smoothness_reference_values() {
        assert_eq!(loss_smoothness(&[0.7, 0.7, 0.7], 0.1).unwrap(), 0.0);
        assert!((loss_smoothness(&[0.0, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((loss_smoothness(&[0.0, 1.0], 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(loss_smoothness(&[1.0], 0.1), Err(Error::Shape { .. })));
    }

    #[test]
    fn loss_trend_hinge_and_symmetric() {
        let phis = [SvoAngle::EGOISTIC, SvoAngle::ALTRUISTIC];
        let pairs = [(SvoAngle::EGOISTIC, SvoAngle::ALTRUISTIC)];
        // Correctly ordered utilities: self rising, collective falling.
        let t = loss_trend(&phis, &[1.0, 2.0], &[3.0, 1.0], &pairs, TrendForm::Hinge).unwrap();
        assert_eq!(t, 0.0);
        // Violations on both counts.
        let t = loss_trend(&phis, &[2.0, 1.0], &[1.0, 3.0], &pairs, TrendForm::Hinge).unwrap();
        assert_eq!(t, 5.0);
        // Identical utilities sit on the hinge boundary.
        let t = loss_trend(&phis, &[2.0, 2.0], &[1.0, 1.0], &pairs, TrendForm::Hinge).unwrap();
        assert_eq!(t, 0.0);
        // The symmetric form penalizes the correctly ordered case too.
        let t =
            loss_trend(&phis, &[1.0, 2.0], &[3.0, 1.0], &pairs, TrendForm::Symmetric).unwrap();
        assert_eq!(t, 5.0);
        // Missing phi entries are a configuration error.
        let missing = [(SvoAngle::EGOISTIC, SvoAngle::PROSOCIAL)];
        assert!(matches!(
            loss_trend(&phis, &[1.0, 2.0], &[3.0, 1.0], &missing, TrendForm::Hinge),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trend_ramp_is_monotone_and_bounded() {
        let ramp = TrendRamp::LinearUntil(0.5);
        let total = 100;
        let mut prev = -1.0;
        for epoch in 0..total {
            let f = ramp.factor(epoch, total);
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev);
            prev = f;
        }
        assert_eq!(ramp.factor(0, total), 0.0);
        assert_eq!(ramp.factor(50, total), 1.0);
        assert_eq!(TrendRamp::Constant(0.3).factor(7, 10), 0.3);
    }

    #[test]
    fn egoistic_cost_reduces_to_u_self_bit_exactly() {
        let us = 0.123456789;
        let uc = 9.87654321;
        assert_eq!(loss_cost(us, uc, SvoAngle::EGOISTIC).to_bits(), us.to_bits());
        assert_eq!(loss_cost(us, uc, SvoAngle::ALTRUISTIC).to_bits(), uc.to_bits());
    }

    #[test]
    fn zero_controller_on_zero_reference_gives_zero_loss() {
        // Constant leader, equilibrium start: the reference accelerations are
        // replaced with exact zeros and a zero-weight controller keeps
        // a_pred at exactly zero as well.
        let mut scenario = tiny_scenario(1, 42, 0.0);
        scenario.a_true = vec![0.0; scenario.n_steps()];
        let mut cfg = tiny_config(4, scenario);
        cfg.phi_set = vec![SvoAngle::EGOISTIC];
        cfg.phi_pairs = vec![];
        let params = ControllerParams::zeroed(
            4,
            cfg.seq_len,
            cfg.a_lim,
            cfg.scenario.obs_mean,
            cfg.scenario.obs_std,
        )
        .unwrap();
        let weights = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            trend_ramp: TrendRamp::Constant(1.0),
        };
        let breakdown = evaluate_loss(&params, &cfg, &weights, 0).unwrap();
        assert_eq!(breakdown.total, 0.0);
        assert_eq!(breakdown.prediction, 0.0);
    }

    #[test]
    fn singleton_egoistic_phi_with_pure_cost_equals_u_self() {
        let scenario = tiny_scenario(2, 80, 1.0);
        let mut cfg = tiny_config(4, scenario);
        cfg.phi_set = vec![SvoAngle::EGOISTIC];
        cfg.phi_pairs = vec![];
        let params = cfg.initial_params().unwrap();
        let weights = LossWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            trend_ramp: TrendRamp::Constant(0.0),
        };
        let breakdown = evaluate_loss(&params, &cfg, &weights, 0).unwrap();
        assert_eq!(breakdown.total.to_bits(), breakdown.per_phi[0].u_self.to_bits());
    }

    #[test]
    fn breakdown_recombination_identity() {
        let scenario = tiny_scenario(2, 60, 1.0);
        let cfg = tiny_config(6, scenario);
        let params = cfg.initial_params().unwrap();
        for (weights, epoch) in [
            (LossWeights::default(), 3),
            (
                LossWeights {
                    alpha: 0.7,
                    beta: 0.25,
                    gamma: 0.05,
                    trend_ramp: TrendRamp::LinearUntil(0.4),
                },
                9,
            ),
        ] {
            let b = evaluate_loss(&params, &cfg, &weights, epoch).unwrap();
            let rel = (b.total - b.recombined()).abs() / b.total.abs().max(1e-30);
            assert!(rel < 1e-12, "identity violated: rel error {rel}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_small_instances() {
        let scenario = tiny_scenario(2, 21, 1.0); // 2 s horizon at dt 0.1
        let mut cfg = tiny_config(4, scenario);
        cfg.seq_len = 5;
        let weights = LossWeights {
            alpha: 1.0,
            beta: 0.2,
            gamma: 0.05,
            trend_ramp: TrendRamp::Constant(1.0),
        };
        for (seed, collective, form) in [
            (3u64, CollectiveMode::FirstFollower, TrendForm::Hinge),
            (17, CollectiveMode::AllFollowers, TrendForm::Symmetric),
        ] {
            cfg.collective = collective;
            cfg.trend_form = form;
            let params = ControllerParams::init(
                cfg.hidden_dim,
                cfg.seq_len,
                cfg.a_lim,
                cfg.scenario.obs_mean,
                cfg.scenario.obs_std,
                seed,
            )
            .unwrap();
            let analytic = gradient(&params, &cfg, &weights, 5).unwrap();
            let numeric = finite_difference_gradient(&params, &cfg, &weights, 5, 1e-5).unwrap();
            let mut worst = 0.0f64;
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs());
                let err = if denom < 1e-8 { (a - n).abs() } else { (a - n).abs() / denom };
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_through_collisions() {
        // A leader braking to a standstill with tight initial gaps: the
        // neural rollouts hit the spacing floor, exercising the contact-cap
        // and speed-floor gradient paths.
        let dt = 0.1;
        let speeds: Vec<f64> =
            (0..31).map(|k| (2.5 - 2.5 * k as f64 * dt).max(0.0)).collect();
        let leader = TrajectorySeries { vehicle_id: 1, dt, t0: 0.0, speeds, spacings: None };
        let followers = vec![table2_v3()];
        let cfg_sim = SimConfig::new(dt, 3.0).unwrap();
        let initial = PlatoonState::from_spacings(
            0.0,
            0.0,
            vec![2.5, 2.5, 2.5],
            vec![0.5, 1.2],
            cfg_sim.vehicle_length,
        )
        .unwrap();
        let laws = [
            AccelerationLaw::Playback(&leader),
            AccelerationLaw::Idm(table2_v4()),
            AccelerationLaw::Idm(table2_v3()),
        ];
        let reference = dynamics::rollout(&initial, &laws, &cfg_sim).unwrap();
        let series = reference.to_trajectories(&[1, 2, 3], dt).unwrap();
        let scenario = Scenario::from_series(&series, &followers, cfg_sim.vehicle_length).unwrap();
        let mut cfg = TrainConfig::new(scenario).unwrap();
        cfg.hidden_dim = 4;
        cfg.seq_len = 5;
        let weights = LossWeights {
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.1,
            trend_ramp: TrendRamp::Constant(1.0),
        };
        let params = ControllerParams::init(
            cfg.hidden_dim,
            cfg.seq_len,
            cfg.a_lim,
            cfg.scenario.obs_mean,
            cfg.scenario.obs_std,
            23,
        )
        .unwrap();
        // The construction only makes sense if the spacing floor is hit.
        let probe =
            rollout_with_controller(&cfg.scenario, &params, SvoAngle::ALTRUISTIC, &cfg.sim)
                .unwrap();
        let floored = probe
            .states
            .iter()
            .any(|st| st.spacings.iter().any(|&s| s <= cfg.sim.min_spacing_floor));
        assert!(floored, "expected a spacing-floor event");

        let analytic = gradient(&params, &cfg, &weights, 2).unwrap();
        let numeric = finite_difference_gradient(&params, &cfg, &weights, 2, 1e-5).unwrap();
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = a.abs().max(n.abs());
            let err = if denom < 1e-8 { (a - n).abs() } else { (a - n).abs() / denom };
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradient_vanishes_at_the_prediction_minimum() {
        // Zero-weight controller, a_true identically zero, prediction-only
        // loss: a_pred == a_true everywhere, so the minimum is attained and
        // the whole gradient is exactly zero.
        let mut scenario = tiny_scenario(1, 30, 0.0);
        scenario.a_true = vec![0.0; scenario.n_steps()];
        let mut cfg = tiny_config(4, scenario);
        cfg.phi_set = vec![SvoAngle::EGOISTIC];
        cfg.phi_pairs = vec![];
        let params = ControllerParams::zeroed(
            4,
            cfg.seq_len,
            cfg.a_lim,
            cfg.scenario.obs_mean,
            cfg.scenario.obs_std,
        )
        .unwrap();
        let weights = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            trend_ramp: TrendRamp::Constant(0.0),
        };
        let (breakdown, grad) = evaluate_with_gradient(&params, &cfg, &weights, 0).unwrap();
        assert_eq!(breakdown.total, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_is_deterministic() {
        let scenario = tiny_scenario(2, 30, 1.0);
        let cfg = tiny_config(4, scenario);
        let params = cfg.initial_params().unwrap();
        let weights = LossWeights::default();
        let a = gradient(&params, &cfg, &weights, 1).unwrap();
        let b = gradient(&params, &cfg, &weights, 1).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_learning_rate_returns_the_seeded_initialization() {
        let scenario = tiny_scenario(1, 30, 1.0);
        let mut cfg = tiny_config(4, scenario);
        cfg.epochs = 1;
        cfg.learning_rate = 0.0;
        let out = train(&cfg, &LossWeights::default()).unwrap();
        let init = cfg.initial_params().unwrap();
        assert_eq!(out.params.theta(), init.theta());
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn same_seed_produces_bit_identical_histories() {
        let scenario = tiny_scenario(2, 40, 1.0);
        let mut cfg = tiny_config(4, scenario);
        cfg.epochs = 5;
        let a = train(&cfg, &LossWeights::default()).unwrap();
        let b = train(&cfg, &LossWeights::default()).unwrap();
        assert_eq!(a.params.theta(), b.params.theta());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
            assert_eq!(x.prediction.to_bits(), y.prediction.to_bits());
            assert_eq!(x.cost.to_bits(), y.cost.to_bits());
        }
    }

    #[test]
    fn training_reduces_the_loss_on_a_small_scenario() {
        let scenario = tiny_scenario(2, 100, 1.0);
        let mut cfg = tiny_config(8, scenario);
        cfg.epochs = 40;
        cfg.learning_rate = 0.02;
        let out = train(&cfg, &LossWeights::default()).unwrap();
        let first = out.history.first().unwrap().total;
        let last = out.history.last().unwrap().total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn non_finite_reference_data_raises_divergence_with_epoch() {
        let mut scenario = tiny_scenario(1, 30, 1.0);
        scenario.a_true[3] = f64::NAN;
        let mut cfg = tiny_config(4, scenario);
        cfg.epochs = 3;
        let err = train(&cfg, &LossWeights::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0 }));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Every loss primitive is nonnegative on arbitrary inputs.
            #[test]
            fn loss_components_are_nonnegative(
                a in proptest::collection::vec(-5.0..5.0f64, 2..60),
                b in proptest::collection::vec(-5.0..5.0f64, 2..60),
                v in proptest::collection::vec(0.0..12.0f64, 1..60),
                dt in 0.01..1.0f64,
                us in proptest::collection::vec(0.0..30.0f64, 2),
                uc in proptest::collection::vec(0.0..300.0f64, 2),
                phi_raw in 0.0..std::f64::consts::FRAC_PI_2,
            ) {
                let n = a.len().min(b.len());
                prop_assert!(loss_prediction(&a[..n], &b[..n], dt).unwrap() >= 0.0);
                prop_assert!(u_self(&a, dt) >= 0.0);
                prop_assert!(u_collective(&v, 5.0, dt) >= 0.0);
                prop_assert!(loss_smoothness(&a, dt).unwrap() >= 0.0);
                let phi = SvoAngle::new(phi_raw).unwrap();
                prop_assert!(loss_cost(us[0], uc[0], phi) >= 0.0);
                let phis = [SvoAngle::EGOISTIC, SvoAngle::ALTRUISTIC];
                let pairs = [(SvoAngle::EGOISTIC, SvoAngle::ALTRUISTIC)];
                for form in [TrendForm::Hinge, TrendForm::Symmetric] {
                    prop_assert!(loss_trend(&phis, &us, &uc, &pairs, form).unwrap() >= 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let scenario = tiny_scenario(1, 30, 1.0);
        let mut cfg = tiny_config(4, scenario);
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());

        let scenario = tiny_scenario(1, 30, 1.0);
        let mut cfg = tiny_config(4, scenario);
        cfg.phi_pairs = vec![(SvoAngle::ALTRUISTIC, SvoAngle::EGOISTIC)];
        assert!(cfg.validate().is_err());

        let weights = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            trend_ramp: TrendRamp::Constant(1.0),
        };
        assert!(weights.validate().is_err());
    }
}
