//! Deterministic platoon stepping: discrete Euler updates of speed and
//! spacing with pluggable per-vehicle acceleration laws (recorded playback,
//! the neural controller, or the intelligent driver model).
//!
//! All updates are synchronous: every right-hand side is evaluated at the
//! current step before any state is advanced.

use crate::controller::{self, ControllerParams, LstmTrace};
use crate::error::{Error, Result};
use crate::model::{IdmParams, PlatoonState, SimConfig, SvoAngle, TrajectorySeries};

/// Per-vehicle acceleration law.
#[derive(Debug, Clone)]
pub enum AccelerationLaw<'a> {
    /// Replays a recorded speed series; acceleration is its forward
    /// difference. The platoon leader always uses this law.
    Playback(&'a TrajectorySeries),
    /// The learned controller conditioned on a social-preference angle.
    Neural { controller: &'a ControllerParams, phi: SvoAngle },
    /// Intelligent driver model follower.
    Idm(IdmParams),
}

/// First collision observed during a rollout: the step where a pre-clamp
/// spacing dropped to zero or below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    /// Index of the trailing vehicle in the colliding pair.
    pub vehicle: usize,
}

/// Complete record of one simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `horizon/dt + 1` states; `states[k].time == t0 + k*dt` exactly.
    pub states: Vec<PlatoonState>,
    /// Acceleration series per vehicle, `horizon/dt` samples each.
    pub accelerations: Vec<Vec<f64>>,
    pub collision: Option<CollisionEvent>,
}

impl RolloutResult {
    pub fn n_vehicles(&self) -> usize {
        self.accelerations.len()
    }

    pub fn n_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Speed samples of one vehicle across all recorded states.
    pub fn speed_series(&self, vehicle: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.speeds[vehicle]).collect()
    }

    /// Spacing samples of one vehicle (gap to its predecessor); the leader
    /// has none.
    pub fn spacing_series(&self, vehicle: usize) -> Option<Vec<f64>> {
        if vehicle == 0 {
            return None;
        }
        Some(self.states.iter().map(|s| s.spacings[vehicle - 1]).collect())
    }

    /// Converts the rollout into per-vehicle trajectory series using the
    /// given vehicle ids (ordered front to back).
    pub fn to_trajectories(&self, vehicle_ids: &[u32], dt: f64) -> Result<Vec<TrajectorySeries>> {
        if vehicle_ids.len() != self.n_vehicles() {
            return Err(Error::Shape {
                what: "vehicle ids",
                expected: self.n_vehicles(),
                actual: vehicle_ids.len(),
            });
        }
        let t0 = self.states.first().map(|s| s.time).unwrap_or(0.0);
        Ok(vehicle_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| TrajectorySeries {
                vehicle_id: id,
                dt,
                t0,
                speeds: self.speed_series(i),
                spacings: self.spacing_series(i),
            })
            .collect())
    }
}

/// IDM desired spacing `s0 + v*tau + v*(v - v_lead) / (2*sqrt(a_max*b))`.
/// May fall below `s0` when the closing-speed term is negative.
pub fn desired_spacing(params: &IdmParams, v: f64, v_lead: f64) -> Result<f64> {
    params.validate()?;
    Ok(desired_spacing_unchecked(params, v, v_lead))
}

#[inline]
fn desired_spacing_unchecked(params: &IdmParams, v: f64, v_lead: f64) -> f64 {
    params.s0 + v * params.tau + v * (v - v_lead) / (2.0 * (params.a_max * params.b).sqrt())
}

/// IDM acceleration `a_max * [1 - (v/v0)^delta - (s*/s)^2]`.
///
/// The caller is responsible for clamping `s` to the spacing floor; `s` must
/// be strictly positive.
pub fn idm_acceleration(params: &IdmParams, v: f64, v_lead: f64, s: f64) -> Result<f64> {
    params.validate()?;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("IDM spacing must be > 0, got {s}")));
    }
    if !v.is_finite() || !v_lead.is_finite() || v < 0.0 || v_lead < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "IDM speeds must be finite and >= 0, got v = {v}, v_lead = {v_lead}"
        )));
    }
    Ok(idm_accel_unchecked(params, v, v_lead, s))
}

#[inline]
pub(crate) fn idm_accel_unchecked(params: &IdmParams, v: f64, v_lead: f64, s: f64) -> f64 {
    let s_star = desired_spacing_unchecked(params, v, v_lead);
    let ratio = s_star / s;
    params.a_max * (1.0 - (v / params.v0).powf(params.delta) - ratio * ratio)
}

/// IDM acceleration together with its partial derivatives with respect to
/// own speed, lead speed, and spacing. At the `v = 0` kink of the free-flow
/// power term the subgradient 0 is used.
pub(crate) fn idm_accel_with_partials(
    params: &IdmParams,
    v: f64,
    v_lead: f64,
    s: f64,
) -> (f64, f64, f64, f64) {
    let closing = 1.0 / (2.0 * (params.a_max * params.b).sqrt());
    let s_star = params.s0 + v * params.tau + closing * v * (v - v_lead);
    let pow = (v / params.v0).powf(params.delta);
    let a = params.a_max * (1.0 - pow - (s_star / s) * (s_star / s));

    let dpow_dv = if v > 0.0 {
        params.delta / params.v0 * (v / params.v0).powf(params.delta - 1.0)
    } else if params.delta == 1.0 {
        1.0 / params.v0
    } else {
        0.0
    };
    let ds_star_dv = params.tau + closing * (2.0 * v - v_lead);
    let ds_star_dvl = -closing * v;
    let s2 = s * s;
    let da_dv = params.a_max * (-dpow_dv - 2.0 * s_star * ds_star_dv / s2);
    let da_dvl = params.a_max * (-2.0 * s_star * ds_star_dvl / s2);
    let da_ds = params.a_max * 2.0 * s_star * s_star / (s2 * s);
    (a, da_dv, da_dvl, da_ds)
}

/// Result of advancing the platoon by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: PlatoonState,
    /// Acceleration applied to each vehicle during the step.
    pub accelerations: Vec<f64>,
    /// Trailing vehicles whose pre-clamp spacing dropped to zero or below.
    pub collisions: Vec<usize>,
}

fn playback_accel(series: &TrajectorySeries, vehicle: usize, time: f64, dt: f64) -> Result<f64> {
    if (series.dt - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::Config(format!(
            "playback series dt ({}) must match simulation dt ({})",
            series.dt, dt
        )));
    }
    let k = ((time - series.t0) / series.dt).round();
    if k < 0.0 {
        return Err(Error::Config(format!(
            "playback series for vehicle {vehicle} starts after simulation time {time}"
        )));
    }
    let k = k as usize;
    if k + 1 >= series.len() {
        return Err(Error::PlaybackExhausted {
            vehicle,
            step: k + 1,
            available: series.len(),
        });
    }
    Ok((series.speeds[k + 1] - series.speeds[k]) / series.dt)
}

fn validate_laws(state: &PlatoonState, laws: &[AccelerationLaw]) -> Result<()> {
    if laws.len() != state.n_vehicles() {
        return Err(Error::Shape {
            what: "acceleration laws",
            expected: state.n_vehicles(),
            actual: laws.len(),
        });
    }
    if !matches!(laws[0], AccelerationLaw::Playback(_)) {
        return Err(Error::Config("the platoon leader must use a playback law".into()));
    }
    for (i, law) in laws.iter().enumerate() {
        match law {
            AccelerationLaw::Idm(p) => p.validate()?,
            AccelerationLaw::Neural { .. } if i == 0 => unreachable!(),
            _ => {}
        }
    }
    Ok(())
}

/// Internal stepping engine. Owns the observation history each neural law
/// needs; `step` and `rollout` are thin wrappers over it.
struct Engine<'a> {
    laws: &'a [AccelerationLaw<'a>],
    cfg: &'a SimConfig,
    /// Observation history (s, dv, v) per neural vehicle, else empty.
    histories: Vec<Vec<[f64; 3]>>,
    traces: Vec<Option<LstmTrace>>,
    window_buf: Vec<[f64; 3]>,
}

impl<'a> Engine<'a> {
    fn new(laws: &'a [AccelerationLaw<'a>], cfg: &'a SimConfig) -> Self {
        let histories = laws.iter().map(|_| Vec::new()).collect();
        let traces = laws
            .iter()
            .map(|law| match law {
                AccelerationLaw::Neural { controller, .. } => {
                    Some(LstmTrace::for_params(controller))
                }
                _ => None,
            })
            .collect();
        Self { laws, cfg, histories, traces, window_buf: Vec::new() }
    }

    /// Computes all accelerations at the current state and pushes neural
    /// observations into the history.
    fn accelerations(&mut self, state: &PlatoonState) -> Result<Vec<f64>> {
        let mut accels = Vec::with_capacity(self.laws.len());
        for (i, law) in self.laws.iter().enumerate() {
            let a = match law {
                AccelerationLaw::Playback(series) => {
                    playback_accel(series, i, state.time, self.cfg.dt)?
                }
                AccelerationLaw::Idm(p) => {
                    let s = state.spacings[i - 1].max(self.cfg.min_spacing_floor);
                    idm_accel_unchecked(p, state.speeds[i], state.speeds[i - 1], s)
                }
                AccelerationLaw::Neural { controller, phi } => {
                    if i == 0 {
                        return Err(Error::Config(
                            "the platoon leader must use a playback law".into(),
                        ));
                    }
                    let obs = [
                        state.spacings[i - 1],
                        state.speeds[i - 1] - state.speeds[i],
                        state.speeds[i],
                    ];
                    self.histories[i].push(obs);
                    controller::fill_window(
                        &self.histories[i],
                        controller.seq_len(),
                        &mut self.window_buf,
                    );
                    let trace = self.traces[i].as_mut().expect("trace for neural law");
                    controller::forward_traced(controller, &self.window_buf, *phi, trace)
                }
            };
            accels.push(a);
        }
        Ok(accels)
    }

    /// Applies the Euler update at `state` with precomputed accelerations.
    fn advance(
        &self,
        state: &PlatoonState,
        accels: &[f64],
        next_time: f64,
    ) -> (PlatoonState, Vec<usize>) {
        let n = state.n_vehicles();
        let dt = self.cfg.dt;
        let mut collisions = Vec::new();

        let mut speeds: Vec<f64> = (0..n)
            .map(|i| (state.speeds[i] + accels[i] * dt).max(self.cfg.speed_floor))
            .collect();
        let mut spacings = Vec::with_capacity(n - 1);
        for i in 1..n {
            let s_pre = state.spacings[i - 1] + (state.speeds[i - 1] - state.speeds[i]) * dt;
            if s_pre <= 0.0 {
                collisions.push(i);
            }
            if s_pre < self.cfg.min_spacing_floor {
                // Contact: a vehicle pressed against the spacing floor cannot
                // move faster than its predecessor did this step.
                speeds[i] = speeds[i].min(state.speeds[i - 1]);
            }
            spacings.push(s_pre.max(self.cfg.min_spacing_floor));
        }
        // Leader advances kinematically; followers are re-reconciled so the
        // position/spacing invariant holds exactly.
        let mut positions = Vec::with_capacity(n);
        positions.push(state.positions[0] + state.speeds[0] * dt);
        for i in 1..n {
            positions.push(positions[i - 1] - self.cfg.vehicle_length - spacings[i - 1]);
        }
        (PlatoonState { time: next_time, positions, speeds, spacings }, collisions)
    }
}

/// Advances the platoon by one step. Every acceleration is computed from the
/// given state; a neural law sees a window padded from the current
/// observation (episode-start semantics). Playback laws locate their sample
/// by the state's timestamp.
pub fn step(state: &PlatoonState, laws: &[AccelerationLaw], cfg: &SimConfig) -> Result<StepOutcome> {
    cfg.validate()?;
    state.validate(cfg.vehicle_length)?;
    validate_laws(state, laws)?;
    let mut engine = Engine::new(laws, cfg);
    let accels = engine.accelerations(state)?;
    let (next, collisions) = engine.advance(state, &accels, state.time + cfg.dt);
    Ok(StepOutcome { next, accelerations: accels, collisions })
}

/// Runs `horizon/dt` steps from the initial state, recording every state and
/// per-vehicle acceleration. Deterministic: identical inputs produce
/// bit-identical outputs regardless of thread count.
pub fn rollout(
    initial: &PlatoonState,
    laws: &[AccelerationLaw],
    cfg: &SimConfig,
) -> Result<RolloutResult> {
    cfg.validate()?;
    initial.validate(cfg.vehicle_length)?;
    validate_laws(initial, laws)?;
    let n_steps = cfg.n_steps();

    // Playback series must cover the horizon: the last step reads sample
    // k0 + n_steps of the recorded speeds.
    for (i, law) in laws.iter().enumerate() {
        if let AccelerationLaw::Playback(series) = law {
            let k0 = ((initial.time - series.t0) / series.dt).round();
            let needed = k0 as usize + n_steps + 1;
            if k0 < 0.0 || needed > series.len() {
                return Err(Error::PlaybackExhausted {
                    vehicle: i,
                    step: n_steps,
                    available: series.len(),
                });
            }
        }
    }

    let t0 = initial.time;
    let n = initial.n_vehicles();
    let mut engine = Engine::new(laws, cfg);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut accelerations: Vec<Vec<f64>> = vec![Vec::with_capacity(n_steps); n];
    let mut collision = None;

    states.push(initial.clone());
    for k in 0..n_steps {
        let accels = engine.accelerations(states.last().expect("non-empty"))?;
        let next_time = t0 + (k + 1) as f64 * cfg.dt;
        let (next, collisions) =
            engine.advance(states.last().expect("non-empty"), &accels, next_time);
        for (i, a) in accels.iter().enumerate() {
            accelerations[i].push(*a);
        }
        if collision.is_none() {
            if let Some(&vehicle) = collisions.first() {
                collision = Some(CollisionEvent { time: next_time, vehicle });
            }
        }
        states.push(next);
    }
    Ok(RolloutResult { states, accelerations, collision })
}
