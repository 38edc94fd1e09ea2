//! Shared domain types for the platoon pipeline: trajectory series, platoon
//! snapshots, car-following parameters, and the social-preference angle.
//!
//! All types here are immutable value data and can be freely shared between
//! threads.

use crate::error::{Error, Result};

/// Tolerance for the position/spacing consistency check on [`PlatoonState`].
pub const SPACING_CONSISTENCY_TOL: f64 = 1e-9;

/// Uniformly sampled time series of one vehicle's speed and spacing to its
/// predecessor. The platoon leader has no predecessor and carries no spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    pub vehicle_id: u32,
    /// Sample interval in seconds.
    pub dt: f64,
    /// Time of the first sample in seconds.
    pub t0: f64,
    /// Speeds in m/s.
    pub speeds: Vec<f64>,
    /// Gap to the predecessor's rear bumper in meters; `None` for the leader.
    pub spacings: Option<Vec<f64>>,
}

impl TrajectorySeries {
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Duration covered by the series in seconds.
    pub fn span(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Sample timestamp `t0 + k*dt`.
    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// One violated invariant, with the index of the first offending sample when
/// the violation is sample-local.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub constraint: &'static str,
    pub index: Option<usize>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} (first violation at index {})", self.constraint, i),
            None => write!(f, "{}", self.constraint),
        }
    }
}

fn first_index(values: &[f64], bad: impl Fn(f64) -> bool) -> Option<usize> {
    values.iter().position(|&v| bad(v))
}

/// Checks every [`TrajectorySeries`] invariant and returns the full list of
/// violations (empty when the series is valid). Total: NaN and infinite
/// values are reported as violations, never panics.
pub fn validate_trajectory(series: &TrajectorySeries) -> Vec<Violation> {
    let mut violations = Vec::new();
    if !(series.dt > 0.0) || !series.dt.is_finite() {
        violations.push(Violation { constraint: "dt > 0", index: None });
    }
    if !series.t0.is_finite() {
        violations.push(Violation { constraint: "t0 finite", index: None });
    }
    if series.speeds.len() < 2 {
        violations.push(Violation { constraint: "series length >= 2", index: None });
    }
    if let Some(spacings) = &series.spacings {
        if spacings.len() != series.speeds.len() {
            violations.push(Violation {
                constraint: "speeds and spacings have equal length",
                index: None,
            });
        }
    }
    if let Some(i) = first_index(&series.speeds, |v| !v.is_finite()) {
        violations.push(Violation { constraint: "all speeds finite", index: Some(i) });
    }
    if let Some(i) = first_index(&series.speeds, |v| v.is_finite() && v < 0.0) {
        violations.push(Violation { constraint: "all speeds >= 0", index: Some(i) });
    }
    if let Some(spacings) = &series.spacings {
        if let Some(i) = first_index(spacings, |s| !s.is_finite()) {
            violations.push(Violation { constraint: "all spacings finite", index: Some(i) });
        }
        if let Some(i) = first_index(spacings, |s| s.is_finite() && s <= 0.0) {
            violations.push(Violation { constraint: "all spacings > 0", index: Some(i) });
        }
    }
    violations
}

/// Positions, speeds, and spacings of the whole platoon at one instant.
///
/// Vehicles are ordered front to back: index 0 is the leader. `spacings[i]`
/// is the gap between vehicle `i + 1` and vehicle `i`, so it has length
/// `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub time: f64,
    /// Front-bumper positions in meters, strictly decreasing along the platoon.
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    pub spacings: Vec<f64>,
}

impl PlatoonState {
    /// Builds a state from positions and speeds, deriving spacings from the
    /// gaps minus `vehicle_length`.
    pub fn from_positions(
        time: f64,
        positions: Vec<f64>,
        speeds: Vec<f64>,
        vehicle_length: f64,
    ) -> Result<Self> {
        if positions.len() != speeds.len() {
            return Err(Error::Shape {
                what: "platoon positions vs speeds",
                expected: positions.len(),
                actual: speeds.len(),
            });
        }
        let spacings = positions
            .windows(2)
            .map(|w| w[0] - w[1] - vehicle_length)
            .collect();
        let state = Self { time, positions, speeds, spacings };
        state.validate(vehicle_length)?;
        Ok(state)
    }

    /// Builds a state from the leader position plus per-vehicle spacings;
    /// follower positions are derived so the consistency invariant holds
    /// exactly.
    pub fn from_spacings(
        time: f64,
        lead_position: f64,
        speeds: Vec<f64>,
        spacings: Vec<f64>,
        vehicle_length: f64,
    ) -> Result<Self> {
        if speeds.is_empty() {
            return Err(Error::EmptyInput("platoon speeds"));
        }
        if spacings.len() + 1 != speeds.len() {
            return Err(Error::Shape {
                what: "platoon spacings",
                expected: speeds.len() - 1,
                actual: spacings.len(),
            });
        }
        let mut positions = Vec::with_capacity(speeds.len());
        positions.push(lead_position);
        for &s in &spacings {
            let prev = *positions.last().expect("non-empty");
            positions.push(prev - vehicle_length - s);
        }
        let state = Self { time, positions, speeds, spacings };
        state.validate(vehicle_length)?;
        Ok(state)
    }

    pub fn n_vehicles(&self) -> usize {
        self.speeds.len()
    }

    /// Checks all invariants: finite values, strictly decreasing positions,
    /// non-negative speeds, and position/spacing consistency within
    /// [`SPACING_CONSISTENCY_TOL`].
    pub fn validate(&self, vehicle_length: f64) -> Result<()> {
        let n = self.speeds.len();
        if self.positions.len() != n {
            return Err(Error::Shape {
                what: "platoon positions",
                expected: n,
                actual: self.positions.len(),
            });
        }
        if self.spacings.len() + 1 != n {
            return Err(Error::Shape {
                what: "platoon spacings",
                expected: n.saturating_sub(1),
                actual: self.spacings.len(),
            });
        }
        let all = self
            .positions
            .iter()
            .chain(&self.speeds)
            .chain(&self.spacings)
            .chain(std::iter::once(&self.time));
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite value in platoon state".into()));
            }
        }
        if self.positions.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidParameter(
                "platoon positions must be strictly decreasing".into(),
            ));
        }
        if self.speeds.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("platoon speeds must be >= 0".into()));
        }
        for i in 1..n {
            let gap = self.positions[i - 1] - self.positions[i] - vehicle_length;
            if (self.spacings[i - 1] - gap).abs() > SPACING_CONSISTENCY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "spacing {} inconsistent with positions: |{} - {}| > {SPACING_CONSISTENCY_TOL}",
                    i - 1,
                    self.spacings[i - 1],
                    gap
                )));
            }
        }
        Ok(())
    }
}

/// The six parameters of the intelligent driver model for one human-driven
/// follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed in m/s.
    pub v0: f64,
    /// Maximum acceleration in m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration in m/s^2.
    pub b: f64,
    /// Minimum spacing in meters.
    pub s0: f64,
    /// Time gap in seconds.
    pub tau: f64,
    /// Acceleration exponent, dimensionless.
    pub delta: f64,
}

impl IdmParams {
    pub fn new(v0: f64, a_max: f64, b: f64, s0: f64, tau: f64, delta: f64) -> Result<Self> {
        let p = Self { v0, a_max, b, s0, tau, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v0", self.v0),
            ("a_max", self.a_max),
            ("b", self.b),
            ("s0", self.s0),
            ("tau", self.tau),
            ("delta", self.delta),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "IDM parameter {name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Equilibrium spacing at which the model holds a steady speed `v` behind
    /// a leader at the same speed (requires `v < v0`).
    pub fn equilibrium_spacing(&self, v: f64) -> Result<f64> {
        if !(0.0..self.v0).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "equilibrium spacing requires 0 <= v < v0, got v = {v}"
            )));
        }
        let free = 1.0 - (v / self.v0).powf(self.delta);
        Ok((self.s0 + v * self.tau) / free.sqrt())
    }
}

/// Social value orientation angle in radians, restricted to [0, pi/2]:
/// 0 is egoistic, pi/4 prosocial, pi/2 altruistic.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SvoAngle {
    phi: f64,
}

impl SvoAngle {
    pub const EGOISTIC: SvoAngle = SvoAngle { phi: 0.0 };
    pub const PROSOCIAL: SvoAngle = SvoAngle { phi: std::f64::consts::FRAC_PI_4 };
    pub const ALTRUISTIC: SvoAngle = SvoAngle { phi: std::f64::consts::FRAC_PI_2 };

    pub fn new(phi: f64) -> Result<Self> {
        if !phi.is_finite() || !(0.0..=std::f64::consts::FRAC_PI_2).contains(&phi) {
            return Err(Error::InvalidParameter(format!(
                "social preference angle must lie in [0, pi/2], got {phi}"
            )));
        }
        Ok(Self { phi })
    }

    pub fn radians(&self) -> f64 {
        self.phi
    }

    /// `(cos phi, sin phi)`, exact at the interval endpoints so that the
    /// egoistic and altruistic reductions hold bit-exactly.
    pub fn weights(&self) -> (f64, f64) {
        if self.phi == 0.0 {
            (1.0, 0.0)
        } else if self.phi == std::f64::consts::FRAC_PI_2 {
            (0.0, 1.0)
        } else {
            (self.phi.cos(), self.phi.sin())
        }
    }
}

/// Simulation configuration shared by every rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Integration step in seconds.
    pub dt: f64,
    /// Simulated horizon in seconds.
    pub horizon: f64,
    /// Vehicle length in meters, used to convert between positions and spacings.
    pub vehicle_length: f64,
    /// Numerical guard: spacings are clamped here to keep the car-following
    /// interaction term finite.
    pub min_spacing_floor: f64,
    /// Speeds are clamped here from below; reversing is not modeled.
    pub speed_floor: f64,
}

impl SimConfig {
    pub const DEFAULT_DT: f64 = 0.1;
    pub const DEFAULT_VEHICLE_LENGTH: f64 = 4.5;
    pub const DEFAULT_MIN_SPACING_FLOOR: f64 = 0.1;

    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            vehicle_length: Self::DEFAULT_VEHICLE_LENGTH,
            min_spacing_floor: Self::DEFAULT_MIN_SPACING_FLOOR,
            speed_floor: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A zero horizon is allowed and yields an empty rollout.
    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "horizon must be >= 0, got {}",
                self.horizon
            )));
        }
        if !self.vehicle_length.is_finite() || self.vehicle_length <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "vehicle_length must be > 0, got {}",
                self.vehicle_length
            )));
        }
        if !self.min_spacing_floor.is_finite() || self.min_spacing_floor <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "min_spacing_floor must be > 0, got {}",
                self.min_spacing_floor
            )));
        }
        if !self.speed_floor.is_finite() || self.speed_floor < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "speed_floor must be >= 0, got {}",
                self.speed_floor
            )));
        }
        Ok(())
    }

    /// Number of integration steps covering the horizon.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}
