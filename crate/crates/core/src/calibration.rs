//! Grid-search calibration of follower parameters: minimize the spacing RMSE
//! between a simulated follower and its observed trajectory.

use rayon::prelude::*;

use crate::dynamics::{rollout, AccelerationLaw};
use crate::error::{Error, Result};
use crate::model::{IdmParams, PlatoonState, SimConfig, TrajectorySeries};

/// Number of runner-up grid points kept in a report.
pub const RUNNER_UP_COUNT: usize = 5;

/// Candidate values per parameter; the search space is the full cross
/// product. Each axis must be non-empty, strictly ascending, and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub v0: Vec<f64>,
    pub a_max: Vec<f64>,
    pub b: Vec<f64>,
    pub s0: Vec<f64>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Inclusive ascending range with a fixed step; tolerant of floating-point
/// drift in the endpoint.
pub fn grid_axis(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && end >= start);
    let n = ((end - start) / step + 0.5).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl GridSpec {
    /// The default search box: desired speed, minimum spacing, and time gap
    /// fixed at their common calibrated values, acceleration/deceleration and
    /// the exponent swept over round bounds.
    pub fn table_default() -> Self {
        Self {
            v0: vec![5.00],
            a_max: grid_axis(0.50, 2.00, 0.05),
            b: grid_axis(0.50, 3.00, 0.25),
            s0: vec![3.00],
            tau: vec![1.50],
            delta: grid_axis(1.00, 5.00, 0.25),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in self.axes() {
            if axis.is_empty() {
                return Err(Error::Config(format!("grid axis {name} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Config(format!(
                    "grid axis {name} must contain only positive finite values"
                )));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("grid axis {name} must be strictly ascending")));
            }
        }
        Ok(())
    }

    fn axes(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("v0", &self.v0),
            ("a_max", &self.a_max),
            ("b", &self.b),
            ("s0", &self.s0),
            ("tau", &self.tau),
            ("delta", &self.delta),
        ]
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes().iter().map(|(_, a)| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter combination at a lexicographic index (v0 outermost, delta
    /// innermost).
    fn point(&self, mut index: usize) -> IdmParams {
        let axes = self.axes();
        let mut values = [0.0; 6];
        for (slot, (_, axis)) in values.iter_mut().zip(axes.iter()).rev() {
            *slot = axis[index % axis.len()];
            index /= axis.len();
        }
        IdmParams {
            v0: values[0],
            a_max: values[1],
            b: values[2],
            s0: values[3],
            tau: values[4],
            delta: values[5],
        }
    }
}

/// Outcome of one grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub best_params: IdmParams,
    /// Spacing RMSE of the best parameters, meters.
    pub rmse: f64,
    pub evaluated_count: usize,
    /// The next-best grid points in ascending RMSE order.
    pub runner_ups: Vec<(IdmParams, f64)>,
}

/// Root-mean-square error between two equal-length spacing series.
pub fn spacing_rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape {
            what: "spacing series",
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("spacing series"));
    }
    let sum: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| {
            let d = p - a;
            d * d
        })
        .sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Rolls a single IDM follower behind a recorded leader and returns the
/// predicted spacing at the leader's timestamps (the first sample is the
/// initial spacing).
pub fn simulate_follower(
    params: &IdmParams,
    lead: &TrajectorySeries,
    initial_speed: f64,
    initial_spacing: f64,
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    params.validate()?;
    if lead.is_empty() {
        return Err(Error::EmptyInput("lead series"));
    }
    if initial_spacing < cfg.min_spacing_floor {
        return Err(Error::InvalidParameter(format!(
            "initial spacing {initial_spacing} below the spacing floor {}",
            cfg.min_spacing_floor
        )));
    }
    let mut cfg = *cfg;
    cfg.dt = lead.dt;
    cfg.horizon = lead.span();
    let initial = PlatoonState::from_spacings(
        lead.t0,
        0.0,
        vec![lead.speeds[0], initial_speed],
        vec![initial_spacing],
        cfg.vehicle_length,
    )?;
    let laws = [AccelerationLaw::Playback(lead), AccelerationLaw::Idm(*params)];
    let result = rollout(&initial, &laws, &cfg)?;
    Ok(result.spacing_series(1).expect("follower has a predecessor"))
}

fn observed_initial(follower: &TrajectorySeries) -> Result<(f64, f64, &[f64])> {
    let spacings = follower
        .spacings
        .as_deref()
        .ok_or_else(|| Error::Config("follower series carries no spacing column".into()))?;
    if follower.is_empty() {
        return Err(Error::EmptyInput("follower series"));
    }
    Ok((follower.speeds[0], spacings[0], spacings))
}

/// Evaluates every grid point with a forward simulation and returns the
/// argmin of the spacing RMSE. Ties break toward the lexicographically
/// smaller parameter combination, so the result is independent of evaluation
/// order and of `parallel`.
pub fn grid_search_calibrate(
    grid: &GridSpec,
    lead: &TrajectorySeries,
    follower_observed: &TrajectorySeries,
    cfg: &SimConfig,
    parallel: bool,
) -> Result<CalibrationReport> {
    grid.validate()?;
    let (v_init, s_init, observed) = observed_initial(follower_observed)?;
    if follower_observed.len() != lead.len() {
        return Err(Error::Shape {
            what: "observed follower series",
            expected: lead.len(),
            actual: follower_observed.len(),
        });
    }
    if (follower_observed.dt - lead.dt).abs() > 1e-9 * lead.dt {
        return Err(Error::Config(format!(
            "lead and follower series must share dt ({} vs {})",
            lead.dt, follower_observed.dt
        )));
    }

    let evaluate = |index: usize| -> Result<(usize, f64)> {
        let params = grid.point(index);
        let predicted = simulate_follower(&params, lead, v_init, s_init, cfg)?;
        Ok((index, spacing_rmse(&predicted, observed)?))
    };

    let count = grid.len();
    let mut scored: Vec<(usize, f64)> = if parallel {
        (0..count).into_par_iter().map(evaluate).collect::<Result<_>>()?
    } else {
        (0..count).map(evaluate).collect::<Result<_>>()?
    };
    // Ascending RMSE, index as the deterministic tiebreak.
    scored.sort_by(|(ia, ra), (ib, rb)| ra.total_cmp(rb).then(ia.cmp(ib)));

    let (best_index, best_rmse) = scored[0];
    let runner_ups = scored[1..]
        .iter()
        .take(RUNNER_UP_COUNT)
        .map(|&(i, r)| (grid.point(i), r))
        .collect();
    Ok(CalibrationReport {
        best_params: grid.point(best_index),
        rmse: best_rmse,
        evaluated_count: count,
        runner_ups,
    })
}
