//! Post-hoc evaluation: per-vehicle energy indicator, average speed, and
//! percentage-change tables across social-preference settings.

use crate::dynamics::RolloutResult;
use crate::error::{Error, Result};
use crate::model::SvoAngle;
use crate::training;

/// Baseline raw values below this are flagged: percentage changes against a
/// near-zero baseline are numerically unstable.
pub const NEAR_ZERO_BASELINE: f64 = 1e-3;

/// Acceleration-based energy indicator; shares its implementation with the
/// training self-utility so the two agree bit-exactly.
pub fn energy_indicator(accelerations: &[f64], dt: f64) -> f64 {
    training::u_self(accelerations, dt)
}

/// Arithmetic mean of the speed samples.
pub fn average_speed(speeds: &[f64]) -> Result<f64> {
    if speeds.is_empty() {
        return Err(Error::EmptyInput("speed series"));
    }
    Ok(speeds.iter().sum::<f64>() / speeds.len() as f64)
}

/// `100 * (value - baseline) / baseline`. A zero baseline is an error so
/// tables report it as undefined rather than as infinity.
pub fn percent_change(baseline: f64, value: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok(100.0 * (value - baseline) / baseline)
}

/// Raw metrics of one vehicle under one preference setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCell {
    pub energy: f64,
    pub avg_speed: f64,
}

/// One table row: a vehicle's raw metrics per preference angle plus the
/// percentage changes relative to the baseline angle. `None` marks an
/// undefined percentage (zero baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRow {
    pub vehicle_id: u32,
    pub cells: Vec<MetricCell>,
    pub energy_change: Vec<Option<f64>>,
    pub speed_change: Vec<Option<f64>>,
}

/// Energy/speed trade-off table across preference settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTable {
    /// Column order; `phis[baseline_index]` is the comparison baseline.
    pub phis: Vec<SvoAngle>,
    pub baseline_index: usize,
    pub rows: Vec<VehicleRow>,
    /// Near-zero baseline diagnostics, one message per affected cell.
    pub warnings: Vec<String>,
}

/// Builds the evaluation table from one rollout per preference angle.
///
/// All rollouts must cover the same platoon and horizon. Raw cells are pure
/// functions of the rollouts; percentage cells are computed from unrounded
/// raw values.
pub fn build_table(
    rollouts: &[(SvoAngle, RolloutResult)],
    baseline_phi: SvoAngle,
    vehicle_ids: &[u32],
    dt: f64,
) -> Result<EvaluationTable> {
    if rollouts.is_empty() {
        return Err(Error::EmptyInput("rollouts"));
    }
    let baseline_index = rollouts
        .iter()
        .position(|(phi, _)| phi.radians() == baseline_phi.radians())
        .ok_or_else(|| Error::Config("baseline phi missing from the rollout set".into()))?;
    let n = rollouts[0].1.n_vehicles();
    let steps = rollouts[0].1.n_steps();
    if vehicle_ids.len() != n {
        return Err(Error::Shape { what: "vehicle ids", expected: n, actual: vehicle_ids.len() });
    }
    for (_, r) in rollouts {
        if r.n_vehicles() != n {
            return Err(Error::Shape {
                what: "rollout vehicles",
                expected: n,
                actual: r.n_vehicles(),
            });
        }
        if r.n_steps() != steps {
            return Err(Error::Shape { what: "rollout steps", expected: steps, actual: r.n_steps() });
        }
    }

    let raw_cells: Vec<Vec<MetricCell>> = (0..n)
        .map(|vehicle| {
            rollouts
                .iter()
                .map(|(_, r)| {
                    Ok(MetricCell {
                        energy: energy_indicator(&r.accelerations[vehicle], dt),
                        avg_speed: average_speed(&r.speed_series(vehicle))?,
                    })
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let phis: Vec<SvoAngle> = rollouts.iter().map(|(phi, _)| *phi).collect();
    assemble_table(phis, baseline_index, vehicle_ids, raw_cells)
}

/// Builds the evaluation table from precomputed raw cells (vehicle-major,
/// one cell per preference angle); used when re-rendering stored metrics.
pub fn build_table_from_cells(
    phis: &[SvoAngle],
    baseline_phi: SvoAngle,
    vehicle_ids: &[u32],
    cells: &[Vec<MetricCell>],
) -> Result<EvaluationTable> {
    let baseline_index = phis
        .iter()
        .position(|phi| phi.radians() == baseline_phi.radians())
        .ok_or_else(|| Error::Config("baseline phi missing from the phi set".into()))?;
    if cells.len() != vehicle_ids.len() {
        return Err(Error::Shape {
            what: "metric rows",
            expected: vehicle_ids.len(),
            actual: cells.len(),
        });
    }
    for row in cells {
        if row.len() != phis.len() {
            return Err(Error::Shape {
                what: "metric cells",
                expected: phis.len(),
                actual: row.len(),
            });
        }
    }
    assemble_table(phis.to_vec(), baseline_index, vehicle_ids, cells.to_vec())
}

fn assemble_table(
    phis: Vec<SvoAngle>,
    baseline_index: usize,
    vehicle_ids: &[u32],
    raw_cells: Vec<Vec<MetricCell>>,
) -> Result<EvaluationTable> {
    let mut rows = Vec::with_capacity(raw_cells.len());
    let mut warnings = Vec::new();
    for (vehicle, cells) in raw_cells.into_iter().enumerate() {
        let base = cells[baseline_index];
        if base.energy.abs() < NEAR_ZERO_BASELINE {
            warnings.push(format!(
                "vehicle {}: baseline energy {:.6} is below {NEAR_ZERO_BASELINE}; \
                 its percentage changes are unstable",
                vehicle_ids[vehicle], base.energy
            ));
        }
        let energy_change =
            cells.iter().map(|c| percent_change(base.energy, c.energy).ok()).collect();
        let speed_change =
            cells.iter().map(|c| percent_change(base.avg_speed, c.avg_speed).ok()).collect();
        rows.push(VehicleRow {
            vehicle_id: vehicle_ids[vehicle],
            cells,
            energy_change,
            speed_change,
        });
    }
    Ok(EvaluationTable { phis, baseline_index, rows, warnings })
}
