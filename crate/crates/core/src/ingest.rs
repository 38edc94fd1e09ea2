//! Trajectory CSV ingestion, resampling, light smoothing, and deterministic
//! synthetic scenario generation.
//!
//! CSV schema (comma-delimited, UTF-8, header required):
//! `time_s, vehicle_id, speed_mps, spacing_m`. The spacing column is empty
//! for the platoon leader. Rows are grouped by vehicle with ascending,
//! uniformly sampled times. The writer emits the identical schema with
//! round-trip-exact float formatting.

use std::io::Write;
use std::path::Path;

use crate::dynamics::{self, AccelerationLaw};
use crate::error::{Error, Result};
use crate::model::{validate_trajectory, IdmParams, PlatoonState, SimConfig, TrajectorySeries};

const TRAJECTORY_HEADER: [&str; 4] = ["time_s", "vehicle_id", "speed_mps", "spacing_m"];
const PARAMS_HEADER: [&str; 7] = ["vehicle_id", "v0", "a_max", "b", "s0", "tau", "delta"];

/// Relative tolerance for the uniform-sampling check.
const DT_TOLERANCE: f64 = 1e-6;

/// The calibrated follower parameter sets bundled as defaults for the
/// reference scenario, ordered by platoon position.
pub fn default_follower_params() -> [IdmParams; 3] {
    [
        IdmParams { v0: 5.00, a_max: 1.19, b: 0.50, s0: 3.00, tau: 1.50, delta: 2.81 },
        IdmParams { v0: 5.00, a_max: 1.31, b: 3.00, s0: 3.00, tau: 1.50, delta: 5.00 },
        IdmParams { v0: 5.00, a_max: 1.70, b: 0.50, s0: 3.00, tau: 1.50, delta: 5.00 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
struct RawTrack {
    vehicle_id: u32,
    times: Vec<f64>,
    speeds: Vec<f64>,
    spacings: Vec<Option<f64>>,
    /// Source line of each sample, for error reporting.
    lines: Vec<u64>,
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} is not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} must be finite, got {field:?}")));
    }
    Ok(v)
}

fn read_tracks<R: std::io::Read>(reader: R) -> Result<Vec<RawTrack>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    {
        let headers = csv.headers().map_err(|e| parse_err(1, e.to_string()))?;
        let actual: Vec<&str> = headers.iter().collect();
        if actual != TRAJECTORY_HEADER {
            return Err(parse_err(
                1,
                format!("expected header {TRAJECTORY_HEADER:?}, got {actual:?}"),
            ));
        }
    }
    let mut tracks: Vec<RawTrack> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let time = parse_f64(&record[0], "time_s", line)?;
        let vehicle_id: u32 = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("vehicle_id is not an integer: {:?}", &record[1])))?;
        let speed = parse_f64(&record[2], "speed_mps", line)?;
        let spacing = if record[3].trim().is_empty() {
            None
        } else {
            Some(parse_f64(&record[3], "spacing_m", line)?)
        };
        let track = match tracks.iter_mut().find(|t| t.vehicle_id == vehicle_id) {
            Some(t) => t,
            None => {
                tracks.push(RawTrack {
                    vehicle_id,
                    times: Vec::new(),
                    speeds: Vec::new(),
                    spacings: Vec::new(),
                    lines: Vec::new(),
                });
                tracks.last_mut().expect("just pushed")
            }
        };
        if let Some(&prev) = track.times.last() {
            if time <= prev {
                return Err(parse_err(
                    line,
                    format!("time must be strictly increasing per vehicle ({prev} -> {time})"),
                ));
            }
        }
        track.times.push(time);
        track.speeds.push(speed);
        track.spacings.push(spacing);
        track.lines.push(line);
    }
    if tracks.is_empty() {
        return Err(Error::EmptyInput("trajectory file"));
    }
    tracks.sort_by_key(|t| t.vehicle_id);
    Ok(tracks)
}

fn track_to_series(track: RawTrack) -> Result<TrajectorySeries> {
    if track.times.len() < 2 {
        return Err(Error::Config(format!(
            "vehicle {} has fewer than two samples",
            track.vehicle_id
        )));
    }
    let dt = track.times[1] - track.times[0];
    for (k, w) in track.times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > DT_TOLERANCE * dt.max(1.0) {
            return Err(Error::Parse {
                line: track.lines[k + 1],
                msg: format!(
                    "vehicle {} is not uniformly sampled (step {step} vs {dt}); \
                     pass a resampling interval to ingest it",
                    track.vehicle_id
                ),
            });
        }
    }
    let has_spacing = track.spacings.iter().any(|s| s.is_some());
    let spacings = if has_spacing {
        let all: Option<Vec<f64>> = track.spacings.iter().copied().collect();
        Some(all.ok_or_else(|| {
            Error::Config(format!(
                "vehicle {} mixes empty and filled spacing cells",
                track.vehicle_id
            ))
        })?)
    } else {
        None
    };
    let series = TrajectorySeries {
        vehicle_id: track.vehicle_id,
        dt,
        t0: track.times[0],
        speeds: track.speeds,
        spacings,
    };
    let violations = validate_trajectory(&series);
    if let Some(v) = violations.first() {
        return Err(Error::Config(format!("vehicle {} series invalid: {v}", series.vehicle_id)));
    }
    Ok(series)
}

/// Linear interpolation of a raw (possibly non-uniform) track onto a uniform
/// grid.
fn interp_track(track: &RawTrack, dt_out: f64) -> Result<RawTrack> {
    let t0 = track.times[0];
    let span = track.times.last().unwrap() - t0;
    if dt_out > span {
        return Err(Error::DegenerateResample { dt_out, span });
    }
    let n_out = (span / dt_out + 1e-9).floor() as usize + 1;
    let has_spacing = track.spacings.iter().all(|s| s.is_some());
    let lerp = |values: &dyn Fn(usize) -> f64, t: f64| -> f64 {
        // Locate the segment containing t.
        let mut hi = track.times.partition_point(|&x| x < t).min(track.times.len() - 1);
        if hi == 0 {
            hi = 1;
        }
        let lo = hi - 1;
        let (ta, tb) = (track.times[lo], track.times[hi]);
        let w = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        values(lo) * (1.0 - w) + values(hi) * w
    };
    let mut times = Vec::with_capacity(n_out);
    let mut speeds = Vec::with_capacity(n_out);
    let mut spacings = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let t = t0 + k as f64 * dt_out;
        times.push(t);
        speeds.push(lerp(&|i| track.speeds[i], t));
        if has_spacing {
            spacings.push(Some(lerp(&|i| track.spacings[i].expect("all present"), t)));
        } else {
            spacings.push(None);
        }
    }
    let lines = vec![0; n_out];
    Ok(RawTrack { vehicle_id: track.vehicle_id, times, speeds, spacings, lines })
}

/// Loads a trajectory CSV into one validated series per vehicle, ordered by
/// vehicle id. Non-uniform sampling is rejected unless `resample_to` is
/// given, in which case every vehicle is interpolated onto that grid.
pub fn load_csv_with<R: std::io::Read>(
    reader: R,
    resample_to: Option<f64>,
) -> Result<Vec<TrajectorySeries>> {
    let tracks = read_tracks(reader)?;
    match resample_to {
        None => tracks.into_iter().map(track_to_series).collect(),
        Some(dt_out) => {
            if !(dt_out > 0.0) || !dt_out.is_finite() {
                return Err(Error::Config(format!("resampling dt must be > 0, got {dt_out}")));
            }
            tracks
                .iter()
                .map(|t| track_to_series(interp_track(t, dt_out)?))
                .collect()
        }
    }
}

/// File-path convenience over [`load_csv_with`].
pub fn load_csv<P: AsRef<Path>>(path: P, resample_to: Option<f64>) -> Result<Vec<TrajectorySeries>> {
    let file = std::fs::File::open(path)?;
    load_csv_with(std::io::BufReader::new(file), resample_to)
}

/// Writes series in the declared schema. Floats are printed in shortest
/// round-trip form so save/load is lossless.
pub fn save_csv_with<W: Write>(mut out: W, series: &[TrajectorySeries]) -> Result<()> {
    writeln!(out, "{}", TRAJECTORY_HEADER.join(","))?;
    for s in series {
        for k in 0..s.len() {
            let spacing = match &s.spacings {
                Some(sp) => format!("{}", sp[k]),
                None => String::new(),
            };
            writeln!(out, "{},{},{},{}", s.time_at(k), s.vehicle_id, s.speeds[k], spacing)?;
        }
    }
    Ok(())
}

pub fn save_csv<P: AsRef<Path>>(path: P, series: &[TrajectorySeries]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_csv_with(&mut file, series)?;
    file.flush()?;
    Ok(())
}

/// Writes per-vehicle car-following parameters.
pub fn save_params_csv<P: AsRef<Path>>(path: P, rows: &[(u32, IdmParams)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", PARAMS_HEADER.join(","))?;
    for (id, p) in rows {
        writeln!(out, "{},{},{},{},{},{},{}", id, p.v0, p.a_max, p.b, p.s0, p.tau, p.delta)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads per-vehicle car-following parameters, ordered by vehicle id.
pub fn load_params_csv<P: AsRef<Path>>(path: P) -> Result<Vec<(u32, IdmParams)>> {
    let file = std::fs::File::open(path)?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    {
        let headers = csv.headers().map_err(|e| parse_err(1, e.to_string()))?;
        let actual: Vec<&str> = headers.iter().collect();
        if actual != PARAMS_HEADER {
            return Err(parse_err(1, format!("expected header {PARAMS_HEADER:?}, got {actual:?}")));
        }
    }
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id: u32 = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("vehicle_id is not an integer: {:?}", &record[0])))?;
        let fields: Vec<f64> = (1..7)
            .map(|i| parse_f64(&record[i], PARAMS_HEADER[i], line))
            .collect::<Result<_>>()?;
        let params = IdmParams::new(
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5],
        )?;
        rows.push((id, params));
    }
    rows.sort_by_key(|(id, _)| *id);
    Ok(rows)
}

/// Linear interpolation of a uniform series onto a new uniform grid spanning
/// the same interval; endpoints are preserved whenever the new grid reaches
/// them.
pub fn resample(series: &TrajectorySeries, dt_out: f64) -> Result<TrajectorySeries> {
    if !(dt_out > 0.0) || !dt_out.is_finite() {
        return Err(Error::Config(format!("resampling dt must be > 0, got {dt_out}")));
    }
    if series.len() < 2 {
        return Err(Error::Config("resampling needs at least two samples".into()));
    }
    let track = RawTrack {
        vehicle_id: series.vehicle_id,
        times: (0..series.len()).map(|k| series.time_at(k)).collect(),
        speeds: series.speeds.clone(),
        spacings: match &series.spacings {
            Some(sp) => sp.iter().map(|&s| Some(s)).collect(),
            None => vec![None; series.len()],
        },
        lines: vec![0; series.len()],
    };
    track_to_series(interp_track(&track, dt_out)?)
}

/// Centered moving average with an odd window; edge samples average over the
/// available one-sided window. Smooths both speeds and spacings.
pub fn smooth(series: &TrajectorySeries, window: usize) -> Result<TrajectorySeries> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!("smoothing window must be odd, got {window}")));
    }
    if window > series.len() {
        return Err(Error::Config(format!(
            "smoothing window {window} exceeds series length {}",
            series.len()
        )));
    }
    let radius = window / 2;
    let run = |values: &[f64]| -> Vec<f64> {
        (0..values.len())
            .map(|k| {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius + 1).min(values.len());
                values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    };
    Ok(TrajectorySeries {
        vehicle_id: series.vehicle_id,
        dt: series.dt,
        t0: series.t0,
        speeds: run(&series.speeds),
        spacings: series.spacings.as_ref().map(|sp| run(sp)),
    })
}

/// Leader speed profile for synthetic scenarios.
#[derive(Debug, Clone, PartialEq)]
pub enum LeaderProfile {
    /// `mean - amplitude * sin(2*pi*t/period)`, clipped at zero: the episode
    /// starts at the mean speed and immediately decelerates into the slow
    /// phase of the wave, as when a queue runs into a jam.
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
    /// Constant-speed segments of given durations.
    Piecewise(Vec<(f64, f64)>),
    /// First vehicle of a trajectory CSV.
    Csv(std::path::PathBuf),
}

/// Specification of a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Total platoon size including leader and AV slot.
    pub n_vehicles: usize,
    pub leader: LeaderProfile,
    /// Initial gaps, length `n_vehicles - 1`; `None` starts every vehicle at
    /// its car-following equilibrium for the leader's initial speed.
    pub initial_spacings: Option<Vec<f64>>,
    /// Car-following parameters for the followers behind the AV slot,
    /// length `n_vehicles - 2`.
    pub follower_params: Vec<IdmParams>,
    /// Generator model for the AV slot's reference behavior.
    pub av_params: IdmParams,
    pub duration: f64,
    pub dt: f64,
    /// Recorded for provenance; generation itself is deterministic.
    pub seed: u64,
}

impl ScenarioSpec {
    /// Initial gap between the AV slot and the leader in the reference
    /// scenario. The AV starts well dropped back, so closing the gap is a
    /// genuine choice: an egoistic policy can glide collision-free while a
    /// prosocial one can spend the headway to pull the platoon faster.
    pub const REFERENCE_AV_GAP: f64 = 50.0;

    /// The bundled reference scenario: a five-vehicle platoon behind a slow
    /// oscillating leader (mean 2.5 m/s, amplitude 1.5 m/s, period 60 s) for
    /// 120 s at dt 0.1 s, with the default calibrated follower models. The
    /// followers start at their car-following equilibrium; the AV slot
    /// starts [`Self::REFERENCE_AV_GAP`] behind the leader.
    pub fn reference() -> Self {
        let followers = default_follower_params();
        let v_init = 2.5;
        let mut spacings = vec![Self::REFERENCE_AV_GAP];
        for p in &followers {
            spacings.push(p.equilibrium_spacing(v_init).expect("v_init below desired speed"));
        }
        Self {
            n_vehicles: 5,
            leader: LeaderProfile::Sinusoid { mean: 2.5, amplitude: 1.5, period: 60.0 },
            initial_spacings: Some(spacings),
            follower_params: followers.to_vec(),
            av_params: followers[0],
            duration: 120.0,
            dt: 0.1,
            seed: 42,
        }
    }

    /// Speed the leader profile takes at t = 0; every vehicle starts there.
    pub fn leader_initial_speed(&self) -> Result<f64> {
        Ok(leader_speeds(self, 2)?[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles < 2 {
            return Err(Error::Config(format!(
                "a scenario needs at least a leader and the AV slot, got {} vehicles",
                self.n_vehicles
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= self.dt) || !self.duration.is_finite() {
            return Err(Error::Config(format!(
                "duration must cover at least one step, got {}",
                self.duration
            )));
        }
        match &self.leader {
            LeaderProfile::Sinusoid { mean, amplitude, period } => {
                if !(*mean > 0.0) || !(*amplitude >= 0.0) || !(*period > 0.0) {
                    return Err(Error::Config(
                        "sinusoid needs mean > 0, amplitude >= 0, period > 0".into(),
                    ));
                }
                if amplitude > mean {
                    return Err(Error::Config(format!(
                        "sinusoid amplitude {amplitude} exceeds mean {mean}: \
                         the profile would demand negative speed"
                    )));
                }
            }
            LeaderProfile::Piecewise(segments) => {
                if segments.is_empty() {
                    return Err(Error::Config("piecewise profile has no segments".into()));
                }
                for (duration, speed) in segments {
                    if !(*duration > 0.0) || !(*speed >= 0.0) {
                        return Err(Error::Config(
                            "piecewise segments need duration > 0 and speed >= 0".into(),
                        ));
                    }
                }
            }
            LeaderProfile::Csv(_) => {}
        }
        if let Some(spacings) = &self.initial_spacings {
            if spacings.len() != self.n_vehicles - 1 {
                return Err(Error::Shape {
                    what: "initial spacings",
                    expected: self.n_vehicles - 1,
                    actual: spacings.len(),
                });
            }
            if spacings.iter().any(|s| !s.is_finite() || *s < SimConfig::DEFAULT_MIN_SPACING_FLOOR)
            {
                return Err(Error::Config(
                    "initial spacings must be at least the spacing floor".into(),
                ));
            }
        }
        if self.follower_params.len() != self.n_vehicles - 2 {
            return Err(Error::Shape {
                what: "follower parameter sets",
                expected: self.n_vehicles - 2,
                actual: self.follower_params.len(),
            });
        }
        for p in self.follower_params.iter().chain(std::iter::once(&self.av_params)) {
            p.validate()?;
        }
        Ok(())
    }
}

/// A generated scenario: the reference rollout's per-vehicle trajectories
/// (vehicle ids 1..=n, front to back), the initial platoon state, the
/// follower models, and the AV slot's reference accelerations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub trajectories: Vec<TrajectorySeries>,
    pub initial: PlatoonState,
    pub follower_params: Vec<IdmParams>,
    pub av_params: IdmParams,
    pub a_true: Vec<f64>,
}

impl SyntheticScenario {
    pub fn leader(&self) -> &TrajectorySeries {
        &self.trajectories[0]
    }
}

fn leader_speeds(spec: &ScenarioSpec, n_samples: usize) -> Result<Vec<f64>> {
    match &spec.leader {
        LeaderProfile::Sinusoid { mean, amplitude, period } => Ok((0..n_samples)
            .map(|k| {
                let t = k as f64 * spec.dt;
                (mean - amplitude * (2.0 * std::f64::consts::PI * t / period).sin()).max(0.0)
            })
            .collect()),
        LeaderProfile::Piecewise(segments) => {
            let total: f64 = segments.iter().map(|(d, _)| d).sum();
            let needed = (n_samples - 1) as f64 * spec.dt;
            if total + 1e-9 < needed {
                return Err(Error::Config(format!(
                    "piecewise profile covers {total} s but the scenario needs {needed} s"
                )));
            }
            Ok((0..n_samples)
                .map(|k| {
                    let t = k as f64 * spec.dt;
                    let mut elapsed = 0.0;
                    for (duration, speed) in segments {
                        elapsed += duration;
                        if t < elapsed {
                            return *speed;
                        }
                    }
                    segments.last().expect("non-empty").1
                })
                .collect())
        }
        LeaderProfile::Csv(path) => {
            let series = load_csv(path, Some(spec.dt))?;
            let lead = &series[0];
            if lead.len() < n_samples {
                return Err(Error::Config(format!(
                    "leader CSV covers {} samples but the scenario needs {n_samples}",
                    lead.len()
                )));
            }
            Ok(lead.speeds[..n_samples].to_vec())
        }
    }
}

/// Generates the reference scenario data: the leader from the profile,
/// followers (and the AV slot) driven by their car-following models from a
/// common initial state, all recorded as trajectory series. Deterministic.
pub fn gen_synthetic(spec: &ScenarioSpec) -> Result<SyntheticScenario> {
    spec.validate()?;
    let n = spec.n_vehicles;
    let n_steps = (spec.duration / spec.dt).round() as usize;
    let speeds = leader_speeds(spec, n_steps + 1)?;
    let leader = TrajectorySeries {
        vehicle_id: 1,
        dt: spec.dt,
        t0: 0.0,
        speeds,
        spacings: None,
    };

    let cfg = SimConfig::new(spec.dt, n_steps as f64 * spec.dt)?;
    let v_init = leader.speeds[0];
    let slot_params: Vec<IdmParams> = std::iter::once(spec.av_params)
        .chain(spec.follower_params.iter().copied())
        .collect();
    let spacings = match &spec.initial_spacings {
        Some(s) => s.clone(),
        None => slot_params
            .iter()
            .map(|p| {
                p.equilibrium_spacing(v_init).map_err(|_| {
                    Error::Config(format!(
                        "no equilibrium spacing at initial speed {v_init}; \
                         supply explicit initial spacings"
                    ))
                })
            })
            .collect::<Result<_>>()?,
    };
    let initial =
        PlatoonState::from_spacings(0.0, 0.0, vec![v_init; n], spacings, cfg.vehicle_length)?;

    let mut laws = vec![AccelerationLaw::Playback(&leader)];
    for p in &slot_params {
        laws.push(AccelerationLaw::Idm(*p));
    }
    let reference = dynamics::rollout(&initial, &laws, &cfg)?;
    let ids: Vec<u32> = (1..=n as u32).collect();
    let trajectories = reference.to_trajectories(&ids, spec.dt)?;
    for s in &trajectories {
        let violations = validate_trajectory(s);
        if let Some(v) = violations.first() {
            return Err(Error::Config(format!("generated series invalid: {v}")));
        }
    }
    let a_true = reference.accelerations[1].clone();
    Ok(SyntheticScenario {
        trajectories,
        initial,
        follower_params: spec.follower_params.clone(),
        av_params: spec.av_params,
        a_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_series(n: usize, dt: f64) -> TrajectorySeries {
        TrajectorySeries {
            vehicle_id: 3,
            dt,
            t0: 0.0,
            speeds: (0..n).map(|k| k as f64 * 0.5).collect(),
            spacings: Some((0..n).map(|k| 5.0 + k as f64).collect()),
        }
    }

    #[test]
    fn csv_round_trip_is_identical() {
        let spec = ScenarioSpec { duration: 5.0, ..ScenarioSpec::reference() };
        let synth = gen_synthetic(&spec).unwrap();
        let mut buf = Vec::new();
        save_csv_with(&mut buf, &synth.trajectories).unwrap();
        let loaded = load_csv_with(buf.as_slice(), None).unwrap();
        assert_eq!(loaded, synth.trajectories);
    }

    #[test]
    fn well_formed_two_vehicle_file_loads() {
        let data = "time_s,vehicle_id,speed_mps,spacing_m\n\
                    0.0,1,2.0,\n0.1,1,2.1,\n0.2,1,2.2,\n\
                    0.0,2,2.0,7.5\n0.1,2,2.0,7.5\n0.2,2,2.1,7.4\n";
        let series = load_csv_with(data.as_bytes(), None).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].vehicle_id, 1);
        assert!(series[0].spacings.is_none());
        assert_eq!(series[1].spacings.as_ref().unwrap().len(), 3);
        for s in &series {
            assert!(validate_trajectory(s).is_empty());
        }
    }

    #[test]
    fn time_gap_is_rejected_with_the_offending_row() {
        let data = "time_s,vehicle_id,speed_mps,spacing_m\n\
                    0.0,1,2.0,\n0.1,1,2.1,\n0.3,1,2.2,\n";
        let err = load_csv_with(data.as_bytes(), None).unwrap_err();
        match &err {
            Error::Parse { line, msg } => {
                assert_eq!(*line, 4, "{msg}");
                assert!(msg.contains("not uniformly sampled"), "{msg}");
                assert!(msg.contains("vehicle 1"), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn non_monotone_time_is_a_parse_error_with_row() {
        let data = "time_s,vehicle_id,speed_mps,spacing_m\n\
                    0.0,1,2.0,\n0.2,1,2.1,\n0.1,1,2.2,\n";
        let err = load_csv_with(data.as_bytes(), None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn nan_cells_and_missing_columns_are_parse_errors() {
        let data = "time_s,vehicle_id,speed_mps,spacing_m\n0.0,1,NaN,\n0.1,1,2.0,\n";
        assert!(matches!(load_csv_with(data.as_bytes(), None), Err(Error::Parse { .. })));
        let data = "time_s,vehicle_id,speed\n0.0,1,2.0\n";
        assert!(matches!(load_csv_with(data.as_bytes(), None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_uniform_sampling_loads_when_resampling_is_requested() {
        let data = "time_s,vehicle_id,speed_mps,spacing_m\n\
                    0.0,1,0.0,\n1.0,1,2.0,\n1.5,1,3.0,\n";
        assert!(load_csv_with(data.as_bytes(), None).is_err());
        let series = load_csv_with(data.as_bytes(), Some(0.5)).unwrap();
        assert_eq!(series[0].speeds, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn resample_identity_and_linearity() {
        let s = ramp_series(5, 1.0);
        let same = resample(&s, 1.0).unwrap();
        assert_eq!(same.speeds, s.speeds);
        assert_eq!(same.spacings, s.spacings);

        let two = TrajectorySeries {
            vehicle_id: 1,
            dt: 1.0,
            t0: 0.0,
            speeds: vec![0.0, 2.0],
            spacings: None,
        };
        let fine = resample(&two, 0.5).unwrap();
        assert_eq!(fine.speeds, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn resample_round_trip_on_linear_data() {
        let s = ramp_series(11, 0.5);
        let coarse = resample(&s, 0.25).unwrap();
        let back = resample(&coarse, 0.5).unwrap();
        assert_eq!(back.speeds.len(), s.speeds.len());
        for (a, b) in back.speeds.iter().zip(&s.speeds) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in back
            .spacings
            .as_ref()
            .unwrap()
            .iter()
            .zip(s.spacings.as_ref().unwrap())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_preserves_extremes_of_monotone_series() {
        let s = ramp_series(9, 0.5);
        let r = resample(&s, 0.2).unwrap();
        let min = r.speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = r.speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, s.speeds[0]);
        assert_eq!(max, *s.speeds.last().unwrap());
    }

    #[test]
    fn resample_rejects_degenerate_output() {
        let two = TrajectorySeries {
            vehicle_id: 1,
            dt: 1.0,
            t0: 0.0,
            speeds: vec![0.0, 2.0],
            spacings: None,
        };
        assert!(matches!(
            resample(&two, 3.0),
            Err(Error::DegenerateResample { .. })
        ));
        // Equal to the span: exactly the two endpoints survive.
        let same = resample(&two, 1.0).unwrap();
        assert_eq!(same.speeds, two.speeds);
    }

    #[test]
    fn smooth_reference_values() {
        let s = TrajectorySeries {
            vehicle_id: 1,
            dt: 1.0,
            t0: 0.0,
            speeds: vec![0.0, 3.0, 0.0],
            spacings: None,
        };
        let out = smooth(&s, 3).unwrap();
        assert_eq!(out.speeds, vec![1.5, 1.0, 1.5]);
        let id = smooth(&s, 1).unwrap();
        assert_eq!(id.speeds, s.speeds);
        let constant = TrajectorySeries {
            vehicle_id: 1,
            dt: 1.0,
            t0: 0.0,
            speeds: vec![2.0; 7],
            spacings: None,
        };
        assert_eq!(smooth(&constant, 5).unwrap().speeds, constant.speeds);
        assert!(matches!(smooth(&s, 2), Err(Error::Config(_))));
    }

    #[test]
    fn sinusoid_leader_stays_in_the_slow_regime() {
        let spec = ScenarioSpec::reference();
        let synth = gen_synthetic(&spec).unwrap();
        let lead = synth.leader();
        assert_eq!(lead.len(), 1201);
        let min = lead.speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = lead.speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= 1.0 - 1e-9, "min {min}");
        assert!(max <= 4.0 + 1e-9, "max {max}");
        // Episode starts at the mean and decelerates first.
        assert!((lead.speeds[0] - 2.5).abs() < 1e-12);
        assert!(lead.speeds[1] < lead.speeds[0]);
    }

    #[test]
    fn zero_amplitude_gives_a_constant_leader() {
        let mut spec = ScenarioSpec::reference();
        spec.leader = LeaderProfile::Sinusoid { mean: 2.5, amplitude: 0.0, period: 60.0 };
        spec.duration = 10.0;
        let synth = gen_synthetic(&spec).unwrap();
        assert!(synth.leader().speeds.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec { duration: 20.0, ..ScenarioSpec::reference() };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_outputs_validate_and_line_up() {
        let spec = ScenarioSpec { duration: 30.0, ..ScenarioSpec::reference() };
        let synth = gen_synthetic(&spec).unwrap();
        assert_eq!(synth.trajectories.len(), 5);
        assert_eq!(synth.a_true.len(), 300);
        for s in &synth.trajectories {
            assert!(validate_trajectory(s).is_empty());
            assert_eq!(s.len(), 301);
        }
        // Followers start at the leader's initial speed.
        for s in &synth.trajectories[1..] {
            assert_eq!(s.speeds[0], synth.leader().speeds[0]);
        }
    }

    #[test]
    fn piecewise_profile_samples_segments() {
        let mut spec = ScenarioSpec::reference();
        spec.n_vehicles = 2;
        spec.follower_params = vec![];
        spec.leader = LeaderProfile::Piecewise(vec![(1.0, 1.0), (1.0, 3.0)]);
        spec.duration = 2.0;
        spec.dt = 0.5;
        spec.initial_spacings = Some(vec![6.0]);
        let synth = gen_synthetic(&spec).unwrap();
        // Segments are half-open: t = 1.0 already belongs to the second one.
        assert_eq!(synth.leader().speeds, vec![1.0, 1.0, 3.0, 3.0, 3.0]);
        // Insufficient coverage is a configuration error.
        spec.leader = LeaderProfile::Piecewise(vec![(1.0, 1.0)]);
        assert!(matches!(gen_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ScenarioSpec::reference();
        spec.duration = 0.0;
        assert!(spec.validate().is_err());

        let mut spec = ScenarioSpec::reference();
        spec.leader = LeaderProfile::Sinusoid { mean: 1.0, amplitude: 1.5, period: 60.0 };
        assert!(spec.validate().is_err());

        let mut spec = ScenarioSpec::reference();
        spec.initial_spacings = Some(vec![5.0]);
        assert!(spec.validate().is_err());

        let mut spec = ScenarioSpec::reference();
        spec.follower_params.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn params_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.csv");
        let rows: Vec<(u32, IdmParams)> = default_follower_params()
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32 + 3, *p))
            .collect();
        save_params_csv(&path, &rows).unwrap();
        let loaded = load_params_csv(&path).unwrap();
        assert_eq!(loaded, rows);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Resampling a monotone series preserves its extremes whenever
            /// the new grid divides the span evenly.
            #[test]
            fn resample_preserves_monotone_extremes(
                n in 3usize..40,
                slope in 0.01..2.0f64,
                halvings in 1u32..4,
            ) {
                let dt = 0.8;
                let series = TrajectorySeries {
                    vehicle_id: 1,
                    dt,
                    t0: 0.0,
                    speeds: (0..n).map(|k| k as f64 * slope).collect(),
                    spacings: None,
                };
                let out = resample(&series, dt / 2f64.powi(halvings as i32)).unwrap();
                let min = out.speeds.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = out.speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((min - series.speeds[0]).abs() < 1e-9);
                prop_assert!((max - series.speeds[n - 1]).abs() < 1e-9);
            }

            /// Serialized trajectories always reload to the identical series.
            #[test]
            fn csv_round_trip_identity(
                speeds in proptest::collection::vec(0.0..40.0f64, 2..30),
                with_spacing in any::<bool>(),
            ) {
                let spacings = with_spacing
                    .then(|| speeds.iter().map(|v| v + 0.5).collect::<Vec<_>>());
                let series = vec![TrajectorySeries {
                    vehicle_id: 3,
                    dt: 0.1,
                    t0: 0.0,
                    speeds,
                    spacings,
                }];
                let mut buf = Vec::new();
                save_csv_with(&mut buf, &series).unwrap();
                let loaded = load_csv_with(buf.as_slice(), None).unwrap();
                prop_assert_eq!(loaded, series);
            }
        }
    }
}
