//! Flag parsing helpers shared by the subcommands.

use anyhow::{anyhow, bail, Result};
use svo_acc::ingest::LeaderProfile;
use svo_acc::model::SvoAngle;

/// Parses a preference angle: plain radians or the literals `0`, `pi/2`,
/// `pi/4`, `pi/8`, `3pi/8`.
pub fn parse_phi(text: &str) -> Result<SvoAngle> {
    let t = text.trim();
    let value = match t {
        "pi/2" => std::f64::consts::FRAC_PI_2,
        "pi/4" => std::f64::consts::FRAC_PI_4,
        "pi/8" => std::f64::consts::FRAC_PI_8,
        "3pi/8" => 3.0 * std::f64::consts::FRAC_PI_8,
        other => other
            .parse::<f64>()
            .map_err(|_| anyhow!("cannot parse preference angle {other:?}"))?,
    };
    SvoAngle::new(value).map_err(|e| anyhow!(e))
}

/// Comma-separated list of preference angles.
pub fn parse_phi_list(text: &str) -> Result<Vec<SvoAngle>> {
    let phis: Vec<SvoAngle> =
        text.split(',').map(parse_phi).collect::<Result<_>>()?;
    if phis.is_empty() {
        bail!("phi list is empty");
    }
    Ok(phis)
}

/// Grid axis: either a comma list (`0.5,1.0,1.5`) or an inclusive range with
/// step (`0.5:2.0:0.05`).
pub fn parse_axis(text: &str) -> Result<Vec<f64>> {
    let t = text.trim();
    if t.contains(':') {
        let parts: Vec<&str> = t.split(':').collect();
        if parts.len() != 3 {
            bail!("range axis must be start:end:step, got {t:?}");
        }
        let start: f64 = parts[0].parse()?;
        let end: f64 = parts[1].parse()?;
        let step: f64 = parts[2].parse()?;
        if !(step > 0.0) || end < start {
            bail!("range axis needs end >= start and step > 0, got {t:?}");
        }
        Ok(svo_acc::calibration::grid_axis(start, end, step))
    } else {
        Ok(t.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("{e}: {v:?}")))
            .collect::<Result<_>>()?)
    }
}

/// Leader profile: `sinusoid:mean,amplitude,period`,
/// `piecewise:dur1:speed1,dur2:speed2,...`, or `csv:path`.
pub fn parse_leader(text: &str) -> Result<LeaderProfile> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("leader profile must be kind:args, got {text:?}"))?;
    match kind {
        "sinusoid" => {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("{e}: {v:?}")))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                bail!("sinusoid profile needs mean,amplitude,period");
            }
            Ok(LeaderProfile::Sinusoid { mean: parts[0], amplitude: parts[1], period: parts[2] })
        }
        "piecewise" => {
            let mut segments = Vec::new();
            for seg in rest.split(',') {
                let (dur, speed) = seg
                    .split_once(':')
                    .ok_or_else(|| anyhow!("piecewise segment must be duration:speed"))?;
                segments.push((dur.trim().parse()?, speed.trim().parse()?));
            }
            Ok(LeaderProfile::Piecewise(segments))
        }
        "csv" => Ok(LeaderProfile::Csv(rest.into())),
        other => bail!("unknown leader profile kind {other:?}"),
    }
}

/// Comma-separated spacing list.
pub fn parse_spacings(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("{e}: {v:?}")))
        .collect()
}
