//! Max-historical reward curves and their aggregation across seeds.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub timesteps: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Median,
    Mean,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Median => "median",
            Aggregate::Mean => "mean",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregate::Median),
            "mean" => Ok(Aggregate::Mean),
            _ => Err(Error::InvalidConfig(format!(
                "unknown aggregation `{s}` (expected median or mean)"
            ))),
        }
    }
}

/// Running maximum of `(timesteps, reward)` evaluations.
pub fn max_historical(points: impl IntoIterator<Item = (u64, f64)>) -> Vec<CurvePoint> {
    let mut best = f64::NEG_INFINITY;
    points
        .into_iter()
        .map(|(timesteps, r)| {
            best = best.max(r);
            CurvePoint {
                timesteps,
                reward: best,
            }
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn value_at(curve: &[CurvePoint], t: u64) -> Option<f64> {
    curve
        .iter()
        .take_while(|p| p.timesteps <= t)
        .last()
        .map(|p| p.reward)
}

/// Pointwise aggregate over curves. Curves with differing cadence are
/// resampled onto the union of their timesteps by carrying the last value
/// forward; a curve with no value yet at some grid point is an error.
pub fn aggregate_seeds(curves: &[Vec<CurvePoint>], mode: Aggregate) -> Result<Vec<CurvePoint>> {
    if curves.is_empty() || curves.iter().any(Vec::is_empty) {
        return Err(Error::RunData("no curves to aggregate".into()));
    }
    let mut grid: Vec<u64> = curves.iter().flatten().map(|p| p.timesteps).collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .map(|t| {
            let mut values = curves
                .iter()
                .map(|c| value_at(c, t))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| {
                    Error::RunData(format!(
                        "cadence mismatch: some curve has no evaluation at or before {t} steps"
                    ))
                })?;
            let reward = match mode {
                Aggregate::Median => median(&mut values),
                Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
            };
            Ok(CurvePoint { timesteps: t, reward })
        })
        .collect()
}
