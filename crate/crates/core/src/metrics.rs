//! Error metrics and the historical-average baseline.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Observations, SampleWindow};
use crate::error::{Error, Result};
use crate::math;

/// Forecast horizons reported by default.
pub const REPORT_HORIZONS: [usize; 4] = [1, 3, 6, 12];

/// A `[windows, stations, horizon]` cube of AQI values in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecasts {
    origins: Vec<usize>,
    stations: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl Forecasts {
    pub fn new(origins: Vec<usize>, stations: usize, horizon: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != origins.len() * stations * horizon {
            return Err(Error::Shape {
                op: "forecasts",
                lhs: alloc::vec![origins.len(), stations, horizon],
                rhs: alloc::vec![values.len()],
            });
        }
        Ok(Forecasts {
            origins,
            stations,
            horizon,
            values,
        })
    }

    /// Observed values at every window's target hours.
    pub fn targets(obs: &Observations, windows: &[SampleWindow]) -> Result<Self> {
        let horizon = windows.first().map_or(0, |w| w.tau_out);
        let s = obs.station_count();
        let mut values = Vec::with_capacity(windows.len() * s * horizon);
        for w in windows {
            if w.tau_out != horizon || w.target_end() >= obs.hours() {
                return Err(Error::Data("window targets outside the observations".into()));
            }
            for st in 0..s {
                values.extend((1..=horizon).map(|k| obs.aqi(w.origin + k, st)));
            }
        }
        Forecasts::new(windows.iter().map(|w| w.origin).collect(), s, horizon, values)
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn windows(&self) -> usize {
        self.origins.len()
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value for window `w`, station `s`, horizon `k` (1-based).
    pub fn get(&self, w: usize, s: usize, k: usize) -> f64 {
        self.values[(w * self.stations + s) * self.horizon + k - 1]
    }

    /// Errors `pred − target` at horizon `k` over the masked stations.
    pub fn errors_at(&self, targets: &Forecasts, k: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
        if self.origins != targets.origins || self.stations != targets.stations || self.horizon != targets.horizon
        {
            return Err(Error::Shape {
                op: "metrics",
                lhs: alloc::vec![self.windows(), self.stations, self.horizon],
                rhs: alloc::vec![targets.windows(), targets.stations, targets.horizon],
            });
        }
        if k == 0 || k > self.horizon {
            return Err(Error::Config(alloc::format!("horizon {k} outside 1..={}", self.horizon)));
        }
        let mut out = Vec::new();
        for w in 0..self.windows() {
            for s in 0..self.stations {
                if mask.is_none_or(|m| m[s]) {
                    out.push(self.get(w, s, k) - targets.get(w, s, k));
                }
            }
        }
        Ok(out)
    }
}

pub fn mean_absolute(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

pub fn root_mean_square(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    Ok(math::sqrt(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64))
}

/// MAE at horizon `k` over the masked stations.
pub fn mae(preds: &Forecasts, targets: &Forecasts, k: usize, mask: Option<&[bool]>) -> Result<f64> {
    mean_absolute(&preds.errors_at(targets, k, mask)?)
}

/// RMSE at horizon `k` over the masked stations.
pub fn rmse(preds: &Forecasts, targets: &Forecasts, k: usize, mask: Option<&[bool]>) -> Result<f64> {
    root_mean_square(&preds.errors_at(targets, k, mask)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

pub fn horizon_metrics(
    preds: &Forecasts,
    targets: &Forecasts,
    horizons: &[usize],
    mask: Option<&[bool]>,
) -> Result<Vec<HorizonMetrics>> {
    horizons
        .iter()
        .map(|&k| {
            let e = preds.errors_at(targets, k, mask)?;
            Ok(HorizonMetrics {
                horizon: k,
                mae: mean_absolute(&e)?,
                rmse: root_mean_square(&e)?,
                count: e.len(),
            })
        })
        .collect()
}

/// Horizons from [`REPORT_HORIZONS`] that fit within `tau_out`.
pub fn report_horizons(tau_out: usize) -> Vec<usize> {
    REPORT_HORIZONS.iter().copied().filter(|k| *k <= tau_out).collect()
}

/// Historical average for hour `t + k`: the mean of `history` at
/// `t + k − period·j`, `j ≥ 1`. `None` when no such hour lies inside `history`.
pub fn ha_baseline(history: &[f64], t: usize, k: usize, period: usize) -> Option<f64> {
    let target = t + k;
    let (mut sum, mut n) = (0.0, 0usize);
    let mut j = 1;
    while period > 0 && j * period <= target {
        let h = target - j * period;
        if h < history.len() {
            sum += history[h];
            n += 1;
        }
        j += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Historical-average forecasts for every window, using hours `[0, history_end)`
/// as history. Returns the forecasts and how many fell back to the global mean.
pub fn ha_forecasts(
    obs: &Observations,
    windows: &[SampleWindow],
    history_end: usize,
    period: usize,
) -> Result<(Forecasts, usize)> {
    let horizon = windows.first().map_or(0, |w| w.tau_out);
    let s = obs.station_count();
    let end = history_end.min(obs.hours());
    if end == 0 {
        return Err(Error::Data("historical average needs a non-empty history".into()));
    }
    let histories: Vec<Vec<f64>> = (0..s)
        .map(|st| (0..end).map(|h| obs.aqi(h, st)).collect())
        .collect();
    let global: Vec<f64> = histories
        .iter()
        .map(|h| h.iter().sum::<f64>() / h.len() as f64)
        .collect();
    let mut fallbacks = 0;
    let mut values = Vec::with_capacity(windows.len() * s * horizon);
    for w in windows {
        for st in 0..s {
            for k in 1..=horizon {
                values.push(ha_baseline(&histories[st], w.origin, k, period).unwrap_or_else(|| {
                    fallbacks += 1;
                    global[st]
                }));
            }
        }
    }
    Ok((
        Forecasts::new(windows.iter().map(|w| w.origin).collect(), s, horizon, values)?,
        fallbacks,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_errors() {
        assert_eq!(mean_absolute(&[3.0, -4.0]).unwrap(), 3.5);
        let r = root_mean_square(&[3.0, -4.0]).unwrap();
        assert!((r - 2.5 * math::sqrt(2.0)).abs() < 1e-12);
        assert_eq!(mean_absolute(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(mean_absolute(&[]).is_err());
    }

    #[test]
    fn ha_examples() {
        let periodic: Vec<f64> = (0..168 * 3).map(|h| (h % 168) as f64).collect();
        for t in 168..300 {
            for k in 1..=12 {
                assert_eq!(ha_baseline(&periodic, t, k, 168), Some(((t + k) % 168) as f64));
            }
        }
        let constant = [7.5; 400];
        assert_eq!(ha_baseline(&constant, 380, 3, 168), Some(7.5));
        assert_eq!(ha_baseline(&constant, 10, 3, 168), None);
    }
}
