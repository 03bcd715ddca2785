use crate::error::{Error, Result};

use super::{FieldSeries, Mask, Raster, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct LagCorrelation {
    pub lag_hours: i64,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagReport {
    pub rows: Vec<LagCorrelation>,
    pub best_lag: Option<i64>,
}

fn lookup<'a>(forecasts: &'a [FieldSeries], t: &Timestamp) -> Option<&'a Raster> {
    forecasts.iter().find_map(|s| s.get(t))
}

/// Pearson correlation between every observation at `t` and the forecast
/// valid at `t + lag`, pooled over masked pixels and all observation times.
///
/// `forecasts` may hold several lead-time series of the same source; the
/// first one that has a raster at the required valid time is used.
pub fn lag_correlation_check(
    forecasts: &[FieldSeries],
    obs: &FieldSeries,
    mask: Option<&Mask>,
    lags: &[i64],
) -> Result<LagReport> {
    let mut rows = Vec::with_capacity(lags.len());
    for &lag in lags {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (t, o) in obs.entries() {
            let Some(f) = lookup(forecasts, &(*t + chrono::Duration::hours(lag))) else { continue };
            f.geometry().ensure_same(o.geometry(), "forecast vs observation")?;
            if let Some(m) = mask {
                m.geometry().ensure_same(o.geometry(), "mask vs observation")?;
            }
            for (i, (&x, &y)) in f.values().iter().zip(o.values()).enumerate() {
                if mask.is_some_and(|m| !m.flags()[i]) || Raster::is_fill(x) || Raster::is_fill(y) {
                    continue;
                }
                let (x, y) = (x as f64, y as f64);
                n += 1;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
        }
        if n < 2 {
            return Err(Error::invalid(format!("lag {lag} h: fewer than 2 overlapping samples")));
        }
        let nf = n as f64;
        let cov = sxy - sx * sy / nf;
        let vx = sxx - sx * sx / nf;
        let vy = syy - sy * sy / nf;
        let scale = 1e-12 * (sxx.abs() + syy.abs()).max(f64::MIN_POSITIVE);
        let pearson = if vx <= scale || vy <= scale { None } else { Some(cov / (vx * vy).sqrt()) };
        rows.push(LagCorrelation { lag_hours: lag, pearson, samples: n });
    }
    let best_lag = rows
        .iter()
        .filter_map(|r| r.pearson.map(|p| (r.lag_hours, p)))
        .fold(None, |best: Option<(i64, f64)>, (lag, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((lag, p)),
        })
        .map(|(lag, _)| lag);
    Ok(LagReport { rows, best_lag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{RasterGeometry, SourceTag};
    use chrono::Duration;

    fn t(h: i64) -> Timestamp {
        "2016-01-01T00:00:00Z".parse::<Timestamp>().unwrap() + Duration::hours(h)
    }

    fn hourly(values: impl Fn(i64) -> Vec<f32>, hours: std::ops::Range<i64>) -> FieldSeries {
        let g = RasterGeometry::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let e = hours.map(|h| (t(h), Raster::new(g, values(h)).unwrap())).collect();
        FieldSeries::new(0, SourceTag::Observation, e).unwrap()
    }

    fn field(h: i64) -> Vec<f32> {
        (0..4).map(|i| ((h * 7 + i * 3) % 11) as f32 + (h as f32 * 0.37).sin()).collect()
    }

    #[test]
    fn identical_series_peaks_at_zero() {
        let fc = hourly(field, 0..30);
        let obs_sub = hourly(field, 5..25);
        let rep = lag_correlation_check(&[fc], &obs_sub, None, &[-1, 0, 1]).unwrap();
        assert_eq!(rep.best_lag, Some(0));
        assert!((rep.rows[1].pearson.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn late_forecast_peaks_at_plus_one() {
        // forecast valid at t shows the observation of t-1
        let fc = hourly(|h| field(h - 1), 0..30);
        let obs = hourly(field, 5..25);
        let rep = lag_correlation_check(&[fc], &obs, None, &[-1, 0, 1]).unwrap();
        assert_eq!(rep.best_lag, Some(1));
    }

    #[test]
    fn constant_fields_are_undefined_not_errors() {
        let fc = hourly(|_| vec![1.0; 4], 0..10);
        let obs = hourly(|_| vec![2.0; 4], 2..8);
        let rep = lag_correlation_check(&[fc], &obs, None, &[0]).unwrap();
        assert_eq!(rep.rows[0].pearson, None);
        assert_eq!(rep.best_lag, None);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let fc = hourly(field, 0..3);
        let obs = hourly(field, 10..12);
        assert!(lag_correlation_check(&[fc], &obs, None, &[0]).is_err());
    }
}
