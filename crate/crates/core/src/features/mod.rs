//! Feature derivation, standardization and tabularization.

mod build;
mod table;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::grid::{FieldSeries, Raster, RasterGeometry, Timestamp, FILL};

pub use build::{build_feature_cube, coarse_blocks, DayFeatures, FeatureCube, FeatureOptions};
pub use table::{tabularize, TabularDay, FeatureTable, LabelVector, RowIndex, StandardizationStats};

/// Feature names in the order of the feature catalogue.
pub const ALL_FEATURES: [&str; 19] = [
    "harmonie",
    "hm2",
    "hm1",
    "hp1",
    "hp2",
    "gefs_avg",
    "ga_prev",
    "ga_next",
    "gefs_control",
    "gefs_q1",
    "gefs_q3",
    "gefs_t",
    "init_obs",
    "ydim",
    "xdim",
    "tdim",
    "harmonie_past_error",
    "gefs_avg_past_error",
    "gefs_avg_lmax",
];

/// Extra column marking rows whose past-error features are placeholders.
pub const PAST_ERROR_FLAG: &str = "past_error_missing";

/// Ensemble size the quartile rule is written for.
pub const ENSEMBLE_SIZE: usize = 11;

pub fn is_known_feature(name: &str) -> bool {
    ALL_FEATURES.contains(&name) || name == PAST_ERROR_FLAG
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Raster,
    pub q1: Raster,
    pub q3: Raster,
    pub control: Raster,
}

fn check_members(members: &[Raster]) -> Result<&RasterGeometry> {
    let first = members.first().ok_or_else(|| Error::invalid("no ensemble members"))?;
    for m in &members[1..] {
        first.geometry().ensure_same(m.geometry(), "ensemble members")?;
    }
    Ok(first.geometry())
}

/// Per-pixel mean, first/third quartile and control of an 11-member
/// ensemble whose first member is the control. With eleven members the
/// quartiles are the third-lowest and third-highest values.
pub fn ensemble_stats(members: &[Raster]) -> Result<EnsembleStats> {
    if members.len() != ENSEMBLE_SIZE {
        return Err(Error::config(format!(
            "ensemble statistics need exactly {ENSEMBLE_SIZE} members, got {}",
            members.len()
        )));
    }
    let g = *check_members(members)?;
    let n = g.len();
    let (mut mean, mut q1, mut q3) = (vec![0f32; n], vec![0f32; n], vec![0f32; n]);
    let mut buf = [0f32; ENSEMBLE_SIZE];
    for i in 0..n {
        let mut any_fill = false;
        for (b, m) in buf.iter_mut().zip(members) {
            *b = m.values()[i];
            any_fill |= Raster::is_fill(*b);
        }
        if any_fill {
            (mean[i], q1[i], q3[i]) = (FILL, FILL, FILL);
            continue;
        }
        let sum: f64 = buf.iter().map(|&v| f64::from(v)).sum();
        mean[i] = (sum / ENSEMBLE_SIZE as f64) as f32;
        buf.sort_unstable_by(f32::total_cmp);
        q1[i] = buf[2];
        q3[i] = buf[ENSEMBLE_SIZE - 3];
    }
    Ok(EnsembleStats {
        mean: Raster::new(g, mean)?,
        q1: Raster::new(g, q1)?,
        q3: Raster::new(g, q3)?,
        control: members[0].clone(),
    })
}

/// Fraction of members forecasting more than `threshold_mm` (or at least
/// it, when `inclusive`).
pub fn raw_ensemble_fraction(members: &[Raster], threshold_mm: f64, inclusive: bool) -> Result<Raster> {
    let g = *check_members(members)?;
    let n = members.len() as f64;
    let values = (0..g.len())
        .map(|i| {
            let hits = members
                .iter()
                .filter(|m| {
                    let v = f64::from(m.values()[i]);
                    if inclusive { v >= threshold_mm } else { v > threshold_mm }
                })
                .count();
            (hits as f64 / n) as f32
        })
        .collect();
    Raster::new(g, values)
}

/// Sliding maximum along one axis with windows clipped at the borders.
fn running_max(line: &[f32], half: usize, out: &mut [f32]) {
    let n = line.len();
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&j| line[j] <= line[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(half);
        while deque.front().is_some_and(|&j| j < lo) {
            deque.pop_front();
        }
        *o = line[*deque.front().unwrap()];
    }
}

/// Maximum over the `(2h+1)^2` square around each cell, windows clipped at
/// the raster border.
pub fn square_max(src: &Raster, half_width_px: usize) -> Raster {
    let (w, h) = (src.width(), src.height());
    let mut rows = vec![0f32; w * h];
    for r in 0..h {
        running_max(&src.values()[r * w..(r + 1) * w], half_width_px, &mut rows[r * w..(r + 1) * w]);
    }
    let mut out = vec![0f32; w * h];
    let (mut col, mut col_out) = (vec![0f32; h], vec![0f32; h]);
    for c in 0..w {
        for r in 0..h {
            col[r] = rows[r * w + c];
        }
        running_max(&col, half_width_px, &mut col_out);
        for r in 0..h {
            out[r * w + c] = col_out[r];
        }
    }
    Raster::from_parts_unchecked(*src.geometry(), out)
}

/// Local maximum on `region`, which must sit inside `src` with at least
/// `half_width_px` cells to spare on every side.
pub fn local_max(src: &Raster, half_width_px: usize, region: &RasterGeometry) -> Result<Raster> {
    let g = src.geometry();
    let c0 = g.col_of_x(region.origin_x_km).round();
    let r0 = g.row_of_y(region.origin_y_km).round();
    let hw = half_width_px as f64;
    if c0 < hw
        || r0 < hw
        || c0 + (region.width_px + half_width_px) as f64 > g.width_px as f64
        || r0 + (region.height_px + half_width_px) as f64 > g.height_px as f64
    {
        return Err(Error::OutOfCoverage(format!(
            "local maximum with half width {half_width_px} px needs that margin around the output region"
        )));
    }
    crate::grid::subgrid(&square_max(src, half_width_px), region)
}

/// Coordinate and season predictors for one verification date.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateFeatures {
    pub xdim: Raster,
    pub ydim: Raster,
    pub tdim: Raster,
}

/// Seasonal cycle: `cos(2*pi*d/365)` for day of year `d`.
pub fn tdim_of(date: NaiveDate) -> f64 {
    (date.ordinal() as f64 * 2.0 * std::f64::consts::PI / 365.0).cos()
}

pub fn coordinate_time_features(geometry: &RasterGeometry, date: NaiveDate) -> CoordinateFeatures {
    let (w, h) = (geometry.width_px, geometry.height_px);
    let xdim = (0..h).flat_map(|_| (0..w).map(|c| c as f32)).collect();
    let ydim = (0..h).flat_map(|r| std::iter::repeat(r as f32).take(w)).collect();
    CoordinateFeatures {
        xdim: Raster::from_parts_unchecked(*geometry, xdim),
        ydim: Raster::from_parts_unchecked(*geometry, ydim),
        tdim: Raster::filled(*geometry, tdim_of(date) as f32),
    }
}

/// Observation for the hour ending at initialization time.
pub fn init_obs_feature(obs: &FieldSeries, init_time: &Timestamp) -> Result<Raster> {
    obs.get(init_time).cloned().ok_or_else(|| Error::MissingFeature {
        feature: "init_obs".into(),
        reason: format!("no observation at {init_time}"),
    })
}

/// Error of the previous day's forecast of the same lead against its
/// verifying observation. Returns zeros and `true` when that day is absent.
pub fn past_error(forecast_prev: Option<&Raster>, obs_prev: Option<&Raster>, geometry: &RasterGeometry) -> Result<(Raster, bool)> {
    match (forecast_prev, obs_prev) {
        (Some(f), Some(o)) => Ok((f.zip_with(o, |a, b| a - b)?, false)),
        _ => Ok((Raster::zeros(*geometry), true)),
    }
}

/// Names of the fine-model neighbours of `lead` and their lead times.
pub fn fine_neighbor_leads(lead: i64) -> [(&'static str, i64); 4] {
    [("hm2", lead - 2), ("hm1", lead - 1), ("hp1", lead + 1), ("hp2", lead + 2)]
}

/// Fetch a neighbouring lead's raster for a run, or a missing-feature error.
pub fn temporal_neighbor<'a>(
    by_lead: &'a std::collections::BTreeMap<i64, FieldSeries>,
    name: &str,
    lead: i64,
    valid_time: &Timestamp,
) -> Result<&'a Raster> {
    by_lead.get(&lead).and_then(|s| s.get(valid_time)).ok_or_else(|| Error::MissingFeature {
        feature: name.into(),
        reason: format!("no forecast for lead {lead} h valid at {valid_time}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(w: usize, h: usize) -> RasterGeometry {
        RasterGeometry::new(w, h, 1.0, 0.0, 0.0).unwrap()
    }

    fn members_from(values: &[f32]) -> Vec<Raster> {
        values.iter().map(|&v| Raster::new(g(1, 1), vec![v]).unwrap()).collect()
    }

    #[test]
    fn ensemble_stats_examples() {
        let m = members_from(&[10.0, 3.0, 7.0, 0.0, 1.0, 9.0, 2.0, 5.0, 8.0, 4.0, 6.0]);
        let s = ensemble_stats(&m).unwrap();
        assert_eq!(s.mean.values(), &[5.0]);
        assert_eq!(s.q1.values(), &[2.0]);
        assert_eq!(s.q3.values(), &[8.0]);
        assert_eq!(s.control.values(), &[10.0]);

        let s = ensemble_stats(&members_from(&[4.5; 11])).unwrap();
        for r in [&s.mean, &s.q1, &s.q3, &s.control] {
            assert_eq!(r.values(), &[4.5]);
        }

        // ties at the third-lowest value
        let s = ensemble_stats(&members_from(&[1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])).unwrap();
        assert_eq!(s.q1.values(), &[1.0]);

        assert!(matches!(ensemble_stats(&members_from(&[1.0; 10])), Err(Error::Config(_))));
    }

    #[test]
    fn raw_fraction_examples() {
        let ten = members_from(&[3.0, 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(raw_ensemble_fraction(&ten, 2.0, false).unwrap().values(), &[0.2]);
        let eleven = members_from(&[0.1; 11]);
        assert_eq!(raw_ensemble_fraction(&eleven, 2.0, false).unwrap().values(), &[0.0]);
        let all = members_from(&[5.0; 11]);
        assert_eq!(raw_ensemble_fraction(&all, 2.0, false).unwrap().values(), &[1.0]);
        // threshold equality depends on the inclusive flag
        let at = members_from(&[2.0; 11]);
        assert_eq!(raw_ensemble_fraction(&at, 2.0, false).unwrap().values(), &[0.0]);
        assert_eq!(raw_ensemble_fraction(&at, 2.0, true).unwrap().values(), &[1.0]);
    }

    #[test]
    fn local_max_window_boundary() {
        let mut src = Raster::zeros(g(11, 11));
        let region = RasterGeometry { width_px: 1, height_px: 1, origin_x_km: 5.0, origin_y_km: -5.0, ..g(1, 1) };
        src.set(5, 8, 1.0); // Chebyshev distance 3
        assert_eq!(local_max(&src, 3, &region).unwrap().values(), &[1.0]);
        let mut src = Raster::zeros(g(11, 11));
        src.set(1, 5, 1.0); // distance 4
        assert_eq!(local_max(&src, 3, &region).unwrap().values(), &[0.0]);
        // not enough margin
        assert!(matches!(local_max(&src, 6, &region), Err(Error::OutOfCoverage(_))));
        let uniform = Raster::filled(g(9, 9), 2.5);
        assert_eq!(square_max(&uniform, 2), uniform);
    }

    #[test]
    fn tdim_values() {
        let d = |m, day| NaiveDate::from_ymd_opt(2015, m, day).unwrap();
        assert_eq!(tdim_of(d(12, 31)), 1.0);
        // cos(2*pi/365) and cos(183*2*pi/365), evaluated independently
        assert!((tdim_of(d(1, 1)) - 0.999_851_839_209_116_2).abs() < 1e-15);
        assert!((tdim_of(d(7, 2)) - (-0.999_962_959_116_265_5)).abs() < 1e-15);
        let c = coordinate_time_features(&g(3, 2), d(1, 1));
        assert_eq!(c.xdim.values(), &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        assert_eq!(c.ydim.values(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn past_error_cases() {
        let geo = g(2, 1);
        let f = Raster::new(geo, vec![2.0, 3.0]).unwrap();
        let o = Raster::new(geo, vec![1.0, 2.0]).unwrap();
        assert_eq!(past_error(Some(&f), Some(&f), &geo).unwrap().0.values(), &[0.0, 0.0]);
        assert_eq!(past_error(Some(&f), Some(&o), &geo).unwrap(), (Raster::filled(geo, 1.0), false));
        assert_eq!(past_error(None, Some(&o), &geo).unwrap(), (Raster::zeros(geo), true));
    }

    fn brute_max(src: &Raster, hw: usize) -> Raster {
        let (w, h) = (src.width() as i64, src.height() as i64);
        let mut out = src.clone();
        for r in 0..h {
            for c in 0..w {
                let mut m = f32::NEG_INFINITY;
                for rr in (r - hw as i64).max(0)..=(r + hw as i64).min(h - 1) {
                    for cc in (c - hw as i64).max(0)..=(c + hw as i64).min(w - 1) {
                        m = m.max(src.get(rr as usize, cc as usize));
                    }
                }
                out.set(r as usize, c as usize, m);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn square_max_matches_brute_force(
            vals in proptest::collection::vec(0.0f32..10.0, 400),
            hw in prop_oneof![Just(0usize), Just(1), Just(3)],
        ) {
            let src = Raster::new(g(20, 20), vals).unwrap();
            let fast = square_max(&src, hw);
            prop_assert_eq!(&fast, &brute_max(&src, hw));
            for (a, b) in fast.values().iter().zip(src.values()) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn quartiles_bracket_the_median(vals in proptest::collection::vec(0.0f32..20.0, 11)) {
            let s = ensemble_stats(&members_from(&vals)).unwrap();
            let mut sorted = vals.clone();
            sorted.sort_by(f32::total_cmp);
            let (q1, q3) = (s.q1.values()[0], s.q3.values()[0]);
            prop_assert!(sorted[0] <= q1 && q1 <= sorted[5] && sorted[5] <= q3 && q3 <= sorted[10]);
        }

        #[test]
        fn raw_fraction_is_a_multiple_of_one_eleventh(vals in proptest::collection::vec(0.0f32..3.0, 11), h in 0.0f64..3.0) {
            let f = raw_ensemble_fraction(&members_from(&vals), h, false).unwrap().values()[0];
            let k = (f64::from(f) * 11.0).round();
            prop_assert!((f64::from(f) - k / 11.0).abs() < 1e-6);
        }
    }
}
