use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::experiment::threshold_labels;
use crate::grid::scenario::init_time;
use crate::grid::{deaccumulate, gefs_to_hourly_rate, nearest_index_map, FieldSeries, Mask, Raster, RasterGeometry, Scenario, SourceTag, Timestamp};

use super::table::{tabularize, FeatureTable, LabelVector, TabularDay};
use super::{
    coordinate_time_features, ensemble_stats, fine_neighbor_leads, init_obs_feature, is_known_feature, local_max, past_error,
    raw_ensemble_fraction, temporal_neighbor, PAST_ERROR_FLAG,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureOptions {
    /// Count members equal to the threshold in `gefs_t`.
    pub inclusive_threshold: bool,
    pub lmax_half_width_px: usize,
}

impl FeatureOptions {
    pub fn for_scenario(s: &Scenario) -> Self {
        FeatureOptions { inclusive_threshold: false, lmax_half_width_px: s.config.lmax_half_width_px }
    }
}

#[derive(Debug, Clone)]
pub struct DayFeatures {
    pub date: NaiveDate,
    pub valid_time: Timestamp,
    /// One raster per cube feature, on the window grid.
    pub rasters: Vec<Raster>,
    /// 0/1 exceedance of the observation at `valid_time`.
    pub label: Raster,
    pub past_error_missing: bool,
}

/// Feature rasters for one (lead, threshold) over every usable scenario day.
#[derive(Debug, Clone)]
pub struct FeatureCube {
    pub lead_hours: i64,
    pub threshold_mm: f64,
    pub names: Vec<String>,
    pub geometry: RasterGeometry,
    pub mask: Mask,
    pub days: Vec<DayFeatures>,
    /// Days that could not be built, with the reason.
    pub skipped: Vec<(NaiveDate, String)>,
}

/// Block ends (previous, containing, next) of the 3 h coarse periods around `lead`.
pub fn coarse_blocks(lead: i64) -> (i64, i64, i64) {
    let cur = ((lead + 2) / 3) * 3;
    (cur - 3, cur, cur + 3)
}

fn missing(feature: &str, reason: impl Into<String>) -> Error {
    Error::MissingFeature { feature: feature.into(), reason: reason.into() }
}

fn gather(src: &Raster, map: &[usize], dst: &RasterGeometry) -> Raster {
    Raster::from_parts_unchecked(*dst, map.iter().map(|&i| src.values()[i]).collect())
}

fn mean_of(rasters: &[Raster]) -> Raster {
    let g = *rasters[0].geometry();
    let n = rasters.len() as f64;
    let values = (0..g.len()).map(|i| (rasters.iter().map(|r| f64::from(r.values()[i])).sum::<f64>() / n) as f32).collect();
    Raster::from_parts_unchecked(g, values)
}

struct Ctx<'a> {
    s: &'a Scenario,
    lead: i64,
    fine_map: Vec<usize>,
    coarse_map: Vec<usize>,
}

impl Ctx<'_> {
    fn harmonie(&self, name: &str, day: NaiveDate, lead: i64) -> Result<Raster> {
        let t = init_time(day) + Duration::hours(lead);
        let r = temporal_neighbor(&self.s.fine, name, lead, &t)?;
        Ok(gather(r, &self.fine_map, &self.s.geometry.window))
    }

    /// Hourly rates of every member for the coarse blocks ending at
    /// `ends`, on the coarse grid.
    fn coarse_rates(&self, day: NaiveDate, ends: &[i64]) -> Result<Vec<BTreeMap<i64, Raster>>> {
        let last = *ends.iter().max().unwrap();
        let init = init_time(day);
        self.s
            .coarse_members
            .iter()
            .enumerate()
            .map(|(m, steps)| {
                let mut entries = Vec::new();
                for step in (3..=last).step_by(3) {
                    let t = init + Duration::hours(step);
                    let r = steps
                        .get(&step)
                        .and_then(|s| s.get(&t))
                        .ok_or_else(|| missing("gefs_avg", format!("member {m} has no step {step} h for {day}")))?;
                    entries.push((t, r.clone()));
                }
                let run = FieldSeries::new(last, SourceTag::Member(m), entries)?;
                let rates = gefs_to_hourly_rate(&deaccumulate(&run, 2)?)?;
                Ok(ends
                    .iter()
                    .map(|&e| (e, rates.get(&(init + Duration::hours(e))).unwrap().clone()))
                    .collect())
            })
            .collect()
    }

    fn gefs_avg(&self, day: NaiveDate) -> Result<Raster> {
        let (_, cur, _) = coarse_blocks(self.lead);
        let members: Vec<Raster> = self.coarse_rates(day, &[cur])?.into_iter().map(|mut b| b.remove(&cur).unwrap()).collect();
        Ok(gather(&mean_of(&members), &self.coarse_map, &self.s.geometry.window))
    }
}

/// Build the named features for every scenario day at `lead` hours and
/// exceedance threshold `threshold_mm`.
pub fn build_feature_cube(s: &Scenario, lead: i64, threshold_mm: f64, names: &[String], opts: FeatureOptions) -> Result<FeatureCube> {
    if names.is_empty() {
        return Err(Error::config("feature list is empty"));
    }
    for n in names {
        if !is_known_feature(n) || n == PAST_ERROR_FLAG {
            return Err(Error::config(format!("unknown feature '{n}'")));
        }
    }
    let has = |n: &str| names.iter().any(|x| x == n);
    let geo = &s.geometry;
    let ctx = Ctx {
        s,
        lead,
        fine_map: nearest_index_map(&geo.fine, &geo.window)?,
        coarse_map: nearest_index_map(&geo.coarse, &geo.window)?,
    };
    let domain_map = if has("gefs_avg_lmax") { Some(nearest_index_map(&geo.coarse, &geo.domain)?) } else { None };
    let coarse_names = ["gefs_avg", "ga_prev", "ga_next", "gefs_control", "gefs_q1", "gefs_q3", "gefs_t", "gefs_avg_lmax", "gefs_avg_past_error"];
    let needs_coarse = names.iter().any(|n| coarse_names.contains(&n.as_str()));
    let (prev_end, cur_end, next_end) = coarse_blocks(lead);
    let mut ends = vec![cur_end];
    if has("ga_prev") {
        if prev_end < 3 {
            return Err(missing("ga_prev", format!("no coarse block before lead {lead} h")));
        }
        ends.push(prev_end);
    }
    if has("ga_next") {
        ends.push(next_end);
    }

    let mut days = Vec::with_capacity(s.days.len());
    let mut skipped = Vec::new();
    for &day in &s.days {
        let valid_time = init_time(day) + Duration::hours(lead);
        let Some(obs_now) = s.observations.get(&valid_time) else {
            skipped.push((day, format!("no observation at {valid_time}")));
            continue;
        };
        let rates = if needs_coarse { Some(ctx.coarse_rates(day, &ends)?) } else { None };
        let block = |end: i64| -> Vec<Raster> { rates.as_ref().unwrap().iter().map(|m| m[&end].clone()).collect() };
        let on_window = |r: &Raster| gather(r, &ctx.coarse_map, &geo.window);
        let mut past_missing = false;
        let mut rasters = Vec::with_capacity(names.len());
        for name in names {
            let r = match name.as_str() {
                "harmonie" => ctx.harmonie(name, day, lead)?,
                "hm2" | "hm1" | "hp1" | "hp2" => {
                    let (_, l) = fine_neighbor_leads(lead).into_iter().find(|(n, _)| n == name).unwrap();
                    ctx.harmonie(name, day, l)?
                }
                "gefs_avg" => on_window(&mean_of(&block(cur_end))),
                "ga_prev" => on_window(&mean_of(&block(prev_end))),
                "ga_next" => on_window(&mean_of(&block(next_end))),
                "gefs_control" | "gefs_q1" | "gefs_q3" => {
                    let st = ensemble_stats(&block(cur_end))?;
                    on_window(match name.as_str() {
                        "gefs_control" => &st.control,
                        "gefs_q1" => &st.q1,
                        _ => &st.q3,
                    })
                }
                "gefs_t" => on_window(&raw_ensemble_fraction(&block(cur_end), threshold_mm, opts.inclusive_threshold)?),
                "gefs_avg_lmax" => {
                    let on_domain = gather(&mean_of(&block(cur_end)), domain_map.as_ref().unwrap(), &geo.domain);
                    local_max(&on_domain, opts.lmax_half_width_px, &geo.window)?
                }
                "init_obs" => init_obs_feature(&s.observations, &init_time(day))?,
                "xdim" | "ydim" | "tdim" => {
                    let c = coordinate_time_features(&geo.window, valid_time.date_naive());
                    match name.as_str() {
                        "xdim" => c.xdim,
                        "ydim" => c.ydim,
                        _ => c.tdim,
                    }
                }
                "harmonie_past_error" | "gefs_avg_past_error" => {
                    let prev = day.pred_opt().filter(|p| s.days.contains(p));
                    let obs_prev = s.observations.get(&(valid_time - Duration::hours(24)));
                    let fc_prev = match prev {
                        Some(p) if name == "harmonie_past_error" => ctx.harmonie("harmonie", p, lead).ok(),
                        Some(p) => ctx.gefs_avg(p).ok(),
                        None => None,
                    };
                    let (r, flag) = past_error(fc_prev.as_ref(), obs_prev, &geo.window)?;
                    past_missing |= flag;
                    r
                }
                other => unreachable!("unvalidated feature {other}"),
            };
            rasters.push(r);
        }
        days.push(DayFeatures {
            date: day,
            valid_time,
            rasters,
            label: threshold_labels(obs_now, threshold_mm)?,
            past_error_missing: past_missing,
        });
    }
    Ok(FeatureCube {
        lead_hours: lead,
        threshold_mm,
        names: names.to_vec(),
        geometry: geo.window,
        mask: s.mask.clone(),
        days,
        skipped,
    })
}

impl FeatureCube {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn has_past_error(&self) -> bool {
        self.names.iter().any(|n| n.ends_with("_past_error"))
    }

    /// Add a derived feature, one raster per cube day.
    pub fn push_feature(&mut self, name: &str, rasters: Vec<Raster>) -> Result<()> {
        if self.feature_index(name).is_some() {
            return Err(Error::config(format!("duplicate feature name '{name}'")));
        }
        if rasters.len() != self.days.len() {
            return Err(Error::shape(format!("{} rasters for {} days", rasters.len(), self.days.len())));
        }
        for (d, r) in self.days.iter_mut().zip(rasters) {
            self.geometry.ensure_same(r.geometry(), "derived feature")?;
            d.rasters.push(r);
        }
        self.names.push(name.into());
        Ok(())
    }

    /// Position of the cube day with this date.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.iter().position(|d| d.date == date)
    }

    /// Masked cells of the selected days as a table. When any past-error
    /// feature is present a flag column is appended.
    pub fn table(&self, day_indices: &[usize], columns: &[String]) -> Result<(FeatureTable, LabelVector)> {
        let idx = columns
            .iter()
            .map(|c| self.feature_index(c).ok_or_else(|| Error::config(format!("feature '{c}' is not in the cube"))))
            .collect::<Result<Vec<_>>>()?;
        let add_flag = self.has_past_error() && columns.iter().any(|c| c.ends_with("_past_error"));
        let flags: Vec<Raster> = if add_flag {
            day_indices
                .iter()
                .map(|&d| Raster::filled(self.geometry, if self.days[d].past_error_missing { 1.0 } else { 0.0 }))
                .collect()
        } else {
            Vec::new()
        };
        let mut names = columns.to_vec();
        if add_flag {
            names.push(PAST_ERROR_FLAG.into());
        }
        let tab_days: Vec<TabularDay> = day_indices
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let day = &self.days[d];
                let mut features: Vec<&Raster> = idx.iter().map(|&i| &day.rasters[i]).collect();
                if add_flag {
                    features.push(&flags[k]);
                }
                TabularDay { time: day.valid_time, features, label: &day.label }
            })
            .collect();
        tabularize(&names, &self.mask, &tab_days)
    }
}
