//! Desk-scale synthetic forecast/observation scenarios.
//!
//! The "truth" is a sum of Gaussian rain cells drifting with a per-day
//! advection velocity and waxing/waning with a Gaussian life cycle. A
//! monotone piecewise-linear map turns the raw cell field into precipitation
//! so that the requested exceedance cover is met on the masked observation
//! pixels. Forecast sources sample the same field displaced, time-shifted,
//! scaled and perturbed according to their [`BiasSpec`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::io;
use super::ops::{nearest_index_map, window_around};
use super::{FieldSeries, Mask, Raster, RasterGeometry, SourceTag, Timestamp};

/// Systematic and random error of one forecast source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSpec {
    /// Constant displacement `[dx, dy]` in observation pixels (east, north).
    pub advection_offset_px: [f64; 2],
    /// Positive values make the forecast late: it shows at `t` what is
    /// observed at `t - shift`.
    pub timing_shift_hours: i64,
    pub amplitude_scale: f64,
    /// Standard deviation of i.i.d. noise added on the source grid (mm).
    pub noise_sd: f64,
    /// Standard deviation of a per-run random displacement at +12 h, in
    /// observation pixels; grows linearly with lead time.
    pub position_sd_px: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            advection_offset_px: [0.0, 0.0],
            timing_shift_hours: 0,
            amplitude_scale: 1.0,
            noise_sd: 0.0,
            position_sd_px: 0.0,
        }
    }
}

impl BiasSpec {
    pub fn unbiased() -> Self {
        Self::default()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.noise_sd >= 0.0) || !(self.position_sd_px >= 0.0) {
            return Err(Error::config(format!("{name}: noise_sd and position_sd_px must be >= 0")));
        }
        if !(self.amplitude_scale >= 0.0) || !self.amplitude_scale.is_finite() {
            return Err(Error::config(format!("{name}: amplitude_scale must be finite and >= 0")));
        }
        if self.advection_offset_px.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("{name}: advection offset must be finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverTarget {
    pub threshold_mm: f64,
    pub cover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Lead times (hours) whose verification hours define the cover target.
    pub leads: Vec<i64>,
    pub target_cover: Vec<CoverTarget>,
    pub coarse_cell_km: f64,
    pub fine_cell_km: f64,
    pub obs_cell_km: f64,
    pub n_members: usize,
    pub mask_px: usize,
    pub window_px: usize,
    pub window_margin_km: f64,
    /// Extra observation-grid margin around the window so that the local
    /// maximum feature needs no padding.
    pub lmax_half_width_px: usize,
    pub mask_holes: usize,
    pub mask_hole_px: usize,
    pub cells_per_day: usize,
    pub member_spread_px: f64,
    pub fine: BiasSpec,
    pub coarse: BiasSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            n_days: 120,
            start_date: NaiveDate::from_ymd_opt(2015, 11, 2).unwrap(),
            leads: vec![12, 24],
            target_cover: vec![CoverTarget { threshold_mm: 0.5, cover: 0.055 }],
            coarse_cell_km: 25.0,
            fine_cell_km: 2.5,
            obs_cell_km: 1.0,
            n_members: 11,
            mask_px: 64,
            window_px: 128,
            window_margin_km: 30.0,
            lmax_half_width_px: 50,
            mask_holes: 3,
            mask_hole_px: 6,
            cells_per_day: 40,
            member_spread_px: 6.0,
            fine: BiasSpec {
                advection_offset_px: [3.0, -2.0],
                timing_shift_hours: 0,
                amplitude_scale: 1.1,
                noise_sd: 0.25,
                position_sd_px: 6.0,
            },
            coarse: BiasSpec {
                advection_offset_px: [-4.0, 3.0],
                timing_shift_hours: 0,
                amplitude_scale: 0.7,
                noise_sd: 0.1,
                position_sd_px: 8.0,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.n_members < 1 {
            return Err(Error::config("n_members must be at least 1"));
        }
        if c.n_days < 1 {
            return Err(Error::config("n_days must be at least 1"));
        }
        for (name, v) in [("coarse_cell_km", c.coarse_cell_km), ("fine_cell_km", c.fine_cell_km), ("obs_cell_km", c.obs_cell_km)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if c.leads.is_empty() || c.leads.iter().any(|&l| l < 3) {
            return Err(Error::config("leads must be non-empty and at least 3 h"));
        }
        if c.mask_px == 0 || c.mask_px > c.window_px {
            return Err(Error::config("mask_px must be in 1..=window_px"));
        }
        if c.mask_holes > 0 && (c.mask_hole_px == 0 || c.mask_hole_px >= c.mask_px) {
            return Err(Error::config("mask_hole_px must be in 1..mask_px"));
        }
        if c.target_cover.is_empty() {
            return Err(Error::config("at least one cover target is required"));
        }
        for (i, t) in c.target_cover.iter().enumerate() {
            if !(t.cover > 0.0 && t.cover <= 0.5) {
                return Err(Error::config(format!("infeasible cover target {} (must be in (0, 0.5])", t.cover)));
            }
            if !(t.threshold_mm > 0.0) {
                return Err(Error::config("cover thresholds must be positive"));
            }
            if i > 0 {
                let p = c.target_cover[i - 1];
                if !(t.threshold_mm > p.threshold_mm && t.cover < p.cover) {
                    return Err(Error::config(
                        "cover targets must have increasing thresholds and decreasing covers",
                    ));
                }
            }
        }
        c.fine.validate("fine")?;
        c.coarse.validate("coarse")?;
        if !(c.member_spread_px >= 0.0) {
            return Err(Error::config("member_spread_px must be >= 0"));
        }
        Ok(())
    }

    /// Fine-forecast lead hours the scenario materialises.
    pub fn fine_leads(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self.leads.iter().flat_map(|&l| (l - 3).max(1)..=l + 3).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Coarse accumulation steps (hours, multiples of 3).
    pub fn coarse_steps(&self) -> Vec<i64> {
        let max_lead = *self.leads.iter().max().unwrap_or(&3);
        let last = ((max_lead + 3 + 2) / 3) * 3;
        (1..=last / 3).map(|k| 3 * k).collect()
    }
}

/// Grids used by a scenario, all derived from its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    /// Observation-resolution grid covering the window plus the local-maximum margin.
    pub domain: RasterGeometry,
    /// Square model window, aligned with the domain.
    pub window: RasterGeometry,
    pub fine: RasterGeometry,
    pub coarse: RasterGeometry,
    /// Observation-resolution lattice covering every source grid.
    pub canvas: RasterGeometry,
}

impl ScenarioGeometry {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let c_o = cfg.obs_cell_km;
        let d = cfg.window_px + 2 * cfg.lmax_half_width_px;
        let domain = RasterGeometry::new(d, d, c_o, 0.0, 0.0)?;
        let (cx, cy) = domain.center();
        let span = d as f64 * c_o;
        let source = |cell: f64| -> Result<RasterGeometry> {
            let w = (span / cell).ceil() as usize + 1;
            let half = (w as f64 - 1.0) / 2.0 * cell;
            RasterGeometry::new(w, w, cell, cx - half, cy + half)
        };
        let fine = source(cfg.fine_cell_km)?;
        let coarse = source(cfg.coarse_cell_km)?;
        let widest = fine.extent().1.max(coarse.extent().1) - cx;
        let pad = 2 * (((widest - span / 2.0) / c_o).ceil().max(0.0) as usize + 1);
        let canvas = RasterGeometry::new(d + pad, d + pad, c_o, -(pad as f64 / 2.0) * c_o, (pad as f64 / 2.0) * c_o)?;
        let off = cfg.lmax_half_width_px as f64;
        let window = RasterGeometry::new(cfg.window_px, cfg.window_px, c_o, off * c_o, -off * c_o)?;
        Ok(ScenarioGeometry { domain, window, fine, coarse, canvas })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RainCell {
    peak_hour: f64,
    life_sd_h: f64,
    sigma_km: f64,
    amplitude: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
}

/// Analytic raw field: sum of drifting Gaussian cells over absolute hours.
#[derive(Debug, Clone)]
struct CellField {
    cells: Vec<RainCell>,
}

const LIFE_CUTOFF: f64 = 4.0;
const SPACE_CUTOFF: f64 = 4.0;

impl CellField {
    fn generate(cfg: &ScenarioConfig, geo: &ScenarioGeometry) -> Self {
        let (x0, x1, y0, y1) = geo.canvas.extent();
        let pad = 60.0;
        let mut cells = Vec::new();
        for day in -2..=(cfg.n_days as i64 + 2) {
            let mut r = rng::stream(cfg.seed, &[1, day as u64]);
            let n: f64 = StandardNormal.sample(&mut r);
            let e: f64 = StandardNormal.sample(&mut r);
            let (vx, vy) = (12.0 + 6.0 * n, 6.0 * e);
            for _ in 0..cfg.cells_per_day {
                let z: f64 = StandardNormal.sample(&mut r);
                let peak_hour = 24.0 * day as f64 + r.gen_range(0.0..24.0);
                let c = RainCell {
                    peak_hour,
                    life_sd_h: r.gen_range(2.5..7.0),
                    sigma_km: r.gen_range(4.0..12.0),
                    amplitude: (0.5 * z).exp(),
                    x0: r.gen_range(x0 - pad..x1 + pad),
                    y0: r.gen_range(y0 - pad..y1 + pad),
                    vx,
                    vy,
                };
                cells.push(c);
            }
        }
        cells.sort_by(|a, b| a.peak_hour.total_cmp(&b.peak_hour));
        CellField { cells }
    }

    fn active(&self, t: f64) -> &[RainCell] {
        const MAX_LIFE: f64 = LIFE_CUTOFF * 7.0;
        let lo = self.cells.partition_point(|c| c.peak_hour < t - MAX_LIFE);
        let hi = self.cells.partition_point(|c| c.peak_hour <= t + MAX_LIFE);
        &self.cells[lo..hi]
    }

    /// Raw field at absolute hour `t` on the points `(xs[i], ys[j])`, with the
    /// field displaced by `(dx, dy)` km. Output is row-major over `ys` x `xs`.
    fn eval_grid(&self, t: f64, xs: &[f64], ys: &[f64], dx: f64, dy: f64) -> Vec<f64> {
        let mut out = vec![0.0; xs.len() * ys.len()];
        for c in self.active(t) {
            let dt = t - c.peak_hour;
            if dt.abs() > LIFE_CUTOFF * c.life_sd_h {
                continue;
            }
            let amp = c.amplitude * (-0.5 * (dt / c.life_sd_h).powi(2)).exp();
            let cx = c.x0 + c.vx * dt + dx;
            let cy = c.y0 + c.vy * dt + dy;
            let reach = SPACE_CUTOFF * c.sigma_km;
            let inv = 1.0 / (2.0 * c.sigma_km * c.sigma_km);
            let gx: Vec<(usize, f64)> = xs
                .iter()
                .enumerate()
                .filter(|(_, &x)| (x - cx).abs() <= reach)
                .map(|(i, &x)| (i, (-(x - cx).powi(2) * inv).exp()))
                .collect();
            if gx.is_empty() {
                continue;
            }
            for (j, &y) in ys.iter().enumerate() {
                if (y - cy).abs() > reach {
                    continue;
                }
                let gy = amp * (-(y - cy).powi(2) * inv).exp();
                let row = &mut out[j * xs.len()..(j + 1) * xs.len()];
                for &(i, g) in &gx {
                    row[i] += gy * g;
                }
            }
        }
        out
    }
}

/// Monotone map from raw cell field to precipitation (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    /// `(raw, mm)` knots; the origin is implicit.
    pub knots: Vec<(f64, f64)>,
}

impl IntensityMap {
    pub fn apply(&self, raw: f64) -> f64 {
        let mut prev = (0.0, 0.0);
        for &(q, h) in &self.knots {
            if raw == q {
                return h;
            }
            if raw < q {
                return prev.1 + (raw - prev.0) * (h - prev.1) / (q - prev.0);
            }
            prev = (q, h);
        }
        let n = self.knots.len();
        let (qa, ha) = if n >= 2 { self.knots[n - 2] } else { (0.0, 0.0) };
        let (qb, hb) = self.knots[n - 1];
        hb + (raw - qb) * (hb - ha) / (qb - qa)
    }

    /// Knots such that exactly `round(cover * n)` samples exceed each threshold.
    fn fit(samples: &mut [f64], targets: &[CoverTarget]) -> Result<Self> {
        samples.sort_unstable_by(|a, b| b.total_cmp(a));
        let n = samples.len();
        let mut knots = Vec::with_capacity(targets.len());
        for t in targets {
            let above = ((t.cover * n as f64).round() as usize).min(n - 1);
            let q = samples[above];
            if q <= 0.0 || knots.last().is_some_and(|&(pq, _)| q <= pq) {
                return Err(Error::config(format!(
                    "infeasible cover target {} at {} mm for this scenario",
                    t.cover, t.threshold_mm
                )));
            }
            knots.push((q, t.threshold_mm));
        }
        Ok(IntensityMap { knots })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievedCover {
    pub lead_hours: i64,
    pub threshold_mm: f64,
    pub target: f64,
    pub achieved: f64,
}

/// Generated observations and forecasts plus the information needed to
/// regenerate any truth field on demand.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub geometry: ScenarioGeometry,
    pub days: Vec<NaiveDate>,
    /// Hourly observations on the window grid at every init and verification hour.
    pub observations: FieldSeries,
    /// Hourly fine deterministic forecasts per lead, on the fine grid.
    pub fine: BTreeMap<i64, FieldSeries>,
    /// Per member (0 = control), running 3-hourly accumulations per step,
    /// resetting every 6 h, on the coarse grid.
    pub coarse_members: Vec<BTreeMap<i64, FieldSeries>>,
    pub mask: Mask,
    pub intensity: IntensityMap,
    pub achieved_cover: Vec<AchievedCover>,
    field: Option<CellField>,
}

pub fn init_time(day: NaiveDate) -> Timestamp {
    day.and_hms_opt(0, 0, 0).unwrap().and_utc()
}

fn build_mask(cfg: &ScenarioConfig, window: &RasterGeometry) -> Result<Mask> {
    let w = window.width_px;
    let off = (w - cfg.mask_px) / 2;
    let mut valid = vec![false; window.len()];
    for r in off..off + cfg.mask_px {
        for c in off..off + cfg.mask_px {
            valid[r * w + c] = true;
        }
    }
    let mut rr = rng::stream(cfg.seed, &[2]);
    for _ in 0..cfg.mask_holes {
        let span = cfg.mask_px - cfg.mask_hole_px;
        let r0 = off + rr.gen_range(1..span);
        let c0 = off + rr.gen_range(1..span);
        for r in r0..r0 + cfg.mask_hole_px {
            for c in c0..c0 + cfg.mask_hole_px {
                valid[r * w + c] = false;
            }
        }
    }
    Mask::new(*window, valid)
}

struct Sampler {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// For each destination cell, index into the `ys x xs` evaluation grid.
    pick: Vec<usize>,
}

impl Sampler {
    /// Points of `canvas` nearest to each cell centre of `dst`.
    fn new(canvas: &RasterGeometry, dst: &RasterGeometry) -> Result<Self> {
        let map = nearest_index_map(canvas, dst)?;
        let mut cols: Vec<usize> = map.iter().map(|&i| i % canvas.width_px).collect();
        let mut rows: Vec<usize> = map.iter().map(|&i| i / canvas.width_px).collect();
        cols.sort_unstable();
        cols.dedup();
        rows.sort_unstable();
        rows.dedup();
        let pick = map
            .iter()
            .map(|&i| {
                let r = rows.binary_search(&(i / canvas.width_px)).unwrap();
                let c = cols.binary_search(&(i % canvas.width_px)).unwrap();
                r * cols.len() + c
            })
            .collect();
        Ok(Sampler {
            xs: cols.iter().map(|&c| canvas.x_of_col(c as f64)).collect(),
            ys: rows.iter().map(|&r| canvas.y_of_row(r as f64)).collect(),
            pick,
        })
    }

    fn sample(&self, field: &CellField, t: f64, dx: f64, dy: f64) -> Vec<f64> {
        let grid = field.eval_grid(t, &self.xs, &self.ys, dx, dy);
        self.pick.iter().map(|&i| grid[i]).collect()
    }
}

fn normal2(r: &mut rng::Rng) -> (f64, f64) {
    (StandardNormal.sample(r), StandardNormal.sample(r))
}

/// Generate a scenario deterministically from its config.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let geo = ScenarioGeometry::from_config(cfg)?;
    let mask = build_mask(cfg, &geo.window)?;
    let (_, _, win_check) = window_around(&geo.domain, &mask.extent_geometry(), cfg.window_px, cfg.window_margin_km)?;
    if win_check != geo.window {
        return Err(Error::config("mask is not centred in the model window"));
    }
    let field = CellField::generate(cfg, &geo);
    let days: Vec<NaiveDate> = (0..cfg.n_days).map(|d| cfg.start_date + Duration::days(d as i64)).collect();
    let c_o = cfg.obs_cell_km;

    // observation hours, absolute from the start date
    let mut obs_hours: Vec<i64> = (0..cfg.n_days as i64)
        .flat_map(|d| std::iter::once(0).chain(cfg.leads.iter().copied()).map(move |h| 24 * d + h))
        .collect();
    obs_hours.sort_unstable();
    obs_hours.dedup();

    let obs_sampler = Sampler::new(&geo.canvas, &geo.window)?;
    let raw_obs: Vec<Vec<f64>> = obs_hours.iter().map(|&h| obs_sampler.sample(&field, h as f64, 0.0, 0.0)).collect();

    let valid = mask.valid_indices();
    let verification: Vec<bool> = obs_hours
        .iter()
        .map(|&h| cfg.leads.iter().any(|&l| (h - l) >= 0 && (h - l) % 24 == 0 && (h - l) / 24 < cfg.n_days as i64))
        .collect();
    let mut samples: Vec<f64> = raw_obs
        .iter()
        .zip(&verification)
        .filter(|(_, &v)| v)
        .flat_map(|(r, _)| valid.iter().map(move |&i| r[i]))
        .collect();
    let intensity = IntensityMap::fit(&mut samples, &cfg.target_cover)?;

    let t0 = init_time(cfg.start_date);
    let to_raster = |g: &RasterGeometry, raw: &[f64], scale: f64| {
        Raster::from_parts_unchecked(*g, raw.iter().map(|&v| (scale * intensity.apply(v)) as f32).collect())
    };
    let observations = FieldSeries::new(
        0,
        SourceTag::Observation,
        obs_hours
            .iter()
            .zip(&raw_obs)
            .map(|(&h, raw)| (t0 + Duration::hours(h), to_raster(&geo.window, raw, 1.0)))
            .collect(),
    )?;

    let mut achieved_cover = Vec::new();
    for &lead in &cfg.leads {
        for target in &cfg.target_cover {
            let (mut hit, mut n) = (0usize, 0usize);
            for d in 0..cfg.n_days as i64 {
                let r = observations.get(&(t0 + Duration::hours(24 * d + lead))).expect("verification hour");
                for &i in &valid {
                    n += 1;
                    hit += usize::from(f64::from(r.values()[i]) > target.threshold_mm);
                }
            }
            achieved_cover.push(AchievedCover {
                lead_hours: lead,
                threshold_mm: target.threshold_mm,
                target: target.cover,
                achieved: hit as f64 / n as f64,
            });
        }
    }

    // per-run displacement errors, in km
    let run_error = |source: u64, member: Option<usize>, d: usize| -> (f64, f64) {
        let mut r = rng::stream(cfg.seed, &[3, source, d as u64]);
        let (zx, zy) = normal2(&mut r);
        let sd = if source == 0 { cfg.fine.position_sd_px } else { cfg.coarse.position_sd_px };
        let (mut ex, mut ey) = (sd * zx, sd * zy);
        if let Some(m) = member.filter(|&m| m > 0) {
            let mut r = rng::stream(cfg.seed, &[4, m as u64, d as u64]);
            let (mx, my) = normal2(&mut r);
            ex += cfg.member_spread_px * mx;
            ey += cfg.member_spread_px * my;
        }
        (ex * c_o, ey * c_o)
    };
    let displacement = |bias: &BiasSpec, err: (f64, f64), lead: i64| -> (f64, f64) {
        let grow = lead as f64 / 12.0;
        (
            bias.advection_offset_px[0] * c_o + grow * err.0,
            bias.advection_offset_px[1] * c_o + grow * err.1,
        )
    };
    let add_noise = |vals: &mut [f64], sd: f64, tags: &[u64]| {
        if sd > 0.0 {
            let mut r = rng::stream(cfg.seed, tags);
            for v in vals.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += sd * z;
            }
        }
        for v in vals.iter_mut() {
            *v = v.max(0.0);
        }
    };

    // fine deterministic forecast: hourly amounts per lead
    let fine_sampler = Sampler::new(&geo.canvas, &geo.fine)?;
    let fb = &cfg.fine;
    let mut fine = BTreeMap::new();
    for lead in cfg.fine_leads() {
        let mut entries = Vec::with_capacity(cfg.n_days);
        for (d, _) in days.iter().enumerate() {
            let (dx, dy) = displacement(fb, run_error(0, None, d), lead);
            let t = (24 * d as i64 + lead - fb.timing_shift_hours) as f64;
            let raw = fine_sampler.sample(&field, t, dx, dy);
            let mut mm: Vec<f64> = raw.iter().map(|&v| fb.amplitude_scale * intensity.apply(v)).collect();
            add_noise(&mut mm, fb.noise_sd, &[5, d as u64, lead as u64]);
            let r = Raster::from_parts_unchecked(geo.fine, mm.iter().map(|&v| v as f32).collect());
            entries.push((t0 + Duration::hours(24 * d as i64 + lead), r));
        }
        fine.insert(lead, FieldSeries::new(lead, SourceTag::Derived("fine".into()), entries)?);
    }

    // coarse ensemble: running accumulations of 3 h blocks, reset every 6 h
    let coarse_sampler = Sampler::new(&geo.canvas, &geo.coarse)?;
    let cb = &cfg.coarse;
    let steps = cfg.coarse_steps();
    let mut coarse_members = Vec::with_capacity(cfg.n_members);
    for m in 0..cfg.n_members {
        let mut per_step: BTreeMap<i64, Vec<(Timestamp, Raster)>> = BTreeMap::new();
        for (d, _) in days.iter().enumerate() {
            let err = run_error(1, Some(m), d);
            let mut running = vec![0.0f64; geo.coarse.len()];
            for (k, &step) in steps.iter().enumerate() {
                let mut block = vec![0.0f64; geo.coarse.len()];
                for hour in step - 2..=step {
                    let (dx, dy) = displacement(cb, err, hour);
                    let t = (24 * d as i64 + hour - cb.timing_shift_hours) as f64;
                    for (b, v) in block.iter_mut().zip(coarse_sampler.sample(&field, t, dx, dy)) {
                        *b += cb.amplitude_scale * intensity.apply(v);
                    }
                }
                add_noise(&mut block, cb.noise_sd, &[6, m as u64, d as u64, step as u64]);
                if k % 2 == 0 {
                    running.iter_mut().for_each(|v| *v = 0.0);
                }
                for (acc, b) in running.iter_mut().zip(&block) {
                    *acc += b;
                }
                let r = Raster::from_parts_unchecked(geo.coarse, running.iter().map(|&v| v as f32).collect());
                per_step.entry(step).or_default().push((t0 + Duration::hours(24 * d as i64 + step), r));
            }
        }
        let series = per_step
            .into_iter()
            .map(|(step, e)| Ok((step, FieldSeries::new(step, SourceTag::Member(m), e)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        coarse_members.push(series);
    }

    Ok(Scenario {
        config: cfg.clone(),
        geometry: geo,
        days,
        observations,
        fine,
        coarse_members,
        mask,
        intensity,
        achieved_cover,
        field: Some(field),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ScenarioConfig,
    geometry: ScenarioGeometry,
    days: Vec<NaiveDate>,
    fine_leads: Vec<i64>,
    coarse_steps: Vec<i64>,
    intensity: IntensityMap,
    achieved_cover: Vec<AchievedCover>,
    files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Scenario {
    /// Observation-resolution precipitation at an absolute timestamp, sampled
    /// onto `geometry` by nearest neighbour from the observation lattice.
    /// Only available for generated (not loaded) scenarios.
    pub fn truth_on(&self, geometry: &RasterGeometry, t: &Timestamp) -> Result<Raster> {
        let field = self
            .field
            .as_ref()
            .ok_or_else(|| Error::invalid("truth field is not available for a loaded scenario"))?;
        let hours = (*t - init_time(self.config.start_date)).num_seconds() as f64 / 3600.0;
        let s = Sampler::new(&self.geometry.canvas, geometry)?;
        let raw = s.sample(field, hours, 0.0, 0.0);
        Ok(Raster::from_parts_unchecked(*geometry, raw.iter().map(|&v| self.intensity.apply(v) as f32).collect()))
    }

    pub fn fine_file(lead: i64) -> String {
        format!("fine_lead{lead:02}.rst")
    }

    pub fn coarse_file(member: usize, step: i64) -> String {
        format!("coarse_m{member:02}_step{step:02}.rst")
    }

    /// Write the scenario as a directory of raster files plus a manifest.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("output directory {} does not exist", dir.display())));
        }
        let mut files = vec!["mask.msk".to_string(), "obs.rst".to_string()];
        io::write_mask(dir.join("mask.msk"), &self.mask)?;
        io::write_series(dir.join("obs.rst"), &self.observations)?;
        for (lead, s) in &self.fine {
            let name = Self::fine_file(*lead);
            io::write_series(dir.join(&name), s)?;
            files.push(name);
        }
        for (m, steps) in self.coarse_members.iter().enumerate() {
            for (step, s) in steps {
                let name = Self::coarse_file(m, *step);
                io::write_series(dir.join(&name), s)?;
                files.push(name);
            }
        }
        let manifest = Manifest {
            config: self.config.clone(),
            geometry: self.geometry.clone(),
            days: self.days.clone(),
            fine_leads: self.fine.keys().copied().collect(),
            coarse_steps: self.coarse_members.first().map(|s| s.keys().copied().collect()).unwrap_or_default(),
            intensity: self.intensity.clone(),
            achieved_cover: self.achieved_cover.clone(),
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Scenario> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
        let mask = io::read_mask(dir.join("mask.msk"))?;
        let observations = io::read_series(dir.join("obs.rst"), 0, SourceTag::Observation)?;
        let mut fine = BTreeMap::new();
        for &lead in &m.fine_leads {
            fine.insert(lead, io::read_series(dir.join(Self::fine_file(lead)), lead, SourceTag::Derived("fine".into()))?);
        }
        let mut coarse_members = Vec::new();
        for member in 0..m.config.n_members {
            let mut steps = BTreeMap::new();
            for &step in &m.coarse_steps {
                steps.insert(step, io::read_series(dir.join(Self::coarse_file(member, step)), step, SourceTag::Member(member))?);
            }
            coarse_members.push(steps);
        }
        Ok(Scenario {
            config: m.config,
            geometry: m.geometry,
            days: m.days,
            observations,
            fine,
            coarse_members,
            mask,
            intensity: m.intensity,
            achieved_cover: m.achieved_cover,
            field: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::regrid_nearest;

    pub(crate) fn small_config() -> ScenarioConfig {
        ScenarioConfig { n_days: 6, n_members: 3, leads: vec![12], ..ScenarioConfig::default() }
    }

    #[test]
    fn geometry_layout() {
        let geo = ScenarioGeometry::from_config(&ScenarioConfig::default()).unwrap();
        assert_eq!(geo.domain.width_px, 228);
        assert_eq!(geo.window.width_px, 128);
        let (dx0, dx1, _, _) = geo.domain.extent();
        let (fx0, fx1, _, _) = geo.fine.extent();
        let (cx0, cx1, _, _) = geo.coarse.extent();
        let (kx0, kx1, _, _) = geo.canvas.extent();
        assert!(fx0 <= dx0 && fx1 >= dx1 && cx0 <= dx0 && cx1 >= dx1);
        assert!(kx0 <= cx0 && kx1 >= cx1 && kx0 <= fx0 && kx1 >= fx1);
        // canvas lattice aligned with domain
        let c = geo.canvas.col_of_x(geo.domain.origin_x_km);
        assert!((c - c.round()).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_infeasible_cover() {
        for cover in [0.0, 0.6, -0.1] {
            let cfg = ScenarioConfig { target_cover: vec![CoverTarget { threshold_mm: 0.5, cover }], ..small_config() };
            assert!(matches!(generate_scenario(&cfg), Err(Error::Config(_))));
        }
        let cfg = ScenarioConfig { n_members: 0, ..small_config() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn intensity_map_is_monotone_and_hits_knots() {
        let m = IntensityMap { knots: vec![(0.2, 0.5), (0.5, 1.0), (0.9, 2.0)] };
        assert_eq!(m.apply(0.2), 0.5);
        assert_eq!(m.apply(0.9), 2.0);
        let mut prev = -1.0;
        for i in 0..200 {
            let v = m.apply(i as f64 * 0.01);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn steps_and_leads() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.fine_leads(), vec![9, 10, 11, 12, 13, 14, 15, 21, 22, 23, 24, 25, 26, 27]);
        assert_eq!(cfg.coarse_steps(), vec![3, 6, 9, 12, 15, 18, 21, 24, 27]);
    }

    #[test]
    fn hits_cover_and_is_deterministic() {
        let cfg = small_config();
        let a = generate_scenario(&cfg).unwrap();
        let b = generate_scenario(&cfg).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.fine, b.fine);
        assert_eq!(a.coarse_members, b.coarse_members);
        let c = &a.achieved_cover[0];
        assert!((c.achieved - 0.055).abs() < 0.005, "{c:?}");
        let holes = 64 * 64 - a.mask.valid_count();
        assert!(holes > 0 && holes <= 3 * 36);
    }

    #[test]
    fn unbiased_sources_reproduce_regridded_truth() {
        let cfg = ScenarioConfig {
            fine: BiasSpec::unbiased(),
            coarse: BiasSpec::unbiased(),
            member_spread_px: 0.0,
            ..small_config()
        };
        let s = generate_scenario(&cfg).unwrap();
        let t = init_time(s.days[1]) + Duration::hours(12);
        let canvas_truth = s.truth_on(&s.geometry.canvas, &t).unwrap();
        let fine = s.fine[&12].get(&t).unwrap();
        assert_eq!(fine, &regrid_nearest(&canvas_truth, &s.geometry.fine).unwrap());

        // first 3 h block of each member equals the summed regridded truth
        let t3 = init_time(s.days[1]) + Duration::hours(3);
        let mut expected = vec![0.0f64; s.geometry.coarse.len()];
        for h in 1..=3 {
            let truth = s.truth_on(&s.geometry.canvas, &(init_time(s.days[1]) + Duration::hours(h))).unwrap();
            for (e, v) in expected.iter_mut().zip(regrid_nearest(&truth, &s.geometry.coarse).unwrap().values()) {
                *e += f64::from(*v);
            }
        }
        for member in &s.coarse_members {
            let got = member[&3].get(&t3).unwrap();
            for (g, e) in got.values().iter().zip(&expected) {
                assert!((f64::from(*g) - e).abs() <= 1e-5 * (1.0 + e.abs()));
            }
        }
        // observations are the truth on the window
        let obs = s.observations.get(&t).unwrap();
        assert_eq!(obs, &regrid_nearest(&canvas_truth, &s.geometry.window).unwrap());
    }

    #[test]
    fn roundtrips_through_directory() {
        let s = generate_scenario(&ScenarioConfig { n_days: 2, n_members: 2, ..small_config() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_dir(dir.path()).unwrap();
        let back = Scenario::read_dir(dir.path()).unwrap();
        assert_eq!(back.observations, s.observations);
        assert_eq!(back.fine, s.fine);
        assert_eq!(back.coarse_members, s.coarse_members);
        assert_eq!(back.mask, s.mask);
        assert_eq!(back.config, s.config);
        assert!(back.truth_on(&s.geometry.window, &init_time(s.days[0])).is_err());
    }
}
