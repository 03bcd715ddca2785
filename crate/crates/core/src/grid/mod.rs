//! Raster data model and grid operations.

mod align;
pub mod io;
mod ops;
pub mod scenario;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use align::{lag_correlation_check, LagCorrelation, LagReport};
pub use ops::{crop_window, deaccumulate, subgrid, gefs_to_hourly_rate, nearest_index_map, regrid_nearest, window_around};
pub use scenario::{generate_scenario, BiasSpec, Scenario, ScenarioConfig};

/// Value stored in cells that carry no data.
pub const FILL: f32 = -9999.0;

pub type Timestamp = DateTime<Utc>;

/// Placement of a regular grid in projected kilometre coordinates.
///
/// `origin_x_km`/`origin_y_km` locate the centre of the top-left cell. Rows
/// run southward (decreasing y) unless `y_axis_flipped` is set, in which case
/// y increases with the row index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub width_px: usize,
    pub height_px: usize,
    pub cell_size_km: f64,
    pub origin_x_km: f64,
    pub origin_y_km: f64,
    pub y_axis_flipped: bool,
}

impl RasterGeometry {
    pub fn new(width_px: usize, height_px: usize, cell_size_km: f64, origin_x_km: f64, origin_y_km: f64) -> Result<Self> {
        let g = RasterGeometry { width_px, height_px, cell_size_km, origin_x_km, origin_y_km, y_axis_flipped: false };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::invalid("raster dimensions must be at least 1x1"));
        }
        if !(self.cell_size_km > 0.0) || !self.cell_size_km.is_finite() {
            return Err(Error::invalid(format!("cell size must be positive, got {}", self.cell_size_km)));
        }
        if !self.origin_x_km.is_finite() || !self.origin_y_km.is_finite() {
            return Err(Error::invalid("origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width_px * self.height_px
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_of_col(&self, col: f64) -> f64 {
        self.origin_x_km + col * self.cell_size_km
    }

    pub fn y_of_row(&self, row: f64) -> f64 {
        if self.y_axis_flipped {
            self.origin_y_km + row * self.cell_size_km
        } else {
            self.origin_y_km - row * self.cell_size_km
        }
    }

    /// Fractional column whose centre sits at `x`.
    pub fn col_of_x(&self, x: f64) -> f64 {
        (x - self.origin_x_km) / self.cell_size_km
    }

    pub fn row_of_y(&self, y: f64) -> f64 {
        if self.y_axis_flipped {
            (y - self.origin_y_km) / self.cell_size_km
        } else {
            (self.origin_y_km - y) / self.cell_size_km
        }
    }

    /// Outer edges `(x_min, x_max, y_min, y_max)` of the covered area.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let half = 0.5 * self.cell_size_km;
        let x0 = self.origin_x_km - half;
        let x1 = self.x_of_col((self.width_px - 1) as f64) + half;
        let ya = self.y_of_row(0.0);
        let yb = self.y_of_row((self.height_px - 1) as f64);
        (x0, x1, ya.min(yb) - half, ya.max(yb) + half)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x_of_col((self.width_px as f64 - 1.0) / 2.0),
            self.y_of_row((self.height_px as f64 - 1.0) / 2.0),
        )
    }

    pub(crate) fn ensure_same(&self, other: &RasterGeometry, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GeometryMismatch(format!("{what}: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// One 2D field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    geometry: RasterGeometry,
    values: Vec<f32>,
}

impl Raster {
    pub fn new(geometry: RasterGeometry, values: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "raster needs {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite raster value {v}")));
        }
        Ok(Raster { geometry, values })
    }

    pub fn filled(geometry: RasterGeometry, value: f32) -> Self {
        Raster { values: vec![value; geometry.len()], geometry }
    }

    pub fn zeros(geometry: RasterGeometry) -> Self {
        Self::filled(geometry, 0.0)
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn width(&self) -> usize {
        self.geometry.width_px
    }

    pub fn height(&self) -> usize {
        self.geometry.height_px
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.geometry.width_px + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        let w = self.geometry.width_px;
        self.values[row * w + col] = v;
    }

    pub fn is_fill(v: f32) -> bool {
        v == FILL
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            geometry: self.geometry,
            values: self.values.iter().map(|&v| if Self::is_fill(v) { v } else { f(v) }).collect(),
        }
    }

    /// Cellwise combination of two rasters on the same grid.
    pub fn zip_with(&self, other: &Raster, f: impl Fn(f32, f32) -> f32) -> Result<Raster> {
        self.geometry.ensure_same(&other.geometry, "zip_with")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| if Self::is_fill(a) || Self::is_fill(b) { FILL } else { f(a, b) })
            .collect();
        Ok(Raster { geometry: self.geometry, values })
    }

    pub(crate) fn from_parts_unchecked(geometry: RasterGeometry, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        Raster { geometry, values }
    }
}

/// Where a series came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceTag {
    Observation,
    Member(usize),
    Derived(String),
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceTag::Observation => write!(f, "obs"),
            SourceTag::Member(i) => write!(f, "member{i}"),
            SourceTag::Derived(name) => write!(f, "{name}"),
        }
    }
}

/// Time-indexed rasters for one lead time, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub lead_hours: i64,
    pub source: SourceTag,
    entries: Vec<(Timestamp, Raster)>,
}

impl FieldSeries {
    pub fn new(lead_hours: i64, source: SourceTag, entries: Vec<(Timestamp, Raster)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::invalid(format!(
                    "series timestamps must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
            pair[0].1.geometry.ensure_same(&pair[1].1.geometry, "series entries")?;
        }
        Ok(FieldSeries { lead_hours, source, entries })
    }

    pub fn entries(&self) -> &[(Timestamp, Raster)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(Timestamp, Raster)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn geometry(&self) -> Option<&RasterGeometry> {
        self.entries.first().map(|(_, r)| r.geometry())
    }

    pub fn get(&self, t: &Timestamp) -> Option<&Raster> {
        self.entries
            .binary_search_by(|(ts, _)| ts.cmp(t))
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = &Timestamp> {
        self.entries.iter().map(|(t, _)| t)
    }

    /// Apply `f` to every raster, keeping timestamps.
    pub fn map_rasters(&self, source: SourceTag, f: impl Fn(&Raster) -> Raster) -> Result<FieldSeries> {
        FieldSeries::new(self.lead_hours, source, self.entries.iter().map(|(t, r)| (*t, f(r))).collect())
    }
}

/// Valid-cell mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    geometry: RasterGeometry,
    valid: Vec<bool>,
    valid_count: usize,
}

impl Mask {
    pub fn new(geometry: RasterGeometry, valid: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if valid.len() != geometry.len() {
            return Err(Error::invalid("mask length does not match geometry"));
        }
        let valid_count = valid.iter().filter(|&&v| v).count();
        if valid_count == 0 {
            return Err(Error::invalid("mask has no valid cells"));
        }
        Ok(Mask { geometry, valid, valid_count })
    }

    pub fn all_valid(geometry: RasterGeometry) -> Self {
        Mask { valid: vec![true; geometry.len()], valid_count: geometry.len(), geometry }
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.geometry.width_px + col]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    /// Flat indices of the valid cells in row-major order.
    pub fn valid_indices(&self) -> Vec<usize> {
        self.valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
    }

    /// Bounding box of valid cells as `(row0, col0, row1, col1)`, inclusive.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        let w = self.geometry.width_px;
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for i in self.valid_indices() {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        (r0, c0, r1, c1)
    }

    /// Geometry of the valid cells' bounding box.
    pub fn extent_geometry(&self) -> RasterGeometry {
        let (r0, c0, r1, c1) = self.bounding_box();
        RasterGeometry {
            width_px: c1 - c0 + 1,
            height_px: r1 - r0 + 1,
            origin_x_km: self.geometry.x_of_col(c0 as f64),
            origin_y_km: self.geometry.y_of_row(r0 as f64),
            ..self.geometry
        }
    }
}
