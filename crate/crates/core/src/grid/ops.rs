use crate::error::{Error, Result};

use super::{FieldSeries, Raster, RasterGeometry, FILL};

/// Decreases in a running accumulation smaller than this are storage noise.
pub const ACCUMULATION_EPSILON: f32 = 1e-6;

/// Convert running accumulations that reset every `window_steps` steps into
/// per-step amounts.
///
/// The first entry of the series is taken to be the first step of a window.
pub fn deaccumulate(series: &FieldSeries, window_steps: usize) -> Result<FieldSeries> {
    if window_steps < 1 {
        return Err(Error::invalid("accumulation window must be at least one step"));
    }
    if series.is_empty() {
        return Err(Error::invalid("cannot de-accumulate an empty series"));
    }
    let entries = series.entries();
    let mut out = Vec::with_capacity(entries.len());
    for (k, (t, current)) in entries.iter().enumerate() {
        if k % window_steps == 0 {
            out.push((*t, current.map(|v| v.max(0.0))));
            continue;
        }
        let previous = &entries[k - 1].1;
        previous.geometry().ensure_same(current.geometry(), "de-accumulation")?;
        let mut values = Vec::with_capacity(current.values().len());
        for (&now, &before) in current.values().iter().zip(previous.values()) {
            if Raster::is_fill(now) || Raster::is_fill(before) {
                values.push(FILL);
                continue;
            }
            let step = now - before;
            if step < -ACCUMULATION_EPSILON {
                return Err(Error::invalid(format!(
                    "accumulation decreased by {} at {t} within a window",
                    -step
                )));
            }
            values.push(step.max(0.0));
        }
        out.push((*t, Raster::from_parts_unchecked(*current.geometry(), values)));
    }
    FieldSeries::new(series.lead_hours, series.source.clone(), out)
}

/// Three-hour amounts to hourly rates.
pub fn gefs_to_hourly_rate(three_hour_amounts: &FieldSeries) -> Result<FieldSeries> {
    three_hour_amounts.map_rasters(three_hour_amounts.source.clone(), |r| r.map(|v| v / 3.0))
}

fn nearest(f: f64, n: usize) -> Option<usize> {
    const TOL: f64 = 1e-9;
    if f < -0.5 - TOL || f > n as f64 - 0.5 + TOL {
        return None;
    }
    // ties go to the smaller index
    let i = (f - 0.5).ceil();
    Some(i.clamp(0.0, (n - 1) as f64) as usize)
}

/// For every destination cell, the flat index of the nearest source cell.
pub fn nearest_index_map(src: &RasterGeometry, dst: &RasterGeometry) -> Result<Vec<usize>> {
    src.validate()?;
    dst.validate()?;
    let cols: Vec<usize> = (0..dst.width_px)
        .map(|c| {
            let x = dst.x_of_col(c as f64);
            nearest(src.col_of_x(x), src.width_px)
                .ok_or_else(|| Error::OutOfCoverage(format!("x={x} km outside source columns")))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..dst.height_px)
        .map(|r| {
            let y = dst.y_of_row(r as f64);
            nearest(src.row_of_y(y), src.height_px)
                .ok_or_else(|| Error::OutOfCoverage(format!("y={y} km outside source rows")))
        })
        .collect::<Result<_>>()?;
    let mut map = Vec::with_capacity(dst.len());
    for &r in &rows {
        for &c in &cols {
            map.push(r * src.width_px + c);
        }
    }
    Ok(map)
}

/// Nearest-neighbour resampling onto `dst`.
pub fn regrid_nearest(src: &Raster, dst: &RasterGeometry) -> Result<Raster> {
    let map = nearest_index_map(src.geometry(), dst)?;
    let values = map.iter().map(|&i| src.values()[i]).collect();
    Ok(Raster::from_parts_unchecked(*dst, values))
}

/// Locate a `side_px` square window on `src` centred on `mask_extent` and
/// covering it plus `margin_km` on every side. Returns the window's top-left
/// row and column in `src` and its geometry.
pub fn window_around(
    src: &RasterGeometry,
    mask_extent: &RasterGeometry,
    side_px: usize,
    margin_km: f64,
) -> Result<(usize, usize, RasterGeometry)> {
    if side_px == 0 {
        return Err(Error::invalid("window side must be positive"));
    }
    if margin_km < 0.0 {
        return Err(Error::invalid("margin must be non-negative"));
    }
    let (mx0, mx1, my0, my1) = mask_extent.extent();
    let (cx, cy) = (0.5 * (mx0 + mx1), 0.5 * (my0 + my1));
    let half = (side_px as f64 - 1.0) / 2.0;
    let col0 = (src.col_of_x(cx) - half + 1e-9).floor();
    let row0 = (src.row_of_y(cy) - half + 1e-9).floor();

    let window = RasterGeometry {
        width_px: side_px,
        height_px: side_px,
        origin_x_km: src.x_of_col(col0),
        origin_y_km: src.y_of_row(row0),
        ..*src
    };
    let (wx0, wx1, wy0, wy1) = window.extent();
    const TOL: f64 = 1e-9;
    if wx0 > mx0 - margin_km + TOL
        || wx1 < mx1 + margin_km - TOL
        || wy0 > my0 - margin_km + TOL
        || wy1 < my1 + margin_km - TOL
    {
        return Err(Error::invalid(format!(
            "mask extent {:.1}x{:.1} km plus {margin_km} km margin does not fit a {side_px} px window",
            mx1 - mx0,
            my1 - my0
        )));
    }
    if col0 < 0.0
        || row0 < 0.0
        || col0 as usize + side_px > src.width_px
        || row0 as usize + side_px > src.height_px
    {
        return Err(Error::OutOfCoverage(format!(
            "{side_px} px window at row {row0}, col {col0} exceeds the {}x{} source",
            src.width_px, src.height_px
        )));
    }
    Ok((row0 as usize, col0 as usize, window))
}

/// Cut the square window of [`window_around`] out of `src`.
pub fn crop_window(src: &Raster, mask_extent: &RasterGeometry, side_px: usize, margin_km: f64) -> Result<Raster> {
    let (row0, col0, geometry) = window_around(src.geometry(), mask_extent, side_px, margin_km)?;
    let mut values = Vec::with_capacity(side_px * side_px);
    for r in row0..row0 + side_px {
        let start = r * src.width() + col0;
        values.extend_from_slice(&src.values()[start..start + side_px]);
    }
    Ok(Raster::from_parts_unchecked(geometry, values))
}

/// Copy the cells of `src` that fall inside `sub`, which must be aligned with
/// `src`'s grid.
pub fn subgrid(src: &Raster, sub: &RasterGeometry) -> Result<Raster> {
    let g = src.geometry();
    if (g.cell_size_km - sub.cell_size_km).abs() > 1e-9 || g.y_axis_flipped != sub.y_axis_flipped {
        return Err(Error::GeometryMismatch("sub-grid must share cell size and orientation".into()));
    }
    let c0 = g.col_of_x(sub.origin_x_km);
    let r0 = g.row_of_y(sub.origin_y_km);
    if (c0 - c0.round()).abs() > 1e-6 || (r0 - r0.round()).abs() > 1e-6 {
        return Err(Error::GeometryMismatch("sub-grid is not aligned with source cells".into()));
    }
    let (c0, r0) = (c0.round(), r0.round());
    if c0 < 0.0 || r0 < 0.0 || c0 as usize + sub.width_px > g.width_px || r0 as usize + sub.height_px > g.height_px {
        return Err(Error::OutOfCoverage("sub-grid exceeds source".into()));
    }
    let (c0, r0) = (c0 as usize, r0 as usize);
    let mut values = Vec::with_capacity(sub.len());
    for r in r0..r0 + sub.height_px {
        let start = r * g.width_px + c0;
        values.extend_from_slice(&src.values()[start..start + sub.width_px]);
    }
    Ok(Raster::from_parts_unchecked(*sub, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SourceTag, Timestamp};
    use chrono::Duration;
    use proptest::prelude::*;

    fn geom(w: usize, h: usize, cell: f64, ox: f64, oy: f64) -> RasterGeometry {
        RasterGeometry::new(w, h, cell, ox, oy).unwrap()
    }

    fn series_of(values: &[f32]) -> FieldSeries {
        let t0 = "2016-01-01T00:00:00Z".parse::<Timestamp>().unwrap();
        let g = geom(1, 1, 1.0, 0.0, 0.0);
        let entries = values
            .iter()
            .enumerate()
            .map(|(k, &v)| (t0 + Duration::hours(k as i64), Raster::new(g, vec![v]).unwrap()))
            .collect();
        FieldSeries::new(0, SourceTag::Member(0), entries).unwrap()
    }

    fn scalars(s: &FieldSeries) -> Vec<f32> {
        s.entries().iter().map(|(_, r)| r.values()[0]).collect()
    }

    #[test]
    fn deaccumulate_examples() {
        let out = deaccumulate(&series_of(&[0.0, 1.2, 1.2, 3.0]), 4).unwrap();
        let got = scalars(&out);
        assert_eq!(got[0], 0.0);
        assert!((got[1] - 1.2).abs() < 1e-6);
        assert_eq!(got[2], 0.0);
        assert!((got[3] - 1.8).abs() < 1e-6);

        assert_eq!(scalars(&deaccumulate(&series_of(&[0.0; 5]), 2).unwrap()), vec![0.0; 5]);

        let three_hourly = scalars(&deaccumulate(&series_of(&[0.9, 2.4]), 2).unwrap());
        assert_eq!(three_hourly[0], 0.9);
        assert!((three_hourly[1] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn deaccumulate_resets_and_tolerance() {
        // window of 2: third value starts a new window
        let got = scalars(&deaccumulate(&series_of(&[1.0, 3.0, 0.5, 0.7]), 2).unwrap());
        assert_eq!(got[0], 1.0);
        assert_eq!(got[1], 2.0);
        assert_eq!(got[2], 0.5);
        assert!((got[3] - 0.2).abs() < 1e-6);
        // tiny decrease is clamped
        let got = scalars(&deaccumulate(&series_of(&[1.0, 1.0 - 5e-7]), 2).unwrap());
        assert_eq!(got[1], 0.0);
        // larger decrease is an error
        assert!(deaccumulate(&series_of(&[1.0, 0.5]), 2).is_err());
        assert!(deaccumulate(&series_of(&[1.0]), 0).is_err());
    }

    #[test]
    fn hourly_rate_divides_by_three() {
        let s = series_of(&[3.0, 0.0, 0.9]);
        let got = scalars(&gefs_to_hourly_rate(&s).unwrap());
        assert_eq!(got, vec![1.0, 0.0, 0.9f32 / 3.0]);
        assert!((got[2] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn regrid_identity_and_blocks() {
        let g = geom(3, 2, 1.0, 0.0, 0.0);
        let src = Raster::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(regrid_nearest(&src, &g).unwrap(), src);

        let coarse = Raster::new(geom(2, 2, 2.0, 1.0, -1.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let fine = regrid_nearest(&coarse, &geom(4, 4, 1.0, 0.5, -0.5)).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(fine.values(), expected.as_slice());
    }

    #[test]
    fn regrid_handles_flipped_source() {
        let mut g = geom(1, 2, 1.0, 0.0, 0.0);
        g.y_axis_flipped = true; // row 0 at y=0, row 1 at y=1
        let src = Raster::new(g, vec![10.0, 20.0]).unwrap();
        // north-up destination: row 0 at y=1
        let dst = geom(1, 2, 1.0, 0.0, 1.0);
        assert_eq!(regrid_nearest(&src, &dst).unwrap().values(), &[20.0, 10.0]);
    }

    #[test]
    fn regrid_rejects_out_of_coverage() {
        let src = Raster::zeros(geom(2, 2, 1.0, 0.0, 0.0));
        assert!(matches!(
            regrid_nearest(&src, &geom(3, 2, 1.0, 0.0, 0.0)),
            Err(Error::OutOfCoverage(_))
        ));
    }

    #[test]
    fn regrid_ties_go_to_smaller_index() {
        let src = Raster::new(geom(2, 2, 1.0, 0.0, 0.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // destination centre exactly between all four source centres
        let dst = geom(1, 1, 1.0, 0.5, -0.5);
        assert_eq!(regrid_nearest(&src, &dst).unwrap().values(), &[1.0]);
    }

    #[test]
    fn crop_examples() {
        let src = Raster::zeros(geom(500, 500, 1.0, 0.0, 0.0));
        // 300x300 mask centred in the source
        let mask = geom(300, 300, 1.0, 100.0, -100.0);
        let win = crop_window(&src, &mask, 384, 30.0).unwrap();
        assert_eq!((win.width(), win.height()), (384, 384));
        let (wx0, wx1, wy0, wy1) = win.geometry().extent();
        let (mx0, mx1, my0, my1) = mask.extent();
        assert!(wx0 <= mx0 - 30.0 && wx1 >= mx1 + 30.0);
        assert!(wy0 <= my0 - 30.0 && wy1 >= my1 + 30.0);

        // boundary: mask exactly window minus twice the margin
        let tight = geom(324, 324, 1.0, 88.0, -88.0);
        assert!(crop_window(&src, &tight, 384, 30.0).is_ok());

        let wide = geom(330, 330, 1.0, 85.0, -85.0);
        assert!(matches!(crop_window(&src, &wide, 384, 30.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn crop_rejects_uncoverable_window() {
        let src = Raster::zeros(geom(200, 200, 1.0, 0.0, 0.0));
        let mask = geom(64, 64, 1.0, 68.0, -68.0);
        assert!(matches!(crop_window(&src, &mask, 384, 30.0), Err(Error::OutOfCoverage(_))));
    }

    proptest! {
        #[test]
        fn deaccumulate_then_cumsum_roundtrips(
            steps in proptest::collection::vec(0.0f32..5.0, 1..12),
            window in 1usize..5,
        ) {
            let mut running = Vec::new();
            for (k, s) in steps.iter().enumerate() {
                let prev = if k % window == 0 { 0.0 } else { running[k - 1] };
                running.push(prev + s);
            }
            let amounts = scalars(&deaccumulate(&series_of(&running), window).unwrap());
            let mut acc = 0.0f32;
            for (k, a) in amounts.iter().enumerate() {
                acc = if k % window == 0 { *a } else { acc + a };
                prop_assert!((acc - running[k]).abs() <= 1e-4 * (1.0 + running[k].abs()));
            }
        }

        #[test]
        fn regrid_is_idempotent_and_creates_no_values(
            vals in proptest::collection::vec(-5.0f32..5.0, 12),
            cell in prop_oneof![Just(0.5f64), Just(1.0), Just(1.5), Just(2.0)],
        ) {
            let src = Raster::new(geom(4, 3, 1.0, 0.0, 0.0), vals.clone()).unwrap();
            let w = ((3.0 / cell).floor() as usize).max(1);
            let h = ((2.0 / cell).floor() as usize).max(1);
            let dst = geom(w, h, cell, -0.5 + cell / 2.0, 0.5 - cell / 2.0);
            let once = regrid_nearest(&src, &dst).unwrap();
            for v in once.values() {
                prop_assert!(vals.contains(v));
            }
            let twice = regrid_nearest(&once, &dst).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn crop_contains_mask_plus_margin(
            mw in 4usize..40, mh in 4usize..40, side in 40usize..80,
            ox in 0usize..20, oy in 0usize..20, margin in 0.0f64..10.0,
        ) {
            let src = Raster::zeros(geom(160, 160, 1.0, 0.0, 0.0));
            let mask = geom(mw, mh, 1.0, 40.0 + ox as f64, -(40.0 + oy as f64));
            if let Ok(win) = crop_window(&src, &mask, side, margin) {
                let (wx0, wx1, wy0, wy1) = win.geometry().extent();
                let (mx0, mx1, my0, my1) = mask.extent();
                prop_assert!(wx0 <= mx0 - margin + 1e-9 && wx1 >= mx1 + margin - 1e-9);
                prop_assert!(wy0 <= my0 - margin + 1e-9 && wy1 >= my1 + margin - 1e-9);
            }
        }
    }
}
