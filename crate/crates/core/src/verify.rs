//! Brier scores, skill against climatology, isotonic calibration and
//! reliability diagnostics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RowIndex;
use crate::grid::{io, Raster, RasterGeometry, Timestamp, FILL};

fn check_pair(predictions: &[f64], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    Ok(())
}

/// Mean squared difference between probabilities and 0/1 outcomes.
pub fn brier(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair(predictions, labels)?;
    if predictions.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("predictions must lie in [0, 1]"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let s: f64 = predictions.iter().zip(labels).map(|(p, &y)| (p - f64::from(y)).powi(2)).sum();
    Ok(s / predictions.len() as f64)
}

pub fn bss(model_brier: f64, baseline_brier: f64) -> Result<f64> {
    if !(baseline_brier > 0.0) {
        return Err(Error::Undefined(format!("skill score against a baseline Brier of {baseline_brier}")));
    }
    Ok(1.0 - model_brier / baseline_brier)
}

/// Per-pixel positive frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub rates: BTreeMap<(usize, usize), f64>,
}

/// Climatology from the labelled samples given (normally the training and
/// validation periods of a fold).
pub fn climatology_baseline(labels: &[u8], index: &[RowIndex]) -> Result<Climatology> {
    if labels.len() != index.len() {
        return Err(Error::shape(format!("{} labels for {} index rows", labels.len(), index.len())));
    }
    if labels.is_empty() {
        return Err(Error::invalid("climatology needs at least one sample"));
    }
    let mut acc: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (y, ix) in labels.iter().zip(index) {
        let e = acc.entry((ix.row, ix.col)).or_default();
        e.0 += usize::from(*y == 1);
        e.1 += 1;
    }
    Ok(Climatology { rates: acc.into_iter().map(|(k, (p, n))| (k, p as f64 / n as f64)).collect() })
}

impl Climatology {
    pub fn predictions(&self, index: &[RowIndex]) -> Result<Vec<f64>> {
        index
            .iter()
            .map(|ix| {
                self.rates
                    .get(&(ix.row, ix.col))
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no climatology for pixel ({}, {})", ix.row, ix.col)))
            })
            .collect()
    }
}

/// Step-function isotonic map with clipping outside the fitted range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// `(input, output)` with strictly increasing inputs.
    pub breakpoints: Vec<(f64, f64)>,
    pub min_seen: f64,
    pub max_seen: f64,
}

/// Isotonic least-squares fit by pool-adjacent-violators. Equal
/// predictions are pooled before fitting.
pub fn pava_fit(predictions: &[f64], labels: &[u8]) -> Result<CalibrationMap> {
    check_pair(predictions, labels)?;
    if predictions.len() < 2 {
        return Err(Error::invalid("isotonic fit needs at least 2 samples"));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("predictions must be finite"));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    // (input, weighted label sum, weight) per distinct prediction
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for i in order {
        let (x, y) = (predictions[i], f64::from(labels[i]));
        match groups.last_mut() {
            Some(g) if g.0 == x => {
                g.1 += y;
                g.2 += 1.0;
            }
            _ => groups.push((x, y, 1.0)),
        }
    }
    // blocks of (sum, weight, number of groups)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(groups.len());
    for &(_, s, w) in &groups {
        blocks.push((s, w, 1));
        while blocks.len() >= 2 {
            let (s2, w2, n2) = blocks[blocks.len() - 1];
            let (s1, w1, n1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push((s1 + s2, w1 + w2, n1 + n2));
        }
    }
    let mut breakpoints = Vec::with_capacity(groups.len());
    let mut g = groups.iter();
    for (s, w, n) in blocks {
        let v = (s / w).clamp(0.0, 1.0);
        for _ in 0..n {
            breakpoints.push((g.next().unwrap().0, v));
        }
    }
    Ok(CalibrationMap { min_seen: breakpoints[0].0, max_seen: breakpoints.last().unwrap().0, breakpoints })
}

impl CalibrationMap {
    pub fn apply(&self, p: f64) -> f64 {
        let bp = &self.breakpoints;
        if p <= bp[0].0 {
            return bp[0].1;
        }
        // greatest breakpoint <= p
        let k = bp.partition_point(|&(x, _)| x <= p);
        bp[k - 1].1
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["input", "output"])?;
        for (x, y) in &self.breakpoints {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let perr = |m: String| Error::Parse { path: path.into(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
        let mut breakpoints = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("{s}: {e}")));
            breakpoints.push((f(&rec[0])?, f(&rec[1])?));
        }
        if breakpoints.is_empty() || breakpoints.windows(2).any(|w| !(w[0].0 < w[1].0 && w[0].1 <= w[1].1)) {
            return Err(perr("breakpoints must be non-empty, strictly increasing and monotone".into()));
        }
        Ok(CalibrationMap { min_seen: breakpoints[0].0, max_seen: breakpoints.last().unwrap().0, breakpoints })
    }
}

pub fn calibrate(map: &CalibrationMap, predictions: &[f64]) -> Vec<f64> {
    predictions.iter().map(|&p| map.apply(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_prediction: Option<f64>,
    pub observed_frequency: Option<f64>,
    pub count: usize,
}

pub const DEFAULT_RELIABILITY_BINS: usize = 10;

/// Equal-width bins on `[0, 1]`; the last bin is closed.
pub fn reliability_curve(predictions: &[f64], labels: &[u8], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_pair(predictions, labels)?;
    if n_bins < 2 {
        return Err(Error::invalid("reliability curve needs at least 2 bins"));
    }
    let mut acc = vec![(0.0, 0usize, 0usize); n_bins];
    for (&p, &y) in predictions.iter().zip(labels) {
        let b = ((p * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        acc[b].0 += p;
        acc[b].1 += usize::from(y == 1);
        acc[b].2 += 1;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(b, (s, pos, n))| ReliabilityBin {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            mean_prediction: (n > 0).then(|| s / n as f64),
            observed_frequency: (n > 0).then(|| pos as f64 / n as f64),
            count: n,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdowns {
    /// Skill per pixel; fill where there are no samples or the baseline is perfect.
    pub pixel_bss: Raster,
    pub daily_brier: Vec<(Timestamp, f64)>,
    /// `(lower, upper, count)` per histogram bin.
    pub histogram: Vec<(f64, f64, usize)>,
}

pub fn breakdowns(
    predictions: &[f64],
    labels: &[u8],
    index: &[RowIndex],
    baseline: &[f64],
    geometry: &RasterGeometry,
    histogram_bin_width: f64,
) -> Result<Breakdowns> {
    check_pair(predictions, labels)?;
    if index.len() != labels.len() || baseline.len() != labels.len() {
        return Err(Error::shape("predictions, labels, index and baseline must have equal length"));
    }
    if !(histogram_bin_width > 0.0 && histogram_bin_width <= 1.0) {
        return Err(Error::invalid("histogram bin width must be in (0, 1]"));
    }
    let mut pix: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    let mut days: BTreeMap<Timestamp, (f64, usize)> = BTreeMap::new();
    let n_hist = (1.0 / histogram_bin_width).round().max(1.0) as usize;
    let mut hist = vec![0usize; n_hist];
    for i in 0..labels.len() {
        let ix = &index[i];
        if ix.row >= geometry.height_px || ix.col >= geometry.width_px {
            return Err(Error::GeometryMismatch(format!("pixel ({}, {}) outside the raster", ix.row, ix.col)));
        }
        let y = f64::from(labels[i]);
        let e = (predictions[i] - y).powi(2);
        let b = (baseline[i] - y).powi(2);
        let p = pix.entry((ix.row, ix.col)).or_default();
        p.0 += e;
        p.1 += b;
        let d = days.entry(ix.time).or_default();
        d.0 += e;
        d.1 += 1;
        hist[((predictions[i] * n_hist as f64).floor().max(0.0) as usize).min(n_hist - 1)] += 1;
    }
    let mut bss_raster = Raster::filled(*geometry, FILL);
    for ((r, c), (e, b)) in pix {
        if let Ok(s) = bss(e, b) {
            bss_raster.set(r, c, s as f32);
        }
    }
    Ok(Breakdowns {
        pixel_bss: bss_raster,
        daily_brier: days.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
        histogram: hist
            .into_iter()
            .enumerate()
            .map(|(k, n)| (k as f64 / n_hist as f64, (k + 1) as f64 / n_hist as f64, n))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub brier: f64,
    pub baseline_brier: f64,
    /// `None` when the baseline Brier is zero.
    pub bss: Option<f64>,
    pub n_samples: usize,
    pub reliability: Vec<ReliabilityBin>,
    pub breakdowns: Breakdowns,
}

#[derive(Serialize)]
struct Summary<'a> {
    brier: f64,
    baseline_brier: f64,
    bss: Option<f64>,
    n_samples: usize,
    reliability_bins: &'a [ReliabilityBin],
}

pub fn evaluate(
    predictions: &[f64],
    labels: &[u8],
    index: &[RowIndex],
    baseline: &[f64],
    geometry: &RasterGeometry,
) -> Result<EvalReport> {
    let b = brier(predictions, labels)?;
    let base = brier(baseline, labels)?;
    Ok(EvalReport {
        brier: b,
        baseline_brier: base,
        bss: bss(b, base).ok(),
        n_samples: labels.len(),
        reliability: reliability_curve(predictions, labels, DEFAULT_RELIABILITY_BINS)?,
        breakdowns: breakdowns(predictions, labels, index, baseline, geometry, 0.05)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Write `summary.json`, `reliability.csv`, `daily_brier.csv`,
    /// `histogram.csv` and `pixel_bss.rst` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = Summary {
            brier: self.brier,
            baseline_brier: self.baseline_brier,
            bss: self.bss,
            n_samples: self.n_samples,
            reliability_bins: &self.reliability,
        };
        let p = dir.join("summary.json");
        fs::write(&p, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(|e| Error::io(&p, e))?;

        let p = dir.join("reliability.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["lower", "upper", "mean_prediction", "observed_frequency", "count"])?;
        for b in &self.reliability {
            w.write_record([b.lower.to_string(), b.upper.to_string(), opt(b.mean_prediction), opt(b.observed_frequency), b.count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        let p = dir.join("daily_brier.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["time", "brier"])?;
        for (t, b) in &self.breakdowns.daily_brier {
            w.write_record([t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        let p = dir.join("histogram.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["lower", "upper", "count"])?;
        for (lo, hi, n) in &self.breakdowns.histogram {
            w.write_record([lo.to_string(), hi.to_string(), n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        io::write_raster(dir.join("pixel_bss.rst"), &self.breakdowns.pixel_bss, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 3], &[1, 0, 1]).unwrap(), 0.25);
        let y = [1, 0, 0, 0];
        assert!((brier(&[0.25; 4], &y).unwrap() - 0.1875).abs() < 1e-15);
        assert!(brier(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn bss_examples() {
        assert_eq!(bss(0.1, 0.1).unwrap(), 0.0);
        assert_eq!(bss(0.0, 0.1).unwrap(), 1.0);
        assert!(bss(0.2, 0.1).unwrap() < 0.0);
        assert!(matches!(bss(0.0, 0.0), Err(Error::Undefined(_))));
    }

    fn ix(row: usize, day: i64) -> RowIndex {
        RowIndex { time: Timestamp::UNIX_EPOCH + chrono::Duration::days(day), row, col: 0 }
    }

    #[test]
    fn climatology_examples() {
        let mut labels = vec![0u8; 400];
        let index: Vec<RowIndex> = (0..400).map(|i| ix(i / 200, (i % 200) as i64)).collect();
        labels[200..211].fill(1);
        let c = climatology_baseline(&labels, &index).unwrap();
        assert_eq!(c.rates[&(0, 0)], 0.0);
        assert!((c.rates[&(1, 0)] - 0.055).abs() < 1e-15);
        let base = c.predictions(&index[200..]).unwrap();
        let b = brier(&base, &labels[200..]).unwrap();
        assert!((b - 0.055 * 0.945).abs() < 1e-12);
    }

    #[test]
    fn pava_examples() {
        let m = pava_fit(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1]).unwrap();
        let fitted: Vec<f64> = m.breakpoints.iter().map(|b| b.1).collect();
        assert_eq!(fitted, vec![0.0, 0.5, 0.5, 1.0]);
        // ties pooled first
        let m = pava_fit(&[0.2, 0.2, 0.7, 0.9], &[0, 1, 1, 1]).unwrap();
        assert_eq!(m.breakpoints, vec![(0.2, 0.5), (0.7, 1.0), (0.9, 1.0)]);
        assert_eq!(m.apply(0.1), 0.5);
        assert_eq!(m.apply(0.7), 1.0);
        assert_eq!(m.apply(0.5), 0.5);
        assert_eq!(m.apply(2.0), 1.0);
        assert!(pava_fit(&[0.3], &[1]).is_err());
    }

    #[test]
    fn calibration_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = pava_fit(&[0.1, 0.2, 0.35, 0.4, 0.8], &[0, 1, 0, 1, 1]).unwrap();
        let p = dir.path().join("cal.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(CalibrationMap::read_csv(&p).unwrap(), m);
    }

    #[test]
    fn reliability_examples() {
        let bins = reliability_curve(&[0.0; 5], &[0; 5], 10).unwrap();
        let occupied: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!((occupied[0].mean_prediction, occupied[0].observed_frequency), (Some(0.0), Some(0.0)));
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert!(reliability_curve(&[0.5], &[1], 1).is_err());
        assert_eq!(reliability_curve(&[1.0], &[1], 4).unwrap()[3].count, 1);
    }

    #[test]
    fn calibrated_draws_are_reliable() {
        let mut rng = crate::rng::stream(7, &[]);
        let p: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<u8> = p.iter().map(|&q| u8::from(rng.gen::<f64>() < q)).collect();
        let bins = reliability_curve(&p, &y, 10).unwrap();
        let occupied: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        let inside = occupied
            .iter()
            .filter(|b| {
                let (m, f, n) = (b.mean_prediction.unwrap(), b.observed_frequency.unwrap(), b.count as f64);
                (f - m).abs() <= 1.96 * (m * (1.0 - m) / n).sqrt() + 0.5 / n
            })
            .count();
        assert!(inside as f64 >= 0.9 * occupied.len() as f64);
    }

    #[test]
    fn breakdown_examples() {
        let g = RasterGeometry::new(1, 3, 1.0, 0.0, 0.0).unwrap();
        let index = vec![ix(0, 0), ix(1, 0), ix(2, 0)];
        let labels = [1, 0, 1];
        let preds = [0.8, 0.3, 0.6];
        let base = [0.5, 0.5, 0.6];
        let b = breakdowns(&preds, &labels, &index, &base, &g, 0.1).unwrap();
        assert_eq!(b.daily_brier.len(), 1);
        assert!((b.daily_brier[0].1 - brier(&preds, &labels).unwrap()).abs() < 1e-15);
        assert_eq!(b.histogram.iter().map(|h| h.2).sum::<usize>(), 3);
        assert_eq!(b.pixel_bss.values()[2], 0.0);
        let clim = breakdowns(&base, &labels, &index, &base, &g, 0.1).unwrap();
        assert!(clim.pixel_bss.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn report_directory() {
        let dir = tempfile::tempdir().unwrap();
        let g = RasterGeometry::new(1, 2, 1.0, 0.0, 0.0).unwrap();
        let index = vec![ix(0, 0), ix(1, 0), ix(0, 1), ix(1, 1)];
        let r = evaluate(&[0.9, 0.1, 0.6, 0.2], &[1, 0, 1, 0], &index, &[0.5; 4], &g).unwrap();
        assert!((r.bss.unwrap() - (1.0 - r.brier / r.baseline_brier)).abs() < 1e-12);
        r.write_dir(dir.path()).unwrap();
        for f in ["summary.json", "reliability.csv", "daily_brier.csv", "histogram.csv", "pixel_bss.rst"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["n_samples"], 4);
    }

    /// Best monotone fit over all partitions into consecutive blocks.
    fn brute_isotonic(x: &[f64], y: &[u8]) -> Vec<f64> {
        // tie-pooled groups
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut groups: Vec<(f64, f64, f64)> = Vec::new();
        for i in idx {
            match groups.last_mut() {
                Some(g) if g.0 == x[i] => {
                    g.1 += f64::from(y[i]);
                    g.2 += 1.0;
                }
                _ => groups.push((x[i], f64::from(y[i]), 1.0)),
            }
        }
        let k = groups.len();
        let mut best = (f64::INFINITY, vec![]);
        for cuts in 0u32..(1 << (k - 1)) {
            let mut vals = Vec::with_capacity(k);
            let mut start = 0;
            let mut sse = 0.0;
            let mut ok = true;
            let mut prev = f64::NEG_INFINITY;
            for j in 0..k {
                if j == k - 1 || cuts & (1 << j) != 0 {
                    let (s, w) = groups[start..=j].iter().fold((0.0, 0.0), |a, g| (a.0 + g.1, a.1 + g.2));
                    let m = s / w;
                    if m < prev - 1e-12 {
                        ok = false;
                        break;
                    }
                    prev = m;
                    for g in &groups[start..=j] {
                        // sum of squares of labels around m within the group
                        sse += g.1 * (1.0 - m).powi(2) + (g.2 - g.1) * m * m;
                        vals.push(m);
                    }
                    start = j + 1;
                }
            }
            if ok && sse < best.0 - 1e-12 {
                best = (sse, vals);
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn pava_matches_brute_force(
            x in proptest::collection::vec(0u8..6, 2..=8),
            y in proptest::collection::vec(0u8..=1, 8),
        ) {
            let xf: Vec<f64> = x.iter().map(|&v| f64::from(v) / 5.0).collect();
            let y = &y[..x.len()];
            let m = pava_fit(&xf, y).unwrap();
            let oracle = brute_isotonic(&xf, y);
            prop_assert_eq!(m.breakpoints.len(), oracle.len());
            for (b, o) in m.breakpoints.iter().zip(&oracle) {
                prop_assert!((b.1 - o).abs() < 1e-9);
            }
        }

        #[test]
        fn calibration_is_monotone_and_never_hurts_the_fitting_set(
            x in proptest::collection::vec(0.0f64..1.0, 2..40),
            y in proptest::collection::vec(0u8..=1, 40),
            probes in proptest::collection::vec(-0.5f64..1.5, 20),
        ) {
            let y = &y[..x.len()];
            let m = pava_fit(&x, y).unwrap();
            let mut sorted = probes.clone();
            sorted.sort_by(f64::total_cmp);
            let out = calibrate(&m, &sorted);
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            let cal = calibrate(&m, &x);
            prop_assert!(brier(&cal, y).unwrap() <= brier(&x, y).unwrap() + 1e-12);
            // fitting inputs map to their fitted values
            for (xi, c) in x.iter().zip(&cal) {
                let bp = m.breakpoints.iter().find(|b| b.0 == *xi).unwrap();
                prop_assert_eq!(bp.1, *c);
            }
        }

        #[test]
        fn bss_is_scale_invariant(m in 0.0f64..1.0, b in 0.01f64..1.0, k in 0.01f64..100.0) {
            prop_assert!((bss(m, b).unwrap() - bss(m * k, b * k).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn reliability_counts_sum(p in proptest::collection::vec(0.0f64..=1.0, 1..200), nb in 2usize..20) {
            let y: Vec<u8> = p.iter().map(|&v| u8::from(v > 0.5)).collect();
            let bins = reliability_curve(&p, &y, nb).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), p.len());
        }
    }
}
