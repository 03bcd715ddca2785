use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Mask, Raster, RasterGeometry, Timestamp, FILL};

/// 0/1 labels aligned with table rows.
pub type LabelVector = Vec<u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIndex {
    pub time: Timestamp,
    pub row: usize,
    pub col: usize,
}

/// Row-major feature matrix with one row per (time, masked cell).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    columns: Vec<String>,
    data: Vec<f64>,
    index: Vec<RowIndex>,
}

pub struct TabularDay<'a> {
    pub time: Timestamp,
    pub features: Vec<&'a Raster>,
    pub label: &'a Raster,
}

/// Flatten masked cells, ordered by time and then row-major.
pub fn tabularize(names: &[String], mask: &Mask, days: &[TabularDay]) -> Result<(FeatureTable, LabelVector)> {
    let valid = mask.valid_indices();
    let w = mask.geometry().width_px;
    let p = names.len();
    let mut data = Vec::with_capacity(days.len() * valid.len() * p);
    let mut index = Vec::with_capacity(days.len() * valid.len());
    let mut labels = Vec::with_capacity(days.len() * valid.len());
    for (k, d) in days.iter().enumerate() {
        if k > 0 && d.time <= days[k - 1].time {
            return Err(Error::invalid("tabularized days must have increasing times"));
        }
        if d.features.len() != p {
            return Err(Error::shape(format!("{} feature rasters for {p} names", d.features.len())));
        }
        for r in d.features.iter().copied().chain(std::iter::once(d.label)) {
            mask.geometry().ensure_same(r.geometry(), "feature raster vs mask")?;
        }
        for &i in &valid {
            data.extend(d.features.iter().map(|r| f64::from(r.values()[i])));
            index.push(RowIndex { time: d.time, row: i / w, col: i % w });
            labels.push(u8::from(d.label.values()[i] > 0.5));
        }
    }
    Ok((FeatureTable { columns: names.to_vec(), data, index }, labels))
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, data: Vec<f64>, index: Vec<RowIndex>) -> Result<Self> {
        if data.len() != columns.len() * index.len() {
            return Err(Error::shape(format!("{} values for {} rows x {} columns", data.len(), index.len(), columns.len())));
        }
        Ok(FeatureTable { columns, data, index })
    }

    /// Table without spatial meaning: row `i` is indexed as cell `(i, 0)`
    /// at the Unix epoch.
    pub fn from_matrix(columns: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::shape("table needs at least one column"));
        }
        let n = data.len() / columns.len();
        let index = (0..n).map(|row| RowIndex { time: Timestamp::UNIX_EPOCH, row, col: 0 }).collect();
        FeatureTable::new(columns, data, index)
    }

    pub fn n_rows(&self) -> usize {
        self.index.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn index(&self) -> &[RowIndex] {
        &self.index
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.n_cols()).copied()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureTable { columns: self.columns.clone(), data, index: rows.iter().map(|&r| self.index[r]).collect() }
    }

    /// Append a column.
    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<FeatureTable> {
        if values.len() != self.n_rows() {
            return Err(Error::shape(format!("{} values for {} rows", values.len(), self.n_rows())));
        }
        if self.column_index(name).is_some() {
            return Err(Error::config(format!("duplicate column '{name}'")));
        }
        let mut data = Vec::with_capacity(self.data.len() + values.len());
        for (i, v) in values.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(*v);
        }
        let mut columns = self.columns.clone();
        columns.push(name.into());
        Ok(FeatureTable { columns, data, index: self.index.clone() })
    }

    /// Place one value per row back on rasters of `geometry`, one per
    /// distinct time, with fill outside the rows present.
    pub fn scatter(&self, values: &[f64], geometry: &RasterGeometry) -> Result<Vec<(Timestamp, Raster)>> {
        if values.len() != self.n_rows() {
            return Err(Error::shape(format!("{} values for {} rows", values.len(), self.n_rows())));
        }
        let mut out: Vec<(Timestamp, Vec<f32>)> = Vec::new();
        for (ix, &v) in self.index.iter().zip(values) {
            if ix.row >= geometry.height_px || ix.col >= geometry.width_px {
                return Err(Error::GeometryMismatch(format!("row index ({}, {}) outside raster", ix.row, ix.col)));
            }
            if out.last().map_or(true, |(t, _)| *t != ix.time) {
                out.push((ix.time, vec![FILL; geometry.len()]));
            }
            out.last_mut().unwrap().1[ix.row * geometry.width_px + ix.col] = v as f32;
        }
        Ok(out.into_iter().map(|(t, v)| (t, Raster::from_parts_unchecked(*geometry, v))).collect())
    }

    /// CSV with columns `time,row,col,<features>[,label]`.
    pub fn write_csv(&self, path: impl AsRef<Path>, labels: Option<&[u8]>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        let mut header = vec!["time".to_string(), "row".into(), "col".into()];
        header.extend(self.columns.iter().cloned());
        if labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let ix = &self.index[i];
            let mut rec = vec![ix.time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), ix.row.to_string(), ix.col.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            if let Some(l) = labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(FeatureTable, Option<LabelVector>)> {
        let path = path.as_ref();
        let perr = |m: String| Error::Parse { path: path.into(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.len() < 3 || header[..3] != ["time", "row", "col"] {
            return Err(perr("header must start with time,row,col".into()));
        }
        let has_label = header.last().is_some_and(|h| h == "label");
        let feat_end = header.len() - usize::from(has_label);
        let columns = header[3..feat_end].to_vec();
        let (mut data, mut index, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let time = rec[0].parse::<Timestamp>().map_err(|e| perr(format!("time: {e}")))?;
            let int = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("{s}: {e}")));
            index.push(RowIndex { time, row: int(&rec[1])?, col: int(&rec[2])? });
            for s in rec.iter().take(feat_end).skip(3) {
                data.push(s.parse::<f64>().map_err(|e| perr(format!("{s}: {e}")))?);
            }
            if has_label {
                labels.push(rec[feat_end].parse::<u8>().map_err(|e| perr(format!("label: {e}")))?);
            }
        }
        Ok((FeatureTable::new(columns, data, index)?, has_label.then_some(labels)))
    }
}

/// Per-column mean and standard deviation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Columns with zero spread; they standardize to 0.
    pub constant: Vec<bool>,
}

impl StandardizationStats {
    pub fn fit(train: &FeatureTable) -> Result<Self> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::invalid("cannot fit standardization on an empty table"));
        }
        let p = train.n_cols();
        let (mut mean, mut sd) = (vec![0.0; p], vec![0.0; p]);
        for j in 0..p {
            let m = train.column(j).sum::<f64>() / n as f64;
            let var = train.column(j).map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            sd[j] = var.sqrt();
        }
        let constant = sd.iter().zip(&mean).map(|(&s, &m)| s <= 1e-12 * (1.0 + m.abs())).collect();
        Ok(StandardizationStats { columns: train.columns.clone(), mean, sd, constant })
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.columns != self.columns {
            return Err(Error::shape("table columns differ from the fitted standardization"));
        }
        let p = self.columns.len();
        let data = table
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let j = k % p;
                if self.constant[j] { 0.0 } else { (v - self.mean[j]) / self.sd[j] }
            })
            .collect();
        Ok(FeatureTable { columns: table.columns.clone(), data, index: table.index.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;

    fn t(h: i64) -> Timestamp {
        "2016-02-01T00:00:00Z".parse::<Timestamp>().unwrap() + Duration::hours(h)
    }

    fn g() -> RasterGeometry {
        RasterGeometry::new(3, 2, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn order_is_time_then_row_major() {
        let mask = Mask::new(g(), vec![true, false, true, false, true, true]).unwrap();
        let a = Raster::new(g(), (0..6).map(|v| v as f32).collect()).unwrap();
        let b = Raster::new(g(), (10..16).map(|v| v as f32).collect()).unwrap();
        let lab = Raster::new(g(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let days = [
            TabularDay { time: t(0), features: vec![&a], label: &lab },
            TabularDay { time: t(24), features: vec![&b], label: &lab },
        ];
        let (tab, labels) = tabularize(&["f".into()], &mask, &days).unwrap();
        assert_eq!(tab.column(0).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0, 5.0, 10.0, 12.0, 14.0, 15.0]);
        assert_eq!(labels, vec![1, 0, 1, 0, 1, 0, 1, 0]);
        assert_eq!(tab.index()[2], RowIndex { time: t(0), row: 1, col: 1 });
        let back = tab.scatter(&tab.column(0).collect::<Vec<_>>(), &g()).unwrap();
        assert_eq!(back[1].1.values(), &[10.0, FILL, 12.0, FILL, 14.0, 15.0]);
        let rev = [TabularDay { time: t(24), features: vec![&b], label: &lab }, TabularDay { time: t(0), features: vec![&a], label: &lab }];
        assert!(tabularize(&["f".into()], &mask, &rev).is_err());
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let idx = (0..3).map(|i| RowIndex { time: t(0), row: 0, col: i }).collect();
        let tab = FeatureTable::new(vec!["c".into(), "x".into()], vec![2.0, 1.0, 2.0, 2.0, 2.0, 3.0], idx).unwrap();
        let st = StandardizationStats::fit(&tab).unwrap();
        assert_eq!(st.constant, vec![true, false]);
        let z = st.apply(&tab).unwrap();
        assert_eq!(z.column(0).collect::<Vec<_>>(), vec![0.0; 3]);
        let x: Vec<f64> = z.column(1).collect();
        assert!((x[0] + 1.224_744_871_391_589).abs() < 1e-12 && x[1] == 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = vec![RowIndex { time: t(0), row: 1, col: 2 }, RowIndex { time: t(1), row: 0, col: 0 }];
        let tab = FeatureTable::new(vec!["a".into(), "b".into()], vec![0.1, -2.5, 3.0, 1e-7], idx).unwrap();
        let p = dir.path().join("t.csv");
        tab.write_csv(&p, Some(&[1, 0])).unwrap();
        let (back, labels) = FeatureTable::read_csv(&p).unwrap();
        assert_eq!(back, tab);
        assert_eq!(labels, Some(vec![1, 0]));
    }

    proptest! {
        #[test]
        fn scatter_inverts_tabularize(
            flags in proptest::collection::vec(any::<bool>(), 6),
            vals in proptest::collection::vec(-5.0f32..5.0, 12),
        ) {
            prop_assume!(flags.iter().any(|&f| f));
            let mask = Mask::new(g(), flags.clone()).unwrap();
            let r0 = Raster::new(g(), vals[..6].to_vec()).unwrap();
            let r1 = Raster::new(g(), vals[6..].to_vec()).unwrap();
            let lab = Raster::zeros(g());
            let days = [TabularDay { time: t(0), features: vec![&r0], label: &lab }, TabularDay { time: t(1), features: vec![&r1], label: &lab }];
            let (tab, _) = tabularize(&["f".into()], &mask, &days).unwrap();
            let back = tab.scatter(&tab.column(0).collect::<Vec<_>>(), &g()).unwrap();
            for ((_, b), orig) in back.iter().zip([&r0, &r1]) {
                for i in 0..6 {
                    if flags[i] { prop_assert_eq!(b.values()[i], orig.values()[i]); } else { prop_assert_eq!(b.values()[i], FILL); }
                }
            }
        }

        #[test]
        fn standardized_training_columns_have_zero_mean_unit_sd(vals in proptest::collection::vec(-100.0f64..100.0, 20..60)) {
            let n = vals.len();
            let idx = (0..n).map(|i| RowIndex { time: t(0), row: 0, col: i }).collect();
            let tab = FeatureTable::new(vec!["x".into()], vals, idx).unwrap();
            let st = StandardizationStats::fit(&tab).unwrap();
            prop_assume!(!st.constant[0]);
            let z: Vec<f64> = st.apply(&tab).unwrap().column(0).collect();
            let m = z.iter().sum::<f64>() / n as f64;
            let sd = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }
}
