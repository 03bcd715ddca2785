//! Labels, seasons and cross-validation splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Raster;

/// 1 where the observation strictly exceeds `threshold_mm`, else 0.
pub fn threshold_labels(obs: &Raster, threshold_mm: f64) -> Result<Raster> {
    if obs.values().iter().any(|&v| Raster::is_fill(v)) {
        return Err(Error::invalid("observation contains fill values"));
    }
    Ok(obs.map(|v| if f64::from(v) > threshold_mm { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Summer,
    Winter,
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Summer => "summer",
            Season::Winter => "winter",
        })
    }
}

impl FromStr for Season {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summer" => Ok(Season::Summer),
            "winter" => Ok(Season::Winter),
            _ => Err(Error::config(format!("unknown season '{s}'"))),
        }
    }
}

/// Summer runs from 15 April to 14 October inclusive.
pub fn season_of(date: NaiveDate) -> Season {
    let md = (date.month(), date.day());
    if md >= (4, 15) && md <= (10, 14) {
        Season::Summer
    } else {
        Season::Winter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_year: i32,
    pub season: Option<Season>,
    pub train: Vec<NaiveDate>,
    pub validation: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
    pub dropped: Vec<(NaiveDate, String)>,
}

/// Hold out `fold_year` as test and alternate the remaining days between
/// training and validation in date order, starting with training.
///
/// Days outside `season` and days listed in `unusable` are dropped.
pub fn make_splits(days: &[NaiveDate], fold_year: i32, season: Option<Season>, unusable: &[(NaiveDate, String)]) -> Result<SplitPlan> {
    let mut sorted = days.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut plan = SplitPlan { fold_year, season, train: vec![], validation: vec![], test: vec![], dropped: vec![] };
    let mut alternate = 0usize;
    for d in sorted {
        if let Some((_, why)) = unusable.iter().find(|(u, _)| *u == d) {
            plan.dropped.push((d, why.clone()));
            continue;
        }
        if let Some(s) = season {
            if season_of(d) != s {
                plan.dropped.push((d, format!("outside {s}")));
                continue;
            }
        }
        if d.year() == fold_year {
            plan.test.push(d);
        } else {
            if alternate % 2 == 0 {
                plan.train.push(d);
            } else {
                plan.validation.push(d);
            }
            alternate += 1;
        }
    }
    if plan.test.is_empty() || plan.train.is_empty() || plan.validation.is_empty() {
        return Err(Error::invalid(format!(
            "fold {fold_year}: empty split (train {}, validation {}, test {})",
            plan.train.len(),
            plan.validation.len(),
            plan.test.len()
        )));
    }
    Ok(plan)
}

impl SplitPlan {
    pub fn split_of(&self, d: NaiveDate) -> Option<Split> {
        if self.train.contains(&d) {
            Some(Split::Train)
        } else if self.validation.contains(&d) {
            Some(Split::Validation)
        } else if self.test.contains(&d) {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// CSV with columns `date,split,reason`; dropped days have an empty split.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut rows: Vec<(NaiveDate, String, String)> = Vec::new();
        for (list, s) in [(&self.train, Split::Train), (&self.validation, Split::Validation), (&self.test, Split::Test)] {
            rows.extend(list.iter().map(|d| (*d, s.to_string(), String::new())));
        }
        rows.extend(self.dropped.iter().map(|(d, r)| (*d, String::new(), r.clone())));
        rows.sort();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["date", "split", "reason"])?;
        for (d, s, r) in rows {
            w.write_record([d.to_string(), s, r])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RasterGeometry;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn labels_are_strict() {
        let g = RasterGeometry::new(3, 1, 1.0, 0.0, 0.0).unwrap();
        let obs = Raster::new(g, vec![0.5, 0.51, 0.0]).unwrap();
        assert_eq!(threshold_labels(&obs, 0.5).unwrap().values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn season_boundaries() {
        assert_eq!(season_of(d(2016, 4, 14)), Season::Winter);
        assert_eq!(season_of(d(2016, 4, 15)), Season::Summer);
        assert_eq!(season_of(d(2016, 10, 14)), Season::Summer);
        assert_eq!(season_of(d(2016, 10, 15)), Season::Winter);
        assert_eq!(season_of(d(2016, 1, 1)), Season::Winter);
    }

    #[test]
    fn alternation_starts_with_train() {
        let days: Vec<_> = (0..6).map(|i| d(2015, 12, 28) + chrono::Duration::days(i)).collect();
        let plan = make_splits(&days, 2016, None, &[]).unwrap();
        assert_eq!(plan.train, vec![d(2015, 12, 28), d(2015, 12, 30)]);
        assert_eq!(plan.validation, vec![d(2015, 12, 29), d(2015, 12, 31)]);
        assert_eq!(plan.test, vec![d(2016, 1, 1), d(2016, 1, 2)]);
        let plan = make_splits(&days, 2016, None, &[(d(2015, 12, 28), "missing".into())]).unwrap();
        assert_eq!(plan.train, vec![d(2015, 12, 29), d(2015, 12, 31)]);
        assert_eq!(plan.dropped.len(), 1);
        assert!(make_splits(&days, 2017, None, &[]).is_err());
        assert!(make_splits(&days, 2016, Some(Season::Summer), &[]).is_err());
    }

    #[test]
    fn splits_partition_the_days() {
        let days: Vec<_> = (0..400).map(|i| d(2015, 1, 1) + chrono::Duration::days(i * 2)).collect();
        for season in [None, Some(Season::Summer), Some(Season::Winter)] {
            let p = make_splits(&days, 2016, season, &[]).unwrap();
            let total = p.train.len() + p.validation.len() + p.test.len() + p.dropped.len();
            assert_eq!(total, days.len());
            assert!(p.test.iter().all(|x| x.year() == 2016));
            assert!(p.train.iter().chain(&p.validation).all(|x| x.year() != 2016));
            assert!(p.train.len().abs_diff(p.validation.len()) <= 1);
        }
    }
}
