use std::sync::OnceLock;

use chrono::{Duration, NaiveDate};
use stratus::ablation::{delta_bss, run_config, Direction, ExperimentSpec, ModelFamily, ModelSettings};
use stratus::features::{build_feature_cube, FeatureCube, FeatureOptions};
use stratus::forest::ForestConfig;
use stratus::grid::{generate_scenario, ScenarioConfig};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn cube() -> &'static FeatureCube {
    static C: OnceLock<FeatureCube> = OnceLock::new();
    C.get_or_init(|| {
        let cfg = ScenarioConfig {
            seed: 11,
            n_days: 40,
            start_date: NaiveDate::from_ymd_opt(2015, 12, 12).unwrap(),
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        build_feature_cube(&s, 12, 0.5, &names(&["harmonie", "gefs_avg"]), FeatureOptions::for_scenario(&s)).unwrap()
    })
}

fn spec(family: ModelFamily, features: &[&str]) -> ExperimentSpec {
    ExperimentSpec {
        family,
        features: names(features),
        season: None,
        lead: 12,
        threshold: 0.5,
        fold_year: 2016,
        scenario_seed: 11,
        seed: 4,
    }
}

fn settings() -> ModelSettings {
    ModelSettings { forest: ForestConfig { n_estimators: 8, max_samples: Some(4000), ..ForestConfig::default() }, ..ModelSettings::default() }
}

#[test]
fn test_rows_come_only_from_test_days() {
    let out = run_config(cube(), &spec(ModelFamily::Linear, &["harmonie", "gefs_avg"]), &settings()).unwrap();
    assert!(!out.plan.test.is_empty() && !out.plan.train.is_empty() && !out.plan.validation.is_empty());
    for ix in &out.test_index {
        let day = (ix.time - Duration::hours(12)).date_naive();
        assert!(out.plan.test.contains(&day), "{day} is not a test day");
    }
    assert_eq!(out.test_index.len(), out.record.n_test);
    assert!(out.test_predictions.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn runs_are_repeatable() {
    for family in [ModelFamily::Linear, ModelFamily::Forest] {
        let s = spec(family, &["harmonie", "gefs_avg"]);
        let a = run_config(cube(), &s, &settings()).unwrap();
        let b = run_config(cube(), &s, &settings()).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.test_predictions, b.test_predictions);
    }
}

#[test]
fn isotonic_input_record_is_consistent() {
    let out = run_config(cube(), &spec(ModelFamily::IsotonicInput, &["harmonie"]), &settings()).unwrap();
    let r = &out.record;
    assert!(r.test_brier.is_finite() && r.test_brier >= 0.0);
    assert!((r.test_bss - out.report.bss.unwrap()).abs() < 1e-12);
    assert!(r.mdi.is_none());
    assert!(run_config(cube(), &spec(ModelFamily::IsotonicInput, &["harmonie", "gefs_avg"]), &settings()).is_err());
}

#[test]
fn removal_deltas_pair_runs() {
    let records: Vec<_> = [&["harmonie", "gefs_avg"][..], &["harmonie"], &["gefs_avg"]]
        .iter()
        .map(|f| run_config(cube(), &spec(ModelFamily::Linear, f), &settings()).unwrap().record)
        .collect();
    let base = names(&["harmonie", "gefs_avg"]);
    let d = delta_bss(&records, &base, "gefs_avg", Direction::Remove).unwrap();
    assert_eq!(d.deltas.len(), 1);
    assert!((d.deltas[0] - (records[1].test_bss - records[0].test_bss)).abs() < 1e-12);
    assert!(delta_bss(&records[1..], &base, "gefs_avg", Direction::Remove).is_err());
}

#[test]
fn mismatched_lead_is_rejected() {
    let mut s = spec(ModelFamily::Linear, &["harmonie"]);
    s.lead = 24;
    assert!(run_config(cube(), &s, &settings()).is_err());
}
