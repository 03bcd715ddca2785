use std::fs;
use std::path::Path;

use stratus::cli::{main_with_args, RunConfigFile, EXIT_OK, EXIT_USAGE};

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["stratus"];
    v.extend_from_slice(args);
    main_with_args(v)
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.toml");
    let text = format!("output_dir = {:?}\n{extra}", dir.join("out").display().to_string());
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = "[scenario]\nn_days = 12\n";

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_requires_an_existing_output_dir() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    assert_eq!(run(&["synth", "--config", &cfg]), EXIT_USAGE);
}

#[test]
fn unknown_keys_and_bad_values_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("out")).unwrap();
    let cfg = write_config(d.path(), "[scenario]\nn_dayz = 3\n");
    assert_eq!(run(&["synth", "--config", &cfg]), EXIT_USAGE);
    let cfg = write_config(d.path(), "[trainer]\nbatch_size = 0\n");
    assert_eq!(run(&["run", "--config", &cfg]), EXIT_USAGE);
    let cfg = write_config(d.path(), "[experiment]\nseason = \"spring\"\n");
    assert_eq!(run(&["run", "--config", &cfg]), EXIT_USAGE);
    assert_eq!(run(&["run", "--model", "svm"]), EXIT_USAGE);
    assert_eq!(run(&["synth", "--config", "/nonexistent/run.toml"]), EXIT_USAGE);
}

#[test]
fn synth_is_deterministic_and_reaches_the_cover_target() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("out")).unwrap();
    let cfg = write_config(d.path(), SMALL);
    assert_eq!(run(&["synth", "--config", &cfg, "--seed", "7"]), EXIT_OK);
    let first = tree(&d.path().join("out"));
    assert_eq!(run(&["synth", "--config", &cfg, "--seed", "7"]), EXIT_OK);
    assert_eq!(first, tree(&d.path().join("out")));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("out/scenario/manifest.json")).unwrap()).unwrap();
    for c in manifest["achieved_cover"].as_array().unwrap() {
        let a = c["achieved"].as_f64().unwrap();
        assert!((0.050..=0.060).contains(&a), "achieved cover {a}");
    }
    let resolved = fs::read_to_string(d.path().join("out").join(stratus::cli::RESOLVED_CONFIG)).unwrap();
    let parsed = RunConfigFile::parse(&resolved, Path::new("resolved")).unwrap();
    assert_eq!(parsed.scenario.seed, 7);
    assert_eq!(parsed.scenario.n_days, 12);
}

#[test]
fn report_needs_inputs() {
    assert_eq!(run(&["report"]), EXIT_USAGE);
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report", d.path().to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn resolved_config_roundtrips() {
    let cfg = RunConfigFile::default();
    let back = RunConfigFile::parse(&cfg.to_toml(), Path::new("x")).unwrap();
    assert_eq!(back, cfg);
}
