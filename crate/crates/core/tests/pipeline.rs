use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use qsar_core::pipeline::OUTPUT_FILES;
use qsar_core::{run_pipeline, Method, PipelineConfig, QsarError, Stage};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn demo_config(out: &std::path::Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(data("demo.csv"));
    c.out_dir = out.to_path_buf();
    c.permutations = 30;
    c
}

#[test]
fn demo_pls_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_pipeline(&demo_config(dir.path())).unwrap();
    assert!(start.elapsed().as_secs() < 30);
    assert!(out.report.q2_acceptable(), "q2 = {}", out.report.q2);
    assert_eq!(out.split.test_indices.len(), 10);
    assert_eq!(out.preprocess.removed_constant, vec!["const".to_string()]);
    assert_eq!(out.preprocess.removed_correlated.len(), 1);
    assert_eq!(out.selected.len(), 5);
    for f in OUTPUT_FILES {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.starts_with("# generated at"));
    assert!(report.contains(&out.config_hash));
    for label in ["n ", "DF", "F-test", "Zscore_ran_q²", "α_ran_r²", "pred_r²se"] {
        assert!(report.contains(label), "{label}");
    }
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 16);
    let obs = fs::read_to_string(dir.path().join("obs_vs_pred.csv")).unwrap();
    assert_eq!(obs.lines().count(), 29);
    assert_eq!(obs.lines().filter(|l| l.ends_with(",test")).count(), 10);
}

#[test]
fn all_methods_complete_on_demo() {
    for method in [Method::Mlr, Method::Pcr, Method::Pls] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = demo_config(dir.path());
        c.method = method;
        c.permutations = 10;
        let out = run_pipeline(&c).unwrap();
        assert_eq!(out.model.method, method);
        let expected_df = 18 - out.model.effective_parameters() as i64 - 1;
        assert_eq!(out.report.df, expected_df);
    }
}

#[test]
fn rank_deficient_mlr_fails_at_fit_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = PipelineConfig::new(data("rank_deficient.csv"));
    c.method = Method::Mlr;
    c.out_dir = dir.path().join("out");
    let err = run_pipeline(&c).unwrap_err();
    assert_eq!(err.stage, Stage::Fit);
    assert!(matches!(err.source, QsarError::Singular { .. }));
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("fit stage"));
    assert!(!c.out_dir.exists());
}

#[test]
fn missing_input_fails_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = PipelineConfig::new(dir.path().join("nope.csv"));
    c.out_dir = dir.path().join("out");
    let err = run_pipeline(&c).unwrap_err();
    assert_eq!(err.stage, Stage::Load);
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn explicit_dissimilarity_and_components() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = demo_config(dir.path());
    c.method = Method::Pcr;
    c.n_components = Some(3);
    c.dissimilarity = Some(0.3);
    c.permutations = 0;
    let out = run_pipeline(&c).unwrap();
    assert_eq!(out.model.n_components, 3);
    assert_eq!(out.split.dissimilarity, 0.3);
    assert!(out.report.randomization.is_none());
}
