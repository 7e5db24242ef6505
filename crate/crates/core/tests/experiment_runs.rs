use std::fs;

use ttpudr::evalbench::NoiseSettings;
use ttpudr::experiment::{run_experiment, DatasetKind, DatasetSpec, ExperimentSpec, Method, MethodSettings};
use ttpudr::synth::TwoClusterSpec;
use ttpudr::{Error, TrainConfig};

fn spec(methods: Vec<Method>, dims: Vec<usize>, shuffles: usize) -> ExperimentSpec {
    ExperimentSpec {
        dataset: DatasetSpec {
            kind: DatasetKind::TwoClusters,
            path: None,
            shape: None,
            reshape: None,
            synthetic: Some(TwoClusterSpec { samples: 60, separation: 5.0, ..Default::default() }),
            image_scale: None,
        },
        methods,
        target_dims: dims,
        shuffles,
        train_fraction: 0.5,
        stratified: true,
        noise: None,
        settings: MethodSettings {
            train: TrainConfig { ranks: vec![2, 2], max_outer_iters: 4, ..TrainConfig::default() },
            ..Default::default()
        },
        seed: 17,
        output_dir: None,
    }
}

#[test]
fn smallest_pca_sweep_reports_d_times_two_parameters() {
    let out = run_experiment(&spec(vec![Method::Pca], vec![2], 1)).unwrap();
    assert_eq!(out.runs.len(), 1);
    let r = &out.runs[0].report.results[0];
    assert!((0.0..=1.0).contains(&r.metrics.oa));
    assert_eq!(r.param_count, 64 * 2);
    assert_eq!(out.runs[0].report.spec["seed"], 17);
}

#[test]
fn same_spec_twice_gives_byte_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut s = spec(vec![Method::Ttpudr, Method::Pca, Method::Lpp], vec![1, 2], 2);
    s.noise = Some(NoiseSettings { fraction: 0.1, block: 2, ..Default::default() });
    s.dataset.reshape = Some(vec![8, 8]);
    s.settings.train.ranks = vec![2];
    for dir in [a.path(), b.path()] {
        s.output_dir = Some(dir.to_path_buf());
        run_experiment(&s).unwrap();
    }
    let mut names: Vec<_> = walk(a.path());
    names.sort();
    assert!(names.iter().any(|n| n.ends_with("aggregate.csv")));
    assert!(names.iter().any(|n| n.contains("traces")));
    for rel in names {
        let (x, y) = (
            fs::read_to_string(a.path().join(&rel)).unwrap(),
            fs::read_to_string(b.path().join(&rel)).unwrap(),
        );
        if rel.contains("traces") {
            // the last column is wall-clock time
            let strip = |t: &str| t.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
            assert_eq!(strip(&x), strip(&y), "{rel} differs between runs");
        } else {
            assert!(x == y, "{rel} differs between runs");
        }
    }
}

fn walk(root: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn aggregate_is_the_mean_of_runs() {
    let out = run_experiment(&spec(vec![Method::Ttpudr, Method::Lpp], vec![1, 3], 3)).unwrap();
    for row in &out.aggregate {
        let vals: Vec<f64> = out
            .runs
            .iter()
            .filter(|r| r.report.method == row.method.name())
            .flat_map(|r| r.report.results.iter().filter(|d| d.target_dim == row.target_dim))
            .map(|d| d.metrics.oa)
            .collect();
        assert_eq!(vals.len(), row.runs);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((row.oa.unwrap() - mean).abs() < 1e-15);
    }
}

#[test]
fn failing_cells_are_marked_not_fatal() {
    // target dimension 70 exceeds the 64 input dimensions for every method
    let out = run_experiment(&spec(vec![Method::Pca, Method::Ttpudr], vec![2, 70], 1)).unwrap();
    let bad: Vec<_> = out.aggregate.iter().filter(|r| r.target_dim == 70).collect();
    assert!(bad.iter().all(|r| r.oa.is_none() && r.failed == 1));
    assert!(out.aggregate.iter().filter(|r| r.target_dim == 2).all(|r| r.oa.is_some()));
    let csv = ttpudr::experiment::aggregate_csv(&out.aggregate);
    assert!(csv.contains("pca,70,NA,NA,NA,NA,0,1"));
}

#[test]
fn spec_validation_is_a_config_error() {
    let text = r#"
        methods = []
        target_dims = [2]
        train_fraction = 0.5
        [dataset]
        kind = "two_clusters"
    "#;
    assert!(matches!(ExperimentSpec::from_toml(text), Err(Error::Config(_))));
    let text = text.replace("methods = []", "methods = [\"pca\"]").replace("0.5", "1.5");
    assert!(matches!(ExperimentSpec::from_toml(&text), Err(Error::Config(_))));
}
