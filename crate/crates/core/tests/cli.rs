use std::path::Path;

use gpmix::cli::{main_with_args, EXIT_NUMERICAL, EXIT_VALIDATION};
use gpmix::io::{load_dataset, ModelBundle};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("gpmix").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate", "--scenario", "perturbed", "--seed", "4", "--out", p(&a)]), 0);
    assert_eq!(run(&["simulate", "--scenario", "perturbed", "--seed", "4", "--out", p(&b)]), 0);
    let fa = std::fs::read(a.join("dataset.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("dataset.csv")).unwrap());

    let file = load_dataset(a.join("dataset.csv")).unwrap();
    assert_eq!(file.dataset.sample_rate, 20.0);
    assert!(file.dataset.has_truth());
    let perturbed = file.dataset.truth_modes().unwrap().iter().filter(|&&m| m == 1).count();
    assert_eq!(file.dataset.len(), 327);
    assert!((80..=105).contains(&perturbed), "{perturbed} perturbed samples");
    let header = data_rows(&a.join("dataset.csv"))[0].clone();
    assert_eq!(header, "t,theta,theta_dot,theta_ddot,sgn,tau,true_mode,tau_ext");
}

#[test]
fn identify_classify_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--scenario", "perturbed", "--out", p(out)]), 0);
    let data = out.join("dataset.csv");
    let args = ["identify", "--data", p(&data), "--modes", "2", "--iters", "3", "--out", p(out)];
    assert_eq!(run(&args), 0);
    let first = std::fs::read(out.join("model.json")).unwrap();
    assert_eq!(run(&args), 0);
    assert_eq!(first, std::fs::read(out.join("model.json")).unwrap(), "rerun must give the same bundle");

    let bundle = ModelBundle::load(out.join("model.json")).unwrap();
    assert_eq!(bundle.state.mode_count(), 2);
    assert!(bundle.state.disturbance.is_some());
    assert_eq!(bundle.trace.len(), 3);

    let model = out.join("model.json");
    assert_eq!(run(&["classify", "--model", p(&model), "--data", p(&data), "--out", p(out)]), 0);
    assert_eq!(data_rows(&out.join("labels.csv")).len(), 328);

    for which in ["classification", "zero-imp", "passivity", "equilibrium"] {
        let code = run(&[
            "evaluate", "--model", p(&model), "--data", p(&data), "--which", which, "--out", p(out),
        ]);
        assert_eq!(code, 0, "{which}");
    }
    let rows = data_rows(&out.join("classification.csv"));
    assert_eq!(rows[0], "true_mode,pred_mode,count");
    assert_eq!(rows.len(), 5);
    let total: usize = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 327);

    let rows = data_rows(&out.join("zero_impedance.csv"));
    assert!(rows[1].starts_with("uncompensated,") && rows[2].starts_with("compensated,"));
    let rows = data_rows(&out.join("passivity.csv"));
    assert!(rows[0].starts_with("initial_storage,min_margin"));

    let hash = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(hash("classification.csv"), hash("passivity.csv"));
    assert!(hash("equilibrium.csv").starts_with("# config_hash = "));
}

#[test]
fn single_mode_bundle_has_no_disturbance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--out", p(out)]), 0);
    let data = out.join("dataset.csv");
    assert_eq!(run(&["identify", "--data", p(&data), "--modes", "1", "--iters", "1", "--out", p(out)]), 0);
    let bundle = ModelBundle::load(out.join("model.json")).unwrap();
    assert_eq!(bundle.state.mode_count(), 1);
    assert!(bundle.state.disturbance.is_none());

    let model = out.join("model.json");
    assert_eq!(run(&["compensate", "--model", p(&model), "--data", p(&data), "--out", p(out)]), 0);
    assert!(out.join("compensate_trace.csv").exists());
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--pi", "1.0", "--out", p(out)]), EXIT_VALIDATION);
    assert_eq!(run(&["simulate", "--modes", "0", "--out", p(out)]), EXIT_VALIDATION);
    assert_eq!(run(&["simulate", "--sgn-feature", "maybe"]), EXIT_VALIDATION);
    assert_eq!(run(&["frobnicate"]), EXIT_VALIDATION);
    assert_eq!(run(&["version"]), 0);

    let cfg = out.join("bad.toml");
    std::fs::write(&cfg, "[identify]\nno_such_key = 1\n").unwrap();
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--out", p(out)]), EXIT_VALIDATION);

    // A dataset from a future schema is refused.
    assert_eq!(run(&["simulate", "--out", p(out)]), 0);
    let data = out.join("dataset.csv");
    let text = std::fs::read_to_string(&data).unwrap().replace("schema_version = 1", "schema_version = 2");
    std::fs::write(&data, text).unwrap();
    assert_eq!(run(&["identify", "--data", p(&data), "--out", p(out)]), EXIT_VALIDATION);
}

#[test]
fn layout_mismatch_between_bundle_and_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--out", p(out)]), 0);
    let data = out.join("dataset.csv");
    assert_eq!(run(&["identify", "--data", p(&data), "--modes", "1", "--iters", "1", "--out", p(out)]), 0);
    let other = out.join("nosign");
    assert_eq!(run(&["simulate", "--sgn-feature", "off", "--out", p(&other)]), 0);
    let code = run(&[
        "evaluate", "--model", p(&out.join("model.json")), "--data", p(&other.join("dataset.csv")),
        "--which", "equilibrium", "--out", p(out),
    ]);
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn numerical_errors_map_to_three() {
    let e = gpmix::Error::NotPositiveDefinite { jitter: 1e-6 };
    assert_eq!(gpmix::cli::exit_code(&e), EXIT_NUMERICAL);
    assert_eq!(gpmix::cli::exit_code(&gpmix::Error::InvalidConfig("x".into())), EXIT_VALIDATION);
}
