use std::path::Path;
use std::sync::Arc;

use nbx::batch::{
    read_results, run_batch, verify, verify_files, AttackKind, BatchError, Condition, GenerateSpec, InputSpec,
    OracleSpec, RunSpec, TargetSpec, HISTOGRAM_BINS,
};
use nbx::imageio::{load_raw, save_raw};
use nbx::oracle::wire::WireMode;
use nbx::oracle::{load_model, LocalOracle};
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, random_mlp, smooth_image, DESK_CONTRAST};

fn spec_in(dir: &Path, count: usize) -> RunSpec {
    let model = dir.join("model.json");
    if !model.exists() {
        random_mlp(&desk_spec(1)).save(&model).unwrap();
    }
    RunSpec {
        oracle: OracleSpec {
            model: Some(model),
            ..OracleSpec::default()
        },
        inputs: InputSpec {
            generate: Some(GenerateSpec {
                count,
                seed: 4,
                ..GenerateSpec::default()
            }),
            ..InputSpec::default()
        },
        output_dir: dir.join("out"),
        seed: 7,
        success_threshold: 0.9,
        ..RunSpec::default()
    }
}

/// Recomputes the summary straight from the CSV text.
fn reaggregate(path: &Path) -> (usize, usize, f64, Vec<u64>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (success, queries) = (col("success"), col("queries"));
    let mut rows = 0;
    let mut wins = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        rows += 1;
        if &rec[success] == "true" {
            wins.push(rec[queries].parse::<u64>().unwrap());
        }
    }
    let mean = wins.iter().sum::<u64>() as f64 / wins.len() as f64;
    (rows, wins.len(), mean, wins)
}

#[test]
fn fifty_instance_batch_matches_its_csv_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_in(dir.path(), 50);
    let report = run_batch(&spec).unwrap();
    let out = &spec.output_dir;

    let (rows, successes, mean, wins) = reaggregate(&out.join("results.csv"));
    assert_eq!(rows, 50);
    assert_eq!(successes, report.summary.successes);
    assert_eq!(report.summary.success_rate, successes as f64 / 50.0);
    assert!((report.summary.mean_queries.unwrap() - mean).abs() < 1e-9);
    assert!(report.summary.passed);

    let mut h = csv::Reader::from_path(out.join("histogram.csv")).unwrap();
    let bins: Vec<(f64, f64, usize)> = h.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(bins.len(), HISTOGRAM_BINS);
    assert_eq!(bins.iter().map(|b| b.2).sum::<usize>(), successes);
    let max = *wins.iter().max().unwrap() as f64;
    assert!((bins.last().unwrap().1 - max).abs() < 1e-9);
    for q in wins {
        let idx = bins
            .iter()
            .position(|b| (q as f64) >= b.0 && ((q as f64) < b.1 || b.1 == max))
            .unwrap();
        assert!(bins[idx].2 > 0);
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["successes"], successes);
    assert_eq!(json["spec"]["attack"]["epsilon"], 0.05);
    assert_eq!(json["spec"]["attack"]["nes"]["sigma"], 0.001);
    assert!(json["summary"]["wall_clock_secs"].as_f64().unwrap() >= 0.0);

    let oracle = LocalOracle::full(Arc::new(load_model(spec.oracle.model.as_ref().unwrap()).unwrap()));
    for r in read_results(out.join("results.csv")).unwrap().iter().filter(|r| r.success) {
        let name = format!("{:04}.nbt", r.instance_id);
        let v = verify_files(
            out.join("adv").join(&name),
            out.join("orig").join(&name),
            spec.attack.epsilon,
            &oracle,
            &Condition::Target(r.target.unwrap()),
        )
        .unwrap();
        assert!(v.holds(), "instance {}: {v}", r.instance_id);
        assert!(out.join("adv").join(format!("{:04}.png", r.instance_id)).exists());
    }
}

#[test]
fn tampered_pixel_breaks_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_in(dir.path(), 1);
    run_batch(&spec).unwrap();
    let out = &spec.output_dir;
    let orig = load_raw(out.join("orig/0000.nbt")).unwrap();
    let mut adv = load_raw(out.join("adv/0000.nbt")).unwrap();
    let v = orig.data()[17];
    adv.data_mut()[17] = if v > 0.5 { v - 0.06 } else { v + 0.06 };
    save_raw(out.join("tampered.nbt"), &adv).unwrap();
    let oracle = LocalOracle::full(Arc::new(load_model(spec.oracle.model.as_ref().unwrap()).unwrap()));
    let verdict = verify_files(
        out.join("tampered.nbt"),
        out.join("orig/0000.nbt"),
        0.05,
        &oracle,
        &Condition::Misclassified,
    )
    .unwrap();
    assert!(!verdict.bound_holds);
    assert!(!verdict.holds());
}

#[test]
fn original_is_not_misclassified() {
    let model = Arc::new(random_mlp(&desk_spec(1)));
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(3));
    let v = verify(&x, &x, 0.05, &LocalOracle::full(model), &Condition::Misclassified).unwrap();
    assert!(v.bound_holds);
    assert!(!v.condition_holds);
    assert_eq!(v.linf, 0.0);
}

#[test]
fn degenerate_batch_of_one_adversarial_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), 0);
    let model = load_model(spec.oracle.model.as_ref().unwrap()).unwrap();
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(8));
    let label = argmax(&model.classify_full(&x).unwrap());
    save_raw(dir.path().join("x.nbt"), &x).unwrap();
    spec.inputs = InputSpec {
        images: vec![dir.path().join("x.nbt")],
        generate: None,
    };
    spec.targets.labels = vec![label];
    let report = run_batch(&spec).unwrap();
    assert_eq!(report.summary.success_rate, 1.0);
    assert_eq!(report.summary.mean_queries, Some(1.0));
    assert_eq!(report.summary.setup_queries, 1);
}

#[test]
fn reruns_are_row_for_row_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), 6);
    spec.kind = AttackKind::Untargeted;
    run_batch(&spec).unwrap();
    let first = read_results(spec.output_dir.join("results.csv")).unwrap();
    spec.parallel = false;
    spec.output_dir = dir.path().join("again");
    run_batch(&spec).unwrap();
    assert_eq!(read_results(spec.output_dir.join("results.csv")).unwrap(), first);
}

#[test]
fn random_targets_avoid_the_clean_label() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_in(dir.path(), 30);
    let report = run_batch(&spec).unwrap();
    for r in &report.records {
        assert_ne!(r.target, r.source_label);
    }
}

#[test]
fn instance_failures_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), 3);
    spec.kind = AttackKind::PartialInfo;
    spec.oracle.mode = WireMode::Topk;
    spec.oracle.k = Some(5);
    spec.attack.k = Some(5);
    spec.start_search = 0;
    let report = run_batch(&spec).unwrap();
    assert_eq!(report.records.len(), 3);
    assert!(report.records.iter().all(|r| r.error.is_some() && !r.success));
    assert!(!report.summary.passed);
    assert_eq!(read_results(spec.output_dir.join("results.csv")).unwrap().len(), 3);
}

#[test]
fn label_set_batch_reads_names_from_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), 4);
    std::fs::write(dir.path().join("labels.txt"), "a\nb\nc\nd\ne\nf\ng\nh\ni\nj\n").unwrap();
    spec.kind = AttackKind::LabelSet;
    spec.targets = TargetSpec {
        label_set: vec!["a".into(), "b".into(), "7".into()],
        label_file: Some(dir.path().join("labels.txt")),
        ..TargetSpec::default()
    };
    let report = run_batch(&spec).unwrap();
    let model = load_model(spec.oracle.model.as_ref().unwrap()).unwrap();
    for r in report.records.iter().filter(|r| r.success) {
        let adv = load_raw(spec.output_dir.join(format!("adv/{:04}.nbt", r.instance_id))).unwrap();
        assert!(![0, 1, 7].contains(&argmax(&model.classify_full(&adv).unwrap())));
    }
    assert!(report.summary.successes > 0);

    spec.targets.label_set = vec!["zebra".into()];
    spec.output_dir = dir.path().join("bad");
    assert!(matches!(run_batch(&spec), Err(BatchError::Labels(_))));
}

#[test]
fn invalid_run_config_aborts_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), 2);
    spec.kind = AttackKind::Eot;
    assert!(matches!(run_batch(&spec), Err(BatchError::Spec(_))));
    assert!(!spec.output_dir.exists());
}

#[test]
fn toml_run_file_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    random_mlp(&desk_spec(2)).save(dir.path().join("m.json")).unwrap();
    let text = r#"
kind = "untargeted"
output_dir = "results"
success_threshold = 0.5

[oracle]
model = "m.json"

[inputs.generate]
count = 2

[attack]
epsilon = 0.04
"#;
    std::fs::write(dir.path().join("run.toml"), text).unwrap();
    let spec = RunSpec::load(dir.path().join("run.toml")).unwrap();
    assert_eq!(spec.oracle.model.as_deref(), Some(dir.path().join("m.json").as_path()));
    assert_eq!(spec.attack.epsilon, 0.04);
    assert_eq!(spec.attack.lr, 0.01);
    let report = run_batch(&spec).unwrap();
    assert_eq!(report.summary.instances, 2);
    assert!(dir.path().join("results/results.csv").exists());

    std::fs::write(dir.path().join("typo.toml"), "kidn = \"eot\"\n").unwrap();
    assert!(matches!(RunSpec::load(dir.path().join("typo.toml")), Err(BatchError::Parse { .. })));
}
