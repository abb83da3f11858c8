//! A small batch run written to a temporary directory, then re-verified
//! row by row.

use nbx::batch::{run_batch, verify_files, AttackKind, Condition, GenerateSpec, InputSpec, OracleSpec, RunSpec};
use nbx::oracle::{LocalOracle, load_model};
use nbx::synth::{desk_spec, random_mlp};

fn main() {
    let dir = std::env::temp_dir().join(format!("nbx-batch-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let model_path = dir.join("model.json");
    random_mlp(&desk_spec(6)).save(&model_path).unwrap();

    let spec = RunSpec {
        kind: AttackKind::Targeted,
        oracle: OracleSpec {
            model: Some(model_path.clone()),
            ..OracleSpec::default()
        },
        inputs: InputSpec {
            generate: Some(GenerateSpec {
                count: 12,
                ..GenerateSpec::default()
            }),
            ..InputSpec::default()
        },
        output_dir: dir.join("out"),
        success_threshold: 0.9,
        ..RunSpec::default()
    };
    let report = run_batch(&spec).unwrap();
    println!("{}\n", report.summary);

    let oracle = LocalOracle::full(std::sync::Arc::new(load_model(&model_path).unwrap()));
    for r in report.records.iter().filter(|r| r.success) {
        let name = format!("{:04}.nbt", r.instance_id);
        let verdict = verify_files(
            spec.output_dir.join("adv").join(&name),
            spec.output_dir.join("orig").join(&name),
            spec.attack.epsilon,
            &oracle,
            &Condition::Target(r.target.unwrap()),
        )
        .unwrap();
        println!("instance {:>2}: {} queries, verified {}", r.instance_id, r.queries, verdict.holds());
    }
    println!("\noutputs in {}", spec.output_dir.display());
}
