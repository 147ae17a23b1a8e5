use std::path::Path;
use std::process::{Command, Output};

use imce_core::model_ir::{load_model, save_tensors, TensorSet};
use imce_core::zoo;

const IMCE: &str = env!("CARGO_BIN_EXE_imce");
const WORKER: &str = env!("CARGO_BIN_EXE_imce-worker");

fn imce(dir: &Path, args: &[&str]) -> Output {
    Command::new(IMCE).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "{}", stderr(&o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn empty_model_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("m.json"), "").unwrap();
    let o = imce(d.path(), &["compile", "--model", "m.json", "--out", "c"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("m.json"));
}

#[test]
fn empty_calibration_is_a_quantization_error() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "mvm", "--out", "m.json"]));
    save_tensors(&TensorSet::from_values(&[], None).unwrap(), &d.path().join("cal.json")).unwrap();
    let o = imce(d.path(), &["compile", "--model", "m.json", "--calibration", "cal.json", "--out", "c"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn missing_class_is_a_mapping_error() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "resnet8", "--out", "m.json"]));
    ok(imce(d.path(), &["compile", "--model", "m.json", "--out", "c"]));
    // a single An board cannot host the Di adds
    ok(imce(d.path(), &["hw", "--an", "1", "--di", "0", "--fthreads", "64", "--out", "hw.json"]));
    let o = imce(d.path(), &["map", "--compiled", "c", "--hw", "hw.json", "--out", "dep"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("Di nodes need 3 F-threads, boards offer 0"), "{}", stderr(&o));
}

#[test]
fn map_prints_utilization() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "chain", "--out", "m.json"]));
    ok(imce(d.path(), &["compile", "--model", "m.json", "--out", "c"]));
    ok(imce(d.path(), &["hw", "--an", "2", "--di", "1", "--out", "hw.json"]));
    let out = ok(imce(d.path(), &["map", "--compiled", "c", "--hw", "hw.json", "--strategy", "roundrobin", "--out", "dep"]));
    assert!(out.contains("F-threads"), "{out}");
    assert!(out.contains("strategy roundrobin"), "{out}");
    for f in ["model.bin", "topology.dfl", "board_0.cfg", "board_1.cfg", "board_2.cfg"] {
        assert!(d.path().join("dep").join(f).exists(), "{f}");
    }
}

#[test]
fn unreachable_boards_exit_with_distributed_error() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "mvm", "--out", "m.json"]));
    // port 1 on loopback refuses connections
    ok(imce(d.path(), &["hw", "--an", "1", "--di", "1", "--base-port", "1", "--out", "hw.json"]));
    std::fs::write(
        d.path().join("run.json"),
        r#"{"model":"m.json","hw_info":"hw.json","input":{"synthetic":{"count":2,"seed":0}}}"#,
    )
    .unwrap();
    let o = imce(d.path(), &["run", "--manifest", "run.json", "--out", "out", "--timeout-s", "2"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("board 0"), "{}", stderr(&o));
    // the report is still written, with the error recorded
    let report = std::fs::read_to_string(d.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"completed\": 0"));
    assert!(report.contains("\"error\""));
}

#[test]
fn missing_manifest_input_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "mvm", "--out", "m.json"]));
    std::fs::write(
        d.path().join("run.json"),
        r#"{"model":"m.json","hw_info":"nope.json","input":{"synthetic":{"count":2,"seed":0}}}"#,
    )
    .unwrap();
    let o = imce(d.path(), &["run", "--manifest", "run.json", "--out", "out"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn oracle_without_input_file_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    ok(imce(d.path(), &["gen", "mvm", "--out", "m.json"]));
    let o = imce(d.path(), &["oracle", "--model", "m.json", "--input", "missing.json"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn local_run_matches_oracle_and_reports_accuracy() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(imce(p, &["--seed", "4", "gen", "yolo", "--out", "m.json", "--inputs", "in.json", "--count", "6"]));
    ok(imce(p, &["hw", "--an", "2", "--di", "2", "--out", "hw.json"]));
    std::fs::write(
        p.join("run.json"),
        r#"{"model":"m.json","hw_info":"hw.json","window":3,"noise":"sigma_read=0.02,seed=1",
            "input":{"files":{"glob":"in*.json"}}}"#,
    )
    .unwrap();
    let summary = ok(imce(p, &["run", "--manifest", "run.json", "--out", "out", "--local", "--worker-bin", WORKER]));
    assert!(summary.contains("6 of 6"), "{summary}");
    assert!(summary.contains("reference only"), "{summary}");
    ok(imce(
        p,
        &["oracle", "--compiled", "out/compiled", "--input", "in.json", "--noise", "sigma_read=0.02,seed=1", "--out", "o.json"],
    ));
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("out/outputs.json")).unwrap()).unwrap();
    let oracle: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("o.json")).unwrap()).unwrap();
    assert_eq!(run.as_array().unwrap().len(), 6);
    for (a, b) in run.as_array().unwrap().iter().zip(oracle.as_array().unwrap()) {
        assert_eq!(a["codes"], b["codes"]);
    }
    let timing = std::fs::read_to_string(p.join("out/timing.json")).unwrap();
    assert!(timing.contains("throughput_per_s"));
}

#[test]
fn labelled_inputs_give_accuracy_and_stats_summarize() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let g = zoo::single_mvm(64, 10, 2);
    imce_core::model_ir::save_model(&g, &p.join("m.json")).unwrap();
    let inputs = zoo::random_inputs(&g, 5, 1);
    let labels = [0, 1, 2, 3, 4];
    save_tensors(&TensorSet::from_values(&inputs, Some(&labels)).unwrap(), &p.join("in.json")).unwrap();
    ok(imce(p, &["hw", "--an", "1", "--di", "1", "--out", "hw.json"]));
    std::fs::write(
        p.join("run.json"),
        r#"{"model":"m.json","hw_info":"hw.json","input":{"files":{"glob":"in.json"}}}"#,
    )
    .unwrap();
    let o = Command::new(IMCE)
        .current_dir(p)
        .env("IMCE_STATS_DIR", p.join("stats"))
        .args(["run", "--manifest", "run.json", "--out", "out", "--local", "--worker-bin", WORKER])
        .output()
        .unwrap();
    let summary = ok(o);
    assert!(summary.contains("accuracy"), "{summary}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("out/report.json")).unwrap()).unwrap();
    let correct = report["correct"].as_u64().unwrap();
    assert!(correct <= 5);
    let table = ok(imce(p, &["stats", "--dir", "stats"]));
    // one row per node: board, role, node, calls, ...
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[..4], ["0", "An", g.nodes[0].id.as_str(), "5"], "{table}");
}

#[test]
fn gen_digits_writes_labelled_inputs() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(imce(d.path(), &["gen", "digits", "--out", "m.json", "--inputs", "t.json", "--count", "20"]));
    assert!(out.contains("fp32 test accuracy"), "{out}");
    let g = load_model(&d.path().join("m.json")).unwrap();
    assert_eq!(g.outputs[0].name, "logits");
    let set = imce_core::model_ir::load_tensors(&d.path().join("t.json")).unwrap();
    assert_eq!(set.labels().unwrap().len(), 20);
}
