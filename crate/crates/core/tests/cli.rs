// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use infer_energy::tables::MeasurementTable;

const TRACE: &str = "input_tokens,output_tokens\n20,5\n100,30\n215,7\n929,41\n9000,3\n";

const MODEL: &str = "n_layers = 1\nd_model = 4\nn_heads = 1\nn_kv_heads = 1\nd_ff = 8\nvocab_size = 10\n";
const HW: &str = "name = toy\ntdp = 1\npeak_flops = 1e6\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infer-energy"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn binary")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("trace.csv"), TRACE).unwrap();
    std::fs::write(dir.path().join("model.cfg"), MODEL).unwrap();
    std::fs::write(dir.path().join("hw.cfg"), HW).unwrap();
    let o = run(
        dir.path(),
        &["synth-table", "--model", "model.cfg", "--hw", "hw.cfg", "--efficiency", "0.5", "--decode-penalty", "2", "--out", "table.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn single_bin_table(rows: &[(&str, f64)]) -> String {
    let mut s = String::from(
        "backend,device,input_cap,output_cap,max_batch,batch_energy,energy_unit,prefill_energy,decode_energy,samples_measured,warmup_batches\n",
    );
    for (backend, joules) in rows {
        s.push_str(&format!("{backend},A6000,32,8,1,{joules},J,,,1024,20\n"));
    }
    s
}

#[test]
fn binned_and_trace_estimates_agree() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["bin", "--trace", "trace.csv", "--out", "binned.csv"]).status.success());
    let common = ["--table", "table.csv", "--backend", "synthetic", "--device", "toy"];
    let from_trace = run(p, &[&["estimate", "--trace", "trace.csv"][..], &common].concat());
    let from_binned = run(p, &[&["estimate", "--binned", "binned.csv"][..], &common].concat());
    assert!(from_trace.status.success(), "{}", stderr(&from_trace));
    assert_eq!(stdout(&from_trace), stdout(&from_binned));
    let v: serde_json::Value = serde_json::from_str(&stdout(&from_trace)).unwrap();
    assert_eq!(v["excluded_requests"], 1);
}

#[test]
fn missing_bin_names_the_bin() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("sparse.csv"), single_bin_table(&[("vllm", 5.0)])).unwrap();
    let o = run(p, &["estimate", "--trace", "trace.csv", "--table", "sparse.csv", "--backend", "vllm", "--device", "A6000"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("(128, 32)"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn compare_reproduces_published_savings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("trace.csv"), "input_tokens,output_tokens\n32,8\n").unwrap();
    let baseline = 1000.0;
    for (dataset, pytorch, vllm, expected) in [
        ("BurstGPT", 506.52, 63.75, "73.00"),
        ("Azure Code", 102.79, 26.59, "37.58"),
        ("Azure Conversation", 490.23, 64.22, "72.18"),
    ] {
        let table = single_bin_table(&[
            ("pytorch", baseline * (1.0 + pytorch / 100.0)),
            ("vllm", baseline * (1.0 + vllm / 100.0)),
        ]);
        std::fs::write(p.join("t.csv"), table).unwrap();
        for backend in ["pytorch", "vllm"] {
            let out = format!("{backend}.json");
            let o = run(p, &["estimate", "--trace", "trace.csv", "--table", "t.csv", "--backend", backend, "--device", "A6000", "--out", &out]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let o = run(
            p,
            &["compare", "--estimates", "pytorch.json,vllm.json", "--baseline-j", "1000", "--reference", "pytorch", "--dataset", dataset],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let md = stdout(&o);
        let vllm_row = md.lines().find(|l| l.starts_with("| vllm")).unwrap();
        assert!(vllm_row.contains(expected), "{dataset}: {vllm_row}");
        assert!(vllm_row.contains(&format!("{vllm:.2}")), "{dataset}: {vllm_row}");
    }
}

#[test]
fn plan_sweep_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["plan-sweep", "--out", "plans"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("plans")).unwrap().collect();
    assert!(!files.is_empty());
    let listed = stdout(&run(dir.path(), &["plan-sweep"]));
    assert_eq!(listed.matches("# file: ").count(), files.len());
}

#[test]
fn validate_table_exit_codes() {
    let dir = setup();
    let p = dir.path();
    let full = run(p, &["validate-table", "--table", "table.csv"]);
    assert_eq!(full.status.code(), Some(0), "{}", stderr(&full));

    std::fs::write(p.join("sparse.csv"), single_bin_table(&[("vllm", 5.0)])).unwrap();
    let partial = run(p, &["validate-table", "--table", "sparse.csv"]);
    assert_eq!(partial.status.code(), Some(2));
    assert!(stderr(&partial).starts_with("error: coverage incomplete"));
}

#[test]
fn synth_table_loads() {
    let dir = setup();
    let table = MeasurementTable::load(&dir.path().join("table.csv")).unwrap();
    assert_eq!(table.len(), 56);
    assert_eq!(table.pairs(), vec![("synthetic".to_string(), "toy".to_string())]);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["estimate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(1));
    let v = run(dir.path(), &["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(stdout(&v).contains("schema_version 1"));
}

#[test]
fn bad_trace_rows_fail_unless_permissive() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("t.csv"), "input_tokens,output_tokens\n10,2\nx,3\n40,-1\n").unwrap();
    let strict = run(p, &["stats", "--trace", "t.csv"]);
    assert_eq!(strict.status.code(), Some(2));
    let loose = run(p, &["stats", "--trace", "t.csv", "--permissive"]);
    assert!(loose.status.success(), "{}", stderr(&loose));
    let v: serde_json::Value = serde_json::from_str(&stdout(&loose)).unwrap();
    assert_eq!(v["input"]["count"], 1);
}
