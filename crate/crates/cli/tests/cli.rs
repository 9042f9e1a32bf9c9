use std::path::Path;
use std::process::Command;

fn t2boot(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_t2boot"))
        .args(args)
        .output()
        .expect("spawn t2boot");
    assert!(
        out.status.success(),
        "t2boot {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_t2boot")).args(args).output().unwrap();
    assert!(!out.status.success(), "t2boot {args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

const TINY_NET: &str = r#"{"epochs": 2, "batch_size": 16, "hidden_layers": 2, "hidden_width": 16}"#;

#[test]
fn data_to_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    std::fs::write(d("train.json"), TINY_NET).unwrap();

    t2boot(&["gen-data", "--out", p(&d("data")), "--count", "40", "--seed", "5"]);
    t2boot(&["gen-data", "--out", p(&d("again")), "--count", "40", "--seed", "5"]);
    assert_eq!(read(&d("data.csv")), read(&d("again.csv")));

    let train_cfg = d("train.json");
    t2boot(&["train", "--data", p(&d("data")), "--out", p(&d("full.json")), "--config", p(&train_cfg)]);
    t2boot(&[
        "train", "--data", p(&d("data")), "--out", p(&d("m14.json")), "--m", "14", "--config", p(&train_cfg),
    ]);

    t2boot(&["infer", "--model", p(&d("full.json")), "--data", p(&d("data")), "--out", p(&d("a.csv")), "--threads", "1"]);
    t2boot(&["infer", "--model", p(&d("full.json")), "--data", p(&d("data")), "--out", p(&d("b.csv")), "--threads", "3"]);
    let a = read(&d("a.csv"));
    assert_eq!(a, read(&d("b.csv")));
    assert_eq!(a.lines().count(), 41);
    assert!(a.starts_with("voxel_id,w_0,"));

    t2boot(&["nnls", "--data", p(&d("data")), "--out", p(&d("nnls.csv"))]);
    t2boot(&["nnls", "--data", p(&d("data")), "--out", p(&d("nnls_auto.csv")), "--auto-lambda", "0.01,0.1,1"]);
    assert_eq!(read(&d("nnls.csv")).lines().count(), 41);

    t2boot(&["scalar-fit", "--data", p(&d("data")), "--out", p(&d("scalar.csv"))]);
    t2boot(&["scalar-fit", "--data", p(&d("data")), "--out", p(&d("sboot.csv")), "--bootstrap", "--b", "10", "--m", "14"]);
    assert!(read(&d("scalar.csv")).starts_with("sample_id,t2_ms,m0,r2,converged"));
    assert!(read(&d("sboot.csv")).starts_with("sample_id,t2_ms,m0,t2_member_std,converged"));

    let boot = |out: &str, seed: &str| {
        t2boot(&[
            "bootstrap-infer", "--model", p(&d("m14.json")), "--data", p(&d("data")), "--out", p(&d(out)), "--b", "20",
            "--seed", seed,
        ])
    };
    boot("boot1.csv", "9");
    boot("boot2.csv", "9");
    boot("boot3.csv", "10");
    assert_eq!(read(&d("boot1.csv")), read(&d("boot2.csv")));
    assert_ne!(read(&d("boot1.csv")), read(&d("boot3.csv")));
    assert_eq!(read(&d("boot1.spread.csv")).lines().count(), 41);

    let err = fails(&[
        "bootstrap-infer", "--model", p(&d("m14.json")), "--data", p(&d("data")), "--out", p(&d("x.csv")), "--m", "16",
    ]);
    assert!(err.contains("echoes"), "{err}");
}

#[test]
fn metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bio.csv");
    std::fs::write(
        &csv,
        "group,subject_id,roi,value\nA,s0,body,1\nA,s1,body,2\nA,s2,tail,3\nB,s3,body,4\nB,s4,tail,5\nB,s5,tail,6\n",
    )
    .unwrap();
    let out: serde_json::Value = serde_json::from_str(&t2boot(&["metrics", "--biomarkers", p(&csv)])).unwrap();
    assert_eq!(out["auc"], 1.0);
    assert_eq!(out["ks_d"], 1.0);
    assert_eq!(out["n_a"], 3);
    assert!((out["ks_p"].as_f64().unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn experiment_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    std::fs::create_dir(d("models")).unwrap();
    std::fs::write(
        d("exp.json"),
        r#"{"cohort": {"n_subjects": 4, "n_cases": 2, "voxels_per_roi": 4}, "bootstrap": {"b_iterations": 10}}"#,
    )
    .unwrap();
    let run = |out: &str, threads: &str| {
        t2boot(&[
            "experiment", "group-sep", "--models", p(&d("models")), "--out", p(&d(out)), "--methods",
            "nnls,scalar,scalar_bootstrap", "--config", p(&d("exp.json")), "--threads", threads,
        ])
    };
    let table = run("run1", "1");
    assert!(table.contains("scalar_bootstrap_t2"), "{table}");
    run("run2", "2");
    let manifest: serde_json::Value = serde_json::from_str(&read(&d("run1/manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["experiment"], "group_separation");
    for f in manifest["outputs"].as_array().unwrap() {
        let rel = f["path"].as_str().unwrap();
        assert_eq!(read(&d("run1").join(rel)), read(&d("run2").join(rel)), "{rel}");
    }

    t2boot(&["export", "--report", p(&d("run1")), "--out", p(&d("plots"))]);
    assert_eq!(read(&d("plots/biomarkers.csv")), read(&d("run1/plotdata/biomarkers.csv")));

    let err = fails(&[
        "experiment", "test-retest", "--models", p(&d("models")), "--out", p(&d("run3")), "--methods", "p2t2",
    ]);
    assert!(err.contains("p2t2"), "{err}");
}
