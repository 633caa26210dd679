use std::path::Path;
use std::process::{Command, Output};

fn localpool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localpool"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scores(path: &Path, n: usize) {
    let mut text = String::from("t,y,z_1,lp_a,lp_b\n");
    for t in 0..n {
        let z = ((t * 37) % 101) as f64 / 25.0 - 2.0;
        text.push_str(&format!("{t},{z},{z},{},{}\n", -1.0 - 0.4 * z, -1.0 + 0.4 * z));
    }
    std::fs::write(path, text).unwrap();
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("valid json")
}

#[test]
fn evaluate_on_score_file_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_scores(&dir.path().join("s.csv"), 90);
    let out = localpool(
        dir.path(),
        &["evaluate", "--scores", "s.csv", "--warmup", "20", "--history", "20", "--out", "res", "--rho", "0.5,2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["steps.csv", "summary.json", "manifest.json"] {
        assert!(dir.path().join("res").join(f).exists(), "{f}");
    }
    let summary = json(&out.stdout);
    assert_eq!(summary["steps"], 50);
    assert_eq!(summary["first_time_index"], 40);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_scores(&dir.path().join("s.csv"), 60);
    std::fs::write(
        dir.path().join("run.toml"),
        "output_dir = \"from_file\"\n[input]\nscores = \"s.csv\"\n[evaluation]\nwarmup_size = 10\nhistory_size = 10\nschemes = [\"equal\"]\n",
    )
    .unwrap();
    let out = localpool(dir.path(), &["evaluate", "--config", "run.toml", "--warmup", "30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out.stdout);
    assert_eq!(summary["steps"], 20);
    assert_eq!(summary["totals"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("from_file/steps.csv").exists());
}

#[test]
fn simulated_evaluation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = localpool(
            dir.path(),
            &["evaluate", "--seed", "5", "--n", "120", "--warmup", "30", "--history", "30", "--out", out],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out).join("steps.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn simulate_writes_tidy_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = localpool(
        dir.path(),
        &["simulate", "--seed", "3", "--replications", "3", "--rho", "0.5,50", "--out", "sim"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tidy = std::fs::read_to_string(dir.path().join("sim/tidy.csv")).unwrap();
    assert!(tidy.starts_with("replication,scheme,rho,z,value\n"));
    let summary = json(&std::fs::read(dir.path().join("sim/summary.json")).unwrap());
    assert_eq!(summary["replications"], 3);
    assert_eq!(summary["points"].as_array().unwrap().len(), 2);
}

#[test]
fn gridsearch_lists_every_candidate() {
    let dir = tempfile::tempdir().unwrap();
    write_scores(&dir.path().join("s.csv"), 80);
    let out = localpool(
        dir.path(),
        &[
            "gridsearch", "--scores", "s.csv", "--warmup", "20", "--history", "20", "--out", "g", "--rho", "0.5,1,2",
            "--tau", "1,natural", "--schemes", "local_dm,local_opt",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("g/gridsearch.csv")).unwrap();
    // 3 rho x 2 tau for local_dm plus 3 rho for local_opt
    assert_eq!(grid.lines().count(), 1 + 6 + 3);
    assert_eq!(json(&out.stdout)["best"].as_array().unwrap().len(), 2);
}

#[test]
fn pool_once_reports_weights_and_mixture() {
    let dir = tempfile::tempdir().unwrap();
    write_scores(&dir.path().join("s.csv"), 100);
    std::fs::write(
        dir.path().join("d.json"),
        r#"[{"family":"gaussian","mean":0,"stddev":1},{"family":"gaussian","mean":1,"stddev":2}]"#,
    )
    .unwrap();
    let out = localpool(dir.path(), &["pool-once", "--scores", "s.csv", "--z=-1.5", "--rho", "0.5", "--densities", "d.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // expert a scores better at negative z
    assert!(w[0] > w[1]);
    assert_eq!(v["pooled_density"]["family"], "mixture");
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = localpool(dir.path(), &["simulate", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    std::fs::write(dir.path().join("bad.csv"), "t,y,z_1,lp_a\n0,1,0,oops\n").unwrap();
    let out = localpool(dir.path(), &["pool-once", "--scores", "bad.csv", "--z", "0"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.csv") && msg.contains("row 2"), "{msg}");

    std::fs::write(dir.path().join("sim.toml"), "mode = \"simulate\"\n").unwrap();
    let out = localpool(dir.path(), &["evaluate", "--config", "sim.toml", "--out", "o"]);
    assert!(!out.status.success());
}
