use std::fs;
use std::process::Command;

fn steap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steap"))
}

#[test]
fn default_config_parses_back() {
    let out = steap().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    steap::bench::BenchConfig::from_toml(&text).unwrap();
}

#[test]
fn run_writes_record_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("run.json");
    let plot = dir.path().join("run.svg");
    let out = steap()
        .args(["run", "--mode", "steap", "--seed", "2", "--n-dyn", "0.1", "--n-cam", "0.05"])
        .arg("--record")
        .arg(&record)
        .arg("--plot")
        .arg(&plot)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mode: STEAP"));
    assert!(stdout.contains("est_err_trans:"));
    let rec = steap::runtime::RunRecord::from_json(&fs::read_to_string(&record).unwrap()).unwrap();
    assert_eq!(rec.sim.seed, 2);

    let replot = dir.path().join("step.svg");
    let out = steap().arg("plot").arg(&record).arg("--out").arg(&replot).args(["--step", "3"]).output().unwrap();
    assert!(out.status.success());
    roxmltree::Document::parse(&fs::read_to_string(&replot).unwrap()).unwrap();
    roxmltree::Document::parse(&fs::read_to_string(&plot).unwrap()).unwrap();
}

#[test]
fn bench_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(
        &cfg,
        "[world]\nobstacle_count = 4\n\n[sweep]\nmodes = [\"OL\", \"STEAP\"]\nn_dyn = [0.1]\nn_cam = [0.05]\nseeds = 1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = steap()
        .arg("bench")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--jobs", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = steap().args(["run", "--mode", "fast"]).output().unwrap();
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[sweep]\nunknown_key = 1\n").unwrap();
    let out = steap().arg("bench").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
