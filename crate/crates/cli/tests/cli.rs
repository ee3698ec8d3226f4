use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use privfed_cli::{commands, ExperimentConfig};
use privfed_core::data::read_csv;
use privfed_core::eval::{read_json, CentralReport, RunReport};

const BIN: &str = env!("CARGO_BIN_EXE_privfed");

fn privfed(args: &[&str]) -> Command {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env("PRIVFED_TOKEN", "cli-test");
    cmd
}

fn run(args: &[&str]) -> Output {
    privfed(args).output().unwrap()
}

fn config(sets: &[&str]) -> ExperimentConfig {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::parse("{}", "test", &sets).unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn zero_round_run_writes_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--set", "rounds=0", "--set", "learner=lr", "--out", out, "run-sim"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: RunReport = read_json(&dir.path().join("report.json")).unwrap();
    assert!(report.rounds.is_empty());
    assert!(report.aborted.is_none());
    assert_eq!(report.cross_site.unwrap().rows.len(), 4);
}

#[test]
fn report_merges_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for (name, privacy) in [
        ("plain", r#"{"mode":"plain"}"#),
        ("dp", r#"{"mode":"dp","fraction":0.9,"epsilon":1,"noise_var":2,"gamma":0.01,"tau":0.0001}"#),
        ("he", r#"{"mode":"he","key_seed":3}"#),
    ] {
        for learner in ["lr", "nn"] {
            let cfg = config(&["rounds=1", "local_epochs=1", &format!("learner={learner}"), &format!("privacy={privacy}")]);
            let out = dir.path().join(format!("{name}-{learner}"));
            commands::run_sim(&cfg, &out).unwrap();
            inputs.push(out);
        }
    }
    let rows = commands::report(&inputs, &dir.path().join("merged")).unwrap();
    assert_eq!(rows.len(), 6);
    for learner in ["LR", "NN"] {
        let mut methods: Vec<&str> = rows.iter().filter(|r| r.learner == learner).map(|r| r.method.as_str()).collect();
        methods.sort_unstable();
        methods.dedup();
        assert_eq!(methods.len(), 3, "{learner}: {methods:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join("merged/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn central_run_reports_ten_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["learner=lr", "data.generate.scale_factor=0.05", "central.epochs=2", "batch_size=256", "site_batch_size={}"]);
    let report = commands::run_central(&cfg, dir.path()).unwrap();
    assert_eq!(report.folds.len(), 10);
    assert_eq!(report.method, "cML");
    let saved: CentralReport = read_json(&dir.path().join("central.json")).unwrap();
    assert_eq!(saved.folds.len(), 10);
    assert!(report.summary.auc.mean > 0.5);
}

#[test]
fn invalid_config_exits_2_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"rounds\": 5,\n  \"train_frac\": 1.5\n}\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "run-sim"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:3"), "{err}");

    std::fs::write(&path, "{\n  \"rounds\": 5,\n  \"roundz\": 5\n}\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "run-sim"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json:3"));

    let o = run(&["--set", "rounds=-1", "run-sim"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn networked_run_without_a_token_fails() {
    let o = Command::new(BIN).args(["server", "--listen", "127.0.0.1:0"]).env_remove("PRIVFED_TOKEN").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PRIVFED_TOKEN"));
}

fn spawn(args: &[&str], cfg: &Path, out: &Path) -> Child {
    privfed(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

#[test]
fn losing_a_client_aborts_with_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let cfg_path = dir.path().join("experiment.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{"learner": "lr", "rounds": 100000, "local_epochs": 1,
                "network": {{"listen": "{addr}", "connect": "{addr}", "round_timeout_secs": 30}}}}"#
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let mut server = spawn(&["server"], &cfg_path, &out);
    let mut clients: Vec<Child> = ["Ostergotland", "Sodermanland", "Stockholm", "Uppsala"]
        .iter()
        .map(|site| spawn(&["client", "--site", site], &cfg_path, &dir.path().join("unused")))
        .collect();
    let mut stderr = BufReader::new(server.stderr.take().unwrap());
    let mut line = String::new();
    loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "server exited before all sites joined");
        if line.contains("sites joined") {
            break;
        }
    }
    std::thread::sleep(Duration::from_millis(500));
    clients[2].kill().unwrap();
    let status = server.wait().unwrap();
    for mut c in clients {
        let _ = c.kill();
        let _ = c.wait();
    }
    assert_eq!(status.code(), Some(1));
    let report: RunReport = read_json(&out.join("report.json")).unwrap();
    assert!(report.aborted.is_some());
    assert!(report.rounds.len() < 100000);
}

#[test]
fn generated_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["data.generate.scale_factor=0.01"]);
    let paths = commands::generate_data(&cfg, dir.path()).unwrap();
    let sites = commands::load_sites(&cfg).unwrap();
    assert_eq!(paths.len(), sites.len());
    for (path, (name, ds)) in paths.iter().zip(&sites) {
        assert!(path.ends_with(format!("{name}.csv")));
        assert_eq!(&read_csv(path).unwrap(), ds);
    }

    // A CSV-backed config trains on exactly the generated data.
    let csv_sites: Vec<String> = sites
        .iter()
        .map(|(name, _)| format!(r#"{{"name":"{name}","path":"{}"}}"#, dir.path().join(format!("{name}.csv")).display()))
        .collect();
    let from_csv = config(&[
        &format!(r#"data={{"csv":[{}]}}"#, csv_sites.join(",")),
        "rounds=2",
        "learner=lr",
    ]);
    let generated = config(&["data.generate.scale_factor=0.01", "rounds=2", "learner=lr"]);
    let a = commands::run_sim(&from_csv, &dir.path().join("a")).unwrap();
    let b = commands::run_sim(&generated, &dir.path().join("b")).unwrap();
    assert_eq!(a.final_params, b.final_params);
}

#[test]
fn default_generator_is_calibrated() {
    let cfg = config(&["batch_size=64", "site_batch_size={}", "central.epochs=400", "data.generate.scale_factor=0.05"]);
    let rows = commands::calibrate(&cfg, &[1.0]).unwrap();
    let auc = rows[0].1;
    assert!((0.63..=0.72).contains(&auc), "pooled LR AUC {auc}");
}
