use std::path::Path;
use std::process::Command;

use dafd::checkpoint::read_checkpoint;
use dafd::net::Network;
use serde_json::Value;

fn dafd(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dafd")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.ini");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "[data]\ntrain_per_class = 40\ntest_per_class = 10\n[train]\nepochs = 1\nbatch_size = 16\ntarget_fraction = 0.1\n";

#[test]
fn usage_errors_exit_1() {
    assert_eq!(dafd(&["--help"]).0, 0);
    assert_eq!(dafd(&["frobnicate"]).0, 1);
    assert_eq!(dafd(&["train", "--no-such-flag"]).0, 1);
    assert_eq!(dafd(&["train", "--arch", "A7"]).0, 1);
    assert_eq!(dafd(&["verify", "--check", "lemma9"]).0, 1);
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nepochs = 1\nlearning_rate = 0.1\n");
    let (code, _, err) = dafd(&["train", "-c", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");

    let cfg = write_config(dir.path(), "[train\nepochs = 1\n");
    assert_eq!(dafd(&["train", "-c", &cfg]).0, 1);
    let (code, _, err) = dafd(&["train", "-c", dir.path().join("missing.ini").to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}[model]\nprecision = f64\n"));
    let out = dir.path().join("run");
    let (code, stdout, err) = dafd(&["train", "-c", &cfg, "--arch", "A3", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("A3"));

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,step,loss,loss_s,loss_t,mmd,grad_norm_shared,grad_norm_source,grad_norm_target"
    );
    // 160 source samples in batches of 16.
    assert_eq!(lines.count(), 10);
    let epochs = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    let features = std::fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 1 + 2 * 40);

    let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(r["arch"], "A3");
    assert_eq!(r["precision"], "f64");
    assert_eq!(r["seed"], 2);
    assert_eq!(r["steps"], 10);
    assert_eq!(r["params"]["per_domain"][1], 108);
    assert!(r["version"].as_str().unwrap().contains('+'));
    let acc = r["target_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let net: Network<f64> = read_checkpoint(out.join("checkpoint.bin")).unwrap();
    assert_eq!(net.partition_counts().per_domain, vec![108, 108]);
    let echoed = std::fs::read_to_string(out.join("config.ini")).unwrap();
    assert!(echoed.contains("seed = 2") && echoed.contains("arch = A3"));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}lr = 1e30\n"));
    let (code, _, err) = dafd(&["train", "-c", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn failed_bounds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[verify]\ncheck = theorem1\nresolutions = 128\ndegrees = 10\ndepths = 1\nseeds = 1\ncontrol_threshold = 1e9\n",
    );
    let out = dir.path().join("v");
    let (code, _, err) = dafd(&["verify", "-c", &cfg, "--quiet", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let csv = std::fs::read_to_string(out.join("bound_reports.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("theorem1-control,") && l.contains(",false,")), "{csv}");
}

#[test]
fn cost_reads_layer_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("layers.txt");
    std::fs::write(&spec, "# c_in c_out l width\n64 128 3 56\n128 128 3 56 4\n").unwrap();
    let out = dir.path().join("c");
    let (code, stdout, err) = dafd(&["cost", "--spec", spec.to_str().unwrap(), "--k", "6", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("Parameters"));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("cost_report.json")).unwrap()).unwrap();
    assert_eq!(r["total"]["extra_params_dafd"], 6 * 9 + 4 * 9);

    std::fs::write(&spec, "64 128 3 56\n64 128 three 56\n").unwrap();
    let (code, _, err) = dafd(&["cost", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
}
