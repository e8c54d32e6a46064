use std::path::Path;
use std::process::{Command, Output};

fn overbook(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overbook"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = overbook(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

/// A small config file that trains in a second or two.
fn write_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    let json = r#"{
        "seed": 11,
        "epochs": 2,
        "sim": {"arrival_rate": 8.0, "horizon_days": 5, "slots_per_day": 8, "topology": [[2]]},
        "network": {"hidden": [16, 16]},
        "ppo": {"episodes_per_epoch": 1, "minibatch_size": 64},
        "coevolution": {"period": 1, "kl_sample_size": 128}
    }"#;
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn smoke_run_with_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let start = std::time::Instant::now();
    ok(&[
        "train",
        "--out",
        out,
        "--epochs",
        "3",
        "--episodes",
        "1",
        "--lambda",
        "10",
    ]);
    assert!(start.elapsed().as_secs() < 60);
    let curves = rows(&dir.path().join("curves.csv"));
    assert_eq!(curves.len(), 3 * 10);
    assert!(dir.path().join("checkpoint.json").exists());
    assert!(dir.path().join("coevolution.csv").exists());
}

#[test]
fn full_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    ok(&["train", "--config", &config, "--out", out_s]);
    assert_eq!(rows(&out.join("coevolution.csv")).len(), 2 * 10);

    let stdout = ok(&[
        "eval",
        "--config",
        &config,
        "--out",
        out_s,
        "--episodes",
        "2",
        "--event-log",
        "0",
    ]);
    assert!(stdout.contains("MPPPO 10"));
    let results = rows(&out.join("results.csv"));
    assert_eq!(results.len(), 16);
    let d_col = header(&out.join("results.csv"))
        .iter()
        .position(|h| h == "d_mean")
        .unwrap();
    let sb = results.iter().find(|r| &r[0] == "SB").unwrap();
    assert_eq!(&sb[d_col], "");
    let members: Vec<&str> = results[..10].iter().map(|r| r.get(0).unwrap()).collect();
    for p in rows(&out.join("pareto.csv")) {
        assert!(members.contains(&&p[0]));
    }
    assert!(out.join("events.csv").exists());

    ok(&[
        "sensitivity",
        "--config",
        &config,
        "--out",
        out_s,
        "--episodes",
        "1",
    ]);
    let sens = rows(&out.join("sensitivity.csv"));
    assert_eq!(sens.len(), 10 * 5);
    assert!(sens.iter().any(|r| &r[1] == "0.0" && &r[3] == "0.0"));

    ok(&[
        "explain",
        "--config",
        &config,
        "--out",
        out_s,
        "--member",
        "3",
        "--samples",
        "3",
        "--background",
        "8",
    ]);
    for a in 0..2 {
        let path = out.join(format!("attribution_action{a}.csv"));
        assert_eq!(rows(&path).len(), 10);
    }
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"epochs": 1, "typo": 3}"#).unwrap();
    let res = overbook(&["train", "--config", bad.to_str().unwrap(), "--out", out_s]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("typo"));

    ok(&[
        "train", "--config", &config, "--out", out_s, "--epochs", "1",
    ]);
    let res = overbook(&[
        "explain", "--config", &config, "--out", out_s, "--member", "10",
    ]);
    assert!(!res.status.success());
    let res = overbook(&[
        "explain", "--config", &config, "--out", out_s, "--member", "0", "--action", "2",
    ]);
    assert!(!res.status.success());

    // a config that trains differently must be refused
    let other = dir.path().join("other.json");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("\"seed\": 11", "\"seed\": 12");
    std::fs::write(&other, text).unwrap();
    let res = overbook(&["eval", "--config", other.to_str().unwrap(), "--out", out_s]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("fingerprint"));
}

#[test]
fn serial_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out_s = out.to_str().unwrap();
        ok(&[
            "train",
            "--config",
            &config,
            "--out",
            out_s,
            "--threads",
            "1",
        ]);
        ok(&[
            "eval",
            "--config",
            &config,
            "--out",
            out_s,
            "--episodes",
            "1",
        ]);
        outputs.push(
            [
                "curves.csv",
                "coevolution.csv",
                "checkpoint.json",
                "results.csv",
            ]
            .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}
