use std::path::Path;
use std::process::{Command, Output};

fn refgame(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refgame"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CIFAR10_DIR")
        .output()
        .expect("spawn refgame")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = "epochs: 1\nchannels: [4, 8]\nembed_dim: 8\nhidden_dim: 8\nvocab_size: 6\nbatch_size: 16\neval_runs: 1\n\
pretrain_epochs: 1\npretrain_batch_size: 32\npretrain_projection_hidden: 8\npretrain_projection_dim: 4\n";

#[test]
fn baselines_for_any_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&refgame(&["baselines", "--batch-size", "32", "--classes", "10", "--games", "2000"], tmp.path()));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["expected_same_class"].as_f64().unwrap() - 4.1).abs() < 1e-12);
    assert_eq!(v["hashing_games"], 2000);
}

#[test]
fn train_eval_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.txt"), TINY).unwrap();
    for (run, variant) in [("a", "baseline"), ("b", "sender_rotation")] {
        std::fs::write(d.join(format!("{run}.txt")), format!("{TINY}variant: {variant}\n")).unwrap();
        ok(&refgame(&["train", "--synthetic", "--config", &format!("{run}.txt"), "--out-dir", run], d));
        assert!(d.join(run).join("metrics.csv").exists());
        assert!(d.join(run).join("model.ckpt").exists());
    }
    let report = ok(&refgame(&["eval", "--synthetic", "--out-dir", "a"], d));
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 1);
    assert!(d.join("a/eval.json").exists());

    let files = ok(&refgame(&["plot-data", "a", "b/metrics.csv", "--out-dir", "plots"], d));
    assert_eq!(files.lines().count(), 4);
    let loss = std::fs::read_to_string(d.join("plots/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,value,run_id"));
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.contains("baseline-learned-seed0") && loss.contains("sender_rotation-learned-seed0"));
}

#[test]
fn pretrain_then_train_from_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = format!("{TINY}variant: sender_predicts_rotation\nregime: ss_pretrained_frozen\n");
    std::fs::write(d.join("ss.txt"), cfg).unwrap();
    ok(&refgame(&["pretrain", "--synthetic", "--config", "ss.txt", "--out-dir", "pre"], d));
    let ck = d.join("pre/pretrained_extractor.ckpt");
    assert!(ck.exists());
    ok(&refgame(
        &["train", "--synthetic", "--config", "ss.txt", "--out-dir", "run", "--weights", ck.to_str().unwrap()],
        d,
    ));
    // The pretrain subcommand refuses regimes without weights.
    let out = refgame(&["pretrain", "--synthetic", "--config", "tiny.txt"], d);
    assert!(!out.status.success());
}

#[test]
fn bad_inputs_fail_with_useful_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.txt"), "batch_size: 1\n").unwrap();
    let out = refgame(&["train", "--synthetic", "--config", "bad.txt"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    std::fs::write(d.join("typo.txt"), "epochz: 3\n").unwrap();
    let out = refgame(&["train", "--synthetic", "--config", "typo.txt"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let out = refgame(&["train"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("CIFAR10_DIR"));

    let out = refgame(&["train", "--data-dir", d.to_str().unwrap()], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no CIFAR-10"));
}

#[test]
fn profile_flag_selects_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("x.txt"), "profile: paper\nepochs: 1\nchannels: [4, 8]\nbatch_size: 16\neval_runs: 1\n").unwrap();
    ok(&refgame(&["train", "--synthetic", "--profile", "desk", "--config", "x.txt", "--out-dir", "o"], d));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("o/metrics.json")).unwrap()).unwrap();
    assert_eq!(s["config"]["channel"]["vocab_size"], 20);
}
