use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imb_core::Checkpoint;

fn imb_lab(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imb-lab"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_RUN: &str = r#"
[training]
hidden_widths = [3, 2]
epochs = 4
samples = 4
batch_size = 16
mi_eval_every = 2
betas = [0.001]
optimizer = { kind = "sgd", learning_rate = 1.0 }

[dataset]
kind = "synthetic"
n_bits = 5
labels = "ranked"
"#;

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, SMALL_RUN).unwrap();
    path
}

fn train_into(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let cfg = small_config(dir);
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", out];
    args.extend_from_slice(extra);
    ok(&imb_lab(dir, &args));
    dir.join(out)
}

#[test]
fn train_writes_artifacts_with_stable_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_into(tmp.path(), "a", &["--plots"]);
    for f in ["run.toml", "epochs.csv", "model.json", "info_plane.csv", "info_plane.svg", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let epochs = fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(
        epochs.lines().next().unwrap(),
        "epoch,stage,objective,nll,train_error,test_error,vcr_0,vcr_1,vcr_2,comp_1,comp_2"
    );
    assert_eq!(epochs.lines().count(), 1 + 5);
    let plane = fs::read_to_string(run.join("info_plane.csv")).unwrap();
    assert_eq!(plane.lines().next().unwrap(), "epoch,layer,i_zx_bits,i_zy_bits");
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts.len(), 3, "{ckpts:?}");
}

#[test]
fn same_seed_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train_into(tmp.path(), "a", &["--seed", "5"]);
    let b = train_into(tmp.path(), "b", &["--seed", "5"]);
    for f in ["epochs.csv", "info_plane.csv"] {
        assert!(fs::read_to_string(a.join(f)).unwrap() == fs::read_to_string(b.join(f)).unwrap(), "{f} differs");
    }
    // checkpoints embed the run record, which names the output directory
    let params = |d: &Path, f: &str| serde_json::to_string(&Checkpoint::load(d.join(f)).unwrap().params).unwrap();
    for f in ["model.json", "checkpoints/epoch_000002.json"] {
        assert!(params(&a, f) == params(&b, f), "{f} differs");
    }
    let c = train_into(tmp.path(), "c", &["--seed", "6"]);
    assert!(params(&a, "model.json") != params(&c, "model.json"));
}

#[test]
fn likelihood_weights_reproduce_mle() {
    let tmp = tempfile::tempdir().unwrap();
    let mle = train_into(tmp.path(), "mle", &["--algorithm", "mle"]);
    let joint = train_into(tmp.path(), "joint", &["--algorithm", "joint", "--gamma", "1,0,0"]);
    let load = |d: &Path| Checkpoint::load(d.join("model.json")).unwrap().params;
    assert_eq!(serde_json::to_string(&load(&mle)).unwrap(), serde_json::to_string(&load(&joint)).unwrap());
}

#[test]
fn info_plane_rebuilds_the_training_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_into(tmp.path(), "runs/r1", &[]);
    train_into(tmp.path(), "runs/r2", &["--seed", "1"]);
    ok(&imb_lab(tmp.path(), &["info-plane", run.to_str().unwrap(), "--out", "plane"]));
    assert_eq!(
        fs::read_to_string(tmp.path().join("plane/info_plane.csv")).unwrap(),
        fs::read_to_string(run.join("info_plane.csv")).unwrap()
    );
    ok(&imb_lab(tmp.path(), &["info-plane", "runs", "--out", "both"]));
    assert!(tmp.path().join("both/info_plane_mean.csv").is_file());
    assert!(tmp.path().join("both/r2/info_plane.csv").is_file());
}

#[test]
fn eval_of_deterministic_model_has_no_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_into(tmp.path(), "det", &["--algorithm", "mle", "--deterministic"]);
    let out = ok(&imb_lab(tmp.path(), &["eval", "--checkpoint", run.to_str().unwrap(), "--repeats", "4"]));
    assert!(out.contains("over 4 repeats"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["std_error"].as_f64().unwrap(), 0.0);
}

#[test]
fn attack_and_gen_data_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_into(tmp.path(), "m", &[]);
    ok(&imb_lab(
        tmp.path(),
        &["attack", "--checkpoint", run.to_str().unwrap(), "--subset", "5", "--steps", "3", "--radius", "0.5", "--out", "atk"],
    ));
    let csv = fs::read_to_string(tmp.path().join("atk/attack.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "image_index,mode,target,success,l2_norm");

    ok(&imb_lab(tmp.path(), &["gen-data", "--bits", "4", "--holdout", "0.25", "--out", "csv"]));
    let train = fs::read_to_string(tmp.path().join("csv/train.csv")).unwrap();
    assert_eq!(train.lines().filter(|l| !l.starts_with('x')).count(), 12);
    ok(&imb_lab(tmp.path(), &["gen-data", "--bits", "4", "--format", "idx", "--out", "idx"]));
    let d = imb_core::data::load_mnist_dir(tmp.path().join("idx"), true).unwrap();
    assert_eq!(d.dim(), 4);
}

#[test]
fn probe_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&imb_lab(tmp.path(), &["probe-conflict", "--instance", "independence", "--grid", "5", "--out", "p"]));
    assert!(out.contains("condition b"), "{out}");
    let out = ok(&imb_lab(tmp.path(), &["probe-conflict", "--instance", "sufficient-statistic", "--grid", "5", "--out", "q"]));
    assert!(out.contains("non-conflicting"), "{out}");
    assert!(tmp.path().join("q/probe.json").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let missing = imb_lab(
        tmp.path(),
        &["train", "--config", cfg.to_str().unwrap(), "--data", "nowhere.csv", "--out", "never"],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(!tmp.path().join("never").exists());

    fs::write(tmp.path().join("bad.toml"), "[training]\nhidden_widths = [2]\nepochs = 1\nbogus = 3\n").unwrap();
    let bad = imb_lab(tmp.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));

    let no_ckpt = imb_lab(tmp.path(), &["eval", "--checkpoint", "absent.json"]);
    assert_eq!(no_ckpt.status.code(), Some(2));

    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(imb_lab(tmp.path(), &["info-plane", "empty"]).status.code(), Some(2));

    fs::write(tmp.path().join("probe.toml"), "pxy = [[0.5, 0.1]]\nbogus = 1\n").unwrap();
    let probe = imb_lab(tmp.path(), &["probe-conflict", "--spec", "probe.toml"]);
    assert_eq!(probe.status.code(), Some(2));
}

#[test]
fn non_enumerable_network_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let run = r#"
[training]
hidden_widths = [20]
epochs = 1
samples = 2
batch_size = 8
mi_eval_every = 0

[dataset]
kind = "synthetic"
n_bits = 4
"#;
    fs::write(tmp.path().join("wide.toml"), run).unwrap();
    ok(&imb_lab(tmp.path(), &["train", "--config", "wide.toml", "--out", "wide"]));
    let out = imb_lab(tmp.path(), &["info-plane", "wide", "--out", "plane"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
