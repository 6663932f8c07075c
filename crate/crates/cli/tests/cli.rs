use std::path::Path;
use std::process::{Command, Output};

fn write_idx(dir: &Path, stem: &str, count: usize, seed: u32) {
    let mut images = vec![0, 0, 8, 3];
    for d in [count as u32, 28, 28] {
        images.extend_from_slice(&d.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(count as u32).to_be_bytes());
    let mut state = seed;
    for i in 0..count {
        let digit = (i % 10) as u8;
        labels.push(digit);
        for p in 0..28 * 28 {
            state = state.wrapping_mul(1_103_515_245).wrapping_add(12_345);
            let (y, x) = (p / 28, p % 28);
            // a bar whose position depends on the digit, plus a little noise
            let on = (8 + digit as usize..11 + digit as usize).contains(&x) && (6..22).contains(&y);
            images.push(if on { 230 } else { (state >> 28) as u8 });
        }
    }
    std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), images).unwrap();
    std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), labels).unwrap();
}

fn mnist_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path(), "train", 60, 1);
    write_idx(dir.path(), "t10k", 20, 2);
    dir
}

fn snn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snn"))
        .args(args)
        .env_remove("SNN_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--channels", "4-4", "--window", "4", "--batch-size", "10"];

#[test]
fn train_then_eval_reproduces_best_accuracy() {
    let data = mnist_dir();
    let out = tempfile::tempdir().unwrap();
    let (d, o) = (data.path().to_str().unwrap(), out.path().to_str().unwrap());
    let mut args = vec!["train", "--seq", "0", "--epochs", "3", "--pretrain-epochs", "1", "--data-dir", d, "--out-dir", o];
    args.extend_from_slice(SMALL);
    let run = snn(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    for f in ["config.txt", "metrics.csv", "confusion.csv", "firing_rates.csv", "best.snnw"] {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let best: f64 = stdout(&run)
        .lines()
        .find_map(|l| l.strip_prefix("best test accuracy "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    let config = out.path().join("config.txt");
    let ckpt = out.path().join("best.snnw");
    let eval = snn(&["eval", "--config", config.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let top1: f64 = stdout(&eval).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((top1 - best).abs() <= 1e-6, "{top1} vs {best}");
}

#[test]
fn snapshot_reproduces_the_run() {
    let data = mnist_dir();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let d = data.path().to_str().unwrap();
    let mut args = vec!["train", "--seq", "3", "--epochs", "2", "--pretrain-epochs", "1", "--precision", "f64", "--data-dir", d, "--out-dir"];
    args.push(a.path().to_str().unwrap());
    args.extend_from_slice(SMALL);
    assert!(snn(&args).status.success());
    let config = a.path().join("config.txt");
    let rerun = snn(&["train", "--config", config.to_str().unwrap(), "--out-dir", b.path().to_str().unwrap()]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    let read = |p: &Path| std::fs::read_to_string(p.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        std::fs::read(a.path().join("best.snnw")).unwrap(),
        std::fs::read(b.path().join("best.snnw")).unwrap()
    );
}

#[test]
fn gen_data_is_deterministic() {
    let data = mnist_dir();
    let out = tempfile::tempdir().unwrap();
    let run = || {
        let o = snn(&[
            "gen-data",
            "--seq",
            "5",
            "--seed",
            "3",
            "--data-dir",
            data.path().to_str().unwrap(),
            "--out-dir",
            out.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let first = run();
    assert!(first.contains("120 samples, 20 classes"), "{first}");
    assert_eq!(first, run());
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let o = snn(&["train", "--seq", "9", "--lr", "fast", "--arch", "resnet"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for needle in ["seq", "lr", "arch"] {
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "window = 4\nlearning_rate = 0.1\n").unwrap();
    let o = snn(&["count-ops", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn checkpoint_shape_mismatch_names_both_shapes() {
    let data = mnist_dir();
    let out = tempfile::tempdir().unwrap();
    let (d, o) = (data.path().to_str().unwrap(), out.path().to_str().unwrap());
    let mut args = vec!["train", "--seq", "0", "--epochs", "1", "--pretrain-epochs", "0", "--data-dir", d, "--out-dir", o];
    args.extend_from_slice(SMALL);
    assert!(snn(&args).status.success());
    let ckpt = out.path().join("best.snnw");
    let e = snn(&["eval", "--seq", "0", "--channels", "8-8", "--data-dir", d, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!e.status.success());
    let err = stderr(&e);
    assert!(err.contains("[4, 1, 3, 3]") && err.contains("[8, 1, 3, 3]"), "{err}");
}

#[test]
fn count_ops_reports_totals() {
    let o = snn(&["count-ops", "--channels", "48-48"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("layer,macs,rate,accs"));
    assert!(text.contains("total_per_window,44264640"), "{text}");
}

#[test]
fn dump_features_writes_one_file_per_step() {
    let data = mnist_dir();
    let out = tempfile::tempdir().unwrap();
    let o = snn(&[
        "dump-features",
        "--seq",
        "2",
        "--window",
        "4",
        "--channels",
        "4-4",
        "--layer",
        "1",
        "--format",
        "csv",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = std::fs::read_dir(out.path().join("features")).unwrap().count();
    assert_eq!(files, 4);
}
