use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use metatrack::checkpoint::Checkpoint;
use metatrack::RunManifest;
use metatrack_core::maml::random_head;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn metatrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metatrack")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = metatrack(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

/// A small random-preset sequence in `dir/name`.
fn synth(dir: &Path, name: &str, extra: &str) {
    fs::write(dir.join(format!("{name}.toml")), format!("preset = \"random\"\nframes = 40\nsequence = \"{name}\"\n{extra}"))
        .unwrap();
    ok(dir, &["synth", "--config", &format!("{name}.toml"), "--out", name]);
}

#[test]
fn synth_writes_three_files_and_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "");
    for f in ["gt.txt", "det.txt", "features.txt", "manifest.json"] {
        assert!(d.join("a").join(f).is_file(), "{f} missing");
    }
    let m = RunManifest::read(&d.join("a/manifest.json")).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seed, Some(0));
    assert_eq!(m.config["frames"], 40);

    ok(d, &["synth", "--config", "a.toml", "--out", "b", "--seed", "7"]);
    assert_ne!(read(d, "a/gt.txt"), read(d, "b/gt.txt"));
    ok(d, &["synth", "--config", "a.toml", "--out", "c"]);
    assert_eq!(read(d, "a/gt.txt"), read(d, "c/gt.txt"));
    assert_eq!(read(d, "a/features.txt"), read(d, "c/features.txt"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = metatrack(d, &["synth", "--config", "nowhere.toml", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.toml"));

    fs::write(d.join("bad.toml"), "frams = 3\n").unwrap();
    assert_eq!(code(&metatrack(d, &["synth", "--config", "bad.toml", "--out", "x"])), 2);
    fs::write(d.join("bad.toml"), "miss_rate = 1.5\n").unwrap();
    assert_eq!(code(&metatrack(d, &["synth", "--config", "bad.toml", "--out", "x"])), 2);
    assert_eq!(code(&metatrack(d, &["train", "--data", "x", "--out", "c", "--mode", "second"])), 2);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "");
    ok(d, &["train", "--data", "a", "--out", "ckpt.txt"]);
    let log = read(d, "ckpt.txt.log.csv");
    assert_eq!(log.lines().count(), 61);
    let ckpt = Checkpoint::parse(&read(d, "ckpt.txt")).unwrap();
    assert_eq!(ckpt.maml.epochs, 60);
    assert_eq!((ckpt.head.classes(), ckpt.head.dim()), (10, 16));
    assert_eq!(ckpt.memory.len(), 10);

    ok(d, &["train", "--data", "a", "--out", "again.txt"]);
    assert_eq!(read(d, "ckpt.txt"), read(d, "again.txt"));

    ok(d, &["train", "--data", "a", "--out", "zero.txt", "--epochs", "0", "--seed", "3"]);
    let zero = Checkpoint::parse(&read(d, "zero.txt")).unwrap();
    let init = random_head(10, 16, zero.maml.init_scale, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(zero.head, init);
    assert_eq!(read(d, "zero.txt.log.csv").lines().count(), 1);

    ok(d, &["train", "--data", "a", "--out", "fo.txt", "--mode", "fomaml", "--epochs", "2", "--inner-lr", "0.1"]);
    let fo = Checkpoint::parse(&read(d, "fo.txt")).unwrap();
    assert_eq!(fo.maml.inner_lr, 0.1);
    assert_ne!(fo.head, ckpt.head);
}

#[test]
fn data_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "");
    // nobody has 41 + 1 samples in a 40-frame sequence
    let out = metatrack(d, &["train", "--data", "a", "--out", "c.txt", "--k", "41"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&metatrack(d, &["train", "--data", "missing", "--out", "c.txt"])), 3);
    fs::write(d.join("a/gt.txt"), "1,1,0,0,10,10,1,1,1\n2,1,0,0,oops,10,1,1,1\n").unwrap();
    let out = metatrack(d, &["train", "--data", "a", "--out", "c.txt"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn dimension_mismatch_exits_4() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "");
    synth(d, "small", "feature_dim = 8\nnum_identities = 3\n");
    ok(d, &["train", "--data", "a", "--out", "ckpt.txt", "--epochs", "1"]);
    let out = metatrack(
        d,
        &["track", "--det", "small/det.txt", "--features", "small/features.txt", "--checkpoint", "ckpt.txt", "--out", "r.txt"],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(d.join("broken.txt"), "metatrack-checkpoint 1\n").unwrap();
    let out = metatrack(
        d,
        &["track", "--det", "a/det.txt", "--features", "a/features.txt", "--checkpoint", "broken.txt", "--out", "r.txt"],
    );
    assert_eq!(code(&out), 4);
}

#[test]
fn noiseless_tracking_reproduces_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "motion_jitter = 0\nfeature_noise = 0\nmiss_rate = 0\nfalse_positive_rate = 0\nbbox_jitter = 0\n");
    ok(d, &["train", "--data", "a", "--out", "ckpt.txt", "--epochs", "2"]);
    ok(d, &["track", "--det", "a/det.txt", "--features", "a/features.txt", "--checkpoint", "ckpt.txt", "--out", "r.txt"]);
    let boxes = |text: &str| -> Vec<String> {
        let mut v: Vec<String> = text.lines().map(|l| l.split(',').take(6).skip(2).collect::<Vec<_>>().join(",")).collect();
        v.sort();
        v
    };
    assert_eq!(boxes(&read(d, "r.txt")), boxes(&read(d, "a/gt.txt")));
    let table = ok(d, &["eval", "--gt", "a/gt.txt", "--results", "r.txt", "--out", "report.txt"]);
    assert!(table.contains("1.000"));
    let report = read(d, "report.txt");
    assert!(report.contains("sequence=a mota=1 idf1=1 "), "{report}");
    assert!(report.contains(" idsw=0 "));
}

#[test]
fn eval_fixtures() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let row = |f: u32, id: u32, left: f64| format!("{f},{id},{left},0,10,10,1,1,1\n");
    let gt: String = [
        (1, 1, 0.0),
        (1, 2, 100.0),
        (1, 3, 200.0),
        (2, 1, 0.0),
        (2, 2, 100.0),
        (2, 3, 200.0),
        (2, 4, 300.0),
        (3, 1, 0.0),
        (3, 2, 100.0),
        (3, 3, 200.0),
    ]
    .iter()
    .map(|&(f, i, l)| row(f, i, l))
    .collect();
    let pred: String = [
        (1, 1, 0.0),
        (1, 2, 100.0),
        (1, 3, 200.0),
        (2, 1, 3.0),
        (2, 4, 0.0),
        (2, 2, 100.0),
        (3, 1, 0.0),
        (3, 5, 100.0),
        (3, 3, 200.0),
    ]
    .iter()
    .map(|&(f, i, l)| row(f, i, l))
    .collect();
    fs::write(d.join("gt.txt"), &gt).unwrap();
    fs::write(d.join("pred.txt"), &pred).unwrap();
    fs::write(d.join("empty.txt"), "").unwrap();
    let table = ok(d, &["eval", "--gt", "gt.txt", "--results", "pred.txt", "--out", "r.txt", "--name", "fixture"]);
    assert!(table.contains("0.600"));
    assert!(read(d, "r.txt")
        .contains("sequence=fixture mota=0.6 idf1=0.7368421052631579 idp=0.7777777777777778 idr=0.7 fp=1 fn=2 idsw=1 gt=10"));

    ok(d, &["eval", "--gt", "gt.txt", "--results", "empty.txt", "--out", "r2.txt", "--name", "x"]);
    assert!(read(d, "r2.txt").contains("sequence=x mota=0 idf1=0 idp=0 idr=0 fp=0 fn=10 idsw=0 gt=10"));

    ok(d, &["eval", "--gt", "gt.txt", "--results", "gt.txt", "--out", "r3.txt", "--iou-thr", "0.9"]);
    assert!(read(d, "r3.txt").contains("mota=1 idf1=1 "));

    fs::write(d.join("bad.txt"), "1,1,0,0,10\n").unwrap();
    let out = metatrack(d, &["eval", "--gt", "gt.txt", "--results", "bad.txt", "--out", "r4.txt"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    fs::write(d.join("dup.txt"), "1,1,0,0,10,10\n1,1,5,0,10,10\n").unwrap();
    assert_eq!(code(&metatrack(d, &["eval", "--gt", "gt.txt", "--results", "dup.txt", "--out", "r5.txt"])), 5);
    assert_eq!(code(&metatrack(d, &["eval", "--gt", "none.txt", "--results", "gt.txt", "--out", "r6.txt"])), 5);

    fs::write(d.join("late.txt"), "9,1,0,0,10,10\n").unwrap();
    let out = metatrack(d, &["eval", "--gt", "gt.txt", "--results", "late.txt", "--out", "r7.txt"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn thread_cap_is_validated() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("gt.txt"), "1,1,0,0,10,10,1,1,1\n").unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_metatrack"))
            .current_dir(d)
            .env("METATRACK_THREADS", v)
            .args(["eval", "--gt", "gt.txt", "--results", "gt.txt", "--out", "r.txt"])
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert_eq!(code(&run("zero")), 2);
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "a", "");
    ok(d, &["train", "--data", "a", "--out", "ckpt.txt", "--epochs", "3", "--seed", "5"]);
    ok(d, &["track", "--det", "a/det.txt", "--features", "a/features.txt", "--checkpoint", "ckpt.txt", "--out", "r.txt"]);
    ok(d, &["eval", "--gt", "a/gt.txt", "--results", "r.txt", "--out", "report.txt"]);
    let cases = [
        ("a/manifest.json", vec!["gt.txt", "det.txt", "features.txt"]),
        ("ckpt.txt.manifest.json", vec!["ckpt.txt", "ckpt.txt.log.csv"]),
        ("r.txt.manifest.json", vec!["r.txt"]),
        ("report.txt.manifest.json", vec!["report.txt"]),
    ];
    for (i, (manifest, files)) in cases.iter().enumerate() {
        let out_dir = format!("replay{i}");
        ok(d, &["replay", manifest, "--out-dir", &out_dir]);
        let origin = Path::new(manifest).parent().unwrap();
        for f in files {
            let name = Path::new(f).file_name().unwrap();
            assert_eq!(
                fs::read(d.join(origin).join(f)).unwrap(),
                fs::read(d.join(&out_dir).join(name)).unwrap(),
                "{manifest}: {f} differs"
            );
        }
    }
}
