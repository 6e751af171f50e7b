use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model": {"n_layers": 2, "base_channels": 4, "channel_mults": [1, 1], "latent_channels": 2, "latent_grid": [4, 4]},
  "train": {"steps": 2, "batch_size": 2, "lr_factor_range": [1.0, 1.4]},
  "data": {"size": 16},
  "n_train": 4,
  "gamma": {"samples": 2},
  "eval": {"factors": [1.0, 2.0], "draws": 2, "n_test": 4},
  "classifier": {"steps": 3, "batch_size": 4}
}"#;

fn resinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resinv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = resinv(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    Fixture { _dir: dir, root, config }
}

fn trained(f: &Fixture) -> PathBuf {
    let out = f.root.join("train");
    ok(&["train", "--config", p(&f.config), "--out", p(&out), "--seed", "3"]);
    out
}

fn dir_listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_byte_reproducible() {
    let f = fixture();
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--config", p(&f.config), "--out", p(d), "--seed", "7"]);
    }
    let la = dir_listing(&a);
    assert_eq!(la, dir_listing(&b));
    assert_eq!(la.len(), 4 + 2, "images, labels.csv and config.json");
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    assert!(labels.starts_with("index,file,label"));
}

#[test]
fn estimate_gamma_starts_at_zero() {
    let f = fixture();
    let out = f.root.join("g");
    ok(&[
        "estimate-gamma", "--config", p(&f.config), "--out", p(&out),
        "--factors", "1,1.5,2,3,4,6", "--samples", "20",
    ]);
    let csv = std::fs::read_to_string(out.join("gamma.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "factor,gamma");
    assert_eq!(lines[1], "1,0");
    assert_eq!(lines.len(), 7);
    assert!(out.join("config.json").exists());
}

#[test]
fn train_then_superres_writes_outputs() {
    let f = fixture();
    let run = trained(&f);
    for name in ["model.rtf", "loss.csv", "gamma.csv", "config.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    let resolved = std::fs::read_to_string(run.join("config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 3"));

    let data = f.root.join("data");
    ok(&["gen-data", "--config", p(&f.config), "--out", p(&data), "--n", "1"]);
    let sr = f.root.join("sr");
    ok(&[
        "superres", "--config", p(&f.config), "--out", p(&sr),
        "--checkpoint", p(&run.join("model.rtf")), "--gamma", p(&run.join("gamma.csv")),
        "--input", p(&data.join("img_00000.pgm")),
        "--input-res", "4,4", "--target-res", "1,1", "--draws", "40",
    ]);
    for name in ["mean.pgm", "uncertainty.pgm", "stats.csv", "config.json"] {
        assert!(sr.join(name).exists(), "{name}");
    }
    let stats = std::fs::read_to_string(sr.join("stats.csv")).unwrap();
    let row: Vec<&str> = stats.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "40");
    assert_eq!(&row[4..], &["64", "64"]);
    assert!(std::fs::read(sr.join("mean.pgm")).unwrap().starts_with(b"P5\n64 64\n65535\n"));
}

#[test]
fn encode_decode_and_evaluations() {
    let f = fixture();
    let run = trained(&f);
    let ckpt = run.join("model.rtf");
    let data = f.root.join("data");
    ok(&["gen-data", "--config", p(&f.config), "--out", p(&data), "--n", "2"]);

    let enc = f.root.join("enc");
    ok(&[
        "encode", "--config", p(&f.config), "--out", p(&enc), "--checkpoint", p(&ckpt),
        "--input", p(&data.join("img_00000.pgm")), "--input-res", "1",
    ]);
    let dec = f.root.join("dec");
    ok(&[
        "decode", "--config", p(&f.config), "--out", p(&dec), "--checkpoint", p(&ckpt),
        "--latent", p(&enc.join("latent.rtf")), "--size", "24,20", "--target-res", "1.5,1.8",
    ]);
    assert!(std::fs::read(dec.join("decoded.pgm")).unwrap().starts_with(b"P5\n20 24\n"));

    let ev = f.root.join("ev");
    ok(&["eval-superres", "--config", p(&f.config), "--out", p(&ev), "--checkpoint", p(&ckpt)]);
    let csv = std::fs::read_to_string(ev.join("superres.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let cl = f.root.join("cl");
    ok(&["classify", "--config", p(&f.config), "--out", p(&cl), "--checkpoint", p(&ckpt), "--fixed-factor"]);
    let grid = std::fs::read_to_string(cl.join("classifier_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 7);

    let m = f.root.join("m");
    let img = p(&data.join("img_00000.pgm")).to_string();
    ok(&["metrics", "--out", p(&m), "--a", &img, "--b", &img]);
    let metrics = std::fs::read_to_string(m.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1).unwrap(), "inf,1");
}

#[test]
fn exit_codes() {
    let f = fixture();
    let unknown = resinv(&["gen-data", "--out", "x", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    for sub in [
        "train", "encode", "decode", "superres", "estimate-gamma", "eval-superres", "classify", "gen-data", "metrics",
    ] {
        let help = resinv(&[sub, "--help"]);
        assert_eq!(help.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&help.stdout).contains("Usage"), "{sub}");
    }

    // missing checkpoint is a config problem
    let out = f.root.join("o");
    let r = resinv(&["eval-superres", "--config", p(&f.config), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let bad = f.root.join("bad.json");
    std::fs::write(&bad, r#"{"nope": 1}"#).unwrap();
    let r = resinv(&["gen-data", "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let garbage = f.root.join("garbage.pgm");
    std::fs::write(&garbage, b"P6\n1 1\n255\n\0\0\0").unwrap();
    let r = resinv(&["metrics", "--out", p(&out), "--a", p(&garbage), "--b", p(&garbage)]);
    assert_eq!(r.status.code(), Some(2));

    // input finer than the reference spacing is outside the trained domain
    let run = trained(&f);
    let data = f.root.join("data");
    ok(&["gen-data", "--config", p(&f.config), "--out", p(&data), "--n", "1"]);
    let r = resinv(&[
        "superres", "--config", p(&f.config), "--out", p(&out),
        "--checkpoint", p(&run.join("model.rtf")), "--gamma", p(&run.join("gamma.csv")),
        "--input", p(&data.join("img_00000.pgm")), "--input-res", "0.5", "--target-res", "1",
    ]);
    assert_eq!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));
}
