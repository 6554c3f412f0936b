use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pseudocal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pseudocal"))
        .args(args)
        .current_dir(cwd)
        .env("PSEUDOCAL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err.trim_end().to_string()
}

const SCENES: &str = r#"
train = 3
val = 0
test = 2

[scene]
n_boxes = 5
lidar_channels = 8
lidar_azimuth_step = 4.0
rng_seed = 11

[scene.camera]
f_u = 40.0
f_v = 40.0
c_u = 40.0
c_v = 12.0
width = 80
height = 24
"#;

const CASCADE: &str = r#"
[[stages]]
kind = "coarse_grid"
range = { roll_max = 30.0, pitch_max = 30.0, yaw_max = 180.0, trans_max = 150.0 }
yaw_step_deg = 6.0

[[stages]]
kind = "identity"
range = { roll_max = 10.0, pitch_max = 10.0, yaw_max = 10.0, trans_max = 100.0 }
"#;

fn dataset(dir: &Path) {
    fs::write(dir.join("scenes.toml"), SCENES).unwrap();
    let out = ok(&pseudocal(
        &["gen-scenes", "--config", "scenes.toml", "--out", "data"],
        dir,
    ));
    assert!(out.contains("wrote 5 frames"), "{out}");
}

#[test]
fn generate_decalibrate_estimate_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    for ext in ["bin", "png", "txt"] {
        assert!(dir.join(format!("data/f00004.{ext}")).exists());
    }

    let out = ok(&pseudocal(
        &[
            "decalibrate",
            "--manifest",
            "data/manifest.toml",
            "--range",
            "pseudo-pillars",
            "--seed",
            "3",
            "--split",
            "test",
        ],
        dir,
    ));
    assert!(out.contains("wrote 2 samples"), "{out}");
    let set = fs::read_to_string(dir.join("data/samples.toml")).unwrap();
    assert!(set.contains("manifest = \"manifest.toml\""), "{set}");

    fs::write(dir.join("cascade.toml"), CASCADE).unwrap();
    let out = ok(&pseudocal(
        &[
            "estimate",
            "--sample",
            "data/samples.toml",
            "--cascade",
            "cascade.toml",
            "--id",
            "f00003_00",
        ],
        dir,
    ));
    assert!(out.contains("sample f00003_00"));
    assert!(out.contains("stage 1 coarse_grid"));
    assert!(out.contains("stage 2 identity"));
    assert!(out.contains("estimate"));

    let eval = |report: &str| {
        ok(&pseudocal(
            &[
                "eval",
                "--manifest",
                "data/manifest.toml",
                "--cascade",
                "cascade.toml",
                "--report",
                report,
                "--seed",
                "9",
            ],
            dir,
        ))
    };
    let out = eval("a.toml");
    assert!(out.contains("final over 5 samples"), "{out}");
    eval("b.toml");
    let a = fs::read(dir.join("a.toml")).unwrap();
    assert_eq!(a, fs::read(dir.join("b.toml")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("fingerprint = "));
    assert!(text.contains("[[samples]]"));
}

#[test]
fn pillarize_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    fs::write(
        dir.join("grid.toml"),
        "x_min = -20.0\nx_max = 20.0\ny_min = -20.0\ny_max = 20.0\n",
    )
    .unwrap();
    let out = ok(&pseudocal(
        &[
            "pillarize",
            "--cloud",
            "data/f00000.bin",
            "--grid",
            "grid.toml",
            "--out",
            "p.bin",
        ],
        dir,
    ));
    assert!(out.contains("80x80 pillars"), "{out}");
    let out = ok(&pseudocal(
        &["inspect", "--pillars", "p.bin", "--pgm", "p.pgm", "--width", "40"],
        dir,
    ));
    let lines: Vec<_> = out.lines().collect();
    assert!(lines[0].starts_with("80x80 pillars, cell 0.5 m"));
    assert_eq!(lines[1].chars().count(), 40);
    assert!(lines.iter().any(|l| l.contains('@')));
    let pgm = fs::read(dir.join("p.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n80 80\n255\n"));
    assert_eq!(pgm.len(), b"P5\n80 80\n255\n".len() + 80 * 80);
}

#[test]
fn train_toy_writes_loadable_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    fs::write(
        dir.join("hyper.toml"),
        "samples = 6\n[hyper]\nepochs = 2\nhidden = 4\nlearning_rate = 1e-4\n",
    )
    .unwrap();
    let out = ok(&pseudocal(
        &[
            "train-toy",
            "--manifest",
            "data/manifest.toml",
            "--range",
            "unical-s",
            "--hyper",
            "hyper.toml",
            "--out",
            "w.bin",
        ],
        dir,
    ));
    assert!(out.contains("trained on 6 samples from 3 frames"), "{out}");
    assert!(out.contains("over 2 epochs"));
    let w = pseudocal::cascade::RegressorWeights::from_bytes(&fs::read(dir.join("w.bin")).unwrap()).unwrap();
    assert_eq!(w.hidden, 4);

    let cascade = "[[stages]]\nkind = \"toy_regressor\"\nweights = \"w.bin\"\nrange = { roll_max = 1.0, pitch_max = 1.0, yaw_max = 1.0, trans_max = 10.0 }\n";
    fs::write(dir.join("toy.toml"), cascade).unwrap();
    let out = ok(&pseudocal(
        &[
            "eval",
            "--manifest",
            "data/manifest.toml",
            "--cascade",
            "toy.toml",
            "--range",
            "unical-s",
        ],
        dir,
    ));
    assert!(out.contains("stage 1 toy_regressor"), "{out}");
}

#[test]
fn failures_print_one_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = pseudocal(&["inspect", "--pillars", "missing.bin"], dir);
    let line = error_line(&out);
    assert!(line.starts_with("error: IO: pillars: missing.bin"), "{line}");
    assert_eq!(out.status.code(), Some(1));

    fs::write(dir.join("junk.bin"), b"not a pillar image").unwrap();
    assert!(error_line(&pseudocal(&["inspect", "--pillars", "junk.bin"], dir)).starts_with("error: FORMAT:"));

    fs::write(dir.join("bad.bin"), [0u8; 17]).unwrap();
    let line = error_line(&pseudocal(&["pillarize", "--cloud", "bad.bin", "--out", "x.bin"], dir));
    assert!(line.starts_with("error: FORMAT:"), "{line}");

    fs::write(dir.join("broken.toml"), "train = [").unwrap();
    let line = error_line(&pseudocal(
        &["gen-scenes", "--config", "broken.toml", "--out", "d"],
        dir,
    ));
    assert!(line.starts_with("error: FORMAT:"), "{line}");

    let out = pseudocal(
        &["decalibrate", "--manifest", "m.toml", "--range", "1,2", "--seed", "0"],
        dir,
    );
    let line = error_line(&out);
    assert!(line.starts_with("error: USAGE:"), "{line}");
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_pseudocal"))
        .args(["inspect", "--pillars", "x"])
        .env("PSEUDOCAL_THREADS", "many")
        .current_dir(dir)
        .output()
        .unwrap();
    let line = error_line(&out);
    assert!(
        line.starts_with("error: CONFIG:") && line.contains("PSEUDOCAL_THREADS"),
        "{line}"
    );
}

#[test]
fn help_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&pseudocal(&["--help"], tmp.path()));
    for cmd in [
        "gen-scenes",
        "decalibrate",
        "pillarize",
        "estimate",
        "train-toy",
        "eval",
        "inspect",
    ] {
        assert!(out.contains(cmd), "{cmd} missing from help");
    }
}
