use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn strata(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strata"))
        .args(args)
        .env_remove("STRATA_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn phantom(dir: &Path, scene: &str) {
    let out = strata(&[
        "phantom",
        "--scene",
        scene,
        "--size",
        "32",
        "--bands",
        "64",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn missing_arguments_are_usage_errors() {
    assert_eq!(code(&strata(&[])), 2);
    assert_eq!(code(&strata(&["separate", "--cube", "x.hdr"])), 2);
    assert_eq!(
        code(&strata(&[
            "bin", "--cube", "x.hdr", "--out", "y.hdr", "--order", "sideways"
        ])),
        2
    );
}

#[test]
fn unreadable_input_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = strata(&[
        "pca",
        "--cube",
        p(&dir.path().join("absent.hdr")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let hdr = dir.path().join("bad.hdr");
    fs::write(&hdr, "not a header\n").unwrap();
    let out = strata(&["pca", "--cube", p(&hdr), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn impossible_binning_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    // 64 - 8 = 56 bands do not split into groups of 3
    let out = strata(&[
        "bin",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--bin",
        "3",
        "--out",
        p(&dir.path().join("b.hdr")),
    ]);
    assert_eq!(code(&out), 4);
    let out = strata(&[
        "bin",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--bin",
        "3",
        "--drop-tail",
        "--out",
        p(&dir.path().join("b.hdr")),
    ]);
    assert_eq!(code(&out), 0);
    let header = fs::read_to_string(dir.path().join("b.hdr")).unwrap();
    assert!(header.contains("bands = 18"), "{header}");
}

#[test]
fn phantom_writes_cube_white_masks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "concealed");
    for f in [
        "cube.hdr",
        "cube.raw",
        "white.hdr",
        "white.raw",
        "manifest.txt",
        "scan_00.pgm",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("mask.0 = mask_00_"));
    assert!(manifest.contains("# spec"));
}

#[test]
fn phantom_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.toml");
    fs::write(
        &spec,
        r#"
width = 16
height = 12
bands = 24
wavelength_range = [400.0, 1000.0]
seed = 1

[illumination]
kind = "uniform"

[[strokes]]
layer = "sketch"
material = "graphite"
shape = "line"
points = [[2.0, 2.0], [13.0, 9.0]]
width = 2.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = strata(&["phantom", "--spec", p(&spec), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let header = fs::read_to_string(out_dir.join("cube.hdr")).unwrap();
    assert!(
        header.contains("samples = 16") && header.contains("lines = 12") && header.contains("bands = 24"),
        "{header}"
    );

    fs::write(&spec, "width = 4\n").unwrap();
    assert_eq!(code(&strata(&["phantom", "--spec", p(&spec), "--out", p(&out_dir)])), 3);
}

#[test]
fn separate_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    let out_dir = dir.path().join("sep");
    let out = strata(&[
        "separate",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--white",
        p(&dir.path().join("white.hdr")),
        "--components",
        "3",
        "--k",
        "3",
        "--restarts",
        "2",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "normalized.hdr",
        "normalized.raw",
        "pca_model.txt",
        "scores_summary.txt",
        "pc_00.pgm",
        "pc_02.pgm",
        "labels.pgm",
        "labels.txt",
        "layer_00_mask.pgm",
        "layer_02_inverse.pgm",
        "manifest.txt",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(!out_dir.join("pc_03.pgm").exists());
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    for key in [
        "bands_input = 64",
        "bands_trimmed = 56",
        "bands_binned = 14",
        "pca_k = 3",
        "final_inertia",
        "cluster_sizes",
    ] {
        assert!(manifest.contains(key), "{key} missing from\n{manifest}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    let config = dir.path().join("run.conf");
    fs::write(&config, "k = 5\nbin = 2\n").unwrap();
    let out_dir = dir.path().join("sep");
    let out = strata(&[
        "separate",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--white",
        p(&dir.path().join("white.hdr")),
        "--config",
        p(&config),
        "--k",
        "2",
        "--restarts",
        "1",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("bands_binned = 28"), "{manifest}");
    assert!(out_dir.join("layer_01_mask.pgm").exists());
    assert!(!out_dir.join("layer_02_mask.pgm").exists());

    fs::write(&config, "clusters = 5\n").unwrap();
    let out = strata(&[
        "separate",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--white",
        p(&dir.path().join("white.hdr")),
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_reports_with_and_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    let base = [
        "compare",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--white",
        p(&dir.path().join("white.hdr")),
        "--components",
        "3",
        "--k",
        "3",
        "--restarts",
        "2",
    ]
    .map(String::from);

    let plain = dir.path().join("plain");
    let mut args = base.to_vec();
    args.extend(["--out".into(), p(&plain).into()]);
    let out = strata(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plain.join("kmeans/labels.pgm").exists() && plain.join("gmm/labels.pgm").exists());
    assert!(String::from_utf8_lossy(&out.stdout).is_empty());

    let scored = dir.path().join("scored");
    let mut args = base.to_vec();
    args.extend([
        "--truth".into(),
        p(dir.path()).into(),
        "--out".into(),
        p(&scored).into(),
    ]);
    let out = strata(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("kmeans: mean_iou = ") && stdout.contains("gmm: mean_iou = "),
        "{stdout}"
    );
    assert!(scored.join("kmeans/report.txt").exists() && scored.join("gmm/report.txt").exists());
    assert!(!plain.join("kmeans/report.txt").exists());
}

#[test]
fn evaluate_scores_a_label_map() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    let sep = dir.path().join("sep");
    let out = strata(&[
        "separate",
        "--cube",
        p(&dir.path().join("cube.hdr")),
        "--white",
        p(&dir.path().join("white.hdr")),
        "--k",
        "3",
        "--restarts",
        "2",
        "--out",
        p(&sep),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = strata(&[
        "evaluate",
        "--labels",
        p(&sep.join("labels.pgm")),
        "--truth",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["pixel_accuracy = ", "purity = ", "mean_iou = ", "cluster.0 = "] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }

    let report = dir.path().join("report.txt");
    let out = strata(&[
        "evaluate",
        "--labels",
        p(&sep.join("labels.pgm")),
        "--truth",
        p(dir.path()),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(report).unwrap(), text);

    let empty = tempfile::tempdir().unwrap();
    let out = strata(&[
        "evaluate",
        "--labels",
        p(&sep.join("labels.pgm")),
        "--truth",
        p(empty.path()),
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), "default");
    let run = |out_dir: &Path, threads: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_strata"));
        cmd.args([
            "separate",
            "--cube",
            p(&dir.path().join("cube.hdr")),
            "--white",
            p(&dir.path().join("white.hdr")),
            "--method",
            "gmm",
            "--k",
            "3",
            "--restarts",
            "2",
            "--out",
            p(out_dir),
        ]);
        match threads {
            Some(t) => cmd.env("STRATA_THREADS", t),
            None => cmd.env_remove("STRATA_THREADS"),
        };
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, Some("1"));
    run(&b, Some("3"));
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
}
