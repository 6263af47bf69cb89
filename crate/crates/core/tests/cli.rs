use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canopy::eval::ScenarioReport;
use canopy::ingest::read_manifest;
use canopy::io::{read_labels, write_labels};
use canopy::models::Checkpoint;
use canopy::pipeline::{evaluate_manifest, EvalOptions, Predictor};
use canopy::train::TrainHistory;

fn canopy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = canopy(args);
    assert!(
        out.status.success(),
        "canopy {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, tiles: usize, px: usize, periods: &str, deforestation: &str) -> PathBuf {
    let root = dir.join("data");
    ok(&[
        "synth",
        "--out",
        p(&root),
        "--tiles",
        &tiles.to_string(),
        "--tile-px",
        &px.to_string(),
        "--periods",
        periods,
        "--deforestation",
        deforestation,
        "--seed",
        "3",
    ]);
    root
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ingest_skips_incomplete_tiles_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 4, 32, "2019,2020", "0.02");
    fs::remove_file(root.join("2020/fnf/tile_00002.tif")).unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    let stdout = ok(&["ingest", "--root", p(&root), "--out", p(&a), "--split"]);
    assert!(stdout.contains("skip\t"), "{stdout}");
    ok(&["ingest", "--root", p(&root), "--out", p(&b), "--split"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let m = read_manifest(&a).unwrap();
    assert_eq!(m.entries.len(), 7);
    assert!(m.entry("tile_00002", "2020").is_none());
    assert!(m.entries.iter().all(|e| e.split.is_some()));
}

#[test]
fn ingest_of_empty_root_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = canopy(&["ingest", "--root", p(dir.path()), "--out", p(&dir.path().join("m.tsv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = synth(a.path(), 3, 32, "2019,2020", "0.05");
    let rb = synth(b.path(), 3, 32, "2019,2020", "0.05");
    let (ta, tb) = (tree_bytes(&ra), tree_bytes(&rb));
    // 3 tiles × 2 periods × 4 sources
    assert_eq!(ta.len(), 24);
    assert_eq!(ta, tb);
}

#[test]
fn usage_and_input_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let run = dir.path().join("run");
    let out = canopy(&["train", "--manifest", p(&missing), "--run-dir", p(&run)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let root = synth(dir.path(), 2, 32, "2019", "0");
    let out = canopy(&["train", "--manifest", p(&root), "--run-dir", p(&run), "--lr", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = canopy(&["train", "--manifest", p(&root), "--run-dir", p(&run), "--arch", "vgg"]);
    assert_eq!(out.status.code(), Some(2));
    // nothing was written for rejected runs
    assert!(!run.join("last.ckpt").exists());

    let out = canopy(&["eval", "--manifest", p(&root)]);
    assert_eq!(out.status.code(), Some(2), "no model source is a usage error");
}

#[test]
fn train_resume_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 10, 32, "2019,2020", "0.05");
    let manifest = dir.path().join("m.tsv");
    ok(&["ingest", "--root", p(&root), "--out", p(&manifest), "--split"]);
    let run = dir.path().join("run");
    let common = [
        "train",
        "--manifest",
        p(&manifest),
        "--run-dir",
        p(&run),
        "--scenario",
        "s1",
        "--base-width",
        "4",
        "--depth",
        "2",
        "--batch-size",
        "4",
        "--lr",
        "0.001",
    ];
    let mut first = common.to_vec();
    first.extend(["--epochs", "2"]);
    let stdout = ok(&first);
    assert!(stdout.contains("best epoch"), "{stdout}");
    for f in ["config.toml", "manifest.tsv", "stats.tsv", "history.tsv", "last.ckpt", "best.ckpt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let mut more = common.to_vec();
    more.extend(["--epochs", "3", "--resume"]);
    ok(&more);
    let history = TrainHistory::from_tsv(&fs::read_to_string(run.join("history.tsv")).unwrap()).unwrap();
    assert_eq!(history.records.len(), 3);
    assert_eq!(
        history.records.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );

    let best = run.join("best.ckpt");
    let reports = dir.path().join("reports");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        p(&best),
        "--manifest",
        p(&manifest),
        "--period",
        "2019",
        "--period",
        "2020",
        "--out",
        p(&reports),
    ]);
    let cli = ScenarioReport::from_tsv(&stdout).unwrap();
    assert_eq!(cli.rows().len(), 2);
    assert!(reports.join("metrics_unet_S1_2019.tsv").is_file());
    assert!(reports.join("metrics_unet_S1_2020.tsv").is_file());

    let predictor = Predictor::from_checkpoint(Checkpoint::load(&best).unwrap()).unwrap();
    let lib = evaluate_manifest(&predictor, &read_manifest(&manifest).unwrap(), &EvalOptions::default()).unwrap();
    assert_eq!(lib.len(), 2);
    for (c, l) in cli.rows().iter().zip(&lib) {
        assert_eq!(c.period, l.period);
        // stdout rounds to four decimals
        for i in 0..5 {
            match (c.metric(i), l.metric(i)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 5e-5, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 4, 32, "2019", "0");
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "epochs = 1\nbase_width = 4\ndepth = 2\nbatch_size = 4\n").unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--manifest",
        p(&root),
        "--run-dir",
        p(&run),
        "--epochs",
        "4",
        "--arch",
        "fcn32_vgg16",
    ]);
    let history = TrainHistory::from_tsv(&fs::read_to_string(run.join("history.tsv")).unwrap()).unwrap();
    assert_eq!(history.records.len(), 1);
    // flags the file does not set still apply
    let ck = Checkpoint::load(&run.join("last.ckpt")).unwrap();
    assert_eq!(ck.meta.model.arch.name(), "fcn32_vgg16");
}

#[test]
fn reference_classifier_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 4, 32, "2019", "0");
    let stdout = ok(&["eval", "--reference", "--manifest", p(&root), "--split", "all"]);
    let report = ScenarioReport::from_tsv(&stdout).unwrap();
    assert_eq!(report.rows().len(), 1);
    for i in 0..5 {
        assert_eq!(report.rows()[0].metric(i), Some(1.0), "{stdout}");
    }
}

fn area_value(stdout: &str, key: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("{key} missing from {stdout}"))
        .to_string()
}

#[test]
fn detect_identical_periods_reports_no_change_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 2, 32, "2019", "0");
    let out_dir = dir.path().join("change");
    let out = canopy(&[
        "detect",
        "--reference",
        "--manifest",
        p(&root),
        "--period-a",
        "2019",
        "--period-b",
        "2019",
        "--out",
        p(&out_dir),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(area_value(&stdout, "deforested_km2"), "0");
    assert_eq!(area_value(&stdout, "afforested_km2"), "0");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(out_dir.join("change/tile_00000.tif").is_file());
    assert!(out_dir.join("overlay/tile_00000.png").is_file());
}

#[test]
fn detect_counts_a_thousand_cleared_pixels_as_a_tenth_km2() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 1, 64, "2019-01,2019-06", "0");
    let (grid, t0) = read_labels(&root.join("2019-01/fnf/tile_00000.tif")).unwrap();
    let mut t1 = t0.clone();
    let mut flipped = 0;
    for v in t1.iter_mut() {
        if flipped < 1000 && (*v == 1 || *v == 2) {
            *v = 3;
            flipped += 1;
        }
    }
    assert_eq!(flipped, 1000);
    write_labels(&root.join("2019-06/fnf/tile_00000.tif"), &grid, "FNF", &t1).unwrap();

    let out = canopy(&[
        "detect",
        "--reference",
        "--manifest",
        p(&root),
        "--period-a",
        "2019-01",
        "--period-b",
        "2019-06",
        "--out",
        p(&dir.path().join("change")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(area_value(&stdout, "deforested_km2"), "0.1");
    assert_eq!(area_value(&stdout, "afforested_km2"), "0");
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn sweep_writes_a_table_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 10, 32, "2019", "0");
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "archs = [\"unet\", \"fcn32_vgg16\"]\nscenarios = [\"S1\", \"S2\"]\n[train]\nepochs = 1\nbase_width = 4\ndepth = 2\nbatch_size = 4\n",
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let stdout = ok(&["sweep", "--manifest", p(&root), "--out", p(&out), "--config", p(&cfg)]);
    assert!(stdout.contains("| "), "{stdout}");
    let report = ScenarioReport::from_tsv(&fs::read_to_string(out.join("report.tsv")).unwrap()).unwrap();
    assert_eq!(report.rows().len(), 4);
    for run in ["unet_S1", "unet_S2", "fcn32_vgg16_S1", "fcn32_vgg16_S2"] {
        assert!(out.join(run).join("best.ckpt").is_file(), "{run}");
    }
}
