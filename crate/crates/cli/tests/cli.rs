//! End-to-end behavior of the `rcnkit` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcnkit::config::KeyValues;
use rcnkit::forge::{read_label_png, write_mask_png, SegmentationMask};
use rcnkit::graph::NetworkSpec;
use rcnkit::tensor::ParameterStore;
use rcnkit::train::TrainPlan;
use rcnkit_cli::commands;
use rcnkit_cli::settings::Settings;

fn rcnkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcnkit"))
        .args(args)
        .env("RCNKIT_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rcnkit(args);
    assert!(
        out.status.success(),
        "rcnkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts the exit code and the machine-readable stderr line.
fn fails_with(args: &[&str], code: i32) -> String {
    let out = rcnkit(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "rcnkit {args:?}: {stderr}");
    let last = stderr.lines().last().unwrap_or_default();
    assert!(last.starts_with(&format!("rcnkit: error code={code} kind=")), "{last}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn forge(dir: &Path, n: usize, canvas: &str, seed: u64, extra: &[&str]) -> PathBuf {
    let (n, seed) = (n.to_string(), seed.to_string());
    let mut args = vec!["forge", "--synthetic", "-n", &n, "--canvas", canvas, "--seed", &seed, "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("manifest.tsv")
}

/// Relative paths and bytes of every file under `dir`.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort();
    acc
}

/// One quick epoch on two crops.
const QUICK: &[&str] = &["--epochs", "1", "--images-per-epoch", "2", "--batch-size", "1", "--crop", "32x32"];

fn quick_model(dir: &Path, manifest: &Path) -> PathBuf {
    let run = dir.join("run");
    let mut args = vec!["train", "--corpus", s(manifest), "--seed", "5", "--out", s(&run)];
    args.extend_from_slice(QUICK);
    ok(&args);
    run.join("model.rcnk")
}

fn metric(stdout: &str, key: &str) -> f64 {
    let words: Vec<&str> = stdout.split_whitespace().collect();
    let i = words.iter().position(|w| *w == key).unwrap_or_else(|| panic!("no `{key}` in {stdout}"));
    words[i + 1].parse().unwrap()
}

#[test]
fn forge_writes_requested_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["forge", "--synthetic", "-n", "32", "--canvas", "64x64", "--seed", "7", "--out", s(dir.path())]);
    assert!(stdout.contains("manifest "), "{stdout}");
    assert_eq!(metric(&stdout, "images"), 32.0);
    let rate = metric(&stdout, "positive_rate");
    assert!(rate > 0.0 && rate < 0.2, "{rate}");
    assert_eq!(fs::read_dir(dir.path().join("images")).unwrap().count(), 32);
    assert_eq!(fs::read_dir(dir.path().join("labels")).unwrap().count(), 32);
}

#[test]
fn forge_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let split = ["--split", "train=6,val=2", "--annotators", "2"];
    forge(&dir.path().join("a"), 8, "48x48", 11, &split);
    forge(&dir.path().join("b"), 8, "48x48", 11, &split);
    forge(&dir.path().join("c"), 8, "48x48", 12, &split);
    let a = snapshot(&dir.path().join("a"));
    assert_eq!(a.len(), 8 + 16 + 1);
    assert_eq!(a, snapshot(&dir.path().join("b")));
    assert_ne!(a, snapshot(&dir.path().join("c")));
}

#[test]
fn forge_warns_on_a_constant_mask() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    fs::create_dir_all(&masks).unwrap();
    // Background everywhere: no selected pixel, so nothing to trace.
    write_mask_png(masks.join("flat.png"), &SegmentationMask::filled(20, 16, 0)).unwrap();
    let out_dir = dir.path().join("out");
    let out = rcnkit(&["forge", "--from-masks", s(&masks), "--classes", "1,2,3", "--out", s(&out_dir)]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(metric(&stdout, "empty_labels"), 1.0);
    assert_eq!(metric(&stdout, "positive_rate"), 0.0);
    assert!(stderr.contains("WARN") && stderr.contains("no contour pixels"), "{stderr}");
    let label = read_label_png(out_dir.join("labels/0000_a0.png")).unwrap();
    assert_eq!((label.width(), label.height(), label.count()), (20, 16, 0));
}

#[test]
fn forge_converts_masks_with_photographs() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    fs::create_dir_all(&masks).unwrap();
    let mut mask = SegmentationMask::filled(12, 10, 0);
    for y in 3..7 {
        for x in 2..9 {
            mask.set(x, y, 1);
        }
    }
    write_mask_png(masks.join("cat.png"), &mask).unwrap();
    let photos = forge(&dir.path().join("photos"), 1, "24x24", 1, &[]);
    let out_dir = dir.path().join("out");
    let images = dir.path().join("rgb");
    fs::create_dir_all(&images).unwrap();
    fs::copy(photos.parent().unwrap().join("images/0000.png"), images.join("cat.png")).unwrap();
    // A 24x24 photograph does not fit the 12x10 mask.
    fails_with(&["forge", "--from-masks", s(&masks), "--classes", "1", "--images", s(&images), "--out", s(&out_dir)], 1);
    let stdout = ok(&["forge", "--from-masks", s(&masks), "--classes", "1", "--out", s(&out_dir)]);
    assert_eq!(metric(&stdout, "empty_labels"), 0.0);
    // Inner boundary of a 7x4 block.
    assert_eq!(read_label_png(out_dir.join("labels/0000_a0.png")).unwrap().count(), 18);
}

#[test]
fn exit_codes_separate_configuration_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = forge(&d.join("c"), 2, "32x32", 1, &[]);
    let out = d.join("o");

    fails_with(&["forge", "--synthetic"], 2);
    fails_with(&["forge", "--bogus-flag"], 2);
    fails_with(&["forge", "--synthetic", "--canvas", "10x10", "--out", s(&out)], 2);
    fails_with(&["forge", "--synthetic", "-n", "4", "--split", "train=3", "--out", s(&out)], 2);
    fails_with(&["train", "--plan", "no-such-plan", "--corpus", s(&manifest), "--out", s(&out)], 2);
    fails_with(&["train", "--variant", "rcn", "--corpus-for", &format!("voc={}", s(&manifest)), "--out", s(&out)], 2);
    fails_with(&["train", "--corpus", s(&manifest), "--split", "val", "--out", s(&out)], 2);
    fails_with(&["eval", "--pred", s(d), "--gt", s(&manifest), "--out", s(&out), "--threads", "0"], 2);
    let cfg = d.join("typo.cfg");
    fs::write(&cfg, "cuont = 3\n").unwrap();
    fails_with(&["forge", "--synthetic", "--config", s(&cfg), "--out", s(&out)], 2);

    let stderr = fails_with(&["train", "--corpus", s(&d.join("missing.tsv")), "--out", s(&out)], 1);
    assert!(stderr.contains("missing.tsv"), "{stderr}");
    let junk = d.join("junk.rcnk");
    fs::write(&junk, b"not a checkpoint").unwrap();
    fails_with(&["predict", "--checkpoint", s(&junk), "--manifest", s(&manifest), "--out", s(&out)], 1);
    fails_with(&["eval", "--pred", s(&d.join("nothing")), "--gt", s(&manifest), "--out", s(&out)], 1);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("forge.cfg");
    fs::write(&cfg, format!("synthetic = true\ncount = 5\ncanvas = 32x32\nout = {}\n", s(&dir.path().join("a")))).unwrap();
    let stdout = ok(&["forge", "--config", s(&cfg), "-n", "3", "--out", s(&dir.path().join("b"))]);
    assert_eq!(metric(&stdout, "images"), 3.0);
    assert!(dir.path().join("b/manifest.tsv").is_file());
    assert!(!dir.path().join("a").exists());
}

#[test]
fn predict_is_bit_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 3, "40x40", 2, &[]);
    let model = quick_model(dir.path(), &manifest);
    for (name, threads, format) in [("p1", "1", "pgm"), ("p2", "3", "pgm"), ("p3", "1", "png")] {
        let out = dir.path().join(name);
        let args =
            ["predict", "--checkpoint", s(&model), "--manifest", s(&manifest), "--threads", threads, "--format", format];
        ok(&[&args[..], &["--out", s(&out)]].concat());
    }
    let p1 = snapshot(&dir.path().join("p1"));
    assert_eq!(p1.len(), 3);
    assert!(p1[0].1.starts_with(b"P5"));
    assert_eq!(p1, snapshot(&dir.path().join("p2")));
    let pngs = snapshot(&dir.path().join("p3"));
    for ((a, _), (b, _)) in p1.iter().zip(&pngs) {
        let pa = rcnkit::eval::load_prediction(dir.path().join("p1").join(a)).unwrap();
        let pb = rcnkit::eval::load_prediction(dir.path().join("p3").join(b)).unwrap();
        assert_eq!(pa, pb);
    }
}

/// Copies `NNNN_a0.png` labels to `NNNN.png` predictions.
fn copy_as_predictions(labels: &Path, dest: &Path) -> PathBuf {
    fs::create_dir_all(dest).unwrap();
    for e in fs::read_dir(labels).unwrap() {
        let p = e.unwrap().path();
        let stem = p.file_stem().unwrap().to_str().unwrap().trim_end_matches("_a0").to_string();
        fs::copy(&p, dest.join(format!("{stem}.png"))).unwrap();
    }
    dest.to_path_buf()
}

#[test]
fn eval_of_copied_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 4, "48x48", 9, &[]);
    let labels = dir.path().join("c/labels");
    let perfect = copy_as_predictions(&labels, &dir.path().join("perfect"));
    for gt in [labels.as_path(), manifest.as_path()] {
        let out = dir.path().join("ev");
        let stdout = ok(&["eval", "--pred", s(&perfect), "--gt", s(gt), "--no-nms", "--out", s(&out)]);
        assert_eq!(metric(&stdout, "images"), 4.0);
        for key in ["ods", "ois", "ap"] {
            assert!((metric(&stdout, key) - 1.0).abs() < 1e-12, "{key}: {stdout}");
        }
        for ext in ["csv", "svg", "txt"] {
            assert!(out.join(format!("pr.{ext}")).is_file());
        }
    }
}

#[test]
fn eval_is_independent_of_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 4, "40x40", 4, &[]);
    let model = quick_model(dir.path(), &manifest);
    let pred = dir.path().join("pred");
    ok(&["predict", "--checkpoint", s(&model), "--manifest", s(&manifest), "--out", s(&pred)]);
    let mut csvs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("ev{threads}"));
        ok(&["eval", "--pred", s(&pred), "--gt", s(&manifest), "--threads", threads, "--out", s(&out)]);
        csvs.push(fs::read(out.join("pr.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn overfit_plan_then_eval_reaches_high_ods() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("one"), 1, "48x48", 3, &[]);
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--plan",
        "overfit1",
        "--seed",
        "3",
        "--output-scale",
        "full",
        "--corpus",
        s(&manifest),
        "--out",
        s(&run),
    ]);
    assert!(stdout.contains("stage overfit epochs 200"), "{stdout}");
    for f in ["model.rcnk", "overfit.rcnk", "overfit.csv", "network.cfg", "plan.cfg"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(run.join("overfit.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    let pred = dir.path().join("pred");
    ok(&["predict", "--checkpoint", s(&run.join("model.rcnk")), "--manifest", s(&manifest), "--out", s(&pred)]);
    let stdout = ok(&["eval", "--pred", s(&pred), "--gt", s(&manifest), "--out", s(&dir.path().join("ev"))]);
    let ods = metric(&stdout, "ods");
    assert!(ods >= 0.9, "overfit ODS {ods}");
}

#[test]
fn divergence_exits_with_runtime_code_and_keeps_finite_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 1, "32x32", 1, &[]);
    let run = dir.path().join("run");
    let stderr = fails_with(
        &["train", "--plan", "overfit1", "--lr", "1e12", "--epochs", "3", "--corpus", s(&manifest), "--out", s(&run)],
        1,
    );
    assert!(stderr.contains("diverged"), "{stderr}");
    let kept = ParameterStore::load(run.join("last-good.rcnk")).unwrap();
    assert!(kept.iter().all(|(_, t)| t.is_finite()));
    assert!(!run.join("model.rcnk").exists());
}

#[test]
fn rcn_variant_chains_pretraining_and_main_stage() {
    let dir = tempfile::tempdir().unwrap();
    let coco = forge(&dir.path().join("coco"), 2, "32x32", 1, &[]);
    let voc = forge(&dir.path().join("voc"), 2, "32x32", 2, &["--annotators", "2"]);
    let run = dir.path().join("run");
    let (bc, bv) = (format!("coco={}", s(&coco)), format!("voc={}", s(&voc)));
    let mut args = vec!["train", "--variant", "rcn", "--corpus-for", &bc, "--corpus-for", &bv, "--out", s(&run)];
    args.extend_from_slice(QUICK);
    let stdout = ok(&args);
    let pre = stdout.find("stage pretrain").expect("pretrain stage ran");
    let main = stdout.find("stage main").expect("main stage ran");
    assert!(pre < main);
    for f in ["pretrain.rcnk", "pretrain.csv", "main.rcnk", "main.csv", "model.rcnk"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let plan = TrainPlan::from_kv(&KeyValues::load(run.join("plan.cfg")).unwrap()).unwrap();
    let corpora: Vec<&str> = plan.stages.iter().map(|st| st.corpus.as_str()).collect();
    assert_eq!(corpora, ["coco", "voc"]);
    assert_eq!(fs::read(run.join("main.rcnk")).unwrap(), fs::read(run.join("model.rcnk")).unwrap());
}

#[test]
fn init_checkpoint_must_fit_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 2, "32x32", 1, &[]);
    let model = quick_model(dir.path(), &manifest);
    let again = dir.path().join("again");
    let mut args = vec!["train", "--corpus", s(&manifest), "--init", s(&model), "--out", s(&again)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let wide = dir.path().join("wide.cfg");
    fs::write(&wide, "refine.fused = 16,16,16,16\n").unwrap();
    args.extend_from_slice(&["--network", s(&wide)]);
    fails_with(&args, 2);
}

#[test]
fn report_tabulates_and_replots_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(&dir.path().join("c"), 2, "32x32", 5, &[]);
    let perfect = copy_as_predictions(&dir.path().join("c/labels"), &dir.path().join("perfect"));
    let ev = dir.path().join("ev");
    ok(&["eval", "--pred", s(&perfect), "--gt", s(&manifest), "--no-nms", "--out", s(&ev), "--name", "perfect"]);
    let out = dir.path().join("rep");
    let stem = ev.join("perfect.txt");
    let stdout = ok(&["report", s(&stem), "--reference", "--out", s(&out)]);
    assert!(stdout.contains("| 1.000 | 1.000 | 1.000 |"), "{stdout}");
    assert!(stdout.contains("published"));
    let table = fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(table, stdout.lines().filter(|l| l.starts_with('|')).map(|l| format!("{l}\n")).collect::<String>());
    let svgs = snapshot(&out).into_iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "svg")).count();
    assert_eq!(svgs, 1);
    fails_with(&["report", s(&dir.path().join("absent")), "--out", s(&out)], 1);
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse() {
    let dir = configs_dir();
    for (file, keys) in [
        ("forge.cfg", commands::forge::KEYS),
        ("train.cfg", commands::train::KEYS),
        ("predict.cfg", commands::predict::KEYS),
        ("eval.cfg", commands::eval::KEYS),
        ("report.cfg", commands::report::KEYS),
    ] {
        let settings = Settings::load(Some(&dir.join(file)), keys).unwrap_or_else(|e| panic!("{file}: {e}"));
        assert!(settings.out().is_ok(), "{file} names an output directory");
    }
    let net = NetworkSpec::from_kv(&KeyValues::load(dir.join("network.cfg")).unwrap()).unwrap();
    assert_eq!(net, NetworkSpec::default());
    let plan = TrainPlan::from_kv(&KeyValues::load(dir.join("plan-rcn.cfg")).unwrap()).unwrap();
    assert_eq!(plan.stages.len(), 2);
    assert_eq!(plan.stages[1].lr, 0.01);
}
