//! `rcnkit eval`: boundary benchmark of a prediction directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rcnkit::eval::{benchmark, export_report, load_prediction, nms_thin, BenchmarkConfig};
use rcnkit::forge::{open_manifest, read_label_png};
use rcnkit::maps::{ContourPrediction, LabelMap};

use super::{at, files_with, png_files, stem_of};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const KEYS: &[&str] = &["pred", "gt", "split", "thresholds", "tolerance", "no_nms", "name"];

pub fn apply(a: &EvalArgs, s: &mut Settings) {
    s.flag("pred", a.pred.as_ref().map(|p| p.display()));
    s.flag("gt", a.gt.as_ref().map(|p| p.display()));
    s.flag("split", a.split.as_ref());
    s.flag("thresholds", a.thresholds);
    s.flag("tolerance", a.tolerance);
    s.switch("no_nms", a.no_nms);
    s.flag("name", a.name.as_ref());
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = s.out()?;
    let pred_dir: PathBuf = s.require("pred")?;
    let gt: PathBuf = s.require("gt")?;
    let d = BenchmarkConfig::default();
    let cfg = BenchmarkConfig { thresholds: s.get_or("thresholds", d.thresholds)?, tolerance: s.get("tolerance")? };
    let thin = !s.get_or("no_nms", false)?;
    let name: String = s.get_or("name", "pr".to_string())?;

    let gts = if gt.is_dir() { gt_from_dir(&gt)? } else { gt_from_manifest(&gt, s.raw("split"))? };
    if gts.is_empty() {
        return Err(CliError::config(format!("{}: no ground truth selected", gt.display())));
    }
    let preds = match_predictions(&pred_dir, &gts)?;
    let preds: Vec<ContourPrediction> =
        if thin { preds.par_iter().map(nms_thin).collect() } else { preds };
    let gts: Vec<Vec<LabelMap>> = gts.into_values().collect();
    let summary = benchmark(&preds, &gts, &cfg)?;
    let files = export_report(&summary, &out, &name)?;
    println!("images {}", preds.len());
    println!("ods {:.6} ois {:.6} ap {:.6} threshold {:.4}", summary.ods, summary.ois, summary.ap, summary.ods_threshold);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

/// Label maps keyed by image stem, annotators in manifest order.
fn gt_from_manifest(path: &Path, split: Option<&str>) -> CliResult<BTreeMap<String, Vec<LabelMap>>> {
    let (manifest, base) = open_manifest(path).map_err(at(path))?;
    let mut gts = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| split.is_none_or(|sp| e.split == sp)) {
        let labels = e
            .labels
            .iter()
            .map(|l| {
                let p = base.join(l);
                read_label_png(&p).map_err(at(&p))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let stem = stem_of(Path::new(&e.image))?;
        if gts.insert(stem.clone(), labels).is_some() {
            return Err(CliError::config(format!("{}: two images share the stem `{stem}`", path.display())));
        }
    }
    Ok(gts)
}

/// `<stem>.png` is a single label; `<stem>_aK.png` is annotator `K`.
fn gt_from_dir(dir: &Path) -> CliResult<BTreeMap<String, Vec<LabelMap>>> {
    let mut grouped: BTreeMap<String, BTreeMap<u32, PathBuf>> = BTreeMap::new();
    for path in png_files(dir)? {
        let name = stem_of(&path)?;
        let (stem, k) = match name.rsplit_once("_a") {
            Some((stem, k)) if !stem.is_empty() && k.parse::<u32>().is_ok() => (stem.to_string(), k.parse().unwrap()),
            _ => (name.clone(), 0),
        };
        if grouped.entry(stem.clone()).or_default().insert(k, path).is_some() {
            return Err(CliError::config(format!("{}: `{stem}` has two labels for annotator {k}", dir.display())));
        }
    }
    grouped
        .into_iter()
        .map(|(stem, by_k)| {
            let labels = by_k.values().map(|p| read_label_png(p).map_err(at(p))).collect::<CliResult<Vec<_>>>()?;
            Ok((stem, labels))
        })
        .collect()
}

/// One prediction per ground-truth stem (`.pgm` preferred over `.png`).
fn match_predictions(dir: &Path, gts: &BTreeMap<String, Vec<LabelMap>>) -> CliResult<Vec<ContourPrediction>> {
    let available = files_with(dir, &["pgm", "png"])?;
    let mut by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in available {
        let stem = stem_of(&p)?;
        let prefer = p.extension().is_some_and(|e| e == "pgm");
        if prefer || !by_stem.contains_key(&stem) {
            by_stem.insert(stem, p);
        }
    }
    let extra = by_stem.keys().filter(|k| !gts.contains_key(*k)).count();
    if extra > 0 {
        log::warn!("{extra} predictions in {} have no ground truth and are ignored", dir.display());
    }
    let paths: Vec<&PathBuf> = gts
        .keys()
        .map(|stem| {
            by_stem.get(stem).ok_or_else(|| CliError::runtime(format!("{}: no prediction for `{stem}`", dir.display())))
        })
        .collect::<CliResult<_>>()?;
    paths.par_iter().map(|p| load_prediction(p).map_err(at(p))).collect()
}
