//! `rcnkit predict`: 16-bit contour maps from a trained checkpoint.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use rcnkit::eval::save_prediction;
use rcnkit::forge::{open_manifest, read_rgb_png};

use super::{at, load_model, load_network, png_files, stem_of, NETWORK_FILE};
use crate::args::{MapFormat, PredictArgs};
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const KEYS: &[&str] = &["checkpoint", "network", "manifest", "split", "images", "format"];

pub fn apply(a: &PredictArgs, s: &mut Settings) {
    s.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()));
    s.flag("network", a.network.as_ref().map(|p| p.display()));
    s.flag("manifest", a.manifest.as_ref().map(|p| p.display()));
    s.flag("split", a.split.as_ref());
    if !a.images.is_empty() {
        let list: Vec<String> = a.images.iter().map(|p| p.display().to_string()).collect();
        s.flag("images", Some(list.join(",")));
    }
    s.flag("format", a.format.map(|f| f.extension()));
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = s.out()?;
    let checkpoint: PathBuf = s.require("checkpoint")?;
    let network = s.path("network").or_else(|| {
        let beside = checkpoint.parent().unwrap_or(".".as_ref()).join(NETWORK_FILE);
        beside.is_file().then_some(beside)
    });
    if network.is_none() {
        log::warn!("no network spec given or found beside the checkpoint; assuming the default desk network");
    }
    let spec = load_network(network.as_deref())?;
    let (store, rcn) = load_model(&spec, &checkpoint)?;
    let ext = match s.raw("format") {
        None | Some("pgm") => MapFormat::Pgm.extension(),
        Some("png") => MapFormat::Png.extension(),
        Some(other) => return Err(CliError::config(format!("unknown map format `{other}` (pgm or png)"))),
    };

    let inputs = collect_inputs(s)?;
    fs::create_dir_all(&out)?;
    inputs
        .par_iter()
        .map(|(stem, path)| -> CliResult<()> {
            let image = read_rgb_png(path).map_err(at(path))?;
            let pred = rcn.predict(&store, &image)?;
            save_prediction(out.join(format!("{stem}.{ext}")), &pred)?;
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    println!("predicted {} maps into {}", inputs.len(), out.display());
    Ok(())
}

/// `(stem, image path)` pairs in a fixed order; stems must be unique.
fn collect_inputs(s: &Settings) -> CliResult<Vec<(String, PathBuf)>> {
    let mut paths = Vec::new();
    match (s.path("manifest"), s.list::<PathBuf>("images")?) {
        (Some(_), Some(_)) => return Err(CliError::config("`manifest` and `images` are exclusive")),
        (Some(m), None) => {
            let (manifest, base) = open_manifest(&m).map_err(at(&m))?;
            let split = s.raw("split");
            paths.extend(
                manifest.entries.iter().filter(|e| split.is_none_or(|sp| e.split == sp)).map(|e| base.join(&e.image)),
            );
        }
        (None, Some(list)) => {
            for p in list {
                if p.is_dir() {
                    paths.extend(png_files(&p)?);
                } else {
                    paths.push(p);
                }
            }
        }
        (None, None) => return Err(CliError::config("give `--manifest` or `--images`")),
    }
    if paths.is_empty() {
        return Err(CliError::config("no input images selected"));
    }
    let mut seen = BTreeSet::new();
    paths
        .into_iter()
        .map(|p| {
            let stem = stem_of(&p)?;
            if !seen.insert(stem.clone()) {
                return Err(CliError::config(format!("two inputs share the file stem `{stem}`")));
            }
            Ok((stem, p))
        })
        .collect()
}
