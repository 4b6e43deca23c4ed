pub mod eval;
pub mod forge;
pub mod predict;
pub mod report;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use rcnkit::config::KeyValues;
use rcnkit::graph::{build_rcn, NetworkSpec, Rcn};
use rcnkit::tensor::ParameterStore;

use crate::error::{CliError, CliResult};

/// File name of the network spec written next to trained checkpoints.
pub const NETWORK_FILE: &str = "network.cfg";

pub fn load_network(path: Option<&Path>) -> CliResult<NetworkSpec> {
    match path {
        Some(p) => NetworkSpec::from_kv(&KeyValues::load(p)?).map_err(at(p)),
        None => Ok(NetworkSpec::default()),
    }
}

/// Builds the graph for `spec` and replaces its parameters with the
/// checkpoint, which must hold exactly the same names and shapes.
pub fn load_model(spec: &NetworkSpec, checkpoint: &Path) -> CliResult<(ParameterStore, Rcn)> {
    let (fresh, rcn) = build_rcn(spec, 0)?;
    let loaded = ParameterStore::load(checkpoint).map_err(at(checkpoint))?;
    check_compatible(&fresh, &loaded, checkpoint)?;
    Ok((loaded, rcn))
}

pub fn check_compatible(expected: &ParameterStore, loaded: &ParameterStore, path: &Path) -> CliResult<()> {
    for (name, t) in expected.iter() {
        match loaded.get(name) {
            Some(l) if l.shape() == t.shape() => {}
            Some(l) => {
                return Err(CliError::config(format!(
                    "{}: parameter `{name}` has shape {}, network expects {}",
                    path.display(),
                    l.shape(),
                    t.shape()
                )))
            }
            None => {
                return Err(CliError::config(format!(
                    "{}: parameter `{name}` missing; checkpoint does not fit the network spec",
                    path.display()
                )))
            }
        }
    }
    if let Some(extra) = loaded.names().find(|n| !expected.contains(n)) {
        return Err(CliError::config(format!("{}: unexpected parameter `{extra}`", path.display())));
    }
    Ok(())
}

/// PNG files directly inside `dir`, sorted by name.
pub fn png_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    files_with(dir, &["png"])
}

pub fn files_with(dir: &Path, extensions: &[&str]) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && extensions.contains(&ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn stem_of(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(String::from)
        .ok_or_else(|| CliError::runtime(format!("{}: file name is not valid UTF-8", path.display())))
}

/// Prefixes a library error with the file it concerns, keeping its class.
pub fn at(path: &Path) -> impl FnOnce(rcnkit::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    }
}
