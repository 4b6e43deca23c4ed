//! `rcnkit report`: table and re-rendered curves for saved summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rcnkit::config::KeyValues;
use rcnkit::eval::{parse_pr_csv, pr_svg, BenchmarkSummary};

use crate::args::ReportArgs;
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const KEYS: &[&str] = &["summaries", "reference"];

/// Published full-scale results of the network family, shown for
/// orientation only: `(model, benchmark, ODS, OIS, AP)`.
pub const REFERENCE_ROWS: &[(&str, &str, f64, f64, f64)] = &[
    ("RCN", "object contours", 0.752, 0.773, 0.641),
    ("RCN-VOC", "object contours", 0.721, 0.746, 0.613),
    ("RCN-COCO", "object contours", 0.716, 0.741, 0.719),
    ("RCN-VOC", "edges", 0.824, 0.839, 0.837),
    ("RCN", "edges", 0.823, 0.838, 0.853),
    ("RCN-VOC-1", "edges", 0.812, 0.827, 0.822),
];

pub fn apply(a: &ReportArgs, s: &mut Settings) {
    if !a.summaries.is_empty() {
        let list: Vec<String> = a.summaries.iter().map(|p| p.display().to_string()).collect();
        s.flag("summaries", Some(list.join(",")));
    }
    s.switch("reference", a.reference);
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = s.path("out").unwrap_or_else(|| PathBuf::from("."));
    let stems: Vec<PathBuf> = s.list("summaries")?.ok_or_else(|| CliError::config("no summaries given"))?;
    fs::create_dir_all(&out)?;
    let mut table = String::from("| run | ODS | OIS | AP | threshold |\n|---|---|---|---|---|\n");
    for stem in &stems {
        let stem = strip_extension(stem);
        let summary = load_summary(&stem)?;
        let label = label_of(&stem);
        fs::write(out.join(format!("{label}.svg")), pr_svg(&summary))?;
        let _ = writeln!(
            table,
            "| {label} | {:.3} | {:.3} | {:.3} | {:.3} |",
            summary.ods, summary.ois, summary.ap, summary.ods_threshold
        );
    }
    if s.get_or("reference", false)? {
        for (model, bench, ods, ois, ap) in REFERENCE_ROWS {
            let _ = writeln!(table, "| {model} (published, {bench}) | {ods:.3} | {ois:.3} | {ap:.3} | - |");
        }
    }
    let path = out.join("report.md");
    fs::write(&path, &table)?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}

fn strip_extension(p: &Path) -> PathBuf {
    match p.extension().and_then(|e| e.to_str()) {
        Some("txt" | "csv" | "svg") => p.with_extension(""),
        _ => p.to_path_buf(),
    }
}

/// `runs/a/pr` becomes `runs_a_pr`.
fn label_of(stem: &Path) -> String {
    let parts: Vec<String> = stem
        .components()
        .filter_map(|c| match c {
            std::path::Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect();
    parts.join("_")
}

pub fn load_summary(stem: &Path) -> CliResult<BenchmarkSummary> {
    let txt = stem.with_extension("txt");
    let csv = stem.with_extension("csv");
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())));
    let kv = KeyValues::parse(&read(&txt)?)?;
    let need = |key: &str| -> CliResult<f64> {
        kv.value(key)?.ok_or_else(|| CliError::runtime(format!("{}: missing `{key}`", txt.display())))
    };
    let text = read(&csv)?;
    Ok(BenchmarkSummary {
        pr_points: parse_pr_csv(&text)?,
        ods: need("ods")?,
        ods_threshold: need("ods_threshold")?,
        ois: need("ois")?,
        ap: need("ap")?,
    })
}
