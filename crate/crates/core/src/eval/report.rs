use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::bench::{BenchmarkSummary, PrPoint};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "threshold,precision,recall,f";
pub const ISO_F: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// PR points as CSV. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f);
    }
    s
}

pub fn parse_pr_csv(text: &str) -> Result<Vec<PrPoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format(format!("PR CSV must start with `{CSV_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("PR CSV row {}: {e}", i + 1)))?;
            match v.as_slice() {
                &[threshold, precision, recall, f] => Ok(PrPoint { threshold, precision, recall, f }),
                _ => Err(Error::Format(format!("PR CSV row {}: expected 4 columns", i + 1))),
            }
        })
        .collect()
}

/// Plot-space mapping: `[0, 1]²` onto a square with margins, recall on x.
struct Frame {
    size: f64,
    margin: f64,
}

impl Frame {
    fn x(&self, r: f64) -> f64 {
        self.margin + r * self.size
    }

    fn y(&self, p: f64) -> f64 {
        self.margin + (1.0 - p) * self.size
    }
}

/// Static SVG with the PR curve, the ODS point and iso-F contours.
pub fn pr_svg(summary: &BenchmarkSummary) -> String {
    let fr = Frame { size: 400.0, margin: 50.0 };
    let total = fr.size + 2.0 * fr.margin;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{total}" height="{total}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{z}" height="{z}" fill="none" stroke="black"/>"#,
        m = fr.margin,
        z = fr.size
    );
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, fr.x(v), fr.y(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, fr.x(0.0) - 6.0, fr.y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Recall</text>"#, fr.x(0.5), total - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">Precision</text>"#,
        fr.y(0.5),
        fr.y(0.5)
    );

    // Iso-F contours: P = F·R / (2R − F) for R in (F/2, 1].
    for f in ISO_F {
        let mut d = String::new();
        let steps = 100;
        // The diagonal point (f, f) is always sampled; the label sits there.
        let mut rs: Vec<f64> = (0..=steps).map(|i| f / 2.0 + (1.0 - f / 2.0) * (i as f64 / steps as f64)).collect();
        rs.push(f);
        rs.sort_by(f64::total_cmp);
        for r in rs {
            let den = 2.0 * r - f;
            if den <= 0.0 {
                continue;
            }
            let p = f * r / den;
            if p > 1.0 {
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if d.is_empty() { "M" } else { "L" }, fr.x(r), fr.y(p));
        }
        let _ = writeln!(
            s,
            r#"<g class="iso-f" data-f="{f}"><path d="{}" fill="none" stroke="slateblue" stroke-dasharray="3,3"/><text x="{:.1}" y="{:.1}" fill="darkslateblue">{f}</text></g>"#,
            d.trim_end(),
            fr.x(f) + 3.0,
            fr.y(f) - 3.0
        );
    }

    let mut pts: Vec<&PrPoint> = summary.pr_points.iter().collect();
    pts.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let curve: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", fr.x(p.recall), fr.y(p.precision))).collect();
    let _ = writeln!(s, r#"<polyline class="pr" points="{}" fill="none" stroke="firebrick" stroke-width="2"/>"#, curve.join(" "));
    if let Some(best) = summary.pr_points.iter().find(|p| p.threshold == summary.ods_threshold) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="firebrick"/>"#,
            fr.x(best.recall),
            fr.y(best.precision)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">ODS {:.3}  OIS {:.3}  AP {:.3}</text>"#,
        fr.x(0.02),
        fr.margin - 12.0,
        summary.ods,
        summary.ois,
        summary.ap
    );
    s.push_str("</svg>\n");
    s
}

/// Scalar metrics as `key = value` lines.
pub fn summary_text(summary: &BenchmarkSummary) -> String {
    format!(
        "ods = {}\nods_threshold = {}\nois = {}\nap = {}\n",
        summary.ods, summary.ods_threshold, summary.ois, summary.ap
    )
}

/// Writes `<stem>.csv`, `<stem>.svg` and `<stem>.txt` inside `dir`.
pub fn export_report(summary: &BenchmarkSummary, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (dir.join(format!("{stem}.csv")), pr_csv(&summary.pr_points)),
        (dir.join(format!("{stem}.svg")), pr_svg(summary)),
        (dir.join(format!("{stem}.txt")), summary_text(summary)),
    ];
    for (path, body) in &files {
        fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
