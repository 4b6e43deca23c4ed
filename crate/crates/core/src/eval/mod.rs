//! Boundary benchmark: NMS thinning, tolerance-based one-to-one matching
//! of boundary pixels, precision/recall over thresholds and the ODS, OIS
//! and AP summaries.

mod bench;
mod correspond;
mod io;
mod nms;
mod report;

pub use bench::{benchmark, benchmark_from_counts, collect_counts, thresholds, BenchmarkConfig, BenchmarkSummary, PrPoint};
pub use correspond::{correspond, correspond_multi, default_tolerance, f_measure, max_matching, MatchCounts};
pub use io::{load_pgm, load_png, load_prediction, read_pgm, save_pgm, save_png16, save_prediction, write_pgm};
pub use nms::nms_thin;
pub use report::{export_report, parse_pr_csv, pr_csv, pr_svg, summary_text, CSV_HEADER, ISO_F};
