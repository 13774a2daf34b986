//! File formats: quotes, configuration, surfaces, traces and reports. Every
//! file starts with the line `# volcal-format v1`.

mod config;
pub mod format;
mod quotes;
mod report;
mod surface;

pub use config::{load_config, save_config, EvalSection, ExperimentConfig, GridSection, MarketSection, Reference};
pub use format::FORMAT_HEADER;
pub use quotes::{parse_quotes, read_quotes, write_quotes, write_std_errors, QuoteFile, Rejection};
pub use report::{runs_path, write_report, CalibrationReport, Metric, RunResult, Spread};
pub use surface::{
    export_surface, params_hash, read_key_values, read_surface, sidecar_path, write_key_values, Coordinates, ExportGrid,
    SurfaceGridExport, SurfaceSource,
};

use std::path::Path;

use crate::error::Result;
use crate::trainer::TrainTrace;

/// Writes the trace as `iter,lr,fit,ini,arb,dup,total`.
pub fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    format::write_with_header(path, &trace.to_csv())
}

/// SHA-256 of a quote list's bit patterns, in order.
pub fn quotes_hash(quotes: &[crate::dupire::OptionQuote]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for q in quotes {
        for v in [q.price, q.strike, q.maturity] {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes generated quotes, their standard errors (`<stem>_stderr.csv`) and
/// a `.meta` provenance sidecar.
pub fn write_dataset(path: &Path, dataset: &crate::mc::SyntheticDataset, frame: &crate::dupire::MarketFrame) -> Result<()> {
    write_quotes(path, &dataset.quotes)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let se_path = path.with_file_name(format!("{stem}_stderr.csv"));
    write_std_errors(&se_path, &dataset.quotes, &dataset.std_errors)?;
    let sim = &dataset.sim;
    let mut meta = std::collections::BTreeMap::new();
    for (k, v) in [
        ("seed", sim.seed.to_string()),
        ("n_paths", sim.n_paths.to_string()),
        ("dt", format!("{:?}", sim.dt)),
        ("horizon", format!("{:?}", sim.horizon)),
        ("scheme", sim.scheme.to_string()),
        ("field", dataset.field.clone()),
        ("spot", format!("{:?}", frame.spot)),
        ("rate", format!("{:?}", frame.rate)),
        ("kind", frame.kind.to_string()),
        ("k_max", format!("{:?}", frame.k_max)),
        ("quotes", dataset.quotes.len().to_string()),
        ("quotes_sha256", quotes_hash(&dataset.quotes)),
        (
            "std_error_file",
            se_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        ),
    ] {
        meta.insert(k.to_string(), v);
    }
    write_key_values(&sidecar_path(path), &meta)
}
