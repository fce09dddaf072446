//! Configuration-driven experiment sweeps over `curvlab`, each written as a
//! CSV file with a provenance preamble.

pub mod config;
pub mod dataset;
mod error;
pub mod experiments;
pub mod table;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use table::{Provenance, Table};

/// Runs `cfg` with `seed` and renders the CSV text.
pub fn render(cfg: &ExperimentConfig, seed: u64) -> Result<(Table, String)> {
    let table = experiments::run(cfg, seed)?;
    let csv = table.to_csv(&Provenance::new(&cfg.canonical_json(), seed));
    Ok((table, csv))
}

/// Runs `cfg` on a pool of `threads` workers (all cores when 0) and writes
/// the CSV into `out_dir`, returning its path.
pub fn run_to_dir(cfg: &ExperimentConfig, seed: u64, out_dir: &Path, threads: usize) -> Result<PathBuf> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let (_, csv) = pool.install(|| render(cfg, seed))?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(cfg.output_name());
    std::fs::write(&path, csv)?;
    Ok(path)
}
