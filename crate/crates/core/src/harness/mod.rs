//! Monte-Carlo experiment harness: configuration, seeded replications,
//! aggregation and output files.

mod aggregate;
mod config;
mod run;

use std::fs;
use std::io::BufWriter;
use std::path::Path;

pub use aggregate::{
    aggregate, error_stats, markdown_tables, read_aggregate, read_replications, write_aggregate,
    write_replications, AggregateRow, ReplicationRow, AGGREGATE_HEADER, REPLICATION_HEADER,
};
pub use config::{Bandwidth, EtaMode, ExperimentConfig, GramMode, Method, ALL_METHODS};
pub use run::{
    policy_value, replication_seed, rows_from, run_experiment, run_experiment_with_workers,
    run_replication, worker_count, ExperimentOutput, MethodEstimate, ReplicationResult,
    THREADS_ENV,
};

use crate::error::Result;

/// Writes `replications.csv`, `aggregate.csv`, `tables.md` and the
/// canonical configuration `config.txt` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg_text = cfg.to_text();
    write_replications(
        &output.rows,
        BufWriter::new(fs::File::create(dir.join("replications.csv"))?),
    )?;
    write_aggregate(
        &output.aggregate,
        BufWriter::new(fs::File::create(dir.join("aggregate.csv"))?),
    )?;
    fs::write(
        dir.join("tables.md"),
        markdown_tables(&output.aggregate, Some(&output.truth), Some(&cfg_text)),
    )?;
    fs::write(dir.join("config.txt"), cfg_text)?;
    Ok(())
}
