//! File formats: parameter files, trajectory CSVs, loss-database ingestion
//! and report CSVs. Every number is written as the shortest decimal that
//! parses back to the same `f64`.

pub mod ingest;
pub mod params;
pub mod report;
pub mod trajectory;

pub use ingest::{
    export_records, ingest, parse_step, parse_timestamp, read_loss_records, write_loss_records,
    BinningSpec, LossRecord, ProcessTable,
};
pub use params::{format_params, load_params, parse_params, save_params, ParamFile};
pub use trajectory::{read_trajectory, write_trajectory_dense, write_trajectory_sparse};

/// Shortest round-trip decimal; scientific notation outside `[1e-5, 1e16)`.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}
