//! Evaluation harness: checkpoint tournaments, the metric suite, and the
//! sweep/ablation drivers that emit per-figure CSV files.

mod metrics;
mod sweep;
mod tournament;
mod verify;

pub use metrics::{
    compute_strategy_flags, derive_seed, emit, parse_csv, summarize, EmitFormat, MetricRow,
    Summary, SummaryEntry, METRIC_CSV_HEADER,
};
pub use sweep::{sweep, CellRecord, SweepAxis, SweepReport, SweepSpec};
pub use tournament::{tournament, TournamentSpec};
pub use verify::{gradcheck_battery, kl_self_check, VerifyItem, TOL as GRADCHECK_TOL};
