//! Separation metrics, the evaluation harness and loss timing.

mod bench;
mod sdr;
mod set;

pub use bench::{bench_loss, scaling_ratios, time_affinity, time_sce_loss, BenchConfig, BenchPoint, BenchReport};
pub use sdr::{best_permutation_sdr, si_sdr, PermutationMatch, SDR_CAP_DB};
pub use set::{evaluate_mixture, evaluate_set, Aggregate, EvalMode, SdrReport, SourceScore, CSV_HEADER};
