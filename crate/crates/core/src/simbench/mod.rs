//! Simulation study apparatus: copula data, amputation, baselines, metrics,
//! logistic regression with Rubin pooling, and the replicate-grid runner.

pub mod ampute;
pub mod baselines;
pub mod glm;
pub mod metrics;
pub mod runner;
pub mod simulate;

pub use ampute::{ampute, AmputeSpec, Mechanism};
pub use baselines::{baseline_median, baseline_random};
pub use glm::{fit_logistic, FitStatus, LogisticFit};
pub use metrics::{brier, coverage_stats, mean_over_imputations, nrmse, pool_rubin, PooledEstimate};
pub use runner::{run_benchmark, BenchmarkConfig, Method, ResultRow};
pub use simulate::{simulate_features, simulate_outcome, true_beta, Effect, Marginal, SimSpec};
