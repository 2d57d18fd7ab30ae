//! Evaluation quantities: attack accuracy, feature distance, traces, ranks.

mod eval;
mod linalg;
mod stats;

pub use eval::{
    ae_eval, feature_distance, kes, mean_confidence, nearest_mean, secondary_k, topk_accuracy, AeScore, EvalModel,
    MetricRow, SurrogateConfig,
};
pub use linalg::{
    apply_norm, default_rank_tol, head_nullity, head_rank, matrix_rank, null_space, nullity, operator_norm,
    singular_values,
};
pub use stats::{average_ranks, golden_section_min, median, smooth_normalize_trace, spearman};
