//! Training objectives and the trainer shared by every defense.

mod losses;
mod train;

pub use losses::{
    bido_loss, ca_derivative, ca_loss, ca_minimizer, ca_second_derivative, ca_value, ce_loss, hsic, hsic_value,
    ls_loss, median_heuristic, mid_kl, one_hot, CaLoss, CA_PROB_FLOOR,
};
pub use train::{
    apply_tl_freeze, train, train_with_hook, CaConfig, DefenseConfig, OptimizerKind, TrainConfig, TrainReport,
};
