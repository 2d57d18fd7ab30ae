//! White-box attacks on trained classifiers.

mod adversarial;
mod inversion;

pub use adversarial::{
    attack_labels, attack_success_rate, fgsm, input_gradient, linf_distance, pgd, pgd_iterates, AdvConfig,
};
pub use inversion::{
    inversion_seed, invert, invert_batch, mean_grad_trace, reconstructions, AttackResult, InitPolicy, InversionConfig,
    InversionLoss, PriorKind,
};
