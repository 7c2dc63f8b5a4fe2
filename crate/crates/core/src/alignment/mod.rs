//! Contrastive alignment: symmetric cross-modal loss and the multi-prototype
//! loss against per-class Gaussian mixtures maintained by Sinkhorn-EM.

mod class_gmm;
mod mcl;
mod symcl;

pub use class_gmm::{
    gmm_posterior, sinkhorn_balance, sinkhorn_em_update, ClassGmms, EmOptions, SINKHORN_MAX_ITERS,
    SINKHORN_TOL,
};
pub use mcl::{mcl_loss, mcl_rows, prototype_components};
pub use symcl::{symcl_loss, symcl_rows, symcl_total, symcl_total_rows};
