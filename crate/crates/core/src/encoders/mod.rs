//! Encoders producing the per-modality global and local representations.

mod abmil;
mod encode;
mod gmm;
mod kmeans;
mod mlp;
mod multihead;

pub use abmil::{abmil_pool, AbmilPooler};
pub use encode::{
    fit_raw_centroids, prepare_precomputed, prepare_raw, prepare_raw_all, unit_l2, unit_l2_rows,
    EncodedInputs, RawCentroids,
};
pub use gmm::{fit_local_gmm, LocalGmmFit, LOCAL_EM_ITERS, LOCAL_EM_TOL};
pub use kmeans::{fit_corpus_kmeans, MAX_LLOYD_ITERS};
pub use mlp::{mlp_global, GlobalMlp};
pub use multihead::{multihead_local, MultiHeadLocalAttention};
