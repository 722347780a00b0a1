//! Numeric building blocks: MLPs with hand-derived gradients, channel
//! statistics, row softmax, k-means, guided filtering, positional encoding.

mod guided;
mod kmeans;
mod mlp;
mod posenc;
mod stats;

pub use guided::guided_filter;
pub use kmeans::{kmeans, KmeansResult};
pub use mlp::{
    mlp_backward, mlp_forward, Activation, LinearLayer, MlpCache, MlpGrads, MlpParams,
    MlpWorkspace,
};
pub use posenc::{posenc_len, positional_encoding};
pub use stats::{channel_stats, channel_stats_backward, softmax_rows, EPS_VAR};
