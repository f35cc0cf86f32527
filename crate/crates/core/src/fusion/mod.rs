//! Label-space fusion: correlation channels from per-view predictions, 1×1
//! channel filters and the final classifier.

pub mod correlation;
pub mod head;

pub use correlation::{
    channel_count, channel_map, check_probability, inter_matrix, intra_matrix, stack_channels, stack_correlations,
    ChannelSet, CorrelationTensor,
};
pub use head::{
    channel_fuse, final_classify, fusion_loss, fusion_loss_and_grads, FusionHead, FusionMode, FusionParams,
    DEFAULT_FILTERS,
};
