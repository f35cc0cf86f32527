//! Per-view encoder: LSTM with attention pooling for the global stream,
//! stacked conv/ReLU/batch-norm blocks with average pooling for the local stream.

pub mod attention;
pub mod conv;
pub mod lstm;
pub mod view;

pub use attention::{attention_pool, AttentionParams};
pub use conv::{
    conv1d_block, conv1d_block_batch, conv1d_valid, global_avg_pool, BnStats, Mode, TcnLayerParams, BN_EPS,
    BN_MOMENTUM,
};
pub use lstm::{lstm_forward, lstm_forward_from, LstmParams};
pub use view::{
    classify_view, encode_batch, encode_view, predict_batch, view_loss, view_loss_and_grads, EncoderConfig,
    ViewEncoderParams, ViewForward,
};
