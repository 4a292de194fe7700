//! The risk network: relational graph convolutions over each frame's
//! scene-graph, attention pooling and readout, an LSTM over frames with an
//! optional attention decoder, and a two-class head.

mod checkpoint;
mod config;
pub mod layers;
mod network;

pub use checkpoint::{Checkpoint, ParamArray, TrainingMeta, FORMAT_VERSION};
pub use config::{GnnKind, ModelConfig, PoolKind, Readout, TemporalMode};
pub use layers::{Adjacency, RelationIndex};
pub use network::{
    AttentionTrace, ClipGradient, ForwardOutput, FrameAttention, Mode, PreparedClip, RiskModel,
};
