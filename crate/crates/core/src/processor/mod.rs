//! Learned simulator: MLP building blocks, the rewired message-passing
//! model, training, rollouts and checkpoints.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod rollout;
pub mod train;

pub use checkpoint::Checkpoint;
pub use mlp::{mlp_forward, Activation, Linear, Mlp};
pub use model::{
    encode, forward, loss, loss_and_grad, message_passing_block, raw_edge_features, Block, FeatureLayout,
    LatentEdge, LatentState, ModelConfig, NodeOutput, Normalizer, ProcessorParams, EDGE_INPUT_DIM,
};
pub use rollout::{apply_boundary, euler_update, evaluate, rollout, rollout_with_boundary, teacher_forced};
pub use train::{dataset_loss, train, TrainConfig, TrainReport};
