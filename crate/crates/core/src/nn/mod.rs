//! BLSTM mask estimation network: parameters, forward pass, exact
//! backpropagation, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod features;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use features::normalize_features;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{bce, bce_loss, combined_loss, LossTerm, LossValue, LossWeights};
pub use model::{backward, forward, forward_trace, loss, loss_and_grad, ForwardTrace, MaskOutputs};
pub use params::{HeadSet, MaskNetParams, NetDims, OutputActivation};
