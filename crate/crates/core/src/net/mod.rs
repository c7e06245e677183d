//! Bimanual grasp network: point-cloud encoder, single-grasp decoder, and
//! bimanual decoder, built on a small reverse-mode autodiff tape.

pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod weights;

pub use model::{
    bgg_decode, decode_grasp, encoder_forward, init_params, model_forward, multi_head_attention,
    set_abstraction, sgb_attention, sgp_decode, ModelConfig, ModelOutput,
};
pub use params::{ParamStore, TapeParams};
pub use tensor::{layer_norm_rows, linear, softmax_rows, Tape, Var};
pub use train::{
    differentiable_loss, gradcheck_suite, synthetic_batch, train_step, AdamW, GradCheckEntry,
    TrainBatch, TrainConfig,
};
pub use weights::{load_weights, save_weights, validate_against};
