//! The differentiable attention model and its substrate: a tensor tape with
//! reverse-mode gradients, parameter containers with deterministic
//! initialization, the layer forward passes, and the checkpoint format.

pub mod checkpoint;
pub mod model;
pub mod params;
pub mod tape;

pub use model::{
    gsat_forward, mlp_forward, model_forward, model_forward_on_tape, nlat_forward,
    prepare_inputs, register_params, AttentionRecord, ForwardArtifacts, ModelInputs, ParamLeaves,
};
pub use params::{init_params, GsatWindow, MlpParams, ModelDims, ModelParams, NlatParams};
pub use tape::{NnError, Tape, Tensor, ValueId};
