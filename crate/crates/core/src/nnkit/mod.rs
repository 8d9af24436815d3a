//! Dense networks, a matrix-level reverse-mode tape, and the Adam optimiser.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::OptState;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradient, GradCheck};
pub use mlp::{BoundMlp, Dense, MlpParams};
pub use tape::{CustomOp, GatherMap, GatherSrc, Gradients, Tape, Var};
pub use tensor::Tensor;
