//! Dense tensors, reverse-mode autodiff, and the models built on them.

mod checkpoint;
mod encoder;
mod gradcheck;
mod graph;
mod optim;
mod probe;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderConfig, EncoderOutput};
pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{Graph, LossVariant, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use probe::LinearProbe;
pub use tensor::{Scalar, Tensor};
