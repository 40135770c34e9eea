//! Minimal CPU neural-network toolkit for the denoiser.

mod adam;
mod checkpoint;
mod layers;
mod real;
mod unet;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError, CheckpointMeta, CHECKPOINT_VERSION};
pub use layers::{Act, Param, ParamStore};
pub use real::{matmul, Op, Real};
pub use unet::{time_encoding, ForwardTrace, NetError, Unet, UnetConfig};
