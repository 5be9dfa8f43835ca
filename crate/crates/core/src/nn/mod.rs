//! Minimal neural-network toolkit: parameter storage, a reverse-mode tape,
//! layers and the Adam optimizer.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use layers::{Activation, Embedding, GruCell, Linear, Mlp};
pub use params::{Gradients, Init, ParamId, ParamStore, ParamTensor};
pub use tape::{Conv2dSpec, Grads, Tape, Var};
