//! VAE objectives: four unsupervised regularizers, the supervised BCE
//! regularizer on encoder means, a supervised-only baseline, and training.

pub mod config;
pub mod losses;
mod model;
pub mod nets;
mod train;

pub use config::{Architecture, Method, MethodConfig};
pub use model::{Curves, TrainedModel};
pub use train::{discriminator_step, train};
