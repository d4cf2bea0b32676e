pub mod autodiff;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod frontend;
pub mod fusion;
pub mod heap;
pub mod losses;
pub mod mae;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod patch;
pub mod train;

pub use config::TrainConfig;
pub use data::Label;
pub use error::{Error, Result};
