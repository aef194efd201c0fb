pub mod error;
pub mod experiments;
pub mod longtext;
pub mod model;
pub mod multitask;
pub mod numeric;
pub mod optim;
pub mod pretrain;
pub mod tokenizer;

pub use error::{Error, Result};
