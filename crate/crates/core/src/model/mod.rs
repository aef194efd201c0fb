//! The mini-BERT encoder, its pre-training heads, task classifier heads, and
//! [CLS] feature selection across layers.

mod config;
mod encoder;
mod heads;

pub use config::EncoderConfig;
pub use encoder::{BatchOutputs, EncoderModel, LayerOutputs, Mode, INIT_STD};
pub use heads::{select_features, select_features_from, ClassifierHead, Combiner, LayerSelection, LayerStrategy};

pub(crate) use encoder::init_tensor;
