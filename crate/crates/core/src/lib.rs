//! Two-stream separable convolutional LSTM for video violence detection.
//!
//! Everything is built from scratch on a small dense-tensor core:
//!
//! * [`ops`] numeric kernels (convolutions, pooling, activations, norms)
//! * [`autodiff`] reverse-mode differentiation and gradient checking
//! * [`preproc`] clip sampling, augmentation, background suppression and
//!   frame differences
//! * [`cells`] the separable and dense convolutional LSTM cells
//! * [`backbone`] truncated MobileNetV2 and a tiny desk-scale backbone
//! * [`model`] the two-stream network, fusion and classifier head
//! * [`train`] loss, AMSGrad, schedule, fit/evaluate, synthetic data
//! * [`io`] SCLW weights, CLP1 clips and image directories
//! * [`efficiency`] parameter and FLOP accounting

pub mod autodiff;
pub mod backbone;
pub mod cells;
pub mod efficiency;
pub mod error;
pub mod init;
pub mod io;
pub mod model;
pub mod ops;
pub mod preproc;
pub mod store;
pub mod tensor;
pub mod train;

pub use backbone::BackboneSpec;
pub use cells::CellKind;
pub use efficiency::{Convention, EfficiencyReport};
pub use error::{Error, Result};
pub use model::{build_model, Fusion, Label, Model, ModelConfig, Prediction, StreamSet};
pub use preproc::{Clip, PrepConfig};
pub use store::{Provenance, WeightStore};
pub use tensor::{Scalar, Tensor};
pub use train::{Dataset, TrainConfig};
