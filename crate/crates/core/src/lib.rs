//! Deep Adaptive Networks: stacked RBMs trained with mixed-norm weight decay,
//! quantized to sparse single-bit connections and evaluated with a
//! multiplier-free bit-packed inference engine.

pub mod classifier;
pub mod error;
pub mod experiment;
pub mod io;
pub mod numerics;
pub mod quantizer;
pub mod rbm;
pub mod regularizer;
pub mod sparse;
pub mod stack;

pub use classifier::{train_head, ClassifierHead, HeadConfig};
pub use error::{Error, Result};
pub use io::{load_idx, load_model, subsample, Dataset, SavedModel};
pub use numerics::{sigmoid, DenseMatrix, Rng};
pub use quantizer::{memory_report, QuantMode, QuantizationReport, QuantizedModel};
pub use rbm::{RbmParams, TrainConfig, VisibleKind};
pub use regularizer::{RegularizerConfig, RegularizerKind};
pub use sparse::{BitVector, FeatureMode, SparseBinaryLayer};
pub use stack::{train_stack, DanModel};
