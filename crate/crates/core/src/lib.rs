//! Text-independent speaker verification toolkit.
//!
//! The crate covers the full chain from PCM audio to detection-error
//! trade-off curves: MFCC and line-spectral-frequency front-ends, feature
//! fusion with cepstral mean subtraction, PCA dimensionality reduction,
//! per-speaker RBF-SVM models trained with SMO, SNR-controlled noise
//! mixing, and EER/DET evaluation. A synthetic corpus generator provides
//! end-to-end test material without any licensed speech data.

pub mod audio;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod lsf;
pub mod mfcc;
pub mod pca;
pub mod pipeline;
pub mod svm;

pub use error::{Error, Result};
