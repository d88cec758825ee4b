//! Hybrid deep + hand-crafted feature toolkit for two-phase image analysis:
//! a detection phase that concatenates feature spaces and votes over an SVM,
//! MLP and AdaBoost ensemble, and a classification phase that fuses CNN
//! features with HOG descriptors into an SVM.

pub mod classifiers;
mod codec;
pub mod data;
pub mod error;
pub mod fusion;
pub mod hog;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod renet;
pub mod tensor;

pub use error::{Error, Result};
