//! Quaternion-enhanced axial-attention residual networks and their
//! convolutional / quaternion / axial baselines, built on a small dense
//! tensor engine with reverse-mode automatic differentiation.

pub mod autodiff;
pub mod axial;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod kernels;
pub mod kv;
pub mod nn;
pub mod quaternion;
pub mod recon;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use autodiff::{Gradients, Graph, ParamId, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
