//! Forward/backward numeric kernels over raw row-major slices.

pub mod attention;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod quat;
