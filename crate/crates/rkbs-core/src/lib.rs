//! Measure-parameterized deep networks with group-sparse training and
//! certified layer-wise sparsification.
//!
//! Layers are integral maps `x -> sum_k w_k rho(x, theta_k)` driven by
//! finitely-atomic vector measures. Training penalizes the total-variation
//! norm (sum of atom weight norms); the sparsification pipeline refits each
//! layer as a TV-minimizing interpolation over its training representations
//! and exports an ordinary weight/bias network whose widths are bounded by
//! `N * d_{l+1}`.

pub mod basis;
pub mod error;
pub mod measure;
pub mod model;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
