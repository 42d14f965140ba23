//! Gradient-geometry laboratory for the knowledge-distillation balancing
//! parameter λ.
//!
//! The student objective is the convex combination
//! `L = λ·L_dist + (1−λ)·L_cls`. One SGD step with learning rate η changes
//! the loss, to first order, by `−η·Q(λ)` where
//!
//! ```text
//! Q(λ) = λ²‖∇L_dist‖² + (1−λ)²‖∇L_cls‖² + 2λ(1−λ)‖∇L_dist‖‖∇L_cls‖·cos φ
//! ```
//!
//! and φ is the angle between the two gradients. `Q` is a convex quadratic
//! in λ, so the predicted first-order descent can be steered in closed form.
//!
//! The crate is organised around that quantity:
//!
//! - [`geometry`] — closed forms for `Q(λ)`, its coefficients, and the λ
//!   controllers (min-descent vertex, max-descent endpoint, target-rate root).
//! - [`simulate`] — Monte Carlo sweeps of `Q(λ)` over sampled gradient
//!   magnitudes and angles, split into acute/obtuse regimes.
//! - [`nn`] — a small dense classifier with exact manual backpropagation,
//!   producing separate classification and distillation gradients.
//! - [`data`] — deterministic synthetic classification datasets.
//! - [`pipeline`] — teacher pretraining, student distillation with pluggable
//!   λ schedulers, and empirical verification of the first-order prediction.
//!
//! Everything is deterministic given a 64-bit seed: all randomness flows
//! through ChaCha8 generators with documented stream derivation (see
//! [`rng`]).

pub mod data;
pub mod geometry;
pub mod matrix;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod simulate;

pub use geometry::{
    BalanceParam, BracketCoeffs, GeometryError, GradientStats, LambdaBounds, LambdaRecommendation,
    StrategyTag, bracket_coeffs, bracket_minimum, bracket_value, cosine_between, lambda_for_target,
    lambda_max_descent, lambda_min_descent, predicted_delta,
};
pub use matrix::Matrix;
pub use nn::{Activation, Batch, FlatGrad, GradOrigin, LossBreakdown, Network, NnError};
