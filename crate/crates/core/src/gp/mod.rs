//! Gaussian-process regression of the Lyapunov function.
//!
//! [`batch_posterior`] is the textbook closed form and serves as the reference
//! for [`WindowState`], which keeps only the `h` most recent samples and
//! maintains the posterior in the `(α, C)` parametrization.

mod batch;
mod kernel;
mod shift;
mod window;

pub use batch::batch_posterior;
pub use kernel::{kernel_eval, KernelFamily, KernelSpec};
pub use shift::{extend_matrix, extend_vector, head, shift_diagonal};
pub use window::{gaussian_site, WindowSnapshot, WindowState, VARIANCE_SLACK};

/// Posterior mean and standard deviation at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEval {
    pub mu: f64,
    pub sigma: f64,
}
