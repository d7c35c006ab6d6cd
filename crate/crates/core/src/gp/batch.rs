use nalgebra::{DMatrix, DVector};

use super::{KernelSpec, PosteriorEval};
use crate::error::{Error, Result};

const JITTER: f64 = 1e-10;

/// Exact posterior from all `(points, observations)` at `x`, via Cholesky of
/// `K + σ²I`.
pub fn batch_posterior(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    observations: &[f64],
    x: &[f64],
) -> Result<PosteriorEval> {
    if points.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            what: "observations",
            expected: points.len(),
            got: observations.len(),
        });
    }
    let prior = kernel.eval(x, x);
    let n = points.len();
    if n == 0 {
        return Ok(PosteriorEval {
            mu: 0.0,
            sigma: prior.sqrt(),
        });
    }
    let mut gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&points[i], &points[j]));
    for i in 0..n {
        gram[(i, i)] += kernel.noise_variance;
    }
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..n {
                gram[(i, i)] += JITTER;
            }
            gram.cholesky()
                .ok_or(Error::IllConditionedKernel { step: n as u64 })?
        }
    };
    let kx = DVector::from_iterator(n, points.iter().map(|p| kernel.eval(p, x)));
    let y = DVector::from_column_slice(observations);
    let mu = kx.dot(&chol.solve(&y));
    let var = prior - kx.dot(&chol.solve(&kx));
    Ok(PosteriorEval {
        mu,
        sigma: var.max(0.0).sqrt(),
    })
}
