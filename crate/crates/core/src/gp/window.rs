use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::shift::{extend_matrix, extend_vector, head, shift_diagonal};
use super::{KernelSpec, PosteriorEval};
use crate::error::{Error, Result};

/// Negative posterior variance down to this value is treated as rounding.
pub const VARIANCE_SLACK: f64 = 1e-10;

/// Gaussian-likelihood site derivatives `(q, r)` for one observation.
pub fn gaussian_site(obs: f64, mu_prev: f64, var_prev: f64, noise_var: f64) -> (f64, f64) {
    let denom = noise_var + var_prev;
    ((obs - mu_prev) / denom, -1.0 / denom)
}

/// Sliding-window online GP over the `h` most recent samples.
///
/// Slot 0 holds the oldest sample. `alpha` and `c` are rebuilt from the
/// window contents after every push; `k` is carried forward by shifting.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    h: usize,
    step: u64,
    kernel: KernelSpec,
    points: Vec<Vec<f64>>,
    observations: Vec<f64>,
    alpha: DVector<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl WindowState {
    /// Window filled with `h` copies of the origin observed at 0.
    pub fn initial(h: usize, dim: usize, kernel: KernelSpec) -> Result<Self> {
        if h == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "window needs h >= 1 and dim >= 1 (got h = {h}, dim = {dim})"
            )));
        }
        kernel.validate()?;
        let points = vec![vec![0.0; dim]; h];
        let observations = vec![0.0; h];
        let k = DMatrix::from_fn(h, h, |i, j| kernel.eval(&points[i], &points[j]));
        let (alpha, c) = sweep(&k, &observations, kernel.noise_variance, 0)?;
        Ok(WindowState {
            h,
            step: 0,
            kernel,
            points,
            observations,
            alpha,
            c,
            k,
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Number of samples pushed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Largest observation currently in the window.
    pub fn max_observation(&self) -> f64 {
        self.observations
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Evicts the oldest sample, appends `(x_new, obs_new)` and refits.
    pub fn push(&self, x_new: &[f64], obs_new: f64) -> Result<WindowState> {
        if x_new.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "window point",
                expected: self.dim(),
                got: x_new.len(),
            });
        }
        if !obs_new.is_finite() || x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "window sample must be finite".into(),
            ));
        }
        let h = self.h;
        let mut points = Vec::with_capacity(h);
        points.extend_from_slice(&self.points[1..]);
        points.push(x_new.to_vec());
        let mut observations = Vec::with_capacity(h);
        observations.extend_from_slice(&self.observations[1..]);
        observations.push(obs_new);

        let mut k = shift_diagonal(&self.k);
        for i in 0..h - 1 {
            let v = self.kernel.eval(&points[i], x_new);
            k[(i, h - 1)] = v;
            k[(h - 1, i)] = v;
        }
        k[(h - 1, h - 1)] = self.kernel.eval(x_new, x_new);

        let step = self.step + 1;
        let (alpha, c) = sweep(&k, &observations, self.kernel.noise_variance, step)?;
        Ok(WindowState {
            h,
            step,
            kernel: self.kernel,
            points,
            observations,
            alpha,
            c,
            k,
        })
    }

    pub fn kernel_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.h, self.points.iter().map(|p| self.kernel.eval(p, x)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<PosteriorEval> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "query point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let kx = self.kernel_vector(x);
        let mu = self.alpha.dot(&kx);
        let var = self.kernel.eval(x, x) + kx.dot(&(&self.c * &kx));
        if var < -VARIANCE_SLACK || var.is_nan() {
            return Err(Error::PosteriorInconsistency { variance: var });
        }
        Ok(PosteriorEval {
            mu,
            sigma: var.max(0.0).sqrt(),
        })
    }

    pub fn to_snapshot(&self) -> WindowSnapshot {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        WindowSnapshot {
            step: self.step,
            h: self.h,
            kernel: self.kernel,
            points: self.points.clone(),
            observations: self.observations.clone(),
            alpha: self.alpha.iter().copied().collect(),
            c: rows(&self.c),
            k: rows(&self.k),
        }
    }

    /// Restores a state exactly as saved; nothing is recomputed.
    pub fn from_snapshot(snap: WindowSnapshot) -> Result<Self> {
        let h = snap.h;
        let bad = |msg: String| Err(Error::InvalidConfig(format!("snapshot: {msg}")));
        if h == 0 {
            return bad("h must be >= 1".into());
        }
        snap.kernel.validate()?;
        if snap.points.len() != h || snap.observations.len() != h || snap.alpha.len() != h {
            return bad(format!(
                "points, observations and alpha must have {h} entries"
            ));
        }
        let dim = snap.points[0].len();
        if dim == 0 || snap.points.iter().any(|p| p.len() != dim) {
            return bad("points must share one non-zero dimension".into());
        }
        let square = |name: &str, m: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if m.len() != h || m.iter().any(|r| r.len() != h) {
                return Err(Error::InvalidConfig(format!(
                    "snapshot: {name} must be {h}x{h}"
                )));
            }
            Ok(DMatrix::from_fn(h, h, |i, j| m[i][j]))
        };
        let c = square("C", &snap.c)?;
        let k = square("K", &snap.k)?;
        if c != c.transpose() {
            return bad("C is not symmetric".into());
        }
        Ok(WindowState {
            h,
            step: snap.step,
            kernel: snap.kernel,
            points: snap.points,
            observations: snap.observations,
            alpha: DVector::from_vec(snap.alpha),
            c,
            k,
        })
    }
}

/// Runs the site recursion over the window from an empty posterior.
///
/// Sub-step `j` sees the first `j` samples: its kernel vector is the leading
/// part of column `j` of `k`, and the coefficient vector and matrix grow by one
/// slot.
fn sweep(
    k: &DMatrix<f64>,
    observations: &[f64],
    noise_var: f64,
    step: u64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let h = observations.len();
    let mut alpha = DVector::zeros(0);
    let mut c = DMatrix::zeros(0, 0);
    for j in 0..h {
        let kj = head(&k.column(j).into_owned(), j);
        let ck = &c * &kj;
        let mu = alpha.dot(&kj);
        let var = k[(j, j)] + kj.dot(&ck);
        if var < -VARIANCE_SLACK || !(noise_var + var.max(0.0) > 0.0) {
            return Err(Error::IllConditionedKernel { step });
        }
        let (q, r) = gaussian_site(observations[j], mu, var.max(0.0), noise_var);
        let mut s = extend_vector(&ck);
        s[j] = 1.0;
        alpha = extend_vector(&alpha) + &s * q;
        c = extend_matrix(&c) + (&s * s.transpose()) * r;
    }
    if alpha.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditionedKernel { step });
    }
    Ok((alpha, c))
}

/// Serialized form of a [`WindowState`]; matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSnapshot {
    pub step: u64,
    pub h: usize,
    pub kernel: KernelSpec,
    pub points: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
}
