//! Fixed-step simulation of the reduced flow `ẋ = f(x, Y(x))` and the
//! converse-Lyapunov estimate built from it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dae::DaeSystem;
use crate::error::{Error, Result};

/// Residual tolerance for the algebraic solve at each RK stage.
pub const ALGEBRAIC_TOL: f64 = 1e-10;

/// Weighting function `α` applied to the state norm inside the estimator.
pub trait ClassGamma {
    fn eval(&self, z: f64) -> f64;

    /// Exponent `m` of the polynomial bound `α(z) ≤ z^m`.
    fn bound_exponent(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GammaFunction {
    /// `α(z) = z^p`, valid for `p ≥ 1`.
    Power { exponent: f64 },
}

impl Default for GammaFunction {
    fn default() -> Self {
        GammaFunction::Power { exponent: 2.0 }
    }
}

impl GammaFunction {
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent >= 1.0) || !exponent.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "power weighting needs a finite exponent >= 1, got {exponent}"
            )));
        }
        Ok(GammaFunction::Power { exponent })
    }
}

impl ClassGamma for GammaFunction {
    fn eval(&self, z: f64) -> f64 {
        match *self {
            GammaFunction::Power { exponent: 2.0 } => z * z,
            GammaFunction::Power { exponent } => z.powf(exponent),
        }
    }

    fn bound_exponent(&self) -> f64 {
        match *self {
            GammaFunction::Power { exponent } => exponent,
        }
    }
}

/// Checks `α(0) = 0`, strict growth over `probes` and `α(z) ≤ z^m` at each probe.
///
/// `probes` must be ascending and start at 0.
pub fn gamma_validate<A: ClassGamma + ?Sized>(alpha: &A, probes: &[f64]) -> bool {
    if probes.first() != Some(&0.0) || probes.windows(2).any(|w| !(w[0] < w[1])) {
        return false;
    }
    let m = alpha.bound_exponent();
    if !(m > 0.0) {
        return false;
    }
    let values: Vec<f64> = probes.iter().map(|&z| alpha.eval(z)).collect();
    if values[0] != 0.0 || values.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return false;
    }
    probes
        .iter()
        .zip(&values)
        .all(|(&z, &a)| a <= z.powf(m) * (1.0 + 1e-12))
}

/// Sampled flow `φ(x0, t_i)`, `t_i = i·dt`, `i = 0..=round(t_n/dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub samples: Vec<DVector<f64>>,
    /// `Y(φ(x0, t_i))` aligned with `samples`.
    pub algebraic: Vec<DVector<f64>>,
    pub xi: f64,
    pub converged: bool,
    pub final_norm: f64,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| i as f64 * self.dt)
    }
}

/// One system active for sample steps `k` with `t_k < until`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub system: DaeSystem,
    pub until: f64,
}

fn check_grid(dt: f64, t_n: f64, xi: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(t_n >= dt) || !t_n.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon {t_n} shorter than dt {dt}"
        )));
    }
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "xi must be positive, got {xi}"
        )));
    }
    Ok((t_n / dt).round() as usize)
}

/// Classical RK4 on the shifted system from `x0`, sampled every `dt` up to `t_n`.
pub fn integrate(
    system: &DaeSystem,
    x0: &DVector<f64>,
    dt: f64,
    t_n: f64,
    xi: f64,
) -> Result<Trajectory> {
    let segments = [Segment {
        system: system.clone(),
        until: f64::INFINITY,
    }];
    integrate_piecewise(&segments, x0, dt, t_n, xi)
}

/// RK4 across a sequence of systems sharing one state space, switching at
/// segment boundaries. Used for timed network events.
pub fn integrate_piecewise(
    segments: &[Segment],
    x0: &DVector<f64>,
    dt: f64,
    t_n: f64,
    xi: f64,
) -> Result<Trajectory> {
    let steps = check_grid(dt, t_n, xi)?;
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidArgument("no segments to integrate".into()))?;
    let (n, m) = (first.system.n(), first.system.m());
    if segments
        .iter()
        .any(|s| s.system.n() != n || s.system.m() != m)
    {
        return Err(Error::InvalidArgument(
            "segments disagree on dimensions".into(),
        ));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: n,
            got: x0.len(),
        });
    }
    let boundaries: Vec<usize> = segments
        .iter()
        .map(|s| {
            if s.until.is_finite() {
                (s.until / dt).round().max(0.0) as usize
            } else {
                usize::MAX
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(steps + 1);
    let mut algebraic = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let first_sys = &first.system;
    let y_start = first_sys.equilibrium().y_star.clone();
    let mut y = solve_at(first_sys, &x, &y_start, 0.0)?;
    samples.push(x.clone());
    algebraic.push(y.clone());

    let mut seg = 0;
    for k in 0..steps {
        while seg + 1 < segments.len() && k >= boundaries[seg] {
            seg += 1;
        }
        let sys = &segments[seg].system;
        let t = k as f64 * dt;
        if seg > 0 && k == boundaries[seg - 1] {
            // The algebraic state jumps at an event; re-solve before stepping.
            y = solve_at(sys, &x, &y, t)?;
        }

        let (k1, y1) = stage(sys, &x, &y, t)?;
        let x2 = &x + &k1 * (0.5 * dt);
        let (k2, y2) = stage(sys, &x2, &y1, t)?;
        let x3 = &x + &k2 * (0.5 * dt);
        let (k3, y3) = stage(sys, &x3, &y2, t)?;
        let x4 = &x + &k3 * dt;
        let (k4, _) = stage(sys, &x4, &y3, t)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        let t_next = (k + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrajectoryDiverged { time: t_next });
        }
        y = solve_at(sys, &x, &y1, t_next)?;
        samples.push(x.clone());
        algebraic.push(y.clone());
    }

    let final_norm = samples.last().map(|s| s.norm()).unwrap_or(0.0);
    Ok(Trajectory {
        x0: x0.clone(),
        dt,
        horizon: steps as f64 * dt,
        samples,
        algebraic,
        xi,
        converged: final_norm < xi,
        final_norm,
    })
}

fn solve_at(
    sys: &DaeSystem,
    x: &DVector<f64>,
    y_guess: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    sys.solve_algebraic(x, y_guess, ALGEBRAIC_TOL)
        .map_err(|e| match e {
            Error::AlgebraicSolveFailure { .. } | Error::RegularityViolation(_) => {
                Error::TrajectoryAborted {
                    time: t,
                    reason: e.to_string(),
                }
            }
            other => other,
        })
}

fn stage(
    sys: &DaeSystem,
    x: &DVector<f64>,
    y_guess: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrajectoryDiverged { time: t });
    }
    let y = solve_at(sys, x, y_guess, t)?;
    let dx = sys.f(x, &y);
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrajectoryDiverged { time: t });
    }
    Ok((dx, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSample {
    pub x: DVector<f64>,
    pub v_hat: f64,
}

/// `V̂(x0) = Σ_i α(‖φ(x0, t_i)‖)·dt` over every stored sample.
pub fn estimate_lyapunov<A: ClassGamma + ?Sized>(
    traj: &Trajectory,
    alpha: &A,
) -> Result<LyapunovSample> {
    if !traj.converged {
        return Err(Error::NotStableSample {
            final_norm: traj.final_norm,
            xi: traj.xi,
        });
    }
    let v_hat = riemann_sum(&traj.samples, traj.dt, alpha);
    if let Some(tail) = tail_bound(traj, alpha) {
        log::debug!("truncation tail bound {tail:e} for V̂ = {v_hat:e}");
    }
    Ok(LyapunovSample {
        x: traj.x0.clone(),
        v_hat,
    })
}

fn riemann_sum<A: ClassGamma + ?Sized>(samples: &[DVector<f64>], dt: f64, alpha: &A) -> f64 {
    samples.iter().map(|s| alpha.eval(s.norm())).sum::<f64>() * dt
}

/// Estimate of the truncated tail `α(ξ)/λ`, with `λ` the norm decay rate
/// fitted over the last 10% of samples. `None` when no decay is visible.
pub fn tail_bound<A: ClassGamma + ?Sized>(traj: &Trajectory, alpha: &A) -> Option<f64> {
    let len = traj.samples.len();
    let span = len / 10;
    if span == 0 {
        return None;
    }
    let a = traj.samples[len - 1 - span].norm();
    let b = traj.samples[len - 1].norm();
    if !(a > 0.0 && b > 0.0 && b < a) {
        return None;
    }
    let lambda = (a / b).ln() / (span as f64 * traj.dt);
    Some(alpha.eval(traj.xi) / lambda)
}
