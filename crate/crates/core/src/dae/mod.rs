//! Semi-explicit differential-algebraic systems `ẋ = f(x, y)`, `0 = g(x, y)`.
//!
//! A [`DaeSystem`] couples a residual evaluator ([`DaeModel`]) with a verified
//! equilibrium and an optional coordinate shift. The shift is how the
//! equilibrium is moved to the origin before trajectories and Lyapunov values
//! are computed.

pub mod microgrid;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max-norm bound on the residual at a stored equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Relative singular-value threshold used for the rank test on `∂g/∂y`.
pub const RANK_RTOL: f64 = 1e-10;

/// Real part below which an eigenvalue counts as stable.
pub const HURWITZ_MARGIN: f64 = -1e-9;

/// Default iteration cap for the algebraic Newton solve.
pub const ALGEBRAIC_MAX_ITER: usize = 50;

/// Residual evaluator of a semi-explicit DAE.
///
/// Implementors provide `f` and `g`; analytic Jacobians are optional and fall
/// back to central finite differences.
pub trait DaeModel: Send + Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// Analytic partial derivatives, if the model has them.
    fn jacobians(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<Jacobians> {
        None
    }
}

/// Partial derivatives of `(f, g)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub fx: DMatrix<f64>,
    pub fy: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

type ResidualFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// A [`DaeModel`] built from two closures.
pub struct FnModel {
    n: usize,
    m: usize,
    f: Box<ResidualFn>,
    g: Box<ResidualFn>,
}

impl FnModel {
    pub fn new<F, G>(n: usize, m: usize, f: F, g: G) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnModel {
            n,
            m,
            f: Box::new(f),
            g: Box::new(g),
        }
    }

    /// An ODE `ẋ = f(x)` with no algebraic part.
    pub fn ode<F>(n: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnModel::new(n, 0, move |x, _| f(x), |_, _| DVector::zeros(0))
    }
}

impl DaeModel for FnModel {
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, y)
    }
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.g)(x, y)
    }
}

/// An equilibrium `(x*, y*)` together with the residual max-norm measured there.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x_star: DVector<f64>,
    pub y_star: DVector<f64>,
    pub residual_norm: f64,
}

/// Axis-aligned box in the differential state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Reduced linearization `A = Fx − Fy·Gy⁻¹·Gx` at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedJacobian {
    pub a: DMatrix<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl ReducedJacobian {
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        if self.a.nrows() == 0 {
            return Vec::new();
        }
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect()
    }

    /// True iff every eigenvalue has real part below `-1e-9`.
    pub fn is_hurwitz(&self) -> bool {
        let eig = self.eigenvalues();
        eig.iter()
            .all(|&(re, im)| re.is_finite() && im.is_finite() && re < HURWITZ_MARGIN)
    }

    /// Largest real part of the spectrum.
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|&(re, _)| re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A DAE with a verified equilibrium.
///
/// Evaluations happen at `(x + offset_x, y + offset_y)` in the underlying
/// model, so shifting never touches the model itself. Cloning is cheap.
#[derive(Clone)]
pub struct DaeSystem {
    model: Arc<dyn DaeModel>,
    offset_x: DVector<f64>,
    offset_y: DVector<f64>,
    equilibrium: Equilibrium,
    domain_hint: Option<DomainBox>,
}

impl fmt::Debug for DaeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DaeSystem")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("equilibrium", &self.equilibrium)
            .field("offset_x", &self.offset_x)
            .field("offset_y", &self.offset_y)
            .finish()
    }
}

impl DaeSystem {
    /// Wraps `model` and verifies `(x_star, y_star)` is an equilibrium.
    pub fn new(
        model: Arc<dyn DaeModel>,
        x_star: DVector<f64>,
        y_star: DVector<f64>,
    ) -> Result<Self> {
        let n = model.n();
        let m = model.m();
        if n == 0 {
            return Err(Error::InvalidArgument("DAE needs n >= 1".into()));
        }
        check_dim("x_star", n, x_star.len())?;
        check_dim("y_star", m, y_star.len())?;
        let mut system = DaeSystem {
            model,
            offset_x: DVector::zeros(n),
            offset_y: DVector::zeros(m),
            equilibrium: Equilibrium {
                x_star,
                y_star,
                residual_norm: f64::INFINITY,
            },
            domain_hint: None,
        };
        let (fv, gv) = system.residual(&system.equilibrium.x_star, &system.equilibrium.y_star)?;
        let norm = fv.amax().max(if gv.is_empty() { 0.0 } else { gv.amax() });
        if !(norm <= EQUILIBRIUM_TOL) {
            return Err(Error::ModelInfeasible(format!(
                "stored equilibrium has residual {norm:e} > {EQUILIBRIUM_TOL:e}"
            )));
        }
        system.equilibrium.residual_norm = norm;
        Ok(system)
    }

    /// Wraps `model` around a reference point that need not be an equilibrium,
    /// e.g. the pre-event operating point of a network during a fault.
    pub fn transient(
        model: Arc<dyn DaeModel>,
        x_ref: DVector<f64>,
        y_ref: DVector<f64>,
    ) -> Result<Self> {
        let n = model.n();
        let m = model.m();
        if n == 0 {
            return Err(Error::InvalidArgument("DAE needs n >= 1".into()));
        }
        check_dim("x_ref", n, x_ref.len())?;
        check_dim("y_ref", m, y_ref.len())?;
        let mut system = DaeSystem {
            model,
            offset_x: DVector::zeros(n),
            offset_y: DVector::zeros(m),
            equilibrium: Equilibrium {
                x_star: x_ref,
                y_star: y_ref,
                residual_norm: f64::INFINITY,
            },
            domain_hint: None,
        };
        let (fv, gv) = system.residual(&system.equilibrium.x_star, &system.equilibrium.y_star)?;
        system.equilibrium.residual_norm =
            fv.amax().max(if gv.is_empty() { 0.0 } else { gv.amax() });
        Ok(system)
    }

    /// Finds an equilibrium by damped Newton from the guess, then wraps the model.
    pub fn with_equilibrium_search(
        model: Arc<dyn DaeModel>,
        x_guess: DVector<f64>,
        y_guess: DVector<f64>,
    ) -> Result<Self> {
        let (x, y) = solve_equilibrium(model.as_ref(), x_guess, y_guess)?;
        DaeSystem::new(model, x, y)
    }

    pub fn with_domain_hint(mut self, domain: DomainBox) -> Self {
        self.domain_hint = Some(domain);
        self
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.equilibrium
    }

    pub fn domain_hint(&self) -> Option<&DomainBox> {
        self.domain_hint.as_ref()
    }

    /// Accumulated shift relative to the underlying model's coordinates.
    pub fn offset(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.offset_x, &self.offset_y)
    }

    pub fn model(&self) -> &Arc<dyn DaeModel> {
        &self.model
    }

    pub fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.model.f(&(x + &self.offset_x), &(y + &self.offset_y))
    }

    pub fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        if self.m() == 0 {
            return DVector::zeros(0);
        }
        self.model.g(&(x + &self.offset_x), &(y + &self.offset_y))
    }

    /// Both residuals, with dimension checks.
    pub fn residual(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("x", self.n(), x.len())?;
        check_dim("y", self.m(), y.len())?;
        Ok((self.f(x, y), self.g(x, y)))
    }

    /// Partial derivatives at `(x, y)`: analytic when the model provides
    /// them, central differences otherwise.
    pub fn jacobians(&self, x: &DVector<f64>, y: &DVector<f64>) -> Jacobians {
        let xs = x + &self.offset_x;
        let ys = y + &self.offset_y;
        self.model
            .jacobians(&xs, &ys)
            .unwrap_or_else(|| finite_difference_jacobians(self.model.as_ref(), &xs, &ys))
    }

    /// Rank test on `∂g/∂y` by singular values.
    pub fn regularity_check(&self, x: &DVector<f64>, y: &DVector<f64>) -> bool {
        if self.m() == 0 {
            return true;
        }
        let gy = self.jacobians(x, y).gy;
        has_full_rank(&gy)
    }

    /// Newton solve of `g(x, y) = 0` for `y` from `y_guess`, i.e. `Y(x)`.
    pub fn solve_algebraic(
        &self,
        x: &DVector<f64>,
        y_guess: &DVector<f64>,
        tol: f64,
    ) -> Result<DVector<f64>> {
        self.solve_algebraic_with(x, y_guess, tol, ALGEBRAIC_MAX_ITER)
    }

    pub fn solve_algebraic_with(
        &self,
        x: &DVector<f64>,
        y_guess: &DVector<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Result<DVector<f64>> {
        check_dim("x", self.n(), x.len())?;
        check_dim("y", self.m(), y_guess.len())?;
        if self.m() == 0 {
            return Ok(DVector::zeros(0));
        }
        let mut y = y_guess.clone();
        let mut gv = self.g(x, &y);
        for _ in 0..max_iter {
            if !gv.iter().all(|v| v.is_finite()) {
                break;
            }
            if gv.amax() <= tol {
                return Ok(y);
            }
            let gy = self.jacobians(x, &y).gy;
            let step = gy.lu().solve(&gv).ok_or_else(|| {
                Error::RegularityViolation(format!("dg/dy singular at x = {:?}", x.as_slice()))
            })?;
            if !step.iter().all(|v| v.is_finite()) {
                return Err(Error::RegularityViolation(
                    "Newton step is not finite".into(),
                ));
            }
            y -= step;
            gv = self.g(x, &y);
        }
        if gv.iter().all(|v| v.is_finite()) && gv.amax() <= tol {
            return Ok(y);
        }
        Err(Error::AlgebraicSolveFailure {
            iterations: max_iter,
            residual: gv.amax(),
        })
    }

    /// `A = Fx − Fy·Gy⁻¹·Gx` at `(x, y)`.
    pub fn reduced_matrix(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<ReducedJacobian> {
        check_dim("x", self.n(), x.len())?;
        check_dim("y", self.m(), y.len())?;
        let j = self.jacobians(x, y);
        let a = if self.m() == 0 {
            j.fx
        } else {
            if !has_full_rank(&j.gy) {
                return Err(Error::RegularityViolation(
                    "dg/dy rank deficient at evaluation point".into(),
                ));
            }
            let gy_inv_gx = j.gy.lu().solve(&j.gx).ok_or_else(|| {
                Error::RegularityViolation("dg/dy singular at evaluation point".into())
            })?;
            &j.fx - &j.fy * gy_inv_gx
        };
        Ok(ReducedJacobian {
            a,
            x: x.clone(),
            y: y.clone(),
        })
    }

    /// Reduced matrix at the stored equilibrium.
    pub fn reduced_matrix_at_equilibrium(&self) -> Result<ReducedJacobian> {
        self.reduced_matrix(&self.equilibrium.x_star, &self.equilibrium.y_star)
    }

    /// Same system in coordinates `x̄ = x − dx`, `ȳ = y − dy`.
    pub fn shift_by(&self, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<DaeSystem> {
        check_dim("dx", self.n(), dx.len())?;
        check_dim("dy", self.m(), dy.len())?;
        let equilibrium = Equilibrium {
            x_star: &self.equilibrium.x_star - dx,
            y_star: &self.equilibrium.y_star - dy,
            residual_norm: self.equilibrium.residual_norm,
        };
        let domain_hint = self.domain_hint.as_ref().map(|d| DomainBox {
            lower: d.lower.iter().zip(dx.iter()).map(|(l, s)| l - s).collect(),
            upper: d.upper.iter().zip(dx.iter()).map(|(u, s)| u - s).collect(),
        });
        Ok(DaeSystem {
            model: Arc::clone(&self.model),
            offset_x: &self.offset_x + dx,
            offset_y: &self.offset_y + dy,
            equilibrium,
            domain_hint,
        })
    }

    /// Moves the stored equilibrium to the origin.
    pub fn shift_to_origin(&self) -> DaeSystem {
        let dx = self.equilibrium.x_star.clone();
        let dy = self.equilibrium.y_star.clone();
        self.shift_by(&dx, &dy)
            .expect("equilibrium dimensions are checked at construction")
    }

    pub fn is_at_origin(&self) -> bool {
        self.equilibrium.x_star.iter().all(|v| *v == 0.0)
            && self.equilibrium.y_star.iter().all(|v| *v == 0.0)
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn has_full_rank(gy: &DMatrix<f64>) -> bool {
    if gy.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let sv = gy.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > RANK_RTOL * max
}

fn fd_step(c: f64) -> f64 {
    (1e-6 * c.abs()).max(1e-6)
}

/// Central-difference Jacobians of a model.
pub fn finite_difference_jacobians(
    model: &dyn DaeModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Jacobians {
    let n = model.n();
    let m = model.m();
    let mut fx = DMatrix::zeros(n, n);
    let mut fy = DMatrix::zeros(n, m);
    let mut gx = DMatrix::zeros(m, n);
    let mut gy = DMatrix::zeros(m, m);

    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let (f_hi, g_hi) = (model.f(&xp, y), model.g(&xp, y));
        xp[j] = x[j] - h;
        let (f_lo, g_lo) = (model.f(&xp, y), model.g(&xp, y));
        xp[j] = x[j];
        fx.set_column(j, &((f_hi - f_lo) / (2.0 * h)));
        if m > 0 {
            gx.set_column(j, &((g_hi - g_lo) / (2.0 * h)));
        }
    }
    let mut yp = y.clone();
    for j in 0..m {
        let h = fd_step(y[j]);
        yp[j] = y[j] + h;
        let (f_hi, g_hi) = (model.f(x, &yp), model.g(x, &yp));
        yp[j] = y[j] - h;
        let (f_lo, g_lo) = (model.f(x, &yp), model.g(x, &yp));
        yp[j] = y[j];
        fy.set_column(j, &((f_hi - f_lo) / (2.0 * h)));
        gy.set_column(j, &((g_hi - g_lo) / (2.0 * h)));
    }
    Jacobians { fx, fy, gx, gy }
}

/// Damped Newton on the stacked residual `(f; g) = 0` in `(x, y)`.
pub fn solve_equilibrium(
    model: &dyn DaeModel,
    x_guess: DVector<f64>,
    y_guess: DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-12;

    let n = model.n();
    let m = model.m();
    check_dim("x_guess", n, x_guess.len())?;
    check_dim("y_guess", m, y_guess.len())?;

    let stacked = |x: &DVector<f64>, y: &DVector<f64>| {
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&model.f(x, y));
        if m > 0 {
            r.rows_mut(n, m).copy_from(&model.g(x, y));
        }
        r
    };

    let mut x = x_guess;
    let mut y = y_guess;
    let mut res = stacked(&x, &y);
    let mut norm = res.amax();
    for _ in 0..MAX_ITER {
        if !norm.is_finite() {
            break;
        }
        if norm <= TOL {
            return Ok((x, y));
        }
        let j = model
            .jacobians(&x, &y)
            .unwrap_or_else(|| finite_difference_jacobians(model, &x, &y));
        let mut jac = DMatrix::zeros(n + m, n + m);
        jac.view_mut((0, 0), (n, n)).copy_from(&j.fx);
        if m > 0 {
            jac.view_mut((0, n), (n, m)).copy_from(&j.fy);
            jac.view_mut((n, 0), (m, n)).copy_from(&j.gx);
            jac.view_mut((n, n), (m, m)).copy_from(&j.gy);
        }
        let step = jac.lu().solve(&res).ok_or_else(|| {
            Error::ModelInfeasible("equilibrium Newton Jacobian is singular".into())
        })?;

        // Backtrack until the residual max-norm decreases.
        let mut lambda = 1.0;
        loop {
            let xt = &x - step.rows(0, n) * lambda;
            let yt = &y - step.rows(n, m) * lambda;
            let rt = stacked(&xt, &yt);
            let nt = rt.amax();
            if nt.is_finite() && (nt < norm || lambda < 1e-4) {
                x = xt;
                y = yt;
                res = rt;
                norm = nt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm <= EQUILIBRIUM_TOL {
        return Ok((x, y));
    }
    Err(Error::ModelInfeasible(format!(
        "equilibrium search did not converge (residual {norm:e})"
    )))
}
