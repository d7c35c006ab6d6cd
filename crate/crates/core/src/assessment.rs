//! The online assessment loop: pick the next initial state by an upper
//! confidence rule, screen it by simulation, feed stable samples to the
//! window, and read off the confidence level set.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dae::DaeSystem;
use crate::error::{Error, Result};
use crate::gp::{KernelSpec, PosteriorEval, WindowSnapshot, WindowState};
use crate::normal::beta_delta;
use crate::trajectory::{estimate_lyapunov, integrate, GammaFunction};

/// Axis-aligned grid over one or two coordinates of the shifted state.
/// All other coordinates are held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingDomain {
    /// 0-based state indices.
    pub axes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl SamplingDomain {
    pub fn validate(&self, n: usize) -> Result<()> {
        let k = self.axes.len();
        let fail = |msg: String| Err(Error::InvalidConfig(format!("domain: {msg}")));
        if k == 0 || k > 2 {
            return fail(format!("expected 1 or 2 axes, got {k}"));
        }
        if self.lower.len() != k || self.upper.len() != k || self.resolution.len() != k {
            return fail("lower, upper and resolution must match axes".into());
        }
        if k == 2 && self.axes[0] == self.axes[1] {
            return fail("axes must be distinct".into());
        }
        for a in 0..k {
            if self.axes[a] >= n {
                return fail(format!("axis {} outside state dimension {n}", self.axes[a]));
            }
            if !(self.lower[a] < self.upper[a])
                || !self.lower[a].is_finite()
                || !self.upper[a].is_finite()
            {
                return fail(format!("axis {a} needs finite lower < upper"));
            }
            if self.resolution[a] < 2 {
                return fail(format!("axis {a} resolution must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_value(&self, a: usize, i: usize) -> f64 {
        let (lo, hi) = (self.lower[a], self.upper[a]);
        if i + 1 == self.resolution[a] {
            return hi;
        }
        lo + (hi - lo) * i as f64 / (self.resolution[a] - 1) as f64
    }

    /// Axis coordinates of grid point `index`; the first axis varies slowest.
    pub fn coords(&self, index: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axis_value(0, index)],
            _ => {
                let r1 = self.resolution[1];
                vec![
                    self.axis_value(0, index / r1),
                    self.axis_value(1, index % r1),
                ]
            }
        }
    }

    /// Grid point `index` embedded in the full `n`-dimensional state.
    pub fn state(&self, index: usize, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (&axis, v) in self.axes.iter().zip(self.coords(index)) {
            x[axis] = v;
        }
        x
    }
}

fn default_retries() -> usize {
    10
}

fn default_h() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentConfig {
    pub delta: f64,
    pub xi: f64,
    pub t_n: f64,
    pub dt: f64,
    #[serde(default = "default_h")]
    pub h: usize,
    pub domain: SamplingDomain,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub gamma: GammaFunction,
    pub max_steps: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub halt_on_failure: bool,
}

impl AssessmentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta: must lie in (0, 1)");
        }
        if !(self.xi > 0.0) {
            return fail("xi: must be positive");
        }
        if !(self.dt > 0.0) || !(self.t_n >= self.dt) {
            return fail("dt/t_n: need dt > 0 and t_n >= dt");
        }
        if self.h == 0 {
            return fail("h: window width must be >= 1");
        }
        if self.max_retries == 0 {
            return fail("max_retries: must be >= 1");
        }
        let GammaFunction::Power { exponent } = self.gamma;
        if !(exponent >= 1.0) {
            return fail("gamma.exponent: must be >= 1");
        }
        self.kernel
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("kernel: {e}")))?;
        self.domain.validate(n)
    }

    pub fn beta(&self) -> Result<f64> {
        beta_delta(self.delta)
    }
}

/// One evaluated grid point of an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEval {
    pub coords: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub member: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaEstimate {
    /// Loop iteration that produced this estimate; 0 is the initial window.
    pub iteration: usize,
    /// Window step counter (accepted samples so far).
    pub step: u64,
    pub delta: f64,
    pub beta: f64,
    pub v_hat_max: f64,
    pub grid: Vec<GridEval>,
}

impl RoaEstimate {
    pub fn members(&self) -> impl Iterator<Item = &GridEval> {
        self.grid.iter().filter(|g| g.member)
    }
}

/// Posterior over every grid point, in grid order.
pub fn posterior_surface(
    state: &WindowState,
    domain: &SamplingDomain,
) -> Result<Vec<PosteriorEval>> {
    let n = state.dim();
    (0..domain.len())
        .into_par_iter()
        .map(|i| state.predict(&domain.state(i, n)))
        .collect()
}

/// Index of the largest `μ + βσ` outside `excluded`; ties go to the lowest index.
pub fn argmax_acquisition(
    surface: &[PosteriorEval],
    beta: f64,
    excluded: &BTreeSet<usize>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in surface.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let score = p.mu + beta * p.sigma;
        match best {
            Some((_, b)) if !(score > b) => {}
            _ => best = Some((i, score)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::DomainExhausted)
}

/// Grid index of the next sample.
pub fn select_sample(
    state: &WindowState,
    config: &AssessmentConfig,
    excluded: &BTreeSet<usize>,
) -> Result<usize> {
    let surface = posterior_surface(state, &config.domain)?;
    argmax_acquisition(&surface, config.beta()?, excluded)
}

fn estimate_from_surface(
    state: &WindowState,
    config: &AssessmentConfig,
    surface: &[PosteriorEval],
    iteration: usize,
) -> Result<RoaEstimate> {
    let beta = config.beta()?;
    let v_hat_max = state.max_observation();
    let grid = surface
        .iter()
        .enumerate()
        .map(|(i, p)| GridEval {
            coords: config.domain.coords(i),
            mu: p.mu,
            sigma: p.sigma,
            member: p.mu + beta * p.sigma <= v_hat_max,
        })
        .collect();
    Ok(RoaEstimate {
        iteration,
        step: state.step(),
        delta: config.delta,
        beta,
        v_hat_max,
        grid,
    })
}

/// Membership mask of the confidence level set for the current window.
pub fn roa_grid(state: &WindowState, config: &AssessmentConfig) -> Result<RoaEstimate> {
    let surface = posterior_surface(state, &config.domain)?;
    estimate_from_surface(state, config, &surface, 0)
}

/// One simulated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub iteration: usize,
    pub grid_index: usize,
    pub point: Vec<f64>,
    pub accepted: bool,
    pub v_hat: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: WindowState,
    pub attempts: Vec<AttemptRecord>,
    pub excluded: BTreeSet<usize>,
    pub accepted: bool,
}

/// Screens `x0` by simulation. `Ok(None)` means the trajectory does not
/// settle within `ξ` or breaks down on the way.
pub fn screen(system: &DaeSystem, x0: &[f64], config: &AssessmentConfig) -> Result<Option<f64>> {
    let x0 = DVector::from_column_slice(x0);
    match integrate(system, &x0, config.dt, config.t_n, config.xi) {
        Ok(traj) if traj.converged => Ok(Some(estimate_lyapunov(&traj, &config.gamma)?.v_hat)),
        Ok(_) => Ok(None),
        Err(Error::TrajectoryAborted { .. } | Error::TrajectoryDiverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One iteration of the loop against a precomputed posterior surface.
pub fn assessment_step_with_surface(
    system: &DaeSystem,
    state: &WindowState,
    config: &AssessmentConfig,
    excluded: &BTreeSet<usize>,
    surface: &[PosteriorEval],
    iteration: usize,
) -> Result<StepOutcome> {
    let beta = config.beta()?;
    let n = state.dim();
    let mut excluded = excluded.clone();
    let mut attempts = Vec::new();
    for _ in 0..config.max_retries {
        let index = match argmax_acquisition(surface, beta, &excluded) {
            Ok(i) => i,
            Err(Error::DomainExhausted) if !attempts.is_empty() => break,
            Err(e) => return Err(e),
        };
        let point = config.domain.state(index, n);
        let started = Instant::now();
        let v_hat = screen(system, &point, config)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        attempts.push(AttemptRecord {
            iteration,
            grid_index: index,
            point: point.clone(),
            accepted: v_hat.is_some(),
            v_hat,
            wall_ms,
        });
        match v_hat {
            Some(v) => {
                let state = state.push(&point, v)?;
                return Ok(StepOutcome {
                    state,
                    attempts,
                    excluded,
                    accepted: true,
                });
            }
            None => {
                excluded.insert(index);
            }
        }
    }
    Ok(StepOutcome {
        state: state.clone(),
        attempts,
        excluded,
        accepted: false,
    })
}

/// Select, screen and (on success) push one sample.
pub fn assessment_step(
    system: &DaeSystem,
    state: &WindowState,
    config: &AssessmentConfig,
    excluded: &BTreeSet<usize>,
) -> Result<StepOutcome> {
    let surface = posterior_surface(state, &config.domain)?;
    assessment_step_with_surface(system, state, config, excluded, &surface, 0)
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSnapshot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
    #[serde(flatten)]
    pub window: WindowSnapshot,
    /// Last completed loop iteration.
    pub iteration: usize,
    /// Grid indices rejected so far.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub state: WindowState,
    pub excluded: BTreeSet<usize>,
    pub iteration: usize,
}

impl ResumePoint {
    pub fn from_snapshot(snap: AssessmentSnapshot) -> Result<Self> {
        Ok(ResumePoint {
            state: WindowState::from_snapshot(snap.window)?,
            excluded: snap.excluded.into_iter().collect(),
            iteration: snap.iteration,
        })
    }

    pub fn to_snapshot(&self) -> AssessmentSnapshot {
        AssessmentSnapshot {
            window: self.state.to_snapshot(),
            iteration: self.iteration,
            excluded: self.excluded.iter().copied().collect(),
            meta: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssessmentRun {
    pub estimates: Vec<RoaEstimate>,
    pub log: Vec<AttemptRecord>,
    pub last: ResumePoint,
}

/// Shifts `system` to its equilibrium and refuses to start unless that
/// equilibrium is Hurwitz-stable.
pub fn prepare_system(system: &DaeSystem) -> Result<DaeSystem> {
    let shifted = system.shift_to_origin();
    let a = shifted.reduced_matrix_at_equilibrium()?;
    if !a.is_hurwitz() {
        return Err(Error::UnstableEquilibrium);
    }
    Ok(shifted)
}

/// Runs `config.max_steps` iterations, collecting every estimate in memory.
pub fn run_assessment(system: &DaeSystem, config: &AssessmentConfig) -> Result<AssessmentRun> {
    let mut estimates = Vec::new();
    let mut log = Vec::new();
    let last = run_assessment_streaming(system, config, None, |est, attempts| {
        estimates.push(est.clone());
        log.extend_from_slice(attempts);
        Ok(())
    })?;
    Ok(AssessmentRun {
        estimates,
        log,
        last,
    })
}

/// Runs the loop, handing each estimate and the attempts that led to it to
/// `emit`. The initial estimate is emitted only on a fresh start.
///
/// With `resume`, the loop continues after the saved iteration and runs
/// `config.max_steps` further iterations.
pub fn run_assessment_streaming<F>(
    system: &DaeSystem,
    config: &AssessmentConfig,
    resume: Option<ResumePoint>,
    mut emit: F,
) -> Result<ResumePoint>
where
    F: FnMut(&RoaEstimate, &[AttemptRecord]) -> Result<()>,
{
    let system = prepare_system(system)?;
    let n = system.n();
    config.validate(n)?;

    let (mut state, mut excluded, start) = match resume {
        Some(r) => {
            if r.state.dim() != n {
                return Err(Error::DimensionMismatch {
                    what: "snapshot points",
                    expected: n,
                    got: r.state.dim(),
                });
            }
            if r.state.h() != config.h || r.state.kernel() != &config.kernel {
                return Err(Error::InvalidConfig(
                    "snapshot window width or kernel differs from the assessment config".into(),
                ));
            }
            (r.state, r.excluded, r.iteration)
        }
        None => (
            WindowState::initial(config.h, n, config.kernel)?,
            BTreeSet::new(),
            0,
        ),
    };

    let mut surface = posterior_surface(&state, &config.domain)?;
    if start == 0 {
        emit(&estimate_from_surface(&state, config, &surface, 0)?, &[])?;
    }
    let mut iteration = start;
    for _ in 0..config.max_steps {
        iteration += 1;
        let outcome =
            assessment_step_with_surface(&system, &state, config, &excluded, &surface, iteration)?;
        excluded = outcome.excluded;
        if outcome.accepted {
            state = outcome.state;
            surface = posterior_surface(&state, &config.domain)?;
        } else {
            log::warn!(
                "iteration {iteration}: no stable sample in {} attempts",
                outcome.attempts.len()
            );
            if config.halt_on_failure {
                return Err(Error::StepFailed {
                    iteration,
                    attempts: outcome.attempts.len(),
                });
            }
        }
        emit(
            &estimate_from_surface(&state, config, &surface, iteration)?,
            &outcome.attempts,
        )?;
    }
    Ok(ResumePoint {
        state,
        excluded,
        iteration,
    })
}
