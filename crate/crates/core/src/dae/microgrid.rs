//! Droop-controlled inverter microgrid on a lossless, purely inductive network.
//!
//! Inverter buses carry angle, frequency and voltage states with droop
//! feedback, plus a distributed-averaging integral controller `ζ`. Load buses
//! are algebraic: their active and reactive injections must equal the set
//! points.
//!
//! Angles are measured relative to the first inverter bus, which removes the
//! uniform-rotation invariance of the network equations. The differential
//! state is therefore
//!
//! ```text
//! x = (θ_k − θ_ref for inverters k ≠ ref, ω_I, U_I, ζ)     n = 4·|V_I| − 1
//! y = (θ_l − θ_ref, U_l for load buses l)                  m = 2·|V_L|
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DaeModel, DaeSystem, Jacobians};
use crate::error::{Error, Result};
use crate::trajectory::Segment;

/// Tolerance on `Σ P*` for the lossless balance check.
pub const POWER_BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    /// Branch susceptance in p.u. (negative for an inductive branch).
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetPoint {
    pub bus: usize,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "U")]
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub bus: usize,
    #[serde(rename = "KP")]
    pub kp: f64,
    #[serde(rename = "KQ")]
    pub kq: f64,
}

/// Single-branch susceptance scaling event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    /// 1-based index into `branches`.
    pub branch: usize,
    /// Event time in seconds.
    pub time: f64,
    #[serde(default)]
    pub scale: f64,
    #[serde(default = "default_clear_after")]
    pub clear_after: f64,
}

fn default_clear_after() -> f64 {
    0.1
}

/// Controller Laplacian, either as rows or flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LaplacianSpec {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

/// On-disk microgrid description. Bus numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridConfig {
    pub buses: usize,
    pub inverter_buses: Vec<usize>,
    pub load_buses: Vec<usize>,
    pub branches: Vec<BranchSpec>,
    pub set_points: Vec<SetPoint>,
    pub omega_star: f64,
    pub gains: Vec<GainSpec>,
    pub laplacian: LaplacianSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
}

const IEEE9_JSON: &str = include_str!("../../configs/ieee9.json");

impl MicrogridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner())))
    }

    /// The bundled 9-bus, 3-inverter case.
    pub fn ieee9() -> Self {
        Self::from_json(IEEE9_JSON).expect("bundled 9-bus config parses")
    }

    fn laplacian_matrix(&self) -> std::result::Result<DMatrix<f64>, String> {
        let k = self.inverter_buses.len();
        match &self.laplacian {
            LaplacianSpec::Rows(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(format!("laplacian must be {k}x{k}"));
                }
                Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
            }
            LaplacianSpec::Flat(v) => {
                if v.len() != k * k {
                    return Err(format!("laplacian must have {} entries", k * k));
                }
                Ok(DMatrix::from_row_slice(k, k, v))
            }
        }
    }

    /// Checks every structural invariant and reports each failure.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let m = self.buses;
        if m == 0 {
            issues.push("buses: must be >= 1".to_string());
            return issues;
        }
        if self.inverter_buses.is_empty() {
            issues.push("inverter_buses: at least one inverter bus is required".into());
        }
        let mut seen = vec![0u8; m + 1];
        for (key, list, tag) in [
            ("inverter_buses", &self.inverter_buses, 1u8),
            ("load_buses", &self.load_buses, 2u8),
        ] {
            for &b in list {
                if b == 0 || b > m {
                    issues.push(format!("{key}: bus {b} outside 1..={m}"));
                } else if seen[b] != 0 {
                    issues.push(format!("{key}: bus {b} listed twice"));
                } else {
                    seen[b] = tag;
                }
            }
        }
        for (b, _) in seen.iter().enumerate().skip(1).filter(|(_, t)| **t == 0) {
            issues.push(format!("bus {b} is neither an inverter nor a load bus"));
        }

        for (i, br) in self.branches.iter().enumerate() {
            let ok = |b: usize| b >= 1 && b <= m;
            if !ok(br.from) || !ok(br.to) || br.from == br.to {
                issues.push(format!(
                    "branches[{i}]: invalid endpoints {}-{}",
                    br.from, br.to
                ));
            }
            if !br.susceptance.is_finite() || br.susceptance >= 0.0 {
                issues.push(format!(
                    "branches[{i}].susceptance: {} is not inductive (must be < 0)",
                    br.susceptance
                ));
            }
        }

        let mut have_sp = vec![false; m + 1];
        for sp in &self.set_points {
            if sp.bus == 0 || sp.bus > m {
                issues.push(format!("set_points: bus {} outside 1..={m}", sp.bus));
                continue;
            }
            have_sp[sp.bus] = true;
            if !(sp.u > 0.0) {
                issues.push(format!("set_points[bus {}].U: must be positive", sp.bus));
            }
        }
        for (b, _) in have_sp
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, have)| !**have)
        {
            issues.push(format!("set_points: missing bus {b}"));
        }

        for &b in &self.inverter_buses {
            match self.gains.iter().find(|g| g.bus == b) {
                None => issues.push(format!("gains: missing inverter bus {b}")),
                Some(g) => {
                    if !(g.kp > 0.0) {
                        issues.push(format!("gains[bus {b}].KP: {} must be positive", g.kp));
                    }
                    if !(g.kq > 0.0) {
                        issues.push(format!("gains[bus {b}].KQ: {} must be positive", g.kq));
                    }
                }
            }
        }
        for g in &self.gains {
            if !self.inverter_buses.contains(&g.bus) {
                issues.push(format!("gains: bus {} is not an inverter bus", g.bus));
            }
        }

        match self.laplacian_matrix() {
            Err(e) => issues.push(format!("laplacian: {e}")),
            Ok(l) => {
                let k = l.nrows();
                for i in 0..k {
                    let row_sum: f64 = l.row(i).iter().sum();
                    if row_sum.abs() > 1e-12 {
                        issues.push(format!("laplacian: row {i} sums to {row_sum}, expected 0"));
                    }
                    for j in 0..k {
                        if (l[(i, j)] - l[(j, i)]).abs() > 1e-12 {
                            issues.push(format!("laplacian: not symmetric at ({i},{j})"));
                        }
                        if i != j && l[(i, j)] > 0.0 {
                            issues.push(format!("laplacian: off-diagonal ({i},{j}) is positive"));
                        }
                    }
                }
            }
        }

        if issues.is_empty() && !network_connected(m, &self.branches) {
            issues.push(
                "branches: network graph is disconnected (Laplacian rank < buses - 1)".into(),
            );
        }

        if let Some(d) = &self.disturbance {
            if d.branch == 0 || d.branch > self.branches.len() {
                issues.push(format!(
                    "disturbance.branch: {} outside 1..={}",
                    d.branch,
                    self.branches.len()
                ));
            }
            if !(d.time >= 0.0) {
                issues.push("disturbance.time: must be >= 0".into());
            }
            if !(d.clear_after >= 0.0) {
                issues.push("disturbance.clear_after: must be >= 0".into());
            }
            if !d.scale.is_finite() || d.scale < 0.0 {
                issues.push("disturbance.scale: must be finite and >= 0".into());
            }
        }
        issues
    }
}

/// Rank test on the weighted graph Laplacian of the network.
fn network_connected(m: usize, branches: &[BranchSpec]) -> bool {
    if m == 1 {
        return true;
    }
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for br in branches {
        let (i, j, w) = (br.from - 1, br.to - 1, br.susceptance.abs());
        lap[(i, j)] -= w;
        lap[(j, i)] -= w;
        lap[(i, i)] += w;
        lap[(j, j)] += w;
    }
    let sv = lap.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return false;
    }
    let rank = sv.iter().filter(|&&s| s > 1e-10 * max).count();
    rank == m - 1
}

/// Validated microgrid parameters with 0-based bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridModel {
    pub buses: usize,
    pub inverter_buses: Vec<usize>,
    pub load_buses: Vec<usize>,
    pub branches: Vec<BranchSpec>,
    /// Imaginary part of the bus admittance matrix.
    pub b: DMatrix<f64>,
    pub omega_star: f64,
    pub p_star: Vec<f64>,
    pub q_star: Vec<f64>,
    pub u_star: Vec<f64>,
    /// Droop gains, one per inverter in `inverter_buses` order.
    pub kp: Vec<f64>,
    pub kq: Vec<f64>,
    pub laplacian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Reference,
    X(usize),
    Y(usize),
}

impl MicrogridModel {
    pub fn from_config(cfg: &MicrogridConfig) -> Result<Self> {
        let issues = cfg.validate();
        if let Some(first) = issues.first() {
            return Err(Error::InvalidConfig(first.clone()));
        }
        let m = cfg.buses;
        let mut p_star = vec![0.0; m];
        let mut q_star = vec![0.0; m];
        let mut u_star = vec![1.0; m];
        for sp in &cfg.set_points {
            p_star[sp.bus - 1] = sp.p;
            q_star[sp.bus - 1] = sp.q;
            u_star[sp.bus - 1] = sp.u;
        }
        let gain = |b: usize| cfg.gains.iter().find(|g| g.bus == b).expect("validated");
        let kp = cfg.inverter_buses.iter().map(|&b| gain(b).kp).collect();
        let kq = cfg.inverter_buses.iter().map(|&b| gain(b).kq).collect();
        let laplacian = cfg.laplacian_matrix().map_err(Error::InvalidConfig)?;
        let mut model = MicrogridModel {
            buses: m,
            inverter_buses: cfg.inverter_buses.iter().map(|b| b - 1).collect(),
            load_buses: cfg.load_buses.iter().map(|b| b - 1).collect(),
            branches: cfg.branches.clone(),
            b: DMatrix::zeros(m, m),
            omega_star: cfg.omega_star,
            p_star,
            q_star,
            u_star,
            kp,
            kq,
            laplacian,
        };
        model.rebuild_susceptance();
        Ok(model)
    }

    fn rebuild_susceptance(&mut self) {
        let m = self.buses;
        let mut b = DMatrix::zeros(m, m);
        for br in &self.branches {
            let (i, j) = (br.from - 1, br.to - 1);
            b[(i, j)] -= br.susceptance;
            b[(j, i)] -= br.susceptance;
            b[(i, i)] += br.susceptance;
            b[(j, j)] += br.susceptance;
        }
        self.b = b;
    }

    /// Copy with branch `index` (0-based) susceptance multiplied by `factor`.
    pub fn with_branch_scaled(&self, index: usize, factor: f64) -> Result<Self> {
        if index >= self.branches.len() {
            return Err(Error::InvalidArgument(format!(
                "branch index {index} out of range"
            )));
        }
        let mut out = self.clone();
        out.branches[index].susceptance *= factor;
        out.rebuild_susceptance();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        4 * self.inverter_buses.len() - 1
    }

    pub fn m(&self) -> usize {
        2 * self.load_buses.len()
    }

    /// Net injections `(P, Q)` at every bus.
    pub fn injections(&self, theta: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.buses;
        let mut p = vec![0.0; m];
        let mut q = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                let bij = self.b[(i, j)];
                if bij == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let uu = u[i].abs() * u[j].abs();
                p[i] += bij * uu * s;
                q[i] -= bij * uu * c;
            }
        }
        (p, q)
    }

    /// Partial derivatives of `(P, Q)` with respect to bus angles and voltages.
    fn injection_derivatives(&self, theta: &[f64], u: &[f64]) -> [DMatrix<f64>; 4] {
        let m = self.buses;
        let mut dp_dth = DMatrix::zeros(m, m);
        let mut dp_du = DMatrix::zeros(m, m);
        let mut dq_dth = DMatrix::zeros(m, m);
        let mut dq_du = DMatrix::zeros(m, m);
        for i in 0..m {
            let ui = u[i].abs();
            let si = u[i].signum();
            for j in 0..m {
                let bij = self.b[(i, j)];
                if bij == 0.0 {
                    continue;
                }
                if j == i {
                    dq_du[(i, i)] -= 2.0 * bij * ui * si;
                    continue;
                }
                let uj = u[j].abs();
                let sj = u[j].signum();
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                dp_dth[(i, i)] += bij * ui * uj * c;
                dp_dth[(i, j)] -= bij * ui * uj * c;
                dp_du[(i, i)] += si * bij * uj * s;
                dp_du[(i, j)] += sj * bij * ui * s;
                dq_dth[(i, i)] += bij * ui * uj * s;
                dq_dth[(i, j)] -= bij * ui * uj * s;
                dq_du[(i, i)] -= si * bij * uj * c;
                dq_du[(i, j)] -= sj * bij * ui * c;
            }
        }
        [dp_dth, dp_du, dq_dth, dq_du]
    }

    pub fn kp_inverse(&self) -> Vec<f64> {
        self.kp.iter().map(|k| 1.0 / k).collect()
    }
}

/// The microgrid as a [`DaeModel`].
#[derive(Debug, Clone)]
pub struct MicrogridDae {
    pub params: MicrogridModel,
    angle_slot: Vec<Slot>,
    volt_slot: Vec<Slot>,
}

impl MicrogridDae {
    pub fn new(params: MicrogridModel) -> Self {
        let ni = params.inverter_buses.len();
        let nl = params.load_buses.len();
        let mut angle_slot = vec![Slot::Reference; params.buses];
        let mut volt_slot = vec![Slot::Reference; params.buses];
        for (k, &b) in params.inverter_buses.iter().enumerate() {
            angle_slot[b] = if k == 0 {
                Slot::Reference
            } else {
                Slot::X(k - 1)
            };
            volt_slot[b] = Slot::X((ni - 1) + ni + k);
        }
        for (l, &b) in params.load_buses.iter().enumerate() {
            angle_slot[b] = Slot::Y(l);
            volt_slot[b] = Slot::Y(nl + l);
        }
        MicrogridDae {
            params,
            angle_slot,
            volt_slot,
        }
    }

    fn ni(&self) -> usize {
        self.params.inverter_buses.len()
    }

    /// Index of `ω_k` in the differential state.
    pub fn omega_index(&self, k: usize) -> usize {
        self.ni() - 1 + k
    }

    /// Index of `U_k` (inverter `k`) in the differential state.
    pub fn voltage_index(&self, k: usize) -> usize {
        self.ni() - 1 + self.ni() + k
    }

    /// Index of `ζ_k` in the differential state.
    pub fn zeta_index(&self, k: usize) -> usize {
        self.ni() - 1 + 2 * self.ni() + k
    }

    fn read(slot: Slot, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match slot {
            Slot::Reference => 0.0,
            Slot::X(i) => x[i],
            Slot::Y(i) => y[i],
        }
    }

    /// Bus angles (relative to the reference inverter) and voltage magnitudes.
    pub fn bus_state(&self, x: &DVector<f64>, y: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let theta = self
            .angle_slot
            .iter()
            .map(|&s| Self::read(s, x, y))
            .collect();
        let u = self
            .volt_slot
            .iter()
            .map(|&s| Self::read(s, x, y))
            .collect();
        (theta, u)
    }

    /// Set-point initial guess: flat angles, `ω = ω*`, `U = U*`, `ζ = 0`.
    pub fn flat_start(&self) -> (DVector<f64>, DVector<f64>) {
        let p = &self.params;
        let mut x = DVector::zeros(p.n());
        let mut y = DVector::zeros(p.m());
        for (k, &b) in p.inverter_buses.iter().enumerate() {
            x[self.omega_index(k)] = p.omega_star;
            x[self.voltage_index(k)] = p.u_star[b];
        }
        let nl = p.load_buses.len();
        for (l, &b) in p.load_buses.iter().enumerate() {
            y[nl + l] = p.u_star[b];
        }
        (x, y)
    }
}

impl DaeModel for MicrogridDae {
    fn n(&self) -> usize {
        self.params.n()
    }

    fn m(&self) -> usize {
        self.params.m()
    }

    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let ni = self.ni();
        let (theta, u) = self.bus_state(x, y);
        let (pinj, qinj) = p.injections(&theta, &u);
        let mut out = DVector::zeros(p.n());
        let omega_ref = x[self.omega_index(0)];
        for k in 1..ni {
            out[k - 1] = x[self.omega_index(k)] - omega_ref;
        }
        for (k, &b) in p.inverter_buses.iter().enumerate() {
            let om = x[self.omega_index(k)];
            let zeta = x[self.zeta_index(k)];
            out[self.omega_index(k)] =
                -(om - p.omega_star) - p.kp[k] * (pinj[b] - p.p_star[b]) + zeta;
            out[self.voltage_index(k)] =
                -(x[self.voltage_index(k)] - p.u_star[b]) - p.kq[k] * (qinj[b] - p.q_star[b]);
            let mut lz = 0.0;
            for j in 0..ni {
                lz += p.laplacian[(k, j)] * x[self.zeta_index(j)];
            }
            out[self.zeta_index(k)] = -lz - (om - p.omega_star) / p.kp[k];
        }
        out
    }

    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (theta, u) = self.bus_state(x, y);
        let (pinj, qinj) = p.injections(&theta, &u);
        let nl = p.load_buses.len();
        let mut out = DVector::zeros(p.m());
        for (l, &b) in p.load_buses.iter().enumerate() {
            out[l] = pinj[b] - p.p_star[b];
            out[nl + l] = qinj[b] - p.q_star[b];
        }
        out
    }

    fn jacobians(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<Jacobians> {
        let p = &self.params;
        let ni = self.ni();
        let nl = p.load_buses.len();
        let (n, m) = (p.n(), p.m());
        let (theta, u) = self.bus_state(x, y);
        let [dp_dth, dp_du, dq_dth, dq_du] = p.injection_derivatives(&theta, &u);

        let mut fx = DMatrix::zeros(n, n);
        let mut fy = DMatrix::zeros(n, m);
        let mut gx = DMatrix::zeros(m, n);
        let mut gy = DMatrix::zeros(m, m);

        // Scatter `scale · ∂(bus row quantity)/∂(bus state)` into the f or g block.
        let scatter = |fx_or_gx: &mut DMatrix<f64>,
                       fy_or_gy: &mut DMatrix<f64>,
                       row: usize,
                       bus: usize,
                       scale: f64,
                       d_th: &DMatrix<f64>,
                       d_u: &DMatrix<f64>| {
            for j in 0..p.buses {
                for (slot, d) in [
                    (self.angle_slot[j], d_th[(bus, j)]),
                    (self.volt_slot[j], d_u[(bus, j)]),
                ] {
                    if d == 0.0 {
                        continue;
                    }
                    match slot {
                        Slot::Reference => {}
                        Slot::X(c) => fx_or_gx[(row, c)] += scale * d,
                        Slot::Y(c) => fy_or_gy[(row, c)] += scale * d,
                    }
                }
            }
        };

        for k in 1..ni {
            fx[(k - 1, self.omega_index(k))] = 1.0;
            fx[(k - 1, self.omega_index(0))] -= 1.0;
        }
        for (k, &b) in p.inverter_buses.iter().enumerate() {
            let ro = self.omega_index(k);
            fx[(ro, ro)] -= 1.0;
            fx[(ro, self.zeta_index(k))] += 1.0;
            scatter(&mut fx, &mut fy, ro, b, -p.kp[k], &dp_dth, &dp_du);

            let rv = self.voltage_index(k);
            fx[(rv, rv)] -= 1.0;
            scatter(&mut fx, &mut fy, rv, b, -p.kq[k], &dq_dth, &dq_du);

            let rz = self.zeta_index(k);
            for j in 0..ni {
                fx[(rz, self.zeta_index(j))] -= p.laplacian[(k, j)];
            }
            fx[(rz, ro)] -= 1.0 / p.kp[k];
        }
        for (l, &b) in p.load_buses.iter().enumerate() {
            scatter(&mut gx, &mut gy, l, b, 1.0, &dp_dth, &dp_du);
            scatter(&mut gx, &mut gy, nl + l, b, 1.0, &dq_dth, &dq_du);
        }
        Some(Jacobians { fx, fy, gx, gy })
    }
}

/// Builds the microgrid DAE and locates its set-point equilibrium.
pub fn microgrid_build(config: &MicrogridConfig) -> Result<DaeSystem> {
    let params = MicrogridModel::from_config(config)?;
    build_from_params(params)
}

pub fn build_from_params(params: MicrogridModel) -> Result<DaeSystem> {
    let imbalance: f64 = params.p_star.iter().sum();
    if imbalance.abs() > POWER_BALANCE_TOL {
        return Err(Error::ModelInfeasible(format!(
            "active set points do not balance (sum P* = {imbalance:e})"
        )));
    }
    let dae = MicrogridDae::new(params);
    let (x0, y0) = dae.flat_start();
    DaeSystem::with_equilibrium_search(Arc::new(dae), x0, y0)
}

/// Systems for a timed branch event, all in the coordinates of `nominal`
/// (which must be shifted to its equilibrium).
///
/// The branch is scaled at `time` and restored `clear_after` seconds later.
/// The faulted network need not have an operating point; if it cannot carry
/// the flows the integration aborts.
pub fn disturbance_segments(
    params: &MicrogridModel,
    nominal: &DaeSystem,
    disturbance: &Disturbance,
) -> Result<Vec<Segment>> {
    let faulted =
        params.with_branch_scaled(disturbance.branch.wrapping_sub(1), disturbance.scale)?;
    let (dx, dy) = nominal.offset();
    let faulted =
        DaeSystem::transient(Arc::new(MicrogridDae::new(faulted)), dx.clone(), dy.clone())?
            .shift_by(dx, dy)?;
    Ok(vec![
        Segment {
            system: nominal.clone(),
            until: disturbance.time,
        },
        Segment {
            system: faulted,
            until: disturbance.time + disturbance.clear_after,
        },
        Segment {
            system: nominal.clone(),
            until: f64::INFINITY,
        },
    ])
}
