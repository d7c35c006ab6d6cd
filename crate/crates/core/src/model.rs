//! Model files: a microgrid description or one of the builtin scalar systems.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dae::microgrid::{
    build_from_params, disturbance_segments, Disturbance, MicrogridConfig, MicrogridModel,
};
use crate::dae::{DaeSystem, EQUILIBRIUM_TOL};
use crate::error::{Error, Result};
use crate::systems;
use crate::trajectory::{integrate_piecewise, Segment, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Decay,
    Bistable,
    Growth,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelSpec {
    Builtin(Builtin),
    Microgrid(MicrogridConfig),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BuiltinFile {
    builtin: Builtin,
}

impl ModelSpec {
    /// `{"builtin": "decay" | "bistable" | "growth"}` or a microgrid description.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if value.get("builtin").is_some() {
            let de = &mut serde_json::Deserializer::from_str(text);
            let file: BuiltinFile = serde_path_to_error::deserialize(de)
                .map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner())))?;
            return Ok(ModelSpec::Builtin(file.builtin));
        }
        MicrogridConfig::from_json(text).map(ModelSpec::Microgrid)
    }

    /// Structural problems found without building the model.
    pub fn config_issues(&self) -> Vec<String> {
        match self {
            ModelSpec::Builtin(_) => Vec::new(),
            ModelSpec::Microgrid(cfg) => cfg.validate(),
        }
    }

    /// The system at its stored equilibrium, in original coordinates.
    pub fn build(&self) -> Result<DaeSystem> {
        let issues = self.config_issues();
        if !issues.is_empty() {
            return Err(Error::InvalidConfig(issues.join("; ")));
        }
        match self {
            ModelSpec::Builtin(Builtin::Decay) => Ok(systems::decay()),
            ModelSpec::Builtin(Builtin::Bistable) => Ok(systems::bistable()),
            ModelSpec::Builtin(Builtin::Growth) => Ok(systems::growth()),
            ModelSpec::Microgrid(cfg) => build_from_params(MicrogridModel::from_config(cfg)?),
        }
    }

    pub fn disturbance(&self) -> Option<&Disturbance> {
        match self {
            ModelSpec::Microgrid(cfg) => cfg.disturbance.as_ref(),
            ModelSpec::Builtin(_) => None,
        }
    }

    /// Integrates from the equilibrium through `disturbance`, in coordinates
    /// shifted to the equilibrium.
    pub fn simulate(
        &self,
        disturbance: Option<&Disturbance>,
        dt: f64,
        t_end: f64,
        xi: f64,
    ) -> Result<Simulation> {
        let system = self.build()?.shift_to_origin();
        let segments = match (self, disturbance) {
            (_, None) => vec![Segment {
                system: system.clone(),
                until: f64::INFINITY,
            }],
            (ModelSpec::Microgrid(cfg), Some(d)) => {
                let mut cfg = cfg.clone();
                cfg.disturbance = Some(d.clone());
                let issues = cfg.validate();
                if !issues.is_empty() {
                    return Err(Error::InvalidConfig(issues.join("; ")));
                }
                disturbance_segments(&MicrogridModel::from_config(&cfg)?, &system, d)?
            }
            (ModelSpec::Builtin(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "disturbance: builtin systems have no branches".into(),
                ))
            }
        };
        let trajectory =
            integrate_piecewise(&segments, &DVector::zeros(system.n()), dt, t_end, xi)?;
        Ok(Simulation { system, trajectory })
    }

    /// Every check of the model, in order. Later checks are skipped when the
    /// model cannot be built.
    pub fn validation_report(&self) -> Vec<Check> {
        let mut report = Vec::new();
        let issues = self.config_issues();
        if issues.is_empty() {
            report.push(Check::pass("config invariants", "ok"));
        } else {
            for issue in issues {
                report.push(Check::fail("config invariants", issue));
            }
            return report;
        }
        let system = match self.build() {
            Ok(s) => s,
            Err(e) => {
                report.push(Check::fail("equilibrium", e.to_string()));
                return report;
            }
        };
        let eq = system.equilibrium();
        report.push(Check::new(
            "equilibrium residual",
            eq.residual_norm <= EQUILIBRIUM_TOL,
            format!("{:e} (tolerance {EQUILIBRIUM_TOL:e})", eq.residual_norm),
        ));
        let regular = system.regularity_check(&eq.x_star, &eq.y_star);
        report.push(Check::new(
            "regularity of dg/dy",
            regular,
            if regular {
                "full rank"
            } else {
                "rank deficient"
            }
            .to_string(),
        ));
        match system.reduced_matrix_at_equilibrium() {
            Ok(a) => {
                let abscissa = a.spectral_abscissa();
                report.push(Check::new(
                    "Hurwitz reduced matrix",
                    a.is_hurwitz(),
                    format!("spectral abscissa {abscissa:.6e}"),
                ));
            }
            Err(e) => report.push(Check::fail("Hurwitz reduced matrix", e.to_string())),
        }
        report
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Nominal system shifted to its equilibrium.
    pub system: DaeSystem,
    pub trajectory: Trajectory,
}

impl Simulation {
    /// Samples in the model's own coordinates.
    pub fn absolute_states(&self) -> Vec<DVector<f64>> {
        let (dx, _) = self.system.offset();
        self.trajectory.samples.iter().map(|s| s + dx).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }

    fn pass(name: &'static str, detail: &str) -> Self {
        Check::new(name, true, detail.into())
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Check::new(name, false, detail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ieee9_text() -> String {
        serde_json::to_string(&MicrogridConfig::ieee9()).unwrap()
    }

    #[test]
    fn parses_builtins_and_microgrids() {
        assert_eq!(
            ModelSpec::from_json(r#"{"builtin": "bistable"}"#).unwrap(),
            ModelSpec::Builtin(Builtin::Bistable)
        );
        assert!(matches!(
            ModelSpec::from_json(&ieee9_text()).unwrap(),
            ModelSpec::Microgrid(_)
        ));
        let err = ModelSpec::from_json(r#"{"builtin": "pendulum"}"#).unwrap_err();
        assert!(err.to_string().contains("builtin"), "{err}");
    }

    #[test]
    fn malformed_key_is_named() {
        let text = ieee9_text().replace("\"omega_star\":", "\"omega_star\":\"fast\",\"x\":");
        let err = ModelSpec::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("omega_star"), "{err}");
    }

    #[test]
    fn ieee9_report_passes() {
        let report = ModelSpec::Microgrid(MicrogridConfig::ieee9()).validation_report();
        assert_eq!(report.len(), 4);
        assert!(report.iter().all(|c| c.passed), "{report:?}");
    }

    #[test]
    fn negative_gain_fails_by_name() {
        let mut cfg = MicrogridConfig::ieee9();
        cfg.gains[1].kp = -0.5;
        let report = ModelSpec::Microgrid(cfg).validation_report();
        assert!(report.iter().any(|c| !c.passed && c.detail.contains("KP")));
    }

    #[test]
    fn quiet_run_stays_at_equilibrium() {
        let spec = ModelSpec::Microgrid(MicrogridConfig::ieee9());
        let sim = spec.simulate(None, 0.01, 2.0, 1e-3).unwrap();
        let dev = sim
            .trajectory
            .samples
            .iter()
            .map(|s| s.amax())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12, "{dev:e}");
        let abs = sim.absolute_states();
        assert_eq!(abs[0], sim.system.offset().0.clone());
    }

    #[test]
    fn branch_outage_recovers() {
        let spec = ModelSpec::Microgrid(MicrogridConfig::ieee9());
        let d = spec.disturbance().cloned().unwrap();
        let sim = spec.simulate(Some(&d), 0.01, 20.0, 1e-3).unwrap();
        assert!(sim.trajectory.converged);
        let peak = sim
            .trajectory
            .samples
            .iter()
            .map(|s| s.amax())
            .fold(0.0, f64::max);
        assert!(peak > 1e-3, "the outage should visibly move the states");
    }

    #[test]
    fn builtins_reject_disturbances() {
        let spec = ModelSpec::Builtin(Builtin::Decay);
        let d = Disturbance {
            branch: 1,
            time: 0.0,
            scale: 0.0,
            clear_after: 0.1,
        };
        assert!(matches!(
            spec.simulate(Some(&d), 0.01, 1.0, 1e-3),
            Err(Error::InvalidConfig(_))
        ));
        assert!(spec.validation_report().iter().all(|c| c.passed));
        let report = ModelSpec::Builtin(Builtin::Growth).validation_report();
        assert!(!report.last().unwrap().passed);
    }
}
