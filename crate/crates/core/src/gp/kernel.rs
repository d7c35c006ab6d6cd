use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_signal_variance")]
    pub signal_variance: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
}

fn default_length_scale() -> f64 {
    0.5
}
fn default_signal_variance() -> f64 {
    1.0
}
fn default_noise_variance() -> f64 {
    1e-4
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            length_scale: default_length_scale(),
            signal_variance: default_signal_variance(),
            noise_variance: default_noise_variance(),
        }
    }
}

impl KernelSpec {
    pub fn rbf(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Rbf,
            length_scale,
            signal_variance,
            noise_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_scale > 0.0
            && self.length_scale.is_finite()
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.noise_variance >= 0.0
            && self.noise_variance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "kernel needs length_scale > 0, signal_variance > 0, noise_variance >= 0 (got {self:?})"
            )))
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        kernel_eval(self, a, b)
    }
}

/// `s²·exp(−‖a − b‖² / (2ℓ²))`.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "kernel arguments differ in dimension");
    match spec.family {
        KernelFamily::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            spec.signal_variance * (-d2 / (2.0 * spec.length_scale * spec.length_scale)).exp()
        }
    }
}
