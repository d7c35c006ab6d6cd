//! Scalar reference systems with known regions of attraction.

use std::sync::Arc;

use nalgebra::DVector;

use crate::dae::{DaeSystem, FnModel};

/// `ẋ = −x`; globally stable with `V(x) = x²/2` for `α(z) = z²`.
pub fn decay() -> DaeSystem {
    let model = FnModel::ode(1, |x: &DVector<f64>| -x.clone());
    DaeSystem::new(Arc::new(model), DVector::zeros(1), DVector::zeros(0))
        .expect("origin is an equilibrium")
}

/// `ẋ = x − x³` around its stable equilibrium `x = 1`, whose basin is `x > 0`.
///
/// The stored equilibrium is `x* = 1` in the original coordinate; after
/// shifting, the basin is `x̄ > −1`.
pub fn bistable() -> DaeSystem {
    let model = FnModel::ode(1, |x: &DVector<f64>| x.map(|v| v - v * v * v));
    DaeSystem::new(
        Arc::new(model),
        DVector::from_element(1, 1.0),
        DVector::zeros(0),
    )
    .expect("x = 1 is an equilibrium")
}

/// `ẋ = x`; the origin is unstable.
pub fn growth() -> DaeSystem {
    let model = FnModel::ode(1, |x: &DVector<f64>| x.clone());
    DaeSystem::new(Arc::new(model), DVector::zeros(1), DVector::zeros(0))
        .expect("origin is an equilibrium")
}

/// Basin membership for [`bistable`] in shifted coordinates.
pub fn bistable_basin_contains(x_shifted: f64) -> bool {
    x_shifted > -1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibria_are_hurwitz() {
        for sys in [decay(), bistable()] {
            let a = sys.reduced_matrix_at_equilibrium().unwrap();
            assert!(a.is_hurwitz());
        }
        let a = bistable().reduced_matrix_at_equilibrium().unwrap();
        assert!((a.a[(0, 0)] + 2.0).abs() < 1e-8);
        assert!(!growth()
            .reduced_matrix_at_equilibrium()
            .unwrap()
            .is_hurwitz());
    }

    #[test]
    fn shifted_bistable_is_at_origin() {
        let s = bistable().shift_to_origin();
        let (f, _) = s.residual(&DVector::zeros(1), &DVector::zeros(0)).unwrap();
        assert_eq!(f[0], 0.0);
        // x̄ = −1 is the unstable equilibrium x = 0.
        let (f, _) = s
            .residual(&DVector::from_element(1, -1.0), &DVector::zeros(0))
            .unwrap();
        assert_eq!(f[0], 0.0);
        assert!(bistable_basin_contains(-0.999) && !bistable_basin_contains(-1.0));
    }
}
