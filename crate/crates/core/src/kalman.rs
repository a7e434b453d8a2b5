//! Steady-state Kalman filter: design and one-step runtime.

use crate::error::{Error, Result};
use crate::matnum::{solve_dare, spd_inverse, symmetrize, Matrix, SolverOptions, Vector};
use crate::model::StateSpaceModel;

/// Steady-state filter quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanDesign {
    /// Gain `K = A P Cᵀ Σ_z⁻¹`.
    pub gain: Matrix,
    /// One-step prediction error covariance, the DARE solution.
    pub error_covariance: Matrix,
    /// Innovation covariance `Σ_z = C P Cᵀ + Σ_v`.
    pub innovation_covariance: Matrix,
    /// `Σ_z⁻¹`, cached for the detectors and estimators.
    pub innovation_precision: Matrix,
    /// Weight `W = Cᵀ Σ_z⁻¹ C`.
    pub weight: Matrix,
    /// Attack-free weighted mean-squared error `tr(P W)`.
    pub baseline_mse: f64,
}

impl KalmanDesign {
    /// Solves the filter Riccati equation and assembles the gain.
    pub fn new(m: &StateSpaceModel, opts: &SolverOptions) -> Result<Self> {
        let p = solve_dare(m.a(), m.c(), m.sigma_w(), m.sigma_v(), opts)?;
        let sigma_z = symmetrize(&(m.c() * &p * m.c().transpose() + m.sigma_v()));
        let precision = spd_inverse(&sigma_z, "innovation covariance")?;
        let gain = m.a() * &p * m.c().transpose() * &precision;
        let weight = symmetrize(&(m.c().transpose() * &precision * m.c()));
        let baseline_mse = (&p * &weight).trace();
        Ok(KalmanDesign {
            gain,
            error_covariance: p,
            innovation_covariance: sigma_z,
            innovation_precision: precision,
            weight,
            baseline_mse,
        })
    }

    /// `A − K C`, the dynamics of the estimation error driven by innovations.
    pub fn closed_loop(&self, m: &StateSpaceModel) -> Matrix {
        m.a() - &self.gain * m.c()
    }
}

/// Convenience wrapper with default solver options.
pub fn design(m: &StateSpaceModel) -> Result<KalmanDesign> {
    KalmanDesign::new(m, &SolverOptions::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub estimate: Vector,
    pub k: usize,
}

impl FilterState {
    /// `x̂₁ = 0` at `k = 1`.
    pub fn initial(m: &StateSpaceModel) -> Self {
        FilterState {
            estimate: Vector::zeros(m.nx()),
            k: 1,
        }
    }
}

/// `z = y − C x̂`, `x̂' = A x̂ + K z + B u`.
pub fn filter_step(
    d: &KalmanDesign,
    m: &StateSpaceModel,
    s: &FilterState,
    y: &Vector,
    u: &Vector,
) -> Result<(FilterState, Vector)> {
    if s.estimate.len() != m.nx() {
        return Err(Error::dims("filter_step: x̂", m.nx(), s.estimate.len()));
    }
    if y.len() != m.ny() {
        return Err(Error::dims("filter_step: y", m.ny(), y.len()));
    }
    if u.len() != m.nu() {
        return Err(Error::dims("filter_step: u", m.nu(), u.len()));
    }
    let z = y - m.c() * &s.estimate;
    let next = m.a() * &s.estimate + &d.gain * &z + m.b() * u;
    Ok((
        FilterState {
            estimate: next,
            k: s.k + 1,
        },
        z,
    ))
}

/// `‖Σ_z − C P Cᵀ − Σ_v‖_F`; a self-check that should sit at round-off level.
pub fn innovation_covariance_identity(d: &KalmanDesign, m: &StateSpaceModel) -> f64 {
    (&d.innovation_covariance - m.c() * &d.error_covariance * m.c().transpose() - m.sigma_v()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matnum::{riccati_map, solve_dlyap};
    use approx::assert_relative_eq;

    #[test]
    fn golden_ratio_design() {
        let m = fixtures::scalar_random_walk();
        let d = design(&m).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(d.error_covariance[(0, 0)], phi, epsilon = 1e-10);
        assert_relative_eq!(d.innovation_covariance[(0, 0)], phi + 1.0, epsilon = 1e-10);
        assert_relative_eq!(d.gain[(0, 0)], phi / (phi + 1.0), epsilon = 1e-10);
        assert!(innovation_covariance_identity(&d, &m) < 1e-12);
    }

    #[test]
    fn memoryless_plant_ignores_measurements() {
        let sw = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let m = StateSpaceModel::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            sw.clone(),
            Matrix::identity(1, 1),
        )
        .unwrap();
        let d = design(&m).unwrap();
        assert_relative_eq!(d.error_covariance, sw, epsilon = 1e-14);
        assert_eq!(d.gain, Matrix::zeros(2, 1));
    }

    #[test]
    fn example_designs_satisfy_identities() {
        for m in [fixtures::example1(), fixtures::example2()] {
            let d = design(&m).unwrap();
            let p = &d.error_covariance;
            let res = (riccati_map(p, m.a(), m.c(), m.sigma_w(), m.sigma_v()).unwrap() - p).norm() / p.norm();
            assert!(res < 1e-10, "DARE residual {res}");
            assert!(innovation_covariance_identity(&d, &m) < 1e-9);
            assert!(d.baseline_mse > 0.0);
            // A − KC is stable.
            assert!(solve_dlyap(&d.closed_loop(&m), &Matrix::identity(m.nx(), m.nx()), &SolverOptions::default()).is_ok());
        }
    }

    #[test]
    fn example_one_golden_values() {
        // Reference values from an independent Riccati solver.
        let d = design(&fixtures::example1()).unwrap();
        assert_relative_eq!(d.baseline_mse, 1.834263365073957, epsilon = 1e-9);
        assert_relative_eq!(d.innovation_covariance[(0, 0)], 18.2643084, epsilon = 1e-6);
        assert_relative_eq!(d.innovation_covariance[(1, 1)], 9.01022329, epsilon = 1e-6);
        assert_relative_eq!(d.gain[(0, 0)], 1.41322958, epsilon = 1e-7);
        assert_relative_eq!(d.gain[(3, 1)], 1.30689291, epsilon = 1e-7);
    }

    #[test]
    fn filter_step_examples() {
        let m = fixtures::scalar_random_walk();
        let d = design(&m).unwrap();
        let zero = Vector::zeros(1);
        let s = FilterState::initial(&m);
        let (next, z) = filter_step(&d, &m, &s, &zero, &zero).unwrap();
        assert_eq!(next.estimate, zero);
        assert_eq!(z, zero);
        assert_eq!(next.k, 2);

        let s = FilterState { estimate: Vector::from_element(1, 1.0), k: 5 };
        let (next, z) = filter_step(&d, &m, &s, &Vector::from_element(1, 1.0), &zero).unwrap();
        assert_eq!(z[0], 0.0);
        assert_eq!(next.estimate[0], 1.0);

        let err = filter_step(&d, &m, &s, &Vector::zeros(2), &zero).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
