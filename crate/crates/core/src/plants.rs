//! Simulated systems under optimization.

use nalgebra::{DMatrix, DVector};

use crate::error::EscError;

/// `Q(θ) = ½ (θ − θ*)ᵀ H (θ − θ*)` with symmetric positive-definite `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap {
    theta_star: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl QuadraticMap {
    pub fn new(theta_star: Vec<f64>, hessian: DMatrix<f64>) -> Result<Self, EscError> {
        let p = theta_star.len();
        if p == 0 {
            return Err(EscError::InvalidParameter("empty optimum".into()));
        }
        if hessian.nrows() != p || hessian.ncols() != p {
            return Err(EscError::DimensionMismatch {
                expected: p,
                got: hessian.nrows(),
            });
        }
        if hessian != hessian.transpose() {
            return Err(EscError::InvalidParameter(
                "Hessian is not symmetric".into(),
            ));
        }
        if hessian.clone().cholesky().is_none() {
            return Err(EscError::InvalidParameter(
                "Hessian is not positive definite".into(),
            ));
        }
        Ok(Self {
            theta_star: DVector::from_vec(theta_star),
            hessian,
        })
    }

    pub fn identity(theta_star: Vec<f64>) -> Self {
        let p = theta_star.len();
        Self {
            theta_star: DVector::from_vec(theta_star),
            hessian: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn theta_star(&self) -> &[f64] {
        self.theta_star.as_slice()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn set_theta_star(&mut self, theta_star: &[f64]) {
        assert_eq!(theta_star.len(), self.dim(), "optimum dimension");
        self.theta_star.copy_from_slice(theta_star);
    }

    fn offset(&self, theta: &[f64]) -> DVector<f64> {
        assert_eq!(theta.len(), self.dim(), "input dimension");
        DVector::from_column_slice(theta) - &self.theta_star
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        let e = self.offset(theta);
        0.5 * e.dot(&(&self.hessian * &e))
    }

    /// Analytic gradient `H (θ − θ*)`. Test oracle only.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let e = self.offset(theta);
        (&self.hessian * e).as_slice().to_vec()
    }
}

/// First-order lag `ẋ = (q − x)/τ_s`, `y = x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderState {
    pub x: f64,
    tau_s: f64,
}

impl FirstOrderState {
    pub fn new(x: f64, tau_s: f64) -> Result<Self, EscError> {
        if !(tau_s > 0.0 && tau_s.is_finite()) {
            return Err(EscError::InvalidParameter(format!(
                "time constant {tau_s} must be positive"
            )));
        }
        Ok(Self { x, tau_s })
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    /// Exact zero-order-hold step: `x⁺ = a x + (1 − a) q` with `a = exp(−dt/τ_s)`.
    /// Returns the output `y = x⁺`.
    pub fn step(&mut self, q_in: f64, dt: f64) -> f64 {
        // Written as x + (1 − a)(q − x) so that q = x is an exact fixed point.
        let one_minus_a = -(-dt / self.tau_s).exp_m1();
        self.x += one_minus_a * (q_in - self.x);
        self.x
    }
}

/// A plant the harness can close the loop around.
pub trait Plant {
    /// The underlying cost map.
    fn map(&self) -> &QuadraticMap;

    fn map_mut(&mut self) -> &mut QuadraticMap;

    /// Puts the plant at rest for inputs `theta` and returns its output.
    fn settle(&mut self, theta: &[f64]) -> f64;

    /// Holds `theta` for one period `dt` and returns the output sampled at its end.
    fn measure(&mut self, theta: &[f64], dt: f64) -> f64;

    /// Steady-state cost at `theta`.
    fn cost(&self, theta: &[f64]) -> f64 {
        self.map().eval(theta)
    }
}

#[derive(Debug, Clone)]
pub struct StaticPlant {
    map: QuadraticMap,
}

impl StaticPlant {
    pub fn new(map: QuadraticMap) -> Self {
        Self { map }
    }
}

impl Plant for StaticPlant {
    fn map(&self) -> &QuadraticMap {
        &self.map
    }

    fn map_mut(&mut self) -> &mut QuadraticMap {
        &mut self.map
    }

    fn settle(&mut self, theta: &[f64]) -> f64 {
        self.map.eval(theta)
    }

    fn measure(&mut self, theta: &[f64], _dt: f64) -> f64 {
        self.map.eval(theta)
    }
}

/// Quadratic map feeding a first-order lag.
#[derive(Debug, Clone)]
pub struct HammersteinPlant {
    map: QuadraticMap,
    lag: FirstOrderState,
}

impl HammersteinPlant {
    pub fn new(map: QuadraticMap, tau_s: f64) -> Result<Self, EscError> {
        Ok(Self {
            map,
            lag: FirstOrderState::new(0.0, tau_s)?,
        })
    }

    pub fn state(&self) -> &FirstOrderState {
        &self.lag
    }
}

impl Plant for HammersteinPlant {
    fn map(&self) -> &QuadraticMap {
        &self.map
    }

    fn map_mut(&mut self) -> &mut QuadraticMap {
        &mut self.map
    }

    fn settle(&mut self, theta: &[f64]) -> f64 {
        self.lag.x = self.map.eval(theta);
        self.lag.x
    }

    fn measure(&mut self, theta: &[f64], dt: f64) -> f64 {
        let q = self.map.eval(theta);
        self.lag.step(q, dt)
    }
}
