//! Gradient identification from channel rates and cost derivatives.
//!
//! Each sample relates the cost derivative to the channel rates through the
//! chain rule, `dy/dt = g · x`. Stacking samples taken at different times with
//! different (randomized) rates gives a regression problem for `g`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::EscError;

/// Condition number of `XᵀX` above which the normal equations are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// One regression row: channel rates and the cost derivative they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSample {
    /// Channel rates `ε_j · k_j`, input units per second.
    pub x: Vec<f64>,
    /// Cost time-derivative, cost units per second.
    pub dy_dt: f64,
    pub timestamp: f64,
}

impl RegressorSample {
    pub fn new(x: Vec<f64>, dy_dt: f64, timestamp: f64) -> Self {
        Self {
            x,
            dy_dt,
            timestamp,
        }
    }
}

/// Estimated gradient plus estimator health.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub g_hat: Vec<f64>,
    /// The regression was singular or the update collapsed; `g_hat` is held.
    pub degenerate: bool,
    pub covariance_trace: f64,
}

impl GradientEstimate {
    pub fn zeros(p: usize) -> Self {
        Self {
            g_hat: vec![0.0; p],
            degenerate: false,
            covariance_trace: 0.0,
        }
    }
}

/// Recursive least squares with exponential forgetting.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    p_matrix: DMatrix<f64>,
    g: DVector<f64>,
    lambda: f64,
    gamma: f64,
}

impl RlsState {
    /// `P = γ I`, `g = 0`.
    pub fn new(p: usize, lambda: f64, gamma: f64) -> Result<Self, EscError> {
        if p == 0 {
            return Err(EscError::InvalidParameter(
                "channel count must be at least 1".into(),
            ));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(EscError::InvalidParameter(format!(
                "forgetting factor {lambda} outside (0, 1]"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(EscError::InvalidParameter(format!(
                "initial covariance scale {gamma} must be positive and finite"
            )));
        }
        Ok(Self {
            p_matrix: DMatrix::identity(p, p) * gamma,
            g: DVector::zeros(p),
            lambda,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn p_matrix(&self) -> &DMatrix<f64> {
        &self.p_matrix
    }

    pub fn g(&self) -> &[f64] {
        self.g.as_slice()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// One recursive update with regressor `x` and target `dy_dt`.
    ///
    /// If the gain denominator `λ + xᵀPx` is not a positive normal number the
    /// state is left untouched and the returned estimate is flagged degenerate.
    pub fn update(&mut self, sample: &RegressorSample) -> Result<GradientEstimate, EscError> {
        let n = self.dim();
        if sample.x.len() != n {
            return Err(EscError::DimensionMismatch {
                expected: n,
                got: sample.x.len(),
            });
        }
        let x = DVector::from_column_slice(&sample.x);
        let px = &self.p_matrix * &x;
        let denom = self.lambda + x.dot(&px);
        if !(denom.is_finite() && denom >= f64::MIN_POSITIVE) {
            return Ok(GradientEstimate {
                g_hat: self.g.as_slice().to_vec(),
                degenerate: true,
                covariance_trace: self.p_matrix.trace(),
            });
        }
        let d = px / denom;

        // P ← (P − d xᵀ P) / λ
        let xt_p = x.transpose() * &self.p_matrix;
        let mut next = (&self.p_matrix - &d * xt_p) / self.lambda;
        symmetrize(&mut next);

        let e = sample.dy_dt - x.dot(&self.g);
        self.g += &d * e;
        self.p_matrix = next;

        Ok(GradientEstimate {
            g_hat: self.g.as_slice().to_vec(),
            degenerate: false,
            covariance_trace: self.p_matrix.trace(),
        })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Least-squares gradient over a window, `ĝ = (XᵀX)⁻¹ XᵀY`.
///
/// With exactly `p` rows this is the exact solve `X⁻¹ Y`. A singular or
/// ill-conditioned window (condition number of `XᵀX` above [`MAX_CONDITION`])
/// yields `degenerate = true` and a zero `g_hat`.
pub fn batch_ls(samples: &[RegressorSample]) -> Result<GradientEstimate, EscError> {
    let p = samples.first().map(|s| s.x.len()).unwrap_or(0);
    if p == 0 {
        return Err(EscError::InsufficientSamples { needed: 1, got: 0 });
    }
    if samples.len() < p {
        return Err(EscError::InsufficientSamples {
            needed: p,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.x.len() != p) {
        return Err(EscError::DimensionMismatch {
            expected: p,
            got: bad.x.len(),
        });
    }

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for s in samples {
        for i in 0..p {
            xty[i] += s.x[i] * s.dy_dt;
            for j in 0..p {
                xtx[(i, j)] += s.x[i] * s.x[j];
            }
        }
    }

    let singular = GradientEstimate {
        g_hat: vec![0.0; p],
        degenerate: true,
        covariance_trace: f64::INFINITY,
    };

    let eig = SymmetricEigen::new(xtx.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !(max / min <= MAX_CONDITION) {
        return Ok(singular);
    }
    let Some(chol) = xtx.cholesky() else {
        return Ok(singular);
    };
    let g = chol.solve(&xty);
    if g.iter().any(|v| !v.is_finite()) {
        return Ok(singular);
    }
    Ok(GradientEstimate {
        g_hat: g.as_slice().to_vec(),
        degenerate: false,
        covariance_trace: eig.eigenvalues.iter().map(|l| 1.0 / l).sum(),
    })
}

/// Gradient estimator used inside the controller.
///
/// `Window` is the static-map variant: exact solve over the latest `p`
/// samples. `Recursive` is RLS with forgetting for dynamic plants. Both hold
/// the last valid estimate when the regression degenerates.
#[derive(Debug, Clone)]
pub enum GradientEstimator {
    Window {
        p: usize,
        samples: Vec<RegressorSample>,
        last_valid: Vec<f64>,
    },
    Recursive(RlsState),
}

impl GradientEstimator {
    pub fn window(p: usize) -> Self {
        GradientEstimator::Window {
            p,
            samples: Vec::with_capacity(p),
            last_valid: vec![0.0; p],
        }
    }

    pub fn recursive(p: usize, lambda: f64, gamma: f64) -> Result<Self, EscError> {
        RlsState::new(p, lambda, gamma).map(GradientEstimator::Recursive)
    }

    pub fn dim(&self) -> usize {
        match self {
            GradientEstimator::Window { p, .. } => *p,
            GradientEstimator::Recursive(rls) => rls.dim(),
        }
    }

    /// Feeds one sample and returns the current estimate.
    pub fn push(&mut self, sample: RegressorSample) -> Result<GradientEstimate, EscError> {
        match self {
            GradientEstimator::Window {
                p,
                samples,
                last_valid,
            } => {
                if sample.x.len() != *p {
                    return Err(EscError::DimensionMismatch {
                        expected: *p,
                        got: sample.x.len(),
                    });
                }
                if samples.len() == *p {
                    samples.remove(0);
                }
                samples.push(sample);
                if samples.len() < *p {
                    // Window not yet full: nothing to solve, keep the prior.
                    return Ok(GradientEstimate {
                        g_hat: last_valid.clone(),
                        degenerate: true,
                        covariance_trace: f64::INFINITY,
                    });
                }
                let mut est = batch_ls(samples)?;
                if est.degenerate {
                    est.g_hat = last_valid.clone();
                } else {
                    last_valid.clone_from(&est.g_hat);
                }
                Ok(est)
            }
            GradientEstimator::Recursive(rls) => rls.update(&sample),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(x: &[f64], y: f64) -> RegressorSample {
        RegressorSample::new(x.to_vec(), y, 0.0)
    }

    #[test]
    fn init_sets_scaled_identity_and_zero_gradient() {
        let rls = RlsState::new(2, 0.9048, 100.0).unwrap();
        assert_eq!(
            rls.p_matrix(),
            &DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 100.0])
        );
        assert_eq!(rls.g(), &[0.0, 0.0]);

        let rls = RlsState::new(1, 1.0, 1.0).unwrap();
        assert_eq!(rls.p_matrix()[(0, 0)], 1.0);
        assert_eq!(rls.g(), &[0.0]);
    }

    #[test]
    fn init_rejects_bad_parameters() {
        assert!(matches!(
            RlsState::new(2, 1.5, 1.0),
            Err(EscError::InvalidParameter(_))
        ));
        assert!(RlsState::new(0, 1.0, 1.0).is_err());
        assert!(RlsState::new(2, 0.0, 1.0).is_err());
        assert!(RlsState::new(2, 1.0, 0.0).is_err());
        assert!(RlsState::new(2, 1.0, -3.0).is_err());
    }

    #[test]
    fn scalar_update_by_hand() {
        // d = 1·2 / (1 + 2·1·2) = 0.4; P = 1 − 0.4·2·1 = 0.2; e = 4; g = 0.4·4
        let mut rls = RlsState::new(1, 1.0, 1.0).unwrap();
        let est = rls.update(&sample(&[2.0], 4.0)).unwrap();
        assert!(!est.degenerate);
        assert_relative_eq!(rls.g()[0], 1.6, epsilon = 1e-15);
        assert_relative_eq!(rls.p_matrix()[(0, 0)], 0.2, epsilon = 1e-15);
        assert_eq!(est.g_hat, rls.g().to_vec());
    }

    #[test]
    fn zero_regressor_only_inflates_covariance() {
        let mut rls = RlsState::new(2, 0.8, 10.0).unwrap();
        rls.update(&sample(&[1.0, -0.5], 0.3)).unwrap();
        let before = rls.clone();
        rls.update(&sample(&[0.0, 0.0], 7.0)).unwrap();
        assert_eq!(rls.g(), before.g());
        let scaled = before.p_matrix() / 0.8;
        for (a, b) in rls.p_matrix().iter().zip(scaled.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rls = RlsState::new(2, 1.0, 1.0).unwrap();
        assert_eq!(
            rls.update(&sample(&[1.0], 1.0)),
            Err(EscError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn collapsed_denominator_leaves_state_unchanged() {
        let mut rls = RlsState::new(1, 1e-300, 1e-300).unwrap();
        rls.p_matrix[(0, 0)] = -1e-300;
        let before = rls.clone();
        let est = rls.update(&sample(&[1.0], 1.0)).unwrap();
        assert!(est.degenerate);
        assert_eq!(rls, before);
        assert!(est.g_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_two_by_two_by_hand() {
        let est = batch_ls(&[sample(&[1.0, 1.0], 3.0), sample(&[1.0, -1.0], -1.0)]).unwrap();
        assert!(!est.degenerate);
        assert_relative_eq!(est.g_hat[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(est.g_hat[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn batch_identical_rows_are_degenerate() {
        let rows = vec![sample(&[0.01, -0.01], 0.002); 4];
        let est = batch_ls(&rows).unwrap();
        assert!(est.degenerate);
        assert!(est.g_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_needs_p_rows() {
        assert_eq!(
            batch_ls(&[sample(&[1.0, 2.0], 1.0)]),
            Err(EscError::InsufficientSamples { needed: 2, got: 1 })
        );
        assert!(batch_ls(&[]).is_err());
    }

    #[test]
    fn window_estimator_holds_last_valid_estimate() {
        let mut est = GradientEstimator::window(2);
        let first = est.push(sample(&[1.0, 1.0], 3.0)).unwrap();
        assert!(first.degenerate);
        assert_eq!(first.g_hat, vec![0.0, 0.0]);
        let good = est.push(sample(&[1.0, -1.0], -1.0)).unwrap();
        assert!(!good.degenerate);
        // Two identical rows in the window.
        est.push(sample(&[1.0, -1.0], -1.0)).unwrap();
        let held = est.push(sample(&[1.0, -1.0], -1.0)).unwrap();
        assert!(held.degenerate);
        assert_eq!(held.g_hat, good.g_hat);
    }

    #[test]
    fn covariance_stays_symmetric() {
        let mut rls = RlsState::new(3, 0.95, 100.0).unwrap();
        let xs = [[0.3, -1.2, 0.7], [1.1, 0.4, -0.9], [-0.2, 0.8, 0.05]];
        for k in 0..60 {
            let x = xs[k % 3].map(|v| v * (1.0 + 0.1 * k as f64));
            rls.update(&sample(&x, 0.5 * x[0] - x[2])).unwrap();
            let p = rls.p_matrix();
            assert_eq!(p, &p.transpose());
        }
    }
}
