//! The extremum-seeking control block.
//!
//! Every sample the controller differentiates the measured cost, feeds the
//! pair (previous channel rates, cost derivative) to the gradient estimator,
//! and re-points the relays against the gradient sign once the hold time has
//! elapsed. Relay outputs are scaled by freshly drawn stochastic gains and
//! integrated into the input vector `θ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EscError;
use crate::estimator::{GradientEstimate, GradientEstimator, RegressorSample};

/// Default initial RLS covariance scale.
pub const DEFAULT_GAMMA: f64 = 100.0;

// Slack on the hold-time comparison so accumulated `dt` rounding does not
// delay a switch by a whole sample.
const TIMER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Memoryless plant: exact solve over a `p`-sample window, `T_d = p Δt`.
    Static,
    /// Plant with dynamics: RLS with forgetting, `T_d = τ_s`.
    Dynamic,
}

/// Relay output, `+1` or `−1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Negative,
    Positive,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Negative => -1.0,
            Direction::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Negative => Direction::Positive,
            Direction::Positive => Direction::Negative,
        }
    }

    /// `Some(+1)` for positive values, `Some(−1)` for negative, `None` for zero or NaN.
    pub fn of(value: f64) -> Option<Self> {
        if value > 0.0 {
            Some(Direction::Positive)
        } else if value < 0.0 {
            Some(Direction::Negative)
        } else {
            None
        }
    }
}

/// Controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscConfig {
    /// Nominal relay gains, one per channel (input units per second).
    pub k0: Vec<f64>,
    /// Sample period in seconds.
    pub dt: f64,
    /// Relay hold time in seconds.
    pub t_hold: f64,
    /// RLS forgetting factor; only used in dynamic mode.
    pub lambda: f64,
    /// RLS initial covariance scale.
    pub gamma: f64,
    pub mode: Mode,
    /// Scale relay gains with the estimated gradient magnitude.
    pub adaptive: bool,
    /// Noise scale of the adaptive gain law.
    pub zeta: f64,
    pub seed: u64,
    pub theta_init: Vec<f64>,
    /// Initial relay directions; all positive when `None`.
    pub epsilon_init: Option<Vec<Direction>>,
    /// `false` negates the measurement so the controller maximizes it.
    pub minimize: bool,
}

impl EscConfig {
    /// Static-map configuration with the hold time fixed at `p Δt`.
    pub fn static_map(k0: Vec<f64>, dt: f64, theta_init: Vec<f64>) -> Self {
        let p = k0.len() as f64;
        Self {
            t_hold: p * dt,
            lambda: 1.0,
            gamma: DEFAULT_GAMMA,
            mode: Mode::Static,
            adaptive: false,
            zeta: 0.0,
            seed: 0,
            epsilon_init: None,
            minimize: true,
            k0,
            dt,
            theta_init,
        }
    }

    /// Dynamic configuration from the dominant plant time constant: the hold
    /// time equals `tau_s` and `λ = exp(−Δt/τ_s)`.
    pub fn dynamic(k0: Vec<f64>, dt: f64, tau_s: f64, theta_init: Vec<f64>) -> Self {
        Self {
            t_hold: tau_s,
            lambda: forgetting_factor(dt, tau_s),
            gamma: DEFAULT_GAMMA,
            mode: Mode::Dynamic,
            adaptive: false,
            zeta: 0.0,
            seed: 0,
            epsilon_init: None,
            minimize: true,
            k0,
            dt,
            theta_init,
        }
    }

    pub fn p(&self) -> usize {
        self.k0.len()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_adaptive(mut self, zeta: f64) -> Self {
        self.adaptive = true;
        self.zeta = zeta;
        self
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), EscError> {
        let mut errs = Vec::new();
        let p = self.p();
        if p == 0 {
            errs.push("k0 must have at least one channel".to_string());
        }
        for (j, k) in self.k0.iter().enumerate() {
            if !(k.is_finite() && *k >= 0.0) {
                errs.push(format!("k0[{j}] = {k} must be finite and non-negative"));
            }
        }
        if self.theta_init.len() != p {
            errs.push(format!(
                "theta_init has {} entries, expected {p}",
                self.theta_init.len()
            ));
        }
        if self.theta_init.iter().any(|v| !v.is_finite()) {
            errs.push("theta_init must be finite".to_string());
        }
        if let Some(eps) = &self.epsilon_init {
            if eps.len() != p {
                errs.push(format!(
                    "epsilon_init has {} entries, expected {p}",
                    eps.len()
                ));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_hold > 0.0 && self.t_hold.is_finite()) {
            errs.push(format!("t_hold = {} must be positive", self.t_hold));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            errs.push(format!("gamma = {} must be positive", self.gamma));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            errs.push(format!("zeta = {} must be non-negative", self.zeta));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            errs.push(format!("lambda = {} outside (0, 1]", self.lambda));
        }
        if p > 0 && self.dt > 0.0 && self.t_hold > 0.0 {
            match self.mode {
                Mode::Static => {
                    let want = p as f64 * self.dt;
                    if !close(self.t_hold, want) {
                        errs.push(format!(
                            "static mode requires t_hold = p*dt = {want}, got {}",
                            self.t_hold
                        ));
                    }
                }
                Mode::Dynamic => {
                    let max_dt = self.t_hold / p as f64;
                    if self.dt > max_dt * (1.0 + TIMER_SLACK) {
                        errs.push(format!(
                            "dynamic mode requires dt <= t_hold/p = {max_dt}, got {}",
                            self.dt
                        ));
                    }
                    let want = forgetting_factor(self.dt, self.t_hold);
                    if !close(self.lambda, want) {
                        errs.push(format!(
                            "dynamic mode requires lambda = exp(-dt/t_hold) = {want}, got {}",
                            self.lambda
                        ));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(EscError::InvalidConfig(errs))
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// `λ = exp(−Δt/τ_s)`.
pub fn forgetting_factor(dt: f64, tau_s: f64) -> f64 {
    (-dt / tau_s).exp()
}

/// Relay switching frequency for hold time `t_hold`, `1/(2 T_d)`.
pub fn switching_frequency(t_hold: f64) -> Result<f64, EscError> {
    if !(t_hold > 0.0) {
        return Err(EscError::InvalidParameter(format!(
            "hold time {t_hold} must be positive"
        )));
    }
    Ok(1.0 / (2.0 * t_hold))
}

/// Expected steady-state oscillation of each input about the optimum, `K₀ T_d`.
pub fn expected_oscillation(k0: &[f64], t_hold: f64) -> Vec<f64> {
    k0.iter().map(|k| k * t_hold).collect()
}

/// Relay gains from uniform draws `deltas` in `[0, 1)`.
///
/// Fixed: `k_j = 2 k0_j δ_j`. Adaptive: `k_j = 2 k0_j (1 + |ĝ_j| + ζ δ_j)`.
pub fn gains_from_draws(
    k0: &[f64],
    g_hat: &[f64],
    adaptive: bool,
    zeta: f64,
    deltas: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(k0.len(), deltas.len());
    if adaptive {
        k0.iter()
            .zip(g_hat)
            .zip(deltas)
            .map(|((k, g), d)| 2.0 * k * (1.0 + g.abs() + zeta * d))
            .collect()
    } else {
        k0.iter().zip(deltas).map(|(k, d)| 2.0 * k * d).collect()
    }
}

/// Draws one independent uniform per channel and forms the relay gains.
pub fn draw_gains<R: Rng + ?Sized>(config: &EscConfig, g_hat: &[f64], rng: &mut R) -> Vec<f64> {
    let deltas: Vec<f64> = (0..config.p()).map(|_| rng.gen::<f64>()).collect();
    gains_from_draws(&config.k0, g_hat, config.adaptive, config.zeta, &deltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayState {
    pub epsilon: Vec<Direction>,
    pub k_applied: Vec<f64>,
    /// Seconds since the last switch.
    pub timer: f64,
}

impl RelayState {
    /// Channel rates `ε ⊙ K`.
    pub fn rates(&self) -> Vec<f64> {
        self.epsilon
            .iter()
            .zip(&self.k_applied)
            .map(|(e, k)| e.sign() * k)
            .collect()
    }
}

/// Snapshot returned by every controller step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerOutput {
    /// Inputs after integrating this step's rates.
    pub theta: Vec<f64>,
    /// Rates applied until the next step, `ε ⊙ K`.
    pub theta_dot: Vec<f64>,
    pub g_hat: GradientEstimate,
    pub relay: RelayState,
    /// The relays were re-pointed on this step.
    pub switched: bool,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: EscConfig,
    estimator: GradientEstimator,
    relay: RelayState,
    theta: Vec<f64>,
    /// Rates applied since the previous measurement (`x_{i−1}`).
    regressor: Vec<f64>,
    prev_y: Option<f64>,
    estimate: GradientEstimate,
    steps: u64,
    rng: ChaCha8Rng,
}

impl Controller {
    pub fn new(config: EscConfig) -> Result<Self, EscError> {
        config.validate()?;
        let p = config.p();
        let estimator = match config.mode {
            Mode::Static => GradientEstimator::window(p),
            Mode::Dynamic => GradientEstimator::recursive(p, config.lambda, config.gamma)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let estimate = GradientEstimate::zeros(p);
        let epsilon = config
            .epsilon_init
            .clone()
            .unwrap_or_else(|| vec![Direction::Positive; p]);
        let k_applied = draw_gains(&config, &estimate.g_hat, &mut rng);
        let relay = RelayState {
            epsilon,
            k_applied,
            timer: 0.0,
        };
        Ok(Self {
            regressor: relay.rates(),
            theta: config.theta_init.clone(),
            config,
            estimator,
            relay,
            prev_y: None,
            estimate,
            steps: 0,
            rng,
        })
    }

    pub fn config(&self) -> &EscConfig {
        &self.config
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn relay(&self) -> &RelayState {
        &self.relay
    }

    pub fn estimate(&self) -> &GradientEstimate {
        &self.estimate
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances one sample period with the latest cost measurement.
    pub fn step(&mut self, y: f64) -> Result<ControllerOutput, EscError> {
        self.advance(y, None)
    }

    /// Like [`Controller::step`] but with the gradient supplied directly
    /// instead of estimated. Used to check the ideal-gradient closed loop.
    pub fn step_with_gradient(
        &mut self,
        y: f64,
        gradient: &[f64],
    ) -> Result<ControllerOutput, EscError> {
        if gradient.len() != self.config.p() {
            return Err(EscError::DimensionMismatch {
                expected: self.config.p(),
                got: gradient.len(),
            });
        }
        let g = if self.config.minimize {
            gradient.to_vec()
        } else {
            gradient.iter().map(|v| -v).collect()
        };
        self.advance(y, Some(g))
    }

    fn advance(&mut self, y: f64, oracle: Option<Vec<f64>>) -> Result<ControllerOutput, EscError> {
        let y = if self.config.minimize { y } else { -y };
        let dt = self.config.dt;
        let mut switched = false;

        // The first measurement has no derivative; the loop proper starts at the second.
        if let Some(prev) = self.prev_y {
            let dy_dt = (y - prev) / dt;
            self.estimate = match oracle {
                Some(g_hat) => GradientEstimate {
                    g_hat,
                    degenerate: false,
                    covariance_trace: 0.0,
                },
                None => self.estimator.push(RegressorSample {
                    x: self.regressor.clone(),
                    dy_dt,
                    timestamp: self.steps as f64 * dt,
                })?,
            };

            self.relay.timer += dt;
            if self.relay.timer + TIMER_SLACK * dt >= self.config.t_hold && self.wants_switch() {
                self.relay.timer = 0.0;
                for (eps, g) in self.relay.epsilon.iter_mut().zip(&self.estimate.g_hat) {
                    if let Some(dir) = Direction::of(*g) {
                        *eps = dir.flipped();
                    }
                }
                switched = true;
            }
            self.relay.k_applied = draw_gains(&self.config, &self.estimate.g_hat, &mut self.rng);
        }
        self.prev_y = Some(y);

        self.regressor = self.relay.rates();
        for (th, rate) in self.theta.iter_mut().zip(&self.regressor) {
            *th += dt * rate;
        }
        self.steps += 1;

        Ok(ControllerOutput {
            theta: self.theta.clone(),
            theta_dot: self.regressor.clone(),
            g_hat: self.estimate.clone(),
            relay: self.relay.clone(),
            switched,
        })
    }

    /// Some channel is moving up its estimated gradient. Zero components carry
    /// no direction and never trigger a switch.
    fn wants_switch(&self) -> bool {
        self.estimate
            .g_hat
            .iter()
            .zip(&self.relay.epsilon)
            .any(|(g, eps)| Direction::of(*g) == Some(*eps))
    }
}
