//! Closed-loop simulation: scenarios, trajectory records and run metrics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, Direction, EscConfig};
use crate::error::EscError;
use crate::plants::{HammersteinPlant, Plant, QuadraticMap, StaticPlant};

/// Built-in scenarios reproducing the two-channel step experiments.
pub const PRESET_NAMES: [&str; 3] = ["static-fig4", "dynamic-fig5", "adaptive-fig6"];

/// Nominal gain of the adaptive preset. At the optimum the adaptive law
/// applies `2 k0 = 0.008`, below the fixed presets' 0.01; away from it the
/// gradient term lifts the gain above 0.01.
pub const ADAPTIVE_PRESET_K0: f64 = 0.004;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PlantKind {
    StaticMap,
    Hammerstein { tau_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub time: f64,
    pub theta_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: EscConfig,
    pub plant_kind: PlantKind,
    /// Identity when `None`.
    pub hessian: Option<DMatrix<f64>>,
    pub theta_star_schedule: Vec<ScheduleEntry>,
    pub duration: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), EscError> {
        self.config.validate()?;
        let p = self.config.p();
        let sched = &self.theta_star_schedule;
        match sched.first() {
            None => return Err(EscError::InvalidScenario("empty optimum schedule".into())),
            Some(first) if first.time != 0.0 => {
                return Err(EscError::InvalidScenario(format!(
                    "schedule must start at time 0, starts at {}",
                    first.time
                )))
            }
            _ => {}
        }
        if sched.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(EscError::InvalidScenario(
                "schedule times must be strictly increasing".into(),
            ));
        }
        if let Some(bad) = sched.iter().find(|e| e.theta_star.len() != p) {
            return Err(EscError::InvalidScenario(format!(
                "optimum at t = {} has {} entries, expected {p}",
                bad.time,
                bad.theta_star.len()
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(EscError::InvalidScenario(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        if sched.last().is_some_and(|e| e.time >= self.duration) {
            return Err(EscError::InvalidScenario(
                "schedule entry at or after the end of the run".into(),
            ));
        }
        if let PlantKind::Hammerstein { tau_s } = self.plant_kind {
            if !(tau_s > 0.0 && tau_s.is_finite()) {
                return Err(EscError::InvalidScenario(format!(
                    "tau_s = {tau_s} must be positive"
                )));
            }
        }
        self.build_map()?;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.config.dt).round() as usize
    }

    fn build_map(&self) -> Result<QuadraticMap, EscError> {
        let star = self.theta_star_schedule[0].theta_star.clone();
        match &self.hessian {
            None => Ok(QuadraticMap::identity(star)),
            Some(h) => QuadraticMap::new(star, h.clone()),
        }
    }

    fn build_plant(&self) -> Result<Box<dyn Plant>, EscError> {
        let map = self.build_map()?;
        Ok(match self.plant_kind {
            PlantKind::StaticMap => Box::new(StaticPlant::new(map)),
            PlantKind::Hammerstein { tau_s } => Box::new(HammersteinPlant::new(map, tau_s)?),
        })
    }

    /// First sample index of each schedule segment.
    fn segment_starts(&self) -> Vec<usize> {
        let dt = self.config.dt;
        self.theta_star_schedule
            .iter()
            .map(|e| (e.time / dt - 1e-9).ceil().max(0.0) as usize)
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }

    pub fn with_k0(mut self, k0: f64) -> Self {
        self.config.k0.iter_mut().for_each(|k| *k = k0);
        self
    }
}

fn step_schedule(duration: f64) -> Vec<ScheduleEntry> {
    vec![
        ScheduleEntry {
            time: 0.0,
            theta_star: vec![0.2, 0.7],
        },
        ScheduleEntry {
            time: duration / 2.0,
            theta_star: vec![0.8, 0.3],
        },
    ]
}

/// Looks up a built-in scenario by name.
pub fn preset(name: &str) -> Option<Scenario> {
    let start = vec![0.2, 0.7];
    let duration = 6000.0;
    let (config, plant_kind) = match name {
        "static-fig4" => (
            EscConfig::static_map(vec![0.01, 0.01], 1.0, start),
            PlantKind::StaticMap,
        ),
        "dynamic-fig5" => (
            EscConfig::dynamic(vec![0.01, 0.01], 1.0, 10.0, start),
            PlantKind::Hammerstein { tau_s: 10.0 },
        ),
        "adaptive-fig6" => (
            EscConfig::dynamic(vec![ADAPTIVE_PRESET_K0; 2], 1.0, 10.0, start).with_adaptive(0.001),
            PlantKind::Hammerstein { tau_s: 10.0 },
        ),
        _ => return None,
    };
    Some(Scenario {
        config,
        plant_kind,
        hessian: None,
        theta_star_schedule: step_schedule(duration),
        duration,
    })
}

/// One sample of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    /// Inputs in effect when `y` was measured.
    pub theta: Vec<f64>,
    pub y: f64,
    /// Steady-state cost `Q(θ)`.
    pub q_true: f64,
    pub g_hat: Vec<f64>,
    pub epsilon: Vec<Direction>,
    pub k_applied: Vec<f64>,
    pub switched: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub start_time: f64,
    pub theta_star: Vec<f64>,
    /// Seconds from the segment start until `θ` first enters the convergence
    /// band; `None` if it never does.
    pub convergence_time: Option<f64>,
    /// Seconds from the segment start after which `θ` never leaves the band
    /// again within the segment.
    pub settling_time: Option<f64>,
    /// Mean `|θ − θ*|` per channel over the final quarter of the segment.
    pub steady_mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub segments: Vec<SegmentMetrics>,
    /// Relay oscillation period at steady state: twice the mean spacing of
    /// switch events. `None` with fewer than two switches.
    pub mean_switch_period: Option<f64>,
    /// Switch events counted at steady state.
    pub steady_switches: usize,
    /// Mean `Q` over the final quarter of the last segment.
    pub final_cost_mean: f64,
}

impl RunMetrics {
    pub fn final_segment(&self) -> &SegmentMetrics {
        self.segments.last().expect("at least one segment")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<TrajectoryRecord>,
    pub metrics: RunMetrics,
}

/// Where the controller gets its gradient from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    Estimated,
    /// Analytic map gradient; isolates the relay law from estimation.
    Oracle,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunResult, EscError> {
    run_scenario_with(scenario, GradientSource::Estimated)
}

pub fn run_scenario_with(
    scenario: &Scenario,
    source: GradientSource,
) -> Result<RunResult, EscError> {
    scenario.validate()?;
    let dt = scenario.config.dt;
    let n = scenario.samples();
    let starts = scenario.segment_starts();
    let mut plant = scenario.build_plant()?;
    let mut ctl = Controller::new(scenario.config.clone())?;

    let mut segment = 0;
    let mut y = plant.settle(ctl.theta());
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let theta = ctl.theta().to_vec();
        let q_true = plant.cost(&theta);
        let out = match source {
            GradientSource::Estimated => ctl.step(y)?,
            GradientSource::Oracle => {
                let g = plant.map().gradient(&theta);
                ctl.step_with_gradient(y, &g)?
            }
        };
        records.push(TrajectoryRecord {
            t: i as f64 * dt,
            theta,
            y,
            q_true,
            g_hat: out.g_hat.g_hat,
            epsilon: out.relay.epsilon,
            k_applied: out.relay.k_applied,
            switched: out.switched,
            degenerate: out.g_hat.degenerate,
        });

        if i + 1 < n {
            while segment + 1 < starts.len() && starts[segment + 1] <= i + 1 {
                segment += 1;
                plant
                    .map_mut()
                    .set_theta_star(&scenario.theta_star_schedule[segment].theta_star);
            }
            y = plant.measure(&out.theta, dt);
        }
    }

    let metrics = compute_metrics(scenario, &records);
    Ok(RunResult { records, metrics })
}

/// Runs one scenario per seed in parallel; results come back in seed order.
pub fn run_ensemble(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<RunResult>, EscError> {
    seeds
        .par_iter()
        .map(|&seed| run_scenario(&scenario.clone().with_seed(seed)))
        .collect()
}

/// Mean applied gain per channel once the gradient vanishes: `K₀` for the
/// fixed law, `2 K₀ (1 + ζ/2)` for the adaptive law.
pub fn gain_at_optimum(config: &EscConfig) -> Vec<f64> {
    config
        .k0
        .iter()
        .map(|k| {
            if config.adaptive {
                2.0 * k * (1.0 + 0.5 * config.zeta)
            } else {
                *k
            }
        })
        .collect()
}

/// Per-channel convergence band, three times the expected oscillation
/// (gain at the optimum times the hold time).
pub fn convergence_band(config: &EscConfig) -> Vec<f64> {
    gain_at_optimum(config)
        .iter()
        .map(|k| 3.0 * k * config.t_hold)
        .collect()
}

pub fn compute_metrics(scenario: &Scenario, records: &[TrajectoryRecord]) -> RunMetrics {
    let config = &scenario.config;
    let dt = config.dt;
    let p = config.p();
    let band = convergence_band(config);
    let n = records.len();
    let starts = scenario.segment_starts();

    let mut segments = Vec::with_capacity(starts.len());
    let mut steady_windows = Vec::with_capacity(starts.len());
    for (k, entry) in scenario.theta_star_schedule.iter().enumerate() {
        let start = starts[k].min(n);
        let end = starts.get(k + 1).copied().unwrap_or(n).min(n);
        let seg = &records[start..end];
        let star = &entry.theta_star;

        let inside = |r: &TrajectoryRecord| {
            r.theta
                .iter()
                .zip(star)
                .zip(&band)
                .all(|((th, s), b)| (th - s).abs() <= *b)
        };
        let convergence_time = seg.iter().position(&inside).map(|i| i as f64 * dt);
        let settling_time = match seg.iter().rposition(|r| !inside(r)) {
            None if !seg.is_empty() => Some(0.0),
            None => None,
            Some(last_out) if last_out + 1 < seg.len() => Some((last_out + 1) as f64 * dt),
            Some(_) => None,
        };

        let tail_start = start + (end - start) * 3 / 4;
        let tail = &records[tail_start..end];
        let steady_mae = (0..p)
            .map(|j| {
                if tail.is_empty() {
                    return f64::NAN;
                }
                tail.iter()
                    .map(|r| (r.theta[j] - star[j]).abs())
                    .sum::<f64>()
                    / tail.len() as f64
            })
            .collect();
        steady_windows.push(tail_start..end);
        segments.push(SegmentMetrics {
            start_time: entry.time,
            theta_star: star.clone(),
            convergence_time,
            settling_time,
            steady_mae,
        });
    }

    let mut interval_sum = 0.0;
    let mut interval_count = 0usize;
    let mut switches = 0usize;
    for window in &steady_windows {
        let mut last: Option<f64> = None;
        for r in records[window.clone()].iter().filter(|r| r.switched) {
            switches += 1;
            if let Some(prev) = last {
                interval_sum += r.t - prev;
                interval_count += 1;
            }
            last = Some(r.t);
        }
    }
    let mean_switch_period =
        (interval_count > 0).then(|| 2.0 * interval_sum / interval_count as f64);

    let final_cost_mean = steady_windows
        .last()
        .map(|w| {
            let tail = &records[w.clone()];
            tail.iter().map(|r| r.q_true).sum::<f64>() / tail.len().max(1) as f64
        })
        .unwrap_or(f64::NAN);

    RunMetrics {
        seed: config.seed,
        segments,
        mean_switch_period,
        steady_switches: switches,
        final_cost_mean,
    }
}

/// Median of `values`; NaN for an empty slice. Infinite entries sort last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Convergence time with "never converged" mapped to infinity, for ranking.
pub fn convergence_or_inf(segment: &SegmentMetrics) -> f64 {
    segment.convergence_time.unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub label: String,
    pub convergence_time: Option<f64>,
    pub steady_mae: Vec<f64>,
}

/// Runs ordered from fastest to slowest convergence on the final segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffReport {
    /// Faster convergence is paid for with larger oscillation, row by row.
    pub fn is_monotone_tradeoff(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let a = w[0].steady_mae.iter().sum::<f64>();
            let b = w[1].steady_mae.iter().sum::<f64>();
            a >= b
        })
    }
}

pub fn compare_runs(runs: &[(String, RunMetrics)]) -> TradeoffReport {
    let mut rows: Vec<TradeoffRow> = runs
        .iter()
        .map(|(label, m)| {
            let seg = m.final_segment();
            TradeoffRow {
                label: label.clone(),
                convergence_time: seg.convergence_time,
                steady_mae: seg.steady_mae.clone(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let ka = a.convergence_time.unwrap_or(f64::INFINITY);
        let kb = b.convergence_time.unwrap_or(f64::INFINITY);
        ka.total_cmp(&kb)
    });
    TradeoffReport { rows }
}
