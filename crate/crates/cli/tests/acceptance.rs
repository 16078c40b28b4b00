//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::{Command, ExitCode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relay_esc::harness::{convergence_or_inf, median};
use relay_esc::nalgebra::DMatrix;
use relay_esc::{
    batch_ls, draw_gains, preset, run_ensemble, run_scenario_with, EscConfig, FirstOrderState,
    GradientSource, HammersteinPlant, Plant, QuadraticMap, RegressorSample, RlsState, RunMetrics,
    RunResult, Scenario,
};

const SEEDS: u64 = 20;
const K0: f64 = 0.01;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Runs shared by several criteria.
struct Ensembles {
    static_fixed: Vec<RunMetrics>,
    static_low: Vec<RunMetrics>,
    dynamic_fixed: Vec<RunMetrics>,
    adaptive: Vec<RunMetrics>,
}

fn seeds() -> Vec<u64> {
    (0..SEEDS).collect()
}

fn metrics(scenario: &Scenario) -> Vec<RunMetrics> {
    run_ensemble(scenario, &seeds())
        .expect("preset runs")
        .into_iter()
        .map(|r| r.metrics)
        .collect()
}

impl Ensembles {
    fn new() -> Self {
        let static_fig4 = preset("static-fig4").unwrap();
        Self {
            static_low: metrics(&static_fig4.clone().with_k0(0.001)),
            static_fixed: metrics(&static_fig4),
            dynamic_fixed: metrics(&preset("dynamic-fig5").unwrap()),
            adaptive: metrics(&preset("adaptive-fig6").unwrap()),
        }
    }
}

/// Median over seeds of the final-segment steady MAE, per channel.
fn median_mae(runs: &[RunMetrics]) -> Vec<f64> {
    let p = runs[0].final_segment().steady_mae.len();
    (0..p)
        .map(|j| {
            median(
                &runs
                    .iter()
                    .map(|m| m.final_segment().steady_mae[j])
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

/// Median over seeds of the convergence time after the optimum step.
fn median_conv(runs: &[RunMetrics]) -> f64 {
    median(
        &runs
            .iter()
            .map(|m| convergence_or_inf(m.final_segment()))
            .collect::<Vec<_>>(),
    )
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn static_convergence(e: &Ensembles) -> Verdict {
    let mae = median_mae(&e.static_fixed);
    let conv = median_conv(&e.static_fixed);
    let bound = 3.0 * K0 * 2.0;
    verdict(
        mae.iter().all(|m| *m <= bound) && conv <= 300.0,
        format!(
            "median mae {} <= {bound}, median convergence {conv} <= 300",
            fmt(&mae)
        ),
    )
}

fn gain_trade_off(e: &Ensembles) -> Verdict {
    let (mae_lo, mae_hi) = (median_mae(&e.static_low), median_mae(&e.static_fixed));
    let (conv_lo, conv_hi) = (median_conv(&e.static_low), median_conv(&e.static_fixed));
    verdict(
        mae_lo.iter().zip(&mae_hi).all(|(a, b)| a < b) && conv_lo > conv_hi,
        format!(
            "mae {} < {}, convergence {conv_lo} > {conv_hi}",
            fmt(&mae_lo),
            fmt(&mae_hi)
        ),
    )
}

fn dynamic_oscillation(e: &Ensembles) -> Verdict {
    let dynamic = median_mae(&e.dynamic_fixed);
    let stat = median_mae(&e.static_fixed);
    let bound = 3.0 * K0 * 10.0;
    verdict(
        dynamic.iter().zip(&stat).all(|(d, s)| d > s) && dynamic.iter().all(|d| *d <= bound),
        format!(
            "dynamic mae {} > static {}, <= {bound}",
            fmt(&dynamic),
            fmt(&stat)
        ),
    )
}

fn adaptive_gain(e: &Ensembles) -> Verdict {
    let (mae_a, mae_f) = (median_mae(&e.adaptive), median_mae(&e.dynamic_fixed));
    let (conv_a, conv_f) = (median_conv(&e.adaptive), median_conv(&e.dynamic_fixed));
    verdict(
        mae_a.iter().zip(&mae_f).all(|(a, f)| a <= f) && conv_a <= 1.5 * conv_f,
        format!(
            "mae {} <= {}, convergence {conv_a} <= 1.5 x {conv_f}",
            fmt(&mae_a),
            fmt(&mae_f)
        ),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

fn rls_matches_batch() -> Verdict {
    let mut worst: f64 = 0.0;
    for p in [1usize, 2, 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(p as u64);
        let samples: Vec<RegressorSample> = (0..200)
            .map(|i| {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
                RegressorSample::new(x, rng.gen_range(-1.0..1.0), i as f64)
            })
            .collect();
        let mut rls = RlsState::new(p, 1.0, 1e6).unwrap();
        for s in &samples {
            rls.update(s).unwrap();
        }
        let batch = batch_ls(&samples).unwrap();
        worst = worst.max(rel_err(rls.g(), &batch.g_hat));
    }
    verdict(
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} <= 1e-6"),
    )
}

/// `p` consecutive regressor samples of the relay moving across `map` from `theta`
/// with fixed directions. `gains` supplies each sample's gains. Returns the
/// samples and the mean of the points where the map is differenced.
fn relay_window(
    map: &QuadraticMap,
    theta: &[f64],
    epsilon: &[f64],
    mut gains: impl FnMut() -> Vec<f64>,
) -> (Vec<RegressorSample>, Vec<f64>) {
    let p = theta.len();
    let mut theta = theta.to_vec();
    let mut centre = vec![0.0; p];
    let mut samples = Vec::with_capacity(p);
    for i in 0..p {
        let x: Vec<f64> = gains().iter().zip(epsilon).map(|(k, e)| k * e).collect();
        let next: Vec<f64> = theta.iter().zip(&x).map(|(t, r)| t + r).collect();
        let dy = map.eval(&next) - map.eval(&theta);
        for j in 0..p {
            centre[j] += 0.5 * (theta[j] + next[j]) / p as f64;
        }
        samples.push(RegressorSample::new(x, dy, i as f64));
        theta = next;
    }
    (samples, centre)
}

fn identifiability() -> Verdict {
    // Constant gains: every window is rank one.
    let mut constant_ok = 0;
    let mut constant_total = 0;
    for p in 2..=5usize {
        let map = QuadraticMap::identity(vec![0.0; p]);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + p as u64);
        for _ in 0..25 {
            let theta: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps: Vec<f64> = (0..p).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
            let (samples, _) = relay_window(&map, &theta, &eps, || vec![K0; p]);
            constant_total += 1;
            constant_ok += batch_ls(&samples).unwrap().degenerate as usize;
        }
    }

    // Randomized gains at the start of the post-step transient of the static preset.
    let map = QuadraticMap::identity(vec![0.8, 0.3]);
    let theta = [0.2, 0.7];
    let eps: Vec<f64> = map.gradient(&theta).iter().map(|g| -g.signum()).collect();
    let cfg = EscConfig::static_map(vec![K0; 2], 1.0, theta.to_vec());
    let mut degenerate = 0;
    let mut errors = Vec::new();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (samples, centre) = relay_window(&map, &theta, &eps, || {
            draw_gains(&cfg, &[0.0, 0.0], &mut rng)
        });
        let est = batch_ls(&samples).unwrap();
        if est.degenerate {
            degenerate += 1;
        } else {
            errors.push(rel_err(&est.g_hat, &map.gradient(&centre)));
        }
    }
    let outside = errors.iter().filter(|e| **e > 0.1).count();
    verdict(
        constant_ok == constant_total && degenerate == 0 && outside == 0,
        format!(
            "constant gains degenerate {constant_ok}/{constant_total}; randomized: {degenerate}/100 degenerate, \
             {outside}/100 beyond 10% (median error {:.3}, worst {:.3})",
            median(&errors),
            errors.iter().cloned().fold(0.0, f64::max)
        ),
    )
}

/// Counts hold periods, bounded by consecutive switch events within one
/// segment, that start farther than `threshold` from the optimum and end with
/// a higher cost than they started with.
fn descent_violations(scenario: &Scenario, run: &RunResult, threshold: f64) -> (usize, usize) {
    let starts: Vec<f64> = scenario
        .theta_star_schedule
        .iter()
        .map(|e| e.time)
        .collect();
    let segment_of = |t: f64| starts.iter().rposition(|s| *s <= t).unwrap();
    let switches: Vec<usize> = (0..run.records.len())
        .filter(|&i| run.records[i].switched)
        .collect();
    let (mut checked, mut violations) = (0, 0);
    for w in switches.windows(2) {
        let (a, b) = (&run.records[w[0]], &run.records[w[1]]);
        let seg = segment_of(a.t);
        if seg != segment_of(b.t) {
            continue;
        }
        let star = &scenario.theta_star_schedule[seg].theta_star;
        let dist = a
            .theta
            .iter()
            .zip(star)
            .map(|(t, s)| (t - s).abs())
            .fold(0.0, f64::max);
        if dist > threshold {
            checked += 1;
            violations += (b.q_true > a.q_true) as usize;
        }
    }
    (checked, violations)
}

fn lyapunov_descent() -> Verdict {
    let scenario = preset("static-fig4").unwrap();
    let threshold = K0 * scenario.config.t_hold;
    let (mut checked, mut violations) = (0, 0);
    for seed in seeds() {
        let s = scenario.clone().with_seed(seed);
        let run = run_scenario_with(&s, GradientSource::Oracle).unwrap();
        let (c, v) = descent_violations(&s, &run, threshold);
        checked += c;
        violations += v;
    }
    verdict(
        violations == 0,
        format!("{violations} violations in {checked} hold periods farther than {threshold} from the optimum"),
    )
}

fn switching_frequency(e: &Ensembles) -> Verdict {
    let periods: Vec<f64> = e
        .static_fixed
        .iter()
        .filter_map(|m| m.mean_switch_period)
        .collect();
    let fewest = e
        .static_fixed
        .iter()
        .map(|m| m.steady_switches)
        .min()
        .unwrap();
    let target = 2.0 * 2.0;
    let med = if periods.is_empty() {
        f64::NAN
    } else {
        median(&periods)
    };
    verdict(
        periods.len() == e.static_fixed.len()
            && fewest >= 20
            && (med - target).abs() <= 0.5 * target,
        format!(
            "median period {med:.3} within 50% of {target}, at least {fewest} switches per run"
        ),
    )
}

fn plant_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let mut step_err: f64 = 0.0;
    for _ in 0..100 {
        let (x0, q) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let (tau, dt): (f64, f64) = (rng.gen_range(0.1..100.0), rng.gen_range(0.01..10.0));
        let mut lag = FirstOrderState::new(x0, tau).unwrap();
        let a = (-dt / tau).exp();
        step_err = step_err.max((lag.step(q, dt) - (a * x0 + (1.0 - a) * q)).abs());
    }

    let map = QuadraticMap::identity(vec![0.8, 0.3]);
    let mut plant = HammersteinPlant::new(map, 10.0).unwrap();
    let theta = [0.2, 0.7];
    let q = plant.cost(&theta);
    plant.settle(&[0.5, 0.5]);
    let mut y = 0.0;
    for _ in 0..2000 {
        y = plant.measure(&theta, 1.0);
    }
    let converged = (y - q).abs() <= 1e-12 * q;
    plant.settle(&theta);
    let at_rest = (0..100).all(|_| plant.measure(&theta, 1.0) == q);

    let mut grad_err: f64 = 0.0;
    for _ in 0..100 {
        let p = 3;
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(p, p);
        let h = (&h + h.transpose()) * 0.5;
        let star: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let map = QuadraticMap::new(star, h).unwrap();
        let theta: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = map.gradient(&theta);
        let step = 1e-5;
        for j in 0..p {
            let mut hi = theta.clone();
            let mut lo = theta.clone();
            hi[j] += step;
            lo[j] -= step;
            let fd = (map.eval(&hi) - map.eval(&lo)) / (2.0 * step);
            grad_err = grad_err.max((fd - g[j]).abs());
        }
    }

    verdict(
        step_err <= 1e-12 && converged && at_rest && grad_err <= 1e-8,
        format!(
            "step error {step_err:.1e} <= 1e-12, output {y} vs Q {q} after 2000 steps, equilibrium held bit-exactly: {at_rest}, \
             gradient error {grad_err:.1e} <= 1e-8"
        ),
    )
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_relay-esc"))
            .args(["run", "adaptive-fig6", "--seed", "11", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        files.push(std::fs::read(out.join("trajectory.csv")).unwrap());
    }
    verdict(
        files[0] == files[1],
        format!(
            "two invocations, {} bytes each, identical: {}",
            files[0].len(),
            files[0] == files[1]
        ),
    )
}

fn main() -> ExitCode {
    let e = Ensembles::new();
    let results = [
        ("static-scenario convergence", static_convergence(&e)),
        ("oscillation scales with gain", gain_trade_off(&e)),
        ("dynamic vs static oscillation", dynamic_oscillation(&e)),
        ("adaptive gain vs fixed gain", adaptive_gain(&e)),
        ("RLS equals batch least squares", rls_matches_batch()),
        ("identifiability dichotomy", identifiability()),
        ("Lyapunov descent with oracle gradient", lyapunov_descent()),
        ("switching frequency", switching_frequency(&e)),
        ("plant exactness", plant_exactness()),
        ("trajectory determinism", cli_determinism()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += !v.pass as usize;
        println!("criterion {:>2} {tag}  {name}: {}", i + 1, v.detail);
    }
    println!(
        "{} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
