//! Subcommand implementations. Each returns the text it would print so the
//! binary stays a thin wrapper.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use relay_esc::controller::forgetting_factor;
use relay_esc::harness::{convergence_or_inf, median};
use relay_esc::{preset, run_ensemble, run_scenario, Mode, RunMetrics, Scenario, PRESET_NAMES};

use crate::config::{read_scenario, write_scenario};
use crate::error::CliError;
use crate::output::{metrics_json, sweep_header, sweep_row, write_trajectory};

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    K0,
    #[value(name = "t_hold")]
    THold,
    Zeta,
    Dt,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K0 => "k0",
            SweepParam::THold => "t_hold",
            SweepParam::Zeta => "zeta",
            SweepParam::Dt => "dt",
        }
    }

    /// Sets the parameter. Quantities derived from it (the static hold time,
    /// the dynamic forgetting factor) follow along.
    pub fn apply(self, scenario: &Scenario, value: f64) -> Scenario {
        let mut s = scenario.clone();
        let c = &mut s.config;
        match self {
            SweepParam::K0 => c.k0.iter_mut().for_each(|k| *k = value),
            SweepParam::Zeta => c.zeta = value,
            SweepParam::THold => c.t_hold = value,
            SweepParam::Dt => {
                c.dt = value;
                if c.mode == Mode::Static {
                    c.t_hold = c.p() as f64 * value;
                }
            }
        }
        if c.mode == Mode::Dynamic {
            c.lambda = forgetting_factor(c.dt, c.t_hold);
        }
        s
    }
}

pub const PRESET_NOTES: [&str; 3] = [
    "static map, p = 2, K0 = 0.01, dt = 1, T_d = 2, optimum stepped mid-run",
    "first-order plant tau_s = 10, K0 = 0.01, T_d = 10, forgetting exp(-0.1)",
    "as dynamic-fig5 with the adaptive gain law, zeta = 0.001",
];

/// Reads a scenario file, falling back to a preset name when no such file exists.
pub fn load(source: &str) -> Result<Scenario, CliError> {
    let path = Path::new(source);
    if !path.exists() {
        if let Some(s) = preset(source) {
            return Ok(s);
        }
    }
    read_scenario(path)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs one scenario and writes `trajectory.csv`, `metrics.json` and the
/// resolved `scenario.conf` into `out`.
pub fn run(config: &str, seed: Option<u64>, out: &Path) -> Result<String, CliError> {
    let mut scenario = load(config)?;
    if let Some(seed) = seed {
        scenario.config.seed = seed;
    }
    let result = run_scenario(&scenario)?;

    create_dir(out)?;
    let csv = out.join("trajectory.csv");
    let file = File::create(&csv).map_err(|e| CliError::io(&csv, e))?;
    write_trajectory(BufWriter::new(file), &result.records).map_err(|e| CliError::io(&csv, e))?;
    write_file(&out.join("metrics.json"), &metrics_json(&result.metrics))?;
    write_file(&out.join("scenario.conf"), &write_scenario(&scenario))?;

    let m = &result.metrics;
    let mut msg = format!(
        "{} samples, seed {}, wrote {}\n",
        result.records.len(),
        m.seed,
        out.display()
    );
    for (i, s) in m.segments.iter().enumerate() {
        let _ = writeln!(
            msg,
            "segment {} (t = {}): convergence {}, steady mae {:?}",
            i + 1,
            s.start_time,
            s.convergence_time
                .map_or("never".to_string(), |c| c.to_string()),
            s.steady_mae
        );
    }
    Ok(msg)
}

/// Runs `seeds` consecutive seeds (starting at the configured one) for every
/// value. Writes one row per run to `sweep.csv` and the per-value medians to
/// `summary.csv`; returns the median table.
pub fn sweep(
    config: &str,
    param: SweepParam,
    values: &[f64],
    seeds: u64,
    out: &Path,
) -> Result<String, CliError> {
    if values.is_empty() || seeds == 0 {
        return Err(CliError::Usage(
            "sweep needs at least one value and one seed".into(),
        ));
    }
    let base = load(config)?;
    let seed_list: Vec<u64> = (0..seeds)
        .map(|i| base.config.seed.wrapping_add(i))
        .collect();

    let mut runs: Vec<(f64, Vec<RunMetrics>)> = Vec::with_capacity(values.len());
    for &v in values {
        let scenario = param.apply(&base, v);
        scenario.validate()?;
        let results = run_ensemble(&scenario, &seed_list)?;
        runs.push((v, results.into_iter().map(|r| r.metrics).collect()));
    }

    let p = base.config.p();
    let segments = base.theta_star_schedule.len();
    let mut rows = sweep_header(p, segments);
    rows.push('\n');
    for (v, metrics) in &runs {
        for m in metrics {
            rows.push_str(&sweep_row(param.name(), *v, m));
            rows.push('\n');
        }
    }

    let mut cols = vec![param.name().to_string(), "runs".to_string()];
    cols.extend((1..=segments).map(|s| format!("median_conv_{s}")));
    cols.extend((1..=p).map(|j| format!("median_mae_{j}")));
    cols.push("median_switch_period".into());
    cols.push("median_final_cost".into());
    let mut summary = cols.join(",");
    summary.push('\n');
    for (v, metrics) in &runs {
        let mut line = vec![v.to_string(), metrics.len().to_string()];
        for s in 0..segments {
            let conv: Vec<f64> = metrics
                .iter()
                .map(|m| convergence_or_inf(&m.segments[s]))
                .collect();
            line.push(median(&conv).to_string());
        }
        for j in 0..p {
            let mae: Vec<f64> = metrics
                .iter()
                .map(|m| m.final_segment().steady_mae[j])
                .collect();
            line.push(median(&mae).to_string());
        }
        let periods: Vec<f64> = metrics
            .iter()
            .filter_map(|m| m.mean_switch_period)
            .collect();
        line.push(if periods.is_empty() {
            "nan".into()
        } else {
            median(&periods).to_string()
        });
        let costs: Vec<f64> = metrics.iter().map(|m| m.final_cost_mean).collect();
        line.push(median(&costs).to_string());
        summary.push_str(&line.join(","));
        summary.push('\n');
    }

    create_dir(out)?;
    write_file(&out.join("sweep.csv"), &rows)?;
    write_file(&out.join("summary.csv"), &summary)?;
    Ok(summary)
}

/// Lists the built-in scenarios, or prints one as a scenario file.
pub fn presets(show: Option<&str>) -> Result<String, CliError> {
    match show {
        None => {
            let mut msg = String::new();
            for (name, note) in PRESET_NAMES.iter().zip(PRESET_NOTES) {
                let _ = writeln!(msg, "{name:<14} {note}");
            }
            Ok(msg)
        }
        Some(name) => preset(name)
            .map(|s| write_scenario(&s))
            .ok_or_else(|| CliError::Usage(format!("no preset named `{name}`"))),
    }
}
