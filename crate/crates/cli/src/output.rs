//! Trajectory CSV and metrics summary writers.

use std::io::{self, Write};

use relay_esc::{RunMetrics, TrajectoryRecord};
use serde::Serialize;

/// Header row for `p` channels.
pub fn csv_header(p: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=p).map(|j| format!("theta_{j}")));
    cols.push("y".into());
    cols.push("q_true".into());
    for prefix in ["ghat", "eps", "k"] {
        cols.extend((1..=p).map(|j| format!("{prefix}_{j}")));
    }
    cols.push("switched".into());
    cols.join(",")
}

fn push_all(row: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        row.push(',');
        // Display prints the shortest string that parses back to the same bits.
        row.push_str(&v.to_string());
    }
}

pub fn csv_row(r: &TrajectoryRecord) -> String {
    let mut row = r.t.to_string();
    push_all(&mut row, r.theta.iter().copied());
    push_all(&mut row, [r.y, r.q_true]);
    push_all(&mut row, r.g_hat.iter().copied());
    push_all(&mut row, r.epsilon.iter().map(|e| e.sign()));
    push_all(&mut row, r.k_applied.iter().copied());
    row.push_str(if r.switched { ",1" } else { ",0" });
    row
}

pub fn write_trajectory<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> io::Result<()> {
    let p = records.first().map_or(0, |r| r.theta.len());
    out.write_all(csv_header(p).as_bytes())?;
    out.write_all(b"\n")?;
    for r in records {
        out.write_all(csv_row(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Contents of `metrics.json`. `steady_mae` is taken from the last segment;
/// per-segment values are under `segment_steady_mae`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub seed: u64,
    pub convergence_time: Vec<Option<f64>>,
    pub settling_time: Vec<Option<f64>>,
    pub steady_mae: Vec<f64>,
    pub segment_steady_mae: Vec<Vec<f64>>,
    pub mean_switch_period: Option<f64>,
    pub steady_switches: usize,
    pub final_cost_mean: f64,
}

impl From<&RunMetrics> for MetricsSummary {
    fn from(m: &RunMetrics) -> Self {
        Self {
            seed: m.seed,
            convergence_time: m.segments.iter().map(|s| s.convergence_time).collect(),
            settling_time: m.segments.iter().map(|s| s.settling_time).collect(),
            steady_mae: m.final_segment().steady_mae.clone(),
            segment_steady_mae: m.segments.iter().map(|s| s.steady_mae.clone()).collect(),
            mean_switch_period: m.mean_switch_period,
            steady_switches: m.steady_switches,
            final_cost_mean: m.final_cost_mean,
        }
    }
}

pub fn metrics_json(m: &RunMetrics) -> String {
    let mut s =
        serde_json::to_string_pretty(&MetricsSummary::from(m)).expect("plain data serializes");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

/// Header of the per-run sweep table.
pub fn sweep_header(p: usize, segments: usize) -> String {
    let mut cols = vec!["param".to_string(), "value".to_string(), "seed".to_string()];
    cols.extend((1..=segments).map(|s| format!("conv_{s}")));
    cols.extend((1..=p).map(|j| format!("mae_{j}")));
    cols.push("mean_switch_period".into());
    cols.push("final_cost_mean".into());
    cols.join(",")
}

pub fn sweep_row(param: &str, value: f64, m: &RunMetrics) -> String {
    let mut cols = vec![param.to_string(), value.to_string(), m.seed.to_string()];
    cols.extend(m.segments.iter().map(|s| opt(s.convergence_time)));
    cols.extend(m.final_segment().steady_mae.iter().map(|v| v.to_string()));
    cols.push(opt(m.mean_switch_period));
    cols.push(m.final_cost_mean.to_string());
    cols.join(",")
}
