//! Scenario files.
//!
//! A scenario file is UTF-8 text made of `key = value` lines grouped under
//! three section headers:
//!
//! ```text
//! [controller]
//! p = 2
//! k0 = 0.01, 0.01
//! dt = 1
//! mode = static
//! theta_init = 0.2, 0.7
//!
//! [plant]
//! plant = static
//!
//! [scenario]
//! theta_star_schedule = 0: 0.2, 0.7; 3000: 0.8, 0.3
//! duration = 6000
//! ```
//!
//! Vectors are comma-separated decimals. `#` starts a comment. Unknown keys,
//! keys under the wrong section and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use relay_esc::controller::{forgetting_factor, DEFAULT_GAMMA};
use relay_esc::nalgebra::DMatrix;
use relay_esc::{Direction, EscConfig, EscError, Mode, PlantKind, Scenario, ScheduleEntry};

use crate::error::CliError;

const CONTROLLER_KEYS: &[&str] = &[
    "p",
    "k0",
    "dt",
    "t_hold",
    "lambda",
    "gamma",
    "mode",
    "adaptive",
    "zeta",
    "seed",
    "theta_init",
    "epsilon_init",
    "minimize",
];
const PLANT_KEYS: &[&str] = &["plant", "tau_s", "hessian"];
const SCENARIO_KEYS: &[&str] = &["theta_star_schedule", "duration"];

fn section_of(key: &str) -> Option<&'static str> {
    if CONTROLLER_KEYS.contains(&key) {
        Some("controller")
    } else if PLANT_KEYS.contains(&key) {
        Some("plant")
    } else if SCENARIO_KEYS.contains(&key) {
        Some("scenario")
    } else {
        None
    }
}

struct Entry {
    line: usize,
    value: String,
}

struct Fields<'a> {
    origin: &'a str,
    entries: BTreeMap<String, Entry>,
}

impl Fields<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.origin.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn require(&self, key: &str) -> Result<&Entry, CliError> {
        self.get(key)
            .ok_or_else(|| self.err(0, format!("missing required key `{key}`")))
    }

    fn parse<T>(&self, key: &str, entry: &Entry) -> Result<T, CliError>
    where
        T: std::str::FromStr,
    {
        entry.value.parse().map_err(|_| {
            self.err(
                entry.line,
                format!("`{key}`: cannot parse `{}`", entry.value),
            )
        })
    }

    fn float(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key).map(|e| self.parse(key, e)).transpose()
    }

    fn vector(&self, key: &str, entry: &Entry) -> Result<Vec<f64>, CliError> {
        parse_vector(&entry.value)
            .map_err(|bad| self.err(entry.line, format!("`{key}`: cannot parse `{bad}`")))
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.get(key)
            .map(|e| match e.value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(self.err(
                    e.line,
                    format!("`{key}`: expected true or false, got `{other}`"),
                )),
            })
            .transpose()
    }
}

fn parse_vector(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().map_err(|_| s.to_string())
        })
        .collect()
}

fn parse_schedule(text: &str) -> Result<Vec<ScheduleEntry>, String> {
    text.split(';')
        .map(|item| {
            let (time, star) = item
                .split_once(':')
                .ok_or_else(|| format!("expected `time: v1, v2, ...`, got `{}`", item.trim()))?;
            let time = time
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("bad time `{}`", time.trim()))?;
            let theta_star = parse_vector(star).map_err(|bad| format!("bad value `{bad}`"))?;
            Ok(ScheduleEntry { time, theta_star })
        })
        .collect()
}

fn tokenize<'a>(text: &str, origin: &'a str) -> Result<Fields<'a>, CliError> {
    let mut fields = Fields {
        origin,
        entries: BTreeMap::new(),
    };
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !["controller", "plant", "scenario"].contains(&name) {
                return Err(fields.err(line, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(fields.err(line, format!("expected `key = value`, got `{content}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(home) = section_of(key) else {
            return Err(fields.err(line, format!("unknown key `{key}`")));
        };
        match &section {
            None => {
                return Err(fields.err(line, format!("`{key}` appears before any section header")))
            }
            Some(s) if s != home => {
                return Err(fields.err(line, format!("`{key}` belongs in [{home}], found in [{s}]")))
            }
            _ => {}
        }
        if value.is_empty() {
            return Err(fields.err(line, format!("`{key}` has no value")));
        }
        if let Some(prev) = fields.entries.get(key) {
            return Err(fields.err(line, format!("`{key}` already set on line {}", prev.line)));
        }
        fields.entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }
    Ok(fields)
}

/// Parses scenario text. `origin` names the source in error messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let f = tokenize(text, origin)?;

    let p_entry = f.require("p")?;
    let p: usize = f.parse("p", p_entry)?;
    let k0 = f.vector("k0", f.require("k0")?)?;
    let dt = f.parse("dt", f.require("dt")?)?;
    let theta_init = f.vector("theta_init", f.require("theta_init")?)?;

    let mode_entry = f.require("mode")?;
    let mode = match mode_entry.value.as_str() {
        "static" => Mode::Static,
        "dynamic" => Mode::Dynamic,
        other => {
            return Err(f.err(
                mode_entry.line,
                format!("`mode`: expected static or dynamic, got `{other}`"),
            ))
        }
    };

    let plant_entry = f.require("plant")?;
    let tau_s = f.float("tau_s")?;
    let plant_kind = match (plant_entry.value.as_str(), tau_s) {
        ("static", None) => PlantKind::StaticMap,
        ("static", Some(_)) => {
            return Err(f.err(
                f.get("tau_s").unwrap().line,
                "`tau_s` only applies to plant = hammerstein",
            ))
        }
        ("hammerstein", Some(tau_s)) => PlantKind::Hammerstein { tau_s },
        ("hammerstein", None) => {
            return Err(f.err(plant_entry.line, "plant = hammerstein needs `tau_s`"))
        }
        (other, _) => {
            return Err(f.err(
                plant_entry.line,
                format!("`plant`: expected static or hammerstein, got `{other}`"),
            ))
        }
    };

    let t_hold = match (f.float("t_hold")?, mode, plant_kind) {
        (Some(t), _, _) => t,
        (None, Mode::Static, _) => k0.len() as f64 * dt,
        (None, Mode::Dynamic, PlantKind::Hammerstein { tau_s }) => tau_s,
        (None, Mode::Dynamic, PlantKind::StaticMap) => {
            return Err(f.err(
                mode_entry.line,
                "mode = dynamic on a static plant needs `t_hold`",
            ))
        }
    };
    let lambda = match (f.float("lambda")?, mode) {
        (Some(l), _) => l,
        (None, Mode::Static) => 1.0,
        (None, Mode::Dynamic) => forgetting_factor(dt, t_hold),
    };

    let epsilon_init = match f.get("epsilon_init") {
        None => None,
        Some(e) => Some(
            f.vector("epsilon_init", e)?
                .into_iter()
                .map(|v| {
                    Direction::of(v).filter(|_| v.abs() == 1.0).ok_or_else(|| {
                        f.err(
                            e.line,
                            format!("`epsilon_init`: entries must be 1 or -1, got {v}"),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };

    let hessian = match f.get("hessian") {
        None => None,
        Some(e) => {
            let values = f.vector("hessian", e)?;
            if values.len() != p * p {
                return Err(f.err(
                    e.line,
                    format!(
                        "`hessian`: expected {} row-major entries, got {}",
                        p * p,
                        values.len()
                    ),
                ));
            }
            Some(DMatrix::from_row_slice(p, p, &values))
        }
    };

    let sched_entry = f.require("theta_star_schedule")?;
    let theta_star_schedule = parse_schedule(&sched_entry.value)
        .map_err(|msg| f.err(sched_entry.line, format!("`theta_star_schedule`: {msg}")))?;

    let config = EscConfig {
        k0,
        dt,
        t_hold,
        lambda,
        gamma: f.float("gamma")?.unwrap_or(DEFAULT_GAMMA),
        mode,
        adaptive: f.boolean("adaptive")?.unwrap_or(false),
        zeta: f.float("zeta")?.unwrap_or(0.0),
        seed: f
            .get("seed")
            .map(|e| f.parse("seed", e))
            .transpose()?
            .unwrap_or(0),
        theta_init,
        epsilon_init,
        minimize: f.boolean("minimize")?.unwrap_or(true),
    };
    let scenario = Scenario {
        config,
        plant_kind,
        hessian,
        theta_star_schedule,
        duration: f.parse("duration", f.require("duration")?)?,
    };

    if scenario.config.p() != p {
        return Err(EscError::InvalidConfig(vec![format!(
            "p = {p} but k0 has {} entries",
            scenario.config.p()
        )])
        .into());
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn read_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text, &path.display().to_string())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes every field explicitly, so the output parses back to `scenario` exactly.
pub fn write_scenario(scenario: &Scenario) -> String {
    let c = &scenario.config;
    let mut out = String::new();
    let mode = match c.mode {
        Mode::Static => "static",
        Mode::Dynamic => "dynamic",
    };
    let _ = writeln!(out, "[controller]");
    let _ = writeln!(out, "p = {}", c.p());
    let _ = writeln!(out, "k0 = {}", join(&c.k0));
    let _ = writeln!(out, "dt = {}", c.dt);
    let _ = writeln!(out, "t_hold = {}", c.t_hold);
    let _ = writeln!(out, "lambda = {}", c.lambda);
    let _ = writeln!(out, "gamma = {}", c.gamma);
    let _ = writeln!(out, "mode = {mode}");
    let _ = writeln!(out, "adaptive = {}", c.adaptive);
    let _ = writeln!(out, "zeta = {}", c.zeta);
    let _ = writeln!(out, "seed = {}", c.seed);
    let _ = writeln!(out, "theta_init = {}", join(&c.theta_init));
    if let Some(eps) = &c.epsilon_init {
        let signs: Vec<f64> = eps.iter().map(|d| d.sign()).collect();
        let _ = writeln!(out, "epsilon_init = {}", join(&signs));
    }
    let _ = writeln!(out, "minimize = {}", c.minimize);

    let _ = writeln!(out, "\n[plant]");
    match scenario.plant_kind {
        PlantKind::StaticMap => {
            let _ = writeln!(out, "plant = static");
        }
        PlantKind::Hammerstein { tau_s } => {
            let _ = writeln!(out, "plant = hammerstein");
            let _ = writeln!(out, "tau_s = {tau_s}");
        }
    }
    if let Some(h) = &scenario.hessian {
        let row_major: Vec<f64> = h.transpose().iter().copied().collect();
        let _ = writeln!(out, "hessian = {}", join(&row_major));
    }

    let _ = writeln!(out, "\n[scenario]");
    let schedule = scenario
        .theta_star_schedule
        .iter()
        .map(|e| format!("{}: {}", e.time, join(&e.theta_star)))
        .collect::<Vec<_>>()
        .join("; ");
    let _ = writeln!(out, "theta_star_schedule = {schedule}");
    let _ = writeln!(out, "duration = {}", scenario.duration);
    out
}
