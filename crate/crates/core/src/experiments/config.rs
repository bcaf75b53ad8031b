//! Scenario files: TOML or JSON, either one scenario at the top level or a
//! list under `scenario`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::analysis::{Policy, SystemSpec};
use crate::distributions::ServiceDistribution;
use crate::simulator::Warmup;

pub const DEFAULT_JOBS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Arrival rates: a single value, an explicit list, or `steps` evenly spaced
/// values from `lo` to `hi` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    List(Vec<f64>),
    Sweep { lo: f64, hi: f64, steps: usize },
}

impl LambdaSpec {
    fn expand(&self) -> Result<Vec<f64>, String> {
        let values = match *self {
            LambdaSpec::Value(v) => vec![v],
            LambdaSpec::List(ref v) => v.clone(),
            LambdaSpec::Sweep { lo, hi, steps } => {
                if !(lo < hi) {
                    return Err(format!("sweep needs lo < hi (got lo = {lo}, hi = {hi})"));
                }
                if steps < 2 {
                    return Err(format!("sweep needs steps >= 2 (got {steps})"));
                }
                let width = (hi - lo) / (steps - 1) as f64;
                (0..steps)
                    .map(|i| if i + 1 == steps { hi } else { lo + width * i as f64 })
                    .collect()
            }
        };
        if values.is_empty() {
            return Err("lambda list is empty".into());
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(format!("lambda must be finite and >= 0 (got {bad})"));
        }
        Ok(values)
    }
}

/// A scenario as written in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub name: String,
    pub policy: Policy,
    pub dist: ServiceDistribution,
    pub n: OneOrMany<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<OneOrMany<u32>>,
    pub lambda: LambdaSpec,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<Warmup>,
    #[serde(default = "default_replications")]
    pub replications: u32,
}

fn default_jobs() -> usize {
    DEFAULT_JOBS
}

fn default_replications() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioList {
    scenario: Vec<RawScenario>,
}

/// A validated scenario expanded to concrete sweep values.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub policy: Policy,
    pub dist: ServiceDistribution,
    /// `(n, r)` pairs in file order, `n` outermost.
    pub shapes: Vec<(u32, u32)>,
    pub lambdas: Vec<f64>,
    pub jobs: usize,
    pub seed: u64,
    pub warmup: Option<Warmup>,
    pub replications: u32,
}

/// One simulation to run: a system, its replication index and seed.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub system: SystemSpec,
    pub replication: u32,
    pub seed: u64,
}

impl Scenario {
    /// Every `(n, r, lambda)` combination, in sweep order.
    pub fn systems(&self) -> Vec<SystemSpec> {
        let mut out = Vec::with_capacity(self.shapes.len() * self.lambdas.len());
        for &(n, r) in &self.shapes {
            for &lambda in &self.lambdas {
                out.push(SystemSpec {
                    n,
                    r,
                    lambda,
                    policy: self.policy,
                    dist: self.dist.clone(),
                });
            }
        }
        out
    }

    /// Replication `k` of every sweep point runs with seed `seed + k`, so
    /// points within one replication share random streams.
    pub fn points(&self) -> Vec<SweepPoint> {
        self.systems()
            .into_iter()
            .flat_map(|system| {
                (0..self.replications).map(move |k| SweepPoint {
                    system: system.clone(),
                    replication: k,
                    seed: self.seed.wrapping_add(u64::from(k)),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

pub fn load_config(path: &Path) -> Result<Vec<Scenario>, ExperimentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, ConfigFormat::from_path(path))
}

pub fn parse_config(text: &str, format: ConfigFormat) -> Result<Vec<Scenario>, ExperimentError> {
    let raw = match format {
        ConfigFormat::Toml => parse_toml(text)?,
        ConfigFormat::Json => parse_json(text)?,
    };
    if raw.is_empty() {
        return Err(ExperimentError::Parse {
            line: None,
            message: "config defines no scenarios".into(),
        });
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, s)| {
            validate(&s).map_err(|(key, message)| ExperimentError::Validation {
                scenario: s.name.clone(),
                line: key_line(text, format, i, key),
                message,
            })
        })
        .collect()
}

fn parse_toml(text: &str) -> Result<Vec<RawScenario>, ExperimentError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    if table.contains_key("scenario") {
        let list: ScenarioList = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        Ok(list.scenario)
    } else {
        Ok(vec![toml::from_str(text).map_err(|e| toml_error(text, e))?])
    }
}

fn toml_error(text: &str, e: toml::de::Error) -> ExperimentError {
    let line = e
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    ExperimentError::Parse {
        line,
        message: e.message().to_string(),
    }
}

fn parse_json(text: &str) -> Result<Vec<RawScenario>, ExperimentError> {
    let err = |e: serde_json::Error| ExperimentError::Parse {
        line: Some(e.line()),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(err)?;
    if value.is_array() {
        serde_json::from_str(text).map_err(err)
    } else if value.get("scenario").is_some() {
        let list: ScenarioList = serde_json::from_str(text).map_err(err)?;
        Ok(list.scenario)
    } else {
        Ok(vec![serde_json::from_str(text).map_err(err)?])
    }
}

fn validate(raw: &RawScenario) -> Result<Scenario, (&'static str, String)> {
    if raw.name.trim().is_empty() {
        return Err(("name", "name must not be empty".into()));
    }
    let lambdas = raw.lambda.expand().map_err(|m| ("lambda", m))?;
    let ns = raw.n.to_vec();
    if ns.is_empty() {
        return Err(("n", "n list is empty".into()));
    }
    let rs = raw.r.as_ref().map(OneOrMany::to_vec);
    if rs.as_ref().is_some_and(Vec::is_empty) {
        return Err(("r", "r list is empty".into()));
    }
    let mut shapes = Vec::new();
    for &n in &ns {
        for r in rs.clone().unwrap_or_else(|| vec![n]) {
            let spec = SystemSpec {
                n,
                r,
                lambda: lambdas[0],
                policy: raw.policy,
                dist: raw.dist.clone(),
            };
            spec.validate().map_err(|e| (if n == 0 { "n" } else { "r" }, e.to_string()))?;
            shapes.push((n, r));
        }
    }
    if raw.jobs == 0 {
        return Err(("jobs", "jobs must be at least 1".into()));
    }
    if let Some(w) = raw.warmup {
        Warmup::resolve(Some(w), raw.jobs).map_err(|e| ("warmup", e.to_string()))?;
    }
    if raw.replications == 0 {
        return Err(("replications", "replications must be at least 1".into()));
    }
    Ok(Scenario {
        name: raw.name.clone(),
        policy: raw.policy,
        dist: raw.dist.clone(),
        shapes,
        lambdas,
        jobs: raw.jobs,
        seed: raw.seed,
        warmup: raw.warmup,
        replications: raw.replications,
    })
}

/// Best-effort 1-based line of `key` inside the `index`-th scenario.
fn key_line(text: &str, format: ConfigFormat, index: usize, key: &str) -> Option<usize> {
    let lines: Vec<&str> = text.lines().collect();
    match format {
        ConfigFormat::Toml => {
            let headers: Vec<usize> = lines
                .iter()
                .enumerate()
                .filter(|(_, l)| l.trim() == "[[scenario]]")
                .map(|(i, _)| i)
                .collect();
            let (start, end) = if headers.is_empty() {
                (0, lines.len())
            } else {
                (
                    *headers.get(index)?,
                    headers.get(index + 1).copied().unwrap_or(lines.len()),
                )
            };
            (start..end)
                .find(|&i| {
                    lines[i]
                        .trim_start()
                        .strip_prefix(key)
                        .is_some_and(|rest| rest.trim_start().starts_with('='))
                })
                .map(|i| i + 1)
        }
        ConfigFormat::Json => {
            let needle = format!("\"{key}\"");
            lines
                .iter()
                .enumerate()
                .filter(|(_, l)| l.contains(&needle))
                .nth(index)
                .map(|(i, _)| i + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"
name = "one"
policy = "fork_join"
dist = { kind = "shiftedexp", delta = 1.0, mu = 0.5 }
n = [1, 2, 4]
lambda = { lo = 0.1, hi = 0.2, steps = 3 }
jobs = 1000
seed = 9
"#;

    #[test]
    fn single_scenario_defaults() {
        let s = parse_config(SINGLE, ConfigFormat::Toml).unwrap();
        assert_eq!(s.len(), 1);
        let s = &s[0];
        assert_eq!(s.shapes, vec![(1, 1), (2, 2), (4, 4)]);
        assert_eq!(s.lambdas.len(), 3);
        assert!((s.lambdas[1] - 0.15).abs() < 1e-15);
        assert_eq!(s.lambdas[2], 0.2);
        assert_eq!(s.replications, 1);
        assert_eq!(s.points().len(), 9);
    }

    #[test]
    fn scenario_list_and_json() {
        let text = r#"
[[scenario]]
name = "a"
policy = "partial_group_random"
dist = { kind = "exp", mu = 1.0 }
n = 6
r = [1, 2, 3, 6]
lambda = 0.5
replications = 2
seed = 4

[[scenario]]
name = "b"
policy = "fork_early_cancel"
dist = { kind = "hyperexp", p = 0.1, mu1 = 1.5, mu2 = 0.5 }
n = 4
lambda = [0.0, 0.4]
"#;
        let s = parse_config(text, ConfigFormat::Toml).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].shapes, vec![(6, 1), (6, 2), (6, 3), (6, 6)]);
        let seeds: Vec<u64> = s[0].points().iter().map(|p| p.seed).collect();
        assert_eq!(&seeds[..4], &[4, 5, 4, 5]);
        assert_eq!(s[1].jobs, DEFAULT_JOBS);

        let json = r#"{"scenario": [{"name": "j", "policy": "fork_join",
            "dist": {"kind": "exp", "mu": 2.0}, "n": 3, "lambda": 0.5}]}"#;
        let s = parse_config(json, ConfigFormat::Json).unwrap();
        assert_eq!(s[0].shapes, vec![(3, 3)]);
        let arr = r#"[{"name": "j", "policy": "fork_join", "dist": {"kind": "exp", "mu": 2.0}, "n": 3, "lambda": 0.5}]"#;
        assert_eq!(parse_config(arr, ConfigFormat::Json).unwrap().len(), 1);
    }

    fn line_of(err: ExperimentError) -> Option<usize> {
        match err {
            ExperimentError::Parse { line, .. } | ExperimentError::Validation { line, .. } => line,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_carry_lines() {
        let bad_sweep = SINGLE.replace("steps = 3", "steps = 1");
        let e = parse_config(&bad_sweep, ConfigFormat::Toml).unwrap_err();
        assert!(e.to_string().contains("steps"), "{e}");
        assert_eq!(line_of(e), Some(6));

        let reversed = SINGLE.replace("lo = 0.1, hi = 0.2", "lo = 0.3, hi = 0.2");
        assert!(parse_config(&reversed, ConfigFormat::Toml).is_err());

        let bad_r = SINGLE.replace("n = [1, 2, 4]", "n = 4\nr = 2");
        assert_eq!(line_of(parse_config(&bad_r, ConfigFormat::Toml).unwrap_err()), Some(6));

        let unknown = SINGLE.replace("seed = 9", "sead = 9");
        let e = parse_config(&unknown, ConfigFormat::Toml).unwrap_err();
        assert_eq!(line_of(e), Some(8));

        let bad_dist = SINGLE.replace("mu = 0.5", "mu = -0.5");
        let e = parse_config(&bad_dist, ConfigFormat::Toml).unwrap_err();
        assert_eq!(line_of(e), Some(4));

        let warm = SINGLE.replace("seed = 9", "warmup = 5000");
        let e = parse_config(&warm, ConfigFormat::Toml).unwrap_err();
        assert_eq!(line_of(e), Some(8));

        let e = parse_config("{\"name\": 3}", ConfigFormat::Json).unwrap_err();
        assert_eq!(line_of(e), Some(1));
        assert!(parse_config("", ConfigFormat::Toml).is_err());
    }

    #[test]
    fn warmup_forms() {
        let frac = SINGLE.replace("seed = 9", "warmup = 0.2");
        assert_eq!(
            parse_config(&frac, ConfigFormat::Toml).unwrap()[0].warmup,
            Some(Warmup::Fraction(0.2))
        );
        let jobs = SINGLE.replace("seed = 9", "warmup = 100");
        assert_eq!(
            parse_config(&jobs, ConfigFormat::Toml).unwrap()[0].warmup,
            Some(Warmup::Jobs(100))
        );
    }
}
