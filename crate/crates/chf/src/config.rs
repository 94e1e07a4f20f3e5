//! Flat `[section] key = value` run configuration.
//!
//! Every key has a default, so an empty file is a valid config. Unknown
//! sections or keys are hard errors: a verification run should never silently
//! ignore a typo. Command-line overrides arrive as `--key=value` or
//! `--section.key=value` pairs and are applied after the file, last one wins.

use std::path::{Path, PathBuf};

use crate::error::ChfError;
use crate::flow::{FScheme, FlowParams, UScheme};
use crate::geometry::{GridGeometry, TargetManifold, TWO_PI};
use crate::scenario::Scenario;

/// Schema: which keys may appear in which section. `ball` may repeat.
const SCHEMA: &[(&str, &[&str])] = &[
    ("geometry", &["nx", "ny", "lx", "ly"]),
    ("target", &["kind", "n"]),
    (
        "params",
        &[
            "a",
            "b",
            "dt",
            "t_end",
            "u_scheme",
            "f_scheme",
            "baseline_classic",
            "project",
            "on_manifold_tol",
            "picard_tol",
            "picard_max_iter",
        ],
    ),
    ("scenario", &["name", "k", "lambda", "cx", "cy", "seed", "modes", "file"]),
    ("output", &["dir", "cadence", "snapshot_cadence"]),
    ("diagnostics", &["ball", "eps1", "radii", "ceiling"]),
];

fn section_of(key: &str) -> Result<&'static str, ChfError> {
    let mut hits = SCHEMA.iter().filter(|(_, keys)| keys.contains(&key));
    match (hits.next(), hits.next()) {
        (Some((sec, _)), None) => Ok(sec),
        (None, _) => Err(ChfError::Config(format!("unknown config key `{key}`"))),
        (Some(_), Some(_)) => Err(ChfError::Config(format!(
            "ambiguous config key `{key}`: qualify it as section.key"
        ))),
    }
}

/// Parsed key/value pairs, order preserved so repeated keys accumulate and
/// later values win for scalar lookups.
#[derive(Default, Debug)]
struct RawConfig {
    entries: Vec<(String, String, String)>, // (section, key, value)
}

impl RawConfig {
    fn push(&mut self, section: &str, key: &str, value: &str) -> Result<(), ChfError> {
        let known = SCHEMA
            .iter()
            .find(|(s, _)| *s == section)
            .ok_or_else(|| ChfError::Config(format!("unknown config section `[{section}]`")))?;
        if !known.1.contains(&key) {
            return Err(ChfError::Config(format!(
                "unknown key `{key}` in section `[{section}]`"
            )));
        }
        self.entries.push((section.into(), key.into(), value.into()));
        Ok(())
    }

    fn last(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    fn all(&self, section: &str, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
            .collect()
    }
}

fn parse_text(text: &str) -> Result<RawConfig, ChfError> {
    let mut raw = RawConfig::default();
    let mut section: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    ChfError::Config(format!("line {}: unterminated section header", lineno + 1))
                })?
                .trim();
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ChfError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let section = section.as_deref().ok_or_else(|| {
            ChfError::Config(format!("line {}: key before any [section]", lineno + 1))
        })?;
        raw.push(section, key.trim(), value.trim())?;
    }
    Ok(raw)
}

/// Apply `--key=value` / `--section.key=value` pairs on top of the file.
fn apply_overrides(raw: &mut RawConfig, overrides: &[(String, String)]) -> Result<(), ChfError> {
    for (key, value) in overrides {
        let (section, key) = match key.split_once('.') {
            Some((s, k)) => (s.to_string(), k),
            None => (section_of(key)?.to_string(), key.as_str()),
        };
        raw.push(&section, key, value)?;
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T, ChfError> {
    v.parse().map_err(|_| {
        ChfError::Config(format!("[{section}] {key}: cannot parse `{v}`"))
    })
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool, ChfError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ChfError::Config(format!("[{section}] {key}: expected a boolean, got `{v}`"))),
    }
}

/// Everything a run needs, validated.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub geometry: GridGeometry,
    pub target: TargetManifold,
    pub params: FlowParams,
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    /// Record a diagnostics row every `cadence` steps.
    pub cadence: usize,
    /// Write a state snapshot every `snapshot_cadence` steps; 0 = final only.
    pub snapshot_cadence: usize,
    /// Ball centers (physical coordinates) and radii for local diagnostics.
    pub balls: Vec<(f64, f64, f64)>,
    /// Concentration threshold; None means E(0)/10.
    pub eps1: Option<f64>,
    /// Scan radii for concentration detection.
    pub radii: Vec<f64>,
    /// Density ceiling for baseline comparison first-crossing times.
    pub ceiling: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self, ChfError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self, ChfError> {
        let mut raw = parse_text(text)?;
        apply_overrides(&mut raw, overrides)?;
        build(&raw)
    }
}

fn build(raw: &RawConfig) -> Result<RunConfig, ChfError> {
    let num_or = |sec: &str, key: &str, dflt: f64| -> Result<f64, ChfError> {
        raw.last(sec, key).map_or(Ok(dflt), |v| parse_num(sec, key, v))
    };
    let int_or = |sec: &str, key: &str, dflt: usize| -> Result<usize, ChfError> {
        raw.last(sec, key).map_or(Ok(dflt), |v| parse_num(sec, key, v))
    };

    let nx = int_or("geometry", "nx", 64)?;
    let ny = int_or("geometry", "ny", 64)?;
    let lx = num_or("geometry", "lx", TWO_PI)?;
    let ly = num_or("geometry", "ly", TWO_PI)?;
    let geometry = GridGeometry::new(nx, ny, lx, ly)?;

    let n = int_or("target", "n", 2)?;
    let target = match raw.last("target", "kind").unwrap_or("sphere") {
        "sphere" => TargetManifold::UnitSphere { n },
        "euclidean" => TargetManifold::Euclidean { dim: n },
        other => {
            return Err(ChfError::Config(format!(
                "[target] kind: expected sphere or euclidean, got `{other}`"
            )))
        }
    };

    let dflt = FlowParams::default();
    let u_scheme = match raw.last("params", "u_scheme").unwrap_or("closed_form") {
        "closed_form" => UScheme::ClosedForm,
        "direct_ode" => UScheme::DirectOde,
        other => {
            return Err(ChfError::Config(format!(
                "[params] u_scheme: expected closed_form or direct_ode, got `{other}`"
            )))
        }
    };
    let f_scheme = match raw.last("params", "f_scheme").unwrap_or("euler") {
        "euler" => FScheme::Euler,
        "rk4" => FScheme::Rk4,
        "semi_implicit" => FScheme::SemiImplicit,
        other => {
            return Err(ChfError::Config(format!(
                "[params] f_scheme: expected euler, rk4 or semi_implicit, got `{other}`"
            )))
        }
    };
    let params = FlowParams {
        a: num_or("params", "a", dflt.a)?,
        b: num_or("params", "b", dflt.b)?,
        dt: num_or("params", "dt", dflt.dt)?,
        t_end: num_or("params", "t_end", dflt.t_end)?,
        u_scheme,
        f_scheme,
        baseline_classic: raw
            .last("params", "baseline_classic")
            .map_or(Ok(dflt.baseline_classic), |v| parse_bool("params", "baseline_classic", v))?,
        project: raw
            .last("params", "project")
            .map_or(Ok(dflt.project), |v| parse_bool("params", "project", v))?,
        on_manifold_tol: num_or("params", "on_manifold_tol", dflt.on_manifold_tol)?,
    };
    params.validate(&target)?;

    let scenario = match raw.last("scenario", "name").unwrap_or("harmonic_wrap") {
        "constant" => Scenario::Constant,
        "harmonic_wrap" => Scenario::HarmonicWrap {
            k: int_or("scenario", "k", 1)? as u32,
        },
        "bubble_candidate" => Scenario::BubbleCandidate {
            lambda: num_or("scenario", "lambda", 0.3)?,
            cx: num_or("scenario", "cx", 0.5 * lx)?,
            cy: num_or("scenario", "cy", 0.5 * ly)?,
        },
        "random_smooth" => Scenario::RandomSmooth {
            seed: raw
                .last("scenario", "seed")
                .map_or(Ok(1u64), |v| parse_num("scenario", "seed", v))?,
            modes: int_or("scenario", "modes", 3)? as u32,
        },
        "custom" => Scenario::Custom {
            path: PathBuf::from(raw.last("scenario", "file").ok_or_else(|| {
                ChfError::Config("[scenario] custom needs `file = <snapshot path>`".into())
            })?),
        },
        other => {
            return Err(ChfError::Config(format!("unknown scenario `{other}`")));
        }
    };

    let cadence = int_or("output", "cadence", 10)?;
    if cadence < 1 {
        return Err(ChfError::Config("[output] cadence must be at least 1".into()));
    }
    let snapshot_cadence = int_or("output", "snapshot_cadence", 0)?;

    let mut balls = Vec::new();
    for spec in raw.all("diagnostics", "ball") {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(ChfError::Config(format!(
                "[diagnostics] ball: expected `cx, cy, r`, got `{spec}`"
            )));
        }
        balls.push((
            parse_num("diagnostics", "ball", parts[0])?,
            parse_num("diagnostics", "ball", parts[1])?,
            parse_num("diagnostics", "ball", parts[2])?,
        ));
    }
    let eps1 = match raw.last("diagnostics", "eps1") {
        Some(v) => Some(parse_num::<f64>("diagnostics", "eps1", v)?),
        None => None,
    };
    if let Some(e) = eps1 {
        if !(e > 0.0) {
            return Err(ChfError::Config("[diagnostics] eps1 must be positive".into()));
        }
    }
    let radii = match raw.last("diagnostics", "radii") {
        // default: 0.5 when the grid resolves it, else the smallest resolved
        // radius; no scanning at all if even that cannot fit on the torus
        None => {
            let r = (4.0 * geometry.hx.max(geometry.hy)).max(0.5);
            if 2.0 * r < 0.5 * geometry.lx.min(geometry.ly) {
                vec![r]
            } else {
                Vec::new()
            }
        }
        Some(list) => {
            let mut out = Vec::new();
            for item in list.split(',') {
                let r: f64 = parse_num("diagnostics", "radii", item.trim())?;
                if !(r > 0.0) {
                    return Err(ChfError::Config("[diagnostics] radii must be positive".into()));
                }
                out.push(r);
            }
            out
        }
    };
    let ceiling = num_or("diagnostics", "ceiling", 50.0)?;
    if !(ceiling > 0.0) {
        return Err(ChfError::Config("[diagnostics] ceiling must be positive".into()));
    }

    let picard_tol = num_or("params", "picard_tol", 1e-10)?;
    if !(picard_tol > 0.0) {
        return Err(ChfError::Config("[params] picard_tol must be positive".into()));
    }
    let picard_max_iter = int_or("params", "picard_max_iter", 30)?;
    if picard_max_iter < 1 {
        return Err(ChfError::Config("[params] picard_max_iter must be at least 1".into()));
    }

    Ok(RunConfig {
        geometry,
        target,
        params,
        scenario,
        output_dir: PathBuf::from(raw.last("output", "dir").unwrap_or("out")),
        cadence,
        snapshot_cadence,
        balls,
        eps1,
        radii,
        ceiling,
        picard_tol,
        picard_max_iter,
    })
}

/// Split a CLI argument list into `--key=value` override pairs and positional
/// arguments.
pub fn split_cli_args(args: &[String]) -> Result<(Vec<(String, String)>, Vec<String>), ChfError> {
    let mut overrides = Vec::new();
    let mut positional = Vec::new();
    for arg in args {
        if let Some(rest) = arg.strip_prefix("--") {
            let (key, value) = rest.split_once('=').ok_or_else(|| {
                ChfError::Config(format!("flag `{arg}` must look like --key=value"))
            })?;
            overrides.push((key.to_string(), value.to_string()));
        } else {
            positional.push(arg.clone());
        }
    }
    Ok((overrides, positional))
}
