//! Experiment configuration.
//!
//! A configuration is a set of `key = value` pairs. They come from an
//! optional file (`--config`), then from flags, which win. Keys missing from
//! both take the defaults listed in [`ExperimentConfig::from_pairs`]; the seed
//! list defaults to `FROGSIM_SEED`, or to the single seed 1.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use frogsim::engine::{HorizonRule, WindowShape, DEFAULT_FROG_CAP};
use frogsim::lattice::MAX_DIM;
use frogsim::{make_drift_kernel, SiteDistribution, TransitionKernel};
use thiserror::Error;

pub const SEED_ENV: &str = "FROGSIM_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Hit,
    Extremes,
    Cascade,
    Simulate,
    PhaseScan,
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Hit => "hit",
            Command::Extremes => "extremes",
            Command::Cascade => "cascade",
            Command::Simulate => "simulate",
            Command::PhaseScan => "phase-scan",
            Command::Certify => "certify",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Command as ValueEnum>::from_str(s, false)
    }
}

/// Every key accepted in a file or as a flag, besides `command`.
pub const KEYS: &[&str] = &[
    "d", "a", "lateral", "dist", "window", "horizon", "shape", "seeds", "workers", "out", "alpha", "k",
    "k-max", "i-max", "c1", "b", "level", "samples", "distances", "gamma", "traces", "r", "c", "beta",
    "c2", "c3", "blocks", "late-from", "tail-n", "bootstrap", "site-cap", "frog-cap", "absorb",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing value for required key `{0}`")]
    Missing(String),
    #[error("cannot parse `{key}` = `{value}`: {reason}")]
    Parse { key: String, value: String, reason: String },
    #[error("`{key}` out of range: {reason}")]
    Range { key: String, reason: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

fn range(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub d: usize,
    pub a: f64,
    pub lateral: f64,
    pub dists: Vec<SiteDistribution>,
    pub windows: Vec<i64>,
    pub horizon: HorizonRule,
    pub shape: WindowShape,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out: PathBuf,
    pub alpha: u64,
    pub k: u32,
    pub k_max: u32,
    pub i_max: u32,
    pub c1: f64,
    pub b: f64,
    /// Requested certificate level `1 - g(k)`.
    pub level: f64,
    pub samples: usize,
    pub distances: Vec<u64>,
    pub gamma: f64,
    pub traces: usize,
    pub r: f64,
    pub c: f64,
    pub beta: f64,
    pub c2: f64,
    pub c3: f64,
    pub blocks: usize,
    pub late_from: usize,
    pub tail_n: Vec<u64>,
    pub bootstrap: usize,
    pub site_cap: Option<u64>,
    pub frog_cap: u64,
    pub absorb: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Parse {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `"0..200"` (half-open) or a comma list.
pub fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = parse(key, lo)?;
        let hi: u64 = parse(key, hi)?;
        if hi <= lo {
            return Err(range(key, format!("empty seed range {value}")));
        }
        return Ok((lo..hi).collect());
    }
    parse_list(key, value)
}

pub fn format_seeds(seeds: &[u64]) -> String {
    let consecutive = seeds.len() > 2 && seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if consecutive {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1] + 1)
    } else {
        join(seeds)
    }
}

fn parse_horizon(key: &str, value: &str) -> Result<HorizonRule, ConfigError> {
    match value.trim().strip_prefix("per-width:") {
        Some(f) => Ok(HorizonRule::PerWidth(parse(key, f)?)),
        None => Ok(HorizonRule::Fixed(parse(key, value)?)),
    }
}

fn format_horizon(h: &HorizonRule) -> String {
    match h {
        HorizonRule::Fixed(t) => t.to_string(),
        HorizonRule::PerWidth(f) => format!("per-width:{f}"),
    }
}

fn parse_shape(key: &str, value: &str) -> Result<WindowShape, ConfigError> {
    let v = value.trim();
    if v == "cube" {
        return Ok(WindowShape::Cube);
    }
    match v.strip_prefix("parabolic:") {
        Some(g) => Ok(WindowShape::Parabolic(parse(key, g)?)),
        None => Err(ConfigError::Parse {
            key: key.into(),
            value: value.into(),
            reason: "expected `cube` or `parabolic:GAMMA`".into(),
        }),
    }
}

fn format_shape(s: &WindowShape) -> String {
    match s {
        WindowShape::Cube => "cube".into(),
        WindowShape::Parabolic(g) => format!("parabolic:{g}"),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_kv_text(text: &str, path: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.into(),
            line: n + 1,
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key != "command" && !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if value.is_empty() {
            return Err(ConfigError::Missing(key));
        }
        map.insert(key, value.to_string());
    }
    Ok(map)
}

impl ExperimentConfig {
    /// Resolves a configuration from `key = value` pairs. Defaults:
    /// `d = 1`, `a = 0.2`, `lateral = 0` for `d = 1` and `0.5` otherwise,
    /// `dist = exppareto:1`, `window = 16,256`, `horizon = per-width:4`,
    /// `shape = cube` for `d = 1` and `parabolic:1` otherwise, `workers = 0`
    /// (all cores), `out = frogsim-out`, `alpha = 3`, `k = 2`, `k-max = 64`,
    /// `i-max = 6`, `c1 = 0.5`, `b = 0.1`, `level = 0.5`,
    /// `samples = 10000`, `distances = 16,64,256`, `gamma = 1`,
    /// `traces = 200`, `r = (d+1)/2`, `c = 1`, `beta = 2`, `c2 = 1`,
    /// `c3 = 1`, `blocks = 12`, `late-from = blocks/2 + 1`,
    /// `tail-n = 5,10,20,40`, `bootstrap = 200`, `site-cap = none`,
    /// `frog-cap = 10000000`, `absorb = false`.
    pub fn from_pairs(map: &BTreeMap<String, String>, env_seed: Option<&str>) -> Result<Self, ConfigError> {
        for key in map.keys() {
            if key != "command" && !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let get = |key: &str| map.get(key).map(String::as_str);
        let command = match get("command") {
            Some(v) => parse::<Command>("command", v)?,
            None => return Err(ConfigError::Missing("command".into())),
        };
        let num = |key: &str, default: &str| get(key).unwrap_or(default).to_string();

        let d: usize = parse("d", &num("d", "1"))?;
        if d == 0 || d > MAX_DIM {
            return Err(range("d", format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        let a: f64 = parse("a", &num("a", "0.2"))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(range("a", format!("drift {a} not in (0,1)")));
        }
        let lateral: f64 = parse("lateral", &num("lateral", if d == 1 { "0" } else { "0.5" }))?;
        make_drift_kernel(d, a, lateral).map_err(|e| range("lateral", e.to_string()))?;

        let dists = get("dist")
            .unwrap_or("exppareto:1")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<SiteDistribution>().map_err(|e| range("dist", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if dists.is_empty() {
            return Err(ConfigError::Missing("dist".into()));
        }

        let windows: Vec<i64> = parse_list("window", &num("window", "16,256"))?;
        if windows.is_empty() || windows[0] < 0 || windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(range("window", "half-widths must be nonnegative and strictly increasing"));
        }
        let horizon = parse_horizon("horizon", &num("horizon", "per-width:4"))?;
        if let HorizonRule::PerWidth(f) = horizon {
            if !(f > 0.0 && f.is_finite()) {
                return Err(range("horizon", format!("factor {f} must be positive")));
            }
        }
        let shape = parse_shape("shape", &num("shape", if d == 1 { "cube" } else { "parabolic:1" }))?;
        if let WindowShape::Parabolic(g) = shape {
            if !(g > 0.0 && g.is_finite()) {
                return Err(range("shape", format!("gamma {g} must be positive")));
            }
        }

        let seeds = match (get("seeds"), env_seed) {
            (Some(v), _) => parse_seeds("seeds", v)?,
            (None, Some(env)) => parse_seeds(SEED_ENV, env)?,
            (None, None) => vec![1],
        };
        if seeds.is_empty() {
            return Err(ConfigError::Missing("seeds".into()));
        }

        let workers: usize = parse("workers", &num("workers", "0"))?;
        let out = PathBuf::from(get("out").unwrap_or("frogsim-out"));

        let alpha: u64 = parse("alpha", &num("alpha", "3"))?;
        if alpha < 3 {
            return Err(range("alpha", format!("alpha = {alpha} must be at least 3")));
        }
        let k: u32 = parse("k", &num("k", "2"))?;
        if k < 2 {
            return Err(range("k", format!("k = {k} must be at least 2")));
        }
        let k_max: u32 = parse("k-max", &num("k-max", "64"))?;
        if k_max < k {
            return Err(range("k-max", format!("k-max = {k_max} is below k = {k}")));
        }
        let i_max: u32 = parse("i-max", &num("i-max", "6"))?;
        let c1: f64 = parse("c1", &num("c1", "0.5"))?;
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(range("c1", format!("c1 = {c1} must be positive")));
        }
        let b: f64 = parse("b", &num("b", "0.1"))?;
        if !(b > 0.0 && b.is_finite()) {
            return Err(range("b", format!("b = {b} must be positive")));
        }
        let level: f64 = parse("level", &num("level", "0.5"))?;
        if !(level > 0.0 && level < 1.0) {
            return Err(range("level", format!("level = {level} not in (0,1)")));
        }
        let samples: usize = parse("samples", &num("samples", "10000"))?;
        if samples == 0 {
            return Err(range("samples", "need at least one sample"));
        }
        let distances: Vec<u64> = parse_list("distances", &num("distances", "16,64,256"))?;
        if distances.is_empty() || distances.contains(&0) {
            return Err(range("distances", "distances must be positive"));
        }
        let gamma: f64 = parse("gamma", &num("gamma", "1"))?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(range("gamma", format!("gamma = {gamma} must be >= 0")));
        }
        let traces: usize = parse("traces", &num("traces", "200"))?;
        if traces == 0 {
            return Err(range("traces", "need at least one trace"));
        }
        let r: f64 = match get("r") {
            Some(v) => parse("r", v)?,
            None => (d as f64 + 1.0) / 2.0,
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(range("r", format!("r = {r} must be positive")));
        }
        let c: f64 = parse("c", &num("c", "1"))?;
        let beta: f64 = parse("beta", &num("beta", "2"))?;
        let c2: f64 = parse("c2", &num("c2", "1"))?;
        let c3: f64 = parse("c3", &num("c3", "1"))?;
        for (key, v) in [("c", c), ("c2", c2), ("c3", c3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(range(key, format!("{key} = {v} must be positive")));
            }
        }
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(range("beta", format!("beta = {beta} must exceed 1")));
        }
        let blocks: usize = parse("blocks", &num("blocks", "12"))?;
        if blocks < 2 {
            return Err(range("blocks", "need at least two blocks"));
        }
        let late_from: usize = match get("late-from") {
            Some(v) => parse("late-from", v)?,
            None => blocks / 2 + 1,
        };
        if late_from == 0 || late_from > blocks {
            return Err(range("late-from", format!("late-from = {late_from} not in 1..={blocks}")));
        }
        let tail_n: Vec<u64> = parse_list("tail-n", &num("tail-n", "5,10,20,40"))?;
        if tail_n.is_empty() || tail_n.contains(&0) {
            return Err(range("tail-n", "sample sizes must be positive"));
        }
        let bootstrap: usize = parse("bootstrap", &num("bootstrap", "200"))?;
        let site_cap = match get("site-cap").map(str::trim) {
            None | Some("none") => None,
            Some(v) => Some(parse::<u64>("site-cap", v)?),
        };
        let frog_cap: u64 = parse("frog-cap", &num("frog-cap", &DEFAULT_FROG_CAP.to_string()))?;
        if frog_cap == 0 {
            return Err(range("frog-cap", "the initial frog needs a cap of at least 1"));
        }
        let absorb: bool = parse("absorb", &num("absorb", "false"))?;

        Ok(ExperimentConfig {
            command,
            d,
            a,
            lateral,
            dists,
            windows,
            horizon,
            shape,
            seeds,
            workers,
            out,
            alpha,
            k,
            k_max,
            i_max,
            c1,
            b,
            level,
            samples,
            distances,
            gamma,
            traces,
            r,
            c,
            beta,
            c2,
            c3,
            blocks,
            late_from,
            tail_n,
            bootstrap,
            site_cap,
            frog_cap,
            absorb,
        })
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_kv_text(text, "<text>")?, None)
    }

    /// The fully resolved configuration as ordered pairs, `command` first.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("command", self.command.to_string()),
            ("d", self.d.to_string()),
            ("a", self.a.to_string()),
            ("lateral", self.lateral.to_string()),
            ("dist", join(&self.dists)),
            ("window", join(&self.windows)),
            ("horizon", format_horizon(&self.horizon)),
            ("shape", format_shape(&self.shape)),
            ("seeds", format_seeds(&self.seeds)),
            ("workers", self.workers.to_string()),
            ("out", self.out.display().to_string()),
            ("alpha", self.alpha.to_string()),
            ("k", self.k.to_string()),
            ("k-max", self.k_max.to_string()),
            ("i-max", self.i_max.to_string()),
            ("c1", self.c1.to_string()),
            ("b", self.b.to_string()),
            ("level", self.level.to_string()),
            ("samples", self.samples.to_string()),
            ("distances", join(&self.distances)),
            ("gamma", self.gamma.to_string()),
            ("traces", self.traces.to_string()),
            ("r", self.r.to_string()),
            ("c", self.c.to_string()),
            ("beta", self.beta.to_string()),
            ("c2", self.c2.to_string()),
            ("c3", self.c3.to_string()),
            ("blocks", self.blocks.to_string()),
            ("late-from", self.late_from.to_string()),
            ("tail-n", join(&self.tail_n)),
            ("bootstrap", self.bootstrap.to_string()),
            ("site-cap", self.site_cap.map_or_else(|| "none".to_string(), |c| c.to_string())),
            ("frog-cap", self.frog_cap.to_string()),
            ("absorb", self.absorb.to_string()),
        ]
    }

    /// `key = value` text that [`ExperimentConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn kernel(&self) -> TransitionKernel {
        make_drift_kernel(self.d, self.a, self.lateral).expect("validated at parse time")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> BTreeMap<String, String> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = ExperimentConfig::from_pairs(&pairs(&[("command", "simulate")]), None).unwrap();
        assert_eq!(c.d, 1);
        assert_eq!(c.lateral, 0.0);
        assert_eq!(c.seeds, vec![1]);
        assert_eq!(c.shape, WindowShape::Cube);
        let c = ExperimentConfig::from_pairs(&pairs(&[("command", "hit"), ("d", "2")]), None).unwrap();
        assert_eq!(c.lateral, 0.5);
        assert_eq!(c.r, 1.5);
        assert_eq!(c.shape, WindowShape::Parabolic(1.0));
    }

    #[test]
    fn env_seed_is_the_default_only() {
        let c = ExperimentConfig::from_pairs(&pairs(&[("command", "hit")]), Some("42")).unwrap();
        assert_eq!(c.seeds, vec![42]);
        let c = ExperimentConfig::from_pairs(&pairs(&[("command", "hit"), ("seeds", "3,4")]), Some("42")).unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        let e = ExperimentConfig::from_pairs(&pairs(&[("command", "hit")]), Some("x")).unwrap_err();
        assert!(matches!(e, ConfigError::Parse { ref key, .. } if key == SEED_ENV));
    }

    #[test]
    fn errors_name_the_key() {
        let e = ExperimentConfig::from_pairs(&pairs(&[("command", "hit"), ("a", "1.5")]), None).unwrap_err();
        assert!(matches!(e, ConfigError::Range { ref key, .. } if key == "a"));
        let e = ExperimentConfig::from_pairs(&pairs(&[("command", "hit"), ("dist", "exppareto:0")]), None)
            .unwrap_err();
        assert!(e.to_string().contains("dist") && e.to_string().contains("s = 0"), "{e}");
        let e = ExperimentConfig::from_pairs(&pairs(&[("command", "hit"), ("zeta", "1")]), None).unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("zeta".into()));
        let e = ExperimentConfig::from_pairs(&pairs(&[("d", "1")]), None).unwrap_err();
        assert_eq!(e, ConfigError::Missing("command".into()));
        let e = parse_kv_text("d =\n", "f").unwrap_err();
        assert_eq!(e, ConfigError::Missing("d".into()));
        let e = parse_kv_text("d 2\n", "f").unwrap_err();
        assert_eq!(e, ConfigError::Syntax { path: "f".into(), line: 1 });
    }

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("seeds", "3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(format_seeds(&[3, 4, 5]), "3..6");
        assert_eq!(format_seeds(&[3, 4]), "3,4");
        assert_eq!(format_seeds(&[9, 1, 2]), "9,1,2");
        assert!(parse_seeds("seeds", "5..5").is_err());
    }

    #[test]
    fn text_round_trip() {
        let text = "command = phase-scan\nd = 2\na = 0.3\ndist = exppareto:1, exppareto:2 # heavy, light\n\
                    window = 16,256\nseeds = 0..200\nhorizon = 900\nsite-cap = 20\nabsorb = true\n";
        let c = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(c.dists.len(), 2);
        assert_eq!(c.horizon, HorizonRule::Fixed(900));
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }
}
