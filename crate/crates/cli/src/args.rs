//! Command-line flags. Every flag is a `key = value` pair of the
//! configuration and overrides the same key from `--config`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{parse_kv_text, Command, ConfigError, ExperimentConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "frogsim", version, about = "Frog model with drift: experiments and bound checks")]
pub struct Cli {
    /// Experiment to run; may instead be given as `command = ...` in the file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<String>,
    /// Drift `a` in (0,1).
    #[arg(long)]
    pub a: Option<String>,
    /// Total lateral mass.
    #[arg(long)]
    pub lateral: Option<String>,
    /// Comma list of `det:m`, `geom:q`, `exppareto:s`.
    #[arg(long)]
    pub dist: Option<String>,
    /// Comma list of window half-widths.
    #[arg(long)]
    pub window: Option<String>,
    /// Fixed step count or `per-width:F` for `ceil(F W / a)`.
    #[arg(long)]
    pub horizon: Option<String>,
    /// `cube` or `parabolic:GAMMA`.
    #[arg(long)]
    pub shape: Option<String>,
    /// `LO..HI` or a comma list.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Directory for artifacts.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub k_max: Option<String>,
    #[arg(long)]
    pub i_max: Option<String>,
    #[arg(long)]
    pub c1: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    /// Certificate level sought by `certify`.
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub distances: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub traces: Option<String>,
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long)]
    pub c: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub c2: Option<String>,
    #[arg(long)]
    pub c3: Option<String>,
    #[arg(long)]
    pub blocks: Option<String>,
    #[arg(long)]
    pub late_from: Option<String>,
    #[arg(long)]
    pub tail_n: Option<String>,
    #[arg(long)]
    pub bootstrap: Option<String>,
    #[arg(long)]
    pub site_cap: Option<String>,
    #[arg(long)]
    pub frog_cap: Option<String>,
    #[arg(long)]
    pub absorb: Option<String>,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("d", &self.d),
            ("a", &self.a),
            ("lateral", &self.lateral),
            ("dist", &self.dist),
            ("window", &self.window),
            ("horizon", &self.horizon),
            ("shape", &self.shape),
            ("seeds", &self.seeds),
            ("workers", &self.workers),
            ("out", &self.out),
            ("alpha", &self.alpha),
            ("k", &self.k),
            ("k-max", &self.k_max),
            ("i-max", &self.i_max),
            ("c1", &self.c1),
            ("b", &self.b),
            ("level", &self.level),
            ("samples", &self.samples),
            ("distances", &self.distances),
            ("gamma", &self.gamma),
            ("traces", &self.traces),
            ("r", &self.r),
            ("c", &self.c),
            ("beta", &self.beta),
            ("c2", &self.c2),
            ("c3", &self.c3),
            ("blocks", &self.blocks),
            ("late-from", &self.late_from),
            ("tail-n", &self.tail_n),
            ("bootstrap", &self.bootstrap),
            ("site-cap", &self.site_cap),
            ("frog-cap", &self.frog_cap),
            ("absorb", &self.absorb),
        ]
    }

    /// Merges the file, the flags and `env_seed` into a validated config.
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
        let mut map = match &self.config {
            Some(path) => {
                let shown = path.display().to_string();
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: shown.clone(),
                    reason: e.to_string(),
                })?;
                parse_kv_text(&text, &shown)?
            }
            None => BTreeMap::new(),
        };
        if let Some(cmd) = self.command {
            map.insert("command".into(), cmd.to_string());
        }
        for (key, value) in self.flag_pairs() {
            if let Some(v) = value {
                if v.trim().is_empty() {
                    return Err(ConfigError::Missing(key.into()));
                }
                map.insert(key.into(), v.clone());
            }
        }
        ExperimentConfig::from_pairs(&map, env_seed)
    }
}

/// Parses `args` (program name first) and reads `FROGSIM_SEED`. Usage errors
/// are returned as clap errors so the caller can print help and exit.
pub fn parse_config<I, T>(args: I) -> Result<std::result::Result<ExperimentConfig, ConfigError>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let env = std::env::var(SEED_ENV).ok();
    Ok(cli.resolve(env.as_deref()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: &[&str]) -> Result<ExperimentConfig, ConfigError> {
        Cli::try_parse_from(args).unwrap().resolve(None)
    }

    #[test]
    fn flags_parse() {
        let c = resolve(&["frogsim", "simulate", "--d", "2", "--a", "0.2", "--lateral", "0.5", "--dist", "exppareto:1.0"])
            .unwrap();
        assert_eq!(c.d, 2);
        assert_eq!(c.dists, vec![frogsim::SiteDistribution::ExpPareto(1.0)]);
    }

    #[test]
    fn range_errors() {
        let e = resolve(&["frogsim", "hit", "--a", "1.5"]).unwrap_err();
        assert!(matches!(e, ConfigError::Range { ref key, .. } if key == "a"));
        let e = resolve(&["frogsim", "hit", "--dist", "exppareto:0"]).unwrap_err();
        assert!(matches!(e, ConfigError::Range { ref key, .. } if key == "dist"));
        assert!(e.to_string().contains("s = 0"));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert!(Cli::try_parse_from(["frogsim", "hit", "--zeta", "1"]).is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "command = certify\nalpha = 4\nc1 = 0.3\n").unwrap();
        let p = path.to_str().unwrap();
        let c = resolve(&["frogsim", "--config", p, "--alpha", "5"]).unwrap();
        assert_eq!(c.command, Command::Certify);
        assert_eq!((c.alpha, c.c1), (5, 0.3));
        let c = resolve(&["frogsim", "hit", "--config", p]).unwrap();
        assert_eq!(c.command, Command::Hit);
        let e = resolve(&["frogsim", "--config", "/nonexistent/x.conf"]).unwrap_err();
        assert!(matches!(e, ConfigError::Io { .. }));
    }
}
