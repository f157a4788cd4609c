//! Resolved run configuration: defaults, overridden by a flat key=value
//! config file, overridden by command-line flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::TrainArgs;

/// Fully resolved settings for one training run; serialized verbatim into
/// the manifest so a run can be reproduced.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub format: String,
    pub model: String,
    pub backend: String,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eta: Option<f64>,
    pub a: Option<f64>,
    pub m: u32,
    pub batches: usize,
    pub batch_mode: String,
    pub moving_average: bool,
    pub split: Option<f64>,
    pub seed: u64,
    pub iters: usize,
    pub tol: f64,
    pub out: PathBuf,
    pub threads: usize,
    pub damping: f64,
    pub same_parallel: bool,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!(
                "config line {} is not `key=value`: `{line}`",
                lineno + 1
            )));
        };
        map.insert(
            key.trim().replace('-', "_").to_string(),
            value.trim().to_string(),
        );
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| ConfigError(format!("config key `{key}`: {e}"))),
    }
}

fn parse_bool(raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(ConfigError(format!("expected a boolean, got `{other}`"))),
    }
}

impl RunConfig {
    /// Precedence: flags > config file > defaults.
    pub fn resolve(args: &TrainArgs) -> Result<RunConfig, ConfigError> {
        let file = match &args.config {
            Some(path) => parse_config_file(path)?,
            None => HashMap::new(),
        };
        let corpus = args
            .corpus
            .clone()
            .or(file.get("corpus").map(PathBuf::from))
            .ok_or_else(|| ConfigError("`--corpus` is required".into()))?;
        let moving_average = match (&args.moving_average, file.get("moving_average")) {
            (Some(flag), _) => parse_bool(flag)?,
            (None, Some(raw)) => parse_bool(raw)?,
            (None, None) => false,
        };
        let same_parallel = match (&args.same_parallel, file.get("same_parallel")) {
            (Some(flag), _) => parse_bool(flag)?,
            (None, Some(raw)) => parse_bool(raw)?,
            (None, None) => false,
        };
        let cfg = RunConfig {
            corpus,
            format: args
                .format
                .clone()
                .or(file.get("format").cloned())
                .unwrap_or_else(|| "tuple-csv".into()),
            model: args
                .model
                .clone()
                .or(file.get("model").cloned())
                .unwrap_or_else(|| "lda".into()),
            backend: args
                .backend
                .clone()
                .or(file.get("backend").cloned())
                .unwrap_or_else(|| "heron".into()),
            k: args
                .k
                .or(get_parsed(&file, "k")?)
                .ok_or_else(|| ConfigError("`--k` is required".into()))?,
            alpha: args.alpha.or(get_parsed(&file, "alpha")?).unwrap_or(0.5),
            beta: args.beta.or(get_parsed(&file, "beta")?).unwrap_or(0.5),
            eta: args.eta.or(get_parsed(&file, "eta")?),
            a: args.a.or(get_parsed(&file, "a")?),
            m: args.m.or(get_parsed(&file, "m")?).unwrap_or(100),
            batches: args.batches.or(get_parsed(&file, "batches")?).unwrap_or(1),
            batch_mode: args
                .batch_mode
                .clone()
                .or(file.get("batch_mode").cloned())
                .unwrap_or_else(|| "jacobi".into()),
            moving_average,
            split: args.split.or(get_parsed(&file, "split")?),
            seed: args.seed.or(get_parsed(&file, "seed")?).unwrap_or(0),
            iters: args.iters.or(get_parsed(&file, "iters")?).unwrap_or(1000),
            tol: args.tol.or(get_parsed(&file, "tol")?).unwrap_or(1e-5),
            out: args
                .out
                .clone()
                .or(file.get("out").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs/latest")),
            threads: args.threads.or(get_parsed(&file, "threads")?).unwrap_or(0),
            damping: args
                .damping
                .or(get_parsed(&file, "damping")?)
                .unwrap_or(0.0),
            same_parallel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError("k must be >= 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(ConfigError(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(ConfigError(format!("beta must be > 0, got {}", self.beta)));
        }
        if let Some(split) = self.split {
            if !(split > 0.0 && split < 1.0) {
                return Err(ConfigError(format!(
                    "split must lie in the open interval (0,1), got {split}"
                )));
            }
        }
        if self.m == 0 {
            return Err(ConfigError("m must be >= 1".into()));
        }
        if self.batches == 0 {
            return Err(ConfigError("batches must be >= 1".into()));
        }
        if self.iters == 0 {
            return Err(ConfigError("iters must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(ConfigError(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(ConfigError(format!(
                "damping must lie in [0,1), got {}",
                self.damping
            )));
        }
        match self.model.as_str() {
            "lda" => {}
            "rtm" => {
                if self.eta.is_none() {
                    return Err(ConfigError("model rtm requires `--eta`".into()));
                }
            }
            "slda" => {
                if self.eta.is_none() || self.a.is_none() {
                    return Err(ConfigError("model slda requires `--eta` and `--a`".into()));
                }
            }
            other => return Err(ConfigError(format!("unknown model `{other}`"))),
        }
        match self.backend.as_str() {
            "cgs" | "same" | "heron" => {}
            other => return Err(ConfigError(format!("unknown backend `{other}`"))),
        }
        match self.format.as_str() {
            "bow-text" | "tuple-csv" => {}
            other => return Err(ConfigError(format!("unknown corpus format `{other}`"))),
        }
        match self.batch_mode.as_str() {
            "jacobi" | "minibatch" => {}
            other => return Err(ConfigError(format!("unknown batch mode `{other}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> TrainArgs {
        TrainArgs {
            corpus: Some(PathBuf::from("x.tuples")),
            format: None,
            model: None,
            backend: None,
            k: Some(5),
            alpha: None,
            beta: None,
            eta: None,
            a: None,
            m: None,
            batches: None,
            batch_mode: None,
            moving_average: None,
            split: None,
            seed: None,
            iters: None,
            tol: None,
            out: None,
            threads: None,
            damping: None,
            same_parallel: None,
            config: None,
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::resolve(&base_args()).unwrap();
        assert_eq!(cfg.backend, "heron");
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.iters, 1000);
        assert_eq!(cfg.m, 100);
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "alpha = 0.7\nbackend=cgs\n# comment\nk=3\n").unwrap();
        let mut args = base_args();
        args.config = Some(path);
        args.k = None;
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.alpha, 0.7);
        assert_eq!(cfg.backend, "cgs");
        assert_eq!(cfg.k, 3);

        let mut args2 = base_args();
        args2.config = Some(dir.path().join("run.conf"));
        args2.alpha = Some(0.9);
        let cfg2 = RunConfig::resolve(&args2).unwrap();
        assert_eq!(cfg2.alpha, 0.9);
        assert_eq!(cfg2.k, 5); // flag beats file
    }

    #[test]
    fn zero_k_rejected() {
        let mut args = base_args();
        args.k = Some(0);
        assert!(RunConfig::resolve(&args).is_err());
    }

    #[test]
    fn slda_requires_eta_and_a() {
        let mut args = base_args();
        args.model = Some("slda".into());
        assert!(RunConfig::resolve(&args).is_err());
        args.eta = Some(0.5);
        args.a = Some(0.25);
        assert!(RunConfig::resolve(&args).is_ok());
    }
}
