//! `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored; unknown keys are
//! errors. Every key is optional and falls back to the defaults shown by
//! [`Config::to_text`]. Vector-valued keys are comma-separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::AlgorithmSpec;
use crate::features::{FeatureConfig, FeatureMode, DEFAULT_TAU_OCCUPIED};
use crate::session::SessionConfig;
use crate::synth::PopulationParams;
use crate::SENSOR_COUNT;

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "POPA_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub algorithm: AlgorithmSpec,
    pub population: PopulationParams,
    pub features: FeatureConfig,
    pub tau_occupied: u32,
    pub enroll_frames: usize,
    pub theta_accept: f64,
    pub vacancy_grace_windows: usize,
    pub retrain_interval_windows: usize,
    pub repeats: usize,
    pub folds: usize,
}

impl Default for Config {
    fn default() -> Self {
        let session = SessionConfig::default();
        Config {
            seed: 1,
            algorithm: AlgorithmSpec::default(),
            population: PopulationParams::default(),
            features: FeatureConfig::default(),
            tau_occupied: DEFAULT_TAU_OCCUPIED,
            enroll_frames: session.enroll_frames,
            theta_accept: session.theta_accept,
            vacancy_grace_windows: session.vacancy_grace_windows,
            retrain_interval_windows: session.retrain_interval_windows,
            repeats: 10,
            folds: 10,
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Session settings derived from this config.
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            enroll_frames: self.enroll_frames,
            window_len: self.features.window_len,
            theta_accept: self.theta_accept,
            vacancy_grace_windows: self.vacancy_grace_windows,
            retrain_interval_windows: self.retrain_interval_windows,
            tau_occupied: self.tau_occupied,
            algorithm: self.algorithm,
            seed: self.seed,
        }
    }

    /// Population parameters seeded from `seed`.
    pub fn population(&self) -> PopulationParams {
        PopulationParams { seed: self.seed, ..self.population.clone() }
    }

    /// Every key with its current value; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let p = &self.population;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("algorithm", self.algorithm.name());
        for (k, v) in self.algorithm.hyperparams() {
            kv(k, v);
        }
        kv("subjects", p.n_subjects.to_string());
        kv("baseline_mean", p.baseline_mean.to_string());
        kv("baseline_spread", join(&p.baseline_spread));
        kv("posture_spread", p.posture_spread.to_string());
        kv("postures_min", p.postures_min.to_string());
        kv("postures_max", p.postures_max.to_string());
        kv("dwell_s", join(&[p.dwell_s.0, p.dwell_s.1]));
        kv("shift_s", join(&[p.shift_s.0, p.shift_s.1]));
        kv("noise_sigma", join(&[p.noise_sigma.0, p.noise_sigma.1]));
        kv("weight_scale", join(&[p.weight_scale.0, p.weight_scale.1]));
        kv("feature_mode", self.features.mode.name().into());
        kv("window_len", self.features.window_len.to_string());
        kv("stride", self.features.stride.to_string());
        kv("tau_occupied", self.tau_occupied.to_string());
        kv("enroll_frames", self.enroll_frames.to_string());
        kv("theta_accept", self.theta_accept.to_string());
        kv("vacancy_grace_windows", self.vacancy_grace_windows.to_string());
        kv("retrain_interval_windows", self.retrain_interval_windows.to_string());
        kv("repeats", self.repeats.to_string());
        kv("folds", self.folds.to_string());
        out
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        // Hyperparameters are applied once the algorithm is known, whatever
        // the key order.
        let mut hyper: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Parse { line: line_no, reason };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.parse::<usize>().map_err(|_| err(format!("{key}: expected a non-negative integer")));
            let real = || value.parse::<f64>().map_err(|_| err(format!("{key}: expected a number")));
            let reals = |n: usize| -> Result<Vec<f64>, ConfigError> {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(format!("{key}: expected {n} comma-separated numbers")))?;
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(err(format!("{key}: expected {n} comma-separated numbers, got {}", v.len())))
                }
            };
            let pair = || reals(2).map(|v| (v[0], v[1]));
            let p = &mut cfg.population;
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| err("seed: expected an integer".into()))?,
                "algorithm" => {
                    cfg.algorithm =
                        AlgorithmSpec::from_name(value).ok_or_else(|| err(format!("unknown algorithm {value:?}")))?
                }
                "n_trees" | "mtry" | "max_depth" | "min_leaf" | "k" | "lambda" | "epochs" => {
                    hyper.push((line_no, key.to_string(), value.to_string()))
                }
                "subjects" => p.n_subjects = int()?,
                "baseline_mean" => p.baseline_mean = real()?,
                "baseline_spread" => {
                    let v = reals(SENSOR_COUNT)?;
                    p.baseline_spread.copy_from_slice(&v);
                }
                "posture_spread" => p.posture_spread = real()?,
                "postures_min" => p.postures_min = int()?,
                "postures_max" => p.postures_max = int()?,
                "dwell_s" => p.dwell_s = pair()?,
                "shift_s" => p.shift_s = pair()?,
                "noise_sigma" => p.noise_sigma = pair()?,
                "weight_scale" => p.weight_scale = pair()?,
                "feature_mode" => {
                    cfg.features.mode =
                        FeatureMode::parse(value).ok_or_else(|| err(format!("unknown feature mode {value:?}")))?
                }
                "window_len" => cfg.features.window_len = int()?,
                "stride" => cfg.features.stride = int()?,
                "tau_occupied" => {
                    cfg.tau_occupied = value.parse().map_err(|_| err("tau_occupied: expected an integer".into()))?
                }
                "enroll_frames" => cfg.enroll_frames = int()?,
                "theta_accept" => cfg.theta_accept = real()?,
                "vacancy_grace_windows" => cfg.vacancy_grace_windows = int()?,
                "retrain_interval_windows" => cfg.retrain_interval_windows = int()?,
                "repeats" => cfg.repeats = int()?,
                "folds" => cfg.folds = int()?,
                _ => return Err(ConfigError::UnknownKey { line: line_no, key: key.to_string() }),
            }
        }
        for (line, key, value) in hyper {
            let err = |reason: String| ConfigError::Parse { line, reason };
            match cfg.algorithm.set_hyperparam(&key, &value) {
                Ok(true) => {}
                Ok(false) => return Err(err(format!("{key} does not apply to algorithm {}", cfg.algorithm.name()))),
                Err(e) => return Err(err(e.to_string())),
            }
        }
        if cfg.features.window_len == 0 || cfg.features.stride == 0 {
            return Err(ConfigError::Parse { line: 0, reason: "window_len and stride must be positive".into() });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Config::parse(&text)
    }

    /// Loads `explicit`, else the file named by `POPA_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config, ConfigError> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(path) => Config::load(&path),
            None => Ok(Config::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::ForestParams;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert_eq!(Config::parse("").unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# experiment\n\nmtry=3\nalgorithm=rf\nn_trees=25\nseed=7\nnoise_sigma=5,6\nfeature_mode=window\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.algorithm, AlgorithmSpec::Forest(ForestParams { n_trees: 25, mtry: Some(3), ..Default::default() }));
        assert_eq!(c.population.noise_sigma, (5.0, 6.0));
        assert_eq!(c.features.mode, FeatureMode::Window);
        assert_eq!(c.population().seed, 7);
        assert_eq!(c.session().seed, 7);
        let custom = Config::parse(&c.to_text()).unwrap();
        assert_eq!(custom, c);
    }

    #[test]
    fn unknown_key_is_an_error() {
        match Config::parse("seed=1\nbogus=2\n") {
            Err(ConfigError::UnknownKey { line: 2, key }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn misapplied_hyperparameter() {
        assert!(matches!(Config::parse("algorithm=svm\nk=3\n"), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("baseline_spread=1,2\n"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("just words\n"), Err(ConfigError::Parse { line: 1, .. })));
    }
}
