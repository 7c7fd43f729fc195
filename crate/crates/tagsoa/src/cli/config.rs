//! Experiment configuration: defaults, then a key=value file, then flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tagsoa_core::pipeline::StageDeadlines;
use tagsoa_core::Duration;

use crate::apps::Mode;
use crate::middleware::LatencyDistribution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Demo {
    Counter,
    #[default]
    Brake,
}

impl FromStr for Demo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "counter" => Ok(Demo::Counter),
            "brake" => Ok(Demo::Brake),
            other => Err(format!(
                "unknown demo `{other}` (expected counter or brake)"
            )),
        }
    }
}

impl fmt::Display for Demo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Demo::Counter => "counter",
            Demo::Brake => "brake",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClockChoice {
    #[default]
    Simulated,
    /// Paces simulated time against the wall clock.
    Real,
}

impl FromStr for ClockChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulated" | "sim" => Ok(ClockChoice::Simulated),
            "real" => Ok(ClockChoice::Real),
            other => Err(format!(
                "unknown clock `{other}` (expected simulated or real)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub demo: Demo,
    pub mode: Mode,
    pub frames: u64,
    pub trials: u32,
    pub seed: u64,
    pub period: Duration,
    pub deadlines: StageDeadlines,
    pub max_latency: Duration,
    pub max_skew: Duration,
    /// Actual link latency; uniform up to `max_latency` when absent.
    pub latency_model: Option<LatencyDistribution>,
    pub clock: ClockChoice,
    pub out: Option<PathBuf>,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            demo: Demo::Brake,
            mode: Mode::Reactor,
            frames: 1000,
            trials: 1,
            seed: 0,
            period: Duration::from_millis(50),
            deadlines: StageDeadlines::default(),
            max_latency: Duration::from_millis(5),
            max_skew: Duration::ZERO,
            latency_model: None,
            clock: ClockChoice::Simulated,
            out: None,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown setting `{0}`")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("line {line} of the config file is not key=value: `{text}`")]
    Syntax { line: usize, text: String },
    #[error("cannot read config file: {0}")]
    Io(String),
}

fn invalid(key: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| invalid(key, e))
}

fn positive<T: FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    let v: T = parse(key, value)?;
    if v <= T::default() {
        return Err(invalid(key, "must be at least 1"));
    }
    Ok(v)
}

/// Setting names, in the spelling used by config files. Flags use dashes.
pub const KEYS: [&str; 13] = [
    "demo",
    "mode",
    "frames",
    "trials",
    "seed",
    "period",
    "deadlines",
    "max_latency",
    "max_skew",
    "latency_model",
    "clock",
    "out",
    "workers",
];

impl ExperimentConfig {
    /// Applies one setting. Dashes and underscores in `key` are equivalent.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "demo" => self.demo = parse(k, value)?,
            "mode" => self.mode = parse(k, value)?,
            "frames" => self.frames = positive(k, value)?,
            "trials" => self.trials = positive(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "period" => {
                let period: Duration = parse(k, value)?;
                if period.is_zero() {
                    return Err(invalid(k, "must be positive"));
                }
                self.period = period;
            }
            "deadlines" => {
                let parts = value
                    .split(',')
                    .map(|d| parse::<Duration>(k, d))
                    .collect::<Result<Vec<_>, _>>()?;
                let array: [Duration; 4] = parts
                    .try_into()
                    .map_err(|_| invalid(k, "expected four comma-separated durations"))?;
                if array.iter().any(|d| d.is_zero()) {
                    return Err(invalid(k, "deadlines must be positive"));
                }
                self.deadlines = StageDeadlines::from_array(array);
            }
            "max_latency" => self.max_latency = parse(k, value)?,
            "max_skew" => self.max_skew = parse(k, value)?,
            "latency_model" => self.latency_model = Some(parse(k, value)?),
            "clock" => self.clock = parse(k, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "workers" => self.workers = positive(k, value)?,
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies a flat key=value file. Blank lines and lines starting with
    /// `#` are ignored.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, overridden by `file`, overridden by `flags`.
    pub fn resolve<'a>(
        file: Option<&str>,
        flags: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(text) = file {
            cfg.apply_file(text)?;
        }
        for (key, value) in flags {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// The actual link latency used by the run.
    pub fn latency(&self) -> LatencyDistribution {
        self.latency_model.unwrap_or(LatencyDistribution::Uniform {
            min: Duration::ZERO,
            max: self.max_latency,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_deterministic_setup() {
        let cfg = ExperimentConfig::resolve(None, []).unwrap();
        assert_eq!(cfg.demo, Demo::Brake);
        assert_eq!(cfg.period, Duration::from_millis(50));
        assert_eq!(
            cfg.deadlines.as_array(),
            [5, 25, 25, 5].map(Duration::from_millis)
        );
        assert_eq!(cfg.max_latency, Duration::from_millis(5));
        assert_eq!(cfg.max_skew, Duration::ZERO);
    }

    #[test]
    fn zero_frames_is_rejected() {
        let err = ExperimentConfig::resolve(None, [("frames", "0")]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "frames"));
        assert!(ExperimentConfig::resolve(None, [("trials", "0")]).is_err());
        assert!(ExperimentConfig::resolve(None, [("frames", "-3")]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = "# experiment\nmax_latency = 10ms\nframes=200\n\n";
        let cfg = ExperimentConfig::resolve(Some(file), [("max-latency", "5ms")]).unwrap();
        assert_eq!(cfg.max_latency, Duration::from_millis(5));
        assert_eq!(cfg.frames, 200);
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(ExperimentConfig::resolve(None, [("deadlines", "5ms,25ms")]).is_err());
        assert!(ExperimentConfig::resolve(None, [("deadlines", "0ms,1ms,1ms,1ms")]).is_err());
        assert!(ExperimentConfig::resolve(None, [("period", "50")]).is_err());
        assert!(ExperimentConfig::resolve(None, [("latency_model", "gauss")]).is_err());
        assert!(ExperimentConfig::resolve(None, [("colour", "red")]).is_err());
        assert!(ExperimentConfig::resolve(Some("frames"), []).is_err());
        let cfg = ExperimentConfig::resolve(
            None,
            [
                ("deadlines", "1ms,2ms,3ms,4ms"),
                ("latency-model", "fixed:2ms"),
            ],
        )
        .unwrap();
        assert_eq!(
            cfg.deadlines.as_array(),
            [1, 2, 3, 4].map(Duration::from_millis)
        );
        assert_eq!(
            cfg.latency(),
            LatencyDistribution::Fixed(Duration::from_millis(2))
        );
    }
}
