//! Run configuration in the manifest's line format: one `key<TAB>value`
//! pair per line, `#` comments.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lstm::TrainConfig;
use crate::pipeline::{Scheme, WindowingConfig};
use crate::spectral::{DEFAULT_BAND_LIMIT, DEFAULT_SEGMENT_LENGTH};

/// Channel wiring preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Drive signals to all displacements and forces.
    Fp,
    /// Displacements to forces.
    Vs,
}

fn numbered(prefix: &str) -> Vec<String> {
    (1..=3).map(|i| format!("{prefix}_{i}")).collect()
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Fp => "fp",
            Task::Vs => "vs",
        }
    }

    pub fn inputs(self) -> Vec<String> {
        match self {
            Task::Fp => numbered("drive"),
            Task::Vs => numbered("disp"),
        }
    }

    pub fn outputs(self) -> Vec<String> {
        match self {
            Task::Fp => {
                let mut v = numbered("disp");
                v.extend(numbered("force"));
                v
            }
            Task::Vs => numbered("force"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp" => Ok(Task::Fp),
            "vs" => Ok(Task::Vs),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}` (expected fp or vs)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub scheme: Scheme,
    pub windowing: WindowingConfig,
    pub train: TrainConfig,
    pub architecture: Vec<usize>,
    pub segment_length: usize,
    pub band_limit: f64,
    /// Explicit wiring; overrides the task preset when set.
    pub inputs: Option<Vec<String>>,
    pub outputs: Option<Vec<String>>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Fp,
            scheme: Scheme::Hybrid2,
            windowing: WindowingConfig::default(),
            train: TrainConfig::default(),
            architecture: vec![39],
            segment_length: DEFAULT_SEGMENT_LENGTH,
            band_limit: DEFAULT_BAND_LIMIT,
            inputs: None,
            outputs: None,
            manifest: None,
            out: None,
        }
    }
}

/// Parses a comma list of cells per block, e.g. `23,23`.
pub fn parse_architecture(s: &str) -> Result<Vec<usize>> {
    let arch = s
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("invalid architecture `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(arch)
}

fn names(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).collect()
}

impl RunConfig {
    pub fn input_names(&self) -> Vec<String> {
        self.inputs.clone().unwrap_or_else(|| self.task.inputs())
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs.clone().unwrap_or_else(|| self.task.outputs())
    }

    pub fn validate(&self) -> Result<()> {
        self.windowing.validate()?;
        self.train.validate()?;
        if self.architecture.is_empty() || self.architecture.contains(&0) {
            return Err(Error::InvalidArgument("architecture needs non-empty blocks".into()));
        }
        if !self.segment_length.is_power_of_two() || self.segment_length < 2 {
            return Err(Error::InvalidArgument(format!(
                "segment length {} must be a power of two",
                self.segment_length
            )));
        }
        if !(self.band_limit > 0.0) {
            return Err(Error::InvalidArgument("band limit must be positive".into()));
        }
        for list in [self.input_names(), self.output_names()] {
            if list.is_empty() || list.iter().any(String::is_empty) {
                return Err(Error::InvalidArgument("empty channel name in wiring".into()));
            }
        }
        Ok(())
    }

    /// Applies one `key`/`value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "length" => self.windowing.length = num(key, value)?,
            "overlap" => self.windowing.overlap = num(key, value)?,
            "window_power" => self.windowing.window_power = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "rmsprop_decay" => self.train.rmsprop_decay = num(key, value)?,
            "rmsprop_epsilon" => self.train.rmsprop_epsilon = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "clip_norm" => {
                self.train.clip_norm = match value {
                    "none" | "-" => None,
                    v => Some(num(key, v)?),
                }
            }
            "arch" => self.architecture = parse_architecture(value)?,
            "segment_length" => self.segment_length = num(key, value)?,
            "band_limit" => self.band_limit = num(key, value)?,
            "inputs" => self.inputs = Some(names(value)),
            "outputs" => self.outputs = Some(names(value)),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# hybrid-sysid run config v1\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("task", self.task.to_string());
        kv("scheme", self.scheme.to_string());
        kv("length", self.windowing.length.to_string());
        kv("overlap", format!("{:?}", self.windowing.overlap));
        kv("window_power", self.windowing.window_power.to_string());
        kv("learning_rate", format!("{:?}", self.train.learning_rate));
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("rmsprop_decay", format!("{:?}", self.train.rmsprop_decay));
        kv("rmsprop_epsilon", format!("{:?}", self.train.rmsprop_epsilon));
        kv("seed", self.train.seed.to_string());
        kv(
            "clip_norm",
            self.train.clip_norm.map_or_else(|| "none".into(), |c| format!("{c:?}")),
        );
        kv(
            "arch",
            self.architecture.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv("segment_length", self.segment_length.to_string());
        kv("band_limit", format!("{:?}", self.band_limit));
        if let Some(v) = &self.inputs {
            kv("inputs", v.join(","));
        }
        if let Some(v) = &self.outputs {
            kv("outputs", v.join(","));
        }
        if let Some(p) = &self.manifest {
            kv("manifest", p.display().to_string());
        }
        if let Some(p) = &self.out {
            kv("out", p.display().to_string());
        }
        out
    }
}

/// Parses config text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected `key<TAB>value`"))?;
        cfg.set(key.trim(), value.trim()).map_err(|e| Error::parse(i + 1, e.to_string()))?;
    }
    cfg.validate().map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_config(&text).map_err(|e| e.in_file(path))
}
