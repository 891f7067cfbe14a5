//! Run configuration files.

use std::path::{Path, PathBuf};

use ctxnet::data::{CountingSynth, SegmentationSynth, Task};
use ctxnet::hourglass::{Head, ModelKind};
use ctxnet::training::{OptimizerConfig, TrainSpec};
use ctxnet::HourglassConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Dataset directory with a manifest; relative paths are resolved
    /// against the config file's directory.
    Dir(PathBuf),
    /// Generated in memory and split by the task's protocol.
    Synthetic(SyntheticData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub n: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub counting: CountingSynth,
    #[serde(default)]
    pub segmentation: SegmentationSynth,
}

fn default_sigma() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    pub network: HourglassConfig,
    pub train: TrainSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub data: DataSource,
    /// Gaussian width of density targets, in pixels.
    #[serde(default = "default_sigma")]
    pub density_sigma: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// A configuration problem: the offending field and what is wrong with it.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_owned(), message: message.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError { field: if path == "." { "<root>".into() } else { path }, message: format!("{inner}") }
        })
    }

    /// Reads, parses, resolves relative paths against the file's directory
    /// and validates.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Dir(d) = &mut config.data {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.network.validate().map_err(|e| field_err("network", e.to_string()))?;
        self.train.validate().map_err(|e| field_err("train", e.to_string()))?;
        self.optimizer.validate().map_err(|e| field_err("optimizer", e.to_string()))?;
        let expected = match self.task {
            Task::Segment => Head::SoftmaxSegmentation,
            Task::Count => Head::LinearDensity,
        };
        if self.network.head != expected {
            return Err(field_err("network.head", format!("task {:?} needs head {expected:?}", self.task)));
        }
        if self.task == Task::Count && self.network.out_channels != 1 {
            return Err(field_err("network.out_channels", "a density head has one output channel"));
        }
        if self.network.in_channels != 1 {
            return Err(field_err("network.in_channels", "datasets are single-channel"));
        }
        if self.model == ModelKind::Unet && self.network.contextual_links.as_ref().is_some_and(|l| !l.is_empty()) {
            return Err(field_err("network.contextual_links", "a plain unet has no contextual links"));
        }
        if !(self.density_sigma > 0.0) {
            return Err(field_err("density_sigma", "must be positive"));
        }
        if let DataSource::Dir(d) = &self.data {
            if !d.join("manifest.json").is_file() {
                return Err(field_err(
                    "data.dir",
                    format!("{} is not a dataset directory (no manifest.json)", d.display()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": "segment",
        "model": "contextual-unet",
        "network": {"depth": 2, "base_filters": 4, "in_channels": 1, "out_channels": 2, "head": "softmax-segmentation"},
        "train": {"phase1": {"max_epochs": 2}, "phase2": {"max_epochs": 1}},
        "data": {"synthetic": {"n": 6}},
        "seed": 3,
        "output_dir": "out"
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.train.batch_size, 1);
        assert_eq!(c.train.phase1.patience, 10);
        assert_eq!(c.optimizer.learning_rate, 1e-3);
        assert_eq!(c.density_sigma, 3.0);
        let again = RunConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace(r#""max_epochs": 2"#, r#""max_epochs": "two""#);
        let e = RunConfig::parse(&bad).unwrap_err();
        assert_eq!(e.field, "train.phase1.max_epochs");
        assert!(e.message.contains("line"), "{e}");
        let e = RunConfig::parse(&MINIMAL.replace(r#""seed": 3,"#, "")).unwrap_err();
        assert!(e.message.contains("seed"), "{e}");
        let e = RunConfig::parse(&MINIMAL.replace(r#""head": "softmax-segmentation""#, r#""head": "linear-density""#))
            .unwrap()
            .validate()
            .unwrap_err();
        assert_eq!(e.field, "network.head");
        let missing = MINIMAL.replace(r#"{"synthetic": {"n": 6}}"#, r#"{"dir": "/nonexistent/data"}"#);
        let e = RunConfig::parse(&missing).unwrap().validate().unwrap_err();
        assert_eq!(e.field, "data.dir");
    }
}
