use std::collections::HashSet;
use std::path::{Path, PathBuf};

use fedbs::data::SyntheticSpec;
use fedbs::federated::{FederatedConfig, Strategy};
use fedbs::nn::{BackboneKind, BackboneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Floating-point type used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Where trials come from. When `path` is set it wins over `synthetic`: a
/// `.csv` file in long format, or a directory of `.eegt` files (one per
/// subject, read in file-name order).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Class count for CSV input; the largest label by default.
    pub classes: Option<usize>,
    pub synthetic: SyntheticSpec,
}

/// Network settings; input geometry comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub f1: usize,
    pub depth: usize,
    pub f2: usize,
    pub dropout: f64,
    /// `min(T, 64)` when absent.
    pub temporal_kernel: Option<usize>,
    pub hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let base = BackboneSpec::eegnet(1, 1, 2);
        BackboneConfig {
            kind: base.kind,
            f1: base.f1,
            depth: base.depth,
            f2: base.f2,
            dropout: base.dropout,
            temporal_kernel: None,
            hidden: base.hidden,
        }
    }
}

impl BackboneConfig {
    pub fn spec(&self, channels: usize, samples: usize, classes: usize) -> BackboneSpec {
        let base = BackboneSpec::eegnet(channels, samples, classes);
        BackboneSpec {
            kind: self.kind,
            f1: self.f1,
            depth: self.depth,
            f2: self.f2,
            dropout: self.dropout,
            temporal_kernel: self.temporal_kernel.unwrap_or(base.temporal_kernel),
            hidden: self.hidden,
            ..base
        }
    }
}

/// A full experiment: data, network, protocol and the seed × strategy grid.
/// Each grid cell trains with its own seed; `federated.seed` is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub apply_ea: bool,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub federated: FederatedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..6).collect(),
            strategies: vec![Strategy::Centralized, Strategy::FedAvg, Strategy::FedProx, Strategy::FedBs],
            apply_ea: true,
            output_dir: PathBuf::from("results"),
            precision: Precision::F64,
            data: DataConfig::default(),
            backbone: BackboneConfig::default(),
            federated: FederatedConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(CliError::Config("strategies must not be empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(CliError::Config(format!("strategy `{s}` listed twice")));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(CliError::Config(format!("seed {s} listed twice")));
        }
        self.federated.validate()?;
        if self.data.path.is_none() {
            self.data.synthetic.validate()?;
            let s = &self.data.synthetic;
            self.backbone.spec(s.channels, s.samples, s.classes).validate()?;
            if s.subjects < 2 {
                return Err(CliError::Config("leave-one-subject-out needs at least 2 subjects".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Line of the first `key = …` assignment in `text`, 1-based.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))).map(|i| i + 1)
}

/// Reads and validates a TOML experiment file. An empty file gives the
/// defaults. Errors name the file and, where possible, the line.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file_err = |message: String| CliError::ConfigFile { path: path.to_path_buf(), message };
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| file_err(e.to_string().trim_end().to_string()))?;
    cfg.validate().map_err(|e| {
        let message = match &e {
            CliError::Config(m) | CliError::Core(fedbs::Error::Config(m)) => m.clone(),
            other => return file_err(other.to_string()),
        };
        // point at the offending key when the message starts with its name
        let key = message.split_whitespace().next().unwrap_or("").trim_matches('`');
        match line_of(&text, key) {
            Some(line) => file_err(format!("line {line}: {message}")),
            None => file_err(message),
        }
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = parse_config(file("").path()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let f = &cfg.federated;
        assert_eq!(f.participation, 0.5);
        assert_eq!(f.local_epochs, 2);
        assert_eq!(f.rounds, 200);
        assert_eq!(f.batch_size, 32);
        assert_eq!(f.lr, 0.005);
        assert_eq!(f.rho, 0.1);
        assert_eq!(f.weight_decay, 1e-4);
        assert_eq!(f.momentum, 0.9);
        assert_eq!(f.mu_prox, 1.0);
        assert_eq!(f.test_batch_size, 8);
        assert_eq!(cfg.seeds.len(), 6);
    }

    #[test]
    fn participation_out_of_range_names_the_line() {
        let err = parse_config(file("seeds = [1]\n\n[federated]\nparticipation = 1.5\n").path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("participation 1.5"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse_config(file("[federated]\nrounds = 3\nlearning_rate = 0.1\n").path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate") && msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn type_errors_are_config_errors() {
        let err = parse_config(file("apply_ea = \"yes\"\n").path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config(file("strategies = [\"fedfoo\"]\n").path()).is_err());
    }

    #[test]
    fn empty_grids_are_rejected() {
        assert!(parse_config(file("seeds = []\n").path()).is_err());
        assert!(parse_config(file("strategies = []\n").path()).is_err());
        assert!(parse_config(file("strategies = [\"fedbs\", \"fedbs\"]\n").path()).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![3, 1, 4];
        cfg.strategies = Strategy::ABLATION.to_vec();
        cfg.apply_ea = false;
        cfg.precision = Precision::F32;
        cfg.data.synthetic.snr = 0.25;
        cfg.data.synthetic.shift_strength = 0.123456789;
        cfg.backbone.temporal_kernel = Some(17);
        cfg.federated.lr = 0.1 + 0.2;
        cfg.federated.rounds = 7;
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
        let parsed = parse_config(file(&text).path()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn data_path_form() {
        let cfg = parse_config(file("[data]\npath = \"trials.csv\"\nclasses = 4\n").path()).unwrap();
        assert_eq!(cfg.data.path.as_deref(), Some(Path::new("trials.csv")));
        assert_eq!(cfg.data.classes, Some(4));
    }

    #[test]
    fn backbone_defaults_follow_the_data() {
        let spec = BackboneConfig::default().spec(22, 256, 4);
        assert_eq!((spec.f1, spec.depth, spec.f2), (8, 2, 16));
        assert_eq!(spec.temporal_kernel, 64);
        assert_eq!((spec.channels, spec.samples, spec.classes), (22, 256, 4));
    }
}
