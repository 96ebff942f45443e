//! Run configuration files and their resolution from presets and flags.
//!
//! A run file is TOML:
//!
//! ```toml
//! out = "runs/toy"        # optional, overridden by --out
//! plots = true            # also write info-plane SVGs
//!
//! [training]              # every ImbConfig field; unknown keys are errors
//! hidden_widths = [10, 8, 6, 4]
//! epochs = 5000
//! betas = [1e-4]
//! optimizer = { kind = "sgd", learning_rate = 2.0 }
//!
//! [dataset]
//! kind = "synthetic"      # or "mnist" (dir = ...) or "csv" (train = ...)
//! n_bits = 12
//! labels = "ranked"
//!
//! [attack]                # optional, used by `imb-lab attack`
//! mode = "untargeted"
//! steps = 100
//! step_size = 0.1
//! max_l2_radius = 3.0
//! samples = 8
//! ```
//!
//! Relative dataset paths resolve against the working directory.

use std::path::{Path, PathBuf};

use imb_core::experiment::preset;
use imb_core::{AttackConfig, DatasetSpec, ImbConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
    /// Preset the file was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub training: ImbConfig,
    pub dataset: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
}

impl RunConfigFile {
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        let run: RunConfigFile =
            toml::from_str(text).map_err(|e| CliError::config(format!("{}: {e}", origin.display())))?;
        run.validate()?;
        Ok(run)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn from_preset(name: &str) -> CliResult<Self> {
        let p = preset(name).ok_or_else(|| {
            CliError::config(format!(
                "unknown preset `{name}` (known: {})",
                imb_core::experiment::PRESET_NAMES.join(", ")
            ))
        })?;
        Ok(RunConfigFile {
            out: None,
            plots: false,
            preset: Some(name.to_string()),
            training: p.config,
            dataset: p.dataset,
            attack: None,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        self.training.validate().map_err(CliError::config)?;
        if let Some(a) = &self.attack {
            a.validate().map_err(CliError::config)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::runtime(format!("cannot serialize run config: {e}")))
    }

    /// Fails before any work if a dataset path is missing.
    pub fn check_dataset_paths(&self) -> CliResult<()> {
        for p in self.dataset.paths() {
            if !p.exists() {
                return Err(CliError::config(format!("dataset path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Points the dataset at `path`: the IDX directory for MNIST, the training file for CSV.
    pub fn override_data(&mut self, path: PathBuf) -> CliResult<()> {
        match &mut self.dataset {
            DatasetSpec::Mnist { dir, .. } => *dir = path,
            DatasetSpec::Csv { train, .. } => *train = path,
            DatasetSpec::Synthetic { .. } => {
                return Err(CliError::config("--data does not apply to a synthetic dataset"));
            }
        }
        Ok(())
    }

    pub fn default_out(&self) -> PathBuf {
        let stem = self.preset.clone().unwrap_or_else(|| "run".to_string());
        PathBuf::from("runs").join(format!("{stem}-{}-seed{}", self.training.algorithm, self.training.seed))
    }
}

pub fn parse_list(flag: &str, text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("{flag}: `{s}` is not a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        let run = RunConfigFile::from_preset("toy-12bit").unwrap();
        let text = run.to_toml().unwrap();
        assert_eq!(RunConfigFile::from_toml(&text, Path::new("x.toml")).unwrap(), run);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = "plots = true\n[training]\nhidden_widths = [3]\nepochs = 1\nlearning_rate = 0.1\n[dataset]\nkind = \"synthetic\"\n";
        let err = RunConfigFile::from_toml(text, Path::new("bad.toml")).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("line 5"), "{}", err.message);
        assert!(err.message.contains("learning_rate"), "{}", err.message);
    }

    #[test]
    fn list_flags_parse() {
        assert_eq!(parse_list("--gamma", "1,0, 0.5").unwrap(), vec![1.0, 0.0, 0.5]);
        assert!(parse_list("--gamma", "1,x").is_err());
    }
}
