//! End-to-end pipeline configuration: one TOML file describing the axis,
//! simulator, model, training recipe, metric windows, and file locations.
//!
//! Every section has a default, so a config file only needs the keys it
//! changes; the corruption bounds are the one exception and must be given
//! in full when their table appears. The full resolved configuration is
//! echoed into every output header for provenance.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::MetricWindows;
use crate::model::{ModelConfig, TrainConfig};
use crate::signal::PpmAxis;
use crate::simulator::{CorruptionParams, MetaboliteBasis, SimulatorConfig};

/// Environment variable consulted for the config path when none is given.
pub const CONFIG_ENV_VAR: &str = "EDMRS_CONFIG";

fn default_split() -> (f64, f64, f64) {
    (7.0 / 12.0, 1.0 / 6.0, 0.25)
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_params() -> PathBuf {
    PathBuf::from("model.vitp1")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// File locations; relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    /// Directory holding the dataset split files.
    pub data_dir: PathBuf,
    /// Model parameter file written by training, read by reconstruction.
    pub params: PathBuf,
    /// Directory for evaluation outputs.
    pub out_dir: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        PipelinePaths {
            data_dir: default_data_dir(),
            params: default_params(),
            out_dir: default_out_dir(),
        }
    }
}

/// Complete pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed for dataset generation; training has its own seed field.
    pub seed: u64,
    /// Train/validation/test fractions, largest-remainder rounded.
    pub split: (f64, f64, f64),
    pub axis: PpmAxis,
    pub basis: MetaboliteBasis,
    pub simulator: SimulatorConfig,
    /// Per-scan corruption levels of the generated dataset (upper bounds
    /// of the uniform level draw; `rng_seed` is ignored here).
    pub corruption: CorruptionParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricWindows,
    pub paths: PipelinePaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            split: default_split(),
            axis: PpmAxis::default_synthetic(),
            basis: MetaboliteBasis::default_synthetic(),
            simulator: SimulatorConfig::default(),
            corruption: CorruptionParams {
                amp_base: 3.0,
                amp_scan_var: 1.5,
                freq_base_hz: 2.0,
                freq_scan_var_hz: 1.0,
                phase_base_deg: 2.0,
                phase_scan_var_deg: 1.0,
                rng_seed: 0,
            },
            model: ModelConfig::base(),
            train: TrainConfig::default(),
            metrics: MetricWindows::default(),
            paths: PipelinePaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Internal consistency: valid parts, matching axis/model lengths,
    /// and every metric window present on the axis.
    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.corruption.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.metrics.validate()?;
        self.basis.validate(&self.axis)?;
        if self.axis.n_points != self.model.output_points {
            return Err(Error::LengthMismatch {
                context: "axis points vs model output points",
                left: self.axis.n_points,
                right: self.model.output_points,
            });
        }
        let w = &self.metrics;
        for (lo, hi) in [
            (w.mse_lo_ppm, w.mse_hi_ppm),
            (w.gaba_lo_ppm, w.gaba_hi_ppm),
            (w.glx_shape_lo_ppm, w.glx_shape_hi_ppm),
            (w.glx_loss_lo_ppm, w.glx_loss_hi_ppm),
            (w.noise_lo_ppm, w.noise_hi_ppm),
        ] {
            self.axis.index_range(lo, hi)?;
        }
        if self.train.window > self.simulator.n_transients {
            return Err(Error::InvalidArg(format!(
                "training window of {} exceeds the {} transient pairs per scan",
                self.train.window, self.simulator.n_transients
            )));
        }
        Ok(())
    }

    /// Canonical TOML rendering of the resolved configuration.
    pub fn echo_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The configuration as CSV comment lines, one `# key = value` per
    /// line, embedded in every text output for provenance.
    pub fn echo_comment_block(&self) -> String {
        let mut block = String::new();
        for line in self.echo_toml().lines() {
            block.push_str("# ");
            block.push_str(line);
            block.push('\n');
        }
        block
    }
}

/// Named model/training recipes selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size configuration: base encoder, batch 100, learning rate
    /// 1e-4, 50 epochs.
    Paper,
    /// CPU-scale configuration used by the end-to-end checks.
    Desk,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidArg(format!(
                "unknown preset '{other}' (expected 'paper' or 'desk')"
            ))),
        }
    }

    /// Overwrites the model and the optimizer/schedule half of the
    /// training recipe; corruption bounds, loss weights, and seeds stay
    /// with the config file.
    pub fn apply(self, cfg: &mut PipelineConfig) {
        match self {
            Preset::Paper => {
                cfg.model = ModelConfig::base();
                cfg.train.batch_size = 100;
                cfg.train.learning_rate = 1e-4;
                cfg.train.epochs = 50;
                cfg.train.window = 40;
                cfg.train.window_stride = 1;
                cfg.train.include_final_offset = false;
            }
            Preset::Desk => {
                cfg.model = ModelConfig::desk();
                cfg.train.batch_size = 16;
                cfg.train.learning_rate = 1e-3;
                cfg.train.epochs = 16;
                cfg.train.window = 40;
                cfg.train.window_stride = 4;
                cfg.train.include_final_offset = false;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_roundtrips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.echo_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_missing_fields_with_defaults() {
        let text = "seed = 99\n[train]\nlearning_rate = 0.002\n";
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.learning_rate, 0.002);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.train.batch_size, PipelineConfig::default().train.batch_size);
        assert_eq!(cfg.axis, PpmAxis::default_synthetic());
    }

    #[test]
    fn mismatched_axis_and_model_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.axis.n_points = 1024;
        assert!(matches!(cfg.validate(), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn metric_window_off_axis_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.metrics.noise_lo_ppm = 40.0;
        cfg.metrics.noise_hi_ppm = 42.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_pin_their_published_recipes() {
        let mut cfg = PipelineConfig::default();
        Preset::Paper.apply(&mut cfg);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.model, ModelConfig::base());
        cfg.validate().unwrap();

        Preset::Desk.apply(&mut cfg);
        assert_eq!(cfg.model, ModelConfig::desk());
        assert!(Preset::parse("desk").is_ok());
        assert!(Preset::parse("huge").is_err());
        cfg.validate().unwrap();
    }

    #[test]
    fn comment_block_prefixes_every_line() {
        let cfg = PipelineConfig::default();
        for line in cfg.echo_comment_block().lines() {
            assert!(line.starts_with("# "), "line not commented: {line}");
        }
    }

    #[test]
    fn load_reports_malformed_toml_as_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "seed = [not valid").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Format(_))));
        std::fs::write(&path, "seed = 3\n").unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap().seed, 3);
    }
}
