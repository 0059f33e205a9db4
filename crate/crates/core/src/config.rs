//! Pipeline configuration file and its provenance digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SimConfig;
use crate::distill::{DataConfig, TrainConfig, TrainMode};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::masks::IbmConfig;
use crate::nn::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub checkpoints_dir: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: "work/corpus".into(),
            checkpoints_dir: "work/checkpoints".into(),
            reports_dir: "work/reports".into(),
        }
    }
}

/// Everything a pipeline run depends on. `loss_weights` overrides the
/// student section's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub stft: StftConfig,
    pub ibm: IbmConfig,
    pub sim: SimConfig,
    pub gev_eps: f64,
    pub oracle_teacher_input: bool,
    pub baseline: TrainConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub loss_weights: LossWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        PipelineConfig {
            paths: Paths::default(),
            stft: data.stft,
            ibm: data.ibm,
            sim: SimConfig::default(),
            gev_eps: data.gev_eps,
            oracle_teacher_input: data.oracle_teacher_input,
            baseline: TrainConfig::default(),
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.ibm.validate()?;
        self.sim.validate()?;
        self.loss_weights.validate()?;
        if !(self.gev_eps > 0.0) {
            return Err(Error::Config("gev_eps must be positive".into()));
        }
        if self.sim.sample_rate != self.stft.sample_rate {
            return Err(Error::Config(format!(
                "corpus rate {} differs from STFT rate {}",
                self.sim.sample_rate, self.stft.sample_rate
            )));
        }
        for mode in [TrainMode::Baseline, TrainMode::Teacher, TrainMode::Student] {
            let t = self.train_config(mode);
            t.validate()?;
            if t.dims.input != self.stft.num_bins() {
                return Err(Error::Config(format!(
                    "{} network input {} does not match the {} STFT bins",
                    mode.as_str(),
                    t.dims.input,
                    self.stft.num_bins()
                )));
            }
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            stft: self.stft,
            ibm: self.ibm,
            gev_eps: self.gev_eps,
            oracle_teacher_input: self.oracle_teacher_input,
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        match mode {
            TrainMode::Baseline => self.baseline.clone(),
            TrainMode::Teacher => self.teacher.clone(),
            TrainMode::Student => TrainConfig {
                loss_weights: self.loss_weights,
                ..self.student.clone()
            },
        }
    }

    /// Overrides every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.baseline.seed = seed;
        self.teacher.seed = seed;
        self.student.seed = seed;
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
