//! Run configuration shared by every CLI subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::prep::PrepConfig;
use crate::sage::SageConfig;
use crate::scene::{SceneGenConfig, SplitConfig};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    /// Vehicle speed (m/s).
    pub speed: f64,
    /// Time between snapshots (s).
    pub interval: f64,
    pub frames: usize,
    /// Predicted points farther than this from all ground truth count as
    /// ghosts (m).
    pub ghost_radius: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { speed: 10.0 / 3.6, interval: 1.0, frames: 20, ghost_radius: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Validation samples whose reconstructions are dumped as text.
    pub showcase: usize,
    pub bench_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5, showcase: 8, bench_runs: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Training-pool size (train + test).
    pub n_samples: usize,
    pub split: SplitConfig,
    pub scene: SceneGenConfig,
    /// Surface samples drawn per scene before preparation.
    pub raw_points: usize,
    pub channel: ChannelConfig,
    pub sage: SageConfig,
    pub prep: PrepConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sequence: SequenceConfig,
    pub eval: EvalConfig,
    /// Attempts per sample before it is skipped.
    pub max_retries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 2000,
            split: SplitConfig::default(),
            scene: SceneGenConfig::default(),
            raw_points: 3000,
            channel: ChannelConfig::default(),
            sage: SageConfig::default(),
            prep: PrepConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sequence: SequenceConfig::default(),
            eval: EvalConfig::default(),
            max_retries: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.scene.validate()?;
        self.channel.validate()?;
        self.sage.validate()?;
        self.prep.validate()?;
        self.model.validate()?;
        if self.raw_points == 0 {
            return Err(Error::Config("raw_points must be positive".into()));
        }
        if self.model.n_paths != self.channel.n_paths {
            return Err(Error::Config(format!(
                "model expects {} paths but the channel produces {}",
                self.model.n_paths, self.channel.n_paths
            )));
        }
        if self.model.n_points != self.prep.m {
            return Err(Error::Config(format!(
                "model emits {} points but preparation yields {}",
                self.model.n_points, self.prep.m
            )));
        }
        if self.train.neighbours == 0 || self.train.neighbours > self.prep.m || self.train.anchors == 0 {
            return Err(Error::Config(format!(
                "train.neighbours must lie in 1..={} and train.anchors must be positive",
                self.prep.m
            )));
        }
        if !(self.sequence.speed > 0.0 && self.sequence.interval > 0.0) {
            return Err(Error::Config("sequence speed and interval must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        format!("{:x}", Sha256::digest(&bytes))
    }
}
