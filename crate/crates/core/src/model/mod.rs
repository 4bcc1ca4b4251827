//! The multi-stage reconstruction network, its single-stage counterpart and
//! the back-projection baseline.

mod baseline;
mod losses;
mod net;
mod store;
mod train;

pub use baseline::back_projection;
pub use losses::{center_loss, chamfer_loss, cross_entropy, local_feature_loss, uncertainty_weighted};
pub use net::{CloudNet, CrNet, Encoder, MscrNet, PointDecoder, Prediction, Route, SceneDecoder};
pub use store::{load_crnet, load_mscr, save_model, CheckpointMeta, ModelKind};
pub use train::{
    prepare_records, routing_labels, train_crnet, train_stage1, train_stage2, train_stage3, Record, StageSummary, TrainConfig,
    TrainingLog, TrainingRow, vat_perturbation,
};

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::io::Sample;
use crate::numkit::Tensor;
use crate::sage::ChannelSnapshot;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_paths: usize,
    /// Per-path token width inside the encoders.
    pub token_dim: usize,
    pub stem_hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    /// Encoder output width.
    pub feature_dim: usize,
    pub scene_hidden: usize,
    pub point_hidden: usize,
    /// Extra point-decoder layers used for mixed scenes.
    pub mixed_layers: usize,
    pub n_points: usize,
    pub crnet_width: usize,
    /// Linear layers in the single-stage decoder.
    pub crnet_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_paths: 40,
            token_dim: 64,
            stem_hidden: 64,
            heads: 4,
            layers: 4,
            ff_dim: 128,
            feature_dim: 128,
            scene_hidden: 64,
            point_hidden: 256,
            mixed_layers: 3,
            n_points: 1000,
            crnet_width: 240,
            crnet_layers: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("n_paths", self.n_paths),
            ("token_dim", self.token_dim),
            ("stem_hidden", self.stem_hidden),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("feature_dim", self.feature_dim),
            ("scene_hidden", self.scene_hidden),
            ("point_hidden", self.point_hidden),
            ("n_points", self.n_points),
            ("crnet_width", self.crnet_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.token_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.token_dim {} is not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        if self.n_points < 2 {
            return Err(Error::Config("model.n_points must be at least 2".into()));
        }
        if self.crnet_layers < 2 {
            return Err(Error::Config("model.crnet_layers must be at least 2".into()));
        }
        Ok(())
    }
}

/// Standardised encoder input for one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput {
    /// `[n_paths, 1]`
    pub delays: Tensor,
    /// `[n_paths, 2]`, azimuth then elevation.
    pub angles: Tensor,
}

/// Input standardisation and output scaling fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Mean of (delay ns, azimuth, elevation) over non-padding paths.
    pub path_mean: [f64; 3],
    pub path_std: [f64; 3],
    pub point_min: [f64; 3],
    pub point_max: [f64; 3],
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self, Error> {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0usize;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in samples {
            for c in s.snapshot.components.iter().filter(|c| !c.is_sentinel()) {
                let v = [c.delay * 1e9, c.azimuth, c.elevation];
                for a in 0..3 {
                    sum[a] += v[a];
                    sq[a] += v[a] * v[a];
                }
                n += 1;
            }
            for p in &s.cloud.points {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        if n < 2 || !lo[0].is_finite() {
            return Err(Error::Contract("normalisation needs at least two paths and one point".into()));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for a in 0..3 {
            mean[a] = sum[a] / n as f64;
            std[a] = ((sq[a] / n as f64 - mean[a] * mean[a]).max(0.0)).sqrt().max(STD_FLOOR);
            if hi[a] - lo[a] < 2.0 * STD_FLOOR {
                hi[a] = lo[a] + 2.0 * STD_FLOOR;
            }
        }
        Ok(Self { path_mean: mean, path_std: std, point_min: lo, point_max: hi })
    }

    pub fn mid(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.point_min[a] + self.point_max[a]))
    }

    pub fn half(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.point_max[a] - self.point_min[a]))
    }

    pub fn normalize_point(&self, p: &Point3) -> Point3 {
        let (m, h) = (self.mid(), self.half());
        std::array::from_fn(|a| (p[a] - m[a]) / h[a])
    }

    pub fn denormalize_point(&self, u: &Point3) -> Point3 {
        let (m, h) = (self.mid(), self.half());
        std::array::from_fn(|a| m[a] + h[a] * u[a])
    }

    pub fn encode(&self, snapshot: &ChannelSnapshot, n_paths: usize) -> Result<EncodedInput, Error> {
        if snapshot.len() != n_paths {
            return Err(Error::Contract(format!(
                "snapshot has {} paths, the model expects {n_paths}",
                snapshot.len()
            )));
        }
        let mut d = Vec::with_capacity(n_paths);
        let mut ang = Vec::with_capacity(2 * n_paths);
        for c in &snapshot.components {
            let v = [c.delay * 1e9, c.azimuth, c.elevation];
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract("snapshot contains non-finite values".into()));
            }
            d.push((v[0] - self.path_mean[0]) / self.path_std[0]);
            ang.push((v[1] - self.path_mean[1]) / self.path_std[1]);
            ang.push((v[2] - self.path_mean[2]) / self.path_std[2]);
        }
        Ok(EncodedInput { delays: Tensor::new(&[n_paths, 1], d)?, angles: Tensor::new(&[n_paths, 2], ang)? })
    }
}
