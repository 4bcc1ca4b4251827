//! Subcommand implementations behind the `isac-recon` binary.

mod bench;
mod eval;
mod gen;
mod report;
mod sequence;
mod train;

pub use bench::{cmd_bench, flops_per_inference, BenchReport};
pub use eval::{cmd_eval, evaluate_method, EvalRow, EvalSummary, Method, MethodSummary};
pub use gen::{build_sample, build_with_retries, cmd_gen, rotate_snapshot, Rejection};
pub use report::{cmd_metrics, cmd_prep, cmd_report};
pub use sequence::{cmd_sequence, ghost_score, SequenceReport};
pub use train::{cmd_train, TrainTarget};

use std::path::Path;

use crate::config::RunConfig;
use crate::io::{load_sample, Manifest, Sample};
use crate::scene::Split;
use crate::Error;

/// A generated dataset loaded into memory, split by role.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl Dataset {
    /// Load `dir`, rejecting data produced under a different configuration.
    pub fn load(dir: &Path, cfg: &RunConfig) -> Result<Self, Error> {
        let manifest = Manifest::load(dir)?;
        if manifest.config_hash != cfg.hash() {
            return Err(Error::Config(format!(
                "dataset {} was generated under config {}, current config is {}",
                dir.display(),
                manifest.config_hash,
                cfg.hash()
            )));
        }
        let load = |split: Split| -> Result<Vec<Sample>, Error> {
            manifest.paths(dir, split).iter().map(|p| load_sample(p)).collect()
        };
        Ok(Self { train: load(Split::Train)?, test: load(Split::Test)?, validation: load(Split::Validation)?, manifest })
    }
}
