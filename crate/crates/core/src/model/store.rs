//! Checkpoint files: parameters in the binary format plus a JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CrNet, ModelConfig, MscrNet, NormStats};
use crate::io::write_json;
use crate::numkit::{read_checkpoint, write_checkpoint, ParamStore};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mscr,
    Crnet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub stage: u8,
    pub epoch: usize,
    /// Whether the stage stopped on its criterion rather than the epoch cap.
    pub converged: bool,
    pub config_hash: String,
    pub norm: NormStats,
    pub lambda: [f64; 2],
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("ckpt"), base.with_extension("json"))
}

/// Write `<base>.ckpt` and `<base>.json`.
pub fn save_model(base: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<(), Error> {
    let (ckpt, side) = paths(base);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&ckpt)?);
    write_checkpoint(&mut f, store)?;
    f.flush()?;
    write_json(&side, meta)
}

fn load_into(base: &Path, store: &mut ParamStore, kind: ModelKind, config_hash: &str) -> Result<CheckpointMeta, Error> {
    let (ckpt, side) = paths(base);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::Config(format!("missing checkpoint sidecar {}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.kind != kind {
        return Err(Error::Format(format!("{} holds a {:?} model", side.display(), meta.kind)));
    }
    if meta.config_hash != config_hash {
        return Err(Error::Config(format!(
            "{} was produced under config {}, current config is {}",
            ckpt.display(),
            meta.config_hash,
            config_hash
        )));
    }
    let mut f = std::io::BufReader::new(
        std::fs::File::open(&ckpt).map_err(|e| Error::Config(format!("missing checkpoint {}: {e}", ckpt.display())))?,
    );
    let entries = read_checkpoint(&mut f)?;
    if entries.len() != store.len() {
        return Err(Error::Format(format!(
            "{} has {} tensors, the model has {}",
            ckpt.display(),
            entries.len(),
            store.len()
        )));
    }
    store.load_named(entries)?;
    Ok(meta)
}

pub fn load_mscr(base: &Path, cfg: &ModelConfig, config_hash: &str) -> Result<(MscrNet, ParamStore, CheckpointMeta), Error> {
    let (net, mut store) = MscrNet::new(cfg, 0)?;
    let meta = load_into(base, &mut store, ModelKind::Mscr, config_hash)?;
    Ok((net, store, meta))
}

pub fn load_crnet(base: &Path, cfg: &ModelConfig, config_hash: &str) -> Result<(CrNet, ParamStore, CheckpointMeta), Error> {
    let (net, mut store) = CrNet::new(cfg, 0)?;
    let meta = load_into(base, &mut store, ModelKind::Crnet, config_hash)?;
    Ok((net, store, meta))
}
