use std::path::Path;

use super::Dataset;
use crate::config::RunConfig;
use crate::io::write_json;
use crate::model::{
    load_mscr, prepare_records, save_model, train_crnet, train_stage1, train_stage2, train_stage3, CheckpointMeta, CrNet,
    ModelKind, MscrNet, NormStats, StageSummary, TrainingLog,
};
use crate::seed;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTarget {
    Stage(u8),
    /// Stages 1 to 3 in order.
    All,
    Crnet,
}

pub(crate) fn stage_base(dir: &Path, stage: u8) -> std::path::PathBuf {
    dir.join(format!("mscr_stage{stage}"))
}

pub(crate) fn crnet_base(dir: &Path) -> std::path::PathBuf {
    dir.join("crnet")
}

fn load_stage(dir: &Path, cfg: &RunConfig, stage: u8) -> Result<(MscrNet, crate::numkit::ParamStore, CheckpointMeta), Error> {
    let base = stage_base(dir, stage);
    if !base.with_extension("ckpt").exists() {
        return Err(Error::Config(format!(
            "stage {} requires the stage-{stage} checkpoint {}",
            stage + 1,
            base.with_extension("ckpt").display()
        )));
    }
    load_mscr(&base, &cfg.model, &cfg.hash())
}

/// Train the requested stages from the dataset in `data`, writing
/// checkpoints, logs and stage summaries into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, target: TrainTarget) -> Result<Vec<StageSummary>, Error> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let ds = Dataset::load(data, cfg)?;
    if ds.train.is_empty() || ds.validation.is_empty() || ds.test.is_empty() {
        return Err(Error::Config("training needs non-empty train, test and validation splits".into()));
    }
    let norm = NormStats::fit(&ds.train)?;
    let n_paths = cfg.model.n_paths;
    let train = prepare_records(&ds.train, &norm, n_paths)?;
    let test = prepare_records(&ds.test, &norm, n_paths)?;
    let val = prepare_records(&ds.validation, &norm, n_paths)?;
    let hash = cfg.hash();
    let stages: Vec<u8> = match target {
        TrainTarget::Stage(s) => vec![s],
        TrainTarget::All => vec![1, 2, 3],
        TrainTarget::Crnet => vec![],
    };
    let mut summaries = Vec::new();
    for stage in stages {
        let mut log = TrainingLog::default();
        let summary = match stage {
            1 => {
                let (net, mut store) = MscrNet::new(&cfg.model, seed::derive(cfg.seed, "init", 0))?;
                let s = train_stage1(&net, &mut store, &train, &val, &cfg.train, seed::derive(cfg.seed, "train", 1), &mut log)?;
                save_stage(out, &store, &net, &norm, &hash, &s)?;
                s
            }
            2 | 3 => {
                let (net, mut store, meta) = load_stage(out, cfg, stage - 1)?;
                if meta.norm != norm {
                    return Err(Error::Config("normalisation statistics differ from the previous stage".into()));
                }
                let s = if stage == 2 {
                    train_stage2(&net, &mut store, &train, &test, &cfg.train, seed::derive(cfg.seed, "train", 2), &mut log)?
                } else {
                    train_stage3(&net, &mut store, &norm, &train, &val, &cfg.train, seed::derive(cfg.seed, "train", 3), &mut log)?
                };
                save_stage(out, &store, &net, &norm, &hash, &s)?;
                s
            }
            other => return Err(Error::Config(format!("unknown stage {other}"))),
        };
        log.save(&out.join(format!("training_log_stage{stage}.csv")))?;
        summaries.push(summary);
    }
    if target == TrainTarget::Crnet {
        let mut log = TrainingLog::default();
        let (net, mut store) = CrNet::new(&cfg.model, seed::derive(cfg.seed, "init", 1))?;
        let s = train_crnet(&net, &mut store, &norm, &train, &val, &cfg.train, seed::derive(cfg.seed, "train", 4), &mut log)?;
        let lambda = net.lambda.map(|id| store.get(id).item());
        let meta = CheckpointMeta {
            kind: ModelKind::Crnet,
            stage: 3,
            epoch: s.best_epoch,
            converged: s.converged,
            config_hash: hash.clone(),
            norm: norm.clone(),
            lambda,
        };
        save_model(&crnet_base(out), &store, &meta)?;
        log.save(&out.join("training_log_crnet.csv"))?;
        summaries.push(s);
    }
    let name = match target {
        TrainTarget::Stage(s) => format!("train_summary_stage{s}.json"),
        TrainTarget::All => "train_summary_all.json".into(),
        TrainTarget::Crnet => "train_summary_crnet.json".into(),
    };
    write_json(&out.join(name), &serde_json::json!({ "config_hash": hash, "stages": summaries }))?;
    Ok(summaries)
}

fn save_stage(
    out: &Path,
    store: &crate::numkit::ParamStore,
    net: &MscrNet,
    norm: &NormStats,
    hash: &str,
    s: &StageSummary,
) -> Result<(), Error> {
    let meta = CheckpointMeta {
        kind: ModelKind::Mscr,
        stage: s.stage,
        epoch: s.best_epoch,
        converged: s.converged,
        config_hash: hash.to_string(),
        norm: norm.clone(),
        lambda: net.lambda.map(|id| store.get(id).item()),
    };
    save_model(&stage_base(out, s.stage), store, &meta)
}
