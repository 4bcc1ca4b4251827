//! Staged training with per-sample graphs evaluated in parallel and reduced
//! in batch order.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{center_loss, chamfer_loss, cross_entropy, local_feature_loss, uncertainty_weighted};
use super::net::{input_vars, points_of, CloudNet, MscrNet, Route};
use super::{EncodedInput, NormStats};
use crate::geometry::Point3;
use crate::io::Sample;
use crate::metrics::{canonical_centers, chamfer, DEFAULT_ANCHORS, DEFAULT_NEIGHBOURS};
use crate::numkit::{Adam, AdamConfig, Ctx, Graph, ParamGrads, ParamId, ParamStore, Tensor, Var};
use crate::sage::ChannelSnapshot;
use crate::scene::SceneLabel;
use crate::seed;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub stage1_max_epochs: usize,
    /// Required fraction of correctly labelled validation samples.
    pub stage1_accuracy: f64,
    /// Allowed relative spread of the validation loss over the window.
    pub stage1_fluctuation: f64,
    pub stage1_window: usize,
    pub stage2_max_epochs: usize,
    pub stage2_min_epochs: usize,
    pub stage2_threshold: f64,
    pub stage3_epochs: usize,
    pub crnet_epochs: usize,
    pub vat: bool,
    pub vat_epsilon: f64,
    pub vat_xi: f64,
    /// Route stage 2/3 training through ground-truth labels instead of
    /// stage-1 predictions.
    pub teacher_forcing: bool,
    pub anchors: usize,
    pub neighbours: usize,
    /// Fixed initial uncertainty weights; `None` uses the log of the first
    /// batch's losses.
    pub lambda_init: Option<[f64; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            adam: AdamConfig::default(),
            stage1_max_epochs: 100,
            stage1_accuracy: 0.9,
            stage1_fluctuation: 0.05,
            stage1_window: 5,
            stage2_max_epochs: 100,
            stage2_min_epochs: 30,
            stage2_threshold: 2.0,
            stage3_epochs: 300,
            crnet_epochs: 300,
            vat: true,
            vat_epsilon: 0.5,
            vat_xi: 1e-6,
            teacher_forcing: true,
            anchors: DEFAULT_ANCHORS,
            neighbours: DEFAULT_NEIGHBOURS,
            lambda_init: None,
        }
    }
}

/// A sample prepared for the network.
#[derive(Clone, Debug)]
pub struct Record {
    pub id: u64,
    pub label: SceneLabel,
    pub input: EncodedInput,
    /// Normalised, x-sorted, duplicate-padded centers.
    pub centers_norm: [Point3; 2],
    pub gt_centers: Vec<Point3>,
    pub target: Vec<Point3>,
    pub snapshot: ChannelSnapshot,
}

pub fn prepare_records(samples: &[Sample], norm: &NormStats, n_paths: usize) -> Result<Vec<Record>, Error> {
    samples
        .iter()
        .map(|s| {
            let c = canonical_centers(&s.centers)?;
            Ok(Record {
                id: s.id,
                label: s.label,
                input: norm.encode(&s.snapshot, n_paths)?,
                centers_norm: [norm.normalize_point(&c[0]), norm.normalize_point(&c[1])],
                gt_centers: s.centers.clone(),
                target: s.cloud.points.clone(),
                snapshot: s.snapshot.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub model: String,
    pub stage: u8,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub vat: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub accuracy: Option<f64>,
    pub chamfer: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub rows: Vec<TrainingRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "model,stage,epoch,split,loss,l1,l2,vat,lambda1,lambda2,accuracy,chamfer";

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.8e}")).unwrap_or_default()
        }
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.8e},{},{},{},{},{},{},{}",
                r.model,
                r.stage,
                r.epoch,
                r.split,
                r.loss,
                opt(r.l1),
                opt(r.l2),
                opt(r.vat),
                opt(r.lambda1),
                opt(r.lambda2),
                opt(r.accuracy),
                opt(r.chamfer)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub model: String,
    pub stage: u8,
    pub epochs: usize,
    pub converged: bool,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    /// Last monitored value (accuracy, center loss or validation Chamfer).
    pub metric: f64,
}

fn epoch_order(n: usize, base: u64, stream: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(base, stream, epoch as u64));
    idx
}

/// One pass over `order`; returns the per-sample mean of the reported loss
/// parts.
fn train_epoch<F>(
    store: &mut ParamStore,
    adam: &mut Adam,
    trainable: &[ParamId],
    order: &[usize],
    batch: usize,
    sample_loss: F,
) -> Result<[f64; 4], Error>
where
    F: Fn(&Ctx, usize, f64) -> Result<(Var, [f64; 4]), Error> + Sync,
{
    if batch == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut totals = [0.0; 4];
    for chunk in order.chunks(batch) {
        let inv = 1.0 / chunk.len() as f64;
        let frozen: &ParamStore = store;
        let outs: Vec<Result<(ParamGrads, [f64; 4]), Error>> = chunk
            .par_iter()
            .map(|&i| {
                let g = Graph::new();
                let ctx = Ctx::new(&g, frozen, trainable.iter().copied());
                ctx.bind_trainable();
                let (loss, parts) = sample_loss(&ctx, i, inv)?;
                if !g.value(loss).item().is_finite() {
                    return Err(Error::Contract(format!("non-finite training loss on sample index {i}")));
                }
                Ok((ctx.backward(loss)?, parts))
            })
            .collect();
        let mut acc = ParamGrads::default();
        for out in outs {
            let (grads, parts) = out?;
            acc.accumulate(&grads)?;
            for (t, p) in totals.iter_mut().zip(parts) {
                *t += p;
            }
        }
        adam.step(store, &acc, trainable)?;
    }
    let n = order.len().max(1) as f64;
    Ok(totals.map(|t| t / n))
}

fn relative_spread(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if mean.abs() > 0.0 {
        (max - min) / mean.abs()
    } else {
        0.0
    }
}

/// Validation cross-entropy and accuracy of the scene classifier.
fn stage1_eval(net: &MscrNet, store: &ParamStore, recs: &[Record]) -> Result<(f64, f64), Error> {
    let out: Vec<Result<(f64, bool), Error>> = recs
        .par_iter()
        .map(|r| {
            let g = Graph::new();
            let ctx = Ctx::frozen(&g, store);
            let (d, a) = input_vars(&g, &r.input);
            let logits = net.scene_logits(&ctx, d, a)?;
            let ce = g.value(cross_entropy(&g, logits, r.label)?).item();
            let l = g.value(logits);
            let pred = SceneLabel::from_class(usize::from(l.data()[1] > l.data()[0]));
            Ok((ce, pred == r.label))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for o in out {
        let (ce, ok) = o?;
        loss += ce;
        correct += usize::from(ok);
    }
    let n = recs.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Stage 1: encoder 1 and the scene decoder on cross-entropy. Stops once
/// validation accuracy reaches the target and the validation loss has
/// settled, or at the epoch cap.
pub fn train_stage1(
    net: &MscrNet,
    store: &mut ParamStore,
    train: &[Record],
    val: &[Record],
    cfg: &TrainConfig,
    base_seed: u64,
    log: &mut TrainingLog,
) -> Result<StageSummary, Error> {
    let trainable = net.stage_params(store, 1);
    let mut adam = Adam::new(cfg.adam.clone());
    let mut history = Vec::new();
    let (mut converged, mut epochs, mut acc) = (false, 0, 0.0);
    for epoch in 1..=cfg.stage1_max_epochs {
        let order = epoch_order(train.len(), base_seed, "stage1-order", epoch);
        let parts = train_epoch(store, &mut adam, &trainable, &order, cfg.batch_size, |ctx, i, inv| {
            let g = ctx.graph;
            let (d, a) = input_vars(g, &train[i].input);
            let ce = cross_entropy(g, net.scene_logits(ctx, d, a)?, train[i].label)?;
            let v = g.value(ce).item();
            Ok((g.scale(ce, inv), [v, 0.0, 0.0, 0.0]))
        })?;
        let (val_loss, val_acc) = stage1_eval(net, store, val)?;
        log.rows.push(TrainingRow { model: "mscr".into(), stage: 1, epoch, split: "train".into(), loss: parts[0], ..Default::default() });
        log.rows.push(TrainingRow {
            model: "mscr".into(),
            stage: 1,
            epoch,
            split: "validation".into(),
            loss: val_loss,
            accuracy: Some(val_acc),
            ..Default::default()
        });
        log::info!("stage 1 epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_acc:.3}", parts[0]);
        history.push(val_loss);
        epochs = epoch;
        acc = val_acc;
        let w = cfg.stage1_window.max(1);
        if history.len() >= w && val_acc >= cfg.stage1_accuracy && relative_spread(&history[history.len() - w..]) < cfg.stage1_fluctuation {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("stage 1 hit its epoch cap ({epochs}) without meeting the stopping rule");
    }
    Ok(StageSummary { model: "mscr".into(), stage: 1, epochs, converged, best_epoch: epochs, metric: acc })
}

/// Labels used to route stage 2/3 inputs.
pub fn routing_labels(net: &MscrNet, store: &ParamStore, recs: &[Record], teacher_forcing: bool) -> Result<Vec<SceneLabel>, Error> {
    if teacher_forcing {
        return Ok(recs.iter().map(|r| r.label).collect());
    }
    recs.par_iter().map(|r| Ok(net.classify(store, &r.input)?.0)).collect()
}

fn mean_center_loss(net: &MscrNet, store: &ParamStore, recs: &[Record], labels: &[SceneLabel]) -> Result<f64, Error> {
    let out: Vec<Result<f64, Error>> = recs
        .par_iter()
        .zip(labels)
        .map(|(r, &label)| {
            let g = Graph::new();
            let ctx = Ctx::frozen(&g, store);
            let (d, a) = input_vars(&g, &r.input);
            let l = center_loss(&g, net.centers(&ctx, d, a, label)?, &r.centers_norm)?;
            let v = g.value(l).item();
            Ok(v)
        })
        .collect();
    let mut s = 0.0;
    for v in out {
        s += v?;
    }
    Ok(s / recs.len().max(1) as f64)
}

/// Stage 2: encoder 2 and the center heads. Stops once the monitored
/// center loss falls below the threshold after the minimum number of
/// epochs, or at the cap.
pub fn train_stage2(
    net: &MscrNet,
    store: &mut ParamStore,
    train: &[Record],
    monitor: &[Record],
    cfg: &TrainConfig,
    base_seed: u64,
    log: &mut TrainingLog,
) -> Result<StageSummary, Error> {
    let trainable = net.stage_params(store, 2);
    let train_labels = routing_labels(net, store, train, cfg.teacher_forcing)?;
    let monitor_labels = routing_labels(net, store, monitor, cfg.teacher_forcing)?;
    let mut adam = Adam::new(cfg.adam.clone());
    let (mut converged, mut epochs, mut last) = (false, 0, f64::NAN);
    for epoch in 1..=cfg.stage2_max_epochs {
        let order = epoch_order(train.len(), base_seed, "stage2-order", epoch);
        let parts = train_epoch(store, &mut adam, &trainable, &order, cfg.batch_size, |ctx, i, inv| {
            let g = ctx.graph;
            let (d, a) = input_vars(g, &train[i].input);
            let l = center_loss(g, net.centers(ctx, d, a, train_labels[i])?, &train[i].centers_norm)?;
            let v = g.value(l).item();
            Ok((g.scale(l, inv), [v, 0.0, 0.0, 0.0]))
        })?;
        last = mean_center_loss(net, store, monitor, &monitor_labels)?;
        log.rows.push(TrainingRow { model: "mscr".into(), stage: 2, epoch, split: "train".into(), loss: parts[0], ..Default::default() });
        log.rows.push(TrainingRow { model: "mscr".into(), stage: 2, epoch, split: "test".into(), loss: last, ..Default::default() });
        log::info!("stage 2 epoch {epoch}: train {:.4} test {last:.4}", parts[0]);
        epochs = epoch;
        if epoch >= cfg.stage2_min_epochs && last < cfg.stage2_threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("stage 2 hit its epoch cap ({epochs}) without meeting the stopping rule");
    }
    Ok(StageSummary { model: "mscr".into(), stage: 2, epochs, converged, best_epoch: epochs, metric: last })
}

/// Adversarial input perturbation of norm `epsilon` from one power
/// iteration started at a random direction of norm `xi`.
#[allow(clippy::too_many_arguments)]
pub fn vat_perturbation<N: CloudNet>(
    net: &N,
    store: &ParamStore,
    input: &EncodedInput,
    route: &Route,
    norm: &NormStats,
    clean: &[Point3],
    epsilon: f64,
    xi: f64,
    seed: u64,
) -> Result<(Tensor, Tensor), Error> {
    let n = input.delays.shape()[0];
    let mut rng = seed::rng(seed, "vat", 0);
    let r0: Vec<f64> = (0..3 * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let r0n = r0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let split = |v: &[f64], s: f64| -> Result<(Tensor, Tensor), Error> {
        let d = (0..n).map(|i| v[3 * i] * s).collect();
        let a = (0..n).flat_map(|i| [v[3 * i + 1] * s, v[3 * i + 2] * s]).collect();
        Ok((Tensor::new(&[n, 1], d)?, Tensor::new(&[n, 2], a)?))
    };
    let (rd, ra) = split(&r0, xi / r0n)?;
    let g = Graph::new();
    let ctx = Ctx::frozen(&g, store);
    let (rd, ra) = (g.param(rd), g.param(ra));
    let (d0, a0) = input_vars(&g, input);
    let pred = net.cloud(&ctx, g.add(d0, rd)?, g.add(a0, ra)?, route, norm)?;
    let div = chamfer_loss(&g, pred, clean, clean.len() as f64)?;
    let grads = g.backward(div)?;
    let (gd, ga) = (grads.get(rd).expect("leaf grad"), grads.get(ra).expect("leaf grad"));
    let gv: Vec<f64> = (0..n).flat_map(|i| [gd.data()[i], ga.data()[2 * i], ga.data()[2 * i + 1]]).collect();
    let gn = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
    if gn > 0.0 && gn.is_finite() {
        split(&gv, epsilon / gn)
    } else {
        split(&r0, epsilon / r0n)
    }
}

fn lambda_values(store: &ParamStore, ids: [ParamId; 2]) -> [f64; 2] {
    ids.map(|id| store.get(id).item())
}

/// Per-sample cloud objective with uncertainty weighting and, optionally,
/// the adversarial smoothness term. Returns the loss scaled by `inv` and the
/// unscaled parts (total, chamfer, local feature, adversarial).
#[allow(clippy::too_many_arguments)]
fn cloud_sample_loss<N: CloudNet>(
    net: &N,
    ctx: &Ctx,
    rec: &Record,
    route: &Route,
    norm: &NormStats,
    cfg: &TrainConfig,
    n_points: usize,
    vat_seed: u64,
    inv: f64,
) -> Result<(Var, [f64; 4]), Error> {
    if rec.target.len() != n_points {
        return Err(Error::Contract(format!(
            "sample {}: target cloud has {} points, the decoder emits {n_points}",
            rec.id,
            rec.target.len()
        )));
    }
    let g = ctx.graph;
    let (d, a) = input_vars(g, &rec.input);
    let pred = net.cloud(ctx, d, a, route, norm)?;
    let l1 = chamfer_loss(g, pred, &rec.target, n_points as f64)?;
    let l2 = local_feature_loss(g, pred, &rec.target, cfg.anchors, cfg.neighbours)?;
    let mut total = uncertainty_weighted(g, [l1, l2], net.lambdas().map(|id| ctx.p(id)))?;
    let mut vat_value = 0.0;
    if cfg.vat && cfg.vat_epsilon > 0.0 {
        let clean = points_of(&g.value(pred));
        let (rd, ra) = vat_perturbation(net, ctx.store(), &rec.input, route, norm, &clean, cfg.vat_epsilon, cfg.vat_xi, vat_seed)?;
        let dp = Tensor::new(&[rd.numel(), 1], rec.input.delays.data().iter().zip(rd.data()).map(|(x, r)| x + r).collect())?;
        let ap = Tensor::new(rec.input.angles.shape(), rec.input.angles.data().iter().zip(ra.data()).map(|(x, r)| x + r).collect())?;
        let adv = net.cloud(ctx, g.constant(dp), g.constant(ap), route, norm)?;
        let vat = chamfer_loss(g, adv, &clean, n_points as f64)?;
        vat_value = g.value(vat).item();
        total = g.add(total, vat)?;
    }
    let parts = [g.value(total).item(), g.value(l1).item(), g.value(l2).item(), vat_value];
    Ok((g.scale(total, inv), parts))
}

/// Shared loop for the cloud objective: epoch cap with the best
/// validation-Chamfer weights restored at the end.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_cloud<N, P>(
    name: &str,
    stage: u8,
    net: &N,
    store: &mut ParamStore,
    norm: &NormStats,
    train: &[Record],
    routes: &[Route],
    val: &[Record],
    predict: P,
    epochs: usize,
    cfg: &TrainConfig,
    n_points: usize,
    base_seed: u64,
    log: &mut TrainingLog,
) -> Result<StageSummary, Error>
where
    N: CloudNet,
    P: Fn(&ParamStore, &Record) -> Result<Vec<Point3>, Error> + Sync,
{
    let trainable = net.cloud_params(store);
    let lambdas = net.lambdas();
    let init = match cfg.lambda_init {
        Some(l) => l,
        None => {
            let order = epoch_order(train.len(), base_seed, &format!("{name}-order"), 1);
            let first = &order[..cfg.batch_size.min(order.len())];
            let frozen: &ParamStore = store;
            let losses: Vec<Result<[f64; 2], Error>> = first
                .par_iter()
                .map(|&i| {
                    let g = Graph::new();
                    let ctx = Ctx::frozen(&g, frozen);
                    let (d, a) = input_vars(&g, &train[i].input);
                    let pred = points_of(&g.value(net.cloud(&ctx, d, a, &routes[i], norm)?));
                    Ok([
                        crate::metrics::chamfer_normalized(&pred, &train[i].target, n_points as f64)?,
                        crate::metrics::local_feature_distance(&pred, &train[i].target, cfg.anchors, cfg.neighbours)?,
                    ])
                })
                .collect();
            let mut mean = [0.0; 2];
            for l in losses {
                let l = l?;
                mean[0] += l[0] / first.len() as f64;
                mean[1] += l[1] / first.len() as f64;
            }
            mean.map(|m| m.max(1e-12).ln())
        }
    };
    for (id, v) in lambdas.iter().zip(init) {
        store.get_mut(*id).data_mut()[0] = v;
    }
    let mut adam = Adam::new(cfg.adam.clone());
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut last = f64::NAN;
    for epoch in 1..=epochs {
        let order = epoch_order(train.len(), base_seed, &format!("{name}-order"), epoch);
        let parts = train_epoch(store, &mut adam, &trainable, &order, cfg.batch_size, |ctx, i, inv| {
            let vat_seed = seed::derive(base_seed, &format!("{name}-vat"), (epoch as u64) << 32 | train[i].id);
            cloud_sample_loss(net, ctx, &train[i], &routes[i], norm, cfg, n_points, vat_seed, inv)
        })?;
        let frozen: &ParamStore = store;
        let scores: Vec<Result<f64, Error>> = val.par_iter().map(|r| chamfer(&predict(frozen, r)?, &r.target)).collect();
        let mut val_chamfer = 0.0;
        for s in scores {
            val_chamfer += s?;
        }
        val_chamfer /= val.len().max(1) as f64;
        last = val_chamfer;
        let lam = lambda_values(store, lambdas);
        log.rows.push(TrainingRow {
            model: name.into(),
            stage,
            epoch,
            split: "train".into(),
            loss: parts[0],
            l1: Some(parts[1]),
            l2: Some(parts[2]),
            vat: Some(parts[3]),
            lambda1: Some(lam[0]),
            lambda2: Some(lam[1]),
            ..Default::default()
        });
        log.rows.push(TrainingRow {
            model: name.into(),
            stage,
            epoch,
            split: "validation".into(),
            loss: val_chamfer,
            chamfer: Some(val_chamfer),
            ..Default::default()
        });
        log::info!("{name} epoch {epoch}: loss {:.5} l1 {:.3e} l2 {:.3} val chamfer {val_chamfer:.3e}", parts[0], parts[1], parts[2]);
        if best.as_ref().map_or(true, |(b, _, _)| val_chamfer < *b) {
            best = Some((val_chamfer, epoch, store.clone()));
        }
    }
    let best_epoch = match best {
        Some((_, e, s)) => {
            *store = s;
            e
        }
        None => 0,
    };
    Ok(StageSummary { model: name.into(), stage, epochs, converged: true, best_epoch, metric: last })
}

/// Stage 3: encoder 3, the point decoder and the loss weights, routed by
/// the frozen stages 1 and 2.
pub fn train_stage3(
    net: &MscrNet,
    store: &mut ParamStore,
    norm: &NormStats,
    train: &[Record],
    val: &[Record],
    cfg: &TrainConfig,
    base_seed: u64,
    log: &mut TrainingLog,
) -> Result<StageSummary, Error> {
    let labels = routing_labels(net, store, train, cfg.teacher_forcing)?;
    let frozen: &ParamStore = store;
    let routes: Vec<Route> = train
        .par_iter()
        .zip(&labels)
        .map(|(r, &l)| net.route(frozen, &r.input, l))
        .collect::<Result<_, _>>()?;
    let predict = |s: &ParamStore, r: &Record| Ok(net.predict(s, norm, &r.input)?.cloud);
    let n_points = net.config.n_points;
    train_cloud("mscr", 3, net, store, norm, train, &routes, val, predict, cfg.stage3_epochs, cfg, n_points, base_seed, log)
}

/// Single-stage baseline on the same objective.
pub fn train_crnet(
    net: &super::CrNet,
    store: &mut ParamStore,
    norm: &NormStats,
    train: &[Record],
    val: &[Record],
    cfg: &TrainConfig,
    base_seed: u64,
    log: &mut TrainingLog,
) -> Result<StageSummary, Error> {
    let routes = vec![Route { label: SceneLabel::Single, centers: [0.0; 6] }; train.len()];
    let predict = |s: &ParamStore, r: &Record| net.predict(s, norm, &r.input);
    let n_points = net.config.n_points;
    train_cloud("crnet", 3, net, store, norm, train, &routes, val, predict, cfg.crnet_epochs, cfg, n_points, base_seed, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_relative_to_mean() {
        assert!((relative_spread(&[1.0, 1.02, 0.99]) - 0.03 / (3.01 / 3.0)).abs() < 1e-12);
        assert_eq!(relative_spread(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn log_header_matches_columns() {
        let mut log = TrainingLog::default();
        log.rows.push(TrainingRow { model: "m".into(), stage: 1, epoch: 2, split: "train".into(), loss: 0.5, ..Default::default() });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}
