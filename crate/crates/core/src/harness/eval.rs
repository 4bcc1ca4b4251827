use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{crnet_base, stage_base};
use super::Dataset;
use crate::config::RunConfig;
use crate::geometry::{centroid, Point3};
use crate::io::{write_json, write_xyz, Sample};
use crate::metrics::evaluate;
use crate::model::{back_projection, load_crnet, load_mscr, prepare_records};
use crate::scene::SceneLabel;
use crate::seed;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mscr,
    Crnet,
    Backprojection,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mscr, Method::Crnet, Method::Backprojection];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mscr => "mscr",
            Method::Crnet => "crnet",
            Method::Backprojection => "backprojection",
        }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected mscr, crnet or backprojection)")))
    }
}

/// One reconstruction with the centers used for scoring.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub cloud: Vec<Point3>,
    pub centers: Vec<Point3>,
    pub label: Option<SceneLabel>,
}

/// Reconstruct every sample with `method`. Model checkpoints are read from
/// `models`.
pub fn reconstruct(cfg: &RunConfig, samples: &[Sample], models: &Path, method: Method) -> Result<Vec<Reconstruction>, Error> {
    let hash = cfg.hash();
    let n_points = cfg.model.n_points;
    let centroid_pair = |cloud: &[Point3]| {
        let c = centroid(cloud);
        vec![c, c]
    };
    match method {
        Method::Mscr => {
            let (net, store, meta) = load_mscr(&stage_base(models, 3), &cfg.model, &hash)?;
            let recs = prepare_records(samples, &meta.norm, cfg.model.n_paths)?;
            recs.par_iter()
                .map(|r| {
                    let p = net.predict(&store, &meta.norm, &r.input)?;
                    Ok(Reconstruction { cloud: p.cloud, centers: p.centers.to_vec(), label: Some(p.label) })
                })
                .collect()
        }
        Method::Crnet => {
            let (net, store, meta) = load_crnet(&crnet_base(models), &cfg.model, &hash)?;
            let recs = prepare_records(samples, &meta.norm, cfg.model.n_paths)?;
            recs.par_iter()
                .map(|r| {
                    let cloud = net.predict(&store, &meta.norm, &r.input)?;
                    Ok(Reconstruction { centers: centroid_pair(&cloud), cloud, label: None })
                })
                .collect()
        }
        Method::Backprojection => samples
            .par_iter()
            .map(|s| {
                let cloud = back_projection(&s.snapshot, n_points, cfg.prep.jitter, seed::derive(cfg.seed, "backprojection", s.id))?;
                Ok(Reconstruction { centers: centroid_pair(&cloud), cloud, label: None })
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: u64,
    pub chamfer: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub center_mse: f64,
    pub local_feature: f64,
    pub threshold: f64,
}

impl EvalRow {
    pub const HEADER: &'static str = "sample_id,chamfer,fscore,precision,recall,center_mse,local_feature,threshold";
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", EvalRow::HEADER)?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.sample_id, r.chamfer, r.fscore, r.precision, r.recall, r.center_mse, r.local_feature, r.threshold
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Summary statistics of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self { mean, std, median: quantile(&s, 0.5), iqr: quantile(&s, 0.75) - quantile(&s, 0.25) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub samples: usize,
    pub chamfer: Stat,
    pub fscore: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub center_mse: Stat,
    pub local_feature: Stat,
    /// Fraction of correctly predicted scene labels, when the method
    /// predicts them.
    pub label_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub threshold: f64,
    pub split: String,
    pub methods: Vec<MethodSummary>,
}

/// Score `method` on `samples`.
pub fn evaluate_method(
    cfg: &RunConfig,
    samples: &[Sample],
    models: &Path,
    method: Method,
    threshold: f64,
) -> Result<(Vec<EvalRow>, MethodSummary, Vec<Reconstruction>), Error> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let recon = reconstruct(cfg, samples, models, method)?;
    let rows: Vec<EvalRow> = samples
        .par_iter()
        .zip(&recon)
        .map(|(s, r)| {
            let m = evaluate(&r.cloud, &s.cloud.points, &r.centers, &s.centers, threshold)?;
            Ok(EvalRow {
                sample_id: s.id,
                chamfer: m.chamfer,
                fscore: m.fscore,
                precision: m.precision,
                recall: m.recall,
                center_mse: m.center_mse,
                local_feature: m.local_feature,
                threshold,
            })
        })
        .collect::<Result<_, Error>>()?;
    let col = |f: fn(&EvalRow) -> f64| Stat::of(&rows.iter().map(f).collect::<Vec<_>>());
    let label_accuracy = if recon.iter().all(|r| r.label.is_some()) {
        let ok = samples.iter().zip(&recon).filter(|(s, r)| r.label == Some(s.label)).count();
        Some(ok as f64 / samples.len() as f64)
    } else {
        None
    };
    let summary = MethodSummary {
        method,
        samples: rows.len(),
        chamfer: col(|r| r.chamfer),
        fscore: col(|r| r.fscore),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        center_mse: col(|r| r.center_mse),
        local_feature: col(|r| r.local_feature),
        label_accuracy,
    };
    Ok((rows, summary, recon))
}

/// Evaluate `methods` on the validation split, writing per-sample CSVs, a
/// summary JSON and showcase point lists into `out`.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, models: &Path, out: &Path, methods: &[Method]) -> Result<EvalSummary, Error> {
    cfg.validate()?;
    let ds = Dataset::load(data, cfg)?;
    let mut val = ds.validation;
    val.sort_by_key(|s| s.id);
    std::fs::create_dir_all(out)?;
    let show_dir = out.join("showcase");
    let n_show = cfg.eval.showcase.min(val.len());
    if n_show > 0 {
        std::fs::create_dir_all(&show_dir)?;
        for s in &val[..n_show] {
            write_xyz(&show_dir.join(format!("gt_{:06}.xyz", s.id)), &s.cloud.points)?;
        }
    }
    let threshold = cfg.eval.threshold;
    let mut summaries = Vec::new();
    for &m in methods {
        let (rows, summary, recon) = evaluate_method(cfg, &val, models, m, threshold)?;
        write_eval_csv(&out.join(format!("eval_{}.csv", m.as_str())), &rows)?;
        for (s, r) in val.iter().zip(&recon).take(n_show) {
            write_xyz(&show_dir.join(format!("{}_{:06}.xyz", m.as_str(), s.id)), &r.cloud)?;
        }
        log::info!("{}: chamfer {:.4e} fscore {:.3}", m.as_str(), summary.chamfer.mean, summary.fscore.mean);
        summaries.push(summary);
    }
    let summary = EvalSummary { config_hash: cfg.hash(), threshold, split: "validation".into(), methods: summaries };
    write_json(&out.join("eval_summary.json"), &summary)?;
    Ok(summary)
}
