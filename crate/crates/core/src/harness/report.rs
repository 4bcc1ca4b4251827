use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::BenchReport;
use super::eval::{EvalRow, Method, Stat};
use crate::config::RunConfig;
use crate::geometry::{centroid, PointCloud};
use crate::io::{read_xyz, write_json, write_xyz};
use crate::metrics::{evaluate, MetricReport};
use crate::prep::prepare;
use crate::Error;

fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(EvalRow::HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("{}: malformed row {l:?}", path.display()));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(EvalRow {
                sample_id: f[0].parse().map_err(|_| bad())?,
                chamfer: num(1)?,
                fscore: num(2)?,
                precision: num(3)?,
                recall: num(4)?,
                center_mse: num(5)?,
                local_feature: num(6)?,
                threshold: num(7)?,
            })
        })
        .collect()
}

/// Long-format metric table and a markdown comparison from the evaluation
/// outputs in `run_dir`. Returns the markdown text.
pub fn cmd_report(run_dir: &Path, out: &Path) -> Result<String, Error> {
    let mut long = String::from("method,sample_id,chamfer,fscore,precision,recall,center_mse,local_feature\n");
    let bench: Option<BenchReport> = match std::fs::read_to_string(run_dir.join("bench.json")) {
        Ok(t) => Some(serde_json::from_str(&t)?),
        Err(_) => None,
    };
    let mut md = String::from("| Method | CD mean | CD IQR | F-Score | Precision | Recall | Latency (ms) |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    let mut found = 0;
    for m in Method::ALL {
        let path = run_dir.join(format!("eval_{}.csv", m.as_str()));
        if !path.exists() {
            continue;
        }
        found += 1;
        let rows = read_eval_csv(&path)?;
        if rows.is_empty() {
            return Err(Error::Format(format!("{} has no rows", path.display())));
        }
        for r in &rows {
            writeln!(
                long,
                "{},{},{},{},{},{},{},{}",
                m.as_str(),
                r.sample_id,
                r.chamfer,
                r.fscore,
                r.precision,
                r.recall,
                r.center_mse,
                r.local_feature
            )
            .expect("string write");
        }
        let stat = |f: fn(&EvalRow) -> f64| Stat::of(&rows.iter().map(f).collect::<Vec<_>>());
        let cd = stat(|r| r.chamfer);
        let latency = match (&bench, m) {
            (Some(b), Method::Mscr) => format!("{:.2}", b.latency_median_ms),
            _ => "-".into(),
        };
        writeln!(
            md,
            "| {} | {:.4e} | {:.4e} | {:.4} | {:.4} | {:.4} | {} |",
            m.as_str(),
            cd.mean,
            cd.iqr,
            stat(|r| r.fscore).mean,
            stat(|r| r.precision).mean,
            stat(|r| r.recall).mean,
            latency
        )
        .expect("string write");
    }
    if found == 0 {
        return Err(Error::Config(format!("no evaluation CSVs found in {}", run_dir.display())));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("metrics_long.csv"), long)?;
    std::fs::write(out.join("summary.md"), &md)?;
    Ok(md)
}

/// Score a predicted point list against a ground-truth one.
pub fn cmd_metrics(pred: &Path, gt: &Path, threshold: f64, out: &Path) -> Result<MetricReport, Error> {
    let p = read_xyz(pred)?;
    let g = read_xyz(gt)?;
    let (cp, cg) = (centroid(&p), centroid(&g));
    let report = evaluate(&p, &g, &[cp], &[cg], threshold)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub config_hash: String,
    pub input_points: usize,
    pub output_points: usize,
    pub yaw: f64,
}

/// Run the preparation chain on a raw point list.
pub fn cmd_prep(cfg: &RunConfig, input: &Path, out: &Path) -> Result<PrepReport, Error> {
    cfg.prep.validate()?;
    let raw = PointCloud::new(read_xyz(input)?);
    let prepared = prepare(&raw, &cfg.prep, cfg.seed)?
        .ok_or_else(|| Error::Config(format!("no points of {} survive the crop", input.display())))?;
    std::fs::create_dir_all(out)?;
    write_xyz(&out.join("prepared.xyz"), &prepared.cloud.points)?;
    let report = PrepReport {
        config_hash: cfg.hash(),
        input_points: raw.len(),
        output_points: prepared.cloud.len(),
        yaw: prepared.yaw,
    };
    write_json(&out.join("prep.json"), &report)?;
    Ok(report)
}
