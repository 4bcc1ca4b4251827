mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::tiny::{analytic_mscr_params, run_pipeline, tiny_config};
use isac_recon::harness::BenchReport;

/// Every file below `root` keyed by relative path, except timing-dependent
/// outputs.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel.ends_with("bench.json") || rel.starts_with("report") {
                continue;
            }
            out.insert(rel, std::fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn pipeline_is_byte_reproducible() {
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&cfg, a.path());
    run_pipeline(&cfg, b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    for name in ["data/manifest.json", "models/train_summary_all.json", "eval/eval_summary.json", "sequence/sequence.json"] {
        assert!(ta.contains_key(name), "missing {name}");
    }
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs between runs");
    }

    let bench: BenchReport = serde_json::from_slice(&std::fs::read(a.path().join("eval/bench.json")).unwrap()).unwrap();
    assert_eq!(bench.params_total, analytic_mscr_params(&cfg.model));
    assert!(bench.latency_median_ms > 0.0);
    let md = std::fs::read_to_string(a.path().join("report/summary.md")).unwrap();
    assert!(md.contains("mscr") && md.contains("backprojection"));
}
