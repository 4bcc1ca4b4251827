mod common;

use common::tiny::{analytic_mscr_params, tiny_config};
use isac_recon::geometry::{Point3, PointCloud};
use isac_recon::io::Sample;
use isac_recon::model::{
    load_mscr, prepare_records, save_model, train_stage1, train_stage2, train_stage3, CheckpointMeta, CrNet, ModelKind,
    MscrNet, NormStats, Record, TrainingLog,
};
use isac_recon::numkit::{Ctx, Graph, ParamId, ParamStore, Tensor};
use isac_recon::sage::{ChannelSnapshot, PathComponent};
use isac_recon::scene::SceneLabel;
use isac_recon::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blob(rng: &mut impl Rng, c: Point3, n: usize) -> Vec<Point3> {
    (0..n).map(|_| [c[0] + rng.gen_range(-1.0..1.0), c[1] + rng.gen_range(-1.0..1.0), c[2] + rng.gen_range(0.0..2.0)]).collect()
}

/// Hand-built samples whose delays loosely track the scene depth.
fn synthetic_samples(n: usize, n_paths: usize, n_points: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { SceneLabel::Single } else { SceneLabel::Mixed };
            let mut centers = vec![[rng.gen_range(6.0..10.0), rng.gen_range(-3.0..3.0), 1.0]];
            if label == SceneLabel::Mixed {
                centers.push([rng.gen_range(14.0..20.0), rng.gen_range(-3.0..3.0), 1.0]);
            }
            let k = centers.len();
            let mut points = Vec::new();
            for (j, c) in centers.iter().enumerate() {
                points.extend(blob(&mut rng, *c, n_points / k + usize::from(j < n_points % k)));
            }
            let components = (0..n_paths)
                .map(|p| {
                    let c = centers[p % k];
                    PathComponent {
                        delay: 2.0 * c[0] / 3e8 + rng.gen_range(0.0..5e-9),
                        azimuth: (c[1] / c[0]).atan() + rng.gen_range(-0.05..0.05),
                        elevation: rng.gen_range(-0.1..0.3),
                        power_db: -40.0 - p as f64,
                    }
                })
                .collect();
            Sample { id: i as u64, label, centers, cloud: PointCloud::new(points), snapshot: ChannelSnapshot { components } }
        })
        .collect()
}

struct Fixture {
    net: MscrNet,
    store: ParamStore,
    norm: NormStats,
    train: Vec<Record>,
    val: Vec<Record>,
}

fn fixture() -> Fixture {
    let cfg = tiny_config().model;
    let samples = synthetic_samples(16, cfg.n_paths, cfg.n_points, 4);
    let norm = NormStats::fit(&samples[..12]).unwrap();
    let train = prepare_records(&samples[..12], &norm, cfg.n_paths).unwrap();
    let val = prepare_records(&samples[12..], &norm, cfg.n_paths).unwrap();
    let (net, store) = MscrNet::new(&cfg, 3).unwrap();
    Fixture { net, store, norm, train, val }
}

fn snapshot(store: &ParamStore, ids: &[ParamId]) -> Vec<Vec<u64>> {
    ids.iter().map(|&id| store.get(id).data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn parameter_count_matches_the_shape_sum() {
    let cfg = tiny_config().model;
    let (net, store) = MscrNet::new(&cfg, 0).unwrap();
    assert_eq!(store.numel(), analytic_mscr_params(&cfg));
    assert_eq!(net.num_params(), analytic_mscr_params(&cfg));
    let default = isac_recon::model::ModelConfig::default();
    let (net, store) = MscrNet::new(&default, 0).unwrap();
    assert_eq!(store.numel(), analytic_mscr_params(&default));
    assert_eq!(net.num_params(), store.numel());
    let (crnet, store) = CrNet::new(&default, 0).unwrap();
    assert_eq!(crnet.num_params(), store.numel());
}

#[test]
fn encoder_ignores_path_order() {
    let f = fixture();
    let input = &f.train[1].input;
    let n = input.delays.shape()[0];
    let perm: Vec<usize> = (0..n).rev().collect();
    let permuted = |t: &Tensor, w: usize| {
        let d = t.data();
        Tensor::new(t.shape(), perm.iter().flat_map(|&i| d[i * w..(i + 1) * w].to_vec()).collect()).unwrap()
    };
    let feature = |d: Tensor, a: Tensor| {
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, &f.store);
        let out = f.net.encoders[0].forward(&ctx, g.constant(d), g.constant(a)).unwrap();
        let v = g.value(out).data().to_vec();
        v
    };
    let a = feature(input.delays.clone(), input.angles.clone());
    let b = feature(permuted(&input.delays, 1), permuted(&input.angles, 2));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn mixed_layers_are_used_only_for_mixed_scenes() {
    let f = fixture();
    let mixed: Vec<ParamId> = f.store.ids_with_prefix("point.mixed").collect();
    assert!(!mixed.is_empty());
    let touched = |label: SceneLabel| {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &f.store, f.store.ids());
        ctx.bind_trainable();
        let input = &f.train[0].input;
        let feat = f.net.encoders[2].forward(&ctx, g.constant(input.delays.clone()), g.constant(input.angles.clone())).unwrap();
        let centers = g.constant(Tensor::new(&[1, 6], vec![0.1, 0.2, 0.0, 0.5, -0.1, 0.1]).unwrap());
        let out = f.net.point.forward(&ctx, feat, centers, label).unwrap();
        let grads = ctx.backward(g.sum(out)).unwrap();
        mixed.iter().any(|&id| grads.get(id).is_some_and(|t| t.data().iter().any(|v| *v != 0.0)))
    };
    assert!(!touched(SceneLabel::Single));
    assert!(touched(SceneLabel::Mixed));
}

#[test]
fn later_stages_leave_earlier_parameters_bitwise_unchanged() {
    let mut f = fixture();
    let mut cfg = tiny_config().train;
    cfg.stage3_epochs = 1;
    let mut log = TrainingLog::default();
    let s1 = f.net.stage_params(&f.store, 1);
    let s2 = f.net.stage_params(&f.store, 2);
    let s3 = f.net.stage_params(&f.store, 3);
    let init3 = snapshot(&f.store, &s3);
    train_stage1(&f.net, &mut f.store, &f.train, &f.val, &cfg, 1, &mut log).unwrap();
    let after1 = snapshot(&f.store, &s1);
    let pristine2 = snapshot(&f.store, &s2);
    train_stage2(&f.net, &mut f.store, &f.train, &f.val, &cfg, 2, &mut log).unwrap();
    assert_eq!(snapshot(&f.store, &s1), after1);
    let after2 = snapshot(&f.store, &s2);
    assert_ne!(after2, pristine2, "stage 2 should move its own parameters");
    assert_eq!(snapshot(&f.store, &s3), init3);
    train_stage3(&f.net, &mut f.store, &f.norm, &f.train, &f.val, &cfg, 3, &mut log).unwrap();
    assert_eq!(snapshot(&f.store, &s1), after1);
    assert_eq!(snapshot(&f.store, &s2), after2);
    assert_ne!(snapshot(&f.store, &s3), init3, "stage 3 should move its own parameters");
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut f = fixture();
        let cfg = tiny_config().train;
        let mut log = TrainingLog::default();
        train_stage1(&f.net, &mut f.store, &f.train, &f.val, &cfg, 9, &mut log).unwrap();
        train_stage2(&f.net, &mut f.store, &f.train, &f.val, &cfg, 10, &mut log).unwrap();
        let all: Vec<ParamId> = f.store.ids().collect();
        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        (snapshot(&f.store, &all), csv)
    };
    assert_eq!(run(), run());
}

#[test]
fn stage_three_rejects_wrong_target_size() {
    let mut f = fixture();
    f.train[0].target.pop();
    let cfg = tiny_config().train;
    let err = train_stage3(&f.net, &mut f.store, &f.norm, &f.train, &f.val, &cfg, 3, &mut TrainingLog::default());
    assert!(matches!(err, Err(Error::Contract(_))), "{err:?}");
}

#[test]
fn checkpoints_roundtrip_and_reject_foreign_configs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("m");
    let meta = CheckpointMeta {
        kind: ModelKind::Mscr,
        stage: 3,
        epoch: 4,
        converged: true,
        config_hash: "abc".into(),
        norm: f.norm.clone(),
        lambda: [0.25, -1.5],
    };
    save_model(&base, &f.store, &meta).unwrap();
    let cfg = tiny_config().model;
    let (_, store, back) = load_mscr(&base, &cfg, "abc").unwrap();
    assert_eq!(back, meta);
    for ((na, a), (nb, b)) in f.store.named().zip(store.named()) {
        assert_eq!(na, nb);
        let rounded: Vec<f64> = a.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(rounded.as_slice(), b.data());
    }
    assert!(matches!(load_mscr(&base, &cfg, "other"), Err(Error::Config(_))));
    assert!(matches!(isac_recon::model::load_crnet(&base, &cfg, "abc"), Err(Error::Format(_))));
}

#[test]
fn norm_stats_survive_json_exactly() {
    let f = fixture();
    let text = serde_json::to_string(&f.norm).unwrap();
    let back: NormStats = serde_json::from_str(&text).unwrap();
    assert_eq!(back, f.norm);
    for (a, b) in back.path_std.iter().zip(&f.norm.path_std) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn inconsistent_configs_are_validation_errors() {
    let mut c = tiny_config();
    c.model.n_paths += 1;
    let e = c.validate().unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let mut c = tiny_config();
    c.train.neighbours = c.prep.m + 1;
    assert_eq!(c.validate().unwrap_err().exit_code(), 1);
    let mut c = tiny_config();
    c.model.heads = 3;
    assert_eq!(c.validate().unwrap_err().exit_code(), 1);
}
