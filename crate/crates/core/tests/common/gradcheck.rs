//! Central finite-difference checks of every layer and loss.
//!
//! Inputs are registered as parameters so one routine covers input and
//! weight gradients. The error of a check is
//! `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)` over a random subset of coordinates.

use isac_recon::geometry::Point3;
use isac_recon::model::{
    center_loss, chamfer_loss, cross_entropy, local_feature_loss, uncertainty_weighted, vat_perturbation, CloudNet,
    CrNet, EncodedInput, ModelConfig, MscrNet, NormStats, Route,
};
use isac_recon::numkit::{
    multi_head_attention, AttentionParams, Ctx, Graph, LayerNorm, Linear, Mlp, ParamId, ParamStore, Tensor,
    TransformerLayer, Var,
};
use isac_recon::scene::SceneLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 10;
pub const TOLERANCE: f64 = 1e-4;
const COORDS: usize = 24;

type Build<'a> = dyn Fn(&Ctx) -> Var + 'a;

pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Relative error of the analytic gradient of `build` with respect to
/// `trainable`, probed at up to `COORDS` coordinates.
pub fn check(store: &ParamStore, trainable: &[ParamId], rng: &mut impl Rng, build: &Build) -> f64 {
    let g = Graph::new();
    let ctx = Ctx::new(&g, store, trainable.iter().copied());
    ctx.bind_trainable();
    let loss = build(&ctx);
    let grads = ctx.backward(loss).unwrap();

    let mut coords: Vec<(ParamId, usize)> =
        trainable.iter().flat_map(|&id| (0..store.get(id).numel()).map(move |i| (id, i))).collect();
    if coords.len() > COORDS {
        coords = (0..COORDS).map(|_| coords[rng.gen_range(0..coords.len())]).collect();
    }
    let eval = |s: &ParamStore| {
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, s);
        let v = build(&ctx);
        let out = g.value(v).item();
        out
    };
    let (mut num, mut den_fd, mut den_an) = (0.0, 0.0, 0.0);
    for (id, i) in coords {
        let x = store.get(id).data()[i];
        let h = 1e-6 * x.abs().max(1.0);
        let mut s = store.clone();
        s.get_mut(id).data_mut()[i] = x + h;
        let fp = eval(&s);
        s.get_mut(id).data_mut()[i] = x - h;
        let fm = eval(&s);
        let fd = (fp - fm) / (2.0 * h);
        let an = grads.get(id).map_or(0.0, |t| t.data()[i]);
        num += (fd - an) * (fd - an);
        den_fd += fd * fd;
        den_an += an * an;
    }
    let den = den_fd.sqrt().max(den_an.sqrt());
    if den < 1e-12 {
        num.sqrt()
    } else {
        num.sqrt() / den
    }
}

/// Scalar read-out `Σ w ⊙ v` with fixed random weights.
fn project(g: &Graph, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(&g.shape(v), -1.0, 1.0, &mut rng));
    g.sum(g.mul(v, w).unwrap())
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        n_paths: 6,
        token_dim: 8,
        stem_hidden: 8,
        heads: 2,
        layers: 1,
        ff_dim: 8,
        feature_dim: 8,
        scene_hidden: 8,
        point_hidden: 8,
        mixed_layers: 2,
        n_points: 24,
        crnet_width: 8,
        crnet_layers: 3,
    }
}

pub fn small_norm() -> NormStats {
    NormStats { path_mean: [0.0; 3], path_std: [1.0; 3], point_min: [-3.0, -4.0, 0.0], point_max: [9.0, 4.0, 6.0] }
}

pub fn small_input(n: usize, rng: &mut impl Rng) -> EncodedInput {
    EncodedInput { delays: random(&[n, 1], -2.0, 2.0, rng), angles: random(&[n, 2], -2.0, 2.0, rng) }
}

fn cloud(n: usize, rng: &mut impl Rng) -> Vec<Point3> {
    (0..n).map(|_| [rng.gen_range(-3.0..9.0), rng.gen_range(-4.0..4.0), rng.gen_range(0.0..6.0)]).collect()
}

fn input_vars(g: &Graph, input: &EncodedInput) -> (Var, Var) {
    (g.constant(input.delays.clone()), g.constant(input.angles.clone()))
}

fn random_route(rng: &mut impl Rng) -> Route {
    let label = if rng.gen_bool(0.5) { SceneLabel::Single } else { SceneLabel::Mixed };
    Route { label, centers: std::array::from_fn(|_| rng.gen_range(-0.8..0.8)) }
}

fn with_input(store: &mut ParamStore, shape: &[usize], rng: &mut impl Rng) -> ParamId {
    store.add("x", random(shape, -1.5, 1.5, rng))
}

fn all(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

// ── layers ──────────────────────────────────────────────────────────────

fn linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let layer = Linear::new(&mut s, "l", 5, 4, &mut rng);
    let x = with_input(&mut s, &[3, 5], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, layer.forward(ctx, ctx.p(x)).unwrap(), seed))
}

fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = with_input(&mut s, &[4, 6], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, ctx.graph.relu(ctx.p(x)), seed))
}

fn mlp(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let net = Mlp::new(&mut s, "m", &[4, 7, 3], &mut rng);
    let x = with_input(&mut s, &[5, 4], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, net.forward(ctx, ctx.p(x)).unwrap(), seed))
}

fn layer_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 6);
    let x = with_input(&mut s, &[4, 6], &mut rng);
    // Move gamma/beta off their identity initialisation.
    for id in [ln.gamma, ln.beta] {
        *s.get_mut(id) = random(&[6], -1.0, 1.0, &mut rng);
    }
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, ln.forward(ctx, ctx.p(x)).unwrap(), seed))
}

fn softmax(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = with_input(&mut s, &[3, 5], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| {
        let g = ctx.graph;
        let a = g.softmax(ctx.p(x));
        let b = g.log_softmax(ctx.p(x));
        project(g, g.add(a, b).unwrap(), seed)
    })
}

fn elementwise(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", random(&[3, 4], 0.2, 1.5, &mut rng));
    let y = s.add("y", random(&[3, 4], -1.0, 1.0, &mut rng));
    let b = s.add("b", random(&[4], -1.0, 1.0, &mut rng));
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| {
        let g = ctx.graph;
        let (x, y, b) = (ctx.p(x), ctx.p(y), ctx.p(b));
        let t = g.add(g.exp(y), g.log(x)).unwrap();
        let t = g.add(t, g.mul(g.tanh(y), g.sqrt(x)).unwrap()).unwrap();
        let t = g.sub(t, g.mul_bias(y, b).unwrap()).unwrap();
        let t = g.add_scalar(g.scale(g.add_bias(t, b).unwrap(), 0.7), 0.3);
        let rows = g.gather_rows(t, &[2, 0, 2]).unwrap();
        let cat = g.concat(&[rows, x], false).unwrap();
        let m = g.mean_axis1(g.reshape(cat, &[2, 3, 4]).unwrap()).unwrap();
        let p = g.permute_0213(g.reshape(cat, &[2, 3, 2, 2]).unwrap()).unwrap();
        let tail = g.add(project(g, g.sum_last(m), seed), g.mean(p)).unwrap();
        let head = g.max(g.sum_last(cat)).unwrap();
        g.add(tail, head).unwrap()
    })
}

fn matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let a = s.add("a", random(&[2, 3, 4], -1.0, 1.0, &mut rng));
    let b = s.add("b", random(&[2, 5, 4], -1.0, 1.0, &mut rng));
    let w = s.add("w", random(&[3, 2], -1.0, 1.0, &mut rng));
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| {
        let g = ctx.graph;
        let ab = g.bmm(ctx.p(a), ctx.p(b), true).unwrap();
        let back = g.bmm(ab, ctx.p(b), false).unwrap();
        let flat = g.reshape(back, &[8, 3]).unwrap();
        project(g, g.matmul(flat, ctx.p(w)).unwrap(), seed)
    })
}

fn attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let params = AttentionParams::new(&mut s, "attn", 8, 2, &mut rng).unwrap();
    let x = with_input(&mut s, &[3, 8], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, multi_head_attention(ctx, ctx.p(x), &params).unwrap(), seed))
}

fn transformer(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let layer = TransformerLayer::new(&mut s, "t", 8, 2, 12, &mut rng).unwrap();
    let x = with_input(&mut s, &[4, 8], &mut rng);
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, layer.forward(ctx, ctx.p(x)).unwrap(), seed))
}

fn encoder(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, mut s) = MscrNet::new(&cfg, seed).unwrap();
    let d = s.add("in.d", random(&[cfg.n_paths, 1], -2.0, 2.0, &mut rng));
    let a = s.add("in.a", random(&[cfg.n_paths, 2], -2.0, 2.0, &mut rng));
    let mut ids: Vec<ParamId> = s.ids_with_prefix("enc3.").collect();
    ids.extend([d, a]);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, net.encoders[2].forward(ctx, ctx.p(d), ctx.p(a)).unwrap(), seed))
}

fn point_decoder(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, mut s) = MscrNet::new(&cfg, seed).unwrap();
    let f = s.add("in.f", random(&[1, cfg.feature_dim], -1.0, 1.0, &mut rng));
    let c = s.add("in.c", random(&[1, 6], -1.0, 1.0, &mut rng));
    let label = if seed % 2 == 0 { SceneLabel::Single } else { SceneLabel::Mixed };
    let mut ids: Vec<ParamId> = s.ids_with_prefix("point.").collect();
    ids.extend([f, c]);
    check(&s, &ids, &mut rng, &|ctx| project(ctx.graph, net.point.forward(ctx, ctx.p(f), ctx.p(c), label).unwrap(), seed))
}

fn crnet_cloud(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, s) = CrNet::new(&cfg, seed).unwrap();
    let input = small_input(cfg.n_paths, &mut rng);
    let norm = small_norm();
    let route = random_route(&mut rng);
    let ids: Vec<ParamId> = s.ids().filter(|&id| !s.name(id).contains(".loss.")).collect();
    check(&s, &ids, &mut rng, &|ctx| {
        let (d, a) = input_vars(ctx.graph, &input);
        project(ctx.graph, net.cloud(ctx, d, a, &route, &norm).unwrap(), seed)
    })
}

// ── losses ──────────────────────────────────────────────────────────────

/// Scene cross-entropy through encoder 1 and the scene decoder.
fn scene_loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, s) = MscrNet::new(&cfg, seed).unwrap();
    let input = small_input(cfg.n_paths, &mut rng);
    let label = if rng.gen_bool(0.5) { SceneLabel::Single } else { SceneLabel::Mixed };
    let ids = net.stage_params(&s, 1);
    check(&s, &ids, &mut rng, &|ctx| {
        let (d, a) = input_vars(ctx.graph, &input);
        cross_entropy(ctx.graph, net.scene_logits(ctx, d, a).unwrap(), label).unwrap()
    })
}

/// Center loss through encoder 2 and the routed head.
fn center(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, s) = MscrNet::new(&cfg, seed).unwrap();
    let input = small_input(cfg.n_paths, &mut rng);
    let route = random_route(&mut rng);
    let mut gt: [Point3; 2] = [[0.0; 3]; 2];
    for c in gt.iter_mut() {
        *c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    }
    gt.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let ids = net.stage_params(&s, 2);
    check(&s, &ids, &mut rng, &|ctx| {
        let (d, a) = input_vars(ctx.graph, &input);
        center_loss(ctx.graph, net.centers(ctx, d, a, route.label).unwrap(), &gt).unwrap()
    })
}

fn chamfer(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = cloud(40, &mut rng);
    let mut s = ParamStore::new();
    let pts = cloud(30, &mut rng);
    let x = s.add("x", Tensor::new(&[30, 3], pts.iter().flatten().copied().collect()).unwrap());
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| chamfer_loss(ctx.graph, ctx.p(x), &target, 30.0).unwrap())
}

fn local_feature(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = cloud(50, &mut rng);
    let mut s = ParamStore::new();
    let pts = cloud(40, &mut rng);
    let x = s.add("x", Tensor::new(&[40, 3], pts.iter().flatten().copied().collect()).unwrap());
    let ids = all(&s);
    check(&s, &ids, &mut rng, &|ctx| local_feature_loss(ctx.graph, ctx.p(x), &target, 5, 6).unwrap())
}

/// Uncertainty-weighted Chamfer and local-feature objective through the
/// third encoder, the point decoder and the log-variances.
fn weighted(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, mut s) = MscrNet::new(&cfg, seed).unwrap();
    for id in net.lambda {
        s.get_mut(id).data_mut()[0] = rng.gen_range(-2.0..2.0);
    }
    let input = small_input(cfg.n_paths, &mut rng);
    let norm = small_norm();
    let route = random_route(&mut rng);
    let target = cloud(cfg.n_points, &mut rng);
    let ids = net.cloud_params(&s);
    check(&s, &ids, &mut rng, &|ctx| {
        let g = ctx.graph;
        let (d, a) = input_vars(g, &input);
        let pred = net.cloud(ctx, d, a, &route, &norm).unwrap();
        let l1 = chamfer_loss(g, pred, &target, cfg.n_points as f64).unwrap();
        let l2 = local_feature_loss(g, pred, &target, 4, 5).unwrap();
        uncertainty_weighted(g, [l1, l2], net.lambda.map(|id| ctx.p(id))).unwrap()
    })
}

/// Adversarial smoothness term with the perturbation and clean output held
/// fixed.
fn vat(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model();
    let (net, s) = MscrNet::new(&cfg, seed).unwrap();
    let input = small_input(cfg.n_paths, &mut rng);
    let norm = small_norm();
    let route = random_route(&mut rng);
    let clean = net_cloud(&net, &s, &input, &route, &norm);
    let (rd, ra) = vat_perturbation(&net, &s, &input, &route, &norm, &clean, 0.5, 1e-6, seed).unwrap();
    let shifted = EncodedInput {
        delays: Tensor::new(&[cfg.n_paths, 1], input.delays.data().iter().zip(rd.data()).map(|(x, r)| x + r).collect()).unwrap(),
        angles: Tensor::new(&[cfg.n_paths, 2], input.angles.data().iter().zip(ra.data()).map(|(x, r)| x + r).collect()).unwrap(),
    };
    let ids = net.cloud_params(&s);
    check(&s, &ids, &mut rng, &|ctx| {
        let (d, a) = input_vars(ctx.graph, &shifted);
        let adv = net.cloud(ctx, d, a, &route, &norm).unwrap();
        chamfer_loss(ctx.graph, adv, &clean, cfg.n_points as f64).unwrap()
    })
}

pub fn net_cloud<N: CloudNet>(net: &N, s: &ParamStore, input: &EncodedInput, route: &Route, norm: &NormStats) -> Vec<Point3> {
    let g = Graph::new();
    let ctx = Ctx::frozen(&g, s);
    let (d, a) = input_vars(&g, input);
    let v = net.cloud(&ctx, d, a, route, norm).unwrap();
    let t = g.value(v);
    t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub struct Case {
    pub name: &'static str,
    pub run: fn(u64) -> f64,
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "linear", run: linear },
        Case { name: "relu", run: relu },
        Case { name: "mlp", run: mlp },
        Case { name: "layer_norm", run: layer_norm },
        Case { name: "softmax", run: softmax },
        Case { name: "elementwise", run: elementwise },
        Case { name: "matmul", run: matmul },
        Case { name: "attention", run: attention },
        Case { name: "transformer", run: transformer },
        Case { name: "encoder", run: encoder },
        Case { name: "point_decoder", run: point_decoder },
        Case { name: "crnet", run: crnet_cloud },
        Case { name: "scene_loss", run: scene_loss },
        Case { name: "center_loss", run: center },
        Case { name: "weighted_loss", run: weighted },
        Case { name: "chamfer", run: chamfer },
        Case { name: "local_feature", run: local_feature },
        Case { name: "vat", run: vat },
    ]
}

/// Worst error of a case over `POINTS` random draws.
pub fn worst(case: &Case) -> f64 {
    (0..POINTS as u64).map(|i| (case.run)(1000 + i)).fold(0.0, f64::max)
}
