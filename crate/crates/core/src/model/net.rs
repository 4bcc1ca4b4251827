use rand::Rng;

use super::{EncodedInput, ModelConfig, NormStats};
use crate::geometry::Point3;
use crate::numkit::{Ctx, Graph, LayerNorm, Linear, Mlp, ParamId, ParamStore, Tensor, TransformerLayer, Var};
use crate::scene::SceneLabel;
use crate::seed;
use crate::Error;

/// Per-path stems, fusion, a transformer stack and mean pooling.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub distance: Mlp,
    pub angle: Mlp,
    pub fuse: Linear,
    pub layers: Vec<TransformerLayer>,
    pub out: Linear,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, Error> {
        let t = cfg.token_dim;
        Ok(Self {
            distance: Mlp::new(store, &format!("{name}.dist"), &[1, cfg.stem_hidden, t], rng),
            angle: Mlp::new(store, &format!("{name}.angle"), &[2, cfg.stem_hidden, t], rng),
            fuse: Linear::new(store, &format!("{name}.fuse"), 2 * t, t, rng),
            layers: (0..cfg.layers)
                .map(|i| TransformerLayer::new(store, &format!("{name}.layer{i}"), t, cfg.heads, cfg.ff_dim, rng))
                .collect::<Result<_, _>>()?,
            out: Linear::new(store, &format!("{name}.out"), t, cfg.feature_dim, rng),
        })
    }

    /// `[n, 1]` delays and `[n, 2]` angles to a `[1, feature_dim]` feature.
    pub fn forward(&self, ctx: &Ctx, delays: Var, angles: Var) -> Result<Var, Error> {
        let g = ctx.graph;
        let hd = g.relu(self.distance.forward(ctx, delays)?);
        let ha = g.relu(self.angle.forward(ctx, angles)?);
        let mut x = self.fuse.forward(ctx, g.concat(&[hd, ha], true)?)?;
        for layer in &self.layers {
            x = layer.forward(ctx, x)?;
        }
        let shape = g.shape(x);
        let pooled = g.mean_axis1(g.reshape(x, &[1, shape[0], shape[1]])?)?;
        Ok(self.out.forward(ctx, pooled)?)
    }

    pub fn num_params(&self) -> usize {
        self.distance.num_params()
            + self.angle.num_params()
            + self.fuse.num_params()
            + self.layers.iter().map(TransformerLayer::num_params).sum::<usize>()
            + self.out.num_params()
    }
}

#[derive(Clone, Debug)]
pub struct SceneDecoder {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SceneDecoder {
    pub fn forward(&self, ctx: &Ctx, feat: Var) -> Result<Var, Error> {
        let h = self.norm.forward(ctx, feat)?;
        let h = ctx.graph.relu(self.fc1.forward(ctx, h)?);
        Ok(self.fc2.forward(ctx, h)?)
    }

    pub fn num_params(&self) -> usize {
        self.norm.num_params() + self.fc1.num_params() + self.fc2.num_params()
    }
}

/// Shared trunk, an extra block for mixed scenes, and a linear head emitting
/// per-point offsets from the two center slots.
#[derive(Clone, Debug)]
pub struct PointDecoder {
    pub trunk: Mlp,
    pub mixed: Vec<Linear>,
    pub head: Linear,
    pub n_points: usize,
}

impl PointDecoder {
    /// Normalised `[n_points, 3]` cloud. The first half is anchored at center
    /// slot 0, the rest at slot 1.
    pub fn forward(&self, ctx: &Ctx, feat: Var, centers: Var, label: SceneLabel) -> Result<Var, Error> {
        let g = ctx.graph;
        let mut h = g.relu(self.trunk.forward(ctx, g.concat(&[feat, centers], true)?)?);
        if label == SceneLabel::Mixed {
            for layer in &self.mixed {
                h = g.relu(layer.forward(ctx, h)?);
            }
        }
        let offsets = g.reshape(self.head.forward(ctx, h)?, &[self.n_points, 3])?;
        let slots = g.reshape(centers, &[2, 3])?;
        let idx: Vec<usize> = (0..self.n_points).map(|i| usize::from(i >= self.n_points / 2)).collect();
        Ok(g.add(offsets, g.gather_rows(slots, &idx)?)?)
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.mixed.iter().map(Linear::num_params).sum::<usize>() + self.head.num_params()
    }
}

/// Decoder routing for one sample: scene label and normalised center slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub label: SceneLabel,
    pub centers: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: SceneLabel,
    pub probabilities: [f64; 2],
    pub centers: [Point3; 2],
    pub cloud: Vec<Point3>,
}

/// Networks trained on the point-cloud objective.
pub trait CloudNet: Sync {
    /// Reconstructed cloud in metres, `[n_points, 3]`.
    fn cloud(&self, ctx: &Ctx, delays: Var, angles: Var, route: &Route, norm: &NormStats) -> Result<Var, Error>;
    fn lambdas(&self) -> [ParamId; 2];
    fn cloud_params(&self, store: &ParamStore) -> Vec<ParamId>;
}

pub(crate) fn input_vars(g: &Graph, input: &EncodedInput) -> (Var, Var) {
    (g.constant(input.delays.clone()), g.constant(input.angles.clone()))
}

pub(crate) fn denormalize(g: &Graph, u: Var, norm: &NormStats) -> Result<Var, Error> {
    let half = g.constant(Tensor::new(&[3], norm.half().to_vec())?);
    let mid = g.constant(Tensor::new(&[3], norm.mid().to_vec())?);
    Ok(g.add_bias(g.mul_bias(u, half)?, mid)?)
}

pub(crate) fn points_of(t: &Tensor) -> Vec<Point3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn lambda_pair(store: &mut ParamStore, prefix: &str) -> [ParamId; 2] {
    [
        store.add(format!("{prefix}.lambda1"), Tensor::zeros(&[1])),
        store.add(format!("{prefix}.lambda2"), Tensor::zeros(&[1])),
    ]
}

fn ids(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    store.ids().filter(|&id| prefixes.iter().any(|p| store.name(id).starts_with(p))).collect()
}

/// Three encoders feeding the scene, center and point decoders.
#[derive(Clone, Debug)]
pub struct MscrNet {
    pub config: ModelConfig,
    pub encoders: [Encoder; 3],
    pub scene: SceneDecoder,
    pub center_heads: [Linear; 2],
    pub point: PointDecoder,
    pub lambda: [ParamId; 2],
}

impl MscrNet {
    pub fn new(cfg: &ModelConfig, init_seed: u64) -> Result<(Self, ParamStore), Error> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(init_seed, "mscr-init", 0);
        let encoders = [
            Encoder::new(&mut store, "enc1", cfg, &mut rng)?,
            Encoder::new(&mut store, "enc2", cfg, &mut rng)?,
            Encoder::new(&mut store, "enc3", cfg, &mut rng)?,
        ];
        let f = cfg.feature_dim;
        let scene = SceneDecoder {
            norm: LayerNorm::new(&mut store, "scene.ln", f),
            fc1: Linear::new(&mut store, "scene.fc1", f, cfg.scene_hidden, &mut rng),
            fc2: Linear::new(&mut store, "scene.fc2", cfg.scene_hidden, 2, &mut rng),
        };
        let center_heads = [
            Linear::new(&mut store, "center.single", f, 6, &mut rng),
            Linear::new(&mut store, "center.mixed", f, 6, &mut rng),
        ];
        let h = cfg.point_hidden;
        let point = PointDecoder {
            trunk: Mlp::new(&mut store, "point.trunk", &[f + 6, h, h], &mut rng),
            mixed: (0..cfg.mixed_layers)
                .map(|i| Linear::new(&mut store, &format!("point.mixed{i}"), h, h, &mut rng))
                .collect(),
            head: Linear::new(&mut store, "point.head", h, 3 * cfg.n_points, &mut rng),
            n_points: cfg.n_points,
        };
        let lambda = lambda_pair(&mut store, "loss");
        Ok((Self { config: cfg.clone(), encoders, scene, center_heads, point, lambda }, store))
    }

    /// Trainable set of stage 1, 2 or 3.
    pub fn stage_params(&self, store: &ParamStore, stage: u8) -> Vec<ParamId> {
        match stage {
            1 => ids(store, &["enc1.", "scene."]),
            2 => ids(store, &["enc2.", "center."]),
            _ => ids(store, &["enc3.", "point.", "loss."]),
        }
    }

    pub fn num_params(&self) -> usize {
        self.encoders.iter().map(Encoder::num_params).sum::<usize>()
            + self.scene.num_params()
            + self.center_heads.iter().map(Linear::num_params).sum::<usize>()
            + self.point.num_params()
            + 2
    }

    pub fn decoder_params(&self) -> usize {
        self.scene.num_params() + self.center_heads.iter().map(Linear::num_params).sum::<usize>() + self.point.num_params()
    }

    pub fn scene_logits(&self, ctx: &Ctx, delays: Var, angles: Var) -> Result<Var, Error> {
        let f = self.encoders[0].forward(ctx, delays, angles)?;
        self.scene.forward(ctx, f)
    }

    /// Normalised center slots `[1, 6]`.
    pub fn centers(&self, ctx: &Ctx, delays: Var, angles: Var, label: SceneLabel) -> Result<Var, Error> {
        let f = self.encoders[1].forward(ctx, delays, angles)?;
        Ok(self.center_heads[label.class()].forward(ctx, f)?)
    }

    /// Stage 1 only: label and class probabilities.
    pub fn classify(&self, store: &ParamStore, input: &EncodedInput) -> Result<(SceneLabel, [f64; 2]), Error> {
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, store);
        let (d, a) = input_vars(&g, input);
        let logits = self.scene_logits(&ctx, d, a)?;
        let p = g.value(g.softmax(logits)).data().to_vec();
        let label = SceneLabel::from_class(usize::from(p[1] > p[0]));
        Ok((label, [p[0], p[1]]))
    }

    /// Stage 2 only: normalised center slots for a given label.
    pub fn route(&self, store: &ParamStore, input: &EncodedInput, label: SceneLabel) -> Result<Route, Error> {
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, store);
        let (d, a) = input_vars(&g, input);
        let c = self.centers(&ctx, d, a, label)?;
        let v = g.value(c);
        Ok(Route { label, centers: std::array::from_fn(|i| v.data()[i]) })
    }

    /// Full cascade: classify, locate centers, decode the cloud.
    pub fn predict(&self, store: &ParamStore, norm: &NormStats, input: &EncodedInput) -> Result<Prediction, Error> {
        let (label, probabilities) = self.classify(store, input)?;
        let route = self.route(store, input, label)?;
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, store);
        let (d, a) = input_vars(&g, input);
        let cloud = self.cloud(&ctx, d, a, &route, norm)?;
        let cloud = points_of(&g.value(cloud));
        let c = &route.centers;
        let centers = [
            norm.denormalize_point(&[c[0], c[1], c[2]]),
            norm.denormalize_point(&[c[3], c[4], c[5]]),
        ];
        Ok(Prediction { label, probabilities, centers, cloud })
    }
}

impl CloudNet for MscrNet {
    fn cloud(&self, ctx: &Ctx, delays: Var, angles: Var, route: &Route, norm: &NormStats) -> Result<Var, Error> {
        let g = ctx.graph;
        let f = self.encoders[2].forward(ctx, delays, angles)?;
        let centers = g.constant(Tensor::new(&[1, 6], route.centers.to_vec())?);
        let u = self.point.forward(ctx, f, centers, route.label)?;
        denormalize(g, u, norm)
    }

    fn lambdas(&self) -> [ParamId; 2] {
        self.lambda
    }

    fn cloud_params(&self, store: &ParamStore) -> Vec<ParamId> {
        self.stage_params(store, 3)
    }
}

/// Single encoder and a plain MLP decoder of comparable size.
#[derive(Clone, Debug)]
pub struct CrNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Mlp,
    pub lambda: [ParamId; 2],
}

impl CrNet {
    pub fn new(cfg: &ModelConfig, init_seed: u64) -> Result<(Self, ParamStore), Error> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(init_seed, "crnet-init", 0);
        let encoder = Encoder::new(&mut store, "crnet.enc", cfg, &mut rng)?;
        let mut widths = vec![cfg.feature_dim];
        widths.extend(std::iter::repeat(cfg.crnet_width).take(cfg.crnet_layers - 1));
        widths.push(3 * cfg.n_points);
        let decoder = Mlp::new(&mut store, "crnet.dec", &widths, &mut rng);
        let lambda = lambda_pair(&mut store, "crnet.loss");
        Ok((Self { config: cfg.clone(), encoder, decoder, lambda }, store))
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params() + 2
    }

    pub fn predict(&self, store: &ParamStore, norm: &NormStats, input: &EncodedInput) -> Result<Vec<Point3>, Error> {
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, store);
        let (d, a) = input_vars(&g, input);
        let route = Route { label: SceneLabel::Single, centers: [0.0; 6] };
        let cloud = self.cloud(&ctx, d, a, &route, norm)?;
        let pts = points_of(&g.value(cloud));
        Ok(pts)
    }
}

impl CloudNet for CrNet {
    fn cloud(&self, ctx: &Ctx, delays: Var, angles: Var, _route: &Route, norm: &NormStats) -> Result<Var, Error> {
        let g = ctx.graph;
        let f = self.encoder.forward(ctx, delays, angles)?;
        let u = g.reshape(self.decoder.forward(ctx, f)?, &[self.config.n_points, 3])?;
        denormalize(g, u, norm)
    }

    fn lambdas(&self) -> [ParamId; 2] {
        self.lambda
    }

    fn cloud_params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids().collect()
    }
}
