use rand::Rng;

use super::graph::Var;
use super::params::{Ctx, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NumError;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
        let b = store.add_uniform(format!("{name}.b"), &[fan_out], fan_in, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Result<Var, NumError> {
        let g = ctx.graph;
        let y = g.matmul(x, ctx.p(self.w))?;
        g.add_bias(y, ctx.p(self.b))
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[dim]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Result<Var, NumError> {
        ctx.graph.layer_norm(x, ctx.p(self.gamma), ctx.p(self.beta))
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, ctx: &Ctx, mut x: Var) -> Result<Var, NumError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            if i + 1 < self.layers.len() {
                x = ctx.graph.relu(x);
            }
        }
        Ok(x)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, NumError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NumError::Config(format!("model dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params() + self.key.num_params() + self.value.num_params() + self.output.num_params()
    }
}

/// Multi-head scaled dot-product self-attention over `[batch, seq, dim]`
/// (or `[seq, dim]`), output-projected. Residual and normalisation are left
/// to the caller.
pub fn multi_head_attention(ctx: &Ctx, x: Var, params: &AttentionParams) -> Result<Var, NumError> {
    let g = ctx.graph;
    let shape = g.shape(x);
    let (batch, seq, dim) = match shape.as_slice() {
        [s, d] => (1, *s, *d),
        [b, s, d] => (*b, *s, *d),
        _ => return Err(NumError::Dimension { op: "multi_head_attention", detail: format!("input {shape:?}") }),
    };
    let heads = params.heads;
    if dim != params.dim || dim % heads != 0 {
        return Err(NumError::Config(format!(
            "attention configured for dim {} / {} heads, input has dim {dim}",
            params.dim, heads
        )));
    }
    let dh = dim / heads;
    let split = |v: Var| -> Result<Var, NumError> {
        let v = g.reshape(v, &[batch, seq, heads, dh])?;
        let v = g.permute_0213(v)?;
        g.reshape(v, &[batch * heads, seq, dh])
    };
    let q = split(params.query.forward(ctx, x)?)?;
    let k = split(params.key.forward(ctx, x)?)?;
    let v = split(params.value.forward(ctx, x)?)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx_v = g.bmm(attn, v, false)?;
    let merged = g.reshape(ctx_v, &[batch, heads, seq, dh])?;
    let merged = g.permute_0213(merged)?;
    let merged = g.reshape(merged, &shape)?;
    params.output.forward(ctx, merged)
}

/// Post-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attention: AttentionParams,
    pub norm1: LayerNorm,
    pub ff: Mlp,
    pub norm2: LayerNorm,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut impl Rng) -> Result<Self, NumError> {
        Ok(Self {
            attention: AttentionParams::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff: Mlp::new(store, &format!("{name}.ff"), &[dim, ff_dim, dim], rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        })
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Result<Var, NumError> {
        let g = ctx.graph;
        let a = multi_head_attention(ctx, x, &self.attention)?;
        let h = self.norm1.forward(ctx, g.add(x, a)?)?;
        let f = self.ff.forward(ctx, h)?;
        self.norm2.forward(ctx, g.add(h, f)?)
    }

    pub fn num_params(&self) -> usize {
        self.attention.num_params() + self.norm1.num_params() + self.ff.num_params() + self.norm2.num_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(AttentionParams::new(&mut store, "a", 10, 4, &mut rng), Err(NumError::Config(_))));
    }

    #[test]
    fn single_token_attention_is_projected_value() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = AttentionParams::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        let x = random(&[1, 8], &mut rng);
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, &store);
        let xv = g.constant(x);
        let out = multi_head_attention(&ctx, xv, &params).unwrap();
        let v = params.value.forward(&ctx, xv).unwrap();
        let expected = params.output.forward(&ctx, v).unwrap();
        for (a, b) in g.value(out).data().iter().zip(g.value(expected).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentionParams::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        let row = random(&[8], &mut rng);
        let data: Vec<f64> = (0..5).flat_map(|_| row.data().to_vec()).collect();
        let g = Graph::new();
        let ctx = Ctx::frozen(&g, &store);
        let x = g.constant(Tensor::new(&[5, 8], data).unwrap());
        let out = multi_head_attention(&ctx, x, &params).unwrap();
        let out = g.value(out);
        for r in 1..5 {
            for (a, b) in out.row(r).iter().zip(out.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
