use isac_recon::model::uncertainty_weighted;
use isac_recon::numkit::{Adam, AdamConfig, Ctx, Graph, ParamStore, Tensor};

/// Optimises both log-variances of the weighted objective with the losses
/// held at `values`, starting from zero.
pub fn fit_lambdas(values: [f64; 2], steps: usize) -> [f64; 2] {
    let mut store = ParamStore::new();
    let ids = [store.add("l1", Tensor::scalar(0.0)), store.add("l2", Tensor::scalar(0.0))];
    let mut adam = Adam::new(AdamConfig { lr: 0.05, weight_decay: 0.0, ..AdamConfig::default() });
    for _ in 0..steps {
        let grads = {
            let g = Graph::new();
            let ctx = Ctx::new(&g, &store, ids);
            let losses = values.map(|v| g.constant(Tensor::scalar(v)));
            let total = uncertainty_weighted(&g, losses, ids.map(|id| ctx.p(id))).unwrap();
            ctx.backward(total).unwrap()
        };
        adam.step(&mut store, &grads, &ids).unwrap();
        adam.config.lr = (adam.config.lr * 0.998).max(1e-5);
    }
    ids.map(|id| store.get(id).item())
}
