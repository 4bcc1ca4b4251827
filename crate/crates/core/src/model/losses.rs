use crate::geometry::Point3;
use crate::metrics::{local_feature_terms, nearest_all};
use crate::numkit::{Graph, Tensor, Var};
use crate::scene::SceneLabel;
use crate::Error;

use super::net::points_of;

/// Negative log-likelihood of `label` under `[1, 2]` logits.
pub fn cross_entropy(g: &Graph, logits: Var, label: SceneLabel) -> Result<Var, Error> {
    let lp = g.reshape(g.log_softmax(logits), &[2, 1])?;
    let picked = g.gather_rows(lp, &[label.class()])?;
    Ok(g.scale(g.sum(picked), -1.0))
}

/// Mean squared error between x-sorted predicted slots `[1, 6]` and the
/// x-sorted target slots.
pub fn center_loss(g: &Graph, pred: Var, target: &[Point3; 2]) -> Result<Var, Error> {
    let slots = g.reshape(pred, &[2, 3])?;
    let order = {
        let v = g.value(slots);
        if v.data()[3] < v.data()[0] {
            [1, 0]
        } else {
            [0, 1]
        }
    };
    let sorted = g.gather_rows(slots, &order)?;
    let t = g.constant(Tensor::new(&[2, 3], target.iter().flatten().copied().collect())?);
    let d = g.sub(sorted, t)?;
    Ok(g.scale(g.sum(g.mul(d, d)?), 0.5))
}

fn unit(d: Point3) -> Point3 {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > 0.0 {
        [d[0] / n, d[1] / n, d[2] / n]
    } else {
        [0.0; 3]
    }
}

/// Normalised Chamfer distance of predicted `[n, 3]` points against a fixed
/// target, with its analytic subgradient.
pub fn chamfer_loss(g: &Graph, pred: Var, target: &[Point3], n: f64) -> Result<Var, Error> {
    let p = points_of(&g.value(pred));
    if p.is_empty() || target.is_empty() {
        return Err(Error::Contract("chamfer of an empty cloud".into()));
    }
    let mut jac = vec![0.0; 3 * p.len()];
    // Same summation order as `metrics::chamfer_normalized`.
    let (mut sp, mut sq) = (0.0, 0.0);
    let wp = 1.0 / (p.len() as f64 * n);
    for (i, (j, d2)) in nearest_all(&p, target).into_iter().enumerate() {
        sp += d2.sqrt();
        let u = unit([p[i][0] - target[j][0], p[i][1] - target[j][1], p[i][2] - target[j][2]]);
        for a in 0..3 {
            jac[3 * i + a] += wp * u[a];
        }
    }
    let wq = 1.0 / (target.len() as f64 * n);
    for (j, (i, d2)) in nearest_all(target, &p).into_iter().enumerate() {
        sq += d2.sqrt();
        let u = unit([p[i][0] - target[j][0], p[i][1] - target[j][1], p[i][2] - target[j][2]]);
        for a in 0..3 {
            jac[3 * i + a] += wq * u[a];
        }
    }
    let value = (sp / p.len() as f64 + sq / target.len() as f64) / n;
    let shape = g.shape(pred);
    Ok(g.precomputed_scalar(pred, value, Tensor::new(&shape, jac)?)?)
}

/// `Σᵢ exp(−λᵢ) Lᵢ + λᵢ` over `[1]`-shaped losses and log-variances.
pub fn uncertainty_weighted(g: &Graph, losses: [Var; 2], lambdas: [Var; 2]) -> Result<Var, Error> {
    let t1 = g.mul(g.exp(g.scale(lambdas[0], -1.0)), losses[0])?;
    let t2 = g.mul(g.exp(g.scale(lambdas[1], -1.0)), losses[1])?;
    Ok(g.add(g.add(t1, t2)?, g.add(lambdas[0], lambdas[1])?)?)
}

/// Local-feature distance of predicted points against a fixed target.
/// Neighbourhood membership and anchor matching are held fixed.
pub fn local_feature_loss(g: &Graph, pred: Var, target: &[Point3], anchors: usize, nn: usize) -> Result<Var, Error> {
    let p = points_of(&g.value(pred));
    let terms = local_feature_terms(&p, target, anchors, nn)?;
    let mut jac = vec![0.0; 3 * p.len()];
    let k = terms.anchors.len() as f64;
    for t in &terms.anchors {
        let u = unit(t.diff);
        let w = 1.0 / (k * t.pred_neighbours.len() as f64);
        for &i in &t.pred_neighbours {
            for a in 0..3 {
                jac[3 * i + a] += w * u[a];
            }
        }
    }
    let shape = g.shape(pred);
    Ok(g.precomputed_scalar(pred, terms.value, Tensor::new(&shape, jac)?)?)
}
