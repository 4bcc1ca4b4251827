//! Reconstruction metrics: Chamfer distance, F-score, local-feature distance
//! and cluster-center error.
//!
//! Nearest-neighbour searches go through [`KdTree`]; the results are
//! bit-identical to a linear scan because ties resolve to the lowest index
//! and every sum runs in point-index order.

use serde::{Deserialize, Serialize};

use crate::geometry::{dist_sq, Point3};
use crate::kdtree::KdTree;
use crate::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ANCHORS: usize = 16;
pub const DEFAULT_NEIGHBOURS: usize = 50;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub center_mse: f64,
    pub local_feature: f64,
}

fn non_empty(op: &str, a: &[Point3], b: &[Point3]) -> Result<(), Error> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract(format!("{op}: empty point cloud ({} vs {} points)", a.len(), b.len())));
    }
    Ok(())
}

/// For each point of `from`, the index in `to` of its nearest neighbour and
/// the squared distance.
pub fn nearest_all(from: &[Point3], to: &[Point3]) -> Vec<(usize, f64)> {
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest(p).expect("non-empty target")).collect()
}

/// Sum of nearest-neighbour distances from `from` into `to`, in index order.
fn nn_distance_sum(from: &[Point3], to: &[Point3]) -> f64 {
    let mut s = 0.0;
    for (_, d2) in nearest_all(from, to) {
        s += d2.sqrt();
    }
    s
}

/// Bidirectional Chamfer term for one pair:
/// `(Σ_p min_q ‖p−q‖ / |P| + Σ_q min_p ‖q−p‖ / |Q|) / n`.
pub fn chamfer_normalized(p: &[Point3], q: &[Point3], n: f64) -> Result<f64, Error> {
    non_empty("chamfer", p, q)?;
    let a = nn_distance_sum(p, q) / p.len() as f64;
    let b = nn_distance_sum(q, p) / q.len() as f64;
    Ok((a + b) / n)
}

/// Chamfer distance with the point-count prefactor, `n = max(|P|, |Q|)`.
///
/// For the fixed-size clouds of the pipeline this is the per-sample value of
/// the training Chamfer loss.
pub fn chamfer(out: &[Point3], gt: &[Point3]) -> Result<f64, Error> {
    chamfer_normalized(out, gt, out.len().max(gt.len()) as f64)
}

/// `(fscore, precision, recall)` with a strict `< tr` neighbour test.
pub fn fscore(out: &[Point3], gt: &[Point3], tr: f64) -> Result<(f64, f64, f64), Error> {
    non_empty("fscore", out, gt)?;
    let hits = |from: &[Point3], to: &[Point3]| nearest_all(from, to).iter().filter(|(_, d2)| d2.sqrt() < tr).count();
    let precision = hits(out, gt) as f64 / out.len() as f64;
    let recall = hits(gt, out) as f64 / gt.len() as f64;
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok((f, precision, recall))
}

/// Farthest-point sampling starting from index 0; ties go to the lowest
/// index.
pub fn farthest_point_sample(points: &[Point3], k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut best: Vec<f64> = points.iter().map(|p| dist_sq(p, &points[0])).collect();
    while chosen.len() < k {
        let mut arg = 0;
        for (i, &d) in best.iter().enumerate() {
            if d > best[arg] {
                arg = i;
            }
        }
        chosen.push(arg);
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(dist_sq(p, &points[arg]));
        }
    }
    chosen
}

/// Neighbourhoods behind one local-feature evaluation.
#[derive(Clone, Debug)]
pub struct LocalFeatureTerms {
    pub value: f64,
    /// Per anchor: matched predicted index, predicted neighbourhood, target
    /// neighbourhood, and `μ(N^P) − μ(N^Q)`.
    pub anchors: Vec<AnchorTerm>,
}

#[derive(Clone, Debug)]
pub struct AnchorTerm {
    pub target_anchor: usize,
    pub matched: usize,
    pub pred_neighbours: Vec<usize>,
    pub target_neighbours: Vec<usize>,
    pub diff: Point3,
}

fn mean_of(points: &[Point3], idx: &[usize]) -> Point3 {
    let mut c = [0.0; 3];
    for &i in idx {
        for a in 0..3 {
            c[a] += points[i][a];
        }
    }
    let n = idx.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Local-feature distance with its neighbourhood bookkeeping.
///
/// Anchors are farthest-point samples of `gt`; each is matched to its nearest
/// point in `out`. Neighbourhoods hold the `nn` nearest points including the
/// centre point itself.
pub fn local_feature_terms(out: &[Point3], gt: &[Point3], anchors: usize, nn: usize) -> Result<LocalFeatureTerms, Error> {
    if out.len() < nn || gt.len() < nn || nn == 0 {
        return Err(Error::Contract(format!(
            "local feature distance needs at least {nn} points per cloud, got {} and {}",
            out.len(),
            gt.len()
        )));
    }
    if anchors == 0 {
        return Err(Error::Contract("local feature distance needs at least one anchor".into()));
    }
    let out_tree = KdTree::new(out);
    let gt_tree = KdTree::new(gt);
    let mut terms = Vec::new();
    let mut total = 0.0;
    for a in farthest_point_sample(gt, anchors) {
        let (matched, _) = out_tree.nearest(&gt[a]).expect("non-empty");
        let pn: Vec<usize> = out_tree.knn(&out[matched], nn).into_iter().map(|(i, _)| i).collect();
        let qn: Vec<usize> = gt_tree.knn(&gt[a], nn).into_iter().map(|(i, _)| i).collect();
        let mp = mean_of(out, &pn);
        let mq = mean_of(gt, &qn);
        let diff = [mp[0] - mq[0], mp[1] - mq[1], mp[2] - mq[2]];
        total += (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
        terms.push(AnchorTerm { target_anchor: a, matched, pred_neighbours: pn, target_neighbours: qn, diff });
    }
    Ok(LocalFeatureTerms { value: total / terms.len() as f64, anchors: terms })
}

pub fn local_feature_distance(out: &[Point3], gt: &[Point3], anchors: usize, nn: usize) -> Result<f64, Error> {
    Ok(local_feature_terms(out, gt, anchors, nn)?.value)
}

/// Two centers sorted by ascending x; a lone center is duplicated.
pub fn canonical_centers(c: &[Point3]) -> Result<[Point3; 2], Error> {
    let mut out = match c {
        [a] => [*a, *a],
        [a, b] => [*a, *b],
        _ => return Err(Error::Contract(format!("expected 1 or 2 cluster centers, got {}", c.len()))),
    };
    if out[1][0] < out[0][0] {
        out.swap(0, 1);
    }
    Ok(out)
}

/// Mean squared distance over the x-sorted, duplicate-padded center pairs.
pub fn center_error(pred: &[Point3], gt: &[Point3]) -> Result<f64, Error> {
    let p = canonical_centers(pred)?;
    let g = canonical_centers(gt)?;
    Ok((dist_sq(&p[0], &g[0]) + dist_sq(&p[1], &g[1])) / 2.0)
}

/// All metrics for one reconstruction.
pub fn evaluate(
    out: &[Point3],
    gt: &[Point3],
    pred_centers: &[Point3],
    gt_centers: &[Point3],
    tr: f64,
) -> Result<MetricReport, Error> {
    let (f, p, r) = fscore(out, gt, tr)?;
    let nn = DEFAULT_NEIGHBOURS.min(out.len()).min(gt.len());
    Ok(MetricReport {
        chamfer: chamfer(out, gt)?,
        fscore: f,
        precision: p,
        recall: r,
        center_mse: center_error(pred_centers, gt_centers)?,
        local_feature: local_feature_distance(out, gt, DEFAULT_ANCHORS, nn)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_chamfer() {
        let v = chamfer(&[[0.0, 0.0, 0.0]], &[[3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(v, 10.0);
    }

    #[test]
    fn fscore_hand_case() {
        let (f, p, r) = fscore(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]], 0.5).unwrap();
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fscore_threshold_is_strict() {
        let (f, _, _) = fscore(&[[0.5, 0.0, 0.0]], &[[0.0; 3]], 0.5).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn center_error_hand_case() {
        let e = center_error(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3], [1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(e, 0.5);
        let swapped = center_error(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[1.0, 1.0, 0.0], [0.0; 3]]).unwrap();
        assert_eq!(swapped, 0.5);
    }

    #[test]
    fn single_center_is_duplicated() {
        assert_eq!(center_error(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]]).unwrap(), 0.0);
    }

    #[test]
    fn empty_clouds_are_rejected() {
        assert!(matches!(chamfer(&[], &[[0.0; 3]]), Err(Error::Contract(_))));
        assert!(matches!(fscore(&[[0.0; 3]], &[], 0.5), Err(Error::Contract(_))));
        assert!(matches!(local_feature_distance(&[[0.0; 3]], &[[0.0; 3]], 16, 50), Err(Error::Contract(_))));
    }

    #[test]
    fn fps_is_spread_out() {
        let pts: Vec<Point3> = (0..11).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sample(&pts, 3), vec![0, 10, 5]);
    }
}
