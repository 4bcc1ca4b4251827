//! Quadratic reference implementations of the evaluation metrics.

use isac_recon::geometry::Point3;

fn d2(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Lowest-index nearest point of `to` and its squared distance.
pub fn nearest(q: &Point3, to: &[Point3]) -> (usize, f64) {
    let mut best = (0, d2(q, &to[0]));
    for (j, p) in to.iter().enumerate().skip(1) {
        let d = d2(q, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn directed_sum(from: &[Point3], to: &[Point3]) -> f64 {
    let mut s = 0.0;
    for p in from {
        s += nearest(p, to).1.sqrt();
    }
    s
}

pub fn chamfer(p: &[Point3], q: &[Point3]) -> f64 {
    let n = p.len().max(q.len()) as f64;
    (directed_sum(p, q) / p.len() as f64 + directed_sum(q, p) / q.len() as f64) / n
}

pub fn fscore(out: &[Point3], gt: &[Point3], tr: f64) -> (f64, f64, f64) {
    let hits = |from: &[Point3], to: &[Point3]| from.iter().filter(|p| nearest(p, to).1.sqrt() < tr).count();
    let precision = hits(out, gt) as f64 / out.len() as f64;
    let recall = hits(gt, out) as f64 / gt.len() as f64;
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    (f, precision, recall)
}

pub fn farthest_points(points: &[Point3], k: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    while chosen.len() < k.min(points.len()) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let m = chosen.iter().map(|&c| d2(p, &points[c])).fold(f64::INFINITY, f64::min);
            if m > best.1 {
                best = (i, m);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

/// `k` nearest indices ordered by distance then index.
pub fn knn(q: &Point3, points: &[Point3], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (d2(q, p), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

fn mean(points: &[Point3], idx: &[usize]) -> Point3 {
    let mut c = [0.0; 3];
    for &i in idx {
        for a in 0..3 {
            c[a] += points[i][a];
        }
    }
    let n = idx.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

pub fn local_feature(out: &[Point3], gt: &[Point3], anchors: usize, nn: usize) -> f64 {
    let chosen = farthest_points(gt, anchors);
    let mut total = 0.0;
    for &a in &chosen {
        let (m, _) = nearest(&gt[a], out);
        let mp = mean(out, &knn(&out[m], out, nn));
        let mq = mean(gt, &knn(&gt[a], gt, nn));
        let diff = [mp[0] - mq[0], mp[1] - mq[1], mp[2] - mq[2]];
        total += (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
    }
    total / chosen.len() as f64
}

/// Random cloud of `n` points; `grid` snaps coordinates to 0.25 m so ties
/// and duplicates occur.
pub fn random_cloud(n: usize, grid: bool, rng: &mut impl rand::Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            let p: Point3 = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..4.0)];
            if grid {
                p.map(|v: f64| (v * 4.0).round() / 4.0)
            } else {
                p
            }
        })
        .collect()
}

/// Compares the library metrics with the quadratic references on `pairs`
/// random cloud pairs of at most 128 points. Returns the number of pairs
/// with any mismatch.
pub fn parity_mismatches(pairs: usize, seed: u64) -> usize {
    use isac_recon::metrics;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for k in 0..pairs {
        let grid = k % 3 == 0;
        let p = random_cloud(rng.gen_range(1..=128), grid, &mut rng);
        let q = random_cloud(rng.gen_range(1..=128), grid, &mut rng);
        let nn = metrics::DEFAULT_NEIGHBOURS.min(p.len()).min(q.len());
        let same = metrics::chamfer(&p, &q).unwrap() == chamfer(&p, &q)
            && metrics::fscore(&p, &q, 0.5).unwrap() == fscore(&p, &q, 0.5)
            && metrics::local_feature_distance(&p, &q, metrics::DEFAULT_ANCHORS, nn).unwrap()
                == local_feature(&p, &q, metrics::DEFAULT_ANCHORS, nn);
        if !same {
            bad += 1;
        }
    }
    bad
}
