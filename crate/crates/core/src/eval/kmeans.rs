use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Inertia after every assignment pass, in order.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && u < acc {
                    pick = i;
                    break;
                }
            }
            // rounding at the tail can land on a zero-weight point
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // fewer distinct points than clusters
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing (at most 300 passes). Ties go to the lower centroid index; an
/// empty cluster is moved onto the point farthest from its own centroid.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<Clustering> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} with {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut inertia = Vec::new();
    for _ in 0..MAX_ITERS {
        let (next, dists): (Vec<usize>, Vec<f64>) = points.iter_rows().map(|p| nearest(p, &centroids)).unzip();
        inertia.push(dists.iter().sum());
        if next == assignments {
            break;
        }
        assignments = next;

        let dim = points.cols();
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = None;
                let mut far_d = -1.0;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    let d = sq_dist(points.row(i), centroids.row(assignments[i]));
                    if d > far_d {
                        far = Some(i);
                        far_d = d;
                    }
                }
                if let Some(i) = far {
                    taken[i] = true;
                    let p = points.row(i).to_vec();
                    centroids.row_mut(c).copy_from_slice(&p);
                }
            }
        }
    }
    Ok(Clustering {
        assignments,
        centroids,
        inertia,
    })
}

/// Per cluster keep the `floor(fraction * size)` members nearest the
/// centroid (at least one); ties go to the lower point index.
pub fn keep_top_fraction(points: &Matrix, assignments: &[usize], centroids: &Matrix, fraction: f64) -> Vec<bool> {
    let mut kept = vec![false; assignments.len()];
    for c in 0..centroids.rows() {
        let mut members: Vec<(f64, usize)> = assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == c)
            .map(|(i, _)| (sq_dist(points.row(i), centroids.row(c)), i))
            .collect();
        if members.is_empty() {
            continue;
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let keep = ((fraction * members.len() as f64 + 1e-9).floor() as usize).max(1);
        for &(_, i) in members.iter().take(keep) {
            kept[i] = true;
        }
    }
    kept
}
