//! Environment inference: K-means over environmental graph representations.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DEFAULT_ENVS: usize = 3;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvAssignment {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every point (lowest index on ties) and its distance.
fn assign(points: &Array2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn plus_plus(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or `max_iter` is reached. Empty clusters move to the point
/// farthest from its current centroid.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<EnvAssignment> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::TooManyClusters { k, points: n });
    }
    let mut rng = seeded(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut history = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..max_iter.max(1) {
        let nearest = assign(points, &centroids);
        history.push(nearest.iter().map(|p| p.1).sum());
        let next: Vec<usize> = nearest.iter().map(|p| p.0).collect();
        if next == labels {
            break;
        }
        labels = next;

        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &points.row(i));
            counts[c] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| nearest[a].1.total_cmp(&nearest[b].1).then(b.cmp(&a)))
                    .expect("k <= n");
                taken[far] = true;
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }
    let nearest = assign(points, &centroids);
    let inertia = nearest.iter().map(|p| p.1).sum();
    if history.last() != Some(&inertia) {
        history.push(inertia);
    }
    Ok(EnvAssignment {
        labels: nearest.iter().map(|p| p.0).collect(),
        centroids,
        inertia,
        history,
    })
}

/// Clusters `reps` (one row per graph) with points taken in ascending `ids`
/// order, so the result does not depend on dataset order.
pub fn assign_environments(reps: &Array2<f64>, ids: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if ids.len() != reps.nrows() {
        return Err(Error::Dimension(format!("{} ids for {} rows", ids.len(), reps.nrows())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let canonical = reps.select(ndarray::Axis(0), &order);
    let fit = kmeans(&canonical, k, seed, DEFAULT_MAX_ITER)?;
    let mut out = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = fit.labels[pos];
    }
    Ok(out)
}

/// Uniform random environments, used before inference starts.
pub fn random_environments(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    (0..n).map(|_| rng.gen_range(0..k.max(1))).collect()
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} labels", a.len(), b.len())));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::<f64>::zeros((ka, kb));
    for (&x, &y) in a.iter().zip(b) {
        table[[x, y]] += 1.0;
    }
    let pairs = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.iter().map(|&v| pairs(v)).sum();
    let rows: f64 = table.rows().into_iter().map(|r| pairs(r.sum())).sum();
    let cols: f64 = table.columns().into_iter().map(|c| pairs(c.sum())).sum();
    let total = pairs(a.len() as f64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
