//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative inertia improvement below which a restart stops.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
    /// True when the winning restart reached a fixed point of assignments.
    pub converged: bool,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(p: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.outer_iter().enumerate() {
        let (j, d) = nearest(p, centroids);
        out[i] = j;
        inertia += d;
    }
    inertia
}

/// Recomputes inertia of an assignment against centroids.
pub fn inertia(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, assignments: &[usize]) -> f64 {
    points
        .outer_iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

fn seed_plus_plus<R: Rng + ?Sized>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.outer_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centroids
}

/// Means of the assigned points; an empty cluster is reseeded at the point
/// farthest from its current centroid.
fn update(points: ArrayView2<'_, f64>, assignments: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let mut far = (usize::MAX, -1.0);
        for (i, p) in points.outer_iter().enumerate() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, centroids.row(assignments[i]));
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.0 == usize::MAX {
            break;
        }
        centroids.row_mut(empty).assign(&points.row(far.0));
        assignments[far.0] = empty;
    }
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.outer_iter().zip(assignments.iter()) {
        let mut row = sums.row_mut(a);
        row += &p;
        counts[a] += 1;
    }
    for (j, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        if counts[j] > 0 {
            row /= counts[j] as f64;
            centroids.row_mut(j).assign(&row);
        }
    }
}

fn single_run(points: ArrayView2<'_, f64>, k: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> ClusterResult {
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![0; points.nrows()];
    let mut current = assign(points, &centroids, &mut assignments);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        update(points, &mut assignments, &mut centroids);
        let mut next = assignments.clone();
        let after = assign(points, &centroids, &mut next);
        let unchanged = next == assignments;
        assignments = next;
        let improvement = if current > 0.0 { (current - after) / current } else { 0.0 };
        current = after;
        if unchanged {
            converged = true;
            break;
        }
        if improvement < cfg.tol {
            break;
        }
    }
    ClusterResult {
        assignments,
        centroids,
        inertia: current,
        iterations,
        converged,
    }
}

/// Best of `cfg.restarts` runs by inertia; earlier restarts win ties.
pub fn kmeans<R: Rng + ?Sized>(
    points: ArrayView2<'_, f64>,
    k: usize,
    cfg: &KMeansConfig,
    rng: &mut R,
) -> Result<ClusterResult> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::Config(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(Error::Config("k-means restarts and max_iter must be positive".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            term: "kmeans",
            detail: "non-finite input point".into(),
        });
    }
    let mut best: Option<ClusterResult> = None;
    for _ in 0..cfg.restarts {
        let mut run_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let r = single_run(points, k, cfg, &mut run_rng);
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}
