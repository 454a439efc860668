//! K-means over one layer's features, and the subset diversity metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::Matrix;

pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances for the final assignment.
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
    /// Inertia after every assignment and every centroid update, in order.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            members[a].push(i);
        }
        members
    }
}

#[inline]
fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn nearest_centroid(x: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia_of(features: &Matrix, centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    features
        .iter_rows()
        .zip(assignments)
        .map(|(x, &a)| sq_dist(x, &centroids[a]))
        .sum()
}

fn row_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// centroid the lowest-index point not yet chosen is taken.
fn init_plus_plus(features: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![row_f64(features.row(first))];
    let mut d2: Vec<f64> = features
        .iter_rows()
        .map(|x| sq_dist(x, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[next] = true;
        let mu = row_f64(features.row(next));
        for (x, d) in features.iter_rows().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &mu));
        }
        centroids.push(mu);
    }
    centroids
}

/// Moves the point farthest from its centroid (taken from a cluster with more
/// than one member) into each empty cluster.
fn repair_empty(features: &Matrix, centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, x) in features.iter_rows().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(x, &centroids[assignments[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n leaves a cluster with a spare point");
        assignments[i] = empty;
        centroids[empty] = row_f64(features.row(i));
    }
}

/// Lloyd's algorithm from a seeded k-means++ start. Stops when no centroid
/// moves by `tol` or more (L2), or after `max_iters` updates.
pub fn kmeans(
    features: &Matrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let n = features.rows();
    if k < 1 {
        return Err(Error::InvalidArgument(
            "k-means needs at least one cluster".into(),
        ));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means with k = {k} exceeds the {n} samples"
        )));
    }
    let d = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(features, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations_run = 0;

    let assign = |centroids: &[Vec<f64>], assignments: &mut [usize]| {
        for (x, a) in features.iter_rows().zip(assignments.iter_mut()) {
            *a = nearest_centroid(x, centroids).0;
        }
    };

    assign(&centroids, &mut assignments);
    history.push(inertia_of(features, &centroids, &assignments));

    while iterations_run < max_iters {
        repair_empty(features, &mut centroids, &mut assignments);

        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in features.iter_rows().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        let mut movement = 0.0f64;
        for ((mu, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            let new: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            let shift = mu
                .iter()
                .zip(&new)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            movement = movement.max(shift);
            *mu = new;
        }
        iterations_run += 1;
        history.push(inertia_of(features, &centroids, &assignments));

        assign(&centroids, &mut assignments);
        history.push(inertia_of(features, &centroids, &assignments));

        if movement < tol {
            break;
        }
    }

    let inertia = *history.last().expect("history is non-empty");
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        iterations_run,
        seed,
        inertia_history: history,
    })
}

/// Mean distance from each subset member to its nearest other member.
pub fn diversity(features: &Matrix, subset: &[usize]) -> Result<f64> {
    if subset.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "diversity needs at least 2 samples, got {}",
            subset.len()
        )));
    }
    let n = features.rows();
    let mut seen = std::collections::HashSet::with_capacity(subset.len());
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if !seen.insert(i) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    let total: f64 = subset
        .iter()
        .map(|&i| {
            subset
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    features
                        .row(i)
                        .iter()
                        .zip(features.row(j))
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / subset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Matrix {
        Matrix::from_rows(&[
            [0.0f32, 0.0],
            [1.0, 0.0],
            [0.0, 2.0],
            [3.0, 3.0],
            [4.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn k_equals_n_is_a_perfect_fit() {
        let m = kmeans(&grid(), 5, 3, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut a = m.assignments.clone();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn k_equals_n_with_duplicates() {
        let x = Matrix::from_rows(&[[1.0f32], [1.0], [1.0]]).unwrap();
        let m = kmeans(&x, 3, 0, 10, DEFAULT_TOL).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(m.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let x = grid();
        let m = kmeans(&x, 1, 9, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let mean = [8.0 / 5.0, 6.0 / 5.0];
        assert!((m.centroids[0][0] - mean[0]).abs() < 1e-12);
        assert!((m.centroids[0][1] - mean[1]).abs() < 1e-12);
        let total: f64 = x
            .iter_rows()
            .map(|r| (r[0] as f64 - mean[0]).powi(2) + (r[1] as f64 - mean[1]).powi(2))
            .sum();
        assert!((m.inertia - total).abs() < 1e-9);
    }

    #[test]
    fn bad_k() {
        assert!(kmeans(&grid(), 0, 0, 10, DEFAULT_TOL).is_err());
        assert!(kmeans(&grid(), 6, 0, 10, DEFAULT_TOL).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let x = grid();
        let a = kmeans(&x, 2, 42, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let b = kmeans(&x, 2, 42, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diversity_examples() {
        let pair = Matrix::from_rows(&[[0.0f32, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(diversity(&pair, &[0, 1]).unwrap(), 3.0);
        let line = Matrix::from_rows(&[[0.0f32], [1.0], [10.0]]).unwrap();
        assert!((diversity(&line, &[0, 1, 2]).unwrap() - 11.0 / 3.0).abs() < 1e-12);
        let dup = Matrix::from_rows(&[[2.0f32], [2.0], [7.0]]).unwrap();
        // the duplicated pair contributes zero; the third point is 5 away
        assert!((diversity(&dup, &[0, 1, 2]).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_errors() {
        let x = grid();
        assert!(diversity(&x, &[1]).is_err());
        assert!(matches!(
            diversity(&x, &[1, 1]),
            Err(Error::DuplicateIndex(1))
        ));
        assert!(matches!(
            diversity(&x, &[1, 9]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
