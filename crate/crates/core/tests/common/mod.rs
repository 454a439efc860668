#![allow(dead_code)]

use lcprune::feature_store::{LayerMatrix, Matrix, Split};
use lcprune::FeaturePack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    Matrix::new(n, d, data).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: u32) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn random_pack(seed: u64, n: usize, dims: &[usize], classes: u32) -> FeaturePack {
    let mut r = rng(seed);
    let layers = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| LayerMatrix::new(format!("layer{i}"), random_matrix(&mut r, n, d)))
        .collect();
    let labels = random_labels(&mut r, n, classes);
    FeaturePack::new(layers, Some(labels), None, None, Split::Train).unwrap()
}

/// Two Gaussian blobs centred at `a` and `b`, `per` points each, labelled 0 and 1.
pub fn two_blobs(seed: u64, per: usize, a: [f32; 2], b: [f32; 2], sigma: f32) -> FeaturePack {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in [(0u32, a), (1, b)] {
        for _ in 0..per {
            let dx: f32 = r.sample(rand_distr::StandardNormal);
            let dy: f32 = r.sample(rand_distr::StandardNormal);
            rows.push([c[0] + sigma * dx, c[1] + sigma * dy]);
            labels.push(label);
        }
    }
    FeaturePack::new(
        vec![LayerMatrix::new("blobs", Matrix::from_rows(&rows).unwrap())],
        Some(labels),
        None,
        None,
        Split::Train,
    )
    .unwrap()
}

pub fn euclid(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Exhaustive weighted-KNN confidence: every distance computed, full stable
/// sort, first k kept.
pub fn oracle_confidence(
    query: &[f32],
    label: u32,
    refs: &Matrix,
    labels: &[u32],
    k: usize,
    skip: Option<usize>,
    eps: f64,
) -> f64 {
    let mut all: Vec<(f64, usize)> = Vec::new();
    for j in 0..refs.rows() {
        if Some(j) == skip {
            continue;
        }
        all.push((euclid(query, refs.row(j)), j));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d, j) in &all[..k] {
        let w = 1.0 / (d + eps);
        den += w;
        if labels[j] == label {
            num += w;
        }
    }
    num / den
}

/// Optimal k-center radius by enumerating every center set of size m.
pub fn optimal_kcenter_radius(points: &Matrix, m: usize) -> f64 {
    let n = points.rows();
    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..m).collect();
    loop {
        let radius = (0..n)
            .map(|j| {
                combo
                    .iter()
                    .map(|&c| euclid(points.row(j), points.row(c)))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        best = best.min(radius);
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + n - m {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..m {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

pub fn cover_radius(points: &Matrix, centers: &[usize]) -> f64 {
    (0..points.rows())
        .map(|j| {
            centers
                .iter()
                .map(|&c| euclid(points.row(j), points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}
