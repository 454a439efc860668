//! Budgeted subset selection.
//!
//! Every selector keeps exactly `M = floor(eta * N)` distinct indices.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clustering::{kmeans, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::feature_store::{
    validate_probability_rows, with_suffix, write_atomic, FeaturePack, Matrix,
};
use crate::knn_scoring::ScoreVector;

/// Probabilities are floored at this value before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

/// Kept sample count for a budget fraction. A tolerance of 1e-9 absorbs
/// products like `0.29 * 100 = 28.999999999999996`.
pub fn budget_size(n: usize, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidBudget(eta));
    }
    Ok(((eta * n as f64 + 1e-9).floor() as usize).min(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keep {
    Highest,
    Lowest,
}

impl Keep {
    /// Direction that keeps the easiest samples of `scores`.
    pub fn easiest(scores: &ScoreVector) -> Keep {
        if scores.higher_is_easier {
            Keep::Highest
        } else {
            Keep::Lowest
        }
    }

    pub fn hardest(scores: &ScoreVector) -> Keep {
        match Self::easiest(scores) {
            Keep::Highest => Keep::Lowest,
            Keep::Lowest => Keep::Highest,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Keep::Highest => "highest",
            Keep::Lowest => "lowest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: String,
    pub params: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub budget_fraction: f64,
    pub n_total: usize,
    pub indices: Vec<usize>,
}

impl SelectionResult {
    fn new(method: &str, eta: f64, n_total: usize, seed: Option<u64>, indices: Vec<usize>) -> Self {
        SelectionResult {
            method: method.to_string(),
            params: BTreeMap::new(),
            seed,
            budget_fraction: eta,
            n_total,
            indices,
        }
    }

    fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("selection serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        self.indices.iter().map(|i| format!("{i}\n")).collect()
    }

    /// Writes `<stem>.json` and `<stem>.txt`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&with_suffix(stem, "json"), self.to_json().as_bytes())?;
        write_atomic(&with_suffix(stem, "txt"), self.to_text().as_bytes())
    }

    pub fn read(json: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: json.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn ordered_by_score(indices: &mut [usize], values: &[f64], keep: Keep) {
    indices.sort_by(|&a, &b| {
        let ord = match keep {
            Keep::Highest => values[b].total_cmp(&values[a]),
            Keep::Lowest => values[a].total_cmp(&values[b]),
        };
        ord.then(a.cmp(&b))
    });
}

/// The `M` most extreme scores in direction `keep`; ties to the lower index.
/// Output ascending.
pub fn top_k_select(scores: &ScoreVector, eta: f64, keep: Keep) -> Result<SelectionResult> {
    let n = scores.len();
    let m = budget_size(n, eta)?;
    let mut order: Vec<usize> = (0..n).collect();
    ordered_by_score(&mut order, &scores.values, keep);
    let mut kept = order[..m].to_vec();
    kept.sort_unstable();
    Ok(SelectionResult::new("topk", eta, n, None, kept)
        .param("keep", keep.as_str())
        .param("score_method", scores.method.clone())
        .param("order", "ascending"))
}

/// Threshold rule reproducing [`top_k_select`]: every score strictly beyond
/// `tau` is kept, and scores equal to `tau` are kept in ascending index order
/// until `size` samples are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub tau: f64,
    pub keep_below: bool,
    pub size: usize,
}

impl LevelSet {
    pub fn apply(&self, values: &[f64]) -> Vec<usize> {
        let beyond = |v: f64| {
            if self.keep_below {
                v < self.tau
            } else {
                v > self.tau
            }
        };
        let mut kept: Vec<usize> = (0..values.len()).filter(|&i| beyond(values[i])).collect();
        let room = self.size.saturating_sub(kept.len());
        kept.extend(
            (0..values.len())
                .filter(|&i| values[i] == self.tau)
                .take(room),
        );
        kept.sort_unstable();
        kept
    }
}

/// `tau` is the `M`-th order statistic in the kept direction. An empty budget
/// puts `tau` past the extreme so that nothing is kept.
pub fn threshold_from_budget(scores: &ScoreVector, eta: f64, keep: Keep) -> Result<LevelSet> {
    let n = scores.len();
    let m = budget_size(n, eta)?;
    let keep_below = keep == Keep::Lowest;
    let tau = if m == 0 {
        if keep_below {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        ordered_by_score(&mut order, &scores.values, keep);
        scores.values[order[m - 1]]
    };
    Ok(LevelSet {
        tau,
        keep_below,
        size: m,
    })
}

/// Largest-remainder apportionment of `total` seats proportional to
/// `weights`, never exceeding `caps`. Equal remainders favour the smaller
/// weight, then the lower index. Seats a capped entry cannot take are
/// re-apportioned over the rest.
pub fn apportion(weights: &[usize], caps: &[usize], total: usize) -> Vec<usize> {
    assert_eq!(weights.len(), caps.len());
    let capacity: usize = caps.iter().sum();
    assert!(
        total <= capacity,
        "cannot place {total} seats in capacity {capacity}"
    );
    let mut quotas = vec![0usize; weights.len()];
    let mut remaining = total;
    while remaining > 0 {
        let open: Vec<usize> = (0..weights.len())
            .filter(|&i| quotas[i] < caps[i])
            .collect();
        let use_caps = open.iter().all(|&i| weights[i] == 0);
        // all open entries weightless: share by remaining capacity instead
        let ws: Vec<u128> = open
            .iter()
            .map(|&i| {
                if use_caps {
                    (caps[i] - quotas[i]) as u128
                } else {
                    weights[i] as u128
                }
            })
            .collect();
        let weight_sum: u128 = ws.iter().sum();
        let r = remaining as u128;
        let mut given = 0usize;
        let mut rems = Vec::with_capacity(open.len());
        for (&i, &w) in open.iter().zip(&ws) {
            let exact = r * w;
            let share = ((exact / weight_sum) as usize).min(caps[i] - quotas[i]);
            quotas[i] += share;
            given += share;
            if quotas[i] < caps[i] {
                rems.push((exact % weight_sum, w, i));
            }
        }
        let mut leftover = remaining - given;
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, _, i) in &rems {
            if leftover == 0 {
                break;
            }
            quotas[i] += 1;
            leftover -= 1;
        }
        remaining = leftover;
    }
    quotas
}

/// Cluster the chosen layer with K-means, split the budget over clusters by
/// size, and keep the easiest samples of each cluster.
pub fn easy_diverse_select(
    pack: &FeaturePack,
    scores: &ScoreVector,
    cluster_layer: usize,
    k_clusters: usize,
    eta: f64,
    seed: u64,
) -> Result<SelectionResult> {
    let n = pack.n_samples();
    if scores.len() != n {
        return Err(Error::ShapeMismatch {
            what: "score vector length",
            expected: n,
            found: scores.len(),
        });
    }
    let m = budget_size(n, eta)?;
    let features = &pack.layer(cluster_layer)?.features;
    let model = kmeans(features, k_clusters, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let members = model.members();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, &sizes, m);
    let keep = Keep::easiest(scores);
    let mut kept = Vec::with_capacity(m);
    for (mut cluster, q) in members.into_iter().zip(&quotas) {
        ordered_by_score(&mut cluster, &scores.values, keep);
        kept.extend_from_slice(&cluster[..*q]);
    }
    kept.sort_unstable();
    Ok(SelectionResult::new("lc", eta, n, Some(seed), kept)
        .param("k_clusters", k_clusters)
        .param("layer", cluster_layer)
        .param("keep", keep.as_str())
        .param("score_method", scores.method.clone())
        .param("quotas", quotas)
        .param("kmeans_iterations", model.iterations_run)
        .param("order", "ascending"))
}

/// Herding: greedily pick the sample best aligned with the running residual
/// `w`, which starts at the class mean and is updated `w += mean - z`.
/// Budgets are split over classes by frequency; without per-class mode every
/// sample is one class. Output lists classes in ascending id, each in pick
/// order.
pub fn herding_select(
    features: &Matrix,
    labels: Option<&[u32]>,
    eta: f64,
    per_class: bool,
) -> Result<SelectionResult> {
    let n = features.rows();
    let m = budget_size(n, eta)?;
    let groups: Vec<Vec<usize>> = if per_class {
        let labels = labels.ok_or(Error::MissingInput("labels"))?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                what: "label count",
                expected: n,
                found: labels.len(),
            });
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..n).collect()]
    };
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let budgets = apportion(&sizes, &sizes, m);
    let d = features.cols();
    let mut kept = Vec::with_capacity(m);
    for (group, &budget) in groups.iter().zip(&budgets) {
        let mut mean = vec![0.0f64; d];
        for &i in group {
            for (s, &v) in mean.iter_mut().zip(features.row(i)) {
                *s += v as f64;
            }
        }
        mean.iter_mut().for_each(|s| *s /= group.len() as f64);
        let mut w = mean.clone();
        let mut taken = vec![false; group.len()];
        for _ in 0..budget {
            let mut best: Option<(usize, f64)> = None;
            for (slot, &i) in group.iter().enumerate() {
                if taken[slot] {
                    continue;
                }
                let dot: f64 = w
                    .iter()
                    .zip(features.row(i))
                    .map(|(a, &b)| a * b as f64)
                    .sum();
                if best.is_none_or(|(_, b)| dot > b) {
                    best = Some((slot, dot));
                }
            }
            let (slot, _) = best.expect("budget never exceeds group size");
            taken[slot] = true;
            let i = group[slot];
            for ((wv, mv), &z) in w.iter_mut().zip(&mean).zip(features.row(i)) {
                *wv += mv - z as f64;
            }
            kept.push(i);
        }
    }
    Ok(SelectionResult::new("herding", eta, n, None, kept)
        .param("per_class", per_class)
        .param("order", "greedy"))
}

/// Greedy max-min cover under an arbitrary distance. Ties to the lower index.
pub fn kcenter_greedy(
    n: usize,
    m: usize,
    first: usize,
    dist: impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    let mut picked = vec![first];
    let mut selected = vec![false; n];
    selected[first] = true;
    let mut min_d: Vec<f64> = (0..n).map(|j| dist(first, j)).collect();
    while picked.len() < m {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if selected[j] {
                continue;
            }
            if best.is_none_or(|b| min_d[j] > min_d[b]) {
                best = Some(j);
            }
        }
        let next = best.expect("m <= n");
        selected[next] = true;
        picked.push(next);
        for (j, m) in min_d.iter_mut().enumerate() {
            *m = m.min(dist(next, j));
        }
    }
    picked
}

fn starting_index(n: usize, seed: u64, initial: Option<usize>) -> Result<usize> {
    match initial {
        Some(i) if i >= n => Err(Error::IndexOutOfRange { index: i, n }),
        Some(i) => Ok(i),
        None => Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..n)),
    }
}

fn euclidean_rows(features: &Matrix, a: usize, b: usize) -> f64 {
    features
        .row(a)
        .iter()
        .zip(features.row(b))
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// k-center greedy in feature space. Output in pick order.
pub fn kcenter_greedy_select(
    features: &Matrix,
    eta: f64,
    seed: u64,
    initial: Option<usize>,
) -> Result<SelectionResult> {
    let n = features.rows();
    let m = budget_size(n, eta)?;
    let first = starting_index(n, seed, initial)?;
    let picked = kcenter_greedy(n, m, first, |a, b| euclidean_rows(features, a, b));
    Ok(SelectionResult::new("kcg", eta, n, Some(seed), picked)
        .param("initial", first)
        .param("metric", "euclidean")
        .param("order", "greedy"))
}

/// `KL(p||q) + KL(q||p)` with entries floored at [`KL_FLOOR`].
pub fn symmetric_kl(p: &[f32], q: &[f32]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = (a as f64).max(KL_FLOOR);
            let b = (b as f64).max(KL_FLOOR);
            (a - b) * (a.ln() - b.ln())
        })
        .sum()
}

/// Contextual-diversity selection: k-center greedy over probability rows
/// under symmetric KL divergence.
pub fn cd_select(
    probs: &Matrix,
    eta: f64,
    seed: u64,
    initial: Option<usize>,
) -> Result<SelectionResult> {
    validate_probability_rows("probs", probs)?;
    let n = probs.rows();
    let m = budget_size(n, eta)?;
    let first = starting_index(n, seed, initial)?;
    let picked = kcenter_greedy(n, m, first, |a, b| symmetric_kl(probs.row(a), probs.row(b)));
    Ok(SelectionResult::new("cd", eta, n, Some(seed), picked)
        .param("initial", first)
        .param("metric", "symmetric_kl")
        .param("kl_floor", KL_FLOOR)
        .param("order", "greedy"))
}

/// Seeded shuffle, first `M` taken, output ascending.
pub fn random_select(n: usize, eta: f64, seed: u64) -> Result<SelectionResult> {
    let m = budget_size(n, eta)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept = order[..m].to_vec();
    kept.sort_unstable();
    Ok(SelectionResult::new("random", eta, n, Some(seed), kept).param("order", "ascending"))
}
