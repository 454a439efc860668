//! Learning-complexity scores and the uncertainty baselines.
//!
//! The classification score of a sample is the mean, over encoder layers, of
//! an inverse-distance weighted KNN confidence in its own label. The
//! regression score is the mean reciprocal perplexity over dropout subnets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::feature_store::{
    validate_perplexities, validate_probability_rows, write_atomic, FeaturePack, Matrix,
};

pub const DEFAULT_TIE_EPSILON: f64 = 1e-12;
pub const DEFAULT_K_CANDIDATES: [usize; 6] = [1, 3, 5, 10, 20, 50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Drop the query's own row from the reference set.
    pub exclude_self: bool,
    /// Added to every distance before inversion.
    pub tie_epsilon: f64,
    /// L2-normalize feature rows before measuring distances.
    pub normalize: bool,
}

impl KnnConfig {
    pub fn new(k: usize) -> Self {
        KnnConfig {
            k,
            exclude_self: true,
            tie_epsilon: DEFAULT_TIE_EPSILON,
            normalize: false,
        }
    }

    pub fn with_exclude_self(mut self, exclude_self: bool) -> Self {
        self.exclude_self = exclude_self;
        self
    }

    fn validate(&self, n_refs: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.tie_epsilon > 0.0 && self.tie_epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tie_epsilon must be positive, got {}",
                self.tie_epsilon
            )));
        }
        let available = if self.exclude_self {
            n_refs.saturating_sub(1)
        } else {
            n_refs
        };
        if self.k > available {
            return Err(Error::KTooLarge {
                k: self.k,
                available,
            });
        }
        Ok(())
    }
}

/// One real-valued score per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    #[serde(skip)]
    pub values: Vec<f64>,
    pub method: String,
    pub params: BTreeMap<String, Value>,
    pub higher_is_easier: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_digest: Option<String>,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, method: impl Into<String>, higher_is_easier: bool) -> Self {
        ScoreVector {
            values,
            method: method.into(),
            params: BTreeMap::new(),
            higher_is_easier,
            source_digest: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `stem.csv` (header `index,score`) and `stem.json` sidecar.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,score\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }

    /// Writes the CSV at `csv` and the JSON sidecar next to it.
    pub fn write(&self, csv: &Path) -> Result<()> {
        let mut sidecar = serde_json::to_value(self).expect("score metadata serializes");
        sidecar["n"] = json!(self.values.len());
        let mut json = serde_json::to_vec_pretty(&sidecar).expect("score metadata serializes");
        json.push(b'\n');
        write_atomic(csv, self.to_csv().as_bytes())?;
        write_atomic(&Self::sidecar_path(csv), &json)
    }

    /// Reads a score CSV. The sidecar is optional: externally produced score
    /// files without one load as method `external` with `higher_is_easier`.
    pub fn read(csv: &Path) -> Result<Self> {
        let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let source = csv.display().to_string();
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() || (line_no == 1 && line.starts_with("index")) {
                continue;
            }
            let mut parts = line.split(',');
            let (idx, score) = match (parts.next(), parts.next(), parts.next()) {
                (Some(i), Some(s), None) => (i.trim(), s.trim()),
                _ => {
                    return Err(Error::RaggedRow {
                        source_name: source,
                        line: line_no,
                        expected: 2,
                        found: line.split(',').count(),
                    })
                }
            };
            let parse_err = |col: usize, token: &str| Error::Parse {
                source_name: source.clone(),
                row: line_no,
                col,
                token: token.to_string(),
            };
            let idx: usize = idx.parse().map_err(|_| parse_err(1, idx))?;
            let v: f64 = score.parse().map_err(|_| parse_err(2, score))?;
            if idx != values.len() {
                return Err(Error::InvalidArgument(format!(
                    "{source}: line {line_no}: expected index {}, found {idx}",
                    values.len()
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    source_name: source,
                    row: idx,
                    col: 2,
                });
            }
            values.push(v);
        }
        let sidecar = Self::sidecar_path(csv);
        let mut sv = if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            serde_json::from_str::<ScoreVector>(&text).map_err(|e| Error::Manifest {
                path: sidecar.clone(),
                message: e.to_string(),
            })?
        } else {
            ScoreVector::new(Vec::new(), "external", true)
        };
        sv.values = values;
        Ok(sv)
    }
}

#[inline]
fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The `k` nearest rows of `refs` to `query`, ascending by (distance, index).
fn nearest(query: &[f32], refs: &Matrix, skip: Option<usize>, k: usize) -> Vec<(f64, usize)> {
    let mut dists: Vec<(f64, usize)> = refs
        .iter_rows()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, r)| (euclidean(query, r), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k, cmp);
        dists.truncate(k);
    }
    dists.sort_unstable_by(cmp);
    dists
}

fn check_dims(query: &[f32], refs: &Matrix, ref_labels: &[u32]) -> Result<()> {
    if query.len() != refs.cols() {
        return Err(Error::ShapeMismatch {
            what: "feature dimension",
            expected: refs.cols(),
            found: query.len(),
        });
    }
    if ref_labels.len() != refs.rows() {
        return Err(Error::ShapeMismatch {
            what: "reference label count",
            expected: refs.rows(),
            found: ref_labels.len(),
        });
    }
    Ok(())
}

fn weighted_agreement(neighbors: &[(f64, usize)], label: u32, ref_labels: &[u32], eps: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d, j) in neighbors {
        let w = 1.0 / (d + eps);
        den += w;
        if ref_labels[j] == label {
            num += w;
        }
    }
    num / den
}

/// Inverse-distance weighted share of the `k` nearest references carrying
/// `query_label`.
///
/// `self_index` names the query's own row in `refs`; it is skipped when
/// `cfg.exclude_self` is set. Neighbors at equal distance are taken in
/// ascending reference index.
pub fn knn_confidence(
    query: &[f32],
    query_label: u32,
    refs: &Matrix,
    ref_labels: &[u32],
    cfg: &KnnConfig,
    self_index: Option<usize>,
) -> Result<f64> {
    check_dims(query, refs, ref_labels)?;
    let skip = if cfg.exclude_self { self_index } else { None };
    if let Some(s) = skip {
        if s >= refs.rows() {
            return Err(Error::IndexOutOfRange {
                index: s,
                n: refs.rows(),
            });
        }
    }
    let cfg_check = KnnConfig {
        exclude_self: skip.is_some(),
        ..*cfg
    };
    cfg_check.validate(refs.rows())?;
    let neighbors = nearest(query, refs, skip, cfg.k);
    Ok(weighted_agreement(
        &neighbors,
        query_label,
        ref_labels,
        cfg.tie_epsilon,
    ))
}

fn layer_features<'a>(
    pack: &'a FeaturePack,
    layer_index: usize,
    cfg: &KnnConfig,
) -> Result<std::borrow::Cow<'a, Matrix>> {
    let features = &pack.layer(layer_index)?.features;
    Ok(if cfg.normalize {
        std::borrow::Cow::Owned(features.l2_normalized())
    } else {
        std::borrow::Cow::Borrowed(features)
    })
}

/// KNN confidence of every sample against the rest of the same pack.
pub fn layer_confidences(
    pack: &FeaturePack,
    layer_index: usize,
    cfg: &KnnConfig,
) -> Result<Vec<f64>> {
    let labels = pack.require_labels()?;
    let features = layer_features(pack, layer_index, cfg)?;
    cfg.validate(features.rows())?;
    let skip_self = cfg.exclude_self;
    Ok((0..features.rows())
        .into_par_iter()
        .map(|i| {
            let skip = skip_self.then_some(i);
            let neighbors = nearest(features.row(i), &features, skip, cfg.k);
            weighted_agreement(&neighbors, labels[i], labels, cfg.tie_epsilon)
        })
        .collect())
}

/// Mean layer confidence over `layer_subset` (all layers when `None`).
pub fn lc_classification_score(
    pack: &FeaturePack,
    cfg: &KnnConfig,
    layer_subset: Option<&[usize]>,
) -> Result<ScoreVector> {
    let layers: Vec<usize> = match layer_subset {
        Some(s) => s.to_vec(),
        None => (0..pack.num_layers()).collect(),
    };
    if layers.is_empty() {
        return Err(Error::InvalidArgument("layer subset is empty".into()));
    }
    let mut sums = vec![0.0; pack.n_samples()];
    for &l in &layers {
        let conf = layer_confidences(pack, l, cfg)?;
        for (s, c) in sums.iter_mut().zip(conf) {
            *s += c;
        }
    }
    let count = layers.len() as f64;
    let values = sums.into_iter().map(|s| s / count).collect();
    let mut sv = ScoreVector::new(values, "lc", true)
        .with_param("k", cfg.k)
        .with_param("layers", layers)
        .with_param("tie_epsilon", cfg.tie_epsilon)
        .with_param("exclude_self", cfg.exclude_self)
        .with_param("normalize", cfg.normalize);
    sv.source_digest = Some(pack.digest());
    Ok(sv)
}

/// Mean reciprocal perplexity across subnets, per row.
pub fn lc_regression_score(perplexities: &Matrix) -> Result<ScoreVector> {
    validate_perplexities("perplexities", perplexities)?;
    let subnets = perplexities.cols() as f64;
    let values = perplexities
        .iter_rows()
        .map(|row| row.iter().map(|&p| 1.0 / p as f64).sum::<f64>() / subnets)
        .collect();
    Ok(ScoreVector::new(values, "lc-reg", true).with_param("num_subnets", perplexities.cols()))
}

/// Fraction of `val` samples whose weighted KNN vote against `train` picks
/// the true label. Class ties go to the lower class id.
pub fn knn_val_accuracy(
    train: &FeaturePack,
    val: &FeaturePack,
    layer_index: usize,
    cfg: &KnnConfig,
) -> Result<f64> {
    let cfg = cfg.with_exclude_self(false);
    let train_labels = train.require_labels()?;
    let val_labels = val.require_labels()?;
    let refs = layer_features(train, layer_index, &cfg)?;
    let queries = layer_features(val, layer_index, &cfg)?;
    if refs.cols() != queries.cols() {
        return Err(Error::ShapeMismatch {
            what: "feature dimension",
            expected: refs.cols(),
            found: queries.cols(),
        });
    }
    cfg.validate(refs.rows())?;
    let num_classes = train_labels
        .iter()
        .chain(val_labels)
        .max()
        .map_or(0, |&m| m as usize + 1);
    let correct: usize = (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            let neighbors = nearest(queries.row(i), &refs, None, cfg.k);
            let mut votes = vec![0.0; num_classes];
            for &(d, j) in &neighbors {
                votes[train_labels[j] as usize] += 1.0 / (d + cfg.tie_epsilon);
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            usize::from(best as u32 == val_labels[i])
        })
        .sum();
    Ok(correct as f64 / queries.rows() as f64)
}

/// The candidate `k` with the best validation accuracy, smaller `k` on ties.
pub fn tune_k(
    train: &FeaturePack,
    val: &FeaturePack,
    layer_index: usize,
    candidates: &[usize],
    base: &KnnConfig,
) -> Result<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    for k in sorted {
        let acc = knn_val_accuracy(train, val, layer_index, &KnnConfig { k, ..*base })?;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((k, acc));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidArgument("no k candidates given".into()))
}

/// Layer used for clustering: the best validation accuracy among all but the
/// final layer, shallower on ties. Single-layer packs use layer 0.
pub fn select_cluster_layer(
    train: &FeaturePack,
    val: &FeaturePack,
    cfg: &KnnConfig,
) -> Result<usize> {
    let layers = train.num_layers();
    if layers == 0 {
        return Err(Error::MissingInput("feature layers"));
    }
    if layers == 1 {
        return Ok(0);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for l in 0..layers - 1 {
        let acc = knn_val_accuracy(train, val, l, cfg)?;
        if acc > best.1 {
            best = (l, acc);
        }
    }
    Ok(best.0)
}

fn uncertainty(probs: &Matrix, method: &str, f: impl Fn(&[f32]) -> f64) -> Result<ScoreVector> {
    validate_probability_rows("probs", probs)?;
    let values = probs.iter_rows().map(f).collect();
    Ok(ScoreVector::new(values, method, false))
}

/// `1 - max_c p_c`.
pub fn least_confidence_score(probs: &Matrix) -> Result<ScoreVector> {
    uncertainty(probs, "least-conf", |row| {
        1.0 - row.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(p as f64))
    })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(probs: &Matrix) -> Result<ScoreVector> {
    uncertainty(probs, "entropy", |row| {
        -row.iter()
            .map(|&p| p as f64)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    })
}

/// `1 - (p_(1) - p_(2))` over the two largest entries.
pub fn margin_score(probs: &Matrix) -> Result<ScoreVector> {
    uncertainty(probs, "margin", |row| {
        let (mut first, mut second) = (f64::NEG_INFINITY, 0.0f64);
        for &p in row {
            let p = p as f64;
            if p > first {
                second = first.max(0.0);
                first = p;
            } else if p > second {
                second = p;
            }
        }
        1.0 - (first - second)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{LayerMatrix, Split};

    fn pack(rows: &[[f32; 1]], labels: Vec<u32>) -> FeaturePack {
        FeaturePack::new(
            vec![LayerMatrix::new("l", Matrix::from_rows(rows).unwrap())],
            Some(labels),
            None,
            None,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_three_neighbors() {
        // refs at distance 1, 2 and 4 with labels (match, differ, match)
        let refs = Matrix::from_rows(&[[1.0f32], [-2.0], [4.0]]).unwrap();
        let cfg = KnnConfig::new(3).with_exclude_self(false);
        let c = knn_confidence(&[0.0], 0, &refs, &[0, 1, 0], &cfg, None).unwrap();
        assert!((c - 5.0 / 7.0).abs() < 1e-9, "{c}");
        assert_eq!(
            knn_confidence(&[0.0], 0, &refs, &[0, 0, 0], &cfg, None).unwrap(),
            1.0
        );
        assert_eq!(
            knn_confidence(&[0.0], 2, &refs, &[0, 1, 0], &cfg, None).unwrap(),
            0.0
        );
    }

    #[test]
    fn equal_distance_prefers_lower_index() {
        let refs = Matrix::from_rows(&[[1.0f32], [-1.0]]).unwrap();
        let cfg = KnnConfig::new(1).with_exclude_self(false);
        assert_eq!(
            knn_confidence(&[0.0], 7, &refs, &[7, 3], &cfg, None).unwrap(),
            1.0
        );
        assert_eq!(
            knn_confidence(&[0.0], 3, &refs, &[7, 3], &cfg, None).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_sample_packs() {
        let cfg = KnnConfig::new(1);
        assert_eq!(
            layer_confidences(&pack(&[[0.0], [1.0]], vec![0, 1]), 0, &cfg).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            layer_confidences(&pack(&[[0.0], [1.0]], vec![1, 1]), 0, &cfg).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn k_too_large_and_bad_dims() {
        let p = pack(&[[0.0], [1.0], [2.0]], vec![0, 1, 0]);
        assert!(matches!(
            layer_confidences(&p, 0, &KnnConfig::new(3)).unwrap_err(),
            Error::KTooLarge { k: 3, available: 2 }
        ));
        assert!(matches!(
            layer_confidences(&p, 1, &KnnConfig::new(1)),
            Err(Error::LayerOutOfRange { .. })
        ));
        let refs = Matrix::from_rows(&[[0.0f32, 1.0]]).unwrap();
        assert!(matches!(
            knn_confidence(&[0.0], 0, &refs, &[0], &KnnConfig::new(1), None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn missing_labels() {
        let p = FeaturePack::new(
            vec![LayerMatrix::new(
                "l",
                Matrix::from_rows(&[[0.0f32], [1.0]]).unwrap(),
            )],
            None,
            None,
            None,
            Split::Train,
        )
        .unwrap();
        assert!(matches!(
            layer_confidences(&p, 0, &KnnConfig::new(1)),
            Err(Error::MissingInput("labels"))
        ));
    }

    #[test]
    fn two_layer_mean() {
        // layer 0 puts sample 0 next to a same-label point, layer 1 next to a
        // different-label point
        let l0 = Matrix::from_rows(&[[0.0f32], [0.1], [5.0]]).unwrap();
        let l1 = Matrix::from_rows(&[[0.0f32], [5.0], [0.1]]).unwrap();
        let p = FeaturePack::new(
            vec![LayerMatrix::new("a", l0), LayerMatrix::new("b", l1)],
            Some(vec![0, 0, 1]),
            None,
            None,
            Split::Train,
        )
        .unwrap();
        let cfg = KnnConfig::new(1);
        let s = lc_classification_score(&p, &cfg, None).unwrap();
        assert_eq!(s.values[0], 0.5);
        assert!(s.higher_is_easier);
        assert_eq!(s.params["layers"], json!([0, 1]));
        assert!(lc_classification_score(&p, &cfg, Some(&[])).is_err());
        let single = lc_classification_score(&p, &cfg, Some(&[1])).unwrap();
        assert_eq!(single.values, layer_confidences(&p, 1, &cfg).unwrap());
    }

    #[test]
    fn regression_score() {
        let m = Matrix::from_rows(&[[2.0f32, 4.0]]).unwrap();
        assert_eq!(lc_regression_score(&m).unwrap().values, vec![0.375]);
        let m = Matrix::from_rows(&[[1.0f32, 1.0, 1.0]]).unwrap();
        assert_eq!(lc_regression_score(&m).unwrap().values, vec![1.0]);
        let m = Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert!(matches!(
            lc_regression_score(&m),
            Err(Error::NonPositivePerplexity { col: 1, .. })
        ));
    }

    #[test]
    fn uncertainty_baselines() {
        let one_hot = Matrix::from_rows(&[[0.0f32, 1.0, 0.0]]).unwrap();
        assert_eq!(least_confidence_score(&one_hot).unwrap().values, vec![0.0]);
        assert_eq!(entropy_score(&one_hot).unwrap().values, vec![0.0]);
        assert_eq!(margin_score(&one_hot).unwrap().values, vec![0.0]);

        let uniform = Matrix::from_rows(&[[0.25f32; 4]]).unwrap();
        assert!((least_confidence_score(&uniform).unwrap().values[0] - 0.75).abs() < 1e-12);
        assert!((entropy_score(&uniform).unwrap().values[0] - 4f64.ln()).abs() < 1e-9);
        assert!((margin_score(&uniform).unwrap().values[0] - 1.0).abs() < 1e-12);

        // oracle: -(0.5 ln 0.5 + 0.3 ln 0.3 + 0.2 ln 0.2) = 1.0296530140645737
        let row = Matrix::from_rows(&[[0.5f32, 0.3, 0.2]]).unwrap();
        assert!((least_confidence_score(&row).unwrap().values[0] - 0.5).abs() < 1e-7);
        assert!((entropy_score(&row).unwrap().values[0] - 1.029_653_014_064_573_7).abs() < 1e-6);
        assert!((margin_score(&row).unwrap().values[0] - 0.8).abs() < 1e-6);
        assert!(!entropy_score(&row).unwrap().higher_is_easier);

        let bad = Matrix::from_rows(&[[0.5f32, 0.6]]).unwrap();
        assert!(matches!(
            entropy_score(&bad),
            Err(Error::InvalidProbabilityRow { .. })
        ));
    }

    #[test]
    fn val_accuracy_and_tuning() {
        let train = pack(&[[0.0], [0.2], [5.0], [5.2]], vec![0, 0, 1, 1]);
        let val = pack(&[[0.1], [5.1], [2.4]], vec![0, 1, 1]);
        let acc = knn_val_accuracy(&train, &val, 0, &KnnConfig::new(1)).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        let self_acc = knn_val_accuracy(&train, &train, 0, &KnnConfig::new(1)).unwrap();
        assert_eq!(self_acc, 1.0);
        // k=1 and k=3 give the same accuracy here; smaller wins
        assert_eq!(
            tune_k(&train, &val, 0, &[3, 1], &KnnConfig::new(1)).unwrap(),
            1
        );
        assert!(tune_k(&train, &val, 0, &[], &KnnConfig::new(1)).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let sv = ScoreVector::new(vec![0.1, 1.0 / 3.0, 2.5e-17], "lc", true).with_param("k", 5);
        sv.write(&path).unwrap();
        assert_eq!(ScoreVector::read(&path).unwrap(), sv);

        let ext = dir.path().join("ext.csv");
        fs::write(&ext, "index,score\n0,1.5\n1,-2\n").unwrap();
        let e = ScoreVector::read(&ext).unwrap();
        assert_eq!(e.values, vec![1.5, -2.0]);
        assert_eq!(e.method, "external");
    }
}
