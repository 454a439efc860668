//! Agreement between scoring functions and summaries of selections.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clustering::diversity;
use crate::error::{Error, Result};
use crate::feature_store::{with_suffix, write_atomic, FeaturePack};
use crate::selection::SelectionResult;

/// 1-based ranks; tied values share the mean of their positions.
pub fn rank_vector(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "score vector length",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "rank correlation needs at least 2 samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "rank correlation of non-finite scores".into(),
        ));
    }
    pearson(&rank_vector(a), &rank_vector(b))
}

/// `|s1 ∩ s2| / |s1 ∪ s2|`; two empty selections agree perfectly.
pub fn selection_jaccard(s1: &SelectionResult, s2: &SelectionResult) -> f64 {
    let a: HashSet<usize> = s1.indices.iter().copied().collect();
    let b: HashSet<usize> = s2.indices.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JaccardAtBudget {
    pub eta: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub jaccard_at_budget: Vec<JaccardAtBudget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_histogram: Option<Vec<usize>>,
    pub metadata: BTreeMap<String, Value>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One `metric,value` row per number.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        if let Some(rho) = self.rho {
            out.push_str(&format!("rho,{rho}\n"));
        }
        for j in &self.jaccard_at_budget {
            out.push_str(&format!("jaccard@{},{}\n", j.eta, j.jaccard));
        }
        if let Some(d) = self.diversity_delta {
            out.push_str(&format!("diversity_delta,{d}\n"));
        }
        for (c, count) in self.class_histogram.iter().flatten().enumerate() {
            out.push_str(&format!("class_{c},{count}\n"));
        }
        for (k, v) in &self.metadata {
            if let Some(x) = v.as_f64() {
                out.push_str(&format!("{k},{x}\n"));
            }
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&with_suffix(stem, "json"), self.to_json().as_bytes())?;
        write_atomic(&with_suffix(stem, "csv"), self.to_csv().as_bytes())
    }
}

/// Diversity of the kept samples on `layer` and, when the pack is labelled,
/// how many of each class were kept.
pub fn summarize(
    selection: &SelectionResult,
    pack: &FeaturePack,
    layer: usize,
) -> Result<EvalReport> {
    let n = pack.n_samples();
    if selection.n_total != n {
        return Err(Error::ShapeMismatch {
            what: "selection n_total",
            expected: n,
            found: selection.n_total,
        });
    }
    if let Some(&i) = selection.indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    let features = &pack.layer(layer)?.features;
    let diversity_delta = if selection.indices.len() >= 2 {
        Some(diversity(features, &selection.indices)?)
    } else {
        None
    };
    let class_histogram = match (pack.labels(), pack.num_classes()) {
        (Some(labels), Some(k)) => {
            let mut h = vec![0usize; k];
            for &i in &selection.indices {
                h[labels[i] as usize] += 1;
            }
            Some(h)
        }
        _ => None,
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("method".into(), Value::from(selection.method.clone()));
    metadata.insert(
        "params".into(),
        serde_json::to_value(&selection.params).expect("params serialize"),
    );
    metadata.insert(
        "budget_fraction".into(),
        Value::from(selection.budget_fraction),
    );
    metadata.insert("kept".into(), Value::from(selection.indices.len()));
    metadata.insert("layer".into(), Value::from(layer));
    if let Some(seed) = selection.seed {
        metadata.insert("seed".into(), Value::from(seed));
    }
    Ok(EvalReport {
        rho: None,
        jaccard_at_budget: Vec::new(),
        diversity_delta,
        class_histogram,
        metadata,
    })
}
