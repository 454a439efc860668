//! Diagonal Gaussian mixtures with an exact density, used to check that
//! weighted KNN confidence tracks feature density.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::spearman;
use crate::feature_store::{FeaturePack, LayerMatrix, Matrix, Split};
use crate::knn_scoring::{layer_confidences, KnnConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub class: u32,
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub dim: usize,
    pub components: Vec<GmmComponent>,
    pub seed: u64,
}

impl GmmSpec {
    /// Equal-weight classes with unit variance, their means spaced
    /// `separation` apart along the first axis and centred on the origin.
    /// Two classes with separation 6 in 2-D gives means (-3, 0) and (3, 0).
    pub fn separated_classes(
        classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs at least one class and one dimension".into(),
            ));
        }
        let offset = separation * (classes as f64 - 1.0) / 2.0;
        let components = (0..classes)
            .map(|c| {
                let mut mean = vec![0.0; dim];
                mean[0] = c as f64 * separation - offset;
                GmmComponent {
                    class: c as u32,
                    weight: 1.0 / classes as f64,
                    mean,
                    var: vec![1.0; dim],
                }
            })
            .collect();
        let spec = GmmSpec {
            dim,
            components,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two 2-D classes at (-3, 0) and (3, 0), unit variance, equal weights.
    pub fn reference(seed: u64) -> Self {
        Self::separated_classes(2, 2, 6.0, seed).expect("reference mixture is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture has no components".into()));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != self.dim || c.var.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    what: "mixture component dimension",
                    expected: self.dim,
                    found: c.mean.len().min(c.var.len()),
                });
            }
            if c.weight.is_nan()
                || c.weight <= 0.0
                || c.var.iter().any(|v| v.is_nan() || *v <= 0.0)
                || c.mean.iter().any(|m| !m.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "component {i} needs a positive weight, positive variances and a finite mean"
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.class as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Mixture density at a point and the weighted density of each class
/// (`p = sum of per_class`).
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub total: f64,
    pub per_class: Vec<f64>,
}

fn diag_normal_pdf(point: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut log = 0.0;
    for ((&x, &m), &v) in point.iter().zip(mean).zip(var) {
        log += -0.5 * (x - m) * (x - m) / v - 0.5 * (2.0 * PI * v).ln();
    }
    log.exp()
}

pub fn gmm_density(spec: &GmmSpec, point: &[f64]) -> Result<Density> {
    if point.len() != spec.dim {
        return Err(Error::ShapeMismatch {
            what: "point dimension",
            expected: spec.dim,
            found: point.len(),
        });
    }
    let mut per_class = vec![0.0; spec.num_classes()];
    for c in &spec.components {
        per_class[c.class as usize] += c.weight * diag_normal_pdf(point, &c.mean, &c.var);
    }
    Ok(Density {
        total: per_class.iter().sum(),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPack {
    pub pack: FeaturePack,
    /// Mixture density at each stored (f32) feature row.
    pub true_density: Vec<f64>,
    /// Density of the sample's own class at its feature row.
    pub true_class_density: Vec<f64>,
}

impl SyntheticPack {
    /// `index,p,p_class` rows.
    pub fn densities_csv(&self) -> String {
        let mut out = String::from("index,p,p_class\n");
        for (i, (p, pc)) in self
            .true_density
            .iter()
            .zip(&self.true_class_density)
            .enumerate()
        {
            out.push_str(&format!("{i},{p},{pc}\n"));
        }
        out
    }
}

/// Draws `n` samples: a component by weight, then a diagonal Gaussian draw.
pub fn sample_gmm(spec: &GmmSpec, n: usize) -> Result<SyntheticPack> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = spec.components.last().expect("validated non-empty");
        for c in &spec.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        for (m, v) in chosen.mean.iter().zip(&chosen.var) {
            let z: f64 = rng.sample(StandardNormal);
            data.push((m + v.sqrt() * z) as f32);
        }
        labels.push(chosen.class);
    }
    let features = Matrix::new(n, spec.dim, data)?;
    let mut true_density = Vec::with_capacity(n);
    let mut true_class_density = Vec::with_capacity(n);
    for (row, &label) in features.iter_rows().zip(&labels) {
        let point: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let d = gmm_density(spec, &point)?;
        true_density.push(d.total);
        true_class_density.push(d.per_class[label as usize]);
    }
    let pack = FeaturePack::new(
        vec![LayerMatrix::new("gmm", features)],
        Some(labels),
        None,
        None,
        Split::Unsplit,
    )?;
    Ok(SyntheticPack {
        pack,
        true_density,
        true_class_density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub rho: f64,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Mean confidence of the 10% densest samples.
    pub top_decile_confidence: f64,
    /// Mean confidence of the 10% sparsest samples.
    pub bottom_decile_confidence: f64,
    #[serde(skip)]
    pub confidences: Vec<f64>,
    #[serde(skip)]
    pub densities: Vec<f64>,
}

/// Samples the mixture, scores every sample by single-layer KNN confidence
/// (self excluded) and rank-correlates confidence with the true density.
pub fn density_check(
    spec: &GmmSpec,
    n: usize,
    cfg: &KnnConfig,
) -> Result<(SyntheticPack, DensityReport)> {
    let synth = sample_gmm(spec, n)?;
    let cfg = cfg.with_exclude_self(true);
    let confidences = layer_confidences(&synth.pack, 0, &cfg)?;
    let rho = spearman(&confidences, &synth.true_density)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        synth.true_density[a]
            .total_cmp(&synth.true_density[b])
            .then(a.cmp(&b))
    });
    let decile = (n / 10).max(1);
    let mean_of =
        |idx: &[usize]| idx.iter().map(|&i| confidences[i]).sum::<f64>() / idx.len() as f64;
    let report = DensityReport {
        rho,
        n,
        k: cfg.k,
        seed: spec.seed,
        top_decile_confidence: mean_of(&order[n - decile..]),
        bottom_decile_confidence: mean_of(&order[..decile]),
        densities: synth.true_density.clone(),
        confidences,
    };
    Ok((synth, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_origin() {
        let spec = GmmSpec {
            dim: 1,
            components: vec![GmmComponent {
                class: 0,
                weight: 1.0,
                mean: vec![0.0],
                var: vec![1.0],
            }],
            seed: 0,
        };
        let d = gmm_density(&spec, &[0.0]).unwrap();
        assert!((d.total - 0.398_942_280_401_432_7).abs() < 1e-12);

        let mut twice = spec.clone();
        twice.components = vec![
            GmmComponent {
                weight: 0.5,
                ..spec.components[0].clone()
            },
            GmmComponent {
                weight: 0.5,
                ..spec.components[0].clone()
            },
        ];
        for x in [-1.3, 0.0, 2.2] {
            let a = gmm_density(&spec, &[x]).unwrap().total;
            let b = gmm_density(&twice, &[x]).unwrap().total;
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_variance_collapses_to_mean() {
        let spec = GmmSpec {
            dim: 2,
            components: vec![GmmComponent {
                class: 3,
                weight: 1.0,
                mean: vec![1.5, -2.0],
                var: vec![1e-12, 1e-12],
            }],
            seed: 4,
        };
        let s = sample_gmm(&spec, 50).unwrap();
        assert!(s.pack.labels().unwrap().iter().all(|&l| l == 3));
        for row in s.pack.layer(0).unwrap().features.iter_rows() {
            assert!((row[0] - 1.5).abs() < 1e-4 && (row[1] + 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn reference_means() {
        let spec = GmmSpec::reference(7);
        assert_eq!(spec.components[0].mean, vec![-3.0, 0.0]);
        assert_eq!(spec.components[1].mean, vec![3.0, 0.0]);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = GmmSpec::reference(0);
        spec.components[0].weight = 0.7;
        assert!(spec.validate().is_err());
        let mut spec = GmmSpec::reference(0);
        spec.components[1].var[0] = 0.0;
        assert!(spec.validate().is_err());
        assert!(gmm_density(&GmmSpec::reference(0), &[0.0]).is_err());
    }

    #[test]
    fn deterministic_sampling() {
        let spec = GmmSpec::reference(11);
        assert_eq!(
            sample_gmm(&spec, 200).unwrap(),
            sample_gmm(&spec, 200).unwrap()
        );
    }

    #[test]
    fn single_class_confidence_is_constant() {
        let spec = GmmSpec::separated_classes(1, 2, 6.0, 3).unwrap();
        let err = density_check(&spec, 60, &KnnConfig::new(59)).unwrap_err();
        assert!(matches!(err, Error::ConstantVector));
    }
}
