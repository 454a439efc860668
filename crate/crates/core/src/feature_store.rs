//! On-disk dataset representation.
//!
//! A pack is a directory holding a `pack.json` manifest and headerless binary
//! files: little-endian `f32` row-major matrices for features, probabilities
//! and perplexities, little-endian `u32` for labels. All shape information
//! lives in the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "pack.json";
/// Allowed deviation of a probability row sum from 1.
pub const PROB_ROW_TOLERANCE: f64 = 1e-4;

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix, rejecting empty shapes, a wrong buffer length and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_source("matrix", rows, cols, data)
    }

    fn with_source(source: &str, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "{source}: matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "matrix buffer length",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                source_name: source.to_string(),
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::RaggedRow {
                    source_name: "matrix".into(),
                    line: i + 1,
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols)
    }

    /// Copy with every row scaled to unit L2 norm. Zero rows stay zero.
    pub fn l2_normalized(&self) -> Matrix {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols) {
            let norm = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Features of one encoder layer, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    pub name: String,
    pub features: Matrix,
}

impl LayerMatrix {
    pub fn new(name: impl Into<String>, features: Matrix) -> Self {
        LayerMatrix {
            name: name.into(),
            features,
        }
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Unsplit,
}

/// A dataset's exported matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    n_samples: usize,
    layers: Vec<LayerMatrix>,
    labels: Option<Vec<u32>>,
    probs: Option<Matrix>,
    perplexities: Option<Matrix>,
    split: Split,
}

impl FeaturePack {
    /// Assembles a pack and checks every cross-matrix invariant.
    pub fn new(
        layers: Vec<LayerMatrix>,
        labels: Option<Vec<u32>>,
        probs: Option<Matrix>,
        perplexities: Option<Matrix>,
        split: Split,
    ) -> Result<Self> {
        let n_samples = layers
            .first()
            .map(LayerMatrix::n)
            .or_else(|| labels.as_ref().map(Vec::len))
            .or_else(|| probs.as_ref().map(Matrix::rows))
            .or_else(|| perplexities.as_ref().map(Matrix::rows))
            .ok_or_else(|| Error::InvalidArgument("pack declares no data".into()))?;
        if n_samples == 0 {
            return Err(Error::InvalidArgument("pack has zero samples".into()));
        }
        for layer in &layers {
            check_rows(&layer.name, layer.n(), n_samples)?;
        }
        if let Some(probs) = &probs {
            check_rows("probs", probs.rows(), n_samples)?;
            validate_probability_rows("probs", probs)?;
        }
        if let Some(ppl) = &perplexities {
            check_rows("perplexities", ppl.rows(), n_samples)?;
            validate_perplexities("perplexities", ppl)?;
        }
        if let Some(labels) = &labels {
            check_rows("labels", labels.len(), n_samples)?;
            if let Some(probs) = &probs {
                if let Some((row, &label)) = labels
                    .iter()
                    .enumerate()
                    .find(|(_, &l)| l as usize >= probs.cols())
                {
                    return Err(Error::LabelOutOfRange {
                        source_name: "labels".into(),
                        row,
                        label,
                        num_classes: probs.cols(),
                    });
                }
            }
        }
        Ok(FeaturePack {
            n_samples,
            layers,
            labels,
            probs,
            perplexities,
            split,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn layers(&self) -> &[LayerMatrix] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, index: usize) -> Result<&LayerMatrix> {
        self.layers.get(index).ok_or(Error::LayerOutOfRange {
            index,
            layers: self.layers.len(),
        })
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels().ok_or(Error::MissingInput("labels"))
    }

    pub fn probs(&self) -> Option<&Matrix> {
        self.probs.as_ref()
    }

    pub fn perplexities(&self) -> Option<&Matrix> {
        self.perplexities.as_ref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Class count: the probability width when present, else `max(label) + 1`.
    pub fn num_classes(&self) -> Option<usize> {
        if let Some(p) = &self.probs {
            return Some(p.cols());
        }
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map(|&m| m as usize + 1)
    }

    /// SHA-256 over every matrix in the pack, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_samples as u64).to_le_bytes());
        for layer in &self.layers {
            h.update(layer.name.as_bytes());
            h.update((layer.dim() as u64).to_le_bytes());
            h.update(layer.features.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            h.update(b"labels");
            for l in labels {
                h.update(l.to_le_bytes());
            }
        }
        if let Some(p) = &self.probs {
            h.update(b"probs");
            h.update(p.to_le_bytes());
        }
        if let Some(p) = &self.perplexities {
            h.update(b"perplexities");
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn check_rows(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidArgument(format!(
            "{what}: has {found} rows but the pack has {expected} samples"
        )));
    }
    Ok(())
}

/// Nonnegative entries, each row summing to 1 within [`PROB_ROW_TOLERANCE`].
pub(crate) fn validate_probability_rows(source: &str, probs: &Matrix) -> Result<()> {
    for (row, values) in probs.iter_rows().enumerate() {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidProbabilityRow {
                source_name: source.into(),
                row,
                reason: format!("entry {v} is negative or non-finite"),
            });
        }
        let sum: f64 = values.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > PROB_ROW_TOLERANCE {
            return Err(Error::InvalidProbabilityRow {
                source_name: source.into(),
                row,
                reason: format!("sums to {sum}"),
            });
        }
    }
    Ok(())
}

pub(crate) fn validate_perplexities(source: &str, ppl: &Matrix) -> Result<()> {
    for (row, values) in ppl.iter_rows().enumerate() {
        if let Some(col) = values.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::NonPositivePerplexity {
                source_name: source.into(),
                row,
                col,
                value: values[col],
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub dim: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsEntry {
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbsEntry {
    pub num_classes: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerplexitiesEntry {
    pub num_subnets: usize,
    pub file: String,
}

/// Contents of `pack.json`. File paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub n_samples: usize,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<ProbsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexities: Option<PerplexitiesEntry>,
    pub split: Split,
}

/// Resolves a manifest path; a directory means `<dir>/pack.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a pack. Either everything loads or an error names the
/// offending file and row.
pub fn load_pack(path: impl AsRef<Path>) -> Result<FeaturePack> {
    let path = manifest_path(path.as_ref());
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.clone() },
        _ => Error::io(&path, e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            path,
            message: format!("unsupported version {}", manifest.version),
        });
    }
    if manifest.n_samples == 0 {
        return Err(Error::Manifest {
            path,
            message: "n_samples must be positive".into(),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let n = manifest.n_samples;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        if entry.dim == 0 {
            return Err(Error::Manifest {
                path,
                message: format!("layer {:?} has zero dimension", entry.name),
            });
        }
        let file = base.join(&entry.file);
        let data = read_f32_file(&file, n, entry.dim)?;
        let features = Matrix::with_source(&file.display().to_string(), n, entry.dim, data)?;
        layers.push(LayerMatrix::new(entry.name.clone(), features));
    }

    let probs = match &manifest.probs {
        Some(entry) => {
            let file = base.join(&entry.file);
            let source = file.display().to_string();
            let m = Matrix::with_source(
                &source,
                n,
                entry.num_classes,
                read_f32_file(&file, n, entry.num_classes)?,
            )?;
            validate_probability_rows(&source, &m)?;
            Some(m)
        }
        None => None,
    };

    let perplexities = match &manifest.perplexities {
        Some(entry) => {
            let file = base.join(&entry.file);
            let source = file.display().to_string();
            let m = Matrix::with_source(
                &source,
                n,
                entry.num_subnets,
                read_f32_file(&file, n, entry.num_subnets)?,
            )?;
            validate_perplexities(&source, &m)?;
            Some(m)
        }
        None => None,
    };

    let labels = match &manifest.labels {
        Some(entry) => {
            let file = base.join(&entry.file);
            let bytes = read_exact_len(&file, n as u64 * 4)?;
            let labels: Vec<u32> = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(probs) = &probs {
                if let Some((row, &label)) = labels
                    .iter()
                    .enumerate()
                    .find(|(_, &l)| l as usize >= probs.cols())
                {
                    return Err(Error::LabelOutOfRange {
                        source_name: file.display().to_string(),
                        row,
                        label,
                        num_classes: probs.cols(),
                    });
                }
            }
            Some(labels)
        }
        None => None,
    };

    if layers.is_empty() && labels.is_none() && probs.is_none() && perplexities.is_none() {
        return Err(Error::Manifest {
            path,
            message: "manifest declares no data files".into(),
        });
    }
    FeaturePack::new(layers, labels, probs, perplexities, manifest.split)
}

fn read_exact_len(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn read_f32_file(path: &Path, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let bytes = read_exact_len(path, (rows * cols) as u64 * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Parses a delimiter-separated numeric table. Blank lines are skipped; line
/// and column numbers in errors are 1-based.
pub fn parse_text_matrix(text: &str, delimiter: char, source: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, token) in line.split(delimiter).enumerate() {
            let token = token.trim();
            let v: f32 = token.parse().map_err(|_| Error::Parse {
                source_name: source.into(),
                row: line_no,
                col: col + 1,
                token: token.into(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    source_name: source.into(),
                    row: line_no,
                    col: col + 1,
                });
            }
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::RaggedRow {
                    source_name: source.into(),
                    line: line_no,
                    expected: c,
                    found: count,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::with_source(source, rows, cols.unwrap_or(0), data)
}

pub fn load_text_matrix(path: impl AsRef<Path>, delimiter: char) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text_matrix(&text, delimiter, &path.display().to_string())
}

/// `stem` plus `.ext`, keeping any dots already in the file name.
pub(crate) fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so a failed run never leaves a truncated file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes every matrix of `pack` plus `pack.json` into `dir`, creating it if
/// needed.
pub fn write_pack(pack: &FeaturePack, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut layers = Vec::with_capacity(pack.layers.len());
    for (i, layer) in pack.layers.iter().enumerate() {
        let file = format!("layer_{i}.f32");
        write_atomic(&dir.join(&file), &layer.features.to_le_bytes())?;
        layers.push(LayerEntry {
            name: layer.name.clone(),
            dim: layer.dim(),
            file,
        });
    }
    let labels = match &pack.labels {
        Some(l) => {
            let file = "labels.u32".to_string();
            let bytes: Vec<u8> = l.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_atomic(&dir.join(&file), &bytes)?;
            Some(LabelsEntry { file })
        }
        None => None,
    };
    let probs = match &pack.probs {
        Some(p) => {
            let file = "probs.f32".to_string();
            write_atomic(&dir.join(&file), &p.to_le_bytes())?;
            Some(ProbsEntry {
                num_classes: p.cols(),
                file,
            })
        }
        None => None,
    };
    let perplexities = match &pack.perplexities {
        Some(p) => {
            let file = "perplexities.f32".to_string();
            write_atomic(&dir.join(&file), &p.to_le_bytes())?;
            Some(PerplexitiesEntry {
                num_subnets: p.cols(),
                file,
            })
        }
        None => None,
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n_samples: pack.n_samples,
        layers,
        labels,
        probs,
        perplexities,
        split: pack.split,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}
