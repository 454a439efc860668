//! Command-line surface: one subcommand per pipeline stage, handing off
//! through files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evaluation::{selection_jaccard, spearman, summarize, EvalReport, JaccardAtBudget};
use crate::feature_store::{load_pack, write_atomic, write_pack, FeaturePack, LayerMatrix, Split};
use crate::knn_scoring::{
    entropy_score, knn_val_accuracy, lc_classification_score, lc_regression_score,
    least_confidence_score, margin_score, select_cluster_layer, tune_k, KnnConfig, ScoreVector,
    DEFAULT_K_CANDIDATES, DEFAULT_TIE_EPSILON,
};
use crate::selection::{
    cd_select, easy_diverse_select, herding_select, kcenter_greedy_select, random_select,
    top_k_select, Keep, SelectionResult,
};
use crate::synthetic::{density_check, sample_gmm, GmmSpec};

pub const DEFAULT_CLUSTER_CANDIDATES: [usize; 5] = [8, 12, 16, 20, 24];
pub const DEFAULT_ETA_LIST: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const THREADS_ENV: &str = "LCPRUNE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lcprune",
    version,
    about = "Training-free dataset pruning by learning complexity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every sample of a pack.
    Score(ScoreArgs),
    /// Select a budgeted subset from scores and/or features.
    Select(SelectArgs),
    /// Compare two score files.
    Eval(EvalArgs),
    /// Sample a Gaussian-mixture pack and check confidence against density.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreMethod {
    Lc,
    LcReg,
    LeastConf,
    Entropy,
    Margin,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub method: ScoreMethod,
    /// Pack manifest (or its directory) to score.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation pack used to tune k.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k_candidates: Option<Vec<usize>>,
    /// Layers to average (0-based); all layers by default.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = DEFAULT_TIE_EPSILON)]
    pub tie_epsilon: f64,
    /// Output score CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectMethod {
    /// Easy-and-diverse: per-cluster easiest samples.
    Lc,
    Topk,
    Random,
    Kcg,
    Herding,
    Cd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeepArg {
    Easiest,
    Hardest,
    Highest,
    Lowest,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_enum)]
    pub method: SelectMethod,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Score CSV produced by `score` (or externally).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, conflicts_with = "eta_list")]
    pub eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub eta_list: Option<Vec<f64>>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub cluster_candidates: Option<Vec<usize>>,
    /// Feature layer (0-based) for clustering or geometric baselines.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Neighbour count for validation-accuracy tuning; defaults to the k
    /// recorded in the score sidecar, else 10.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = KeepArg::Easiest)]
    pub keep: KeepArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First pick for k-center style methods.
    #[arg(long)]
    pub initial: Option<usize>,
    /// Run herding over the whole pack instead of per class.
    #[arg(long)]
    pub global_herding: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub eta_list: Option<Vec<f64>>,
    /// Pack whose features give diversity summaries of each selection.
    #[arg(long)]
    pub pack: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    /// Output stem; `<out>.json` and `<out>.csv` are written.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Extra samples written as a validation pack under `<out>/val`.
    #[arg(long, default_value_t = 0)]
    pub val_n: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Mixture spec JSON overriding the class/dim/separation flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::Usage(e.to_string().trim_end().to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        Error::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn require_seed(seed: Option<u64>, method: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Usage(format!("--seed is required for method {method}")))
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let train = load_pack(&args.train)?;
    let scores = match args.method {
        ScoreMethod::Lc => score_lc(args, &train)?,
        ScoreMethod::LcReg => {
            let ppl = train
                .perplexities()
                .ok_or(Error::MissingInput("perplexities"))?;
            lc_regression_score(ppl)?
        }
        ScoreMethod::LeastConf => {
            least_confidence_score(train.probs().ok_or(Error::MissingInput("probs"))?)?
        }
        ScoreMethod::Entropy => entropy_score(train.probs().ok_or(Error::MissingInput("probs"))?)?,
        ScoreMethod::Margin => margin_score(train.probs().ok_or(Error::MissingInput("probs"))?)?,
    };
    let mut scores = scores;
    scores.source_digest = Some(train.digest());
    scores
        .params
        .insert("train".into(), json!(args.train.display().to_string()));
    scores.write(&args.out)
}

fn score_lc(args: &ScoreArgs, train: &FeaturePack) -> Result<ScoreVector> {
    let layers: Vec<usize> = args
        .layers
        .clone()
        .unwrap_or_else(|| (0..train.num_layers()).collect());
    if layers.is_empty() {
        return Err(Error::Usage("pack has no feature layers to score".into()));
    }
    let base = KnnConfig {
        k: 1,
        exclude_self: true,
        tie_epsilon: args.tie_epsilon,
        normalize: args.normalize,
    };
    let mut tuning = None;
    let k = match (args.k, &args.val) {
        (Some(k), _) => k,
        (None, Some(val_path)) => {
            let val = load_pack(val_path)?;
            let candidates = match &args.k_candidates {
                Some(c) => c.clone(),
                None => DEFAULT_K_CANDIDATES
                    .iter()
                    .copied()
                    .filter(|&k| k < train.n_samples())
                    .collect(),
            };
            // tuned on the deepest scored layer
            let tune_layer = *layers.iter().max().expect("non-empty");
            let k = tune_k(train, &val, tune_layer, &candidates, &base)?;
            tuning = Some((candidates, tune_layer));
            k
        }
        (None, None) if args.k_candidates.is_some() => {
            return Err(Error::Usage("--k-candidates requires --val".into()))
        }
        (None, None) => {
            return Err(Error::Usage(
                "method lc needs --k or a --val pack to tune k".into(),
            ))
        }
    };
    let mut scores = lc_classification_score(train, &KnnConfig { k, ..base }, Some(&layers))?;
    if let Some((candidates, layer)) = tuning {
        scores
            .params
            .insert("k_candidates".into(), json!(candidates));
        scores
            .params
            .insert("k_tuned_on_layer".into(), json!(layer));
        scores.params.insert(
            "val".into(),
            json!(args.val.as_ref().map(|p| p.display().to_string())),
        );
    }
    Ok(scores)
}

fn eta_values(eta: Option<f64>, list: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    match (eta, list) {
        (Some(e), _) => Ok(vec![e]),
        (None, Some(l)) if !l.is_empty() => Ok(l.clone()),
        _ => Err(Error::Usage(
            "one of --eta or --eta-list is required".into(),
        )),
    }
}

fn eta_tag(eta: f64) -> String {
    format!("eta{eta}")
}

fn load_scores(path: &Option<PathBuf>, n: usize, method: &str) -> Result<ScoreVector> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("method {method} needs --scores")))?;
    let scores = ScoreVector::read(path)?;
    if scores.len() != n {
        return Err(Error::ShapeMismatch {
            what: "score file length",
            expected: n,
            found: scores.len(),
        });
    }
    Ok(scores)
}

fn keep_direction(keep: KeepArg, scores: &ScoreVector) -> Keep {
    match keep {
        KeepArg::Easiest => Keep::easiest(scores),
        KeepArg::Hardest => Keep::hardest(scores),
        KeepArg::Highest => Keep::Highest,
        KeepArg::Lowest => Keep::Lowest,
    }
}

/// Validation accuracy of a KNN classifier whose references are only the
/// selected training samples.
fn subset_val_accuracy(
    train: &FeaturePack,
    val: &FeaturePack,
    layer: usize,
    subset: &[usize],
    k: usize,
) -> Result<f64> {
    let labels = train.require_labels()?;
    let features = &train.layer(layer)?.features;
    let rows: Vec<&[f32]> = subset.iter().map(|&i| features.row(i)).collect();
    let sub = FeaturePack::new(
        vec![LayerMatrix::new(
            "subset",
            crate::feature_store::Matrix::from_rows(&rows)?,
        )],
        Some(subset.iter().map(|&i| labels[i]).collect()),
        None,
        None,
        Split::Train,
    )?;
    // val layers other than `layer` are irrelevant; align indices by
    // building a one-layer view of the validation pack too
    let vsub = FeaturePack::new(
        vec![LayerMatrix::new("val", val.layer(layer)?.features.clone())],
        Some(val.require_labels()?.to_vec()),
        None,
        None,
        Split::Val,
    )?;
    knn_val_accuracy(&sub, &vsub, 0, &KnnConfig::new(k.min(subset.len())))
}

pub fn cmd_select(args: &SelectArgs) -> Result<()> {
    let train = load_pack(&args.train)?;
    let val = args.val.as_ref().map(load_pack).transpose()?;
    let etas = eta_values(args.eta, &args.eta_list)?;
    let n = train.n_samples();
    let method_name = format!("{:?}", args.method).to_lowercase();

    let seed = match args.method {
        SelectMethod::Lc | SelectMethod::Random | SelectMethod::Kcg | SelectMethod::Cd => {
            Some(require_seed(args.seed, &method_name)?)
        }
        SelectMethod::Topk | SelectMethod::Herding => args.seed,
    };
    let scores = match args.method {
        SelectMethod::Lc | SelectMethod::Topk => Some(load_scores(&args.scores, n, &method_name)?),
        _ => None,
    };
    let tuning_k = args
        .k
        .or_else(|| {
            scores
                .as_ref()
                .and_then(|s| s.params.get("k"))
                .and_then(Value::as_u64)
                .map(|k| k as usize)
        })
        .unwrap_or(10);
    let layer = match (args.layer, &val) {
        (Some(l), _) => {
            if train.num_layers() > 0 {
                train.layer(l)?;
            }
            Some(l)
        }
        (None, Some(v)) if train.num_layers() > 0 && train.labels().is_some() => {
            let k = tuning_k.min(n);
            Some(select_cluster_layer(
                &train,
                v,
                &KnnConfig::new(k).with_exclude_self(false),
            )?)
        }
        (None, _) if train.num_layers() > 0 => Some(train.num_layers() - 1),
        (None, _) => None,
    };
    let need_layer = || layer.ok_or(Error::MissingInput("feature layers"));

    let mut outputs: Vec<(f64, SelectionResult, Option<EvalReport>)> = Vec::new();
    for &eta in &etas {
        let mut result = match args.method {
            SelectMethod::Lc => {
                let scores = scores.as_ref().expect("loaded above");
                let layer = need_layer()?;
                let seed = seed.expect("seeded");
                let k_clusters = match (args.clusters, &val) {
                    (Some(c), _) => c,
                    (None, Some(v)) => {
                        let candidates = args
                            .cluster_candidates
                            .clone()
                            .unwrap_or_else(|| DEFAULT_CLUSTER_CANDIDATES.to_vec());
                        let mut best: Option<(usize, f64)> = None;
                        let mut sorted = candidates.clone();
                        sorted.sort_unstable();
                        sorted.dedup();
                        for c in sorted.into_iter().filter(|&c| c <= n) {
                            let sel = easy_diverse_select(&train, scores, layer, c, eta, seed)?;
                            if sel.is_empty() {
                                continue;
                            }
                            let acc =
                                subset_val_accuracy(&train, v, layer, &sel.indices, tuning_k)?;
                            if best.is_none_or(|(_, b)| acc > b) {
                                best = Some((c, acc));
                            }
                        }
                        best.map(|(c, _)| c).unwrap_or_else(|| {
                            candidates
                                .iter()
                                .copied()
                                .filter(|&c| c <= n)
                                .min()
                                .unwrap_or(1)
                        })
                    }
                    (None, None) => {
                        return Err(Error::Usage(
                            "method lc needs --clusters or a --val pack to tune them".into(),
                        ))
                    }
                };
                let mut r = easy_diverse_select(&train, scores, layer, k_clusters, eta, seed)?;
                if args.clusters.is_none() {
                    r.params.insert(
                        "cluster_candidates".into(),
                        json!(args
                            .cluster_candidates
                            .clone()
                            .unwrap_or_else(|| DEFAULT_CLUSTER_CANDIDATES.to_vec())),
                    );
                }
                r
            }
            SelectMethod::Topk => {
                let scores = scores.as_ref().expect("loaded above");
                top_k_select(scores, eta, keep_direction(args.keep, scores))?
            }
            SelectMethod::Random => random_select(n, eta, seed.expect("seeded"))?,
            SelectMethod::Kcg => {
                let layer = need_layer()?;
                let mut r = kcenter_greedy_select(
                    &train.layer(layer)?.features,
                    eta,
                    seed.expect("seeded"),
                    args.initial,
                )?;
                r.params.insert("layer".into(), json!(layer));
                r
            }
            SelectMethod::Herding => {
                let layer = need_layer()?;
                let per_class = !args.global_herding && train.labels().is_some();
                let mut r = herding_select(
                    &train.layer(layer)?.features,
                    train.labels(),
                    eta,
                    per_class,
                )?;
                r.params.insert("layer".into(), json!(layer));
                r
            }
            SelectMethod::Cd => {
                let probs = train.probs().ok_or(Error::MissingInput("probs"))?;
                cd_select(probs, eta, seed.expect("seeded"), args.initial)?
            }
        };
        result
            .params
            .insert("train".into(), json!(args.train.display().to_string()));
        let report = match layer {
            Some(l) if train.num_layers() > 0 => Some(summarize(&result, &train, l)?),
            _ => None,
        };
        outputs.push((eta, result, report));
    }

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (eta, result, report) in outputs {
        let tag = eta_tag(eta);
        result.write(&args.out.join(format!("selection_{tag}")))?;
        if let Some(report) = report {
            report.write(&args.out.join(format!("report_{tag}")))?;
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let a = ScoreVector::read(&args.a)?;
    let b = ScoreVector::read(&args.b)?;
    let rho = spearman(&a.values, &b.values)?;
    let etas = args
        .eta_list
        .clone()
        .unwrap_or_else(|| DEFAULT_ETA_LIST.to_vec());
    let pack = args.pack.as_ref().map(load_pack).transpose()?;
    if let Some(p) = &pack {
        if p.n_samples() != a.len() {
            return Err(Error::ShapeMismatch {
                what: "pack sample count",
                expected: a.len(),
                found: p.n_samples(),
            });
        }
    }

    let mut report = EvalReport {
        rho: Some(rho),
        ..Default::default()
    };
    for &eta in &etas {
        let sa = top_k_select(&a, eta, Keep::easiest(&a))?;
        let sb = top_k_select(&b, eta, Keep::easiest(&b))?;
        report.jaccard_at_budget.push(JaccardAtBudget {
            eta,
            jaccard: selection_jaccard(&sa, &sb),
        });
        if let Some(p) = &pack {
            for (name, sel) in [("a", &sa), ("b", &sb)] {
                let s = summarize(sel, p, args.layer)?;
                if let Some(d) = s.diversity_delta {
                    report
                        .metadata
                        .insert(format!("diversity_{name}@{eta}"), json!(d));
                }
            }
        }
    }
    report.metadata.insert("a_method".into(), json!(a.method));
    report.metadata.insert("b_method".into(), json!(b.method));
    report.metadata.insert("a_params".into(), json!(a.params));
    report.metadata.insert("b_params".into(), json!(b.params));
    report.metadata.insert("n".into(), json!(a.len()));
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    report.write(&args.out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let seed = require_seed(args.seed, "synth")?;
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut spec: GmmSpec = serde_json::from_str(&text).map_err(|e| Error::Manifest {
                path: path.clone(),
                message: e.to_string(),
            })?;
            spec.seed = seed;
            spec.validate()?;
            spec
        }
        None => GmmSpec::separated_classes(args.classes, args.dim, args.separation, seed)?,
    };
    let cfg = KnnConfig::new(args.k);
    let (synth, report) = density_check(&spec, args.n, &cfg)?;
    let val = if args.val_n > 0 {
        // the first n draws of the longer stream are exactly the train pack
        let all = sample_gmm(&spec, args.n + args.val_n)?;
        let features = &all.pack.layer(0)?.features;
        let rows: Vec<&[f32]> = (args.n..args.n + args.val_n)
            .map(|i| features.row(i))
            .collect();
        let labels = all.pack.labels().expect("synthetic packs are labelled")[args.n..].to_vec();
        Some(FeaturePack::new(
            vec![LayerMatrix::new(
                "gmm",
                crate::feature_store::Matrix::from_rows(&rows)?,
            )],
            Some(labels),
            None,
            None,
            Split::Val,
        )?)
    } else {
        None
    };

    let out = &args.out;
    let train = FeaturePack::new(
        synth.pack.layers().to_vec(),
        synth.pack.labels().map(<[u32]>::to_vec),
        None,
        None,
        if val.is_some() {
            Split::Train
        } else {
            Split::Unsplit
        },
    )?;
    write_pack(&train, out)?;
    if let Some(v) = &val {
        write_pack(v, out.join("val"))?;
    }
    write_atomic(&out.join("densities.csv"), synth.densities_csv().as_bytes())?;
    let mut spec_json = serde_json::to_vec_pretty(&spec).expect("spec serializes");
    spec_json.push(b'\n');
    write_atomic(&out.join("spec.json"), &spec_json)?;
    let mut rep = serde_json::to_vec_pretty(&report).expect("report serializes");
    rep.push(b'\n');
    write_atomic(&out.join("density_report.json"), &rep)
}

/// Path helper for callers that pass a directory holding `pack.json`.
pub fn pack_manifest(dir: &Path) -> PathBuf {
    crate::feature_store::manifest_path(dir)
}
