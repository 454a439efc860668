//! Training-free dataset pruning by learning complexity.
//!
//! Samples of a fine-tuning set are scored by the average confidence of a
//! weighted KNN classifier evaluated on the features of several layers of a
//! frozen pre-trained encoder (or, for language data, by the mean reciprocal
//! perplexity across dropout subnets). Subsets are then chosen under a budget,
//! either by plain top-k or by keeping the easiest samples of each K-means
//! cluster.
//!
//! All inputs are exported matrices described by a [`feature_store::Manifest`];
//! no model is run here.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod feature_store;
pub mod knn_scoring;
pub mod selection;
pub mod synthetic;

pub use clustering::{diversity, kmeans, ClusterModel};
pub use error::{Error, Result};
pub use evaluation::{rank_vector, selection_jaccard, spearman, summarize, EvalReport};
pub use feature_store::{
    load_pack, load_text_matrix, write_pack, FeaturePack, LayerMatrix, Manifest, Matrix, Split,
};
pub use knn_scoring::{KnnConfig, ScoreVector};
pub use selection::{budget_size, Keep, LevelSet, SelectionResult};
pub use synthetic::{GmmComponent, GmmSpec, SyntheticPack};
