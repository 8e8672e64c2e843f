//! Interpretable GA2M models (main effects plus pairwise interactions) fitted
//! by boosting specialized model-based trees.
//!
//! The fitting pipeline alternates a main-effect boosting stage, interaction
//! screening over all variable pairs, and an interaction boosting stage, for
//! several rounds. Fitted models are then purified so that every interaction
//! surface is orthogonal to the main effects of its two variables, and each
//! component gets an importance score.

pub mod dataset;
pub mod error;
mod linalg;
pub mod losses;
pub mod mbtree;
pub mod boost;
pub mod filter;
pub mod gami;
pub mod purify;
pub mod metrics;
pub mod sim;
mod serde_float;

pub use dataset::{load_csv, load_csv_maybe_labeled, make_bins, quantile_knots, split_train_valid, BinIndex, Dataset, SplineBasis, Task};
pub use error::{GamiError, Result};
pub use losses::{grad_hess, init_offset, mean_loss, LossGrad};
pub use mbtree::{grow_tree, ModelBasedTree, NodeModel, TreeKind, TreeParams};
pub use boost::{BoostParams, FeatureCache, Predictions, ScaledTree, StageResult};
pub use filter::{fast_filter, filter_interactions, FilterParams, PairRanking, PairScore};
pub use gami::{fit_gami, fit_gami_with, FittedModel, GamiConfig, StageEvent};
pub use purify::{assemble_raw_effects, export_effect_grids, importance, purify_effects, EffectSet, Importance};
pub use sim::{simulate, SimData, SimScenario};
