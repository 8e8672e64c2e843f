//! Multi-round fitting: main-effect boosting, interaction screening and
//! interaction boosting, repeated until both boosting stages stop without
//! accepting a tree or the round limit is reached. Also prediction and the
//! JSON model format.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boost::{
    add_tree, fit_interaction_stage, fit_main_stage, BoostParams, FeatureCache, Predictions, ScaledTree, StageResult,
};
use crate::dataset::{Dataset, SplineBasis, Task};
use crate::error::{GamiError, Result};
use crate::filter::{filter_interactions, FilterParams, PairRanking, PairScore};
use crate::losses::{init_offset, sigmoid};
use crate::mbtree::{default_alpha_grid, ModelBasedTree, NodeModel, TreeKind, TreeNode, TreeParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamiConfig {
    /// Maximum boosting iterations per stage.
    pub max_iter: usize,
    /// Tree depth; `None` selects 2 for continuous and 1 for binary targets.
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub nknots: usize,
    /// Maximum number of rounds.
    pub rounds: usize,
    /// Interaction pairs kept per round.
    pub npairs: usize,
    pub alpha_grid: Vec<f64>,
    #[serde(with = "crate::serde_float")]
    pub max_coef: f64,
    /// Early-stopping patience.
    pub patience: usize,
    pub min_leaf: usize,
    pub max_bins: usize,
    /// Row cap for interaction screening.
    pub filter_subsample: usize,
    pub filter_depth: usize,
    pub seed: u64,
}

impl Default for GamiConfig {
    fn default() -> Self {
        GamiConfig {
            max_iter: 1000,
            max_depth: None,
            learning_rate: 0.2,
            nknots: 5,
            rounds: 5,
            npairs: 10,
            alpha_grid: default_alpha_grid(),
            max_coef: 1.0,
            patience: 10,
            min_leaf: 20,
            max_bins: 256,
            filter_subsample: 1_000_000,
            filter_depth: 2,
            seed: 0,
        }
    }
}

impl GamiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GamiError::invalid(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning rate must lie in (0, 1]");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.npairs == 0 {
            return bad("npairs must be at least 1");
        }
        if self.nknots < 2 {
            return bad("nknots must be at least 2");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_depth == Some(0) || self.filter_depth == 0 {
            return bad("tree depth must be at least 1");
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alpha grid must be non-empty, finite and non-negative");
        }
        if self.max_coef.is_nan() || self.max_coef < 0.0 {
            return bad("max_coef must be non-negative");
        }
        if self.max_bins < 2 || self.max_bins > crate::dataset::MAX_BINS_LIMIT {
            return bad("max_bins out of range");
        }
        if self.filter_subsample == 0 {
            return bad("filter_subsample must be positive");
        }
        Ok(())
    }

    pub fn depth_for(&self, task: Task) -> usize {
        self.max_depth.unwrap_or(match task {
            Task::Continuous => 2,
            Task::Binary => 1,
        })
    }

    fn tree_params(&self, depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_leaf: self.min_leaf,
            alpha_grid: self.alpha_grid.clone(),
            max_coef: self.max_coef,
        }
    }

    pub fn boost_params(&self, task: Task) -> BoostParams {
        BoostParams {
            max_iter: self.max_iter,
            learning_rate: self.learning_rate,
            patience: self.patience,
            tree: self.tree_params(self.depth_for(task)),
            spline_interactions: true,
            record_candidates: false,
        }
    }

    /// Screening settings for 0-based round `round`.
    pub fn filter_params(&self, round: usize) -> FilterParams {
        FilterParams {
            q: self.npairs,
            tree: self.tree_params(self.filter_depth),
            spline: true,
            subsample: self.filter_subsample,
            seed: self.seed.wrapping_add(round as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub bin_edges: Vec<f64>,
    pub knots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub main: StageResult,
    pub ranking: PairRanking,
    pub interaction: StageResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Main,
    Interaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub task: Task,
    pub offset: f64,
    pub config: GamiConfig,
    pub features: Vec<FeatureMeta>,
    pub rounds: Vec<RoundRecord>,
}

/// Progress notification emitted after every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEvent {
    /// 1-based round.
    pub round: usize,
    pub stage: &'static str,
    /// Accepted iterations (pairs kept, for screening).
    pub count: usize,
    pub seconds: f64,
    pub valid_loss: f64,
}

pub fn fit_gami(train: &Dataset, valid: &Dataset, config: &GamiConfig) -> Result<FittedModel> {
    fit_gami_with(train, valid, config, |_| {})
}

/// [`fit_gami`] with a per-stage callback.
pub fn fit_gami_with(
    train: &Dataset,
    valid: &Dataset,
    config: &GamiConfig,
    mut on_stage: impl FnMut(&StageEvent),
) -> Result<FittedModel> {
    config.validate()?;
    if train.names() != valid.names() || train.task() != valid.task() {
        return Err(GamiError::SchemaMismatch(
            "train and validation differ in columns or task".into(),
        ));
    }
    if valid.n() == 0 {
        return Err(GamiError::invalid("validation set is empty"));
    }
    let task = train.task();
    let offset = init_offset(train.target(), task)?;
    let cache = FeatureCache::new(train, config.max_bins, config.nknots)?;
    let mut g = Predictions::constant(offset, train.n(), valid.n());
    let params = config.boost_params(task);
    let mut rounds = Vec::new();
    for r in 0..config.rounds {
        let t = Instant::now();
        let main = fit_main_stage(train, valid, &cache, &mut g, &params)?;
        on_stage(&StageEvent {
            round: r + 1,
            stage: "main",
            count: main.stop_iterations,
            seconds: t.elapsed().as_secs_f64(),
            valid_loss: main.validation_curve[main.stop_iterations],
        });
        let t = Instant::now();
        let ranking = if train.p() >= 2 {
            filter_interactions(train, &cache, &g.train, &config.filter_params(r))?
        } else {
            PairRanking::default()
        };
        on_stage(&StageEvent {
            round: r + 1,
            stage: "filter",
            count: ranking.top_pairs.len(),
            seconds: t.elapsed().as_secs_f64(),
            valid_loss: main.validation_curve[main.stop_iterations],
        });
        let t = Instant::now();
        let interaction = fit_interaction_stage(train, valid, &cache, &mut g, &ranking.combos, &params)?;
        on_stage(&StageEvent {
            round: r + 1,
            stage: "interaction",
            count: interaction.stop_iterations,
            seconds: t.elapsed().as_secs_f64(),
            valid_loss: interaction.validation_curve[interaction.stop_iterations],
        });
        let done = main.stop_iterations == 0 && interaction.stop_iterations == 0;
        rounds.push(RoundRecord {
            main,
            ranking,
            interaction,
        });
        if done {
            break;
        }
    }
    let features = (0..train.p())
        .map(|j| FeatureMeta {
            name: train.name(j).to_string(),
            bin_edges: cache.bins[j].edges.clone(),
            knots: cache.bases[j].knots().to_vec(),
        })
        .collect();
    Ok(FittedModel {
        task,
        offset,
        config: config.clone(),
        features,
        rounds,
    })
}

impl FittedModel {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Every retained tree in fit order with its 1-based round and stage.
    pub fn trees(&self) -> impl Iterator<Item = (usize, Stage, &ScaledTree)> {
        self.rounds.iter().enumerate().flat_map(|(r, rec)| {
            rec.main
                .trees
                .iter()
                .map(move |t| (r + 1, Stage::Main, t))
                .chain(rec.interaction.trees.iter().map(move |t| (r + 1, Stage::Interaction, t)))
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees().count()
    }

    /// The model after its first `k` rounds.
    pub fn truncate_rounds(&self, k: usize) -> FittedModel {
        let mut m = self.clone();
        m.rounds.truncate(k);
        m
    }

    /// Training and validation loss after the last round, as recorded during
    /// fitting; `None` for a model without rounds.
    pub fn final_losses(&self) -> Option<(f64, f64)> {
        let last = &self.rounds.last()?.interaction;
        let s = last.stop_iterations;
        Some((last.train_curve[s], last.validation_curve[s]))
    }

    /// Link-scale predictions on a dataset with (at least) the model's features.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let x = ds.project(&self.feature_names())?;
        let mut g = vec![self.offset; x.n()];
        for (_, _, t) in self.trees() {
            add_tree(t, &x, &mut g);
        }
        Ok(g)
    }

    /// Link-scale prediction for one row in model feature order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut g = self.offset;
        for (_, _, t) in self.trees() {
            g += t.predict_with(|j| row[j]);
        }
        g
    }

    /// Response-scale predictions: identity for continuous targets, the
    /// logistic transform for binary targets.
    pub fn predict_response(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let g = self.predict(ds)?;
        Ok(match self.task {
            Task::Continuous => g,
            Task::Binary => g.into_iter().map(sigmoid).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile::from_model(self);
        // serde_json's default map is ordered, so the text is canonical
        let value = serde_json::to_value(&file).map_err(|e| GamiError::InvalidModel(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&value).map_err(|e| GamiError::InvalidModel(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<FittedModel> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format_error(text, &e))?;
        let found = value.get("schema_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(GamiError::VersionMismatch {
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: SCHEMA_VERSION,
                })
            }
            None => {
                return Err(GamiError::ModelFormat {
                    offset: 0,
                    message: "missing schema_version".into(),
                })
            }
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| format_error(text, &e))?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| GamiError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FittedModel> {
        let text = std::fs::read_to_string(path).map_err(|e| GamiError::io(path, e))?;
        FittedModel::from_json(&text)
    }
}

/// Byte offset of a serde_json error position (1-based line and column).
fn format_error(text: &str, e: &serde_json::Error) -> GamiError {
    let offset = if e.line() == 0 {
        0
    } else {
        let line_start: usize = text.split_inclusive('\n').take(e.line() - 1).map(str::len).sum();
        (line_start + e.column().saturating_sub(1)).min(text.len())
    };
    GamiError::ModelFormat {
        offset,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Main,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Design {
    Linear,
    Spline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRecord {
    Split { threshold: f64, left: usize, right: usize },
    Leaf { leaf: NodeModel },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeRecord {
    round: usize,
    stage: Stage,
    kind: KindTag,
    split_var: usize,
    model_var: usize,
    design: Design,
    depth: usize,
    nodes: Vec<NodeRecord>,
    scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageSummary {
    stop_iterations: usize,
    validation_curve: Vec<f64>,
    train_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoundSummary {
    main: StageSummary,
    interaction: StageSummary,
    pair_scores: Vec<PairScore>,
    top_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    task: Task,
    offset: f64,
    config: GamiConfig,
    features: Vec<FeatureMeta>,
    trees: Vec<TreeRecord>,
    rounds: Vec<RoundSummary>,
}

fn summary(s: &StageResult) -> StageSummary {
    StageSummary {
        stop_iterations: s.stop_iterations,
        validation_curve: s.validation_curve.clone(),
        train_curve: s.train_curve.clone(),
    }
}

fn tree_record(round: usize, stage: Stage, t: &ScaledTree) -> TreeRecord {
    let tree = &t.tree;
    TreeRecord {
        round,
        stage,
        kind: match tree.kind {
            TreeKind::Main { .. } => KindTag::Main,
            TreeKind::Interaction { .. } => KindTag::Interaction,
        },
        split_var: tree.kind.split_var(),
        model_var: tree.kind.model_var(),
        design: if tree.basis.is_some() { Design::Spline } else { Design::Linear },
        depth: tree.depth,
        nodes: tree
            .nodes
            .iter()
            .map(|n| match n {
                TreeNode::Split { threshold, left, right } => NodeRecord::Split {
                    threshold: *threshold,
                    left: *left,
                    right: *right,
                },
                TreeNode::Leaf(m) => NodeRecord::Leaf { leaf: m.clone() },
            })
            .collect(),
        scale: t.scale,
    }
}

impl ModelFile {
    fn from_model(m: &FittedModel) -> ModelFile {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            task: m.task,
            offset: m.offset,
            config: m.config.clone(),
            features: m.features.clone(),
            trees: m.trees().map(|(r, s, t)| tree_record(r, s, t)).collect(),
            rounds: m
                .rounds
                .iter()
                .map(|r| RoundSummary {
                    main: summary(&r.main),
                    interaction: summary(&r.interaction),
                    pair_scores: r.ranking.scores.clone(),
                    top_pairs: r.ranking.top_pairs.clone(),
                })
                .collect(),
        }
    }

    fn into_model(self) -> Result<FittedModel> {
        let bad = |m: String| Err(GamiError::InvalidModel(m));
        let p = self.features.len();
        let mut bases = Vec::with_capacity(p);
        for f in &self.features {
            bases.push(SplineBasis::new(f.knots.clone())?);
        }
        let mut rounds: Vec<RoundRecord> = Vec::with_capacity(self.rounds.len());
        for r in self.rounds {
            let stage = |s: StageSummary| StageResult {
                stop_iterations: s.stop_iterations,
                validation_curve: s.validation_curve,
                train_curve: s.train_curve,
                ..StageResult::default()
            };
            let mut ranking = PairRanking::from_scores(r.pair_scores, r.top_pairs.len());
            if ranking.top_pairs != r.top_pairs {
                return bad("top pairs disagree with pair scores".into());
            }
            ranking.combos = r.top_pairs.iter().flat_map(|&(j, k)| [(j, k), (k, j)]).collect();
            rounds.push(RoundRecord {
                main: stage(r.main),
                ranking,
                interaction: stage(r.interaction),
            });
        }
        for (i, t) in self.trees.into_iter().enumerate() {
            if t.round == 0 || t.round > rounds.len() {
                return bad(format!("tree {i} refers to round {}", t.round));
            }
            if t.split_var >= p || t.model_var >= p {
                return bad(format!("tree {i} refers to a missing variable"));
            }
            let kind = match t.kind {
                KindTag::Main if t.split_var == t.model_var => TreeKind::Main { var: t.split_var },
                KindTag::Interaction if t.split_var != t.model_var => TreeKind::Interaction {
                    model_var: t.model_var,
                    split_var: t.split_var,
                },
                _ => return bad(format!("tree {i} has inconsistent variables")),
            };
            let basis = match t.design {
                Design::Linear => None,
                Design::Spline => Some(bases[t.model_var].clone()),
            };
            let n_coef = basis.as_ref().map_or(2, |b| b.len() + 1);
            let n_nodes = t.nodes.len();
            let mut nodes = Vec::with_capacity(n_nodes);
            for (idx, n) in t.nodes.into_iter().enumerate() {
                nodes.push(match n {
                    NodeRecord::Split { threshold, left, right } => {
                        // preorder: children follow their parent
                        if left <= idx || right <= idx || left >= n_nodes || right >= n_nodes {
                            return bad(format!("tree {i} has invalid child links"));
                        }
                        TreeNode::Split { threshold, left, right }
                    }
                    NodeRecord::Leaf { leaf } => {
                        if leaf.coefficients.len() != n_coef {
                            return bad(format!("tree {i} has a leaf with the wrong coefficient count"));
                        }
                        TreeNode::Leaf(leaf)
                    }
                });
            }
            if nodes.is_empty() {
                return bad(format!("tree {i} has no nodes"));
            }
            let scaled = ScaledTree {
                tree: ModelBasedTree {
                    kind,
                    nodes,
                    basis,
                    depth: t.depth,
                },
                scale: t.scale,
            };
            let rec = &mut rounds[t.round - 1];
            match t.stage {
                Stage::Main => rec.main.trees.push(scaled),
                Stage::Interaction => rec.interaction.trees.push(scaled),
            }
        }
        for (r, rec) in rounds.iter().enumerate() {
            for s in [&rec.main, &rec.interaction] {
                if s.trees.len() != s.stop_iterations || s.validation_curve.len() <= s.stop_iterations {
                    return bad(format!("round {} trees disagree with its stop counts", r + 1));
                }
            }
        }
        Ok(FittedModel {
            task: self.task,
            offset: self.offset,
            config: self.config,
            features: self.features,
            rounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_train_valid;
    use crate::losses::mean_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn make(n: usize, p: usize, seed: u64, f: impl Fn(&[f64]) -> f64, noise: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![Vec::with_capacity(n); p];
        let mut y = Vec::with_capacity(n);
        let mut row = vec![0.0; p];
        for _ in 0..n {
            for (j, c) in cols.iter_mut().enumerate() {
                row[j] = rng.sample::<f64, _>(StandardNormal).clamp(-2.5, 2.5);
                c.push(row[j]);
            }
            y.push(f(&row) + noise * rng.sample::<f64, _>(StandardNormal));
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(names, cols, y, Task::Continuous).unwrap()
    }

    fn small_fit(seed: u64) -> (Dataset, Dataset, FittedModel) {
        let ds = make(2000, 4, seed, |x| x[0] + x[1] * x[2] + 0.5 * x[3] * x[3], 0.3);
        let (train, valid) = split_train_valid(&ds, 0.3, seed).unwrap();
        let config = GamiConfig { npairs: 3, seed, ..GamiConfig::default() };
        let m = fit_gami(&train, &valid, &config).unwrap();
        (train, valid, m)
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GamiConfig::default();
        assert_eq!((c.max_iter, c.learning_rate, c.nknots, c.rounds, c.npairs, c.patience), (1000, 0.2, 5, 5, 10, 10));
        assert_eq!(c.depth_for(Task::Continuous), 2);
        assert_eq!(c.depth_for(Task::Binary), 1);
        assert!(c.validate().is_ok());
        for bad in [
            GamiConfig { learning_rate: 0.0, ..c.clone() },
            GamiConfig { learning_rate: 1.5, ..c.clone() },
            GamiConfig { rounds: 0, ..c.clone() },
            GamiConfig { npairs: 0, ..c.clone() },
            GamiConfig { nknots: 1, ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(GamiError::InvalidArgument(_))));
        }
        assert!(GamiConfig { learning_rate: 1.0, ..c }.validate().is_ok());
    }

    #[test]
    fn constant_target_gives_offset_only() {
        let ds = make(400, 3, 1, |_| 2.5, 0.0);
        let (train, valid) = split_train_valid(&ds, 0.25, 1).unwrap();
        let m = fit_gami(&train, &valid, &GamiConfig::default()).unwrap();
        assert_eq!(m.n_trees(), 0);
        assert_eq!(m.rounds.len(), 1);
        assert!(m.predict(&valid).unwrap().iter().all(|&g| g == 2.5));
    }

    #[test]
    fn predictions_replay_recorded_losses() {
        let (train, valid, m) = small_fit(2);
        assert!(m.n_trees() > 0);
        let (tl, vl) = m.final_losses().unwrap();
        let pt = m.predict(&train).unwrap();
        assert!((mean_loss(train.target(), &pt, Task::Continuous) - tl).abs() < 1e-10);
        let pv = m.predict(&valid).unwrap();
        assert!((mean_loss(valid.target(), &pv, Task::Continuous) - vl).abs() < 1e-10);
        // row-wise evaluation agrees
        for i in (0..valid.n()).step_by(37) {
            let row: Vec<f64> = (0..valid.p()).map(|j| valid.column(j)[i]).collect();
            assert!((m.predict_row(&row) - pv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rounds_never_worsen_validation_loss() {
        let (_, _, m) = small_fit(3);
        assert!(m.rounds.len() <= m.config.rounds);
        let mut prev = f64::INFINITY;
        for r in &m.rounds {
            let after = r.interaction.validation_curve[r.interaction.stop_iterations];
            let mid = r.main.validation_curve[r.main.stop_iterations];
            assert!(mid <= prev && after <= mid);
            prev = after;
        }
        // an early exit only comes from the dual-zero rule
        if m.rounds.len() < m.config.rounds {
            let last = m.rounds.last().unwrap();
            assert_eq!((last.main.stop_iterations, last.interaction.stop_iterations), (0, 0));
        }
    }

    #[test]
    fn one_round_fit_equals_truncation() {
        let ds = make(1500, 4, 4, |x| x[0] * x[1] + x[2], 0.3);
        let (train, valid) = split_train_valid(&ds, 0.3, 4).unwrap();
        let full = fit_gami(&train, &valid, &GamiConfig { npairs: 2, ..GamiConfig::default() }).unwrap();
        let one = fit_gami(&train, &valid, &GamiConfig { npairs: 2, rounds: 1, ..GamiConfig::default() }).unwrap();
        let trunc = full.truncate_rounds(1);
        assert_eq!(trunc.rounds, one.rounds);
        assert_eq!(trunc.predict(&valid).unwrap(), one.predict(&valid).unwrap());
    }

    #[test]
    fn additive_truth_stops_quickly() {
        let mut late = 0;
        for seed in 0..10 {
            let ds = make(3000, 4, 100 + seed, |x| x.iter().sum(), 0.5);
            let (train, valid) = split_train_valid(&ds, 0.3, seed).unwrap();
            let m = fit_gami(&train, &valid, &GamiConfig { npairs: 3, ..GamiConfig::default() }).unwrap();
            if m.rounds.len() > 3 {
                late += 1;
            }
        }
        assert!(late <= 3, "{late} of 10 fits needed more than 3 rounds");
    }

    #[test]
    fn json_round_trip_is_canonical() {
        let (_, valid, m) = small_fit(5);
        let text = m.to_json().unwrap();
        let back = FittedModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.predict(&valid).unwrap(), m.predict(&valid).unwrap());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn many_tree_model_round_trips() {
        let ds = make(1200, 3, 6, |x| x[0].sin() + x[1] * x[2], 0.2);
        let (train, valid) = split_train_valid(&ds, 0.3, 6).unwrap();
        let config = GamiConfig {
            learning_rate: 0.01,
            max_iter: 500,
            patience: 1000,
            rounds: 1,
            npairs: 1,
            ..GamiConfig::default()
        };
        let m = fit_gami(&train, &valid, &config).unwrap();
        assert!(m.n_trees() >= 500);
        let back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
        let probe = make(1000, 3, 7, |_| 0.0, 0.0);
        assert_eq!(back.predict(&probe).unwrap(), m.predict(&probe).unwrap());
    }

    #[test]
    fn malformed_files_report_location() {
        let (_, _, m) = small_fit(8);
        let text = m.to_json().unwrap();
        let cut = &text[..text.len() / 2];
        match FittedModel::from_json(cut) {
            Err(GamiError::ModelFormat { offset, .. }) => assert!(offset > 0 && offset <= cut.len()),
            other => panic!("expected a format error, got {other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["schema_version"] = serde_json::json!(2);
        assert!(matches!(
            FittedModel::from_json(&v.to_string()),
            Err(GamiError::VersionMismatch { found: 2, expected: 1 })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["trees"][0]["split_var"] = serde_json::json!(99);
        assert!(matches!(FittedModel::from_json(&v.to_string()), Err(GamiError::InvalidModel(_))));
    }

    #[test]
    fn predict_needs_all_features() {
        let (_, valid, m) = small_fit(9);
        let cols: Vec<String> = valid.names()[1..].to_vec();
        let partial = valid.project(&cols).unwrap();
        match m.predict(&partial) {
            Err(GamiError::MissingFeature(name)) => assert_eq!(name, "x1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_fit_and_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = make(3000, 3, 10, |x| 1.5 * x[0] - x[1] * x[2], 0.0);
        let y: Vec<f64> = base
            .target()
            .iter()
            .map(|&g| f64::from(u8::from(rng.random::<f64>() < sigmoid(g))))
            .collect();
        let ds = Dataset::new(base.names().to_vec(), base.columns().to_vec(), y, Task::Binary).unwrap();
        let (train, valid) = split_train_valid(&ds, 0.3, 10).unwrap();
        let m = fit_gami(&train, &valid, &GamiConfig { npairs: 3, ..GamiConfig::default() }).unwrap();
        assert!(m.trees().all(|(_, _, t)| t.tree.depth <= 1));
        let p = m.predict_response(&valid).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let (_, vl) = m.final_losses().unwrap();
        assert!(vl < m.rounds[0].main.validation_curve[0]);
    }
}
