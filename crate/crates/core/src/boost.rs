//! Greedy boosting stages: at every iteration fit one candidate tree per
//! variable (main stage) or per oriented pair (interaction stage), keep the one
//! with the smallest weighted SSE on the Newton surrogate, and add it scaled by
//! the learning rate. Validation loss drives early stopping with rollback.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::dataset::{make_bins, quantile_knots, BinIndex, Dataset, SplineBasis, SplineCoord};
use crate::error::{GamiError, Result};
use crate::losses::{grad_hess, mean_loss};
use crate::mbtree::{build_grams, grow_from_grams, spline_coords, ModelBasedTree, ModelColumn, TreeKind, TreeParams};

/// Training-set bins and spline coordinates for every variable, computed once
/// per fit and shared by all stages.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub bins: Vec<BinIndex>,
    pub bases: Vec<SplineBasis>,
    pub coords: Vec<Vec<SplineCoord>>,
}

impl FeatureCache {
    pub fn new(train: &Dataset, max_bins: usize, nknots: usize) -> Result<Self> {
        let per_var: Result<Vec<_>> = train
            .columns()
            .par_iter()
            .map(|x| {
                let bins = make_bins(x, max_bins)?;
                let basis = quantile_knots(x, nknots)?;
                let coords = spline_coords(&basis, x);
                Ok((bins, basis, coords))
            })
            .collect();
        let mut cache = FeatureCache {
            bins: Vec::new(),
            bases: Vec::new(),
            coords: Vec::new(),
        };
        for (b, s, c) in per_var? {
            cache.bins.push(b);
            cache.bases.push(s);
            cache.coords.push(c);
        }
        Ok(cache)
    }

    /// Restriction to `rows`, keeping the full-sample bins and knots.
    pub fn subset(&self, rows: &[usize]) -> FeatureCache {
        FeatureCache {
            bins: self
                .bins
                .iter()
                .map(|b| BinIndex {
                    edges: b.edges.clone(),
                    assignment: rows.iter().map(|&i| b.assignment[i]).collect(),
                })
                .collect(),
            bases: self.bases.clone(),
            coords: self
                .coords
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Fits a tree of the given kind. Main trees model `[1, x_j]`; interaction
    /// trees use the modeling variable's spline basis when `spline` is set.
    pub fn fit_tree(
        &self,
        kind: TreeKind,
        train: &Dataset,
        z: &[f64],
        w: &[f64],
        params: &TreeParams,
        spline: bool,
    ) -> (ModelBasedTree, f64) {
        let split = &self.bins[kind.split_var()];
        let mv = kind.model_var();
        let use_spline = spline && matches!(kind, TreeKind::Interaction { .. });
        let design = if use_spline {
            ModelColumn::Spline {
                coords: &self.coords[mv],
                n_basis: self.bases[mv].len(),
            }
        } else {
            ModelColumn::Linear(train.column(mv))
        };
        let acc = build_grams(design, z, w, &split.assignment, split.n_bins());
        let basis = use_spline.then(|| self.bases[mv].clone());
        grow_from_grams(kind, &acc, &split.edges, basis, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTree {
    pub tree: ModelBasedTree,
    pub scale: f64,
}

impl ScaledTree {
    pub fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.scale * self.tree.predict_with(x)
    }
}

/// Current model predictions on the training and validation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
}

impl Predictions {
    pub fn constant(offset: f64, n_train: usize, n_valid: usize) -> Self {
        Predictions {
            train: vec![offset; n_train],
            valid: vec![offset; n_valid],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostParams {
    /// Maximum boosting iterations M.
    pub max_iter: usize,
    pub learning_rate: f64,
    /// Early-stopping patience d.
    pub patience: usize,
    pub tree: TreeParams,
    /// Spline leaves for interaction trees.
    pub spline_interactions: bool,
    /// Keep every candidate's SSE per iteration in [`StageResult::candidate_sse`].
    pub record_candidates: bool,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            max_iter: 1000,
            learning_rate: 0.2,
            patience: 10,
            tree: TreeParams::default(),
            spline_interactions: true,
            record_candidates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageResult {
    /// Accepted trees after rollback, in order of addition.
    pub trees: Vec<ScaledTree>,
    pub stop_iterations: usize,
    /// Validation loss before the first tree (index 0) and after each
    /// iteration that was run, including rolled-back ones.
    pub validation_curve: Vec<f64>,
    /// Training loss, same indexing as `validation_curve`.
    pub train_curve: Vec<f64>,
    /// Per iteration, the SSE of every candidate (only with `record_candidates`).
    pub candidate_sse: Vec<Vec<f64>>,
}

/// Fits the main-effect stage over all variables.
pub fn fit_main_stage(
    train: &Dataset,
    valid: &Dataset,
    cache: &FeatureCache,
    g: &mut Predictions,
    params: &BoostParams,
) -> Result<StageResult> {
    let candidates: Vec<TreeKind> = (0..train.p()).map(|var| TreeKind::Main { var }).collect();
    run_stage(train, valid, cache, g, params, &candidates)
}

/// Fits the interaction stage over oriented `(model_var, split_var)` combinations.
pub fn fit_interaction_stage(
    train: &Dataset,
    valid: &Dataset,
    cache: &FeatureCache,
    g: &mut Predictions,
    combos: &[(usize, usize)],
    params: &BoostParams,
) -> Result<StageResult> {
    let mut candidates = Vec::with_capacity(combos.len());
    for &(model_var, split_var) in combos {
        if model_var == split_var || model_var >= train.p() || split_var >= train.p() {
            return Err(GamiError::invalid(format!(
                "invalid interaction combination ({model_var}, {split_var})"
            )));
        }
        candidates.push(TreeKind::Interaction { model_var, split_var });
    }
    run_stage(train, valid, cache, g, params, &candidates)
}

fn check_inputs(train: &Dataset, valid: &Dataset, g: &Predictions, params: &BoostParams) -> Result<()> {
    if g.train.len() != train.n() || g.valid.len() != valid.n() {
        return Err(GamiError::invalid("prediction vectors do not match dataset sizes"));
    }
    if train.p() != valid.p() || train.task() != valid.task() {
        return Err(GamiError::SchemaMismatch(
            "train and validation differ in columns or task".into(),
        ));
    }
    if params.patience == 0 {
        return Err(GamiError::invalid("patience must be at least 1"));
    }
    if !(params.learning_rate >= 0.0 && params.learning_rate.is_finite()) {
        return Err(GamiError::invalid("learning rate must be finite and non-negative"));
    }
    Ok(())
}

fn run_stage(
    train: &Dataset,
    valid: &Dataset,
    cache: &FeatureCache,
    g: &mut Predictions,
    params: &BoostParams,
    candidates: &[TreeKind],
) -> Result<StageResult> {
    check_inputs(train, valid, g, params)?;
    let task = train.task();
    let d = params.patience;
    let mut result = StageResult {
        validation_curve: vec![mean_loss(valid.target(), &g.valid, task)],
        train_curve: vec![mean_loss(train.target(), &g.train, task)],
        ..StageResult::default()
    };
    if candidates.is_empty() {
        return Ok(result);
    }
    // states g_{m-d} ..= g_m for rollback
    let mut history: VecDeque<Predictions> = VecDeque::with_capacity(d + 1);
    history.push_back(g.clone());

    for m in 1..=params.max_iter {
        let lg = grad_hess(train.target(), &g.train, task);
        let fits: Vec<(ModelBasedTree, f64)> = candidates
            .par_iter()
            .map(|&kind| {
                cache.fit_tree(kind, train, &lg.z, &lg.hess, &params.tree, params.spline_interactions)
            })
            .collect();
        // ordered argmin; equal SSE keeps the smaller kind
        let mut best = 0;
        for (i, (_, sse)) in fits.iter().enumerate().skip(1) {
            let (_, best_sse) = &fits[best];
            if *sse < *best_sse || (*sse == *best_sse && candidates[i] < candidates[best]) {
                best = i;
            }
        }
        if params.record_candidates {
            result.candidate_sse.push(fits.iter().map(|f| f.1).collect());
        }
        let tree = fits.into_iter().nth(best).expect("nonempty candidates").0;
        let scaled = ScaledTree {
            tree,
            scale: params.learning_rate,
        };
        add_tree(&scaled, train, &mut g.train);
        add_tree(&scaled, valid, &mut g.valid);
        result.trees.push(scaled);
        result.validation_curve.push(mean_loss(valid.target(), &g.valid, task));
        result.train_curve.push(mean_loss(train.target(), &g.train, task));

        history.push_back(g.clone());
        if history.len() > d + 1 {
            history.pop_front();
        }
        if m >= d {
            let curve = &result.validation_curve;
            let anchor = curve[m - d];
            let window_min = curve[m - d + 1..=m].iter().copied().fold(f64::INFINITY, f64::min);
            if anchor <= window_min {
                *g = history.pop_front().expect("history holds d + 1 states");
                result.trees.truncate(m - d);
                result.stop_iterations = m - d;
                return Ok(result);
            }
        }
    }
    result.stop_iterations = result.trees.len();
    Ok(result)
}

/// `g += scale · T(x)` over every row of `ds`.
pub fn add_tree(tree: &ScaledTree, ds: &Dataset, g: &mut [f64]) {
    let kind = tree.tree.kind;
    let s = ds.column(kind.split_var());
    let m = ds.column(kind.model_var());
    for (i, gi) in g.iter_mut().enumerate() {
        *gi += tree.scale * tree.tree.predict_value(s[i], m[i]);
    }
}
