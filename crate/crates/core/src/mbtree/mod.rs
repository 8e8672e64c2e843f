//! Model-based trees for main effects and pairwise interactions.
//!
//! A main-effect tree splits on `x_j` and fits `[1, x_j]` in every leaf. An
//! interaction tree splits only on `x_k` and fits the modeling variable `x_j`
//! (linear, or through its spline basis) in every leaf. Because every internal
//! node splits the same variable, each node covers a contiguous run of that
//! variable's bins, and all node grams come from the per-bin accumulators.

mod gram;
mod ridge;

use serde::{Deserialize, Serialize};

pub use gram::{build_grams, GramAccumulator, ModelColumn, NodeStats};
pub use ridge::{
    constant_fit, default_alpha_grid, penalized_score, ridge_candidate, ridge_fit, ridge_fit_with, NodeModel, RidgeCandidate,
    RidgeScratch,
};

use crate::dataset::{make_bins, Dataset, SplineBasis, SplineCoord};
use crate::error::{GamiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TreeKind {
    Main { var: usize },
    Interaction { model_var: usize, split_var: usize },
}

impl TreeKind {
    pub fn split_var(&self) -> usize {
        match *self {
            TreeKind::Main { var } => var,
            TreeKind::Interaction { split_var, .. } => split_var,
        }
    }

    pub fn model_var(&self) -> usize {
        match *self {
            TreeKind::Main { var } => var,
            TreeKind::Interaction { model_var, .. } => model_var,
        }
    }

    /// Unordered variable pair for interaction trees.
    pub fn pair(&self) -> Option<(usize, usize)> {
        match *self {
            TreeKind::Main { .. } => None,
            TreeKind::Interaction { model_var, split_var } => {
                Some((model_var.min(split_var), model_var.max(split_var)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with split value `<= threshold` go left.
    Split {
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(NodeModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub alpha_grid: Vec<f64>,
    pub max_coef: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 2,
            min_leaf: 20,
            alpha_grid: default_alpha_grid(),
            max_coef: 1.0,
        }
    }
}

/// Minimum hessian mass per child.
const MIN_CHILD_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBasedTree {
    pub kind: TreeKind,
    /// Preorder; node 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Basis of the modeling variable; `None` means a plain linear leaf model.
    pub basis: Option<SplineBasis>,
    pub depth: usize,
}

impl ModelBasedTree {
    fn leaf_for(&self, split_value: f64) -> &NodeModel {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split {
                    threshold,
                    left,
                    right,
                } => idx = if split_value <= *threshold { *left } else { *right },
                TreeNode::Leaf(m) => return m,
            }
        }
    }

    fn eval_leaf(&self, leaf: &NodeModel, model_value: f64) -> f64 {
        let b = &leaf.coefficients;
        match &self.basis {
            None => b[0] + b[1] * model_value,
            Some(basis) => b[0] + basis.combine(&b[1..], model_value),
        }
    }

    /// Prediction from the split-variable and modeling-variable values.
    pub fn predict_value(&self, split_value: f64, model_value: f64) -> f64 {
        self.eval_leaf(self.leaf_for(split_value), model_value)
    }

    /// Prediction for a row given a column lookup.
    pub fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.predict_value(x(self.kind.split_var()), x(self.kind.model_var()))
    }

    pub fn predict(&self, ds: &Dataset) -> Vec<f64> {
        let s = ds.column(self.kind.split_var());
        let m = ds.column(self.kind.model_var());
        s.iter().zip(m).map(|(&s, &m)| self.predict_value(s, m)).collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &NodeModel> {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf(m) => Some(m),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Split thresholds in preorder.
    pub fn thresholds(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { threshold, .. } => Some(*threshold),
                TreeNode::Leaf(_) => None,
            })
            .collect()
    }
}

struct Grower<'a> {
    acc: &'a GramAccumulator,
    edges: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<TreeNode>,
    depth: usize,
    sse: f64,
    scratch: RidgeScratch,
}

struct SplitChoice {
    bin: usize,
    left: (NodeStats, NodeModel),
    right: (NodeStats, NodeModel),
}

impl Grower<'_> {
    fn fit(&mut self, stats: &NodeStats) -> NodeModel {
        ridge_fit_with(stats, &self.params.alpha_grid, self.params.max_coef, &mut self.scratch)
    }

    fn admissible(&self, stats: &NodeStats) -> bool {
        stats.count() >= self.params.min_leaf as f64 && stats.sum_w() > MIN_CHILD_WEIGHT
    }

    /// Best GCV-reducing split of bins `lo..hi`; ties keep the smaller threshold.
    fn best_split(&mut self, lo: usize, hi: usize, stats: &NodeStats, fit: &NodeModel) -> Option<SplitChoice> {
        let parent = fit.penalized_sse(stats.count());
        let (grid, max_coef) = (&self.params.alpha_grid, self.params.max_coef);
        let mut best: Option<(f64, usize)> = None;
        let mut left = NodeStats::zeros(stats.n_cols());
        let mut right = NodeStats::zeros(stats.n_cols());
        for b in lo + 1..hi {
            left.add_slice(self.acc.bin_slice(b - 1));
            // an empty bin repeats the previous partition
            if self.acc.bin_count(b - 1) == 0.0 {
                continue;
            }
            right.set_difference(stats, &left);
            if !self.admissible(&left) || !self.admissible(&right) {
                continue;
            }
            let gain = parent
                - penalized_score(&left, grid, max_coef, &mut self.scratch)
                - penalized_score(&right, grid, max_coef, &mut self.scratch);
            if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, b));
            }
        }
        let (_, b) = best?;
        let left = self.acc.range(lo, b);
        let right = stats.minus(&left);
        let lf = self.fit(&left);
        let rf = self.fit(&right);
        Some(SplitChoice {
            bin: b,
            left: (left, lf),
            right: (right, rf),
        })
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize, stats: NodeStats, fit: NodeModel) -> usize {
        let idx = self.nodes.len();
        self.depth = self.depth.max(depth);
        let split = if depth < self.params.max_depth && hi - lo >= 2 {
            self.best_split(lo, hi, &stats, &fit)
        } else {
            None
        };
        match split {
            None => {
                self.sse += fit.sse;
                self.nodes.push(TreeNode::Leaf(fit));
            }
            Some(choice) => {
                self.nodes.push(TreeNode::Split {
                    threshold: self.edges[choice.bin - 1],
                    left: 0,
                    right: 0,
                });
                let (ls, lf) = choice.left;
                let (rs, rf) = choice.right;
                let l = self.grow(lo, choice.bin, depth + 1, ls, lf);
                let r = self.grow(choice.bin, hi, depth + 1, rs, rf);
                self.nodes[idx] = TreeNode::Split {
                    threshold: self.edges[choice.bin - 1],
                    left: l,
                    right: r,
                };
            }
        }
        idx
    }
}

/// Grows a tree from precomputed per-bin grams of the split variable.
/// Returns the tree and its weighted SSE on the accumulated rows.
pub fn grow_from_grams(
    kind: TreeKind,
    acc: &GramAccumulator,
    edges: &[f64],
    basis: Option<SplineBasis>,
    params: &TreeParams,
) -> (ModelBasedTree, f64) {
    debug_assert_eq!(acc.n_bins(), edges.len() + 1);
    let mut g = Grower {
        acc,
        edges,
        params,
        nodes: Vec::new(),
        depth: 0,
        sse: 0.0,
        scratch: RidgeScratch::new(acc.n_cols()),
    };
    let root = acc.total();
    let fit = g.fit(&root);
    g.grow(0, acc.n_bins(), 0, root, fit);
    let sse = g.sse;
    (
        ModelBasedTree {
            kind,
            nodes: g.nodes,
            basis,
            depth: g.depth,
        },
        sse,
    )
}

/// Spline coordinates of every value of `x`.
pub fn spline_coords(basis: &SplineBasis, x: &[f64]) -> Vec<SplineCoord> {
    x.iter().map(|&v| basis.locate(v)).collect()
}

/// Fits one tree on `ds` with pseudo-response `z` and weights `w`, binning the
/// split variable into at most `max_bins` bins.
pub fn grow_tree(
    kind: TreeKind,
    ds: &Dataset,
    z: &[f64],
    w: &[f64],
    params: &TreeParams,
    basis: Option<&SplineBasis>,
    max_bins: usize,
) -> Result<(ModelBasedTree, f64)> {
    if z.len() != ds.n() || w.len() != ds.n() {
        return Err(GamiError::invalid("z and w must have one entry per row"));
    }
    if let TreeKind::Interaction { model_var, split_var } = kind {
        if model_var == split_var {
            return Err(GamiError::invalid("interaction tree needs two distinct variables"));
        }
    }
    if kind.split_var() >= ds.p() || kind.model_var() >= ds.p() {
        return Err(GamiError::invalid("tree variable out of range"));
    }
    let bins = make_bins(ds.column(kind.split_var()), max_bins)?;
    let x = ds.column(kind.model_var());
    let coords;
    let design = match basis {
        None => ModelColumn::Linear(x),
        Some(b) => {
            coords = spline_coords(b, x);
            ModelColumn::Spline {
                coords: &coords,
                n_basis: b.len(),
            }
        }
    };
    let acc = build_grams(design, z, w, &bins.assignment, bins.n_bins());
    Ok(grow_from_grams(kind, &acc, &bins.edges, basis.cloned(), params))
}
