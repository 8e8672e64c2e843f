//! Ridge node fits with the penalty chosen by generalized cross-validation.

use serde::{Deserialize, Serialize};

use super::gram::NodeStats;
use crate::linalg::{factor_into, inverse_diag_into, solve_factored};

/// `{e^-8, e^-7, …, e^0}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (-8..=0).map(|e| (e as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub coefficients: Vec<f64>,
    pub alpha: f64,
    pub df: f64,
    #[serde(with = "crate::serde_float")]
    pub gcv: f64,
    /// Weighted SSE of this fit on the node's rows.
    pub sse: f64,
}

impl NodeModel {
    /// `n · GCV = n² · SSE / (n - df)²`: an SSE inflated by the effective
    /// degrees of freedom, additive across sibling nodes.
    pub fn penalized_sse(&self, n: f64) -> f64 {
        n * self.gcv
    }
}

/// Fit for one penalty value, before selection.
#[derive(Debug, Clone)]
pub struct RidgeCandidate {
    pub alpha: f64,
    pub coefficients: Vec<f64>,
    pub sse: f64,
    pub df: f64,
    pub gcv: f64,
    pub max_normalized_coef: f64,
}

fn quad_form(a: &[f64], x: &[f64]) -> f64 {
    let c = x.len();
    let mut s = 0.0;
    for r in 0..c {
        let mut row = 0.0;
        for q in 0..c {
            row += a[r * c + q] * x[q];
        }
        s += x[r] * row;
    }
    s
}

pub(crate) fn sse_of(stats: &NodeStats, beta: &[f64]) -> f64 {
    let cross: f64 = beta.iter().zip(stats.xtwz()).map(|(b, r)| b * r).sum();
    (stats.zwz() - 2.0 * cross + quad_form(stats.xtwx(), beta)).max(0.0)
}

pub(crate) fn gcv_of(n: f64, sse: f64, df: f64) -> f64 {
    let resid = n - df;
    if resid > 0.0 {
        n * sse / (resid * resid)
    } else {
        f64::INFINITY
    }
}

/// Largest `|β_c| · sd_c` over non-intercept columns, with `sd_c` the
/// in-node weighted standard deviation of column `c`.
fn max_normalized(stats: &NodeStats, beta: &[f64]) -> f64 {
    let c = stats.n_cols();
    let a = stats.xtwx();
    let sw = stats.sum_w();
    if sw <= 0.0 {
        return 0.0;
    }
    (1..c)
        .map(|k| {
            let mean = a[k] / sw;
            let var = (a[k * c + k] / sw - mean * mean).max(0.0);
            beta[k].abs() * var.sqrt()
        })
        .fold(0.0, f64::max)
}

/// Reusable buffers for node fits with a fixed column count.
#[derive(Debug, Clone)]
pub struct RidgeScratch {
    m: Vec<f64>,
    l: Vec<f64>,
    beta: Vec<f64>,
    col: Vec<f64>,
    diag: Vec<f64>,
}

impl RidgeScratch {
    pub fn new(n_cols: usize) -> Self {
        RidgeScratch {
            m: vec![0.0; n_cols * n_cols],
            l: vec![0.0; n_cols * n_cols],
            beta: vec![0.0; n_cols],
            col: vec![0.0; n_cols],
            diag: vec![0.0; n_cols],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    sse: f64,
    df: f64,
    gcv: f64,
    max_norm: f64,
}

/// Penalized fit for one `alpha`, leaving the coefficients in `s.beta`.
fn evaluate(stats: &NodeStats, alpha: f64, s: &mut RidgeScratch) -> Option<Eval> {
    let c = stats.n_cols();
    s.m.copy_from_slice(stats.xtwx());
    for k in 1..c {
        s.m[k * c + k] += alpha;
    }
    if !factor_into(&s.m, c, &mut s.l) {
        return None;
    }
    s.beta.copy_from_slice(stats.xtwz());
    solve_factored(&s.l, c, &mut s.beta);
    if s.beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    let sse = sse_of(stats, &s.beta);
    // tr(A (A + αI')⁻¹) = c - α · Σ_{k≥1} [(A + αI')⁻¹]_kk
    let df = if alpha == 0.0 {
        c as f64
    } else {
        inverse_diag_into(&s.l, c, &mut s.col, &mut s.diag);
        (c as f64 - alpha * s.diag[1..].iter().sum::<f64>()).clamp(0.0, c as f64)
    };
    Some(Eval {
        sse,
        df,
        gcv: gcv_of(stats.count(), sse, df),
        max_norm: max_normalized(stats, &s.beta),
    })
}

/// Solves the penalized normal equations for one `alpha` (intercept
/// unpenalized). `None` when the system is not positive definite.
pub fn ridge_candidate(stats: &NodeStats, alpha: f64) -> Option<RidgeCandidate> {
    let mut s = RidgeScratch::new(stats.n_cols());
    let e = evaluate(stats, alpha, &mut s)?;
    Some(RidgeCandidate {
        alpha,
        coefficients: s.beta,
        sse: e.sse,
        df: e.df,
        gcv: e.gcv,
        max_normalized_coef: e.max_norm,
    })
}

/// Intercept-only fit, used when every penalized system is singular.
pub fn constant_fit(stats: &NodeStats, alpha: f64) -> NodeModel {
    let c = stats.n_cols();
    let mut beta = vec![0.0; c];
    if stats.sum_w() > 0.0 {
        beta[0] = stats.xtwz()[0] / stats.sum_w();
    }
    let sse = sse_of(stats, &beta);
    NodeModel {
        coefficients: beta,
        alpha,
        df: 1.0,
        gcv: gcv_of(stats.count(), sse, 1.0),
        sse,
    }
}

/// Smallest GCV among penalties whose normalized coefficients stay within
/// `max_coef`, ties to the smaller penalty; else the largest penalty; `None`
/// if every system is singular.
fn select(stats: &NodeStats, alpha_grid: &[f64], max_coef: f64, s: &mut RidgeScratch) -> Option<(f64, Eval)> {
    let mut best: Option<(f64, Eval)> = None;
    let mut largest: Option<(f64, Eval)> = None;
    let top = alpha_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &alpha in alpha_grid {
        let Some(e) = evaluate(stats, alpha, s) else {
            continue;
        };
        if alpha == top && largest.is_none() {
            largest = Some((alpha, e));
        }
        if e.max_norm <= max_coef && best.is_none_or(|(_, b)| e.gcv < b.gcv) {
            best = Some((alpha, e));
        }
    }
    best.or(largest)
}

/// `count · GCV` of the fit [`ridge_fit`] would select, without allocating.
pub fn penalized_score(stats: &NodeStats, alpha_grid: &[f64], max_coef: f64, s: &mut RidgeScratch) -> f64 {
    let gcv = match select(stats, alpha_grid, max_coef, s) {
        Some((_, e)) => e.gcv,
        None => constant_fit(stats, 0.0).gcv,
    };
    stats.count() * gcv
}

/// Picks the penalty with the smallest GCV among those whose normalized
/// coefficients stay within `max_coef`; ties go to the smaller penalty. If no
/// penalty qualifies, the largest one is used.
pub fn ridge_fit(stats: &NodeStats, alpha_grid: &[f64], max_coef: f64) -> NodeModel {
    ridge_fit_with(stats, alpha_grid, max_coef, &mut RidgeScratch::new(stats.n_cols()))
}

pub fn ridge_fit_with(stats: &NodeStats, alpha_grid: &[f64], max_coef: f64, s: &mut RidgeScratch) -> NodeModel {
    match select(stats, alpha_grid, max_coef, s) {
        Some((alpha, _)) => {
            let e = evaluate(stats, alpha, s).expect("selected penalty was solvable");
            NodeModel {
                coefficients: s.beta.clone(),
                alpha,
                df: e.df,
                gcv: e.gcv,
                sse: e.sse,
            }
        }
        None => {
            let top = alpha_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            constant_fit(stats, top)
        }
    }
}
