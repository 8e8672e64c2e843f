//! Effect decomposition of a fitted model.
//!
//! Trees are grouped into main effects (per variable) and interaction
//! surfaces (per unordered pair). Purification then regresses every surface
//! on an additive spline model in its two variables, moves the fitted
//! additive parts into the main effects and centers the main effects, so that
//! each surface is orthogonal to functions of either variable under the
//! empirical training distribution. Predictions are unchanged.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::boost::ScaledTree;
use crate::dataset::{quantile_knots, quantile_sorted, Dataset, SplineBasis};
use crate::error::{GamiError, Result};
use crate::gami::FittedModel;
use crate::linalg::Cholesky;

/// Sum of scaled trees, spline terms and a constant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Component {
    pub trees: Vec<ScaledTree>,
    /// Variable → coefficients on that variable's purification basis.
    pub splines: BTreeMap<usize, Vec<f64>>,
    pub constant: f64,
}

impl Component {
    fn eval(&self, bases: &[SplineBasis], x: impl Fn(usize) -> f64 + Copy) -> f64 {
        let mut v = self.constant;
        for t in &self.trees {
            v += t.predict_with(x);
        }
        for (&var, coefs) in &self.splines {
            v += bases[var].combine(coefs, x(var));
        }
        v
    }

    fn add_spline(&mut self, var: usize, coefs: &[f64]) {
        let e = self.splines.entry(var).or_insert_with(|| vec![0.0; coefs.len()]);
        for (a, b) in e.iter_mut().zip(coefs) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSet {
    pub names: Vec<String>,
    pub intercept: f64,
    /// Purification basis per variable.
    pub bases: Vec<SplineBasis>,
    /// One main effect per variable (possibly empty).
    pub mains: Vec<Component>,
    /// Interaction surfaces keyed by `(j, k)` with `j < k`.
    pub pairs: BTreeMap<(usize, usize), Component>,
}

impl EffectSet {
    pub fn main_value(&self, j: usize, x: f64) -> f64 {
        self.mains[j].eval(&self.bases, |_| x)
    }

    pub fn pair_value(&self, pair: (usize, usize), xj: f64, xk: f64) -> f64 {
        let (j, _) = pair;
        self.pairs[&pair].eval(&self.bases, |v| if v == j { xj } else { xk })
    }

    /// Main-effect values on every row of `ds` (model feature order).
    pub fn main_values(&self, ds: &Dataset, j: usize) -> Vec<f64> {
        ds.column(j).iter().map(|&x| self.main_value(j, x)).collect()
    }

    pub fn pair_values(&self, ds: &Dataset, pair: (usize, usize)) -> Vec<f64> {
        let (a, b) = (ds.column(pair.0), ds.column(pair.1));
        a.iter().zip(b).map(|(&x, &y)| self.pair_value(pair, x, y)).collect()
    }

    /// Intercept plus every component, per row.
    pub fn predict(&self, ds: &Dataset) -> Vec<f64> {
        let mut out = vec![self.intercept; ds.n()];
        for j in 0..self.mains.len() {
            for (o, v) in out.iter_mut().zip(self.main_values(ds, j)) {
                *o += v;
            }
        }
        for &pair in self.pairs.keys() {
            for (o, v) in out.iter_mut().zip(self.pair_values(ds, pair)) {
                *o += v;
            }
        }
        out
    }
}

/// Groups the model's trees by variable or unordered pair. The bases are the
/// model's per-feature knots.
pub fn assemble_raw_effects(model: &FittedModel) -> Result<EffectSet> {
    let bases = model
        .features
        .iter()
        .map(|f| SplineBasis::new(f.knots.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut mains = vec![Component::default(); model.features.len()];
    let mut pairs: BTreeMap<(usize, usize), Component> = BTreeMap::new();
    for (_, _, t) in model.trees() {
        match t.tree.kind.pair() {
            None => mains[t.tree.kind.split_var()].trees.push(t.clone()),
            Some(p) => pairs.entry(p).or_default().trees.push(t.clone()),
        }
    }
    Ok(EffectSet {
        names: model.feature_names(),
        intercept: model.offset,
        bases,
        mains,
        pairs,
    })
}

/// Additive fit `a + h_j(x_j) + h_k(x_k)` of one surface. Coefficient vectors
/// are on the full bases with the first basis function fixed at zero.
struct AdditiveFit {
    intercept: f64,
    hj: Vec<f64>,
    hk: Vec<f64>,
}

/// Least squares on `[1, B_j[1..], B_k[1..]]` by normal equations with one
/// step of iterative refinement; a `1e-8` ridge is added if the system is
/// singular.
fn additive_fit(y: &[f64], xj: &[f64], xk: &[f64], bj: &SplineBasis, bk: &SplineBasis) -> AdditiveFit {
    let (kj, kk) = (bj.len(), bk.len());
    let c = 1 + (kj - 1) + (kk - 1);
    let mut a = vec![0.0; c * c];
    let mut rhs = vec![0.0; c];
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
    let design_row = |i: usize, row: &mut Vec<(usize, f64)>| {
        row.clear();
        row.push((0, 1.0));
        for (basis, x, base) in [(bj, xj[i], 0usize), (bk, xk[i], kj - 1)] {
            let co = basis.locate(x);
            let idx = co.index as usize;
            // basis function 0 is dropped
            for (f, v) in [(idx, 1.0 - co.t), (idx + 1, co.t)] {
                if f > 0 && v != 0.0 {
                    row.push((base + f, v));
                }
            }
        }
    };
    for i in 0..y.len() {
        design_row(i, &mut row);
        for &(p, vp) in &row {
            rhs[p] += vp * y[i];
            for &(q, vq) in &row {
                a[p * c + q] += vp * vq;
            }
        }
    }
    let chol = Cholesky::factor(&a, c).unwrap_or_else(|| {
        let mut reg = a.clone();
        for k in 1..c {
            reg[k * c + k] += 1e-8;
        }
        Cholesky::factor(&reg, c).expect("regularized additive design is positive definite")
    });
    let mut beta = rhs.clone();
    chol.solve(&mut beta);
    // refinement against the unregularized normal equations
    let mut resid: Vec<f64> = (0..c)
        .map(|p| rhs[p] - (0..c).map(|q| a[p * c + q] * beta[q]).sum::<f64>())
        .collect();
    chol.solve(&mut resid);
    for (b, d) in beta.iter_mut().zip(&resid) {
        *b += d;
    }
    let mut hj = vec![0.0; kj];
    hj[1..].copy_from_slice(&beta[1..kj]);
    let mut hk = vec![0.0; kk];
    hk[1..].copy_from_slice(&beta[kj..]);
    AdditiveFit {
        intercept: beta[0],
        hj,
        hk,
    }
}

/// Purifies every interaction surface against its two variables and centers
/// the main effects on `train`, absorbing constants into the intercept.
pub fn purify_effects(raw: &EffectSet, train: &Dataset, nknots: usize) -> Result<EffectSet> {
    if train.names() != raw.names.as_slice() {
        return Err(GamiError::SchemaMismatch(
            "training columns differ from the model features".into(),
        ));
    }
    let bases = train
        .columns()
        .par_iter()
        .map(|x| quantile_knots(x, nknots))
        .collect::<Result<Vec<_>>>()?;
    let mut out = raw.clone();
    // the new spline terms live on the new bases; carry old spline terms over
    // only when the bases agree
    if bases != raw.bases && raw.mains.iter().chain(raw.pairs.values()).any(|c| !c.splines.is_empty()) {
        return Err(GamiError::invalid(
            "re-purification requires the same knots as the existing spline terms",
        ));
    }
    out.bases = bases;
    let fits: Vec<((usize, usize), AdditiveFit)> = raw
        .pairs
        .keys()
        .copied()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|pair| {
            let y = raw.pair_values(train, pair);
            let fit = additive_fit(&y, train.column(pair.0), train.column(pair.1), &out.bases[pair.0], &out.bases[pair.1]);
            (pair, fit)
        })
        .collect();
    for ((j, k), fit) in fits {
        let comp = out.pairs.get_mut(&(j, k)).expect("pair present");
        comp.constant -= fit.intercept;
        let neg = |v: &[f64]| v.iter().map(|c| -c).collect::<Vec<_>>();
        comp.add_spline(j, &neg(&fit.hj));
        comp.add_spline(k, &neg(&fit.hk));
        out.intercept += fit.intercept;
        out.mains[j].add_spline(j, &fit.hj);
        out.mains[k].add_spline(k, &fit.hk);
    }
    let means: Vec<f64> = (0..out.mains.len())
        .into_par_iter()
        .map(|j| {
            let v = out.main_values(train, j);
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    for (main, m) in out.mains.iter_mut().zip(means) {
        main.constant -= m;
        out.intercept += m;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Main,
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Importance {
    pub kind: ComponentKind,
    pub name: String,
    pub vars: Vec<usize>,
    pub score: f64,
}

fn pop_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

pub fn pair_name(names: &[String], (j, k): (usize, usize)) -> String {
    format!("{}:{}", names[j], names[k])
}

/// Population standard deviation of every component over `train`, sorted
/// descending (ties by kind, then name).
pub fn importance(effects: &EffectSet, train: &Dataset) -> Vec<Importance> {
    let mut out: Vec<Importance> = (0..effects.mains.len())
        .into_par_iter()
        .map(|j| Importance {
            kind: ComponentKind::Main,
            name: effects.names[j].clone(),
            vars: vec![j],
            score: pop_std(&effects.main_values(train, j)),
        })
        .collect();
    let pairs: Vec<(usize, usize)> = effects.pairs.keys().copied().collect();
    out.extend(pairs.into_par_iter().map(|p| Importance {
        kind: ComponentKind::Pair,
        name: pair_name(&effects.names, p),
        vars: vec![p.0, p.1],
        score: pop_std(&effects.pair_values(train, p)),
    }).collect::<Vec<_>>());
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.kind.cmp(&b.kind))
            .then_with(|| a.name.cmp(&b.name))
    });
    out
}

pub fn write_importance_csv(path: &Path, table: &[Importance]) -> Result<()> {
    let werr = |e: csv::Error| GamiError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(["kind", "component", "importance"]).map_err(werr)?;
    for r in table {
        let kind = match r.kind {
            ComponentKind::Main => "main",
            ComponentKind::Pair => "pair",
        };
        w.write_record([kind, r.name.as_str(), r.score.to_string().as_str()]).map_err(werr)?;
    }
    w.flush().map_err(|e| GamiError::io(path, e))
}

/// Worst-case purification diagnostics on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityReport {
    /// Largest difference between purified and raw predictions over rows.
    pub conservation: f64,
    /// Largest R² of any surface regressed on either variable's basis.
    pub orthogonality_r2: f64,
    /// Largest `|mean(main)| / (1 + std(main))`.
    pub main_mean: f64,
}

/// Purified surfaces this small relative to their raw surface are rounding
/// residue of an additive surface: orthogonal by construction.
const NEGLIGIBLE_SURFACE: f64 = 1e-12;

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// R² of `y` regressed on a spline basis in `x` (which spans constants).
/// Surfaces whose spread is at rounding level count as orthogonal.
fn r2_on_basis(y: &[f64], x: &[f64], basis: &SplineBasis) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sst <= n * (1e-13 * scale.max(f64::MIN_POSITIVE)).powi(2) {
        return 0.0;
    }
    let c = basis.len();
    let mut a = vec![0.0; c * c];
    let mut rhs = vec![0.0; c];
    for (&yi, &xi) in y.iter().zip(x) {
        let co = basis.locate(xi);
        let idx = co.index as usize;
        let entries = [(idx, 1.0 - co.t), (idx + 1, co.t)];
        for &(p, vp) in &entries {
            rhs[p] += vp * (yi - mean);
            for &(q, vq) in &entries {
                a[p * c + q] += vp * vq;
            }
        }
    }
    for k in 0..c {
        a[k * c + k] += 1e-12 * (1.0 + a[k * c + k]);
    }
    let chol = Cholesky::factor(&a, c).expect("ridged basis gram is positive definite");
    let mut beta = rhs.clone();
    chol.solve(&mut beta);
    let explained: f64 = beta.iter().zip(&rhs).map(|(b, r)| b * r).sum();
    (explained / sst).max(0.0)
}

/// Diagnostics of `effects`, purified from `raw`: conservation on `ds`,
/// orthogonality and main-effect centering on `train`.
pub fn purity_report(raw: &EffectSet, effects: &EffectSet, ds: &Dataset, train: &Dataset) -> PurityReport {
    let pred = effects.predict(ds);
    let reference = raw.predict(ds);
    let conservation = pred.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pairs: Vec<(usize, usize)> = effects.pairs.keys().copied().collect();
    let orthogonality_r2 = pairs
        .par_iter()
        .map(|&p| {
            let y = effects.pair_values(train, p);
            let raw_scale = raw.pairs.contains_key(&p).then(|| rms(&raw.pair_values(train, p)));
            if raw_scale.is_some_and(|r| rms(&y) <= NEGLIGIBLE_SURFACE * r) {
                return 0.0;
            }
            let rj = r2_on_basis(&y, train.column(p.0), &effects.bases[p.0]);
            let rk = r2_on_basis(&y, train.column(p.1), &effects.bases[p.1]);
            rj.max(rk)
        })
        .reduce(|| 0.0, f64::max);
    let main_mean = (0..effects.mains.len())
        .map(|j| {
            let v = effects.main_values(train, j);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            m.abs() / (1.0 + pop_std(&v))
        })
        .fold(0.0, f64::max);
    PurityReport {
        conservation,
        orthogonality_r2,
        main_mean,
    }
}

/// Largest per-row difference between two effect sets over every component
/// and the intercept.
pub fn max_component_difference(a: &EffectSet, b: &EffectSet, ds: &Dataset) -> f64 {
    let mut d = (a.intercept - b.intercept).abs();
    for j in 0..a.mains.len() {
        for (x, y) in a.main_values(ds, j).iter().zip(b.main_values(ds, j)) {
            d = d.max((x - y).abs());
        }
    }
    for &p in a.pairs.keys() {
        for (x, y) in a.pair_values(ds, p).iter().zip(b.pair_values(ds, p)) {
            d = d.max((x - y).abs());
        }
    }
    d
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportEntry {
    pub kind: ComponentKind,
    pub name: String,
    pub vars: Vec<String>,
    pub importance: f64,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices_file: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportIndex {
    pub intercept: f64,
    pub grid_size: usize,
    pub slice_quantiles: Vec<f64>,
    pub components: Vec<ExportEntry>,
}

pub const SLICE_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `size` equally spaced points over `[lo, hi]`, endpoints exact.
pub fn grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lo];
    }
    (0..size)
        .map(|i| if i + 1 == size { hi } else { lo + (hi - lo) * i as f64 / (size - 1) as f64 })
        .collect()
}

fn range(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Writes main-effect grids, pair lattices with quantile slices and
/// `index.json` into `dir`. Returns the index.
pub fn export_effect_grids(effects: &EffectSet, train: &Dataset, grid_size: usize, dir: &Path) -> Result<ExportIndex> {
    if grid_size < 2 {
        return Err(GamiError::invalid("grid size must be at least 2"));
    }
    std::fs::create_dir_all(dir).map_err(|e| GamiError::io(dir, e))?;
    let table = importance(effects, train);
    let score = |kind: ComponentKind, vars: &[usize]| {
        table
            .iter()
            .find(|r| r.kind == kind && r.vars == vars)
            .map_or(0.0, |r| r.score)
    };
    let csv_writer = |path: &PathBuf| {
        csv::Writer::from_path(path).map_err(|e| GamiError::Csv {
            path: path.clone(),
            message: e.to_string(),
        })
    };
    let werr = |path: &PathBuf| {
        let path = path.clone();
        move |e: csv::Error| GamiError::Csv {
            path: path.clone(),
            message: e.to_string(),
        }
    };
    let mut components = Vec::new();
    for j in 0..effects.mains.len() {
        let name = effects.names[j].clone();
        let file = format!("main_{}.csv", file_stem(&name));
        let path = dir.join(&file);
        let mut w = csv_writer(&path)?;
        w.write_record(["x", "value"]).map_err(werr(&path))?;
        let (lo, hi) = range(train.column(j));
        for x in grid(lo, hi, grid_size) {
            w.write_record([x.to_string(), effects.main_value(j, x).to_string()])
                .map_err(werr(&path))?;
        }
        w.flush().map_err(|e| GamiError::io(&path, e))?;
        components.push(ExportEntry {
            kind: ComponentKind::Main,
            name: name.clone(),
            vars: vec![name],
            importance: score(ComponentKind::Main, &[j]),
            file,
            slices_file: None,
        });
    }
    for &(j, k) in effects.pairs.keys() {
        let name = pair_name(&effects.names, (j, k));
        let stem = format!("pair_{}__{}", file_stem(&effects.names[j]), file_stem(&effects.names[k]));
        let file = format!("{stem}.csv");
        let path = dir.join(&file);
        let gj = {
            let (lo, hi) = range(train.column(j));
            grid(lo, hi, grid_size)
        };
        let gk = {
            let (lo, hi) = range(train.column(k));
            grid(lo, hi, grid_size)
        };
        let mut w = csv_writer(&path)?;
        w.write_record(["x_j", "x_k", "value"]).map_err(werr(&path))?;
        for &a in &gj {
            for &b in &gk {
                w.write_record([a.to_string(), b.to_string(), effects.pair_value((j, k), a, b).to_string()])
                    .map_err(werr(&path))?;
            }
        }
        w.flush().map_err(|e| GamiError::io(&path, e))?;
        let slices_file = format!("{stem}_slices.csv");
        let spath = dir.join(&slices_file);
        let mut sorted = train.column(k).to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut w = csv_writer(&spath)?;
        w.write_record(["quantile", "x_k", "x_j", "value"]).map_err(werr(&spath))?;
        for q in SLICE_QUANTILES {
            let xk = quantile_sorted(&sorted, q);
            for &a in &gj {
                w.write_record([
                    q.to_string(),
                    xk.to_string(),
                    a.to_string(),
                    effects.pair_value((j, k), a, xk).to_string(),
                ])
                .map_err(werr(&spath))?;
            }
        }
        w.flush().map_err(|e| GamiError::io(&spath, e))?;
        components.push(ExportEntry {
            kind: ComponentKind::Pair,
            name,
            vars: vec![effects.names[j].clone(), effects.names[k].clone()],
            importance: score(ComponentKind::Pair, &[j, k]),
            file,
            slices_file: Some(slices_file),
        });
    }
    let index = ExportIndex {
        intercept: effects.intercept,
        grid_size,
        slice_quantiles: SLICE_QUANTILES.to_vec(),
        components,
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&serde_json::to_value(&index).expect("index serializes"))
        .expect("index serializes");
    std::fs::write(&path, text + "\n").map_err(|e| GamiError::io(&path, e))?;
    Ok(index)
}
