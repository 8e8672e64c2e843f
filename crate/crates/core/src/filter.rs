//! Interaction screening over all variable pairs.
//!
//! The model-based screener fits both orientations of a depth-2 interaction
//! tree to the current pseudo-residuals and scores each pair by the smaller
//! weighted SSE. A FAST-style four-quadrant scorer is kept as a baseline for
//! comparisons.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::FeatureCache;
use crate::dataset::Dataset;
use crate::error::{GamiError, Result};
use crate::losses::grad_hess;
use crate::mbtree::{TreeKind, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub j: usize,
    pub k: usize,
    /// SSE of the tree modeling `j` and splitting on `k`.
    pub sse_jk: f64,
    /// SSE of the tree modeling `k` and splitting on `j`.
    pub sse_kj: f64,
}

impl PairScore {
    pub fn score(&self) -> f64 {
        self.sse_jk.min(self.sse_kj)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairRanking {
    /// Every evaluated pair with `j < k`, in lexicographic order.
    pub scores: Vec<PairScore>,
    /// Best `q` pairs, ascending by score.
    pub top_pairs: Vec<(usize, usize)>,
    /// Both orientations `(model_var, split_var)` of every top pair.
    pub combos: Vec<(usize, usize)>,
}

impl PairRanking {
    /// Ranks `scores` ascending (ties lexicographic) and keeps the best `q`.
    pub fn from_scores(mut scores: Vec<PairScore>, q: usize) -> Self {
        scores.sort_by(|a, b| (a.j, a.k).cmp(&(b.j, b.k)));
        let mut order: Vec<&PairScore> = scores.iter().collect();
        order.sort_by(|a, b| a.score().total_cmp(&b.score()).then((a.j, a.k).cmp(&(b.j, b.k))));
        let top_pairs: Vec<(usize, usize)> = order.iter().take(q).map(|s| (s.j, s.k)).collect();
        let combos = top_pairs.iter().flat_map(|&(j, k)| [(j, k), (k, j)]).collect();
        PairRanking {
            scores,
            top_pairs,
            combos,
        }
    }

    /// All pairs in rank order.
    pub fn ranked(&self) -> Vec<&PairScore> {
        let mut order: Vec<&PairScore> = self.scores.iter().collect();
        order.sort_by(|a, b| a.score().total_cmp(&b.score()).then((a.j, a.k).cmp(&(b.j, b.k))));
        order
    }

    /// 1-based rank of the unordered pair, if it was scored.
    pub fn rank_of(&self, a: usize, b: usize) -> Option<usize> {
        let (j, k) = (a.min(b), a.max(b));
        self.ranked().iter().position(|s| s.j == j && s.k == k).map(|r| r + 1)
    }

    /// CSV with columns `pair_j, pair_k, sse, rank` (names as given).
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| GamiError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let werr = |e: csv::Error| GamiError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        wtr.write_record(["pair_j", "pair_k", "sse", "rank"]).map_err(werr)?;
        for (r, s) in self.ranked().iter().enumerate() {
            wtr.write_record([
                names[s.j].clone(),
                names[s.k].clone(),
                s.score().to_string(),
                (r + 1).to_string(),
            ])
            .map_err(werr)?;
        }
        wtr.flush().map_err(|e| GamiError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub q: usize,
    /// Tree settings for the screening trees (depth 2 by default).
    pub tree: TreeParams,
    pub spline: bool,
    /// Row cap; larger training sets are subsampled with `seed`.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            q: 10,
            tree: TreeParams::default(),
            spline: true,
            subsample: 1_000_000,
            seed: 0,
        }
    }
}

fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| (j + 1..p).map(move |k| (j, k))).collect()
}

/// Seeded sorted subsample of `n` rows down to `cap`, or `None` if `n <= cap`.
fn subsample_rows(n: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if n <= cap {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(cap);
    idx.sort_unstable();
    Some(idx)
}

struct Sample<'a> {
    train: std::borrow::Cow<'a, Dataset>,
    cache: std::borrow::Cow<'a, FeatureCache>,
    g: std::borrow::Cow<'a, [f64]>,
}

fn sample<'a>(train: &'a Dataset, cache: &'a FeatureCache, g: &'a [f64], cap: usize, seed: u64) -> Sample<'a> {
    use std::borrow::Cow;
    match subsample_rows(train.n(), cap.max(1), seed) {
        None => Sample {
            train: Cow::Borrowed(train),
            cache: Cow::Borrowed(cache),
            g: Cow::Borrowed(g),
        },
        Some(rows) => Sample {
            train: Cow::Owned(train.select_rows(&rows)),
            cache: Cow::Owned(cache.subset(&rows)),
            g: Cow::Owned(rows.iter().map(|&i| g[i]).collect()),
        },
    }
}

fn check(train: &Dataset, g: &[f64], q: usize) -> Result<()> {
    if q == 0 {
        return Err(GamiError::invalid("q must be at least 1"));
    }
    if train.p() < 2 {
        return Err(GamiError::invalid("interaction filtering needs at least two variables"));
    }
    if g.len() != train.n() {
        return Err(GamiError::invalid("prediction vector does not match training rows"));
    }
    Ok(())
}

/// Model-based interaction filtering against the current predictions `g`.
pub fn filter_interactions(
    train: &Dataset,
    cache: &FeatureCache,
    g: &[f64],
    params: &FilterParams,
) -> Result<PairRanking> {
    check(train, g, params.q)?;
    let s = sample(train, cache, g, params.subsample, params.seed);
    let lg = grad_hess(s.train.target(), &s.g, s.train.task());
    let scores: Vec<PairScore> = all_pairs(train.p())
        .into_par_iter()
        .map(|(j, k)| {
            let fit = |model_var, split_var| {
                s.cache
                    .fit_tree(
                        TreeKind::Interaction { model_var, split_var },
                        &s.train,
                        &lg.z,
                        &lg.hess,
                        &params.tree,
                        params.spline,
                    )
                    .1
            };
            PairScore {
                j,
                k,
                sse_jk: fit(j, k),
                sse_kj: fit(k, j),
            }
        })
        .collect();
    Ok(PairRanking::from_scores(scores, params.q))
}

/// FAST-style four-quadrant screening: each pair is scored by the best
/// weighted SSE of per-quadrant constants over all cut pairs at bin edges.
pub fn fast_filter(
    train: &Dataset,
    cache: &FeatureCache,
    g: &[f64],
    q: usize,
    subsample: usize,
    seed: u64,
) -> Result<PairRanking> {
    check(train, g, q)?;
    let s = sample(train, cache, g, subsample, seed);
    let lg = grad_hess(s.train.target(), &s.g, s.train.task());
    let scores: Vec<PairScore> = all_pairs(train.p())
        .into_par_iter()
        .map(|(j, k)| {
            let sse = fast_score(&s.cache, &lg.z, &lg.hess, j, k);
            PairScore {
                j,
                k,
                sse_jk: sse,
                sse_kj: sse,
            }
        })
        .collect();
    Ok(PairRanking::from_scores(scores, q))
}

/// Minimal four-quadrant weighted SSE for the pair `(j, k)`. A variable with a
/// single bin contributes no cut, leaving a two- or one-region fit.
pub fn fast_score(cache: &FeatureCache, z: &[f64], w: &[f64], j: usize, k: usize) -> f64 {
    let (bj, bk) = (&cache.bins[j], &cache.bins[k]);
    let (nj, nk) = (bj.n_bins(), bk.n_bins());
    // 2-D histogram of (Σw, Σwz), then inclusive 2-D prefix sums
    let mut hw = vec![0.0; nj * nk];
    let mut hz = vec![0.0; nj * nk];
    let mut zwz = 0.0;
    for i in 0..z.len() {
        let cell = bj.assignment[i] as usize * nk + bk.assignment[i] as usize;
        let wz = w[i] * z[i];
        hw[cell] += w[i];
        hz[cell] += wz;
        zwz += wz * z[i];
    }
    for a in 0..nj {
        for b in 0..nk {
            let idx = a * nk + b;
            let mut sw = hw[idx];
            let mut sz = hz[idx];
            if a > 0 {
                sw += hw[idx - nk];
                sz += hz[idx - nk];
            }
            if b > 0 {
                sw += hw[idx - 1];
                sz += hz[idx - 1];
            }
            if a > 0 && b > 0 {
                sw -= hw[idx - nk - 1];
                sz -= hz[idx - nk - 1];
            }
            hw[idx] = sw;
            hz[idx] = sz;
        }
    }
    let at = |h: &[f64], a: usize, b: usize| h[a * nk + b];
    let (tw, tz) = (at(&hw, nj - 1, nk - 1), at(&hz, nj - 1, nk - 1));
    let explained = |sw: f64, sz: f64| if sw > 0.0 { sz * sz / sw } else { 0.0 };
    let mut best = f64::NEG_INFINITY;
    // cut a: x_j bins 0..=a vs the rest; a = n - 1 means no cut
    for a in 0..nj.saturating_sub(1).max(1) {
        let (rw, rz) = (at(&hw, a, nk - 1), at(&hz, a, nk - 1));
        for b in 0..nk.saturating_sub(1).max(1) {
            let (cw, cz) = (at(&hw, nj - 1, b), at(&hz, nj - 1, b));
            let (q1w, q1z) = (at(&hw, a, b), at(&hz, a, b));
            let (q2w, q2z) = (rw - q1w, rz - q1z);
            let (q3w, q3z) = (cw - q1w, cz - q1z);
            let (q4w, q4z) = (tw - rw - cw + q1w, tz - rz - cz + q1z);
            let e = explained(q1w, q1z) + explained(q2w, q2z) + explained(q3w, q3z) + explained(q4w, q4z);
            if e > best {
                best = e;
            }
        }
    }
    (zwz - best).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn make(n: usize, p: usize, seed: u64, f: impl Fn(&[f64]) -> f64, noise: f64, range: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![Vec::with_capacity(n); p];
        let mut y = Vec::with_capacity(n);
        let mut row = vec![0.0; p];
        for _ in 0..n {
            for (j, c) in cols.iter_mut().enumerate() {
                row[j] = rng.random_range(-range..range);
                c.push(row[j]);
            }
            y.push(f(&row) + noise * rng.sample::<f64, _>(StandardNormal));
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(names, cols, y, Task::Continuous).unwrap()
    }

    #[test]
    fn ranking_invariants() {
        let scores = vec![
            PairScore { j: 0, k: 1, sse_jk: 5.0, sse_kj: 4.0 },
            PairScore { j: 0, k: 2, sse_jk: 1.0, sse_kj: 9.0 },
            PairScore { j: 1, k: 2, sse_jk: 4.0, sse_kj: 4.0 },
        ];
        let r = PairRanking::from_scores(scores, 2);
        assert_eq!(r.top_pairs, vec![(0, 2), (0, 1)]);
        assert_eq!(r.combos, vec![(0, 2), (2, 0), (0, 1), (1, 0)]);
        let r = PairRanking::from_scores(r.scores, 10);
        assert_eq!(r.top_pairs.len(), 3);
        assert_eq!(r.rank_of(2, 1), Some(3));
    }

    #[test]
    fn product_pair_ranks_first() {
        let ds = make(3000, 5, 1, |x| x[0] * x[1], 0.3, 2.0);
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let g = vec![ds.target().iter().sum::<f64>() / ds.n() as f64; ds.n()];
        let r = filter_interactions(&ds, &cache, &g, &FilterParams { q: 3, ..FilterParams::default() }).unwrap();
        assert_eq!(r.scores.len(), 10);
        assert_eq!(r.top_pairs[0], (0, 1));
        // orientation completeness
        for &(j, k) in &r.top_pairs {
            assert_eq!(r.combos.iter().filter(|&&c| c == (j, k)).count(), 1);
            assert_eq!(r.combos.iter().filter(|&&c| c == (k, j)).count(), 1);
        }
    }

    #[test]
    fn q_larger_than_pairs_returns_all() {
        let ds = make(200, 2, 2, |x| x[0], 0.1, 1.0);
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let g = vec![0.0; 200];
        let r = filter_interactions(&ds, &cache, &g, &FilterParams { q: 3, ..FilterParams::default() }).unwrap();
        assert_eq!(r.top_pairs, vec![(0, 1)]);
        assert_eq!(r.combos.len(), 2);
    }

    #[test]
    fn column_permutation_permutes_ranking() {
        let ds = make(1500, 4, 3, |x| x[0] * x[2] + 0.5 * x[1] * x[3], 0.3, 2.0);
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let g = vec![0.0; ds.n()];
        let params = FilterParams { q: 6, ..FilterParams::default() };
        let r = filter_interactions(&ds, &cache, &g, &params).unwrap();
        let perm = [3, 1, 0, 2]; // new column i = old column perm[i]
        let names: Vec<String> = perm.iter().map(|&i| ds.name(i).to_string()).collect();
        let cols: Vec<Vec<f64>> = perm.iter().map(|&i| ds.column(i).to_vec()).collect();
        let pds = Dataset::new(names, cols, ds.target().to_vec(), Task::Continuous).unwrap();
        let pcache = FeatureCache::new(&pds, 256, 5).unwrap();
        let pr = filter_interactions(&pds, &pcache, &g, &params).unwrap();
        let back: Vec<(usize, usize)> = pr
            .top_pairs
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        assert_eq!(back[..2], r.top_pairs[..2]);
        let as_set = |v: &[(usize, usize)]| {
            let mut v = v.to_vec();
            v.sort();
            v
        };
        assert_eq!(as_set(&back), as_set(&r.top_pairs));
    }

    #[test]
    fn fast_exact_quadrants() {
        // z = sign(x_j)·sign(x_k) on a symmetric grid
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..20 {
            for k in 0..20 {
                a.push(-1.9 + 0.2 * i as f64);
                b.push(-1.9 + 0.2 * k as f64);
            }
        }
        let z: Vec<f64> = a.iter().zip(&b).map(|(x, y): (&f64, &f64)| x.signum() * y.signum()).collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], vec![a, b], z.clone(), Task::Continuous).unwrap();
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let w = vec![1.0; z.len()];
        assert!(fast_score(&cache, &z, &w, 0, 1) < 1e-10);
    }

    /// Brute force: every cut pair over distinct values, per-quadrant means.
    fn fast_brute(x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        let mut xs = x.to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut ys = y.to_vec();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let mut best = f64::INFINITY;
        for &cx in &xs[..xs.len() - 1] {
            for &cy in &ys[..ys.len() - 1] {
                let mut sums = [(0.0, 0.0); 4];
                for i in 0..z.len() {
                    let q = (x[i] > cx) as usize * 2 + (y[i] > cy) as usize;
                    sums[q].0 += w[i];
                    sums[q].1 += w[i] * z[i];
                }
                let sse: f64 = (0..z.len())
                    .map(|i| {
                        let q = (x[i] > cx) as usize * 2 + (y[i] > cy) as usize;
                        let m = sums[q].1 / sums[q].0;
                        w[i] * (z[i] - m).powi(2)
                    })
                    .sum();
                best = best.min(sse);
            }
        }
        best
    }

    #[test]
    fn fast_matches_brute_force_on_main_effect() {
        let ds = make(120, 2, 4, |x| x[0], 0.0, 1.0);
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let z = ds.target().to_vec();
        let w = vec![1.0; z.len()];
        let fast = fast_score(&cache, &z, &w, 0, 1);
        let brute = fast_brute(ds.column(0), ds.column(1), &z, &w);
        assert!(fast > 0.0);
        assert!((fast - brute).abs() < 1e-9 * brute.max(1.0), "{fast} vs {brute}");
    }

    #[test]
    fn fast_constant_variable_degenerates() {
        let ds = make(100, 2, 5, |x| x[0], 0.0, 1.0);
        let cols = vec![ds.column(0).to_vec(), vec![3.0; 100]];
        let ds = Dataset::new(ds.names().to_vec(), cols, ds.target().to_vec(), Task::Continuous).unwrap();
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let z = ds.target().to_vec();
        let w = vec![1.0; 100];
        // best two-region split of x_0 by brute force
        let mut xs = ds.column(0).to_vec();
        xs.sort_by(f64::total_cmp);
        let mut best = f64::INFINITY;
        let x = ds.column(0);
        let sse = |keep: &dyn Fn(f64) -> bool| {
            let v: Vec<f64> = (0..100).filter(|&i| keep(x[i])).map(|i| z[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|t| (t - m).powi(2)).sum::<f64>()
        };
        for &c in &xs[..99] {
            best = best.min(sse(&|v| v <= c) + sse(&|v| v > c));
        }
        let got = fast_score(&cache, &z, &w, 0, 1);
        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    }

    #[test]
    fn sine_pair_separates_mbt_from_fast() {
        // z = sin(πx_j)·sin(πx_k), x ~ N(0, 1) clipped to [-2.5, 2.5]
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 6000;
        let mut draw = || rng.sample::<f64, _>(StandardNormal).clamp(-2.5, 2.5);
        let a: Vec<f64> = (0..n).map(|_| draw()).collect();
        let b: Vec<f64> = (0..n).map(|_| draw()).collect();
        let pi = std::f64::consts::PI;
        let z: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (pi * x).sin() * (pi * y).sin()).collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], vec![a, b], z.clone(), Task::Continuous).unwrap();
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        // continuous hessian weight is 2
        let w = vec![2.0; n];
        let total: f64 = z.iter().map(|v| 2.0 * v * v).sum();
        let fast_red = total - fast_score(&cache, &z, &w, 0, 1);
        let mbt = filter_interactions(&ds, &cache, &vec![0.0; n], &FilterParams::default()).unwrap();
        let mbt_red = total - mbt.scores[0].score();
        assert!(fast_red < 0.25 * mbt_red, "fast {fast_red} vs mbt {mbt_red}");
    }

    #[test]
    fn subsample_is_seeded() {
        let ds = make(500, 3, 7, |x| x[0] * x[1], 0.2, 2.0);
        let cache = FeatureCache::new(&ds, 256, 5).unwrap();
        let g = vec![0.0; 500];
        let params = FilterParams { q: 2, subsample: 300, seed: 4, ..FilterParams::default() };
        let a = filter_interactions(&ds, &cache, &g, &params).unwrap();
        let b = filter_interactions(&ds, &cache, &g, &params).unwrap();
        assert_eq!(a, b);
    }
}
