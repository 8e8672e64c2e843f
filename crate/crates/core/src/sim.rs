//! Synthetic benchmark generator.
//!
//! Thirty predictors in two independent equicorrelated Gaussian blocks
//! (`x1..x20` and `x21..x30`), clipped to `[-2.5, 2.5]`. Only `x1..x10` enter
//! the four response surfaces; `x11..x20` are redundant (correlated with the
//! model variables) and `x21..x30` are irrelevant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{GamiError, Result};
use crate::losses::sigmoid;

pub const N_FEATURES: usize = 30;
pub const CLIP: f64 = 2.5;
const BLOCKS: [(usize, usize); 2] = [(0, 20), (20, 30)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub model_id: u8,
    pub n: usize,
    pub rho: f64,
    pub task: Task,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(model_id: u8, n: usize, rho: f64, task: Task, seed: u64) -> Self {
        SimScenario {
            model_id,
            n,
            rho,
            task,
            noise_sd: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.model_id) {
            return Err(GamiError::invalid(format!("unknown model form {}", self.model_id)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(GamiError::invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.n == 0 {
            return Err(GamiError::invalid("n must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(GamiError::invalid("noise_sd must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Generated sample with the noiseless surface and, for binary data, the
/// class-balancing intercept.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: Dataset,
    pub g: Vec<f64>,
    pub beta0: Option<f64>,
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Draws one row: 30 clipped predictors, a noise draw and a uniform draw.
fn draw_row(rng: &mut ChaCha8Rng, rho: f64) -> ([f64; N_FEATURES], f64, f64) {
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = [0.0; N_FEATURES];
    for (lo, hi) in BLOCKS {
        let u: f64 = rng.sample(StandardNormal);
        for v in &mut x[lo..hi] {
            let e: f64 = rng.sample(StandardNormal);
            *v = (a * u + b * e).clamp(-CLIP, CLIP);
        }
    }
    let eps: f64 = rng.sample(StandardNormal);
    let unif: f64 = rng.random();
    (x, eps, unif)
}

/// Predictor matrix as columns `x1..x30`.
pub fn gen_predictors(n: usize, rho: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(GamiError::invalid(format!("rho must lie in [0, 1), got {rho}")));
    }
    let rows: Vec<[f64; N_FEATURES]> = (0..n)
        .into_par_iter()
        .map(|i| draw_row(&mut row_rng(seed, i), rho).0)
        .collect();
    Ok(transpose(&rows))
}

fn transpose(rows: &[[f64; N_FEATURES]]) -> Vec<Vec<f64>> {
    (0..N_FEATURES).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn ind(c: bool) -> f64 {
    f64::from(u8::from(c))
}

fn pos(v: f64) -> f64 {
    v.max(0.0)
}

/// Noiseless surface of model form `model_id` at one row (`x[0]` is `x1`).
pub fn eval_model_form(model_id: u8, x: &[f64]) -> Result<f64> {
    if x.len() < 10 {
        return Err(GamiError::invalid("model forms need at least 10 predictors"));
    }
    let v = |j: usize| x[j - 1];
    let base = (1..=5).map(v).sum::<f64>()
        + (6..=8).map(|j| 0.5 * v(j) * v(j)).sum::<f64>()
        + (9..=10).map(|j| v(j) * ind(v(j) > 0.0)).sum::<f64>();
    let pi = std::f64::consts::PI;
    let extra = match model_id {
        1 => {
            let mut s = 0.0;
            for j in 1..=10 {
                for k in j + 1..=10 {
                    s += 0.2 * v(j) * v(k);
                }
            }
            s
        }
        2 => {
            0.25 * v(1) * v(2)
                + 0.25 * v(1) * v(3) * v(3)
                + 0.25 * v(4) * v(4) * v(5) * v(5)
                + (v(4) * v(6) / 3.0).exp()
                + v(5) * v(6) * ind(v(5) > 0.0) * ind(v(6) > 0.0)
                + clip(v(7) + v(8), -1.0, 0.0)
                + clip(v(7) * v(9), -1.0, 1.0)
                + ind(v(8) > 0.0) * ind(v(9) > 0.0)
        }
        3 => {
            0.25 * v(1) * v(1) * v(2) * v(2)
                + 2.0 * pos(v(3) - 0.5) * pos(v(4) - 0.5)
                + 0.5 * (pi * v(5)).sin() * (pi * v(6)).sin()
                + 0.5 * (pi * (v(7) + v(8))).sin()
        }
        4 => {
            v(1) * v(2) + v(1) * v(3) + v(2) * v(3) + 0.5 * v(1) * v(2) * v(3)
                + v(4) * v(5)
                + v(4) * v(6)
                + v(5) * v(6)
                + 0.5 * ind(v(4) > 0.0) * v(5) * v(6)
        }
        other => return Err(GamiError::invalid(format!("unknown model form {other}"))),
    };
    Ok(base + extra)
}

/// True interacting pairs of each model form, 0-based and ordered.
pub fn true_pairs(model_id: u8) -> Result<Vec<(usize, usize)>> {
    let one = |v: &[(usize, usize)]| v.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
    Ok(match model_id {
        1 => (0..10).flat_map(|j| (j + 1..10).map(move |k| (j, k))).collect(),
        2 => one(&[(1, 2), (1, 3), (4, 5), (4, 6), (5, 6), (7, 8), (7, 9), (8, 9)]),
        3 => one(&[(1, 2), (3, 4), (5, 6), (7, 8)]),
        4 => one(&[(1, 2), (1, 3), (2, 3), (4, 5), (4, 6), (5, 6)]),
        other => return Err(GamiError::invalid(format!("unknown model form {other}"))),
    })
}

/// Intercept `β0` with `mean(sigmoid(β0 + g)) = 0.5` by bisection on `[-20, 20]`.
pub fn balance_intercept(g: &[f64]) -> f64 {
    let mean_p = |b: f64| g.iter().map(|&v| sigmoid(b + v)).sum::<f64>() / g.len() as f64;
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mean_p(mid);
        if (m - 0.5).abs() <= 1e-6 {
            return mid;
        }
        if m < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn feature_names() -> Vec<String> {
    (1..=N_FEATURES).map(|j| format!("x{j}")).collect()
}

pub fn simulate(s: &SimScenario) -> Result<SimData> {
    s.validate()?;
    let draws: Vec<([f64; N_FEATURES], f64, f64)> = (0..s.n)
        .into_par_iter()
        .map(|i| draw_row(&mut row_rng(s.seed, i), s.rho))
        .collect();
    let g: Vec<f64> = draws
        .iter()
        .map(|(x, _, _)| eval_model_form(s.model_id, x))
        .collect::<Result<_>>()?;
    let (y, beta0) = match s.task {
        Task::Continuous => (
            draws.iter().zip(&g).map(|((_, e, _), g)| g + s.noise_sd * e).collect(),
            None,
        ),
        Task::Binary => {
            let b = balance_intercept(&g);
            let y = draws
                .iter()
                .zip(&g)
                .map(|((_, _, u), g)| ind(*u < sigmoid(b + g)))
                .collect();
            (y, Some(b))
        }
    };
    let rows: Vec<[f64; N_FEATURES]> = draws.into_iter().map(|d| d.0).collect();
    let data = Dataset::new(feature_names(), transpose(&rows), y, s.task)?;
    Ok(SimData { data, g, beta0 })
}

/// Contiguous 50/25/25 split into (train, valid, test).
pub fn split_50_25_25(ds: &Dataset) -> (Dataset, Dataset, Dataset) {
    let n = ds.n();
    let a = n / 2;
    let b = a + (n - a) / 2;
    let rows = |lo: usize, hi: usize| ds.select_rows(&(lo..hi).collect::<Vec<_>>());
    (rows(0, a), rows(a, b), rows(b, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub scenario: SimScenario,
    pub beta0: Option<f64>,
    /// 1-based variable indices of the true pairs.
    pub true_pairs: Vec<(usize, usize)>,
    pub rows: [usize; 3],
}

impl SimManifest {
    pub fn new(s: &SimScenario, data: &SimData, rows: [usize; 3]) -> Result<Self> {
        Ok(SimManifest {
            scenario: s.clone(),
            beta0: data.beta0,
            true_pairs: true_pairs(s.model_id)?.into_iter().map(|(a, b)| (a + 1, b + 1)).collect(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    /// Correlation of two clipped unit normals with latent correlation `rho`,
    /// by tensor Simpson quadrature over the bivariate density.
    fn clipped_corr_oracle(rho: f64) -> f64 {
        let (lim, m) = (8.0, 1600);
        let h = 2.0 * lim / m as f64;
        let w = |i: usize| if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let det = 1.0 - rho * rho;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
        let (mut exy, mut exx) = (0.0, 0.0);
        for i in 0..=m {
            let u = -lim + i as f64 * h;
            for j in 0..=m {
                let v = -lim + j as f64 * h;
                let dens = norm * (-(u * u - 2.0 * rho * u * v + v * v) / (2.0 * det)).exp();
                let ww = w(i) * w(j) * dens;
                let (cu, cv) = (clip(u, -CLIP, CLIP), clip(v, -CLIP, CLIP));
                exy += ww * cu * cv;
                exx += ww * cu * cu;
            }
        }
        // clipped margins are symmetric, so means vanish
        exy / exx
    }

    #[test]
    fn bounds_and_single_row() {
        let x = gen_predictors(1, 0.3, 4).unwrap();
        assert_eq!(x.len(), 30);
        assert!(x.iter().all(|c| c.len() == 1 && c[0].abs() <= CLIP));
        assert!(gen_predictors(5, 1.0, 0).is_err());
    }

    #[test]
    fn independent_design_is_uncorrelated() {
        let x = gen_predictors(50_000, 0.0, 1).unwrap();
        for j in 0..30 {
            for k in j + 1..30 {
                assert!(corr(&x[j], &x[k]).abs() < 0.015, "({j},{k})");
            }
        }
    }

    #[test]
    fn equicorrelated_blocks_match_oracle() {
        let target = clipped_corr_oracle(0.5);
        assert!(target < 0.5 && target > 0.49, "{target}");
        let x = gen_predictors(50_000, 0.5, 2).unwrap();
        for j in 0..30 {
            for k in j + 1..30 {
                let c = corr(&x[j], &x[k]);
                let same = (j < 20) == (k < 20);
                if same {
                    assert!((c - target).abs() < 0.02, "({j},{k}) {c}");
                } else {
                    assert!(c.abs() < 0.015, "({j},{k}) {c}");
                }
            }
        }
    }

    #[test]
    fn model_forms_pointwise() {
        let zero = [0.0; 30];
        assert_eq!(eval_model_form(1, &zero).unwrap(), 0.0);
        // model 2 at zero: exp(0) = 1, clip(0,-1,0) = 0
        assert_eq!(eval_model_form(2, &zero).unwrap(), 1.0);
        assert_eq!(clip(-2.0, -1.0, 0.0), -1.0);
        assert_eq!(clip(-0.5, -1.0, 0.0), -0.5);
        assert_eq!(clip(0.5, -1.0, 0.0), 0.0);
        let mut x = [0.0; 30];
        x[2] = 1.0;
        x[3] = 1.0;
        // base: x3 + x4 = 2; hinge 2·0.5·0.5 = 0.5
        assert!((eval_model_form(3, &x).unwrap() - 2.5).abs() < 1e-15);
        let mut x = [0.0; 30];
        x[0] = 1.0;
        x[1] = 1.0;
        x[2] = 1.0;
        // x1+x2+x3 = 3; three products = 3; 3-way 0.5
        assert!((eval_model_form(4, &x).unwrap() - 6.5).abs() < 1e-15);
        let mut x = [0.0; 30];
        x[0] = 1.0;
        x[1] = 1.0;
        // 2 + 10·... only (1,2) nonzero: 0.2
        assert!((eval_model_form(1, &x).unwrap() - 2.2).abs() < 1e-15);
        assert!(eval_model_form(5, &zero).is_err());
    }

    #[test]
    fn pair_counts() {
        assert_eq!(true_pairs(1).unwrap().len(), 45);
        assert_eq!(true_pairs(2).unwrap().len(), 8);
        assert_eq!(true_pairs(3).unwrap().len(), 4);
        assert_eq!(true_pairs(4).unwrap().len(), 6);
    }

    #[test]
    fn deterministic_and_noise_free() {
        let mut s = SimScenario::new(2, 500, 0.5, Task::Continuous, 9);
        let a = simulate(&s).unwrap();
        let b = simulate(&s).unwrap();
        assert_eq!(a.data, b.data);
        s.noise_sd = 0.0;
        let c = simulate(&s).unwrap();
        assert_eq!(c.data.target(), &c.g[..]);
        // noise-free predictors agree with the noisy run
        assert_eq!(c.data.columns(), a.data.columns());
        s.seed = 10;
        assert_ne!(simulate(&s).unwrap().data.columns(), a.data.columns());
    }

    #[test]
    fn irreducible_error_anchor() {
        let s = SimScenario::new(2, 20_000, 0.5, Task::Continuous, 3);
        let d = simulate(&s).unwrap();
        let mse = d.data.target().iter().zip(&d.g).map(|(y, g)| (y - g).powi(2)).sum::<f64>() / 20_000.0;
        assert!((mse - 0.25).abs() <= 3.0 * (2.0 / 20_000f64).sqrt() * 0.25, "{mse}");
    }

    #[test]
    fn binary_classes_balance() {
        for model in 1..=4 {
            let s = SimScenario::new(model, 20_000, 0.0, Task::Binary, 5);
            let d = simulate(&s).unwrap();
            let b = d.beta0.unwrap();
            let mp = d.g.iter().map(|g| sigmoid(b + g)).sum::<f64>() / d.g.len() as f64;
            assert!((mp - 0.5).abs() <= 1e-6, "{mp}");
            let my = d.data.target().iter().sum::<f64>() / 20_000.0;
            assert!((my - 0.5).abs() <= 3.0 * (0.25 / 20_000f64).sqrt(), "model {model}: {my}");
        }
    }

    #[test]
    fn split_sizes() {
        let d = simulate(&SimScenario::new(1, 1000, 0.0, Task::Continuous, 1)).unwrap();
        let (a, b, c) = split_50_25_25(&d.data);
        assert_eq!((a.n(), b.n(), c.n()), (500, 250, 250));
        assert_eq!(a.column(0)[0], d.data.column(0)[0]);
        assert_eq!(c.column(0)[249], d.data.column(0)[999]);
    }
}
