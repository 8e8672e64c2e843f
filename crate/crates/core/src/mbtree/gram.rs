//! Per-bin weighted gram quantities for node design matrices.
//!
//! Each bin (and each aggregated node) stores, for design columns `X`,
//! weights `w` and response `z`: `XᵀWX` (full `c × c`), `XᵀWz`, `zᵀWz`,
//! `Σw` and the row count. Column 0 is always the intercept.

use crate::dataset::SplineCoord;

/// Modeling-variable design for a node model.
#[derive(Debug, Clone, Copy)]
pub enum ModelColumn<'a> {
    /// Columns `[1, x]`.
    Linear(&'a [f64]),
    /// Columns `[1, B_1(x), …, B_K(x)]` with precomputed basis coordinates.
    Spline {
        coords: &'a [SplineCoord],
        n_basis: usize,
    },
}

impl ModelColumn<'_> {
    pub fn n_cols(&self) -> usize {
        match self {
            ModelColumn::Linear(_) => 2,
            ModelColumn::Spline { n_basis, .. } => 1 + n_basis,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ModelColumn::Linear(x) => x.len(),
            ModelColumn::Spline { coords, .. } => coords.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense design row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols()];
        out[0] = 1.0;
        match self {
            ModelColumn::Linear(x) => out[1] = x[i],
            ModelColumn::Spline { coords, .. } => {
                let c = coords[i];
                out[1 + c.index as usize] += 1.0 - c.t;
                out[2 + c.index as usize] += c.t;
            }
        }
        out
    }
}

#[inline]
pub(crate) fn stride(c: usize) -> usize {
    c * c + c + 3
}

/// Aggregated gram quantities for one node (or one bin).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    n_cols: usize,
    data: Vec<f64>,
}

impl NodeStats {
    pub fn zeros(n_cols: usize) -> Self {
        NodeStats {
            n_cols,
            data: vec![0.0; stride(n_cols)],
        }
    }

    pub(crate) fn from_slice(n_cols: usize, data: &[f64]) -> Self {
        NodeStats {
            n_cols,
            data: data.to_vec(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn xtwx(&self) -> &[f64] {
        &self.data[..self.n_cols * self.n_cols]
    }

    pub fn xtwz(&self) -> &[f64] {
        let c = self.n_cols;
        &self.data[c * c..c * c + c]
    }

    pub fn zwz(&self) -> f64 {
        self.data[self.data.len() - 3]
    }

    pub fn sum_w(&self) -> f64 {
        self.data[self.data.len() - 2]
    }

    pub fn count(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub(crate) fn add_slice(&mut self, other: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }

    /// `self - other`, elementwise.
    pub(crate) fn minus(&self, other: &NodeStats) -> NodeStats {
        NodeStats {
            n_cols: self.n_cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Overwrites `self` with `a - b`.
    pub(crate) fn set_difference(&mut self, a: &NodeStats, b: &NodeStats) {
        for ((o, x), y) in self.data.iter_mut().zip(&a.data).zip(&b.data) {
            *o = x - y;
        }
    }

    /// Direct accumulation of one dense design row.
    pub fn push_row(&mut self, x: &[f64], z: f64, w: f64) {
        let c = self.n_cols;
        for r in 0..c {
            for s in 0..c {
                self.data[r * c + s] += w * x[r] * x[s];
            }
            self.data[c * c + r] += w * x[r] * z;
        }
        let len = self.data.len();
        self.data[len - 3] += w * z * z;
        self.data[len - 2] += w;
        self.data[len - 1] += 1.0;
    }
}

/// Per-bin gram quantities of the split variable's bins.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    n_cols: usize,
    n_bins: usize,
    data: Vec<f64>,
}

impl GramAccumulator {
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub(crate) fn bin_slice(&self, b: usize) -> &[f64] {
        let s = stride(self.n_cols);
        &self.data[b * s..(b + 1) * s]
    }

    pub fn bin(&self, b: usize) -> NodeStats {
        NodeStats::from_slice(self.n_cols, self.bin_slice(b))
    }

    pub(crate) fn bin_count(&self, b: usize) -> f64 {
        let s = stride(self.n_cols);
        self.data[(b + 1) * s - 1]
    }

    /// Sum over bins `lo..hi`.
    pub fn range(&self, lo: usize, hi: usize) -> NodeStats {
        let mut out = NodeStats::zeros(self.n_cols);
        for b in lo..hi {
            out.add_slice(self.bin_slice(b));
        }
        out
    }

    pub fn total(&self) -> NodeStats {
        self.range(0, self.n_bins)
    }
}

/// Accumulates per-bin grams with weights `w` over all rows, routing row `i`
/// to bin `bins[i]`.
pub fn build_grams(
    design: ModelColumn<'_>,
    z: &[f64],
    w: &[f64],
    bins: &[u16],
    n_bins: usize,
) -> GramAccumulator {
    let c = design.n_cols();
    let s = stride(c);
    let mut data = vec![0.0; n_bins * s];
    let (zz, sw, cnt) = (c * c + c, c * c + c + 1, c * c + c + 2);
    match design {
        ModelColumn::Linear(x) => {
            // upper triangle: [0]=Σw, [1]=Σwx, [3]=Σwx²
            for i in 0..bins.len() {
                let base = bins[i] as usize * s;
                let d = &mut data[base..base + s];
                let (wi, xi, zi) = (w[i], x[i], z[i]);
                let wx = wi * xi;
                let wz = wi * zi;
                d[1] += wx;
                d[3] += wx * xi;
                d[4] += wz;
                d[5] += wx * zi;
                d[zz] += wz * zi;
                d[sw] += wi;
                d[cnt] += 1.0;
            }
            for b in 0..n_bins {
                let d = &mut data[b * s..(b + 1) * s];
                d[0] = d[sw];
                d[2] = d[1];
            }
        }
        ModelColumn::Spline { coords, .. } => {
            for i in 0..bins.len() {
                let base = bins[i] as usize * s;
                let d = &mut data[base..base + s];
                let (wi, zi) = (w[i], z[i]);
                let co = coords[i];
                let a = 1 + co.index as usize;
                let b = a + 1;
                let (va, vb) = (1.0 - co.t, co.t);
                let (wa, wb) = (wi * va, wi * vb);
                // intercept row/column 0; entries (0,a), (0,b), (a,a), (a,b), (b,b)
                d[a] += wa;
                d[b] += wb;
                d[a * c + a] += wa * va;
                d[a * c + b] += wa * vb;
                d[b * c + b] += wb * vb;
                let wz = wi * zi;
                d[c * c] += wz;
                d[c * c + a] += wz * va;
                d[c * c + b] += wz * vb;
                d[zz] += wz * zi;
                d[sw] += wi;
                d[cnt] += 1.0;
            }
            for bin in 0..n_bins {
                let d = &mut data[bin * s..(bin + 1) * s];
                d[0] = d[sw];
                for r in 0..c {
                    for q in r + 1..c {
                        d[q * c + r] = d[r * c + q];
                    }
                }
            }
        }
    }
    GramAccumulator {
        n_cols: c,
        n_bins,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_bins, SplineBasis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct(design: ModelColumn<'_>, z: &[f64], w: &[f64]) -> NodeStats {
        let mut st = NodeStats::zeros(design.n_cols());
        for i in 0..z.len() {
            st.push_row(&design.row(i), z[i], w[i]);
        }
        st
    }

    fn assert_close(a: &NodeStats, b: &NodeStats, rtol: f64) {
        let scale = b.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= rtol * scale, "{x} vs {y}");
        }
    }

    fn sample(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
        let w = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        (x, s, z, w)
    }

    #[test]
    fn single_bin_equals_direct() {
        let (x, _, z, w) = sample(50, 1);
        let bins = vec![0u16; 50];
        let acc = build_grams(ModelColumn::Linear(&x), &z, &w, &bins, 1);
        assert_close(&acc.total(), &direct(ModelColumn::Linear(&x), &z, &w), 1e-13);
    }

    #[test]
    fn zero_weights_annihilate() {
        let (x, s, z, _) = sample(40, 2);
        let w = vec![0.0; 40];
        let b = make_bins(&s, 8).unwrap();
        let acc = build_grams(ModelColumn::Linear(&x), &z, &w, &b.assignment, b.n_bins());
        for bin in 0..acc.n_bins() {
            let st = acc.bin(bin);
            assert!(st.xtwx().iter().chain(st.xtwz()).all(|&v| v == 0.0));
            assert_eq!(st.zwz(), 0.0);
        }
    }

    #[test]
    fn binned_sum_equals_direct() {
        let (x, s, z, w) = sample(200, 3);
        let b = make_bins(&s, 16).unwrap();
        let lin = ModelColumn::Linear(&x);
        let acc = build_grams(lin, &z, &w, &b.assignment, b.n_bins());
        assert_close(&acc.total(), &direct(lin, &z, &w), 1e-10);

        let basis = SplineBasis::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let coords: Vec<_> = x.iter().map(|&v| basis.locate(v)).collect();
        let sp = ModelColumn::Spline {
            coords: &coords,
            n_basis: 5,
        };
        let acc = build_grams(sp, &z, &w, &b.assignment, b.n_bins());
        let total = acc.total();
        assert_close(&total, &direct(sp, &z, &w), 1e-10);
        // symmetric and PSD per bin (check v'Av >= 0 on random v)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bin in 0..acc.n_bins() {
            let st = acc.bin(bin);
            let c = st.n_cols();
            let a = st.xtwx();
            for r in 0..c {
                for q in 0..c {
                    assert_eq!(a[r * c + q], a[q * c + r]);
                }
            }
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let quad: f64 = (0..c)
                .flat_map(|r| (0..c).map(move |q| (r, q)))
                .map(|(r, q)| v[r] * a[r * c + q] * v[q])
                .sum();
            assert!(quad >= -1e-12);
        }
    }
}
