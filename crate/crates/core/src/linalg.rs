//! Dense Cholesky for the tiny (≤ a dozen columns) symmetric systems that
//! appear in node fits and purification. Matrices are row-major `n × n`.

#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

/// Pivots below this fraction of the original diagonal are treated as zero.
const PIVOT_RTOL: f64 = 1e-11;

impl Cholesky {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        factor_into(a, n, &mut l).then_some(Cholesky { n, l })
    }

    /// Solves `A x = b` in place.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        solve_factored(&self.l, self.n, b);
    }

    /// Diagonal of `A^{-1}`.
    #[cfg(test)]
    pub(crate) fn inverse_diag(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.n];
        let mut col = vec![0.0; self.n];
        inverse_diag_into(&self.l, self.n, &mut col, &mut diag);
        diag
    }
}

/// Writes the lower factor of `a` into `l`; `false` if `a` is not
/// numerically positive definite.
pub(crate) fn factor_into(a: &[f64], n: usize, l: &mut [f64]) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                let scale = a[i * n + i].abs();
                if !(s > PIVOT_RTOL * scale) || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

pub(crate) fn solve_factored(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Diagonal of `A^{-1}` as squared column norms of `L^{-1}`; `col` is scratch.
pub(crate) fn inverse_diag_into(l: &[f64], n: usize, col: &mut [f64], diag: &mut [f64]) {
    for j in 0..n {
        // column j of L^{-1}, nonzero from row j down
        col[j] = 1.0 / l[j * n + j];
        let mut acc = col[j] * col[j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * col[k];
            }
            col[i] = s / l[i * n + i];
            acc += col[i] * col[i];
        }
        diag[j] = acc;
    }
}
