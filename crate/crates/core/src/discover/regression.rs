//! Least-squares kernels on a QR-compressed design.
//!
//! `[Θ | Y]` is reduced to an upper-triangular `R` with `‖[Θ|Y] z‖ = ‖R z‖`
//! for every `z`, by a tall-skinny QR over fixed row blocks. Any
//! column-subset fit is then solved exactly on `R`, whose size depends only on
//! the number of terms.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BLOCK_ROWS: usize = 4096;

/// Upper-triangular factor of `[Θ | Y]`.
#[derive(Debug, Clone)]
pub struct Compressed {
    r: DMatrix<f64>,
    n_terms: usize,
    n_targets: usize,
    n_rows: usize,
}

fn reduce(block: DMatrix<f64>) -> DMatrix<f64> {
    if block.nrows() > block.ncols() {
        block.qr().r()
    } else {
        block
    }
}

impl Compressed {
    pub fn new(theta: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Compressed {
        assert_eq!(theta.nrows(), targets.nrows(), "Θ and targets must have equal rows");
        let (n, m, d) = (theta.nrows(), theta.ncols(), targets.ncols());
        let cols = m + d;
        let block = BLOCK_ROWS.max(4 * cols);
        let starts: Vec<usize> = (0..n).step_by(block.max(1)).collect();
        let parts: Vec<DMatrix<f64>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + block).min(n);
                let a = DMatrix::from_fn(e - s, cols, |i, j| {
                    if j < m {
                        theta[[s + i, j]]
                    } else {
                        targets[[s + i, j - m]]
                    }
                });
                reduce(a)
            })
            .collect();
        let rows: usize = parts.iter().map(|p| p.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in &parts {
            stacked.rows_mut(at, p.nrows()).copy_from(p);
            at += p.nrows();
        }
        Compressed {
            r: reduce(stacked),
            n_terms: m,
            n_targets: d,
            n_rows: n,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn target(&self, t: usize) -> DVector<f64> {
        self.r.column(self.n_terms + t).into_owned()
    }

    /// Ridge fit `min ‖Θ_S ξ − y_t‖² + α‖ξ‖²` over columns `support`.
    /// Returns coefficients in `support` order and whether `Θ_S` is rank deficient.
    pub fn lstsq(&self, t: usize, support: &[usize], alpha: f64) -> (Vec<f64>, bool) {
        let k = support.len();
        if k == 0 {
            return (Vec::new(), false);
        }
        let a_s = self.r.select_columns(support);
        let b = self.target(t);
        let (a, b) = if alpha > 0.0 {
            let rows = a_s.nrows();
            let mut a = DMatrix::zeros(rows + k, k);
            a.rows_mut(0, rows).copy_from(&a_s);
            let s = alpha.sqrt();
            for i in 0..k {
                a[(rows + i, i)] = s;
            }
            let mut bb = DVector::zeros(rows + k);
            bb.rows_mut(0, rows).copy_from(&b);
            (a, bb)
        } else {
            (a_s, b)
        };
        let rows = a.nrows();
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * f64::EPSILON * (rows.max(k) as f64);
        let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
        let x = if smax > 0.0 {
            svd.solve(&b, eps).expect("SVD computed with both factors")
        } else {
            DVector::zeros(k)
        };
        (x.iter().copied().collect(), rank < k)
    }

    /// `‖Θ ξ − y_t‖²` for a full-length coefficient vector.
    pub fn residual(&self, t: usize, coef: &[f64]) -> f64 {
        let mut z = DVector::zeros(self.n_terms + self.n_targets);
        for (i, c) in coef.iter().enumerate() {
            z[i] = *c;
        }
        z[self.n_terms + t] = -1.0;
        (&self.r * z).norm_squared()
    }

    /// `‖y_t‖²`
    pub fn target_energy(&self, t: usize) -> f64 {
        self.target(t).norm_squared()
    }

    /// Gram block `Θ_Sᵀ Θ_S` and moment vector `Θ_Sᵀ y_t`.
    /// `‖Θ_j‖²`
    pub fn column_energy(&self, j: usize) -> f64 {
        self.r.column(j).norm_squared()
    }

    fn normal_equations(&self, t: usize, support: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.r.select_columns(support);
        let b = self.target(t);
        (a.transpose() * &a, a.transpose() * b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlsqConfig {
    pub threshold: f64,
    pub alpha: f64,
    pub max_iter: usize,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        StlsqConfig {
            threshold: 0.1,
            alpha: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sr3Config {
    /// Hard-threshold magnitude on `v`; the `ℓ0` weight is `λ = τ² / (2ν)`.
    pub threshold: f64,
    pub nu: f64,
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for Sr3Config {
    fn default() -> Self {
        Sr3Config {
            threshold: 0.1,
            nu: 1.0,
            max_iter: 200,
            tol: default_tol(),
        }
    }
}

impl Sr3Config {
    pub fn lambda(&self) -> f64 {
        self.threshold * self.threshold / (2.0 * self.nu)
    }
}

/// Result of fitting one target column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFit {
    /// Full-length coefficients (zeros off-support).
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
}

fn scatter(n: usize, support: &[usize], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&j, &v) in support.iter().zip(values) {
        out[j] = v;
    }
    out
}

/// Sequentially thresholded least squares over the `allowed` columns.
pub fn stlsq_column(c: &Compressed, t: usize, allowed: &[usize], cfg: &StlsqConfig) -> ColumnFit {
    let mut active: Vec<usize> = allowed.to_vec();
    let mut iterations = 0;
    let mut converged = false;
    let mut rank_deficient = false;
    while iterations < cfg.max_iter.max(1) {
        iterations += 1;
        if active.is_empty() {
            converged = true;
            break;
        }
        let (xi, rd) = c.lstsq(t, &active, cfg.alpha);
        rank_deficient |= rd;
        let next: Vec<usize> = active
            .iter()
            .zip(&xi)
            .filter(|(_, v)| v.abs() >= cfg.threshold)
            .map(|(j, _)| *j)
            .collect();
        if next == active {
            converged = true;
            break;
        }
        active = next;
    }
    let (xi, rd) = c.lstsq(t, &active, 0.0);
    ColumnFit {
        coefficients: scatter(c.n_terms(), &active, &xi),
        iterations,
        converged,
        rank_deficient: rank_deficient || rd,
    }
}

/// SR3 with a hard-threshold (`ℓ0`) regulariser over the `allowed` columns.
pub fn sr3_column(c: &Compressed, t: usize, allowed: &[usize], cfg: &Sr3Config) -> ColumnFit {
    let k = allowed.len();
    if k == 0 {
        return ColumnFit {
            coefficients: vec![0.0; c.n_terms()],
            iterations: 0,
            converged: true,
            rank_deficient: false,
        };
    }
    let (gram, moment) = c.normal_equations(t, allowed);
    let inv_nu = 1.0 / cfg.nu;
    let h = &gram + DMatrix::identity(k, k) * inv_nu;
    let chol = h.clone().cholesky();
    let solve = |rhs: &DVector<f64>| match &chol {
        Some(ch) => ch.solve(rhs),
        None => h.clone().svd(true, true).solve(rhs, 0.0).expect("SVD computed with both factors"),
    };
    let thresh = (2.0 * cfg.lambda() * cfg.nu).sqrt();
    let mut v = DVector::<f64>::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter.max(1) {
        iterations += 1;
        let w = solve(&(&moment + &v * inv_nu));
        let next = w.map(|x| if x.abs() >= thresh { x } else { 0.0 });
        let change = (&next - &v).norm();
        v = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let support: Vec<usize> = allowed
        .iter()
        .zip(v.iter())
        .filter(|(_, x)| **x != 0.0)
        .map(|(j, _)| *j)
        .collect();
    let (xi, rd) = c.lstsq(t, &support, 0.0);
    ColumnFit {
        coefficients: scatter(c.n_terms(), &support, &xi),
        iterations,
        converged,
        rank_deficient: rd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn design(n: usize, m: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, m), |(i, j)| {
            let x = i as f64 / n as f64 * 4.0 - 2.0;
            x.powi(j as i32) + 0.1 * ((i * (j + 3)) as f64).sin()
        })
    }

    #[test]
    fn compression_preserves_residuals() {
        let theta = design(10_000, 5);
        let y = Array2::from_shape_fn((10_000, 2), |(i, j)| (i as f64 * 0.001).cos() * (j + 1) as f64);
        let c = Compressed::new(theta.view(), y.view());
        let coef = [0.3, -1.0, 0.5, 0.0, 2.0];
        let direct: f64 = (0..10_000)
            .map(|i| {
                let p: f64 = (0..5).map(|j| theta[[i, j]] * coef[j]).sum();
                (p - y[[i, 1]]).powi(2)
            })
            .sum();
        assert!((c.residual(1, &coef) - direct).abs() < 1e-8 * direct);
        let energy: f64 = y.column(0).iter().map(|v| v * v).sum();
        assert!((c.target_energy(0) - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn subset_least_squares_matches_normal_equations() {
        let theta = design(500, 4);
        let y = Array2::from_shape_fn((500, 1), |(i, _)| (i as f64 * 0.01).sin());
        let c = Compressed::new(theta.view(), y.view());
        let support = [0, 2, 3];
        let (x, rd) = c.lstsq(0, &support, 0.0);
        assert!(!rd);
        let a = DMatrix::from_fn(500, 3, |i, j| theta[[i, support[j]]]);
        let b = DVector::from_fn(500, |i, _| y[[i, 0]]);
        let expected = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
        for j in 0..3 {
            assert!((x[j] - expected[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn ridge_shrinks() {
        let theta = design(200, 3);
        let y = Array2::from_shape_fn((200, 1), |(i, _)| theta[[i, 1]] * 3.0);
        let c = Compressed::new(theta.view(), y.view());
        let (plain, _) = c.lstsq(0, &[0, 1, 2], 0.0);
        let (ridge, _) = c.lstsq(0, &[0, 1, 2], 100.0);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!(norm(&ridge) < norm(&plain));
    }

    #[test]
    fn duplicate_columns_are_flagged() {
        let mut theta = design(100, 3);
        let copy = theta.column(0).to_owned();
        theta.column_mut(2).assign(&copy);
        let y = Array2::from_shape_fn((100, 1), |(i, _)| theta[[i, 0]]);
        let c = Compressed::new(theta.view(), y.view());
        let (x, rd) = c.lstsq(0, &[0, 1, 2], 0.0);
        assert!(rd);
        // minimum-norm solution splits the weight evenly
        assert!((x[0] - 0.5).abs() < 1e-8 && (x[2] - 0.5).abs() < 1e-8 && x[1].abs() < 1e-8);
    }

    #[test]
    fn stlsq_and_sr3_zero_target() {
        let theta = design(100, 4);
        let y = Array2::zeros((100, 1));
        let c = Compressed::new(theta.view(), y.view());
        let all = [0, 1, 2, 3];
        assert!(stlsq_column(&c, 0, &all, &StlsqConfig::default()).coefficients.iter().all(|v| *v == 0.0));
        assert!(sr3_column(&c, 0, &all, &Sr3Config::default()).coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn threshold_above_everything_empties_sr3() {
        let theta = design(100, 4);
        let y = Array2::from_shape_fn((100, 1), |(i, _)| 2.0 * theta[[i, 1]]);
        let c = Compressed::new(theta.view(), y.view());
        let cfg = Sr3Config {
            threshold: 10.0,
            ..Default::default()
        };
        assert!(sr3_column(&c, 0, &[0, 1, 2, 3], &cfg).coefficients.iter().all(|v| *v == 0.0));
    }
}
