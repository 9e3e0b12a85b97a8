//! Weak-form linear systems.
//!
//! Each query subdomain is a box of half-widths `h_t, h_1, ..` grid cells
//! around a random grid point. The test function is
//! `φ = Π_a (1 − ŝ_a²)^{p_a}` in local coordinates `ŝ_a ∈ [−1, 1]`, so for
//! `u_t = Σ ξ_k D^j(g_k)` integration by parts gives
//! `−∫ u ∂_t φ = Σ ξ_k ∫ g_k (−1)^j ∂^j φ`. Both sides are integrated with the
//! trapezoidal rule; the endpoint weights vanish because `φ` does.

use ndarray::{Array2, ArrayD, Axis as NdAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{state_name, Expr};
use crate::featlib::{
    evaluate_on, monomials, transcendental_terms, BasisFamily, LibraryError, LibrarySpec, Term, TermClass,
    TermKind, TermLibrary, WeakTerm,
};
use crate::tensorgrid::Field;

use super::OptimizerKind;

#[derive(Debug, Error)]
pub enum WeakError {
    #[error("weak form needs spatial axes")]
    NoSpatialAxes,
    #[error("subdomain of half-width {half_width} does not fit axis `{axis}` with {count} points")]
    SubdomainTooLarge { axis: String, half_width: usize, count: usize },
    #[error("derivative order {order} needs test-function exponent above {order}, got {exponent}")]
    ExponentTooSmall { order: u8, exponent: u32 },
    #[error("need at least one subdomain")]
    NoSubdomains,
    #[error(transparent)]
    Library(#[from] LibraryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormConfig {
    pub n_subdomains: usize,
    /// `(p_x, p_t)`; defaults to `r + 2` for both.
    #[serde(default)]
    pub exponents: Option<(u32, u32)>,
    /// Half-widths in cells, time first then spatial axes; defaults to `⌈N/16⌉` of each axis.
    #[serde(default)]
    pub half_widths: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sr3
}

impl WeakFormConfig {
    pub fn new(n_subdomains: usize, seed: u64) -> WeakFormConfig {
        WeakFormConfig {
            n_subdomains,
            exponents: None,
            half_widths: None,
            seed,
            optimizer: default_optimizer(),
        }
    }
}

/// `⌈count / 16⌉`
pub fn default_half_width(count: usize) -> usize {
    count.div_ceil(16)
}

/// Coefficients of `(1 − s²)^p` by ascending power of `s`.
fn bump_polynomial(p: u32) -> Vec<f64> {
    let mut c = vec![0.0; 2 * p as usize + 1];
    let mut binom = 1.0;
    for m in 0..=p {
        c[2 * m as usize] = if m % 2 == 0 { binom } else { -binom };
        binom = binom * (p - m) as f64 / (m + 1) as f64;
    }
    c
}

fn differentiate_poly(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(n, v)| v * n as f64).collect()
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * s + v)
}

/// Weights `∂^j ψ` at the `2h + 1` window points, including the grid spacing
/// of the trapezoidal rule, for `j = 0..=max_order`.
fn axis_weights(p: u32, half_width: usize, step: f64, max_order: u8) -> Vec<Vec<f64>> {
    let width = half_width as f64 * step;
    let mut poly = bump_polynomial(p);
    let mut out = Vec::with_capacity(max_order as usize + 1);
    for j in 0..=max_order {
        let scale = step / width.powi(j as i32);
        out.push(
            (0..=2 * half_width)
                .map(|i| {
                    let s = (i as f64 - half_width as f64) / half_width as f64;
                    if i == 0 || i == 2 * half_width {
                        // trapezoid endpoints carry ψ^(j)(±1) = 0 for j < p
                        0.0
                    } else {
                        horner(&poly, s) * scale
                    }
                })
                .collect(),
        );
        poly = differentiate_poly(&poly);
    }
    out
}

/// `Σ g · w_t ⊗ w_1 ⊗ ..` over one window of a time-major grid.
fn window_sum(values: &[f64], shape: &[usize], lo: &[usize], weights: &[&[f64]]) -> f64 {
    match shape.len() {
        2 => {
            let nx = shape[1];
            let mut total = 0.0;
            for (a, wt) in weights[0].iter().enumerate() {
                if *wt == 0.0 {
                    continue;
                }
                let row = &values[(lo[0] + a) * nx + lo[1]..];
                let inner: f64 = weights[1].iter().zip(row).map(|(w, v)| w * v).sum();
                total += wt * inner;
            }
            total
        }
        3 => {
            let (nx, ny) = (shape[1], shape[2]);
            let mut total = 0.0;
            for (a, wt) in weights[0].iter().enumerate() {
                if *wt == 0.0 {
                    continue;
                }
                let mut plane = 0.0;
                for (b, wx) in weights[1].iter().enumerate() {
                    if *wx == 0.0 {
                        continue;
                    }
                    let row = &values[((lo[0] + a) * nx + lo[1] + b) * ny + lo[2]..];
                    let inner: f64 = weights[2].iter().zip(row).map(|(w, v)| w * v).sum();
                    plane += wx * inner;
                }
                total += wt * plane;
            }
            total
        }
        n => panic!("unsupported grid rank {n}"),
    }
}

fn weak_name(base: &Expr, axis: &str, order: u8) -> String {
    format!("D_{}({})", axis.repeat(order as usize), base)
}

/// Weak-form term list: `j = 0` bases, then `D_axis^j(monomial)` by (axis, j, monomial).
pub fn weak_terms(d: usize, axis_names: &[&str], spec: &LibrarySpec) -> Vec<Term> {
    let mut terms = Vec::new();
    let strong = |e: Expr, class| Term::strong(e, class);
    if spec.bias {
        terms.push(strong(Expr::num(1.0), TermClass::new(TermKind::Bias, 0, 0)));
    }
    let monos = if spec.has(BasisFamily::Poly) {
        monomials(d, spec.poly_order)
    } else {
        Vec::new()
    };
    for (m, deg) in &monos {
        terms.push(strong(m.clone(), TermClass::new(TermKind::Monomial, *deg, 0)));
    }
    terms.extend(transcendental_terms(d, spec));
    for axis in axis_names {
        for j in 1..=spec.derivative_order {
            for (m, deg) in &monos {
                terms.push(Term {
                    name: weak_name(m, axis, j),
                    template: m.clone(),
                    class: TermClass::new(TermKind::WeakDerivative, *deg, j),
                    weak: Some(WeakTerm {
                        base: m.clone(),
                        axis: axis.to_string(),
                        order: j,
                    }),
                });
            }
        }
    }
    terms
}

/// Subdomain corners (lowest grid index per axis, time first).
pub fn subdomain_corners(shape: &[usize], half_widths: &[usize], count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            shape
                .iter()
                .zip(half_widths)
                .map(|(&n, &h)| rng.random_range(0..=n - 1 - 2 * h))
                .collect()
        })
        .collect()
}

/// Builds the weak-form system for `field`.
pub fn weak_library(field: &Field, spec: &LibrarySpec, cfg: &WeakFormConfig) -> Result<TermLibrary, WeakError> {
    let dims = field.n_space();
    if dims == 0 {
        return Err(WeakError::NoSpatialAxes);
    }
    spec.validate(dims)?;
    if cfg.n_subdomains == 0 {
        return Err(WeakError::NoSubdomains);
    }
    let r = spec.derivative_order;
    let (px, pt) = cfg.exponents.unwrap_or((r as u32 + 2, r as u32 + 2));
    if (r as u32) + 1 > px {
        return Err(WeakError::ExponentTooSmall { order: r, exponent: px });
    }
    if pt < 2 {
        return Err(WeakError::ExponentTooSmall { order: 1, exponent: pt });
    }
    let mut axes = vec![&field.time];
    axes.extend(field.space.iter());
    let shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
    let half: Vec<usize> = match &cfg.half_widths {
        Some(h) if h.len() == axes.len() => h.clone(),
        Some(_) => {
            return Err(WeakError::Library(LibraryError::InvalidSpec(format!(
                "need {} half-widths (time and each spatial axis)",
                axes.len()
            ))))
        }
        None => shape.iter().map(|&n| default_half_width(n)).collect(),
    };
    for (a, (&h, &n)) in axes.iter().zip(half.iter().zip(&shape)) {
        if h == 0 || 2 * h + 1 > n {
            return Err(WeakError::SubdomainTooLarge {
                axis: a.name.clone(),
                half_width: h,
                count: n,
            });
        }
    }
    let d = field.n_states();
    let names = field.axis_names();
    let terms = weak_terms(d, &names, spec);
    // time weights: ψ_t and ∂_t ψ_t; spatial weights: ∂^j ψ_a for j ≤ r
    let time_w = axis_weights(pt, half[0], field.time.step, 1);
    let space_w: Vec<Vec<Vec<f64>>> = field
        .space
        .iter()
        .enumerate()
        .map(|(k, a)| axis_weights(px, half[k + 1], a.step, r))
        .collect();

    // base functions on the full grid
    let mut state_cols = std::collections::BTreeMap::new();
    for i in 0..d {
        state_cols.insert(state_name(i), field.state_values(i));
    }
    let n = field.points_per_state();
    let bases: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| evaluate_on(&t.template, &state_cols, n).expect("weak bases use state symbols"))
        .collect();
    let mut warnings = Vec::new();
    let finite: Vec<bool> = bases.iter().map(|b| b.iter().all(|v| v.is_finite())).collect();
    for (t, ok) in terms.iter().zip(&finite) {
        if !ok {
            warnings.push(format!("dropped term `{}`: non-finite values", t.name));
        }
    }
    let plan: Vec<(usize, Vec<usize>)> = terms
        .iter()
        .enumerate()
        .filter(|(j, _)| finite[*j])
        .map(|(j, t)| {
            // weight index per axis: time uses ψ_t, spatial axis a uses ∂^order if it is the term's axis
            let mut which = vec![0usize; dims];
            if let Some(w) = &t.weak {
                let k = names.iter().position(|a| *a == w.axis).expect("term axis exists");
                which[k] = w.order as usize;
            }
            (j, which)
        })
        .collect();
    if plan.is_empty() {
        return Err(WeakError::Library(LibraryError::Empty));
    }
    let signs: Vec<f64> = plan
        .iter()
        .map(|(j, _)| match &terms[*j].weak {
            Some(w) if w.order % 2 == 1 => -1.0,
            _ => 1.0,
        })
        .collect();
    let corners = subdomain_corners(&shape, &half, cfg.n_subdomains, cfg.seed);
    let states: Vec<Vec<f64>> = (0..d).map(|i| field.state_values(i)).collect();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = corners
        .par_iter()
        .map(|lo| {
            let row: Vec<f64> = plan
                .iter()
                .zip(&signs)
                .map(|((j, which), sign)| {
                    let mut w: Vec<&[f64]> = vec![&time_w[0]];
                    for (k, &o) in which.iter().enumerate() {
                        w.push(&space_w[k][o]);
                    }
                    sign * window_sum(&bases[*j], &shape, lo, &w)
                })
                .collect();
            let mut w: Vec<&[f64]> = vec![&time_w[1]];
            for sw in &space_w {
                w.push(&sw[0]);
            }
            let target: Vec<f64> = states.iter().map(|u| -window_sum(u, &shape, lo, &w)).collect();
            (row, target)
        })
        .collect();
    let kept: Vec<Term> = plan.iter().map(|(j, _)| terms[*j].clone()).collect();
    let mut theta = Array2::zeros((rows.len(), kept.len()));
    let mut targets = Array2::zeros((rows.len(), d));
    for (i, (row, target)) in rows.into_iter().enumerate() {
        theta.row_mut(i).iter_mut().zip(row).for_each(|(o, v)| *o = v);
        targets.row_mut(i).iter_mut().zip(target).for_each(|(o, v)| *o = v);
    }
    let lib = TermLibrary {
        terms: kept,
        theta,
        targets,
        target_names: (0..d).map(|i| format!("{}_t", state_name(i))).collect(),
        scales: None,
        warnings,
    };
    Ok(if spec.rescale { lib.rescaled() } else { lib })
}

/// `∫ v φ_query` for an arbitrary grid array, with the same subdomains as [`weak_library`];
/// used to compare weak entries against strong-form quadrature.
pub fn project(values: &ArrayD<f64>, field: &Field, spec: &LibrarySpec, cfg: &WeakFormConfig) -> Vec<f64> {
    let r = spec.derivative_order;
    let (px, pt) = cfg.exponents.unwrap_or((r as u32 + 2, r as u32 + 2));
    let mut axes = vec![&field.time];
    axes.extend(field.space.iter());
    let shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
    let half: Vec<usize> = cfg
        .half_widths
        .clone()
        .unwrap_or_else(|| shape.iter().map(|&n| default_half_width(n)).collect());
    let time_w = axis_weights(pt, half[0], field.time.step, 0);
    let space_w: Vec<Vec<Vec<f64>>> = field
        .space
        .iter()
        .enumerate()
        .map(|(k, a)| axis_weights(px, half[k + 1], a.step, 0))
        .collect();
    let flat: Vec<f64> = values.index_axis(NdAxis(0), 0).iter().copied().collect();
    subdomain_corners(&shape, &half, cfg.n_subdomains, cfg.seed)
        .iter()
        .map(|lo| {
            let mut w: Vec<&[f64]> = vec![&time_w[0]];
            for sw in &space_w {
                w.push(&sw[0]);
            }
            window_sum(&flat, &shape, lo, &w)
        })
        .collect()
}
