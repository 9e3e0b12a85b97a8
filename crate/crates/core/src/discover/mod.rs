//! Sparse-regression discovery: STLSQ, SR3, weak-form systems and bootstrap
//! ensembles, plus conversion of fitted coefficients to expressions.

mod regression;
mod weak;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{derivative_name, Expr};
use crate::featlib::{Term, TermLibrary, WeakTerm};

pub use regression::{sr3_column, stlsq_column, ColumnFit, Compressed, Sr3Config, StlsqConfig};
pub use weak::{default_half_width, project, subdomain_corners, weak_library, weak_terms, WeakError, WeakFormConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Stlsq,
    Sr3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", rename_all = "lowercase")]
pub enum Optimizer {
    Stlsq(StlsqConfig),
    Sr3(Sr3Config),
}

impl Optimizer {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Stlsq(_) => OptimizerKind::Stlsq,
            Optimizer::Sr3(_) => OptimizerKind::Sr3,
        }
    }

    pub fn fit_column(&self, c: &Compressed, t: usize, allowed: &[usize]) -> ColumnFit {
        match self {
            Optimizer::Stlsq(cfg) => stlsq_column(c, t, allowed, cfg),
            Optimizer::Sr3(cfg) => sr3_column(c, t, allowed, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub subset_ratio: f64,
    pub inclusion_threshold: f64,
    pub base: Optimizer,
    pub seed: u64,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
}

fn default_aggregation() -> Aggregation {
    Aggregation::Median
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub rank_deficient: bool,
    /// `(N_terms, d)` fractions of ensemble members with a nonzero coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion_probabilities: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Coefficients `Ξ` of shape `(N_terms, d)` over a library's terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub method: String,
    pub terms: Vec<Term>,
    pub target_names: Vec<String>,
    pub coefficients: Array2<f64>,
    pub diagnostics: Diagnostics,
}

impl SparseModel {
    pub fn empty(lib: &TermLibrary, method: &str) -> SparseModel {
        SparseModel {
            method: method.to_string(),
            terms: lib.terms.clone(),
            target_names: lib.target_names.clone(),
            coefficients: Array2::zeros((lib.n_terms(), lib.n_targets())),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.terms.len()).filter(|&j| self.coefficients[[j, i]] != 0.0).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.iter().all(|v| *v == 0.0)
    }

    /// `Θ Ξ` on a library with the same term list.
    pub fn predict(&self, lib: &TermLibrary) -> Array2<f64> {
        assert_eq!(lib.terms.len(), self.terms.len(), "library and model terms differ");
        let mut coef = self.coefficients.clone();
        if let Some(scales) = &lib.scales {
            for (mut row, s) in coef.rows_mut().into_iter().zip(scales) {
                row.mapv_inplace(|v| v * s);
            }
        }
        lib.theta.dot(&coef)
    }

    /// Strong-form terms of equation `i` as (template, coefficient), keyed by
    /// canonical template; weak terms are expanded by the chain rule.
    pub fn strong_form(&self, i: usize) -> BTreeMap<String, (Expr, f64)> {
        let mut out: BTreeMap<String, (Expr, f64)> = BTreeMap::new();
        for (j, term) in self.terms.iter().enumerate() {
            let c = self.coefficients[[j, i]];
            if c == 0.0 {
                continue;
            }
            let pieces = match &term.weak {
                Some(w) => expand_weak(w),
                None => vec![(term.template.clone(), 1.0)],
            };
            for (e, k) in pieces {
                let key = e.canonical_string();
                out.entry(key).or_insert_with(|| (e, 0.0)).1 += c * k;
            }
        }
        out.retain(|_, (_, c)| *c != 0.0);
        out
    }

    /// Coefficient map per equation in the strong-form symbol algebra.
    pub fn term_maps(&self) -> Vec<BTreeMap<String, f64>> {
        (0..self.n_states())
            .map(|i| self.strong_form(i).into_iter().map(|(k, (_, c))| (k, c)).collect())
            .collect()
    }
}

/// One canonical expression per state variable; an empty equation is `0`.
pub fn to_expressions(model: &SparseModel) -> Vec<Expr> {
    (0..model.n_states())
        .map(|i| {
            let form = model.strong_form(i);
            if form.is_empty() {
                return Expr::num(0.0);
            }
            let canon = Expr::sum(form.into_values().map(|(e, c)| Expr::num(c) * e)).canonicalize();
            let mut terms = Vec::new();
            split_sum(canon, &mut terms);
            Expr::sum(terms.into_iter().map(with_coefficient))
        })
        .collect()
}

fn split_sum(e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Binary(crate::expr::BinaryOp::Add, a, b) => {
            split_sum(*a, out);
            split_sum(*b, out);
        }
        other => out.push(other),
    }
}

// Canonicalization drops a unit coefficient; equations keep it so every term
// reads as coefficient times feature.
fn with_coefficient(term: Expr) -> Expr {
    match term {
        Expr::Const(_) => term,
        Expr::Binary(crate::expr::BinaryOp::Mul, a, b) => match *a {
            Expr::Const(_) => Expr::Binary(crate::expr::BinaryOp::Mul, a, b),
            inner => Expr::Binary(crate::expr::BinaryOp::Mul, Box::new(with_coefficient(inner)), b),
        },
        other => Expr::num(1.0) * other,
    }
}

// ---------------------------------------------------------------------------
// Chain rule for weak terms

type Monomial = BTreeMap<String, u32>;

fn collect_factors(e: &Expr, coef: &mut f64, mono: &mut Monomial) -> bool {
    match e {
        Expr::Const(c) => {
            *coef *= c;
            true
        }
        Expr::Var(v) => {
            *mono.entry(v.clone()).or_insert(0) += 1;
            true
        }
        Expr::Binary(crate::expr::BinaryOp::Mul, a, b) => collect_factors(a, coef, mono) && collect_factors(b, coef, mono),
        Expr::Binary(crate::expr::BinaryOp::Pow, base, exp) => match (base.as_ref(), exp.as_const()) {
            (Expr::Var(v), Some(k)) if k >= 1.0 && k.fract() == 0.0 => {
                *mono.entry(v.clone()).or_insert(0) += k as u32;
                true
            }
            _ => false,
        },
        _ => false,
    }
}

/// Name of `∂_axis` applied to a state or single-axis derivative symbol.
fn differentiate_symbol(name: &str, axis: &str) -> String {
    match name.split_once('_') {
        None => {
            let state: usize = name[1..].parse().expect("state symbols are u<index>");
            derivative_name(state - 1, axis, 1)
        }
        Some(_) => format!("{name}{axis}"),
    }
}

fn differentiate_polynomial(poly: &BTreeMap<Monomial, f64>, axis: &str) -> BTreeMap<Monomial, f64> {
    let mut out: BTreeMap<Monomial, f64> = BTreeMap::new();
    for (mono, c) in poly {
        for (factor, &power) in mono {
            let mut next = mono.clone();
            if power == 1 {
                next.remove(factor);
            } else {
                next.insert(factor.clone(), power - 1);
            }
            *next.entry(differentiate_symbol(factor, axis)).or_insert(0) += 1;
            *out.entry(next).or_insert(0.0) += c * power as f64;
        }
    }
    out.retain(|_, c| *c != 0.0);
    out
}

fn monomial_expr(mono: &Monomial) -> Expr {
    Expr::product(mono.iter().map(|(v, &p)| {
        if p == 1 {
            Expr::var(v.clone())
        } else {
            Expr::var(v.clone()).pow(Expr::num(p as f64))
        }
    }))
    .canonicalize()
}

/// `D_axis^order(base)` as a sum of strong-form monomials `(template, coefficient)`.
pub fn expand_weak(term: &WeakTerm) -> Vec<(Expr, f64)> {
    let mut coef = 1.0;
    let mut mono = Monomial::new();
    if !collect_factors(&term.base, &mut coef, &mut mono) {
        assert_eq!(term.order, 0, "only monomials carry weak derivatives");
        return vec![(term.base.clone(), 1.0)];
    }
    let mut poly = BTreeMap::from([(mono, coef)]);
    for _ in 0..term.order {
        poly = differentiate_polynomial(&poly, &term.axis);
    }
    poly.into_iter().map(|(m, c)| (monomial_expr(&m), c)).collect()
}

// ---------------------------------------------------------------------------
// Fitting

/// Fits every target column of a compressed system over the `allowed` columns.
pub fn fit_compressed(lib: &TermLibrary, c: &Compressed, allowed: &[usize], opt: &Optimizer, method: &str) -> SparseModel {
    let fits: Vec<ColumnFit> = (0..c.n_targets()).into_par_iter().map(|t| opt.fit_column(c, t, allowed)).collect();
    let mut model = SparseModel::empty(lib, method);
    for (t, f) in fits.iter().enumerate() {
        for (j, v) in f.coefficients.iter().enumerate() {
            let s = lib.scales.as_ref().map_or(1.0, |s| s[j]);
            model.coefficients[[j, t]] = v / s;
        }
    }
    model.diagnostics.iterations = fits.iter().map(|f| f.iterations).collect();
    model.diagnostics.converged = fits.iter().map(|f| f.converged).collect();
    model.diagnostics.rank_deficient = fits.iter().any(|f| f.rank_deficient);
    if model.diagnostics.rank_deficient {
        model.diagnostics.notes.push("rank-deficient active set; minimum-norm solution used".into());
    }
    model
}

fn all_columns(lib: &TermLibrary) -> Vec<usize> {
    (0..lib.n_terms()).collect()
}

pub fn fit(lib: &TermLibrary, opt: &Optimizer, method: &str) -> SparseModel {
    let c = Compressed::new(lib.theta.view(), lib.targets.view());
    fit_compressed(lib, &c, &all_columns(lib), opt, method)
}

pub fn stlsq(lib: &TermLibrary, cfg: &StlsqConfig) -> SparseModel {
    fit(lib, &Optimizer::Stlsq(*cfg), "stlsq")
}

pub fn sr3(lib: &TermLibrary, cfg: &Sr3Config) -> SparseModel {
    fit(lib, &Optimizer::Sr3(*cfg), "sr3")
}

/// Row indices of ensemble member `m`: sampled without replacement, sorted.
pub fn ensemble_rows(n: usize, ratio: f64, seed: u64, m: usize) -> Vec<usize> {
    let k = ((n as f64 * ratio).round() as usize).clamp(1, n);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    let mut rows = sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

fn aggregate(values: &mut [f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Median => {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            }
        }
    }
}

/// Compressed row subsample of ensemble member `m`.
pub fn ensemble_member(lib: &TermLibrary, ratio: f64, seed: u64, m: usize) -> Compressed {
    let rows = ensemble_rows(lib.n_samples(), ratio, seed, m);
    let sub = lib.select_rows(&rows);
    Compressed::new(sub.theta.view(), sub.targets.view())
}

/// Bootstrap ensemble over row subsamples of `lib`, restricted to `allowed` columns.
pub fn ensemble_subset(lib: &TermLibrary, allowed: &[usize], cfg: &EnsembleConfig, method: &str) -> SparseModel {
    let members: Vec<Compressed> = (0..cfg.n_models.max(1))
        .into_par_iter()
        .map(|m| ensemble_member(lib, cfg.subset_ratio, cfg.seed, m))
        .collect();
    let refs: Vec<&Compressed> = members.iter().collect();
    ensemble_from_members(lib, &refs, allowed, cfg, method)
}

/// Ensemble over precomputed member systems; `members[m]` must come from
/// [`ensemble_member`] with the same ratio and seed. Only the first
/// `cfg.n_models` are used.
pub fn ensemble_from_members(lib: &TermLibrary, members: &[&Compressed], allowed: &[usize], cfg: &EnsembleConfig, method: &str) -> SparseModel {
    let n_models = cfg.n_models.max(1);
    assert!(members.len() >= n_models, "not enough ensemble members");
    let members: Vec<SparseModel> = members[..n_models]
        .par_iter()
        .map(|c| fit_compressed(lib, c, allowed, &cfg.base, method))
        .collect();
    let (nt, d) = (lib.n_terms(), lib.n_targets());
    let mut model = SparseModel::empty(lib, method);
    let mut probabilities = vec![vec![0.0; d]; nt];
    for j in 0..nt {
        for i in 0..d {
            let mut nonzero: Vec<f64> = members
                .iter()
                .map(|mm| mm.coefficients[[j, i]])
                .filter(|v| *v != 0.0)
                .collect();
            let p = nonzero.len() as f64 / n_models as f64;
            probabilities[j][i] = p;
            if !nonzero.is_empty() && p >= cfg.inclusion_threshold {
                model.coefficients[[j, i]] = aggregate(&mut nonzero, cfg.aggregation);
            }
        }
    }
    model.diagnostics.iterations = members.iter().flat_map(|m| m.diagnostics.iterations.clone()).collect();
    model.diagnostics.converged = members.iter().flat_map(|m| m.diagnostics.converged.clone()).collect();
    model.diagnostics.rank_deficient = members.iter().any(|m| m.diagnostics.rank_deficient);
    model.diagnostics.inclusion_probabilities = Some(probabilities);
    if members.iter().all(|m| m.is_empty()) {
        model.diagnostics.notes.push("all ensemble members are empty".into());
    }
    model
}

pub fn ensemble(lib: &TermLibrary, cfg: &EnsembleConfig) -> SparseModel {
    ensemble_subset(lib, &all_columns(lib), cfg, "ensemble")
}
