//! Candidate-term libraries `Θ` for sparse regression.
//!
//! Samples are grid points in time-major order, then spatial axes in their
//! declared order, which is the row-major layout of one state slice of a
//! [`Field`]. Column order is fixed by [`LibrarySpec`]:
//!
//! 1. bias `1` (if enabled),
//! 2. state monomials by total degree `1..=p`, each degree enumerated as
//!    combinations with replacement of `u1..ud`,
//! 3. `sin(u_i)`, `cos(u_i)`, `exp(u_i)` for each enabled family,
//! 4. derivative symbols in [`SymbolTable`] order,
//! 5. interactions: every monomial of degree `1..=p` times every derivative symbol.
//!
//! Products of two derivative symbols (`u1_x*u1_x`) are never generated.

use std::collections::BTreeMap;

use itertools::Itertools;
use ndarray::{Array2, ArrayD, Axis as NdAxis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{state_name, Bindings, Expr, SymbolRole, SymbolTable};
use crate::tensorgrid::{differentiate_array, Field, GridError};

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("invalid library spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("library has no finite columns")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    #[serde(alias = "polynomial")]
    Poly,
    Sin,
    Cos,
    Exp,
}

impl BasisFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisFamily::Poly => "poly",
            BasisFamily::Sin => "sin",
            BasisFamily::Cos => "cos",
            BasisFamily::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub families: Vec<BasisFamily>,
    pub poly_order: u8,
    /// Highest spatial derivative order; ignored for ODE data.
    pub derivative_order: u8,
    pub interactions: bool,
    pub bias: bool,
    /// Divide each column by its RMS; fitted coefficients are mapped back.
    #[serde(default)]
    pub rescale: bool,
}

impl LibrarySpec {
    pub fn ode(families: &[BasisFamily], poly_order: u8) -> LibrarySpec {
        LibrarySpec {
            families: families.to_vec(),
            poly_order,
            derivative_order: 1,
            interactions: false,
            bias: true,
            rescale: false,
        }
    }

    pub fn pde(families: &[BasisFamily], poly_order: u8, derivative_order: u8) -> LibrarySpec {
        LibrarySpec {
            families: families.to_vec(),
            poly_order,
            derivative_order,
            interactions: true,
            bias: false,
            rescale: false,
        }
    }

    pub fn has(&self, family: BasisFamily) -> bool {
        self.families.contains(&family)
    }

    /// Whether a term of this class belongs to the library described by `self`.
    pub fn admits(&self, class: &TermClass) -> bool {
        let poly = self.has(BasisFamily::Poly) && class.degree <= self.poly_order;
        let order = class.derivative_order <= self.derivative_order;
        match class.kind {
            TermKind::Bias => self.bias,
            TermKind::Monomial => poly,
            TermKind::Sin => self.has(BasisFamily::Sin),
            TermKind::Cos => self.has(BasisFamily::Cos),
            TermKind::Exp => self.has(BasisFamily::Exp),
            TermKind::Derivative => order,
            TermKind::Interaction => self.interactions && poly && order,
            TermKind::WeakDerivative => poly && order,
        }
    }

    pub fn validate(&self, spatial_dims: usize) -> Result<(), LibraryError> {
        if !(1..=4).contains(&self.poly_order) {
            return Err(LibraryError::InvalidSpec(format!("polynomial order {} outside 1..=4", self.poly_order)));
        }
        if spatial_dims > 0 && !(1..=4).contains(&self.derivative_order) {
            return Err(LibraryError::InvalidSpec(format!(
                "derivative order {} outside 1..=4",
                self.derivative_order
            )));
        }
        if spatial_dims > 2 {
            return Err(LibraryError::InvalidSpec(format!("{spatial_dims} spatial dimensions, at most 2 supported")));
        }
        if self.families.is_empty() && !self.bias {
            return Err(LibraryError::InvalidSpec("no basis families".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Bias,
    Monomial,
    Sin,
    Cos,
    Exp,
    Derivative,
    /// Monomial times one derivative symbol.
    Interaction,
    /// Spatial derivative of a monomial, weak form only.
    WeakDerivative,
}

/// What a column is made of; used to carve sub-libraries out of a larger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermClass {
    pub kind: TermKind,
    /// Total state degree of the monomial part (0 if none).
    pub degree: u8,
    /// Spatial derivative order (0 if none).
    pub derivative_order: u8,
}

impl TermClass {
    pub fn new(kind: TermKind, degree: u8, derivative_order: u8) -> TermClass {
        TermClass {
            kind,
            degree,
            derivative_order,
        }
    }
}

/// A weak-form term `D_axis^order(base)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakTerm {
    pub base: Expr,
    pub axis: String,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    /// For strong-form terms the column expression; for weak terms the base function.
    pub template: Expr,
    pub name: String,
    pub class: TermClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak: Option<WeakTerm>,
}

impl Term {
    pub fn strong(template: Expr, class: TermClass) -> Term {
        let template = template.canonicalize();
        Term {
            name: template.to_string(),
            template,
            class,
            weak: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermLibrary {
    pub terms: Vec<Term>,
    /// `(N_samples, N_terms)`
    pub theta: Array2<f64>,
    /// `(N_samples, d)`
    pub targets: Array2<f64>,
    pub target_names: Vec<String>,
    /// Column divisors when rescaled.
    pub scales: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl TermLibrary {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_samples(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.ncols()
    }

    pub fn names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn is_weak(&self) -> bool {
        self.terms.iter().any(|t| t.weak.is_some())
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> TermLibrary {
        TermLibrary {
            terms: self.terms.clone(),
            theta: self.theta.select(NdAxis(0), indices),
            targets: self.targets.select(NdAxis(0), indices),
            target_names: self.target_names.clone(),
            scales: self.scales.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> TermLibrary {
        TermLibrary {
            terms: indices.iter().map(|&j| self.terms[j].clone()).collect(),
            theta: self.theta.select(NdAxis(1), indices),
            targets: self.targets.clone(),
            target_names: self.target_names.clone(),
            scales: self.scales.as_ref().map(|s| indices.iter().map(|&j| s[j]).collect()),
            warnings: self.warnings.clone(),
        }
    }

    /// Indices of the columns admitted by `spec`.
    pub fn columns_for(&self, spec: &LibrarySpec) -> Vec<usize> {
        (0..self.terms.len()).filter(|&j| spec.admits(&self.terms[j].class)).collect()
    }

    /// Divides columns by their RMS and records the divisors.
    pub fn rescaled(mut self) -> TermLibrary {
        let n = self.theta.nrows().max(1) as f64;
        let scales: Vec<f64> = self
            .theta
            .axis_iter(NdAxis(1))
            .map(|c| {
                let rms = (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                if rms > 0.0 && rms.is_finite() {
                    rms
                } else {
                    1.0
                }
            })
            .collect();
        for (mut col, s) in self.theta.axis_iter_mut(NdAxis(1)).zip(&scales) {
            col.mapv_inplace(|v| v / s);
        }
        self.scales = Some(scales);
        self
    }
}

pub fn axis_names(spatial_dims: usize) -> Vec<&'static str> {
    AXIS_NAMES[..spatial_dims].to_vec()
}

/// States `u1..ud`, then `u{i}_{axis^j}` for `j = 1..=r` by (state, axis, order).
pub fn build_symbols(d: usize, spatial_dims: usize, max_order: u8) -> SymbolTable {
    let order = if spatial_dims == 0 { 0 } else { max_order };
    SymbolTable::for_grid(d, &axis_names(spatial_dims), order)
}

/// Monomials of `u1..ud` with total degree `1..=p`, in library order, with their degrees.
pub fn monomials(d: usize, p: u8) -> Vec<(Expr, u8)> {
    (1..=p as usize)
        .flat_map(|deg| {
            (0..d).combinations_with_replacement(deg).map(move |combo| {
                let factors = combo.iter().dedup_with_count().map(|(count, &i)| {
                    let v = Expr::var(state_name(i));
                    if count == 1 {
                        v
                    } else {
                        v.pow(Expr::num(count as f64))
                    }
                });
                (Expr::product(factors).canonicalize(), deg as u8)
            })
        })
        .collect()
}

/// Term templates for a strong-form library, in column order.
pub fn strong_terms(d: usize, symbols: &SymbolTable, spec: &LibrarySpec) -> Vec<Term> {
    let mut terms = Vec::new();
    if spec.bias {
        terms.push(Term::strong(Expr::num(1.0), TermClass::new(TermKind::Bias, 0, 0)));
    }
    let monos = if spec.has(BasisFamily::Poly) {
        monomials(d, spec.poly_order)
    } else {
        Vec::new()
    };
    terms.extend(
        monos
            .iter()
            .map(|(m, deg)| Term::strong(m.clone(), TermClass::new(TermKind::Monomial, *deg, 0))),
    );
    terms.extend(transcendental_terms(d, spec));
    let derivs: Vec<(Expr, u8)> = symbols
        .iter()
        .filter_map(|s| match s.role {
            SymbolRole::SpatialDerivative { order, .. } => Some((Expr::var(s.name.clone()), order)),
            _ => None,
        })
        .collect();
    terms.extend(
        derivs
            .iter()
            .map(|(e, j)| Term::strong(e.clone(), TermClass::new(TermKind::Derivative, 0, *j))),
    );
    if spec.interactions {
        for (m, deg) in &monos {
            for (dv, j) in &derivs {
                terms.push(Term::strong(
                    m.clone() * dv.clone(),
                    TermClass::new(TermKind::Interaction, *deg, *j),
                ));
            }
        }
    }
    terms
}

/// `sin(u_i)`, `cos(u_i)`, `exp(u_i)` for the enabled families.
pub fn transcendental_terms(d: usize, spec: &LibrarySpec) -> Vec<Term> {
    let mut terms = Vec::new();
    for (family, kind) in [
        (BasisFamily::Sin, TermKind::Sin),
        (BasisFamily::Cos, TermKind::Cos),
        (BasisFamily::Exp, TermKind::Exp),
    ] {
        if spec.has(family) {
            for i in 0..d {
                let u = Expr::var(state_name(i));
                let e = match family {
                    BasisFamily::Sin => u.sin(),
                    BasisFamily::Cos => u.cos(),
                    _ => u.exp(),
                };
                terms.push(Term::strong(e, TermClass::new(kind, 1, 0)));
            }
        }
    }
    terms
}

/// Values of every symbol (states and spatial derivatives), flattened per sample.
pub fn symbol_columns(field: &Field, max_order: u8) -> Result<BTreeMap<String, Vec<f64>>, GridError> {
    let d = field.n_states();
    let mut cols = BTreeMap::new();
    for i in 0..d {
        cols.insert(state_name(i), field.state_values(i));
    }
    let names = field.axis_names();
    let jobs: Vec<(usize, u8)> = (0..field.n_space())
        .flat_map(|k| (1..=max_order).map(move |j| (k, j)))
        .collect();
    let derived: Vec<(usize, u8, ArrayD<f64>)> = jobs
        .par_iter()
        .map(|&(k, j)| differentiate_array(&field.values, k + 2, &field.space[k], j).map(|a| (k, j, a)))
        .collect::<Result<_, _>>()?;
    for (k, j, arr) in derived {
        for i in 0..d {
            let name = crate::expr::derivative_name(i, names[k], j);
            cols.insert(name, arr.index_axis(NdAxis(0), i).iter().copied().collect());
        }
    }
    Ok(cols)
}

/// Evaluates a strong-form expression on precomputed symbol columns.
pub fn evaluate_on(expr: &Expr, columns: &BTreeMap<String, Vec<f64>>, n: usize) -> Result<Vec<f64>, crate::expr::ExprError> {
    let mut b = Bindings::new(n);
    for (k, v) in columns {
        b.bind(k, v)?;
    }
    expr.evaluate(&b)
}

/// Time-derivative targets: the stored clean derivatives if given, else finite
/// differences of the field along time. Shape `(N_samples, d)`.
pub fn time_targets(field: &Field, clean: Option<&ArrayD<f64>>) -> Result<Array2<f64>, GridError> {
    let derivative = match clean {
        Some(c) => {
            if c.shape() != field.values.shape() {
                return Err(GridError::ShapeMismatch {
                    expected: field.values.shape().to_vec(),
                    got: c.shape().to_vec(),
                });
            }
            c.clone()
        }
        None => differentiate_array(&field.values, 1, &field.time, 1)?,
    };
    let d = field.n_states();
    let n = field.points_per_state();
    let mut out = Array2::zeros((n, d));
    for i in 0..d {
        for (o, v) in out.column_mut(i).iter_mut().zip(derivative.index_axis(NdAxis(0), i).iter()) {
            *o = *v;
        }
    }
    Ok(out)
}

/// Builds the strong-form library `Θ` and targets for `field`.
pub fn build_library(field: &Field, spec: &LibrarySpec, clean: Option<&ArrayD<f64>>) -> Result<TermLibrary, LibraryError> {
    spec.validate(field.n_space())?;
    let d = field.n_states();
    let order = if field.n_space() == 0 { 0 } else { spec.derivative_order };
    let symbols = SymbolTable::for_grid(d, &field.axis_names(), order);
    let candidates = strong_terms(d, &symbols, spec);
    let columns = symbol_columns(field, order)?;
    let n = field.points_per_state();
    let evaluated: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|t| evaluate_on(&t.template, &columns, n).expect("library templates use known symbols"))
        .collect();
    let mut warnings = Vec::new();
    let mut terms = Vec::with_capacity(candidates.len());
    let mut kept = Vec::with_capacity(candidates.len());
    for (t, col) in candidates.into_iter().zip(evaluated) {
        if col.iter().all(|v| v.is_finite()) {
            terms.push(t);
            kept.push(col);
        } else {
            warnings.push(format!("dropped term `{}`: non-finite values", t.name));
        }
    }
    if terms.is_empty() {
        return Err(LibraryError::Empty);
    }
    let mut theta = Array2::zeros((n, terms.len()));
    theta
        .axis_iter_mut(NdAxis(1))
        .into_par_iter()
        .zip(kept.par_iter())
        .for_each(|(mut dst, src)| {
            for (o, v) in dst.iter_mut().zip(src) {
                *o = *v;
            }
        });
    let targets = time_targets(field, clean)?;
    let lib = TermLibrary {
        terms,
        theta,
        targets,
        target_names: (0..d).map(|i| format!("{}_t", state_name(i))).collect(),
        scales: None,
        warnings,
    };
    Ok(if spec.rescale { lib.rescaled() } else { lib })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorgrid::Axis;
    use ndarray::IxDyn;

    fn line_field(nt: usize, nx: usize, dx: f64, f: impl Fn(f64, f64) -> f64) -> Field {
        let time = Axis::new("t", 0.0, 0.1, nt).unwrap();
        let x = Axis::new("x", 0.0, dx, nx).unwrap();
        let values = ArrayD::from_shape_fn(IxDyn(&[1, nt, nx]), |i| f(i[1] as f64 * 0.1, i[2] as f64 * dx));
        Field::new(time, vec![x], values).unwrap()
    }

    fn ode_field(d: usize, nt: usize) -> Field {
        let time = Axis::new("t", 0.0, 0.1, nt).unwrap();
        let values = ArrayD::from_shape_fn(IxDyn(&[d, nt]), |i| 1.0 + i[0] as f64 + 0.1 * i[1] as f64);
        Field::new(time, vec![], values).unwrap()
    }

    #[test]
    fn symbol_counts() {
        assert_eq!(build_symbols(1, 0, 4).names(), vec!["u1"]);
        assert_eq!(
            build_symbols(1, 1, 4).names(),
            vec!["u1", "u1_x", "u1_xx", "u1_xxx", "u1_xxxx"]
        );
        assert_eq!(build_symbols(2, 2, 2).len(), 10);
        for d in 1..=3 {
            for dims in 0..=2 {
                for r in 1..=4u8 {
                    let expected = if dims == 0 { d } else { d * (1 + r as usize * dims) };
                    assert_eq!(build_symbols(d, dims, r).len(), expected);
                }
            }
        }
    }

    #[test]
    fn ode_polynomial_library() {
        let lib = build_library(&ode_field(1, 20), &LibrarySpec::ode(&[BasisFamily::Poly], 2), None).unwrap();
        assert_eq!(lib.names(), vec!["1", "u1", "u1^2"]);
    }

    #[test]
    fn pde_library_with_interactions() {
        let f = line_field(10, 20, 0.1, |t, x| (x + t).sin());
        let mut spec = LibrarySpec::pde(&[BasisFamily::Poly], 2, 2);
        spec.bias = true;
        let lib = build_library(&f, &spec, None).unwrap();
        assert_eq!(
            lib.names(),
            vec!["1", "u1", "u1^2", "u1_x", "u1_xx", "u1*u1_x", "u1*u1_xx", "u1^2*u1_x", "u1^2*u1_xx"]
        );
        assert_eq!(lib.theta.dim(), (200, 9));
    }

    #[test]
    fn constant_field_columns() {
        let f = line_field(8, 12, 0.1, |_, _| 3.0);
        let lib = build_library(&f, &LibrarySpec::pde(&[BasisFamily::Poly], 2, 2), None).unwrap();
        let names = lib.names();
        let sq = names.iter().position(|n| *n == "u1^2").unwrap();
        assert!(lib.theta.column(sq).iter().all(|v| (*v - 9.0).abs() < 1e-12));
        let ux = names.iter().position(|n| *n == "u1_x").unwrap();
        let uxx = names.iter().position(|n| *n == "u1_xx").unwrap();
        assert!(lib.theta.column(ux).iter().all(|v| v.abs() < 1e-10));
        assert!(lib.theta.column(uxx).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn second_derivative_column_matches_minus_sine() {
        let n = 400;
        let dx = std::f64::consts::TAU / n as f64;
        let f = line_field(6, n, dx, |_, x| x.sin());
        let lib = build_library(&f, &LibrarySpec::pde(&[BasisFamily::Poly], 1, 2), None).unwrap();
        let uxx = lib.names().iter().position(|n| *n == "u1_xx").unwrap();
        for (s, v) in lib.theta.column(uxx).iter().enumerate() {
            let x = (s % n) as f64 * dx;
            assert!((v + x.sin()).abs() < dx * dx, "{v} at {x}");
        }
    }

    #[test]
    fn sample_order_is_time_major() {
        let f = line_field(5, 7, 1.0, |t, x| 100.0 * t + x);
        let lib = build_library(&f, &LibrarySpec::pde(&[BasisFamily::Poly], 1, 1), None).unwrap();
        let u = lib.names().iter().position(|n| *n == "u1").unwrap();
        assert_eq!(lib.theta[[8, u]], 100.0 * 0.1 + 1.0);
        assert_eq!(lib.theta.nrows(), 35);
    }

    fn brute_force_count(d: usize, dims: usize, p: u8, r: u8) -> usize {
        // enumerate exponent vectors over d states directly
        let mut monos = 0;
        let mut stack = vec![vec![0u8; d]];
        let mut seen = std::collections::HashSet::new();
        while let Some(e) = stack.pop() {
            if !seen.insert(e.clone()) {
                continue;
            }
            let deg: u8 = e.iter().sum();
            if deg >= 1 {
                monos += 1;
            }
            if deg < p {
                for i in 0..d {
                    let mut next = e.clone();
                    next[i] += 1;
                    stack.push(next);
                }
            }
        }
        let derivs = d * dims * r as usize;
        1 + monos + derivs * (1 + monos)
    }

    #[test]
    fn term_count_formula() {
        for d in 1..=2 {
            for dims in 1..=2 {
                for p in 1..=4u8 {
                    for r in 1..=4u8 {
                        let symbols = build_symbols(d, dims, r);
                        let mut spec = LibrarySpec::pde(&[BasisFamily::Poly], p, r);
                        spec.bias = true;
                        let terms = strong_terms(d, &symbols, &spec);
                        assert_eq!(terms.len(), brute_force_count(d, dims, p, r), "d={d} D={dims} p={p} r={r}");
                        let mut names: Vec<_> = terms.iter().map(|t| t.name.clone()).collect();
                        names.sort();
                        names.dedup();
                        assert_eq!(names.len(), terms.len());
                    }
                }
            }
        }
    }

    #[test]
    fn sub_library_selection_matches_direct_build() {
        let f = line_field(8, 24, 0.2, |t, x| (x - 0.3 * t).sin() + 0.5);
        let mut big = LibrarySpec::pde(&[BasisFamily::Poly, BasisFamily::Sin, BasisFamily::Cos], 4, 4);
        big.bias = true;
        let full = build_library(&f, &big, None).unwrap();
        for p in 1..=4u8 {
            for r in 1..=4u8 {
                for families in [vec![BasisFamily::Poly], vec![BasisFamily::Poly, BasisFamily::Sin, BasisFamily::Cos]] {
                    for bias in [false, true] {
                        let mut spec = LibrarySpec::pde(&families, p, r);
                        spec.bias = bias;
                        let direct = build_library(&f, &spec, None).unwrap();
                        let carved = full.select_columns(&full.columns_for(&spec));
                        assert_eq!(direct.names(), carved.names());
                        assert_eq!(direct.theta, carved.theta);
                    }
                }
            }
        }
    }

    #[test]
    fn exp_overflow_drops_column() {
        let time = Axis::new("t", 0.0, 0.1, 6).unwrap();
        let values = ArrayD::from_shape_fn(IxDyn(&[1, 6]), |i| 200.0 * (i[1] + 1) as f64);
        let f = Field::new(time, vec![], values).unwrap();
        let lib = build_library(&f, &LibrarySpec::ode(&[BasisFamily::Poly, BasisFamily::Exp], 1), None).unwrap();
        assert_eq!(lib.names(), vec!["1", "u1"]);
        assert_eq!(lib.warnings.len(), 1);
    }

    #[test]
    fn deterministic_columns() {
        let f = line_field(10, 30, 0.2, |t, x| (x - t).cos() + 0.3 * x);
        let spec = LibrarySpec::pde(&[BasisFamily::Poly, BasisFamily::Sin, BasisFamily::Cos], 3, 3);
        let a = build_library(&f, &spec, None).unwrap();
        let b = build_library(&f, &spec, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clean_targets_are_used_verbatim() {
        let f = ode_field(2, 12);
        let clean = ArrayD::from_elem(IxDyn(&[2, 12]), 0.25);
        let lib = build_library(&f, &LibrarySpec::ode(&[BasisFamily::Poly], 1), Some(&clean)).unwrap();
        assert!(lib.targets.iter().all(|v| *v == 0.25));
        let fd = build_library(&f, &LibrarySpec::ode(&[BasisFamily::Poly], 1), None).unwrap();
        assert!(fd.targets.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rescaling_records_divisors() {
        let f = ode_field(1, 10);
        let mut spec = LibrarySpec::ode(&[BasisFamily::Poly], 2);
        spec.rescale = true;
        let lib = build_library(&f, &spec, None).unwrap();
        let scales = lib.scales.as_ref().unwrap();
        for c in lib.theta.axis_iter(NdAxis(1)) {
            let rms = (c.iter().map(|v| v * v).sum::<f64>() / 10.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-12);
        }
        assert_eq!(scales[0], 1.0);
    }
}
