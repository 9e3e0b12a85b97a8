//! Prediction metrics and structural comparison against ground truth.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;

/// Denominator regularizer in [`nmse`].
pub const NMSE_EPSILON: f64 = 1e-10;

/// Relative coefficient tolerance for a matched term.
pub const COEFFICIENT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("shape mismatch: truth has {truth:?}, prediction has {prediction:?}")]
    ShapeMismatch { truth: Vec<usize>, prediction: Vec<usize> },
}

/// `Σ(u − û)² / (Σu² + ε)` over every entry. NaN in the prediction gives NaN.
pub fn nmse(truth: &[f64], prediction: &[f64]) -> Result<f64, EvalError> {
    if truth.len() != prediction.len() {
        return Err(EvalError::ShapeMismatch {
            truth: vec![truth.len()],
            prediction: vec![prediction.len()],
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, p) in truth.iter().zip(prediction) {
        num += (u - p) * (u - p);
        den += u * u;
    }
    Ok(num / (den + NMSE_EPSILON))
}

/// Joint NMSE of two `samples × states` arrays.
pub fn nmse_array(truth: ArrayView2<f64>, prediction: ArrayView2<f64>) -> Result<f64, EvalError> {
    check_shapes(truth, prediction)?;
    let t: Vec<f64> = truth.iter().copied().collect();
    let p: Vec<f64> = prediction.iter().copied().collect();
    nmse(&t, &p)
}

/// One NMSE per column.
pub fn nmse_per_variable(truth: ArrayView2<f64>, prediction: ArrayView2<f64>) -> Result<Vec<f64>, EvalError> {
    check_shapes(truth, prediction)?;
    Ok(truth
        .axis_iter(Axis(1))
        .zip(prediction.axis_iter(Axis(1)))
        .map(|(t, p)| {
            let t: Vec<f64> = t.iter().copied().collect();
            let p: Vec<f64> = p.iter().copied().collect();
            nmse(&t, &p).expect("columns share a length")
        })
        .collect())
}

fn check_shapes(truth: ArrayView2<f64>, prediction: ArrayView2<f64>) -> Result<(), EvalError> {
    if truth.shape() != prediction.shape() {
        return Err(EvalError::ShapeMismatch {
            truth: truth.shape().to_vec(),
            prediction: prediction.shape().to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessParams {
    pub lambda: f64,
    pub length_scale: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        FitnessParams { lambda: 1.0, length_scale: 200.0 }
    }
}

/// `1/(1+nmse) + λ exp(−l/L)` with λ = 1, L = 200.
pub fn fitness(nmse: f64, complexity: usize) -> f64 {
    fitness_with(nmse, complexity, FitnessParams::default())
}

pub fn fitness_with(nmse: f64, complexity: usize, params: FitnessParams) -> f64 {
    1.0 / (1.0 + nmse) + params.lambda * (-(complexity as f64) / params.length_scale).exp()
}

/// Summed node count of the equations.
pub fn total_complexity(equations: &[Expr]) -> usize {
    equations.iter().map(Expr::complexity).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub complexity: usize,
    pub fitness: f64,
    pub per_variable_nmse: Vec<f64>,
    /// False when the prediction produced NaN or infinity.
    pub finite: bool,
}

impl MetricReport {
    pub fn new(truth: ArrayView2<f64>, prediction: ArrayView2<f64>, equations: &[Expr]) -> Result<MetricReport, EvalError> {
        let nmse = nmse_array(truth, prediction)?;
        let per_variable_nmse = nmse_per_variable(truth, prediction)?;
        Ok(MetricReport::from_parts(nmse, total_complexity(equations), per_variable_nmse))
    }

    pub fn from_parts(nmse: f64, complexity: usize, per_variable_nmse: Vec<f64>) -> MetricReport {
        MetricReport {
            nmse,
            complexity,
            fitness: fitness(nmse, complexity),
            per_variable_nmse,
            finite: nmse.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Full,
    Partial,
    Failed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Full => "full",
            Verdict::Partial => "partial",
            Verdict::Failed => "failed",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermError {
    pub equation: usize,
    pub term: String,
    pub truth: f64,
    pub found: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRef {
    pub equation: usize,
    pub term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityVerdict {
    pub verdict: Verdict,
    pub term_errors: Vec<TermError>,
    pub missing: Vec<TermRef>,
    pub extra: Vec<TermRef>,
}

impl FidelityVerdict {
    /// Discovered support equals the true support, whatever the coefficients.
    pub fn support_exact(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.term_errors.iter().map(|e| e.relative_error).fold(0.0, f64::max)
    }
}

/// Compare discovered term maps to the truth, one map per equation, keyed by
/// canonical template string. Zero coefficients count as absent.
pub fn fidelity(found: &[BTreeMap<String, f64>], truth: &[BTreeMap<String, f64>]) -> FidelityVerdict {
    let mut term_errors = Vec::new();
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    let empty = BTreeMap::new();
    for i in 0..found.len().max(truth.len()) {
        let f = found.get(i).unwrap_or(&empty);
        let t = truth.get(i).unwrap_or(&empty);
        for (term, &beta) in t.iter().filter(|(_, c)| **c != 0.0) {
            match f.get(term).copied().filter(|c| *c != 0.0) {
                Some(hat) => term_errors.push(TermError {
                    equation: i,
                    term: term.clone(),
                    truth: beta,
                    found: hat,
                    relative_error: (hat - beta).abs() / beta.abs(),
                }),
                None => missing.push(TermRef { equation: i, term: term.clone() }),
            }
        }
        for (term, _) in f.iter().filter(|(_, c)| **c != 0.0) {
            if t.get(term).is_none_or(|c| *c == 0.0) {
                extra.push(TermRef { equation: i, term: term.clone() });
            }
        }
    }
    let within = term_errors.iter().all(|e| e.relative_error <= COEFFICIENT_TOLERANCE);
    let verdict = match (missing.len() + extra.len(), within) {
        (0, true) => Verdict::Full,
        (1, true) => Verdict::Partial,
        _ => Verdict::Failed,
    };
    FidelityVerdict { verdict, term_errors, missing, extra }
}

/// Term map of a strong-form expression: each additive operand is split into
/// its constant factor and the remaining template.
pub fn term_map(e: &Expr) -> BTreeMap<String, f64> {
    use crate::expr::BinaryOp;
    fn split_sum(e: &Expr, out: &mut Vec<Expr>) {
        match e {
            Expr::Binary(BinaryOp::Add, a, b) => {
                split_sum(a, out);
                split_sum(b, out);
            }
            other => out.push(other.clone()),
        }
    }
    fn split_product(e: &Expr, coef: &mut f64, rest: &mut Vec<Expr>) {
        match e {
            Expr::Binary(BinaryOp::Mul, a, b) => {
                split_product(a, coef, rest);
                split_product(b, coef, rest);
            }
            Expr::Const(c) => *coef *= c,
            Expr::Unary(crate::expr::UnaryOp::Neg, a) => {
                *coef = -*coef;
                split_product(a, coef, rest);
            }
            other => rest.push(other.clone()),
        }
    }
    let mut terms = Vec::new();
    split_sum(&e.canonicalize(), &mut terms);
    let mut out = BTreeMap::new();
    for t in terms {
        let mut coef = 1.0;
        let mut rest = Vec::new();
        split_product(&t, &mut coef, &mut rest);
        let key = if rest.is_empty() { "1".to_string() } else { Expr::product(rest).canonical_string() };
        *out.entry(key).or_insert(0.0) += coef;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::registry;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn nmse_hand_values() {
        assert_eq!(nmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = nmse(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((v - 1.0 / (5.0 + 1e-10)).abs() < 1e-12);
        assert!((v - 0.2).abs() < 1e-10);
        let z = nmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((z - 25.0 / (25.0 + 1e-10)).abs() < 1e-15);
        assert!(nmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(nmse(&[1.0, 2.0], &[f64::NAN, 2.0]).unwrap().is_nan());
    }

    #[test]
    fn all_zero_target_uses_epsilon() {
        assert_eq!(nmse(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        let v = nmse(&[0.0, 0.0], &[1e-5, 0.0]).unwrap();
        assert!((v - 1e-10 / 1e-10).abs() < 1e-12);
    }

    #[test]
    fn fitness_hand_values() {
        assert_eq!(fitness(0.0, 0), 2.0);
        assert!((fitness(0.0, 200) - (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((fitness(1.0, 200) - (0.5 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((fitness(0.0, 200) - 1.367879).abs() < 1e-6);
        assert!((fitness(1.0, 200) - 0.867879).abs() < 1e-6);
    }

    #[test]
    fn fitness_is_decreasing() {
        let grid = [0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0];
        for l in [0usize, 3, 9, 50, 400] {
            for w in grid.windows(2) {
                assert!(fitness(w[0], l) > fitness(w[1], l));
            }
        }
        for &e in &grid {
            for l in 0..300 {
                assert!(fitness(e, l) > fitness(e, l + 1));
            }
        }
    }

    #[test]
    fn per_variable_and_report() {
        let t = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 2.0, 3.0]).unwrap();
        let p = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 3.0]).unwrap();
        let per = nmse_per_variable(t.view(), p.view()).unwrap();
        assert!((per[0] - 1.0 / (5.0 + 1e-10)).abs() < 1e-12);
        assert_eq!(per[1], 0.0);
        let e = crate::expr::parse("0.1*u1_xx").unwrap();
        let r = MetricReport::new(t.view(), p.view(), &[e.clone(), e]).unwrap();
        assert_eq!(r.complexity, 6);
        assert!((r.nmse - 1.0 / 14.0).abs() < 1e-9);
        assert_eq!(r.fitness, fitness(r.nmse, 6));
        assert!(r.finite);
        let q = Array2::<f64>::zeros((3, 2));
        assert!(MetricReport::new(t.view(), q.view(), &[]).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let truth = vec![map(&[("u1*u1_x", -1.0), ("u1_xx", 0.1)])];
        assert_eq!(fidelity(&truth, &truth).verdict, Verdict::Full);
        let found = vec![map(&[("u1*u1_x", -0.99), ("u1_xx", 0.102)])];
        let v = fidelity(&found, &truth);
        assert_eq!(v.verdict, Verdict::Full);
        assert!((v.max_relative_error() - 0.02).abs() < 1e-12);
        let spurious = vec![map(&[("u1*u1_x", -1.0), ("u1_xx", 0.1), ("u1^2", 0.3)])];
        let v = fidelity(&spurious, &truth);
        assert_eq!(v.verdict, Verdict::Partial);
        assert_eq!(v.extra[0].term, "u1^2");
        let dropped = vec![map(&[("u1*u1_x", -1.0)])];
        assert_eq!(fidelity(&dropped, &truth).verdict, Verdict::Partial);
        let two_off = vec![map(&[("u1*u1_x", -1.0), ("u1", 1.0), ("u1^2", 1.0)])];
        assert_eq!(fidelity(&two_off, &truth).verdict, Verdict::Failed);
        let off = vec![map(&[("u1*u1_x", -0.9), ("u1_xx", 0.1)])];
        let v = fidelity(&off, &truth);
        assert_eq!(v.verdict, Verdict::Failed);
        assert!(v.support_exact());
        let zero = vec![map(&[("u1*u1_x", -1.0), ("u1_xx", 0.1), ("u1", 0.0)])];
        assert_eq!(fidelity(&zero, &truth).verdict, Verdict::Full);
    }

    #[test]
    fn every_registry_truth_is_full_against_itself() {
        for spec in registry() {
            let truth: Vec<_> = (0..spec.d).map(|i| spec.truth_terms(i)).collect();
            assert_eq!(fidelity(&truth, &truth).verdict, Verdict::Full, "{}", spec.name);
            let from_strings: Vec<_> = (0..spec.d).map(|i| term_map(&spec.rhs(i))).collect();
            assert_eq!(fidelity(&from_strings, &truth).verdict, Verdict::Full, "{}", spec.name);
        }
    }

    #[test]
    fn term_map_of_printed_equation() {
        let e = crate::expr::parse("-1*u1*u1_x + 0.1*u1_xx").unwrap();
        assert_eq!(term_map(&e), map(&[("u1*u1_x", -1.0), ("u1_xx", 0.1)]));
        let e = crate::expr::parse("2.5 + u1").unwrap();
        assert_eq!(term_map(&e), map(&[("1", 2.5), ("u1", 1.0)]));
    }

    proptest! {
        #[test]
        fn nmse_permutation_invariant(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..t.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let a = nmse(&t, &p).unwrap();
            let b = nmse(&tp, &pp).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn nmse_scale_invariant(pairs in prop::collection::vec((0.5f64..10.0, -10.0f64..10.0), 1..40), exp in -3.0f64..3.0, neg in any::<bool>()) {
            let c = if neg { -(10f64.powf(exp)) } else { 10f64.powf(exp) };
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let ts: Vec<f64> = t.iter().map(|v| c * v).collect();
            let ps: Vec<f64> = p.iter().map(|v| c * v).collect();
            // strip the regularizer before comparing
            let den: f64 = t.iter().map(|v| v * v).sum();
            let a = nmse(&t, &p).unwrap() * (den + NMSE_EPSILON) / den;
            let b = nmse(&ts, &ps).unwrap() * (c * c * den + NMSE_EPSILON) / (c * c * den);
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
        }
    }
}
