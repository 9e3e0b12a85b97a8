//! Uniform spatiotemporal grids and second-order finite differences.
//!
//! A [`Field`] stores `d` state variables on a uniform grid with one time axis
//! and up to two spatial axes, in an array of shape `(d, N_t, N_x1, ..)`.
//! Derivatives use central stencils at interior points and one-sided stencils
//! of width `order + 2` near the edges, all second-order accurate, so the
//! output has the same shape as the input.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, Axis as NdAxis, IxDyn, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DERIVATIVE_ORDER: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unsupported derivative order {0} (expected 1..=4)")]
    UnsupportedOrder(u8),
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("axis `{axis}` has {count} points, need at least {needed}")]
    TooSmall {
        axis: String,
        count: usize,
        needed: usize,
    },
    #[error("invalid axis `{axis}`: {reason}")]
    InvalidAxis { axis: String, reason: String },
    #[error("values have shape {got:?}, axes imply {expected:?}")]
    ShapeMismatch {
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, start: f64, step: f64, count: usize) -> Result<Self, GridError> {
        let axis = Axis {
            name: name.into(),
            start,
            step,
            count,
        };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |reason: &str| GridError::InvalidAxis {
            axis: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(bad("step must be positive and finite"));
        }
        if !self.start.is_finite() || !(self.step * self.count as f64).is_finite() {
            return Err(bad("extent must be finite"));
        }
        if self.count < 5 {
            return Err(bad("at least 5 points required"));
        }
        Ok(())
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.coordinate(i)).collect()
    }

    /// Sub-axis covering indices `[from, from + count)`.
    pub fn slice(&self, from: usize, count: usize) -> Axis {
        Axis {
            name: self.name.clone(),
            start: self.coordinate(from),
            step: self.step,
            count,
        }
    }
}

/// State variables on a uniform grid; `values` has shape `(d, N_t, N_x1, ..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub time: Axis,
    pub space: Vec<Axis>,
    pub values: ArrayD<f64>,
}

impl Field {
    pub fn new(time: Axis, space: Vec<Axis>, values: ArrayD<f64>) -> Result<Self, GridError> {
        let field = Field { time, space, values };
        field.check_shape()?;
        Ok(field)
    }

    fn expected_shape(&self, d: usize) -> Vec<usize> {
        let mut shape = vec![d, self.time.count];
        shape.extend(self.space.iter().map(|a| a.count));
        shape
    }

    fn check_shape(&self) -> Result<(), GridError> {
        let got = self.values.shape().to_vec();
        let d = got.first().copied().unwrap_or(0);
        let expected = self.expected_shape(d);
        if d == 0 || got != expected {
            return Err(GridError::ShapeMismatch { got, expected });
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    /// Grid points per state variable.
    pub fn points_per_state(&self) -> usize {
        self.values.len() / self.n_states()
    }

    pub fn axis(&self, name: &str) -> Option<(usize, &Axis)> {
        if self.time.name == name {
            return Some((1, &self.time));
        }
        self.space
            .iter()
            .position(|a| a.name == name)
            .map(|k| (k + 2, &self.space[k]))
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.space.iter().map(|a| a.name.as_str()).collect()
    }

    /// Contiguous time slice `[from, from + count)`; spatial extent untouched.
    pub fn slice_time(&self, from: usize, count: usize) -> Field {
        Field {
            time: self.time.slice(from, count),
            space: self.space.clone(),
            values: slice_time_array(&self.values, from, count),
        }
    }

    /// Values of state `i` flattened time-major, then spatial axes in order.
    pub fn state_values(&self, i: usize) -> Vec<f64> {
        self.values.index_axis(NdAxis(0), i).iter().copied().collect()
    }

    pub fn differentiate(&self, axis: &str, order: u8) -> Result<Field, GridError> {
        let (index, ax) = self
            .axis(axis)
            .ok_or_else(|| GridError::UnknownAxis(axis.to_string()))?;
        let values = differentiate_array(&self.values, index, ax, order)?;
        Ok(Field {
            time: self.time.clone(),
            space: self.space.clone(),
            values,
        })
    }
}

pub fn slice_time_array(values: &ArrayD<f64>, from: usize, count: usize) -> ArrayD<f64> {
    values
        .slice_axis(NdAxis(1), ndarray::Slice::from(from..from + count))
        .to_owned()
}

/// Where a stencil is applied relative to the grid edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StencilPosition {
    Interior,
    /// `k` points from the left edge: no offset below `-k`.
    Left(usize),
    /// `k` points from the right edge: no offset above `k`.
    Right(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub offsets: Vec<i64>,
    pub coefficients: Vec<f64>,
}

impl Stencil {
    /// `Σ c_m f[i + o_m]`, unscaled by the grid step.
    pub fn apply(&self, values: &[f64], i: usize) -> f64 {
        self.offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(&o, &c)| c * values[(i as i64 + o) as usize])
            .sum()
    }
}

/// Half-width of the central stencil for a derivative order.
pub fn central_half_width(order: u8) -> usize {
    (order as usize).div_ceil(2)
}

/// Smallest axis length every stencil of `order` fits in.
pub fn min_points(order: u8) -> usize {
    (order as usize + 2).max(2 * central_half_width(order) + 1)
}

/// Solves `Σ c_m o_m^q = q! δ_{q,order}` for `q = 0..n`.
fn solve_moments(offsets: &[i64], order: u8) -> Vec<f64> {
    let n = offsets.len();
    let a = DMatrix::from_fn(n, n, |q, m| (offsets[m] as f64).powi(q as i32));
    let factorial: f64 = (1..=order as u64).product::<u64>() as f64;
    let mut b = DVector::zeros(n);
    b[order as usize] = factorial;
    let c = a.lu().solve(&b).expect("moment system is a nonsingular Vandermonde matrix");
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    c.iter()
        .map(|&v| if v.abs() < 1e-12 * scale { 0.0 } else { v })
        .collect()
}

fn build_stencil(order: u8, position: StencilPosition) -> Stencil {
    let half = central_half_width(order) as i64;
    let width = order as i64 + 2;
    let offsets: Vec<i64> = match position {
        StencilPosition::Interior => (-half..=half).collect(),
        StencilPosition::Left(k) => {
            let first = -(k as i64);
            (first..first + width).collect()
        }
        StencilPosition::Right(k) => {
            let last = k as i64;
            (last - width + 1..=last).collect()
        }
    };
    let coefficients = solve_moments(&offsets, order);
    let (offsets, coefficients) = offsets
        .into_iter()
        .zip(coefficients)
        .filter(|(_, c)| *c != 0.0)
        .unzip();
    Stencil {
        offsets,
        coefficients,
    }
}

struct StencilSet {
    interior: Stencil,
    left: Vec<Stencil>,
    right: Vec<Stencil>,
}

fn stencil_cache() -> &'static [StencilSet] {
    static CACHE: OnceLock<Vec<StencilSet>> = OnceLock::new();
    CACHE.get_or_init(|| {
        (1..=MAX_DERIVATIVE_ORDER)
            .map(|j| {
                let half = central_half_width(j);
                StencilSet {
                    interior: build_stencil(j, StencilPosition::Interior),
                    left: (0..half).map(|k| build_stencil(j, StencilPosition::Left(k))).collect(),
                    right: (0..half).map(|k| build_stencil(j, StencilPosition::Right(k))).collect(),
                }
            })
            .collect()
    })
}

/// Second-order accurate stencil for the `order`-th derivative.
pub fn fd_stencil(order: u8, position: StencilPosition) -> Result<Stencil, GridError> {
    if !(1..=MAX_DERIVATIVE_ORDER).contains(&order) {
        return Err(GridError::UnsupportedOrder(order));
    }
    let set = &stencil_cache()[order as usize - 1];
    Ok(match position {
        StencilPosition::Interior => set.interior.clone(),
        StencilPosition::Left(k) if k < set.left.len() => set.left[k].clone(),
        StencilPosition::Right(k) if k < set.right.len() => set.right[k].clone(),
        other => build_stencil(order, other),
    })
}

/// Differentiates one grid line; `out` and `values` have equal length.
pub fn differentiate_line(values: &[f64], step: f64, order: u8, out: &mut [f64]) {
    let set = &stencil_cache()[order as usize - 1];
    let n = values.len();
    let half = set.left.len();
    let scale = step.powi(order as i32);
    for (i, o) in out.iter_mut().enumerate() {
        let stencil = if i < half {
            &set.left[i]
        } else if n - 1 - i < half {
            &set.right[n - 1 - i]
        } else {
            &set.interior
        };
        *o = stencil.apply(values, i) / scale;
    }
}

/// Differentiates `values` along array axis `index`, whose grid is `axis`.
pub fn differentiate_array(
    values: &ArrayD<f64>,
    index: usize,
    axis: &Axis,
    order: u8,
) -> Result<ArrayD<f64>, GridError> {
    if !(1..=MAX_DERIVATIVE_ORDER).contains(&order) {
        return Err(GridError::UnsupportedOrder(order));
    }
    let n = values.shape()[index];
    let needed = min_points(order);
    if n < needed {
        return Err(GridError::TooSmall {
            axis: axis.name.clone(),
            count: n,
            needed,
        });
    }
    let mut out = ArrayD::zeros(IxDyn(values.shape()));
    let step = axis.step;
    Zip::from(out.lanes_mut(NdAxis(index)))
        .and(values.lanes(NdAxis(index)))
        .par_for_each(|mut o, v| {
            let line: Vec<f64> = v.iter().copied().collect();
            let mut buf = vec![0.0; line.len()];
            differentiate_line(&line, step, order, &mut buf);
            for (dst, src) in o.iter_mut().zip(buf) {
                *dst = src;
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;
    use std::f64::consts::PI;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    fn factorial(n: u32) -> f64 {
        (1..=n as u64).product::<u64>() as f64
    }

    #[test]
    fn interior_stencils_match_textbook_values() {
        let s = fd_stencil(1, StencilPosition::Interior).unwrap();
        assert_eq!(s.offsets, vec![-1, 1]);
        assert!(close(s.coefficients[0], -0.5, 1e-14) && close(s.coefficients[1], 0.5, 1e-14));

        let s = fd_stencil(2, StencilPosition::Interior).unwrap();
        assert_eq!(s.offsets, vec![-1, 0, 1]);
        for (c, e) in s.coefficients.iter().zip([1.0, -2.0, 1.0]) {
            assert!(close(*c, e, 1e-13));
        }

        let s = fd_stencil(4, StencilPosition::Interior).unwrap();
        assert_eq!(s.offsets, vec![-2, -1, 0, 1, 2]);
        for (c, e) in s.coefficients.iter().zip([1.0, -4.0, 6.0, -4.0, 1.0]) {
            assert!(close(*c, e, 1e-12));
        }
    }

    /// Independent check: stencils must reproduce monomial derivatives exactly.
    #[test]
    fn stencils_are_exact_on_low_degree_monomials() {
        for j in 1..=4u8 {
            let half = central_half_width(j);
            let mut positions = vec![StencilPosition::Interior];
            for k in 0..half {
                positions.push(StencilPosition::Left(k));
                positions.push(StencilPosition::Right(k));
            }
            for pos in positions {
                let s = fd_stencil(j, pos).unwrap();
                for q in 0..=(j as u32 + 1) {
                    let got: f64 = s
                        .offsets
                        .iter()
                        .zip(&s.coefficients)
                        .map(|(&o, &c)| c * (o as f64).powi(q as i32))
                        .sum();
                    let want = if q == j as u32 { factorial(q) } else { 0.0 };
                    assert!(close(got, want, 1e-9), "j={j} {pos:?} q={q}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn coefficients_sum_to_zero() {
        for j in 1..=4u8 {
            for pos in [StencilPosition::Interior, StencilPosition::Left(0), StencilPosition::Right(0)] {
                let s = fd_stencil(j, pos).unwrap();
                assert!(s.coefficients.iter().sum::<f64>().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn odd_interior_stencils_are_antisymmetric() {
        let s = fd_stencil(3, StencilPosition::Interior).unwrap();
        assert_eq!(s.offsets, vec![-2, -1, 1, 2]);
        assert!(close(s.coefficients[0], -s.coefficients[3], 1e-12));
        assert!(close(s.coefficients[1], -s.coefficients[2], 1e-12));
    }

    #[test]
    fn unsupported_order_rejected() {
        assert_eq!(fd_stencil(0, StencilPosition::Interior), Err(GridError::UnsupportedOrder(0)));
        assert_eq!(fd_stencil(5, StencilPosition::Interior), Err(GridError::UnsupportedOrder(5)));
    }

    fn line_field(n: usize, step: f64, start: f64, f: impl Fn(f64) -> f64) -> Field {
        let time = Axis::new("t", 0.0, 1.0, 5).unwrap();
        let x = Axis::new("x", start, step, n).unwrap();
        let values = ArrayD::from_shape_fn(IxDyn(&[1, 5, n]), |idx| f(x.coordinate(idx[2])));
        Field::new(time, vec![x], values).unwrap()
    }

    #[test]
    fn linear_function_first_derivative_is_one() {
        let f = line_field(11, 0.1, -0.5, |x| x);
        let d = f.differentiate("x", 1).unwrap();
        assert!(d.values.iter().all(|v| close(*v, 1.0, 1e-12)));
    }

    #[test]
    fn quartic_fourth_derivative_is_24_in_the_interior() {
        let f = line_field(21, 0.05, -0.5, |x| x.powi(4));
        let d = f.differentiate("x", 4).unwrap();
        let line: Vec<f64> = d.values.index_axis(NdAxis(0), 0).index_axis(NdAxis(0), 0).iter().copied().collect();
        for v in &line[2..19] {
            assert!(close(*v, 24.0, 1e-6), "{v}");
        }
    }

    #[test]
    fn sine_convergence_ratio() {
        let max_err = |n: usize| {
            let step = 2.0 * PI / n as f64;
            let f = line_field(n, step, 0.0, f64::sin);
            let d = f.differentiate("x", 1).unwrap();
            let line: Vec<f64> = d.values.index_axis(NdAxis(0), 0).index_axis(NdAxis(0), 0).iter().copied().collect();
            (1..n - 1)
                .map(|i| (line[i] - (step * i as f64).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = max_err(64) / max_err(128);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn derivative_along_time_axis() {
        let time = Axis::new("t", 0.0, 0.5, 8).unwrap();
        let values = ArrayD::from_shape_fn(IxDyn(&[1, 8]), |idx| 3.0 * time.coordinate(idx[1]));
        let f = Field::new(time, vec![], values).unwrap();
        let d = f.differentiate("t", 1).unwrap();
        assert!(d.values.iter().all(|v| close(*v, 3.0, 1e-12)));
    }

    #[test]
    fn unknown_axis_and_small_grid_errors() {
        let f = line_field(5, 0.1, 0.0, |x| x);
        assert_eq!(f.differentiate("z", 1), Err(GridError::UnknownAxis("z".into())));
        // 5 points suffice for order 3 (width 5) but not for a one-sided order-4 stencil (width 6)
        assert!(f.differentiate("x", 3).is_ok());
        assert!(matches!(f.differentiate("x", 4), Err(GridError::TooSmall { needed: 6, .. })));
    }

    #[test]
    fn axis_validation() {
        assert!(Axis::new("x", 0.0, 0.0, 10).is_err());
        assert!(Axis::new("x", 0.0, 0.1, 4).is_err());
        assert!(Axis::new("x", f64::NAN, 0.1, 10).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let time = Axis::new("t", 0.0, 1.0, 5).unwrap();
        let x = Axis::new("x", 0.0, 1.0, 6).unwrap();
        let values = ArrayD::zeros(IxDyn(&[1, 5, 7]));
        assert!(matches!(Field::new(time, vec![x], values), Err(GridError::ShapeMismatch { .. })));
    }

    #[test]
    fn linearity() {
        let f = line_field(32, 0.1, 0.0, |x| x.sin());
        let g = line_field(32, 0.1, 0.0, |x| (2.0 * x).exp());
        for j in 1..=4 {
            let mut combo = f.clone();
            combo.values = &f.values * 2.0 - &g.values * 0.5;
            let lhs = combo.differentiate("x", j).unwrap().values;
            let rhs = f.differentiate("x", j).unwrap().values * 2.0 - g.differentiate("x", j).unwrap().values * 0.5;
            for (a, b) in lhs.iter().zip(rhs.iter()) {
                assert!(close(*a, *b, 1e-8 * (1.0 + b.abs())));
            }
        }
    }

    #[test]
    fn time_slicing_keeps_coordinates() {
        let f = line_field(8, 0.1, 0.0, |x| x);
        let s = f.slice_time(2, 3);
        assert_eq!(s.time.count, 3);
        assert_eq!(s.time.start, 2.0);
        assert_eq!(s.values.shape(), &[1, 3, 8]);
    }
}
