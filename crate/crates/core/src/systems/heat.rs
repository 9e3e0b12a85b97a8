//! Soil heating under a diurnal surface temperature, Crank–Nicolson in 1-D or 2-D.

use serde::{Deserialize, Serialize};

use super::SystemError;
use crate::tensorgrid::Axis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatSolarParams {
    /// Mean surface temperature (°C).
    pub t_r: f64,
    /// Diurnal amplitude (°C).
    pub t_a: f64,
    /// Angular frequency (1/s).
    pub omega: f64,
    pub rho: f64,
    pub c: f64,
    pub kappa: f64,
}

impl Default for HeatSolarParams {
    fn default() -> Self {
        HeatSolarParams {
            t_r: 10.0,
            t_a: 10.0,
            omega: 7.27e-5,
            rho: 1500.0,
            c: 1600.0,
            kappa: 2.3,
        }
    }
}

impl HeatSolarParams {
    pub fn diffusivity(&self) -> f64 {
        self.kappa / (self.rho * self.c)
    }

    pub fn surface_temperature(&self, t: f64) -> f64 {
        self.t_r + self.t_a * (self.omega * t).sin()
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let all = [self.t_r, self.t_a, self.omega, self.rho, self.c, self.kappa];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(SystemError::Config(format!("heat parameters must be positive: {self:?}")))
        }
    }
}

/// Banded matrix with `lower` sub- and `upper` super-diagonals.
struct Banded {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, lower: usize, upper: usize) -> Banded {
        Banded {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.upper {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place Doolittle LU; the matrix is diagonally dominant so no pivoting is needed.
    fn factor(&mut self) {
        for k in 0..self.n {
            let pivot = self.get(k, k);
            for i in k + 1..(k + self.lower + 1).min(self.n) {
                let kk = self.idx(i, k);
                let l = self.data[kk] / pivot;
                self.data[kk] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..(k + self.upper + 1).min(self.n) {
                    let u = self.get(k, j);
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * u;
                }
            }
        }
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for j in i.saturating_sub(self.lower)..i {
                s -= self.get(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + self.upper + 1).min(self.n) {
                s -= self.get(i, j) * b[j];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// Sparse rows of the zero-flux Laplacian (ghost-point reflection at every boundary).
fn laplacian_rows(space: &[Axis]) -> Vec<Vec<(usize, f64)>> {
    let counts: Vec<usize> = space.iter().map(|a| a.count).collect();
    let n: usize = counts.iter().product();
    let strides: Vec<usize> = (0..counts.len()).map(|k| counts[k + 1..].iter().product()).collect();
    (0..n)
        .map(|p| {
            let mut row = vec![(p, 0.0)];
            for (k, axis) in space.iter().enumerate() {
                let i = (p / strides[k]) % counts[k];
                let w = 1.0 / (axis.step * axis.step);
                row[0].1 -= 2.0 * w;
                let left = if i == 0 { p + strides[k] } else { p - strides[k] };
                let right = if i + 1 == counts[k] { p - strides[k] } else { p + strides[k] };
                row.push((left, w));
                row.push((right, w));
            }
            row
        })
        .collect()
}

/// Crank–Nicolson integration; returns one flattened frame per output time.
/// Surface nodes are those at the last index of the last axis.
pub fn simulate_heat(
    params: &HeatSolarParams,
    space: &[Axis],
    dt: f64,
    count: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>, SystemError> {
    params.validate()?;
    if space.is_empty() {
        return Err(SystemError::Config("heat problem needs at least one spatial axis".into()));
    }
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    let alpha = params.diffusivity();
    let last = space.len() - 1;
    let n: usize = space.iter().map(|a| a.count).product();
    let band = if space.len() == 1 { 1 } else { space[1..].iter().map(|a| a.count).product() };
    let surface = |p: usize| p % space[last].count == space[last].count - 1;
    let rows = laplacian_rows(space);
    let mut lhs = Banded::new(n, band, band);
    for (p, row) in rows.iter().enumerate() {
        if surface(p) {
            lhs.add(p, p, 1.0);
            continue;
        }
        lhs.add(p, p, 1.0);
        for &(j, w) in row {
            lhs.add(p, j, -0.5 * h * alpha * w);
        }
    }
    lhs.factor();
    let mut u = vec![params.t_r; n];
    let mut frames = Vec::with_capacity(count);
    frames.push(u.clone());
    let mut rhs = vec![0.0; n];
    for step in 1..count {
        for sub in 0..substeps {
            let t_next = ((step - 1) * substeps + sub + 1) as f64 * h;
            let boundary = params.surface_temperature(t_next);
            for (p, row) in rows.iter().enumerate() {
                rhs[p] = if surface(p) {
                    boundary
                } else {
                    u[p] + 0.5 * h * alpha * row.iter().map(|&(j, w)| w * u[j]).sum::<f64>()
                };
            }
            lhs.solve(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::Diverged { time: step as f64 * dt });
        }
        frames.push(u.clone());
    }
    Ok(frames)
}
