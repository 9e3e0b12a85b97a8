//! Reference simulators for the benchmark systems.
//!
//! Each [`SystemSpec`] carries the governing equations as `(template,
//! coefficient)` pairs, a default grid, initial and boundary condition
//! descriptors, and the solver used to produce its data. [`generate`] turns a
//! spec into a [`Dataset`] with clean time derivatives: analytic right-hand
//! side values for ODEs, finite differences of the clean solution for PDEs.

mod heat;
mod ode;
mod spectral;

use std::collections::BTreeMap;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::expr::{derivative_name, state_name, Expr, SymbolTable};
use crate::tensorgrid::{differentiate_array, Axis, Field, GridError};

pub use heat::{simulate_heat, HeatSolarParams};
pub use ode::{simulate_ode, OdeConfig};
pub use spectral::{advect_exact, Etdrk4, SpectralPde};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("`{0}` is not an ODE system")]
    NotOde(String),
    #[error("`{0}` is not a PDE system")]
    NotPde(String),
    #[error("integration diverged at t = {time}")]
    Diverged { time: f64 },
    #[error("time step too large for stability: {substeps} substeps per output interval, need at least {suggested}")]
    Unstable { substeps: usize, suggested: usize },
    #[error("invalid grid: {0}")]
    Grid(#[from] GridError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Ode,
    Pde,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Ode => "ode",
            SystemKind::Pde => "pde",
        }
    }
}

/// One equation `lhs = Σ coefficient · template`, keyed by canonical template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lhs: String,
    pub equation: String,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `Σ A_i sin(k_i x + φ_i)`, `k_i = 2π n_i / L`, `n_i` uniform in `1..=max_mode`,
    /// `A_i` uniform in `[0, 1)`, `φ_i` uniform in `(0, 2π)`.
    Sinusoidal { modes: usize, max_mode: u32 },
    /// `Σ (c_i / 2) sech²(width (x - center))`.
    SechSquared { speeds: Vec<f64>, center: f64, width: f64 },
    /// `exp(-|x - center|² / (2 width²))`.
    Gaussian { center: Vec<f64>, width: f64 },
    Uniform { value: f64 },
    /// ODE initial state.
    State { values: Vec<f64> },
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    None,
    Periodic,
    /// Dirichlet `T_R + T_A sin(ω t)` on the surface (last index of the last
    /// axis), zero flux on every other boundary.
    SurfaceTemperature,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Solver {
    Ode,
    Advection { speed: f64 },
    Spectral(SpectralPde),
    AdvectionDiffusion { velocity: [f64; 2], diffusion: f64 },
    Heat(HeatSolarParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub kind: SystemKind,
    pub description: String,
    pub d: usize,
    pub time: Axis,
    pub space: Vec<Axis>,
    /// Per state variable, the `(template, coefficient)` pairs of its RHS.
    pub equations: Vec<Vec<(Expr, f64)>>,
    pub params: BTreeMap<String, f64>,
    pub initial: InitialCondition,
    pub boundary: BoundaryCondition,
    /// Periodic extent per spatial axis, if periodic.
    pub periods: Vec<f64>,
    pub(crate) solver: Solver,
    pub(crate) substeps: usize,
    /// Internal grid refinement for spectral solvers; output is subsampled.
    pub(crate) oversample: usize,
}

impl SystemSpec {
    pub fn spatial_dims(&self) -> usize {
        self.space.len()
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.space.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn symbols(&self, max_order: u8) -> SymbolTable {
        SymbolTable::for_grid(self.d, &self.axis_names(), max_order)
    }

    pub fn rhs(&self, i: usize) -> Expr {
        Expr::sum(
            self.equations[i]
                .iter()
                .map(|(t, c)| Expr::num(*c) * t.clone()),
        )
        .canonicalize()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        (0..self.d)
            .map(|i| GroundTruth {
                lhs: format!("{}_t", state_name(i)),
                equation: self.rhs(i).to_string(),
                terms: self.truth_terms(i),
            })
            .collect()
    }

    pub fn truth_terms(&self, i: usize) -> BTreeMap<String, f64> {
        self.equations[i]
            .iter()
            .map(|(t, c)| (t.canonical_string(), *c))
            .collect()
    }

    /// Copy with every spatial axis resolution multiplied by `scale`.
    pub fn with_grid_scale(&self, scale: f64) -> Result<SystemSpec, SystemError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(SystemError::Config(format!("grid scale must be positive, got {scale}")));
        }
        let mut spec = self.clone();
        for (k, axis) in spec.space.iter_mut().enumerate() {
            let periodic = self.periods.get(k).copied().filter(|p| *p > 0.0);
            *axis = match periodic {
                Some(period) => {
                    let count = ((axis.count as f64) * scale).round() as usize;
                    let step = period / count as f64;
                    // keep the offset of the first point in units of the step
                    let phase = (axis.start - self.domain_origin(k)) / self.space[k].step;
                    Axis::new(axis.name.clone(), self.domain_origin(k) + phase * step, step, count)?
                }
                None => {
                    let count = (((axis.count - 1) as f64) * scale).round() as usize + 1;
                    let extent = axis.step * (axis.count - 1) as f64;
                    Axis::new(axis.name.clone(), axis.start, extent / (count - 1) as f64, count)?
                }
            };
        }
        Ok(spec)
    }

    fn domain_origin(&self, k: usize) -> f64 {
        match self.name.as_str() {
            "advection" | "ks" => 0.0,
            _ => self.space[k].start,
        }
    }

    /// Registry description for listings and container metadata.
    pub fn describe(&self) -> Value {
        json!({
            "name": self.name,
            "kind": self.kind,
            "description": self.description,
            "d": self.d,
            "spatial_dims": self.spatial_dims(),
            "time": self.time,
            "space": self.space,
            "params": self.params,
            "initial_condition": self.initial,
            "boundary_condition": self.boundary,
            "equations": self.ground_truth(),
        })
    }
}

/// Provenance recorded with every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub kind: SystemKind,
    pub snr_db: Option<f64>,
    pub dataset_seed: u64,
    pub noise_seed: Option<u64>,
    pub ground_truth: Vec<GroundTruth>,
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub field: Field,
    /// Same shape as `field.values`.
    pub clean_derivative: ArrayD<f64>,
}

impl Dataset {
    pub fn is_clean(&self) -> bool {
        self.meta.snr_db.is_none()
    }

    pub fn kind(&self) -> SystemKind {
        self.meta.kind
    }

    /// Truth map per state variable, keyed by canonical template string.
    pub fn truth(&self) -> Vec<BTreeMap<String, f64>> {
        self.meta.ground_truth.iter().map(|g| g.terms.clone()).collect()
    }

    pub fn slice_time(&self, from: usize, count: usize) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            field: self.field.slice_time(from, count),
            clean_derivative: crate::tensorgrid::slice_time_array(&self.clean_derivative, from, count),
        }
    }

    /// Applies measurement noise to the states; clean derivatives are kept.
    pub fn corrupt(&self, spec: &crate::noise::NoiseSpec) -> Result<Dataset, crate::noise::NoiseError> {
        let mut out = self.clone();
        crate::noise::corrupt_array(&mut out.field.values, spec)?;
        out.meta.snr_db = spec.snr_db;
        out.meta.noise_seed = if spec.is_clean() { None } else { spec.seed };
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub seed: u64,
    pub grid_scale: f64,
    /// Solver substeps per output interval; chosen automatically when `None`.
    pub substeps: Option<usize>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            seed: 0,
            grid_scale: 1.0,
            substeps: None,
        }
    }
}

fn var(name: &str) -> Expr {
    Expr::var(name)
}

fn sq(e: Expr) -> Expr {
    e.pow(Expr::num(2.0))
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn time_axis(step: f64, count: usize) -> Axis {
    Axis::new("t", 0.0, step, count).expect("registry time axis")
}

fn ode_spec(
    name: &str,
    description: &str,
    equations: Vec<Vec<(Expr, f64)>>,
    p: &[(&str, f64)],
    initial: Vec<f64>,
    step: f64,
    count: usize,
) -> SystemSpec {
    SystemSpec {
        name: name.to_string(),
        kind: SystemKind::Ode,
        description: description.to_string(),
        d: equations.len(),
        time: time_axis(step, count),
        space: vec![],
        equations,
        params: params(p),
        initial: InitialCondition::State { values: initial },
        boundary: BoundaryCondition::None,
        periods: vec![],
        solver: Solver::Ode,
        substeps: 32,
        oversample: 1,
    }
}

pub fn logistic() -> SystemSpec {
    let (r, k) = (0.8, 10.0);
    ode_spec(
        "logistic",
        "Logistic growth with carrying capacity",
        vec![vec![(var("u1"), r), (sq(var("u1")), -r / k)]],
        &[("r", r), ("k", k)],
        vec![0.5],
        0.1,
        151,
    )
}

pub fn rc_circuit() -> SystemSpec {
    let (vs, rc) = (5.0, 2.0);
    ode_spec(
        "rc_circuit",
        "RC circuit charging towards a constant source voltage",
        vec![vec![(Expr::num(1.0), vs / rc), (var("u1"), -1.0 / rc)]],
        &[("source_voltage", vs), ("rc", rc)],
        vec![0.0],
        0.1,
        101,
    )
}

pub fn gompertz() -> SystemSpec {
    let (a, k): (f64, f64) = (0.5, 10.0);
    ode_spec(
        "gompertz",
        "Gompertz growth",
        vec![vec![(var("u1"), a * k.ln()), (var("u1") * var("u1").log(), -a)]],
        &[("a", a), ("k", k)],
        vec![1.0],
        0.1,
        101,
    )
}

pub fn harmonic_oscillator(zeta: f64) -> SystemSpec {
    let omega = 1.0;
    let mut second = vec![(var("u1"), -omega * omega)];
    if zeta != 0.0 {
        second.push((var("u2"), -2.0 * zeta * omega));
    }
    ode_spec(
        "harmonic_oscillator",
        "Harmonic oscillator (undamped by default, damping ratio zeta)",
        vec![vec![(var("u2"), 1.0)], second],
        &[("omega", omega), ("zeta", zeta)],
        vec![1.0, 0.0],
        0.1,
        201,
    )
}

pub fn lotka_volterra() -> SystemSpec {
    let (alpha, beta, delta, gamma) = (1.1, 0.4, 0.1, 0.4);
    ode_spec(
        "lotka_volterra",
        "Lotka-Volterra predator-prey dynamics",
        vec![
            vec![(var("u1"), alpha), (var("u1") * var("u2"), -beta)],
            vec![(var("u1") * var("u2"), delta), (var("u2"), -gamma)],
        ],
        &[("alpha", alpha), ("beta", beta), ("delta", delta), ("gamma", gamma)],
        vec![10.0, 10.0],
        0.1,
        301,
    )
}

pub fn van_der_pol() -> SystemSpec {
    let mu = 1.0;
    ode_spec(
        "van_der_pol",
        "Van der Pol oscillator",
        vec![
            vec![(var("u2"), 1.0)],
            vec![(var("u2"), mu), (sq(var("u1")) * var("u2"), -mu), (var("u1"), -1.0)],
        ],
        &[("mu", mu)],
        vec![2.0, 0.0],
        0.1,
        201,
    )
}

pub fn lorenz() -> SystemSpec {
    let (sigma, rho, beta) = (10.0, 28.0, 8.0 / 3.0);
    ode_spec(
        "lorenz",
        "Lorenz equations, standard chaotic parameters",
        vec![
            vec![(var("u2"), sigma), (var("u1"), -sigma)],
            vec![(var("u1"), rho), (var("u1") * var("u3"), -1.0), (var("u2"), -1.0)],
            vec![(var("u1") * var("u2"), 1.0), (var("u3"), -beta)],
        ],
        &[("sigma", sigma), ("rho", rho), ("beta", beta)],
        vec![-8.0, 7.0, 27.0],
        0.01,
        1001,
    )
}

pub fn sir() -> SystemSpec {
    let (beta, gamma) = (0.5, 0.1);
    ode_spec(
        "sir",
        "SIR epidemic model (population fractions)",
        vec![
            vec![(var("u1") * var("u2"), -beta)],
            vec![(var("u1") * var("u2"), beta), (var("u2"), -gamma)],
            vec![(var("u2"), gamma)],
        ],
        &[("beta", beta), ("gamma", gamma)],
        vec![0.99, 0.01, 0.0],
        0.25,
        201,
    )
}

fn dx(order: u8) -> Expr {
    var(&derivative_name(0, "x", order))
}

fn dy(order: u8) -> Expr {
    var(&derivative_name(0, "y", order))
}

fn periodic_axis(name: &str, origin: f64, first_offset_cells: f64, period: f64, count: usize) -> Axis {
    let step = period / count as f64;
    Axis::new(name, origin + first_offset_cells * step, step, count).expect("registry axis")
}

pub fn advection() -> SystemSpec {
    let beta = 0.1;
    SystemSpec {
        name: "advection".into(),
        kind: SystemKind::Pde,
        description: "Linear advection, periodic, sinusoidal initial condition".into(),
        d: 1,
        time: time_axis(0.01, 201),
        space: vec![periodic_axis("x", 0.0, 0.5, 1.0, 1024)],
        equations: vec![vec![(dx(1), -beta)]],
        params: params(&[("beta", beta)]),
        initial: InitialCondition::Sinusoidal { modes: 2, max_mode: 8 },
        boundary: BoundaryCondition::Periodic,
        periods: vec![1.0],
        solver: Solver::Advection { speed: beta },
        substeps: 1,
        oversample: 1,
    }
}

pub fn burgers() -> SystemSpec {
    let nu = 0.1;
    SystemSpec {
        name: "burgers".into(),
        kind: SystemKind::Pde,
        description: "Viscous Burgers, periodic, sinusoidal initial condition".into(),
        d: 1,
        time: time_axis(0.1, 101),
        space: vec![periodic_axis("x", -8.0, 0.0, 16.0, 256)],
        equations: vec![vec![(var("u1") * dx(1), -1.0), (dx(2), nu)]],
        params: params(&[("nu", nu)]),
        initial: InitialCondition::Sinusoidal { modes: 2, max_mode: 8 },
        boundary: BoundaryCondition::Periodic,
        periods: vec![16.0],
        solver: Solver::Spectral(SpectralPde::Burgers { nu }),
        substeps: 20,
        oversample: 2,
    }
}

pub fn kdv() -> SystemSpec {
    SystemSpec {
        name: "kdv".into(),
        kind: SystemKind::Pde,
        description: "Korteweg-de Vries, periodic, two-term sech^2 initial condition".into(),
        d: 1,
        time: time_axis(0.1, 201),
        space: vec![periodic_axis("x", -30.0, 0.0, 60.0, 512)],
        equations: vec![vec![(var("u1") * dx(1), -6.0), (dx(3), -1.0)]],
        params: BTreeMap::new(),
        initial: InitialCondition::SechSquared {
            speeds: vec![1.0, 5.0],
            center: 0.0,
            width: std::f64::consts::SQRT_2 / 2.0,
        },
        boundary: BoundaryCondition::Periodic,
        periods: vec![60.0],
        solver: Solver::Spectral(SpectralPde::Kdv),
        substeps: 50,
        oversample: 2,
    }
}

pub fn ks() -> SystemSpec {
    let length = 32.0 * std::f64::consts::PI;
    SystemSpec {
        name: "ks".into(),
        kind: SystemKind::Pde,
        description: "Kuramoto-Sivashinsky, periodic, sinusoidal initial condition".into(),
        d: 1,
        time: time_axis(0.4, 251),
        space: vec![periodic_axis("x", 0.0, 1.0, length, 1024)],
        equations: vec![vec![(var("u1") * dx(1), -1.0), (dx(2), -1.0), (dx(4), -1.0)]],
        params: params(&[("length", length)]),
        initial: InitialCondition::Sinusoidal { modes: 2, max_mode: 8 },
        boundary: BoundaryCondition::Periodic,
        periods: vec![length],
        solver: Solver::Spectral(SpectralPde::KuramotoSivashinsky),
        substeps: 40,
        oversample: 1,
    }
}

pub fn advection_diffusion() -> SystemSpec {
    let (vx, vy, diff) = (0.25, 0.5, 0.5);
    let step = 0.2;
    SystemSpec {
        name: "advection_diffusion".into(),
        kind: SystemKind::Pde,
        description: "2-D advection-diffusion, periodic, Gaussian initial condition".into(),
        d: 1,
        time: time_axis(0.1, 61),
        space: vec![
            Axis::new("x", -5.0, step, 51).expect("registry axis"),
            Axis::new("y", -5.0, step, 51).expect("registry axis"),
        ],
        equations: vec![vec![(dx(2), diff), (dy(2), diff), (dx(1), -vx), (dy(1), -vy)]],
        params: params(&[("vx", vx), ("vy", vy), ("diffusion", diff)]),
        initial: InitialCondition::Gaussian {
            center: vec![0.0, 0.0],
            width: 1.0,
        },
        boundary: BoundaryCondition::Periodic,
        periods: vec![51.0 * step, 51.0 * step],
        solver: Solver::AdvectionDiffusion {
            velocity: [vx, vy],
            diffusion: diff,
        },
        substeps: 1,
        oversample: 1,
    }
}

fn heat_solar(dims: usize) -> SystemSpec {
    let p = HeatSolarParams::default();
    let kappa = p.diffusivity();
    let (space, equations, name) = if dims == 1 {
        (
            vec![Axis::new("x", -1.5, 0.03, 51).expect("registry axis")],
            vec![vec![(dx(2), kappa)]],
            "heat_solar_1d",
        )
    } else {
        (
            vec![
                Axis::new("x", -0.375, 0.015, 51).expect("registry axis"),
                Axis::new("y", -1.5, 0.03, 51).expect("registry axis"),
            ],
            vec![vec![(dx(2), kappa), (dy(2), kappa)]],
            "heat_solar_2d",
        )
    };
    SystemSpec {
        name: name.into(),
        kind: SystemKind::Pde,
        description: format!("Soil heating by a diurnal surface temperature, {dims}-D Crank-Nicolson"),
        d: 1,
        time: time_axis(300.0, 576),
        space,
        equations,
        params: params(&[
            ("t_r", p.t_r),
            ("t_a", p.t_a),
            ("omega", p.omega),
            ("rho", p.rho),
            ("c", p.c),
            ("kappa", p.kappa),
        ]),
        initial: InitialCondition::Uniform { value: p.t_r },
        boundary: BoundaryCondition::SurfaceTemperature,
        periods: vec![],
        solver: Solver::Heat(p),
        substeps: 1,
        oversample: 1,
    }
}

pub fn heat_solar_1d() -> SystemSpec {
    heat_solar(1)
}

pub fn heat_solar_2d() -> SystemSpec {
    heat_solar(2)
}

/// Every registered system, ODEs first.
pub fn registry() -> Vec<SystemSpec> {
    vec![
        logistic(),
        rc_circuit(),
        gompertz(),
        harmonic_oscillator(0.0),
        lotka_volterra(),
        van_der_pol(),
        lorenz(),
        sir(),
        advection(),
        burgers(),
        kdv(),
        ks(),
        advection_diffusion(),
        heat_solar_1d(),
        heat_solar_2d(),
    ]
}

pub fn lookup(name: &str) -> Result<SystemSpec, SystemError> {
    registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SystemError::UnknownSystem(name.to_string()))
}

/// Realized random sinusoid: `(n_i, A_i, φ_i)` per mode.
pub fn draw_sinusoid(seed: u64, modes: usize, max_mode: u32) -> Vec<(u32, f64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..modes)
        .map(|_| {
            let n = rng.random_range(1..=max_mode);
            let a: f64 = rng.random();
            let mut phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            if phi == 0.0 {
                phi = f64::EPSILON;
            }
            (n, a, phi)
        })
        .collect()
}

/// Evaluates a 1-D initial condition on `x`; returns realized parameters.
fn initial_profile(
    ic: &InitialCondition,
    x: &[f64],
    period: f64,
    seed: u64,
) -> Result<(Vec<f64>, Value), SystemError> {
    match ic {
        InitialCondition::Sinusoidal { modes, max_mode } => {
            let draws = draw_sinusoid(seed, *modes, *max_mode);
            let u = x
                .iter()
                .map(|&xi| {
                    draws
                        .iter()
                        .map(|&(n, a, phi)| a * (std::f64::consts::TAU * n as f64 / period * xi + phi).sin())
                        .sum()
                })
                .collect();
            let realized = draws
                .iter()
                .map(|(n, a, phi)| json!({"n": n, "amplitude": a, "phase": phi}))
                .collect();
            Ok((u, Value::Array(realized)))
        }
        InitialCondition::SechSquared { speeds, center, width } => {
            let u = x
                .iter()
                .map(|&xi| {
                    speeds
                        .iter()
                        .map(|c| 0.5 * c / (width * (xi - center)).cosh().powi(2))
                        .sum()
                })
                .collect();
            Ok((u, Value::Null))
        }
        InitialCondition::Uniform { value } => Ok((vec![*value; x.len()], Value::Null)),
        InitialCondition::Explicit { values } => {
            if values.len() != x.len() {
                return Err(SystemError::Config(format!(
                    "explicit initial condition has {} values for {} grid points",
                    values.len(),
                    x.len()
                )));
            }
            Ok((values.clone(), Value::Null))
        }
        other => Err(SystemError::Config(format!("initial condition {other:?} does not apply to a 1-D grid"))),
    }
}

/// Simulates a PDE system on its (optionally rescaled) grid.
pub fn simulate_pde(spec: &SystemSpec, options: &GenerateOptions) -> Result<Dataset, SystemError> {
    if spec.kind != SystemKind::Pde {
        return Err(SystemError::NotPde(spec.name.clone()));
    }
    let spec = if options.grid_scale != 1.0 {
        spec.with_grid_scale(options.grid_scale)?
    } else {
        spec.clone()
    };
    let times = spec.time.coordinates();
    let mut metadata = Map::new();
    let mut exact_rate: Option<ArrayD<f64>> = None;
    let values: ArrayD<f64> = match &spec.solver {
        Solver::Advection { speed } => {
            let x = spec.space[0].coordinates();
            let (u0, realized) = initial_profile(&spec.initial, &x, spec.periods[0], options.seed)?;
            metadata.insert("initial_condition_realized".into(), realized);
            let (rows, rates) = advect_exact(&u0, spec.periods[0], *speed, &times);
            exact_rate = Some(rows_to_array(&rates));
            rows_to_array(&rows)
        }
        Solver::Spectral(pde) => {
            let q = spec.oversample.max(1);
            let axis = &spec.space[0];
            let fine_n = axis.count * q;
            let fine_step = axis.step / q as f64;
            let xf: Vec<f64> = (0..fine_n).map(|i| axis.start + fine_step * i as f64).collect();
            let (u0, realized) = initial_profile(&spec.initial, &xf, spec.periods[0], options.seed)?;
            metadata.insert("initial_condition_realized".into(), realized);
            metadata.insert("solver_oversample".into(), json!(q));
            let solver = Etdrk4::new(*pde, fine_n, spec.periods[0]);
            let substeps = solver.resolve_substeps(&u0, spec.time.step, spec.substeps, options.substeps)?;
            metadata.insert("solver_substeps".into(), json!(substeps));
            let rows = solver.integrate(&u0, spec.time.step, spec.time.count, substeps)?;
            let coarse: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().step_by(q).copied().collect()).collect();
            let rates: Vec<Vec<f64>> = rows.iter().map(|r| solver.rhs(r).into_iter().step_by(q).collect()).collect();
            exact_rate = Some(rows_to_array(&rates));
            rows_to_array(&coarse)
        }
        Solver::AdvectionDiffusion { velocity, diffusion } => {
            let InitialCondition::Gaussian { center, width } = &spec.initial else {
                return Err(SystemError::Config("advection-diffusion expects a Gaussian initial condition".into()));
            };
            let (ax, ay) = (&spec.space[0], &spec.space[1]);
            let u0: Vec<f64> = (0..ax.count)
                .flat_map(|i| {
                    (0..ay.count).map(move |j| {
                        let rx = ax.coordinate(i) - center[0];
                        let ry = ay.coordinate(j) - center[1];
                        (-(rx * rx + ry * ry) / (2.0 * width * width)).exp()
                    })
                })
                .collect();
            let (frames, rates) = spectral::advect_diffuse_2d(
                &u0,
                [ax.count, ay.count],
                [spec.periods[0], spec.periods[1]],
                *velocity,
                *diffusion,
                &times,
            );
            let shape = vec![1, times.len(), ax.count, ay.count];
            let rate: Vec<f64> = rates.into_iter().flatten().collect();
            exact_rate = Some(ArrayD::from_shape_vec(shape.clone(), rate).expect("frame layout"));
            let flat: Vec<f64> = frames.into_iter().flatten().collect();
            ArrayD::from_shape_vec(shape, flat).expect("frame layout")
        }
        Solver::Heat(p) => {
            let substeps = options.substeps.unwrap_or(spec.substeps);
            let frames = simulate_heat(p, &spec.space, spec.time.step, spec.time.count, substeps)?;
            let mut shape = vec![1, spec.time.count];
            shape.extend(spec.space.iter().map(|a| a.count));
            let flat: Vec<f64> = frames.into_iter().flatten().collect();
            ArrayD::from_shape_vec(shape, flat).expect("frame layout")
        }
        Solver::Ode => return Err(SystemError::NotPde(spec.name.clone())),
    };
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        let per_frame = values.len() / spec.time.count;
        return Err(SystemError::Diverged {
            time: spec.time.coordinate(pos / per_frame),
        });
    }
    let field = Field::new(spec.time.clone(), spec.space.clone(), values)?;
    let clean_derivative = match exact_rate {
        Some(rate) => {
            metadata.insert("clean_derivative".into(), json!("solver right-hand side"));
            rate
        }
        None => {
            metadata.insert("clean_derivative".into(), json!("finite differences of the clean solution"));
            differentiate_array(&field.values, 1, &field.time, 1)?
        }
    };
    Ok(Dataset {
        meta: dataset_meta(&spec, options.seed, metadata),
        field,
        clean_derivative,
    })
}

fn rows_to_array(rows: &[Vec<f64>]) -> ArrayD<f64> {
    let nt = rows.len();
    let nx = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    ArrayD::from_shape_vec(vec![1, nt, nx], flat).expect("row layout")
}

fn dataset_meta(spec: &SystemSpec, seed: u64, mut metadata: Map<String, Value>) -> DatasetMeta {
    metadata.insert("system_spec".into(), spec.describe());
    DatasetMeta {
        system: spec.name.clone(),
        kind: spec.kind,
        snr_db: None,
        dataset_seed: seed,
        noise_seed: None,
        ground_truth: spec.ground_truth(),
        metadata,
    }
}

/// Simulates any registered system with its default configuration.
pub fn generate(spec: &SystemSpec, options: &GenerateOptions) -> Result<Dataset, SystemError> {
    match spec.kind {
        SystemKind::Ode => {
            let InitialCondition::State { values } = &spec.initial else {
                return Err(SystemError::Config("ODE systems need a state initial condition".into()));
            };
            let times = spec.time.coordinates();
            let config = OdeConfig {
                substeps: options.substeps.unwrap_or(spec.substeps),
            };
            let (states, derivatives) = simulate_ode(spec, &times, values, &config)?;
            let nt = times.len();
            let to_array = |rows: &[Vec<f64>]| {
                ArrayD::from_shape_fn(vec![spec.d, nt], |idx| rows[idx[1]][idx[0]])
            };
            let field = Field::new(spec.time.clone(), vec![], to_array(&states))?;
            let mut metadata = Map::new();
            metadata.insert("clean_derivative".into(), json!("ground-truth right-hand side"));
            metadata.insert(
                "note".into(),
                json!("coefficients and initial values are canonical textbook defaults"),
            );
            Ok(Dataset {
                meta: dataset_meta(spec, options.seed, metadata),
                field,
                clean_derivative: to_array(&derivatives),
            })
        }
        SystemKind::Pde => simulate_pde(spec, options),
    }
}
