//! Temporal splits, grid search by validation fitness, refit and test scoring.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discover::{
    ensemble_from_members, ensemble_member, ensemble_subset, fit_compressed, to_expressions, weak_library, Aggregation, Compressed,
    EnsembleConfig, Optimizer, SparseModel, Sr3Config, StlsqConfig, WeakFormConfig,
};
use crate::evalx::{fidelity, fitness, nmse, total_complexity, FidelityVerdict, MetricReport, NMSE_EPSILON};
use crate::expr::Expr;
use crate::featlib::{build_library, evaluate_on, symbol_columns, time_targets, LibrarySpec, TermLibrary};
use crate::systems::{Dataset, SystemKind};

use super::grid::{HyperConfig, HyperGrid, Method};
use super::BenchError;

/// Smallest trajectory that can be split.
pub const MIN_TIME_POINTS: usize = 10;

/// `(train, validation, test)` sizes: cuts at `⌊0.6 N⌋` and `⌊0.8 N⌋`.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize), BenchError> {
    if n < MIN_TIME_POINTS {
        return Err(BenchError::GridTooSmall { found: n, minimum: MIN_TIME_POINTS });
    }
    let a = n * 6 / 10;
    let b = n * 8 / 10;
    Ok((a, b - a, n - b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Train and validation together, used for the final refit.
    pub combined: Dataset,
}

pub fn split(ds: &Dataset) -> Result<Split, BenchError> {
    let (a, b, c) = split_sizes(ds.field.time.count)?;
    Ok(Split {
        train: ds.slice_time(0, a),
        validation: ds.slice_time(a, b),
        test: ds.slice_time(a + b, c),
        combined: ds.slice_time(0, a + b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub per_config_secs: f64,
    pub per_cell_secs: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            per_config_secs: 300.0,
            per_cell_secs: 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigStatus {
    Ok,
    Failed,
    /// Not run because the cell budget ran out.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub index: usize,
    pub status: ConfigStatus,
    pub validation_nmse: f64,
    pub complexity: usize,
    pub fitness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Took longer than the per-configuration budget.
    #[serde(default)]
    pub over_budget: bool,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub method: Method,
    pub configs: Vec<HyperConfig>,
    pub outcomes: Vec<ConfigOutcome>,
    pub winner: Option<usize>,
    /// Winner refit on train and validation.
    pub model: Option<SparseModel>,
    pub equations: Vec<Expr>,
    pub test: Option<MetricReport>,
    pub fidelity: Option<FidelityVerdict>,
    pub budget_exceeded: bool,
    pub notes: Vec<String>,
}

impl SearchResult {
    pub fn winning_config(&self) -> Option<&HyperConfig> {
        self.winner.map(|i| &self.configs[i])
    }

    pub fn winning_outcome(&self) -> Option<&ConfigOutcome> {
        self.winner.map(|i| &self.outcomes[i])
    }

    pub fn failures(&self) -> Vec<String> {
        let mut reasons: Vec<String> = self.outcomes.iter().filter_map(|o| o.reason.clone()).collect();
        reasons.sort();
        reasons.dedup();
        reasons
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub budget: Budget,
    /// Seeds subdomain placement and ensemble subsampling.
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: Budget::default(),
            seed: 0,
        }
    }
}

/// Half-widths (time first) fixed from the full trajectory and clamped to fit `shape`.
pub fn weak_half_widths(full_shape: &[usize], shape: &[usize]) -> Vec<usize> {
    full_shape
        .iter()
        .zip(shape)
        .map(|(&n, &m)| crate::discover::default_half_width(n).min((m.saturating_sub(1)) / 2).max(1))
        .collect()
}

fn axis_shape(ds: &Dataset) -> Vec<usize> {
    let mut s = vec![ds.field.time.count];
    s.extend(ds.field.space.iter().map(|a| a.count));
    s
}

/// Library recipe shared by the grid: largest orders, union of families, and
/// for weak methods the half-width source.
#[derive(Debug, Clone)]
struct Recipe {
    method: Method,
    kind: SystemKind,
    max_spec: LibrarySpec,
    full_shape: Vec<usize>,
    seed: u64,
}

impl Recipe {
    fn new(method: Method, kind: SystemKind, grid: &HyperGrid, full: &Dataset, seed: u64) -> Recipe {
        let families = grid.families();
        let max_spec = match kind {
            SystemKind::Ode => LibrarySpec::ode(&families, grid.max_poly_order()),
            SystemKind::Pde => LibrarySpec::pde(&families, grid.max_poly_order(), grid.max_derivative_order()),
        };
        Recipe {
            method,
            kind,
            max_spec,
            full_shape: axis_shape(full),
            seed,
        }
    }

    fn sub_spec(&self, c: &HyperConfig) -> LibrarySpec {
        match self.kind {
            SystemKind::Ode => LibrarySpec::ode(&c.basis, c.poly_order),
            SystemKind::Pde => LibrarySpec::pde(&c.basis, c.poly_order, c.derivative_order.unwrap_or(1)),
        }
    }

    /// Shared systems are keyed by integration points and, for weak methods,
    /// derivative order, since the test-function exponent follows the order.
    fn group(&self, c: &HyperConfig) -> Group {
        (c.integration_points, c.derivative_order.filter(|_| self.method.is_weak()))
    }

    fn group_spec(&self, group: Group) -> LibrarySpec {
        match group.1 {
            Some(r) => LibrarySpec { derivative_order: r, ..self.max_spec.clone() },
            None => self.max_spec.clone(),
        }
    }

    fn weak_config(&self, ds: &Dataset, points: usize, order: u8) -> WeakFormConfig {
        let mut cfg = WeakFormConfig::new(points, self.seed);
        let exponent = order as u32 + 2;
        cfg.exponents = Some((exponent, exponent));
        cfg.half_widths = Some(weak_half_widths(&self.full_shape, &axis_shape(ds)));
        cfg
    }

    fn library(&self, ds: &Dataset, spec: &LibrarySpec, points: Option<usize>) -> Result<TermLibrary, BenchError> {
        if self.method.is_weak() {
            let cfg = self.weak_config(ds, points.unwrap_or(200), spec.derivative_order);
            Ok(weak_library(&ds.field, spec, &cfg)?)
        } else {
            let clean = ds.is_clean().then_some(&ds.clean_derivative);
            Ok(build_library(&ds.field, spec, clean)?)
        }
    }

    /// `scale` is the mean column energy of the system being fitted; SR3's
    /// relaxation is set relative to it so the weak rows' overall scale is irrelevant.
    fn optimizer(&self, c: &HyperConfig, scale: f64) -> Optimizer {
        if self.method.is_weak() {
            Optimizer::Sr3(Sr3Config {
                threshold: c.threshold,
                max_iter: c.max_iter,
                nu: if scale > 0.0 && scale.is_finite() { SR3_RELAXATION / scale } else { 1.0 },
                ..Sr3Config::default()
            })
        } else {
            Optimizer::Stlsq(StlsqConfig {
                threshold: c.threshold,
                alpha: c.alpha.unwrap_or(0.0),
                max_iter: c.max_iter,
            })
        }
    }

    fn ensemble(&self, c: &HyperConfig, scale: f64) -> Option<EnsembleConfig> {
        self.method.is_ensemble().then(|| EnsembleConfig {
            n_models: c.n_models.unwrap_or(1),
            subset_ratio: c.subset_ratio.unwrap_or(1.0),
            inclusion_threshold: c.inclusion_threshold.unwrap_or(0.0),
            base: self.optimizer(c, scale),
            seed: self.seed,
            aggregation: Aggregation::Median,
        })
    }
}

type Group = (Option<usize>, Option<u8>);

/// Mean column energy times `ν`, so `I/ν` is `1e-6` of the typical Gram diagonal.
const SR3_RELAXATION: f64 = 1e6;

fn mean_energy(c: &Compressed, columns: &[usize]) -> f64 {
    if columns.is_empty() {
        return 0.0;
    }
    columns.iter().map(|&j| c.column_energy(j)).sum::<f64>() / columns.len() as f64
}

/// Systems shared by every configuration in one group.
struct Prepared {
    train: TermLibrary,
    train_c: Compressed,
    validation_c: Compressed,
    /// Train column index to validation column index.
    to_validation: Vec<Option<usize>>,
    /// `(ratio bits, member)` to member system.
    members: HashMap<(u64, usize), Compressed>,
    /// Weak methods on clean data: strong-form symbol columns and clean derivatives
    /// of the validation split, so fits are scored on predicted derivatives like the
    /// test metric. Noisy data is scored on the weak residual instead, since finite
    /// differences of noisy states swamp every candidate.
    strong_validation: Option<StrongValidation>,
}

struct StrongValidation {
    columns: BTreeMap<String, Vec<f64>>,
    targets: Array2<f64>,
}

impl StrongValidation {
    fn new(ds: &Dataset, max_order: u8) -> Result<StrongValidation, BenchError> {
        let clean = ds.is_clean().then_some(&ds.clean_derivative);
        Ok(StrongValidation {
            columns: symbol_columns(&ds.field, max_order)?,
            targets: time_targets(&ds.field, clean)?,
        })
    }

    fn nmse(&self, equations: &[Expr]) -> f64 {
        let n = self.targets.nrows();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, e) in equations.iter().enumerate() {
            let Ok(pred) = evaluate_on(e, &self.columns, n) else {
                return f64::NAN;
            };
            for (p, t) in pred.iter().zip(self.targets.column(i)) {
                num += (p - t) * (p - t);
                den += t * t;
            }
        }
        num / (den + NMSE_EPSILON)
    }
}

fn prepare(recipe: &Recipe, split: &Split, group: Group, grid: &HyperGrid) -> Result<Prepared, BenchError> {
    let spec = recipe.group_spec(group);
    let train = recipe.library(&split.train, &spec, group.0)?;
    let validation = recipe.library(&split.validation, &spec, group.0)?;
    let train_c = Compressed::new(train.theta.view(), train.targets.view());
    let validation_c = Compressed::new(validation.theta.view(), validation.targets.view());
    let to_validation = train
        .terms
        .iter()
        .map(|t| validation.terms.iter().position(|v| v.name == t.name))
        .collect();
    let mut members = HashMap::new();
    if recipe.method.is_ensemble() {
        let n = grid.n_models.iter().copied().max().unwrap_or(1);
        let jobs: Vec<(f64, usize)> = grid.subset_ratios.iter().flat_map(|&r| (0..n).map(move |m| (r, m))).collect();
        let built: Vec<((u64, usize), Compressed)> = jobs
            .par_iter()
            .map(|&(r, m)| ((r.to_bits(), m), ensemble_member(&train, r, recipe.seed, m)))
            .collect();
        members.extend(built);
    }
    let strong_validation = if recipe.method.is_weak() && split.validation.is_clean() {
        Some(StrongValidation::new(&split.validation, spec.derivative_order)?)
    } else {
        None
    };
    Ok(Prepared {
        train,
        train_c,
        validation_c,
        to_validation,
        members,
        strong_validation,
    })
}

fn validation_nmse(p: &Prepared, model: &SparseModel) -> f64 {
    let m = p.validation_c.n_terms();
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..model.n_states() {
        let mut coef = vec![0.0; m];
        for (j, map) in p.to_validation.iter().enumerate() {
            let c = model.coefficients[[j, t]];
            match map {
                Some(k) => coef[*k] = c,
                None if c != 0.0 => return f64::NAN,
                None => {}
            }
        }
        num += p.validation_c.residual(t, &coef);
        den += p.validation_c.target_energy(t);
    }
    num / (den + NMSE_EPSILON)
}

fn fit_config(recipe: &Recipe, p: &Prepared, c: &HyperConfig) -> SparseModel {
    let allowed = p.train.columns_for(&recipe.sub_spec(c));
    let name = recipe.method.as_str();
    let scale = mean_energy(&p.train_c, &allowed);
    match recipe.ensemble(c, scale) {
        Some(e) => {
            let bits = e.subset_ratio.to_bits();
            let members: Vec<&Compressed> = (0..e.n_models.max(1)).map(|m| &p.members[&(bits, m)]).collect();
            ensemble_from_members(&p.train, &members, &allowed, &e, name)
        }
        None => fit_compressed(&p.train, &p.train_c, &allowed, &recipe.optimizer(c, scale), name),
    }
}

fn evaluate_config(recipe: &Recipe, p: &Prepared, index: usize, c: &HyperConfig, budget: &Budget) -> ConfigOutcome {
    let started = Instant::now();
    let model = fit_config(recipe, p, c);
    let equations = to_expressions(&model);
    let validation = match &p.strong_validation {
        Some(sv) => sv.nmse(&equations),
        None => validation_nmse(p, &model),
    };
    let complexity = total_complexity(&equations);
    let over_budget = started.elapsed() > Duration::from_secs_f64(budget.per_config_secs);
    if !validation.is_finite() {
        return ConfigOutcome {
            index,
            status: ConfigStatus::Failed,
            validation_nmse: validation,
            complexity,
            fitness: f64::NAN,
            reason: Some("non-finite validation error".into()),
            over_budget,
        };
    }
    ConfigOutcome {
        index,
        status: ConfigStatus::Ok,
        validation_nmse: validation,
        complexity,
        fitness: fitness(validation, complexity),
        reason: None,
        over_budget,
    }
}

/// Highest fitness; ties go to lower complexity, then the earlier index.
pub fn select_winner(outcomes: &[ConfigOutcome]) -> Option<usize> {
    outcomes
        .iter()
        .filter(|o| o.status == ConfigStatus::Ok)
        .min_by(|a, b| {
            b.fitness
                .total_cmp(&a.fitness)
                .then(a.complexity.cmp(&b.complexity))
                .then(a.index.cmp(&b.index))
        })
        .map(|o| o.index)
}

/// Scores equations on the strong-form features of `test` against its clean derivatives.
pub fn test_metrics(test: &Dataset, equations: &[Expr], max_order: u8) -> Result<MetricReport, BenchError> {
    let order = if test.field.n_space() == 0 { 0 } else { max_order };
    let cols = symbol_columns(&test.field, order)?;
    let n = test.field.points_per_state();
    let mut truth_all = Vec::new();
    let mut pred_all = Vec::new();
    let mut per_variable = Vec::new();
    for (i, e) in equations.iter().enumerate() {
        let truth: Vec<f64> = test.clean_derivative.index_axis(ndarray::Axis(0), i).iter().copied().collect();
        let pred = evaluate_on(e, &cols, n)?;
        per_variable.push(nmse(&truth, &pred)?);
        truth_all.extend(truth);
        pred_all.extend(pred);
    }
    let joint = nmse(&truth_all, &pred_all)?;
    Ok(MetricReport::from_parts(joint, total_complexity(equations), per_variable))
}

/// Runs every configuration of `grid` on `ds`, refits the winner on train
/// and validation, then scores it on the test split.
pub fn grid_search(ds: &Dataset, method: Method, grid: &HyperGrid, options: &SearchOptions) -> Result<SearchResult, BenchError> {
    let kind = ds.kind();
    if !method.supports(kind) {
        return Err(BenchError::Config(format!("{method} does not handle {} data", kind.as_str())));
    }
    grid.validate(method, kind)?;
    let started = Instant::now();
    let cell_budget = Duration::from_secs_f64(options.budget.per_cell_secs);
    let split = split(ds)?;
    let recipe = Recipe::new(method, kind, grid, ds, options.seed);
    let configs = grid.configs(method, kind);

    let mut groups: Vec<Group> = configs.iter().map(|c| recipe.group(c)).collect();
    groups.sort();
    groups.dedup();
    let mut prepared = HashMap::new();
    for g in groups {
        prepared.insert(g, prepare(&recipe, &split, g, grid)?);
    }

    let outcomes: Vec<ConfigOutcome> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if started.elapsed() > cell_budget {
                return ConfigOutcome {
                    index: i,
                    status: ConfigStatus::Skipped,
                    validation_nmse: f64::NAN,
                    complexity: 0,
                    fitness: f64::NAN,
                    reason: Some("cell budget exhausted".into()),
                    over_budget: false,
                };
            }
            evaluate_config(&recipe, &prepared[&recipe.group(c)], i, c, &options.budget)
        })
        .collect();
    drop(prepared);

    let budget_exceeded = outcomes.iter().any(|o| o.status == ConfigStatus::Skipped);
    let mut notes = Vec::new();
    if budget_exceeded {
        notes.push("cell budget exceeded; grid partially evaluated".to_string());
    }
    if outcomes.iter().any(|o| o.over_budget) {
        notes.push("some configurations exceeded the per-configuration budget".to_string());
    }
    let winner = select_winner(&outcomes);
    let mut result = SearchResult {
        method,
        configs,
        outcomes,
        winner,
        model: None,
        equations: Vec::new(),
        test: None,
        fidelity: None,
        budget_exceeded,
        notes,
    };
    let Some(w) = winner else {
        return Ok(result);
    };
    let config = result.configs[w].clone();
    let spec = recipe.sub_spec(&config);
    let lib = recipe.library(&split.combined, &spec, config.integration_points)?;
    let every: Vec<usize> = (0..lib.n_terms()).collect();
    let compressed = Compressed::new(lib.theta.view(), lib.targets.view());
    let scale = mean_energy(&compressed, &every);
    let model = match recipe.ensemble(&config, scale) {
        Some(e) => ensemble_subset(&lib, &every, &e, method.as_str()),
        None => fit_compressed(&lib, &compressed, &every, &recipe.optimizer(&config, scale), method.as_str()),
    };
    let equations = to_expressions(&model);
    let max_order = config.derivative_order.unwrap_or(0).max(grid.max_derivative_order());
    result.test = Some(test_metrics(&split.test, &equations, max_order)?);
    result.fidelity = Some(fidelity(&model.term_maps(), &ds.truth()));
    result.equations = equations;
    result.notes.extend(model.diagnostics.notes.iter().cloned());
    result.model = Some(model);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(index: usize, fitness: f64, complexity: usize) -> ConfigOutcome {
        ConfigOutcome {
            index,
            status: ConfigStatus::Ok,
            validation_nmse: 0.0,
            complexity,
            fitness,
            reason: None,
            over_budget: false,
        }
    }

    #[test]
    fn split_sizes_follow_floor_cuts() {
        assert_eq!(split_sizes(10).unwrap(), (6, 2, 2));
        assert_eq!(split_sizes(576).unwrap(), (345, 115, 116));
        assert!(matches!(split_sizes(5), Err(BenchError::GridTooSmall { .. })));
    }

    #[test]
    fn single_configuration_wins() {
        assert_eq!(select_winner(&[outcome(0, 1.2, 9)]), Some(0));
    }

    #[test]
    fn ties_prefer_lower_complexity_then_earlier() {
        let o = vec![outcome(0, 1.5, 9), outcome(1, 1.5, 5), outcome(2, 1.5, 5), outcome(3, 1.4, 1)];
        assert_eq!(select_winner(&o), Some(1));
        let mut failed = outcome(4, 9.0, 1);
        failed.status = ConfigStatus::Failed;
        let mut o2 = o.clone();
        o2.push(failed);
        assert_eq!(select_winner(&o2), Some(1));
        assert_eq!(select_winner(&[]), None);
    }

    #[test]
    fn half_widths_are_clamped() {
        assert_eq!(weak_half_widths(&[100, 256], &[20, 256]), vec![7, 16]);
        assert_eq!(weak_half_widths(&[100, 256], &[60, 256]), vec![7, 16]);
        assert_eq!(weak_half_widths(&[100, 256], &[5, 256]), vec![2, 16]);
    }
}
