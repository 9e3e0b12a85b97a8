//! Discovery methods and their hyperparameter grids.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::featlib::BasisFamily;
use crate::systems::SystemKind;

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sindy,
    Pdefind,
    Wsindy,
    Esindy,
    Ewsindy,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sindy, Method::Pdefind, Method::Wsindy, Method::Esindy, Method::Ewsindy];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sindy => "sindy",
            Method::Pdefind => "pdefind",
            Method::Wsindy => "wsindy",
            Method::Esindy => "esindy",
            Method::Ewsindy => "ewsindy",
        }
    }

    pub fn is_weak(self) -> bool {
        matches!(self, Method::Wsindy | Method::Ewsindy)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Method::Esindy | Method::Ewsindy)
    }

    /// Whether the method handles data of this kind.
    pub fn supports(self, kind: SystemKind) -> bool {
        match self {
            Method::Sindy => kind == SystemKind::Ode,
            Method::Pdefind | Method::Wsindy | Method::Ewsindy => kind == SystemKind::Pde,
            Method::Esindy => true,
        }
    }

    /// Published default grid for this method on data of `kind`.
    pub fn default_grid(self, kind: SystemKind) -> HyperGrid {
        let base = match (self, kind) {
            (Method::Sindy, _) | (Method::Esindy, SystemKind::Ode) => HyperGrid::sindy(),
            (Method::Pdefind, _) | (Method::Esindy, SystemKind::Pde) => HyperGrid::pdefind(),
            (Method::Wsindy | Method::Ewsindy, _) => HyperGrid::wsindy(),
        };
        if self.is_ensemble() {
            base.with_ensemble()
        } else {
            base
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown method `{s}`")))
    }
}

/// `n` values spaced evenly in log10 between `10^a` and `10^b`.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a, b, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Axes of a hyperparameter grid. Empty lists mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub thresholds: Vec<f64>,
    pub bases: Vec<Vec<BasisFamily>>,
    pub poly_orders: Vec<u8>,
    #[serde(default)]
    pub derivative_orders: Vec<u8>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub max_iters: Vec<usize>,
    #[serde(default)]
    pub integration_points: Vec<usize>,
    #[serde(default)]
    pub n_models: Vec<usize>,
    #[serde(default)]
    pub subset_ratios: Vec<f64>,
    #[serde(default)]
    pub inclusion_thresholds: Vec<f64>,
}

impl HyperGrid {
    pub fn sindy() -> HyperGrid {
        use BasisFamily::*;
        HyperGrid {
            thresholds: linspace(0.001, 1.0, 10),
            bases: vec![vec![Poly], vec![Poly, Sin, Cos], vec![Poly, Sin, Cos, Exp]],
            poly_orders: vec![1, 2, 3, 4],
            derivative_orders: vec![],
            alphas: vec![0.025, 0.05, 0.075],
            max_iters: vec![20, 50, 100],
            integration_points: vec![],
            n_models: vec![],
            subset_ratios: vec![],
            inclusion_thresholds: vec![],
        }
    }

    pub fn pdefind() -> HyperGrid {
        use BasisFamily::*;
        HyperGrid {
            thresholds: logspace(-7.0, 0.0, 16),
            bases: vec![vec![Poly], vec![Poly, Sin, Cos]],
            poly_orders: vec![1, 2, 3, 4],
            derivative_orders: vec![1, 2, 3, 4],
            alphas: vec![1e-5, 1e-4],
            max_iters: vec![200],
            integration_points: vec![],
            n_models: vec![],
            subset_ratios: vec![],
            inclusion_thresholds: vec![],
        }
    }

    pub fn wsindy() -> HyperGrid {
        HyperGrid {
            alphas: vec![],
            integration_points: vec![200, 2000],
            ..HyperGrid::pdefind()
        }
    }

    pub fn with_ensemble(mut self) -> HyperGrid {
        self.n_models = vec![10, 20, 50];
        self.subset_ratios = vec![0.5, 0.7, 0.9];
        self.inclusion_thresholds = vec![0.2, 0.3, 0.4, 0.5];
        self
    }

    /// Checks that `method` finds every axis it needs.
    pub fn validate(&self, method: Method, kind: SystemKind) -> Result<(), BenchError> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(BenchError::Config(format!("grid for {method} needs at least one {what}")))
            }
        };
        need(!self.thresholds.is_empty(), "threshold")?;
        need(!self.bases.is_empty() && self.bases.iter().all(|b| !b.is_empty()), "nonempty basis list")?;
        need(!self.poly_orders.is_empty(), "polynomial order")?;
        need(!self.max_iters.is_empty(), "max iteration count")?;
        if kind == SystemKind::Pde {
            need(!self.derivative_orders.is_empty(), "derivative order")?;
        }
        if method.is_weak() {
            need(!self.integration_points.is_empty(), "integration point count")?;
        } else {
            need(!self.alphas.is_empty(), "alpha")?;
        }
        if method.is_ensemble() {
            need(!self.n_models.is_empty(), "ensemble size")?;
            need(!self.subset_ratios.is_empty(), "subset ratio")?;
            need(!self.inclusion_thresholds.is_empty(), "inclusion threshold")?;
        }
        if self.poly_orders.iter().any(|p| !(1..=4).contains(p)) || self.derivative_orders.iter().any(|r| !(1..=4).contains(r)) {
            return Err(BenchError::Config("polynomial and derivative orders must be in 1..=4".into()));
        }
        if self.thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(BenchError::Config("thresholds must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Every configuration, threshold varying fastest and largest first, so that
    /// index order breaks ties toward the sparser fit.
    pub fn configs(&self, method: Method, kind: SystemKind) -> Vec<HyperConfig> {
        fn axis<T: Copy>(v: &[T], used: bool) -> Vec<Option<T>> {
            if used {
                v.iter().map(|x| Some(*x)).collect()
            } else {
                vec![None]
            }
        }
        let derivs = axis(&self.derivative_orders, kind == SystemKind::Pde);
        let alphas = axis(&self.alphas, !method.is_weak());
        let points = axis(&self.integration_points, method.is_weak());
        let ens = method.is_ensemble();
        let models = axis(&self.n_models, ens);
        let ratios = axis(&self.subset_ratios, ens);
        let incl = axis(&self.inclusion_thresholds, ens);
        let mut thresholds = self.thresholds.clone();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        let mut out = Vec::new();
        for basis in &self.bases {
            for &p in &self.poly_orders {
                for &r in &derivs {
                    for &a in &alphas {
                        for &it in &self.max_iters {
                            for &k in &points {
                                for &nm in &models {
                                    for &sr in &ratios {
                                        for &ip in &incl {
                                            for &t in &thresholds {
                                                out.push(HyperConfig {
                                                    threshold: t,
                                                    basis: basis.clone(),
                                                    poly_order: p,
                                                    derivative_order: r,
                                                    alpha: a,
                                                    max_iter: it,
                                                    integration_points: k,
                                                    n_models: nm,
                                                    subset_ratio: sr,
                                                    inclusion_threshold: ip,
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn max_poly_order(&self) -> u8 {
        self.poly_orders.iter().copied().max().unwrap_or(1)
    }

    pub fn max_derivative_order(&self) -> u8 {
        self.derivative_orders.iter().copied().max().unwrap_or(1)
    }

    /// Union of all basis families in grid order.
    pub fn families(&self) -> Vec<BasisFamily> {
        let mut out: Vec<BasisFamily> = self.bases.iter().flatten().copied().collect();
        out.sort();
        out.dedup();
        out
    }
}

/// One point of a [`HyperGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub threshold: f64,
    pub basis: Vec<BasisFamily>,
    pub poly_order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative_order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_models: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion_threshold: Option<f64>,
}

impl HyperConfig {
    /// Flat JSON object; the basis list is joined with `+`.
    pub fn flat(&self) -> Map<String, Value> {
        let Value::Object(mut m) = serde_json::to_value(self).expect("plain data") else {
            unreachable!()
        };
        let joined: Vec<&str> = self.basis.iter().map(|b| b.as_str()).collect();
        m.insert("basis".into(), Value::from(joined.join("+")));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_grid_sizes() {
        assert_eq!(HyperGrid::pdefind().configs(Method::Pdefind, SystemKind::Pde).len(), 16 * 2 * 4 * 4 * 2);
        assert_eq!(HyperGrid::wsindy().configs(Method::Wsindy, SystemKind::Pde).len(), 16 * 2 * 4 * 4 * 2);
        assert_eq!(HyperGrid::sindy().configs(Method::Sindy, SystemKind::Ode).len(), 10 * 3 * 4 * 3 * 3);
        let e = Method::Esindy.default_grid(SystemKind::Ode).configs(Method::Esindy, SystemKind::Ode);
        assert_eq!(e.len(), 1080 * 36);
    }

    #[test]
    fn threshold_axes() {
        let t = HyperGrid::pdefind().thresholds;
        assert_eq!(t.len(), 16);
        assert!((t[0] - 1e-7).abs() < 1e-20 && (t[15] - 1.0).abs() < 1e-15);
        assert!((t[1] / t[0] - 10f64.powf(7.0 / 15.0)).abs() < 1e-9);
        let s = HyperGrid::sindy().thresholds;
        assert_eq!(s[0], 0.001);
        assert_eq!(s[9], 1.0);
        assert!((s[1] - 0.112).abs() < 1e-12);
    }

    #[test]
    fn flat_hyperparameters() {
        let c = &HyperGrid::wsindy().configs(Method::Wsindy, SystemKind::Pde)[0];
        let m = c.flat();
        assert_eq!(m["basis"], "poly");
        assert_eq!(m["integration_points"], 200);
        assert!(!m.contains_key("alpha"));
        let back: HyperGrid = serde_json::from_str(&serde_json::to_string(&HyperGrid::wsindy()).unwrap()).unwrap();
        assert_eq!(back, HyperGrid::wsindy());
    }

    #[test]
    fn validation() {
        assert!(HyperGrid::pdefind().validate(Method::Pdefind, SystemKind::Pde).is_ok());
        assert!(HyperGrid::pdefind().validate(Method::Wsindy, SystemKind::Pde).is_err());
        let mut g = HyperGrid::sindy();
        g.poly_orders = vec![5];
        assert!(g.validate(Method::Sindy, SystemKind::Ode).is_err());
        assert_eq!("ewsindy".parse::<Method>().unwrap(), Method::Ewsindy);
        assert!("lasso".parse::<Method>().is_err());
    }
}
