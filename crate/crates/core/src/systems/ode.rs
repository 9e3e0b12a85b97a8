use crate::expr::{state_name, CompiledExpr};

use super::{SystemError, SystemKind, SystemSpec};

const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    /// RK4 steps per output interval, at least 32.
    pub substeps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { substeps: 32 }
    }
}

struct Rhs {
    programs: Vec<CompiledExpr>,
    stack: Vec<f64>,
}

impl Rhs {
    fn new(spec: &SystemSpec) -> Result<Rhs, SystemError> {
        let names: Vec<String> = (0..spec.d).map(state_name).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let programs = (0..spec.d)
            .map(|i| spec.rhs(i).compile(&refs))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SystemError::Config(format!("{}: {e}", spec.name)))?;
        Ok(Rhs {
            programs,
            stack: Vec::with_capacity(16),
        })
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.programs) {
            *o = p.eval_with(u, &mut self.stack);
        }
    }
}

fn axpy(base: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for ((o, b), k) in out.iter_mut().zip(base).zip(k) {
        *o = b + h * k;
    }
}

/// Fixed-step RK4 on the output timestamps. Returns `(states, rhs)` rows, one per timestamp.
pub fn simulate_ode(
    spec: &SystemSpec,
    times: &[f64],
    initial: &[f64],
    config: &OdeConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), SystemError> {
    if spec.kind != SystemKind::Ode {
        return Err(SystemError::NotOde(spec.name.clone()));
    }
    if initial.len() != spec.d {
        return Err(SystemError::Config(format!(
            "{} needs {} initial values, got {}",
            spec.name,
            spec.d,
            initial.len()
        )));
    }
    if times.len() > 2 {
        let dt = times[1] - times[0];
        let uniform = times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        if !uniform || dt <= 0.0 {
            return Err(SystemError::Config("ODE timestamps must be uniform and increasing".into()));
        }
    }
    let substeps = config.substeps.max(32);
    let d = spec.d;
    let mut rhs = Rhs::new(spec)?;
    let mut u = initial.to_vec();
    let mut states = Vec::with_capacity(times.len());
    let mut derivs = Vec::with_capacity(times.len());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for (n, &t) in times.iter().enumerate() {
        if n > 0 {
            let h = (t - times[n - 1]) / substeps as f64;
            for _ in 0..substeps {
                rhs.eval(&u, &mut k1);
                axpy(&u, &k1, 0.5 * h, &mut tmp);
                rhs.eval(&tmp, &mut k2);
                axpy(&u, &k2, 0.5 * h, &mut tmp);
                rhs.eval(&tmp, &mut k3);
                axpy(&u, &k3, h, &mut tmp);
                rhs.eval(&tmp, &mut k4);
                for i in 0..d {
                    u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        let mut du = vec![0.0; d];
        rhs.eval(&u, &mut du);
        if u.iter().chain(&du).any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(SystemError::Diverged { time: t });
        }
        states.push(u.clone());
        derivs.push(du);
    }
    Ok((states, derivs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::systems::{harmonic_oscillator, logistic, lorenz};

    #[test]
    fn zero_rhs_gives_constant_trajectory() {
        let mut spec = logistic();
        spec.equations = vec![vec![(Expr::var("u1"), 0.0)]];
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let (s, d) = simulate_ode(&spec, &times, &[3.0], &OdeConfig::default()).unwrap();
        assert!(s.iter().all(|r| r[0] == 3.0));
        assert!(d.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn oscillator_returns_after_one_period() {
        let spec = harmonic_oscillator(0.0);
        let n = 101;
        let step = std::f64::consts::TAU / (n - 1) as f64;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let (s, d) = simulate_ode(&spec, &times, &[1.0, 0.0], &OdeConfig::default()).unwrap();
        let last = &s[n - 1];
        assert!((last[0] - 1.0).abs() < 1e-6 && last[1].abs() < 1e-6, "{last:?}");
        for (i, t) in times.iter().enumerate() {
            assert!((s[i][0] - t.cos()).abs() < 1e-6);
            assert!((d[i][1] + t.cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn lorenz_stays_bounded() {
        let spec = lorenz();
        let times: Vec<f64> = (0..1001).map(|i| i as f64 * 0.01).collect();
        let (s, _) = simulate_ode(&spec, &times, &[-8.0, 7.0, 27.0], &OdeConfig::default()).unwrap();
        let max = s.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 100.0, "{max}");
        assert!(max > 10.0);
    }

    #[test]
    fn logistic_matches_closed_form() {
        let spec = logistic();
        let times = spec.time.coordinates();
        let (s, _) = simulate_ode(&spec, &times, &[0.5], &OdeConfig::default()).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let exact = 10.0 / (1.0 + (10.0 / 0.5 - 1.0) * (-0.8 * t).exp());
            assert!((s[i][0] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn blow_up_names_first_bad_time() {
        let mut spec = logistic();
        spec.equations = vec![vec![(Expr::var("u1").pow(Expr::num(2.0)), 1.0)]];
        let times: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        match simulate_ode(&spec, &times, &[1.0], &OdeConfig::default()) {
            Err(SystemError::Diverged { time }) => assert!(time > 0.95 && time < 1.25, "{time}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
