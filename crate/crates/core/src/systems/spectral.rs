//! Periodic Fourier solvers: exact linear propagators and ETDRK4 for
//! `u_t = L u + g (u²)_x`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::SystemError;

type C = Complex<f64>;

/// Signed wavenumbers `2π n / period` in FFT order, Nyquist mode set to zero.
pub(crate) fn wavenumbers(n: usize, period: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            if n % 2 == 0 && i == n / 2 {
                0.0
            } else {
                std::f64::consts::TAU * m / period
            }
        })
        .collect()
}

/// Signed wavenumbers with the Nyquist mode kept at `+π n / period`; callers take the real part.
fn full_wavenumbers(n: usize, period: f64) -> Vec<f64> {
    (0..n)
        .map(|i| std::f64::consts::TAU * signed_mode(i, n) as f64 / period)
        .collect()
}

fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Plans {
        let mut planner = FftPlanner::new();
        Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// `u(x, t) = u0(x - speed t)` on a periodic line, one row per time, with
/// the exact rate `u_t` of every row.
pub fn advect_exact(u0: &[f64], period: f64, speed: f64, times: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = u0.len();
    let plans = Plans::new(n);
    let k = wavenumbers(n, period);
    let mut hat: Vec<C> = u0.iter().map(|&v| C::new(v, 0.0)).collect();
    plans.forward.process(&mut hat);
    let nyquist = (n % 2 == 0).then_some(n / 2);
    let kn = std::f64::consts::PI * n as f64 / period;
    let invert = |mut buf: Vec<C>| -> Vec<f64> {
        plans.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    };
    times
        .iter()
        .map(|&t| {
            let (values, rates): (Vec<C>, Vec<C>) = hat
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    if Some(i) == nyquist {
                        // real-valued shift of the Nyquist cosine
                        (h * (kn * speed * t).cos(), h * (-kn * speed * (kn * speed * t).sin()))
                    } else {
                        let v = h * C::from_polar(1.0, -k[i] * speed * t);
                        (v, v * C::new(0.0, -k[i] * speed))
                    }
                })
                .unzip();
            (invert(values), invert(rates))
        })
        .unzip()
}

fn fft_2d(data: &mut [C], nx: usize, ny: usize, row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
    for r in data.chunks_mut(ny) {
        row.process(r);
    }
    let mut column = vec![C::new(0.0, 0.0); nx];
    for j in 0..ny {
        for i in 0..nx {
            column[i] = data[i * ny + j];
        }
        col.process(&mut column);
        for i in 0..nx {
            data[i * ny + j] = column[i];
        }
    }
}

/// Exact propagator of `u_t = D ∇²u - v·∇u` on a periodic rectangle.
/// `u0` is x-major; returns one flattened frame per time and its rate.
pub(crate) fn advect_diffuse_2d(
    u0: &[f64],
    [nx, ny]: [usize; 2],
    [px, py]: [f64; 2],
    [vx, vy]: [f64; 2],
    diffusion: f64,
    times: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny));
    let (ix, iy) = (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny));
    let kx = full_wavenumbers(nx, px);
    let ky = full_wavenumbers(ny, py);
    let mut hat: Vec<C> = u0.iter().map(|&v| C::new(v, 0.0)).collect();
    fft_2d(&mut hat, nx, ny, fy.as_ref(), fx.as_ref());
    let scale = 1.0 / (nx * ny) as f64;
    times
        .iter()
        .map(|&t| {
            let mut buf = hat.clone();
            let mut rate = hat.clone();
            for i in 0..nx {
                for j in 0..ny {
                    let k2 = kx[i] * kx[i] + ky[j] * ky[j];
                    let lambda = C::new(-diffusion * k2, -(vx * kx[i] + vy * ky[j]));
                    buf[i * ny + j] *= (lambda * t).exp();
                    rate[i * ny + j] = buf[i * ny + j] * lambda;
                }
            }
            fft_2d(&mut buf, nx, ny, iy.as_ref(), ix.as_ref());
            fft_2d(&mut rate, nx, ny, iy.as_ref(), ix.as_ref());
            (
                buf.iter().map(|c| c.re * scale).collect::<Vec<f64>>(),
                rate.iter().map(|c| c.re * scale).collect::<Vec<f64>>(),
            )
        })
        .unzip()
}

/// Periodic PDEs of the form `u_t = L u + g (u²)_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralPde {
    /// `u_t = -u u_x + ν u_xx`
    Burgers { nu: f64 },
    /// `u_t = -6 u u_x - u_xxx`
    Kdv,
    /// `u_t = -u u_x - u_xx - u_xxxx`
    KuramotoSivashinsky,
}

impl SpectralPde {
    fn linear(self, k: f64) -> C {
        match self {
            SpectralPde::Burgers { nu } => C::new(-nu * k * k, 0.0),
            SpectralPde::Kdv => C::new(0.0, k * k * k),
            SpectralPde::KuramotoSivashinsky => C::new(k * k - k.powi(4), 0.0),
        }
    }

    /// Coefficient `g` of `(u²)_x`.
    fn nonlinear(self) -> f64 {
        match self {
            SpectralPde::Burgers { .. } | SpectralPde::KuramotoSivashinsky => -0.5,
            SpectralPde::Kdv => -3.0,
        }
    }
}

const CONTOUR_POINTS: usize = 32;
/// RK4 stability bound on the imaginary axis is about 2.8; leave some margin.
const CFL_LIMIT: f64 = 1.5;

/// Exponential time differencing RK4 (Kassam & Trefethen) with 2/3 dealiasing.
pub struct Etdrk4 {
    pde: SpectralPde,
    n: usize,
    k: Vec<f64>,
    /// `g i k`, zero outside the dealiasing band.
    g: Vec<C>,
    plans: Plans,
}

struct Coefficients {
    e: Vec<C>,
    e2: Vec<C>,
    q: Vec<C>,
    f1: Vec<C>,
    f2: Vec<C>,
    f3: Vec<C>,
}

impl Etdrk4 {
    pub fn new(pde: SpectralPde, n: usize, period: f64) -> Etdrk4 {
        let k = wavenumbers(n, period);
        let cutoff = n as i64 / 3;
        let g = (0..n)
            .map(|i| {
                if signed_mode(i, n).abs() > cutoff || k[i] == 0.0 {
                    C::new(0.0, 0.0)
                } else {
                    C::new(0.0, pde.nonlinear() * k[i])
                }
            })
            .collect();
        Etdrk4 {
            pde,
            n,
            k,
            g,
            plans: Plans::new(n),
        }
    }

    fn coefficients(&self, h: f64) -> Coefficients {
        let m = CONTOUR_POINTS;
        let roots: Vec<C> = (1..=m)
            .map(|j| C::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / m as f64))
            .chain((1..=m).map(|j| C::from_polar(1.0, -std::f64::consts::PI * (j as f64 - 0.5) / m as f64)))
            .collect();
        let count = roots.len() as f64;
        let mut c = Coefficients {
            e: Vec::with_capacity(self.n),
            e2: Vec::with_capacity(self.n),
            q: Vec::with_capacity(self.n),
            f1: Vec::with_capacity(self.n),
            f2: Vec::with_capacity(self.n),
            f3: Vec::with_capacity(self.n),
        };
        for &k in &self.k {
            let hl = self.pde.linear(k) * h;
            c.e.push(hl.exp());
            c.e2.push((hl * 0.5).exp());
            let (mut q, mut f1, mut f2, mut f3) = (C::default(), C::default(), C::default(), C::default());
            for r in &roots {
                let z = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z * 0.5).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            c.q.push(q * (h / count));
            c.f1.push(f1 * (h / count));
            c.f2.push(f2 * (h / count));
            c.f3.push(f3 * (h / count));
        }
        c
    }

    fn nonlinear(&self, v: &[C], scratch: &mut Vec<C>, out: &mut [C]) {
        scratch.clear();
        scratch.extend_from_slice(v);
        self.plans.inverse.process(scratch);
        let inv_n = 1.0 / self.n as f64;
        for s in scratch.iter_mut() {
            let u = s.re * inv_n;
            *s = C::new(u * u, 0.0);
        }
        self.plans.forward.process(scratch);
        for ((o, s), g) in out.iter_mut().zip(scratch.iter()).zip(&self.g) {
            *o = g * s;
        }
    }

    /// `L u + g (u²)_x` with the same dealiasing as the time stepper.
    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut v: Vec<C> = u.iter().map(|&x| C::new(x, 0.0)).collect();
        self.plans.forward.process(&mut v);
        if n % 2 == 0 {
            v[n / 2] = C::default();
        }
        let mut nv = vec![C::default(); n];
        let mut scratch = Vec::with_capacity(n);
        self.nonlinear(&v, &mut scratch, &mut nv);
        let mut out: Vec<C> = (0..n).map(|i| self.pde.linear(self.k[i]) * v[i] + nv[i]).collect();
        self.plans.inverse.process(&mut out);
        out.iter().map(|z| z.re / n as f64).collect()
    }

    /// Substeps needed for nonlinear advective stability, estimated from `u`.
    pub fn estimate_substeps(&self, u: &[f64], dt: f64) -> usize {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let kmax = self.g.iter().zip(&self.k).filter(|(g, _)| g.norm() > 0.0).fold(0.0f64, |m, (_, k)| m.max(k.abs()));
        let speed = 2.0 * self.pde.nonlinear().abs() * umax;
        ((dt * speed * kmax / CFL_LIMIT).ceil() as usize).max(1)
    }

    /// Automatic choice is `max(default, 2 × estimate)` to allow for growth of
    /// `max |u|`; an explicit request below the estimate is an error.
    pub fn resolve_substeps(
        &self,
        u0: &[f64],
        dt: f64,
        default: usize,
        requested: Option<usize>,
    ) -> Result<usize, SystemError> {
        let estimate = self.estimate_substeps(u0, dt);
        match requested {
            Some(s) if s < estimate => Err(SystemError::Unstable {
                substeps: s,
                suggested: 2 * estimate,
            }),
            Some(s) => Ok(s),
            None => Ok(default.max(2 * estimate)),
        }
    }

    /// Integrates `count - 1` output intervals of length `dt`; row 0 is `u0`.
    pub fn integrate(&self, u0: &[f64], dt: f64, count: usize, substeps: usize) -> Result<Vec<Vec<f64>>, SystemError> {
        let n = self.n;
        let h = dt / substeps.max(1) as f64;
        let c = self.coefficients(h);
        let mut v: Vec<C> = u0.iter().map(|&x| C::new(x, 0.0)).collect();
        self.plans.forward.process(&mut v);
        if n % 2 == 0 {
            v[n / 2] = C::default();
        }
        let zeros = vec![C::default(); n];
        let (mut nv, mut na, mut nb, mut nc) = (zeros.clone(), zeros.clone(), zeros.clone(), zeros.clone());
        let (mut a, mut b, mut cc) = (zeros.clone(), zeros.clone(), zeros.clone());
        let mut scratch = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(count);
        rows.push(u0.to_vec());
        for step in 1..count {
            for _ in 0..substeps {
                self.nonlinear(&v, &mut scratch, &mut nv);
                for i in 0..n {
                    a[i] = c.e2[i] * v[i] + c.q[i] * nv[i];
                }
                self.nonlinear(&a, &mut scratch, &mut na);
                for i in 0..n {
                    b[i] = c.e2[i] * v[i] + c.q[i] * na[i];
                }
                self.nonlinear(&b, &mut scratch, &mut nb);
                for i in 0..n {
                    cc[i] = c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nv[i]);
                }
                self.nonlinear(&cc, &mut scratch, &mut nc);
                for i in 0..n {
                    v[i] = c.e[i] * v[i] + nv[i] * c.f1[i] + 2.0 * (na[i] + nb[i]) * c.f2[i] + nc[i] * c.f3[i];
                }
            }
            let mut u = v.clone();
            self.plans.inverse.process(&mut u);
            let row: Vec<f64> = u.iter().map(|z| z.re / n as f64).collect();
            if row.iter().any(|x| !x.is_finite() || x.abs() > 1e12) {
                return Err(SystemError::Diverged { time: step as f64 * dt });
            }
            rows.push(row);
        }
        Ok(rows)
    }
}
