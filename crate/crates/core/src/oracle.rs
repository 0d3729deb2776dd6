//! Reference velocity fields, flow maps and average velocities.
//!
//! Everything here is computed with plain arithmetic, a classical RK4
//! integrator and central finite differences. None of it goes through the
//! differentiation engine, so it can serve as an independent check of the
//! engine, the networks and the training targets.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::{AverageVelocity, Condition};
use crate::schedule::Setting;

/// Default number of RK4 steps for reference trajectories.
pub const DEFAULT_STEPS: usize = 512;
/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Independent isotropic Gaussians `x0 ~ N(mu0, sigma0^2 I)` and
/// `x1 ~ N(mu1, sigma1^2 I)` joined by the straight interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTask {
    pub mu0: Vec<f64>,
    pub sigma0: f64,
    pub mu1: Vec<f64>,
    pub sigma1: f64,
}

impl GaussianTask {
    pub fn new(mu0: Vec<f64>, sigma0: f64, mu1: Vec<f64>, sigma1: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma1 > 0.0) {
            return Err(Error::InvalidArgument("standard deviations must be positive".into()));
        }
        if mu0.len() != mu1.len() || mu0.is_empty() {
            return Err(Error::Shape("means must share a positive dimension".into()));
        }
        Ok(Self { mu0, sigma0, mu1, sigma1 })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// `m_t = (1 - t) mu0 + t mu1`.
    pub fn mean_at(&self, t: f64) -> Vec<f64> {
        self.mu0
            .iter()
            .zip(&self.mu1)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect()
    }

    /// Per-coordinate variance of `I_t`.
    pub fn var_at(&self, t: f64) -> f64 {
        (1.0 - t).powi(2) * self.sigma0.powi(2) + t.powi(2) * self.sigma1.powi(2)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "expected [rows, {}], got {:?}",
                self.dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Exact flow of the marginal velocity from time `from` to time `to`:
    /// `m_to + (s_to / s_from) (x - m_from)`.
    pub fn flow_exact(&self, x: &Tensor, from: f64, to: f64) -> Result<Tensor> {
        self.check(x)?;
        let (m_from, m_to) = (self.mean_at(from), self.mean_at(to));
        let ratio = (self.var_at(to) / self.var_at(from)).sqrt();
        let d = self.dim();
        let out = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| m_to[i % d] + ratio * (v - m_from[i % d]))
            .collect();
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Exact average velocity `(x - X_{s,t}(x)) / (t - s)`, or the
    /// instantaneous velocity when `s == t`.
    pub fn average_velocity_exact(&self, x: &Tensor, s: f64, t: f64) -> Result<Tensor> {
        if s == t {
            return gaussian_velocity(self, x, t);
        }
        let xs = self.flow_exact(x, t, s)?;
        Ok(x.sub(&xs)?.scale(1.0 / (t - s)))
    }

    /// `n` draws from the law of `I_t`.
    pub fn sample_marginal<R: Rng + ?Sized>(&self, n: usize, t: f64, rng: &mut R) -> Result<Tensor> {
        let (m, sd) = (self.mean_at(t), self.var_at(t).sqrt());
        let d = self.dim();
        let data = (0..n * d)
            .map(|i| m[i % d] + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(vec![n, d], data)
    }
}

/// Marginal velocity `E[x1 - x0 | I_t = x]` of the Gaussian task:
/// `(mu1 - mu0) + ((t s1^2 - (1 - t) s0^2) / s_t^2) (x - m_t)`.
pub fn gaussian_velocity(task: &GaussianTask, x: &Tensor, t: f64) -> Result<Tensor> {
    task.check(x)?;
    let m = task.mean_at(t);
    let coef = (t * task.sigma1.powi(2) - (1.0 - t) * task.sigma0.powi(2)) / task.var_at(t);
    let d = task.dim();
    let out = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i % d;
            (task.mu1[j] - task.mu0[j]) + coef * (v - m[j])
        })
        .collect();
    Tensor::new(x.shape().to_vec(), out)
}

/// Classical RK4 solution of `dX/dr = v_r(X)` from `t_from` to `t_to`
/// (either direction) in `n_steps` equal steps.
pub fn integrate_flow<F>(v: F, x: &Tensor, t_from: f64, t_to: f64, n_steps: usize) -> Result<Tensor>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let h = (t_to - t_from) / n_steps as f64;
    let mut state = x.clone();
    for i in 0..n_steps {
        let r = t_from + i as f64 * h;
        let k1 = v(&state, r)?;
        let k2 = v(&state.axpy(0.5 * h, &k1)?, r + 0.5 * h)?;
        let k3 = v(&state.axpy(0.5 * h, &k2)?, r + 0.5 * h)?;
        let k4 = v(&state.axpy(h, &k3)?, r + h)?;
        let incr = k1.add(&k4)?.axpy(2.0, &k2.add(&k3)?)?;
        state = state.axpy(h / 6.0, &incr)?;
        if !state.is_finite() {
            return Err(Error::Numeric(format!("non-finite state at r = {}", r + h)));
        }
    }
    Ok(state)
}

/// `(x - X_{s,t}(x)) / (t - s)` with the flow integrated backward from `t`.
pub fn average_velocity_oracle<F>(v: F, x: &Tensor, s: f64, t: f64, n_steps: usize) -> Result<Tensor>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    if s >= t {
        return Err(Error::InvalidArgument(format!(
            "average velocity needs s < t, got s = {s}, t = {t}; use the velocity on the diagonal"
        )));
    }
    let xs = integrate_flow(v, x, t, s, n_steps)?;
    Ok(x.sub(&xs)?.scale(1.0 / (t - s)))
}

/// A probe point for the identity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub x: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

/// Random probes with `x ~ I_t`, `s < t` separated by at least `0.05`, and
/// both times at least `0.01` away from the ends of `[0, 1]`.
pub fn random_probes<R: Rng + ?Sized>(task: &GaussianTask, n: usize, rng: &mut R) -> Result<Vec<Probe>> {
    (0..n)
        .map(|_| {
            let (s, t) = loop {
                let a: f64 = rng.random_range(0.01..0.99);
                let b: f64 = rng.random_range(0.01..0.99);
                let (s, t) = if a < b { (a, b) } else { (b, a) };
                if t - s >= 0.05 {
                    break (s, t);
                }
            };
            let x = task.sample_marginal(1, t, rng)?.into_vec();
            Ok(Probe { x, s, t })
        })
        .collect()
}

/// Average velocity for any ordering of `s` and `t`, reducing to `v` on the
/// diagonal.
struct Averager<'a, F> {
    v: &'a F,
    n_steps: usize,
}

impl<F> Averager<'_, F>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn u(&self, x: &Tensor, s: f64, t: f64) -> Result<Tensor> {
        if s == t {
            return (self.v)(x, t);
        }
        let xs = integrate_flow(self.v, x, t, s, self.n_steps)?;
        Ok(x.sub(&xs)?.scale(1.0 / (t - s)))
    }

    fn flow(&self, x: &Tensor, from: f64, to: f64) -> Result<Tensor> {
        integrate_flow(self.v, x, from, to, self.n_steps)
    }
}

/// Residual norm of one characterization at every probe for the field `v`.
/// Derivatives of the average velocity are central differences with step
/// `h`.
pub fn identity_residuals<F>(setting: Setting, v: &F, probes: &[Probe], n_steps: usize, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    let avg = Averager { v, n_steps };
    probes
        .iter()
        .map(|p| {
            let x = Tensor::new(vec![1, p.x.len()], p.x.clone())?;
            let (s, t) = (p.s, p.t);
            let u = avg.u(&x, s, t)?;
            let rhs = match setting {
                Setting::Lsd => {
                    let xs = x.axpy(-(t - s), &u)?;
                    let ds = avg.u(&x, s + h, t)?.sub(&avg.u(&x, s - h, t)?)?.scale(0.5 / h);
                    v(&xs, s)?.axpy(t - s, &ds)?
                }
                Setting::Esd => {
                    let vt = v(&x, t)?;
                    let plus = avg.u(&x.axpy(h, &vt)?, s, t + h)?;
                    let minus = avg.u(&x.axpy(-h, &vt)?, s, t - h)?;
                    let total = plus.sub(&minus)?.scale(0.5 / h);
                    vt.axpy(-(t - s), &total)?
                }
                Setting::Ssd => {
                    let r = 0.5 * (s + t);
                    let u_rt = avg.u(&x, r, t)?;
                    let mid = x.axpy(-(t - r), &u_rt)?;
                    u_rt.scale((t - r) / (t - s))
                        .axpy((r - s) / (t - s), &avg.u(&mid, s, r)?)?
                }
            };
            Ok(u.sub(&rhs)?.norm())
        })
        .collect()
}

/// Largest characterization residual over `probes` on the Gaussian task,
/// using the default integrator and difference step.
pub fn check_identity(setting: Setting, task: &GaussianTask, probes: &[Probe]) -> Result<f64> {
    let v = |x: &Tensor, t: f64| gaussian_velocity(task, x, t);
    let res = identity_residuals(setting, &v, probes, DEFAULT_STEPS, DEFAULT_FD_STEP)?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// `|X_{s,t}(x) - X_{s,r}(X_{r,t}(x))|` per probe, with `r` the midpoint.
pub fn semigroup_residuals<F>(v: &F, probes: &[Probe], n_steps: usize) -> Result<Vec<f64>>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    let avg = Averager { v, n_steps };
    probes
        .iter()
        .map(|p| {
            let x = Tensor::new(vec![1, p.x.len()], p.x.clone())?;
            let r = 0.5 * (p.s + p.t);
            let direct = avg.flow(&x, p.t, p.s)?;
            let composed = avg.flow(&avg.flow(&x, p.t, r)?, r, p.s)?;
            Ok(direct.sub(&composed)?.norm())
        })
        .collect()
}

/// CSV with header `setting,probe,residual`.
pub fn residuals_csv(label: &str, residuals: &[f64]) -> String {
    let mut out = String::from("setting,probe,residual\n");
    for (i, r) in residuals.iter().enumerate() {
        writeln!(out, "{label},{i},{r:e}").expect("write to string");
    }
    out
}

/// The Gaussian task's true average velocity exposed as a model: RK4 flows
/// for `s < t`, the marginal velocity on the diagonal, and central
/// differences for directional derivatives. Conditions are ignored.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    pub task: GaussianTask,
    pub n_steps: usize,
    pub fd_step: f64,
}

impl GaussianOracle {
    pub fn new(task: GaussianTask) -> Self {
        Self {
            task,
            n_steps: DEFAULT_STEPS,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    fn row_u(&self, x: &Tensor, s: f64, t: f64) -> Result<Tensor> {
        let v = |x: &Tensor, t: f64| gaussian_velocity(&self.task, x, t);
        Averager {
            v: &v,
            n_steps: self.n_steps,
        }
        .u(x, s, t)
    }

    fn per_row(&self, x: &Tensor, s: &[f64], t: &[f64], f: impl Fn(&Tensor, f64, f64) -> Result<Tensor>) -> Result<Tensor> {
        self.task.check(x)?;
        if s.len() != x.rows() || t.len() != x.rows() {
            return Err(Error::Shape("one time pair per row required".into()));
        }
        let d = self.task.dim();
        let mut out = Vec::with_capacity(x.numel());
        for i in 0..x.rows() {
            let row = Tensor::new(vec![1, d], x.row(i).to_vec())?;
            out.extend_from_slice(f(&row, s[i], t[i])?.data());
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

impl AverageVelocity for GaussianOracle {
    fn state_dim(&self) -> usize {
        self.task.dim()
    }

    fn average_velocity(&self, x: &Tensor, s: &[f64], t: &[f64], _cond: &[Condition]) -> Result<Tensor> {
        self.per_row(x, s, t, |row, s, t| self.row_u(row, s, t))
    }

    fn average_velocity_jvp(
        &self,
        x: &Tensor,
        s: &[f64],
        t: &[f64],
        cond: &[Condition],
        dx: Option<&Tensor>,
        ds: f64,
        dt: f64,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.fd_step;
        let value = self.average_velocity(x, s, t, cond)?;
        let shift = |sign: f64| -> Result<Tensor> {
            let xs = match dx {
                Some(d) => x.axpy(sign * h, d)?,
                None => x.clone(),
            };
            let ss: Vec<f64> = s.iter().map(|v| v + sign * h * ds).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + sign * h * dt).collect();
            self.per_row(&xs, &ss, &ts, |row, s, t| self.row_u(row, s, t))
        };
        let deriv = shift(1.0)?.sub(&shift(-1.0)?)?.scale(0.5 / h);
        Ok((value, deriv))
    }
}
