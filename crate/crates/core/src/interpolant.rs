//! Interpolant paths `I_t = alpha_t x0 + beta_t x1`, their velocities and
//! endpoint predictions.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

type Curve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Standard,
    Trigonometric,
    Custom,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Standard => "standard",
            ScheduleKind::Trigonometric => "trigonometric",
            ScheduleKind::Custom => "custom",
        }
    }
}

/// The coefficient pair `(alpha, beta)` with analytic derivatives.
#[derive(Clone)]
pub struct InterpolantSchedule {
    kind: ScheduleKind,
    alpha: Curve,
    beta: Curve,
    alpha_dot: Curve,
    beta_dot: Curve,
}

impl fmt::Debug for InterpolantSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InterpolantSchedule")
            .field("kind", &self.kind)
            .finish()
    }
}

impl Default for InterpolantSchedule {
    fn default() -> Self {
        Self::standard()
    }
}

impl InterpolantSchedule {
    /// `alpha_t = 1 - t`, `beta_t = t`.
    pub fn standard() -> Self {
        Self {
            kind: ScheduleKind::Standard,
            alpha: Arc::new(|t| 1.0 - t),
            beta: Arc::new(|t| t),
            alpha_dot: Arc::new(|_| -1.0),
            beta_dot: Arc::new(|_| 1.0),
        }
    }

    /// `alpha_t = cos(pi t / 2)`, `beta_t = sin(pi t / 2)`.
    pub fn trigonometric() -> Self {
        Self {
            kind: ScheduleKind::Trigonometric,
            alpha: Arc::new(|t| (FRAC_PI_2 * t).cos()),
            beta: Arc::new(|t| (FRAC_PI_2 * t).sin()),
            alpha_dot: Arc::new(|t| -FRAC_PI_2 * (FRAC_PI_2 * t).sin()),
            beta_dot: Arc::new(|t| FRAC_PI_2 * (FRAC_PI_2 * t).cos()),
        }
    }

    /// A user-supplied schedule. The boundary values are checked to `1e-12`.
    pub fn custom<A, B, AD, BD>(alpha: A, beta: B, alpha_dot: AD, beta_dot: BD) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        AD: Fn(f64) -> f64 + Send + Sync + 'static,
        BD: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let ok = |v: f64, want: f64| (v - want).abs() <= 1e-12;
        if !(ok(alpha(0.0), 1.0) && ok(beta(1.0), 1.0) && ok(alpha(1.0), 0.0) && ok(beta(0.0), 0.0)) {
            return Err(Error::InvalidArgument(
                "schedule must satisfy alpha_0 = beta_1 = 1 and alpha_1 = beta_0 = 0".into(),
            ));
        }
        Ok(Self {
            kind: ScheduleKind::Custom,
            alpha: Arc::new(alpha),
            beta: Arc::new(beta),
            alpha_dot: Arc::new(alpha_dot),
            beta_dot: Arc::new(beta_dot),
        })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard()),
            "trigonometric" => Ok(Self::trigonometric()),
            other => Err(Error::Config(format!("unknown schedule '{other}'"))),
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn is_standard(&self) -> bool {
        self.kind == ScheduleKind::Standard
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (self.alpha)(t)
    }

    pub fn beta(&self, t: f64) -> f64 {
        (self.beta)(t)
    }

    pub fn alpha_dot(&self, t: f64) -> f64 {
        (self.alpha_dot)(t)
    }

    pub fn beta_dot(&self, t: f64) -> f64 {
        (self.beta_dot)(t)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Row-wise `a_i * x0_i + b_i * x1_i` for per-row coefficients.
fn combine_rows(x0: &Tensor, x1: &Tensor, coef: impl Fn(usize) -> (f64, f64)) -> Result<Tensor> {
    x0.expect_same_shape(x1)?;
    let rows = x0.shape().first().copied().unwrap_or(1);
    let width = x0.numel() / rows;
    let mut out = Vec::with_capacity(x0.numel());
    for i in 0..rows {
        let (a, b) = coef(i);
        let r0 = &x0.data()[i * width..(i + 1) * width];
        let r1 = &x1.data()[i * width..(i + 1) * width];
        out.extend(r0.iter().zip(r1).map(|(p, q)| a * p + b * q));
    }
    Tensor::new(x0.shape().to_vec(), out)
}

fn check_rows(x: &Tensor, times: &[f64]) -> Result<()> {
    let rows = x.shape().first().copied().unwrap_or(1);
    if rows != times.len() {
        return Err(Error::Shape(format!(
            "{} times for {rows} rows",
            times.len()
        )));
    }
    times.iter().try_for_each(|&t| check_time(t))
}

/// `alpha_t x0 + beta_t x1`.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64, sched: &InterpolantSchedule) -> Result<Tensor> {
    check_time(t)?;
    let (a, b) = (sched.alpha(t), sched.beta(t));
    combine_rows(x0, x1, |_| (a, b))
}

/// Batched [`interpolate`] with one time per leading row.
pub fn interpolate_rows(
    x0: &Tensor,
    x1: &Tensor,
    t: &[f64],
    sched: &InterpolantSchedule,
) -> Result<Tensor> {
    check_rows(x0, t)?;
    combine_rows(x0, x1, |i| (sched.alpha(t[i]), sched.beta(t[i])))
}

/// Conditional velocity `alpha'_t x0 + beta'_t x1`.
pub fn target_velocity(x0: &Tensor, x1: &Tensor, t: f64, sched: &InterpolantSchedule) -> Result<Tensor> {
    check_time(t)?;
    let (a, b) = (sched.alpha_dot(t), sched.beta_dot(t));
    combine_rows(x0, x1, |_| (a, b))
}

/// Batched [`target_velocity`].
pub fn target_velocity_rows(
    x0: &Tensor,
    x1: &Tensor,
    t: &[f64],
    sched: &InterpolantSchedule,
) -> Result<Tensor> {
    check_rows(x0, t)?;
    combine_rows(x0, x1, |i| (sched.alpha_dot(t[i]), sched.beta_dot(t[i])))
}

/// Straight-line endpoint estimate `x_t - t v`, defined for the standard
/// schedule only.
pub fn x0_predict_fm(x_t: &Tensor, t: f64, v: &Tensor, sched: &InterpolantSchedule) -> Result<Tensor> {
    if !sched.is_standard() {
        return Err(Error::InvalidArgument(format!(
            "velocity-based endpoint prediction needs the standard schedule, got {}",
            sched.kind().name()
        )));
    }
    x_t.axpy(-t, v)
}

/// Endpoint from the average velocity over `[0, t]`: `x_t - t u_{0,t}(x_t)`.
pub fn x0_predict_flowmap(x_t: &Tensor, t: f64, u_0t: &Tensor) -> Result<Tensor> {
    x_t.axpy(-t, u_0t)
}
