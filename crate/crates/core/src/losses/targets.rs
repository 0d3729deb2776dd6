//! Regression targets for flow matching and the three self-distillation
//! characterizations, plain and guided. Targets are plain tensors computed
//! without recording, so they carry no gradient history.

use std::cell::Cell;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::interpolant::{interpolate_rows, target_velocity_rows, InterpolantSchedule};
use crate::nets::{AverageVelocity, Condition};
use crate::schedule::Setting;

thread_local! {
    static SD_TARGET_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of self-distillation targets built on this thread so far.
pub fn sd_target_calls() -> usize {
    SD_TARGET_CALLS.with(Cell::get)
}

fn count_sd_call() {
    SD_TARGET_CALLS.with(|c| c.set(c.get() + 1));
}

/// Which velocity stands in for the marginal field in the LSD and ESD
/// targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VelocitySource {
    /// The per-sample interpolant velocity: `I'_s` for LSD, `I'_t` for ESD.
    /// For the straight interpolant both equal `x1 - x0`.
    #[default]
    Conditional,
    /// The model's own diagonal: `u_{s,s}(X_{s,t}(I_t))` for LSD and
    /// `u_{t,t}(I_t)` for ESD. Exact for the true flow map.
    Marginal,
}

/// A batch of training rows with per-row times and conditions.
#[derive(Clone, Copy, Debug)]
pub struct PairRows<'a> {
    pub x0: &'a Tensor,
    pub x1: &'a Tensor,
    pub s: &'a [f64],
    pub t: &'a [f64],
    pub cond: &'a [Condition],
}

impl PairRows<'_> {
    fn rows(&self) -> usize {
        self.s.len()
    }

    fn check(&self) -> Result<()> {
        self.x0.expect_same_shape(self.x1)?;
        let n = self.x0.shape().first().copied().unwrap_or(0);
        if self.s.len() != n || self.t.len() != n || self.cond.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows with {} / {} times and {} conditions",
                self.s.len(),
                self.t.len(),
                self.cond.len()
            )));
        }
        Ok(())
    }

    fn check_sd(&self) -> Result<()> {
        self.check()?;
        for (&s, &t) in self.s.iter().zip(self.t) {
            if s >= t {
                return Err(Error::InvalidArgument(format!(
                    "self-distillation needs s < t, got s = {s}, t = {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn interpolant(&self, sched: &InterpolantSchedule) -> Result<Tensor> {
        interpolate_rows(self.x0, self.x1, self.t, sched)
    }

    fn gaps(&self) -> Vec<f64> {
        self.s.iter().zip(self.t).map(|(s, t)| t - s).collect()
    }
}

/// `w * a + (1 - w) * b` row by row. Rows with `w == 1` return `a` exactly.
fn blend_rows(a: &Tensor, b: &Tensor, w: &[f64]) -> Result<Tensor> {
    let one_minus: Vec<f64> = w.iter().map(|w| 1.0 - w).collect();
    a.scale_rows(w)?.add(&b.scale_rows(&one_minus)?)
}

/// Flow-matching target `I'_t`.
pub fn fm_target(rows: &PairRows, sched: &InterpolantSchedule) -> Result<Tensor> {
    rows.check()?;
    target_velocity_rows(rows.x0, rows.x1, rows.t, sched)
}

/// Guided flow-matching target `w I'_t + (1 - w) u_{t,t}(I_t | neg)`. The
/// negative branch is skipped when every row has `w == 1`.
pub fn cfg_fm_target<M: AverageVelocity + ?Sized>(
    model: &M,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    w: &[f64],
) -> Result<Tensor> {
    let v = fm_target(rows, sched)?;
    if w.len() != rows.rows() {
        return Err(Error::Shape("one guidance scale per row required".into()));
    }
    if w.iter().all(|&w| w == 1.0) {
        return Ok(v);
    }
    let it = rows.interpolant(sched)?;
    let neg = vec![Condition::Negative; rows.rows()];
    let u_neg = model.average_velocity(&it, rows.t, rows.t, &neg)?;
    blend_rows(&v, &u_neg, w)
}

/// The LSD stand-in velocity at time `s` for condition `cond`.
fn lsd_velocity<M: AverageVelocity + ?Sized>(
    model: &M,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    source: VelocitySource,
    it: &Tensor,
    cond: &[Condition],
) -> Result<Tensor> {
    match source {
        VelocitySource::Conditional => target_velocity_rows(rows.x0, rows.x1, rows.s, sched),
        VelocitySource::Marginal => {
            let u = model.average_velocity(it, rows.s, rows.t, cond)?;
            let xs = it.sub(&u.scale_rows(&rows.gaps())?)?;
            model.average_velocity(&xs, rows.s, rows.s, cond)
        }
    }
}

fn esd_velocity<M: AverageVelocity + ?Sized>(
    model: &M,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    source: VelocitySource,
    it: &Tensor,
    cond: &[Condition],
) -> Result<Tensor> {
    match source {
        VelocitySource::Conditional => target_velocity_rows(rows.x0, rows.x1, rows.t, sched),
        VelocitySource::Marginal => model.average_velocity(it, rows.t, rows.t, cond),
    }
}

/// `v + (t - s) d_s u_{s,t}(I_t | c)`.
fn lsd_from_velocity<M: AverageVelocity + ?Sized>(model: &M, rows: &PairRows, it: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, ds) = model.average_velocity_jvp(it, rows.s, rows.t, rows.cond, None, 1.0, 0.0)?;
    v.add(&ds.scale_rows(&rows.gaps())?)
}

/// `v - (t - s) (grad u . v + d_t u)` at `(I_t, s, t | c)`.
fn esd_from_velocity<M: AverageVelocity + ?Sized>(model: &M, rows: &PairRows, it: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, total) = model.average_velocity_jvp(it, rows.s, rows.t, rows.cond, Some(v), 0.0, 1.0)?;
    v.sub(&total.scale_rows(&rows.gaps())?)
}

/// `1/2 u_{r,t}(I_t) + 1/2 u_{s,r}(I_t - (t - s)/2 u_{r,t}(I_t))`, `r` the
/// midpoint.
fn ssd_target<M: AverageVelocity + ?Sized>(model: &M, rows: &PairRows, it: &Tensor) -> Result<Tensor> {
    let r: Vec<f64> = rows.s.iter().zip(rows.t).map(|(s, t)| 0.5 * (s + t)).collect();
    let half_gaps: Vec<f64> = rows.gaps().iter().map(|g| 0.5 * g).collect();
    let u_rt = model.average_velocity(it, &r, rows.t, rows.cond)?;
    let mid = it.sub(&u_rt.scale_rows(&half_gaps)?)?;
    let u_sr = model.average_velocity(&mid, rows.s, &r, rows.cond)?;
    Ok(u_rt.scale(0.5).add(&u_sr.scale(0.5))?)
}

/// Self-distillation target for `setting`; requires `s < t` on every row.
pub fn sd_target<M: AverageVelocity + ?Sized>(
    setting: Setting,
    model: &M,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    source: VelocitySource,
) -> Result<Tensor> {
    rows.check_sd()?;
    count_sd_call();
    let it = rows.interpolant(sched)?;
    match setting {
        Setting::Lsd => {
            let v = lsd_velocity(model, rows, sched, source, &it, rows.cond)?;
            lsd_from_velocity(model, rows, &it, &v)
        }
        Setting::Esd => {
            let v = esd_velocity(model, rows, sched, source, &it, rows.cond)?;
            esd_from_velocity(model, rows, &it, &v)
        }
        Setting::Ssd => ssd_target(model, rows, &it),
    }
}

/// Guided self-distillation target. The negative branch always uses
/// [`Condition::Negative`]; `rows.cond` is the condition being trained.
/// Rows with `w == 1` reduce exactly to [`sd_target`].
pub fn cfg_sd_target<M: AverageVelocity + ?Sized>(
    setting: Setting,
    model: &M,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    source: VelocitySource,
    w: &[f64],
) -> Result<Tensor> {
    rows.check_sd()?;
    if w.len() != rows.rows() {
        return Err(Error::Shape("one guidance scale per row required".into()));
    }
    count_sd_call();
    let it = rows.interpolant(sched)?;
    let neg = vec![Condition::Negative; rows.rows()];
    match setting {
        Setting::Lsd => {
            let v = lsd_velocity(model, rows, sched, source, &it, rows.cond)?;
            let u = model.average_velocity(&it, rows.s, rows.t, &neg)?;
            let xs = it.sub(&u.scale_rows(&rows.gaps())?)?;
            let v_neg = model.average_velocity(&xs, rows.s, rows.s, &neg)?;
            let v_cfg = blend_rows(&v, &v_neg, w)?;
            lsd_from_velocity(model, rows, &it, &v_cfg)
        }
        Setting::Esd => {
            let v = esd_velocity(model, rows, sched, source, &it, rows.cond)?;
            let v_neg = model.average_velocity(&it, rows.t, rows.t, &neg)?;
            let v_cfg = blend_rows(&v, &v_neg, w)?;
            esd_from_velocity(model, rows, &it, &v_cfg)
        }
        Setting::Ssd => ssd_target(model, rows, &it),
    }
}
