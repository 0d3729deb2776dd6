//! Regression losses and the weighted flow-matching/self-distillation
//! objective.

use super::guidance::GuidanceContext;
use super::perceptual::{perceptual_weight, surrogate_rows, PoolLayout};
use super::targets::{cfg_fm_target, cfg_sd_target, fm_target, sd_target, PairRows, VelocitySource};
use crate::autodiff::{Backend, Tensor};
use crate::error::{Error, Result};
use crate::interpolant::InterpolantSchedule;
use crate::nets::{Condition, FlowMapModel, WeightNet};
use crate::schedule::{Setting, TimestepPair};

/// `[rows, 1]` squared errors of `u_{s,t}(x | c)` against a fixed target,
/// together with `u`.
fn regress_rows<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    x: &Tensor,
    s: &[f64],
    t: &[f64],
    cond: &[Condition],
    target: &Tensor,
    lora_scale: f64,
) -> Result<(B::Value, B::Value)> {
    let xv = b.constant(x.clone());
    let sv = b.constant(Tensor::column(s)?);
    let tv = b.constant(Tensor::column(t)?);
    let u = model.forward(b, &xv, &sv, &tv, &Condition::one_hot(cond)?, lora_scale)?;
    let target = b.constant(target.clone());
    let diff = b.sub(&u, &target)?;
    let sq = b.square(&diff);
    let rows = b.sum_axis(&sq, 1)?;
    Ok((u, rows))
}

fn row_mean<B: Backend>(b: &mut B, v: &B::Value) -> B::Value {
    let n = b.shape(v)[0].max(1);
    let total = b.sum(v);
    b.scale(&total, 1.0 / n as f64)
}

/// `||u_{t,t}(I_t | c) - I'_t||^2` averaged over rows; `rows.s` is ignored.
pub fn fm_loss<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    rows: &PairRows,
    sched: &InterpolantSchedule,
) -> Result<B::Value> {
    let target = fm_target(rows, sched)?;
    let it = rows.interpolant(sched)?;
    let (_, per_row) = regress_rows(b, model, &it, rows.t, rows.t, rows.cond, &target, 1.0)?;
    Ok(row_mean(b, &per_row))
}

/// `||u_{s,t}(I_t | c) - sg(target)||^2` averaged over rows.
pub fn sd_loss<B: Backend>(
    b: &mut B,
    setting: Setting,
    model: &FlowMapModel,
    rows: &PairRows,
    sched: &InterpolantSchedule,
    source: VelocitySource,
) -> Result<B::Value> {
    let target = sd_target(setting, model, rows, sched, source)?;
    let it = rows.interpolant(sched)?;
    let (_, per_row) = regress_rows(b, model, &it, rows.s, rows.t, rows.cond, &target, 1.0)?;
    Ok(row_mean(b, &per_row))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTag {
    Fm,
    Sd(Setting),
}

impl LossTag {
    pub fn name(self) -> &'static str {
        match self {
            LossTag::Fm => "FM",
            LossTag::Sd(s) => s.name(),
        }
    }
}

/// Loss terms of a single row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowLoss {
    pub tag: LossTag,
    pub guided: bool,
    pub main: f64,
    pub perceptual: f64,
    pub lambda: f64,
    /// `exp(-lambda) (main + perceptual) + lambda`.
    pub weighted: f64,
}

/// Batch means of the loss terms plus the per-row detail.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub main: f64,
    pub perceptual: f64,
    pub weighted_total: f64,
    pub lambda_mean: f64,
    pub rows: Vec<RowLoss>,
}

#[derive(Clone, Debug)]
pub struct LossOptions {
    pub setting: Setting,
    pub source: VelocitySource,
    pub sched: InterpolantSchedule,
    pub pool: PoolLayout,
    /// Multiplies the perceptual term; zero disables it.
    pub perceptual_scale: f64,
    /// Adapter scale used while training.
    pub lora_scale: f64,
}

impl LossOptions {
    pub fn new(setting: Setting) -> Self {
        Self {
            setting,
            source: VelocitySource::Conditional,
            sched: InterpolantSchedule::standard(),
            pool: PoolLayout::Pairs,
            perceptual_scale: 1.0,
            lora_scale: 1.0,
        }
    }
}

/// One training batch. Rows without guidance are trained on `cond`; guided
/// rows use their context, and dropped rows swap `x0` for `x0_neg` when
/// provided.
#[derive(Clone, Copy, Debug)]
pub struct TrainBatch<'a> {
    pub x0: &'a Tensor,
    pub x1: &'a Tensor,
    pub x0_neg: Option<&'a Tensor>,
    pub pairs: &'a [TimestepPair],
    pub guidance: Option<&'a [GuidanceContext]>,
    pub cond: Condition,
}

impl TrainBatch<'_> {
    fn check(&self) -> Result<usize> {
        self.x0.expect_same_shape(self.x1)?;
        if let Some(neg) = self.x0_neg {
            self.x0.expect_same_shape(neg)?;
        }
        let n = self.x0.rows();
        if self.pairs.len() != n || self.guidance.is_some_and(|g| g.len() != n) {
            return Err(Error::Shape(format!("batch of {n} rows with mismatched pairs or guidance")));
        }
        Ok(n)
    }

    fn conditions(&self) -> Vec<Condition> {
        match self.guidance {
            Some(g) => g.iter().map(GuidanceContext::cond).collect(),
            None => vec![self.cond; self.pairs.len()],
        }
    }

    /// `x0` with dropped rows replaced by their negative targets.
    fn effective_x0(&self) -> Tensor {
        let (Some(neg), Some(g)) = (self.x0_neg, self.guidance) else {
            return self.x0.clone();
        };
        let d = self.x0.cols();
        let mut data = self.x0.data().to_vec();
        for (i, ctx) in g.iter().enumerate() {
            if ctx.is_dropped() {
                data[i * d..(i + 1) * d].copy_from_slice(&neg.data()[i * d..(i + 1) * d]);
            }
        }
        Tensor::new(self.x0.shape().to_vec(), data).expect("same shape as x0")
    }
}

fn scatter_rows(dst: &mut [f64], idx: &[usize], src: &Tensor) {
    let d = src.cols();
    for (k, &i) in idx.iter().enumerate() {
        dst[i * d..(i + 1) * d].copy_from_slice(&src.data()[k * d..(k + 1) * d]);
    }
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Builds every row's regression target with one group per loss kind.
fn batch_targets(
    model: &FlowMapModel,
    batch: &TrainBatch,
    x0: &Tensor,
    s: &[f64],
    t: &[f64],
    cond: &[Condition],
    opts: &LossOptions,
) -> Result<Tensor> {
    let (fm_idx, sd_idx): (Vec<usize>, Vec<usize>) = (0..s.len()).partition(|&i| batch.pairs[i].is_fm());
    let w: Option<Vec<f64>> = batch.guidance.map(|g| g.iter().map(GuidanceContext::w).collect());
    let model = model.with_lora_scale(opts.lora_scale);
    let model = &model;
    let mut out = vec![0.0; x0.numel()];
    for (idx, is_fm) in [(&fm_idx, true), (&sd_idx, false)] {
        if idx.is_empty() {
            continue;
        }
        let (gx0, gx1) = (x0.select_rows(idx), batch.x1.select_rows(idx));
        let (gs, gt, gc) = (pick(s, idx), pick(t, idx), pick(cond, idx));
        let rows = PairRows {
            x0: &gx0,
            x1: &gx1,
            s: &gs,
            t: &gt,
            cond: &gc,
        };
        let target = match (&w, is_fm) {
            (None, true) => fm_target(&rows, &opts.sched)?,
            (Some(w), true) => cfg_fm_target(model, &rows, &opts.sched, &pick(w, idx))?,
            (None, false) => sd_target(opts.setting, model, &rows, &opts.sched, opts.source)?,
            (Some(w), false) => cfg_sd_target(opts.setting, model, &rows, &opts.sched, opts.source, &pick(w, idx))?,
        };
        scatter_rows(&mut out, idx, &target);
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// The weighted objective `exp(-lambda) (main + perceptual) + lambda`,
/// averaged over rows. Rows with `s == t` regress onto the flow-matching
/// target, the rest onto the self-distillation target of `opts.setting`;
/// guided batches use the guided targets. Gradients reach the model and
/// the weight net.
pub fn combined_loss<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    wn: &WeightNet,
    batch: &TrainBatch,
    opts: &LossOptions,
) -> Result<(B::Value, LossBreakdown)> {
    let n = batch.check()?;
    let s: Vec<f64> = batch.pairs.iter().map(TimestepPair::s).collect();
    let t: Vec<f64> = batch.pairs.iter().map(TimestepPair::t).collect();
    let cond = batch.conditions();
    let x0 = batch.effective_x0();
    let target = batch_targets(model, batch, &x0, &s, &t, &cond, opts)?;
    let it = crate::interpolant::interpolate_rows(&x0, batch.x1, &t, &opts.sched)?;

    let (u, main) = regress_rows(b, model, &it, &s, &t, &cond, &target, opts.lora_scale)?;
    let sv = b.constant(Tensor::column(&s)?);
    let tv = b.constant(Tensor::column(&t)?);
    let reg = if opts.perceptual_scale != 0.0 {
        let tu = b.mul_broadcast(&u, &tv)?;
        let itv = b.constant(it.clone());
        let x0_hat = b.sub(&itv, &tu)?;
        let x0v = b.constant(x0.clone());
        let diff = b.sub(&x0_hat, &x0v)?;
        let r = surrogate_rows(b, &diff, &opts.pool.matrix(x0.cols())?)?;
        let weights: Vec<f64> = s.iter().map(|&s| opts.perceptual_scale * perceptual_weight(s)).collect();
        let wv = b.constant(Tensor::column(&weights)?);
        Some(b.mul(&r, &wv)?)
    } else {
        None
    };
    let lambda = wn.forward(b, &sv, &tv)?;
    let raw = match &reg {
        Some(p) => b.add(&main, p)?,
        None => main.clone(),
    };
    let neg_lambda = b.scale(&lambda, -1.0);
    let decay = b.exp(&neg_lambda);
    let scaled = b.mul(&decay, &raw)?;
    let weighted = b.add(&scaled, &lambda)?;
    let total = row_mean(b, &weighted);

    let main_v = b.value(&main).into_vec();
    let perc_v = match &reg {
        Some(p) => b.value(p).into_vec(),
        None => vec![0.0; n],
    };
    let lambda_v = b.value(&lambda).into_vec();
    let weighted_v = b.value(&weighted).into_vec();
    let rows: Vec<RowLoss> = (0..n)
        .map(|i| RowLoss {
            tag: if batch.pairs[i].is_fm() {
                LossTag::Fm
            } else {
                LossTag::Sd(opts.setting)
            },
            guided: batch.guidance.is_some(),
            main: main_v[i],
            perceptual: perc_v[i],
            lambda: lambda_v[i],
            weighted: weighted_v[i],
        })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n.max(1) as f64;
    let breakdown = LossBreakdown {
        main: mean(&main_v),
        perceptual: mean(&perc_v),
        weighted_total: b.value(&total).item()?,
        lambda_mean: mean(&lambda_v),
        rows,
    };
    if !breakdown.weighted_total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", breakdown.weighted_total)));
    }
    Ok((total, breakdown))
}
