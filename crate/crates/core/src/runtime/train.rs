//! The four-phase training loop and checkpoint persistence.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Config, TaskKind};
use super::metrics::MetricsRow;
use super::optim::AdamW;
use crate::autodiff::{Graph, Trainable, Var};
use crate::data::{gaussian_pair, gen_sr_pairs, gen_toy2d, PairBatch};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, discriminator_loss, generator_loss, GuidanceContext, LossBreakdown, LossOptions, PoolLayout,
    TrainBatch, ADAPTER_PREFIX, DISC_PREFIX,
};
use crate::nets::{select, Checkpoint, Condition, Discriminator, FlowMapModel, Params, WeightNet};
use crate::oracle::GaussianTask;
use crate::schedule::{sample_fm_pair, sample_pair, TimestepPair};

const BASE_PREFIXES: [&str; 2] = ["model.", "weightnet."];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Fm,
    FmSd,
    Cfg,
    DPretrain,
    Adv,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Fm => "fm",
            Phase::FmSd => "fmsd",
            Phase::Cfg => "cfg",
            Phase::DPretrain => "d_pretrain",
            Phase::Adv => "adv",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Draws training pairs for the configured task.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    config: Config,
    gaussian: Option<GaussianTask>,
}

impl TaskSampler {
    pub fn new(config: &Config) -> Result<Self> {
        let gaussian = match config.task.kind {
            TaskKind::Gaussian => Some(config.task.gaussian()?),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            gaussian,
        })
    }

    pub fn batch<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PairBatch> {
        let t = &self.config.task;
        match t.kind {
            TaskKind::Gaussian => gaussian_pair(n, self.gaussian.as_ref().expect("gaussian task"), rng),
            TaskKind::Toy2d(kind) => gen_toy2d(n, kind, &t.toy, rng),
            TaskKind::Texture => gen_sr_pairs(n, t.size, &t.scale, &self.config.degrade, rng),
        }
    }

    pub fn pool(&self) -> PoolLayout {
        match self.config.task.kind {
            TaskKind::Texture => PoolLayout::Image {
                height: self.config.task.size,
                width: self.config.task.size,
            },
            _ => PoolLayout::Pairs,
        }
    }
}

/// Everything a checkpoint holds.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: Config,
    pub model: FlowMapModel,
    pub weightnet: WeightNet,
    pub disc: Option<Discriminator>,
    /// Last phase that ran, or `init`.
    pub phase: String,
}

impl TrainedModel {
    pub fn init<R: rand::Rng + ?Sized>(config: &Config, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let model = FlowMapModel::new(config.model.flowmap(config.task.state_dim()), rng)?;
        let weightnet = WeightNet::new(config.model.time_embed_dim, rng)?;
        Ok(Self {
            config: config.clone(),
            model,
            weightnet,
            disc: None,
            phase: "init".into(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let meta = [
            ("config", self.config.to_ini()),
            ("phase", self.phase.clone()),
            ("schedule", self.config.plan.schedule.clone()),
            ("state_dim", self.model.config().state_dim.to_string()),
            ("lora_rank", self.model.lora_rank().unwrap_or(0).to_string()),
            ("discriminator", self.disc.is_some().to_string()),
        ];
        for (k, v) in meta {
            ck.metadata.insert(k.to_string(), v);
        }
        ck.tensors.extend(self.model.params().clone());
        ck.tensors.extend(self.weightnet.params().clone());
        if let Some(d) = &self.disc {
            ck.tensors.extend(d.params().clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = Config::parse(ck.meta("config")?)?;
        let dim: usize = ck
            .meta("state_dim")?
            .parse()
            .map_err(|_| Error::Format("bad state_dim".into()))?;
        if dim != config.task.state_dim() {
            return Err(Error::Format("state_dim disagrees with the stored configuration".into()));
        }
        let model = FlowMapModel::from_params(config.model.flowmap(dim), select(&ck.tensors, "model."))?;
        let weightnet = WeightNet::from_params(config.model.time_embed_dim, select(&ck.tensors, "weightnet."))?;
        let disc = match ck.meta("discriminator")? {
            "true" => Some(Discriminator::from_params(dim, select(&ck.tensors, DISC_PREFIX))?),
            _ => None,
        };
        Ok(Self {
            config,
            model,
            weightnet,
            disc,
            phase: ck.meta("phase")?.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    /// Rows that received a guidance context.
    pub guided_rows: usize,
    /// Guided rows whose condition was dropped.
    pub dropped_rows: usize,
}

impl TrainReport {
    pub fn drop_rate(&self) -> f64 {
        if self.guided_rows == 0 {
            0.0
        } else {
            self.dropped_rows as f64 / self.guided_rows as f64
        }
    }
}

fn check_grads(grads: &Params, phase: Phase, step: usize) -> Result<()> {
    match grads.iter().find(|(_, g)| !g.is_finite()) {
        Some((name, _)) => Err(Error::Numeric(format!(
            "non-finite gradient for '{name}' at step {step} ({phase})"
        ))),
        None => Ok(()),
    }
}

fn numeric_context(e: Error, phase: Phase, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} at step {step} ({phase})")),
        other => other,
    }
}

fn loss_row(step: usize, phase: Phase, br: &LossBreakdown) -> MetricsRow {
    MetricsRow {
        step,
        phase: phase.name().into(),
        loss_main: Some(br.main),
        loss_perc: Some(br.perceptual),
        loss_weighted: Some(br.weighted_total),
        lambda_mean: Some(br.lambda_mean),
        ..Default::default()
    }
}

/// Runs the configured phases from a fresh seeded initialization. Each
/// metrics row is handed to `sink` as soon as it is produced.
pub fn train(config: &Config, sink: &mut dyn FnMut(&MetricsRow) -> Result<()>) -> Result<(TrainedModel, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainedModel::init(config, &mut rng)?;
    let report = Trainer::new(&mut state)?.run(&mut rng, sink)?;
    Ok((state, report))
}

struct Trainer<'a> {
    state: &'a mut TrainedModel,
    sampler: TaskSampler,
    opts: LossOptions,
    report: TrainReport,
    step: usize,
}

impl<'a> Trainer<'a> {
    fn new(state: &'a mut TrainedModel) -> Result<Self> {
        let config = state.config.clone();
        let sampler = TaskSampler::new(&config)?;
        let mut opts = LossOptions::new(config.plan.setting);
        opts.source = config.plan.source;
        opts.sched = config.plan.interpolant()?;
        opts.pool = sampler.pool();
        opts.perceptual_scale = config.perceptual_scale();
        Ok(Self {
            state,
            sampler,
            opts,
            report: TrainReport::default(),
            step: 0,
        })
    }

    fn emit(&mut self, row: MetricsRow, sink: &mut dyn FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        sink(&row)?;
        self.report.rows.push(row);
        self.step += 1;
        Ok(())
    }

    fn run(mut self, rng: &mut ChaCha8Rng, sink: &mut dyn FnMut(&MetricsRow) -> Result<()>) -> Result<TrainReport> {
        let plan = self.state.config.plan.clone();
        let mut opt_model = AdamW::new(plan.lr_model);
        let mut opt_wn = AdamW::new(plan.lr_weightnet);
        for (phase, steps) in [(Phase::Fm, plan.fm_steps), (Phase::FmSd, plan.fmsd_steps), (Phase::Cfg, plan.cfg_steps)] {
            for _ in 0..steps {
                let row = self.base_step(phase, rng, &mut opt_model, &mut opt_wn)?;
                self.emit(row, sink)?;
            }
            if steps > 0 {
                self.state.phase = phase.name().into();
            }
        }
        if plan.adv_steps > 0 {
            self.adversarial(rng, sink)?;
        }
        Ok(self.report)
    }

    fn draw_pairs(&self, phase: Phase, n: usize, rng: &mut ChaCha8Rng) -> Vec<TimestepPair> {
        let plan = &self.state.config.plan;
        (0..n)
            .map(|_| match phase {
                Phase::Fm => sample_fm_pair(&plan.grid, rng),
                _ => sample_pair(plan.setting, &plan.grid, rng),
            })
            .collect()
    }

    fn draw_guidance(&mut self, guided: bool, n: usize, rng: &mut ChaCha8Rng) -> Result<Option<Vec<GuidanceContext>>> {
        if !guided {
            return Ok(None);
        }
        let plan = &self.state.config.plan;
        let ctx: Vec<GuidanceContext> = (0..n)
            .map(|_| GuidanceContext::sample(plan.w_max, plan.drop_prob, rng))
            .collect::<Result<_>>()?;
        self.report.guided_rows += n;
        self.report.dropped_rows += ctx.iter().filter(|c| c.is_dropped()).count();
        Ok(Some(ctx))
    }

    fn base_step(&mut self, phase: Phase, rng: &mut ChaCha8Rng, opt_model: &mut AdamW, opt_wn: &mut AdamW) -> Result<MetricsRow> {
        let n = self.state.config.plan.batch_size;
        let data = self.sampler.batch(n, rng)?;
        let pairs = self.draw_pairs(phase, n, rng);
        let guidance = self.draw_guidance(phase == Phase::Cfg, n, rng)?;
        let batch = TrainBatch {
            x0: &data.x0,
            x1: &data.x1,
            x0_neg: data.x0_neg.as_ref(),
            pairs: &pairs,
            guidance: guidance.as_deref(),
            cond: Condition::Positive,
        };
        let st = &mut *self.state;
        let mut g = Graph::with_trainable(Trainable::Prefixes(BASE_PREFIXES.iter().map(|p| p.to_string()).collect()));
        let (loss, br) =
            combined_loss(&mut g, &st.model, &st.weightnet, &batch, &self.opts).map_err(|e| numeric_context(e, phase, self.step))?;
        let gm = g.grad(loss, st.model.params().iter().map(|(k, v)| (k.as_str(), v)))?;
        let gw = g.grad(loss, st.weightnet.params().iter().map(|(k, v)| (k.as_str(), v)))?;
        check_grads(&gm, phase, self.step)?;
        check_grads(&gw, phase, self.step)?;
        let new_m = opt_model.step(st.model.params(), &gm)?;
        let new_w = opt_wn.step(st.weightnet.params(), &gw)?;
        st.model.update_params(&new_m)?;
        st.weightnet.update_params(&new_w)?;
        Ok(loss_row(self.step, phase, &br))
    }

    fn adversarial(&mut self, rng: &mut ChaCha8Rng, sink: &mut dyn FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        let plan = self.state.config.plan.clone();
        let dim = self.state.config.task.state_dim();
        if self.state.model.lora_rank().is_none() {
            self.state.model.attach_lora(self.state.config.model.lora_rank, rng)?;
        }
        if self.state.disc.is_none() {
            self.state.disc = Some(Discriminator::new(dim, rng)?);
        }
        self.opts.lora_scale = plan.lora_train_scale;
        let mut opt_g = AdamW::new(plan.lr_model);
        let mut opt_d = AdamW::new(plan.lr_disc);
        let guided = plan.cfg_steps > 0;

        for _ in 0..plan.d_pretrain_steps {
            let data = self.sampler.batch(plan.batch_size, rng)?;
            let d_loss = self.disc_step(&data, &mut opt_d, Phase::DPretrain)?;
            let row = MetricsRow {
                step: self.step,
                phase: Phase::DPretrain.name().into(),
                d_loss: Some(d_loss),
                ..Default::default()
            };
            self.emit(row, sink)?;
        }
        for _ in 0..plan.adv_steps {
            let n = plan.batch_size;
            let data = self.sampler.batch(n, rng)?;
            let pairs = self.draw_pairs(Phase::Adv, n, rng);
            let guidance = self.draw_guidance(guided, n, rng)?;
            let batch = TrainBatch {
                x0: &data.x0,
                x1: &data.x1,
                x0_neg: data.x0_neg.as_ref(),
                pairs: &pairs,
                guidance: guidance.as_deref(),
                cond: Condition::Positive,
            };
            let st = &mut *self.state;
            let disc = st.disc.as_ref().expect("discriminator attached");
            let mut g = Graph::with_trainable(Trainable::Prefixes(vec![ADAPTER_PREFIX.to_string()]));
            let (total, adv, br) = generator_loss(
                &mut g,
                &st.model,
                disc,
                &st.weightnet,
                &batch,
                &self.opts,
                plan.lambda_adv,
                Condition::Positive,
            )
            .map_err(|e| numeric_context(e, Phase::Adv, self.step))?;
            finite_loss(&g, total, Phase::Adv, self.step)?;
            let adapters = select(st.model.params(), ADAPTER_PREFIX);
            let grads = g.grad(total, adapters.iter().map(|(k, v)| (k.as_str(), v)))?;
            check_grads(&grads, Phase::Adv, self.step)?;
            let new = opt_g.step(&adapters, &grads)?;
            st.model.update_params(&new)?;

            let d_loss = self.disc_step(&data, &mut opt_d, Phase::Adv)?;
            let mut row = loss_row(self.step, Phase::Adv, &br);
            row.g_loss = Some(adv);
            row.d_loss = Some(d_loss);
            self.emit(row, sink)?;
        }
        self.state.phase = Phase::Adv.name().into();
        Ok(())
    }

    fn disc_step(&mut self, data: &PairBatch, opt: &mut AdamW, phase: Phase) -> Result<f64> {
        let st = &mut *self.state;
        let disc = st.disc.as_mut().expect("discriminator attached");
        let mut g = Graph::with_trainable(Trainable::Prefixes(vec![DISC_PREFIX.to_string()]));
        let loss = discriminator_loss(&mut g, &st.model, disc, &data.x0, &data.x1, Condition::Positive, self.opts.lora_scale)
            .map_err(|e| numeric_context(e, phase, self.step))?;
        let value = finite_loss(&g, loss, phase, self.step)?;
        let grads = g.grad(loss, disc.params().iter().map(|(k, v)| (k.as_str(), v)))?;
        check_grads(&grads, phase, self.step)?;
        let new = opt.step(disc.params(), &grads)?;
        disc.update_params(&new)?;
        Ok(value)
    }
}

fn finite_loss(g: &Graph, loss: Var, phase: Phase, step: usize) -> Result<f64> {
    let v = g.get(loss).item()?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite loss {v} at step {step} ({phase})")))
    }
}
