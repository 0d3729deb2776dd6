//! Plain-text `key = value` configuration with `[section]` headers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::data::{DegradeOpts, Interp, ScaleRange, Toy2dKind, Toy2dOpts};
use crate::error::{Error, Result};
use crate::interpolant::InterpolantSchedule;
use crate::losses::{VelocitySource, DEFAULT_DROP_PROB, DEFAULT_LAMBDA_ADV, DEFAULT_W_MAX};
use crate::nets::{Condition, FlowMapConfig};
use crate::oracle::GaussianTask;
use crate::schedule::{GridConfig, Setting};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Gaussian,
    Toy2d(Toy2dKind),
    Texture,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Gaussian => "gaussian",
            TaskKind::Toy2d(k) => k.name(),
            TaskKind::Texture => "texture",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(TaskKind::Gaussian),
            "texture" => Ok(TaskKind::Texture),
            other => other.parse().map(TaskKind::Toy2d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub mu0: Vec<f64>,
    pub sigma0: f64,
    pub mu1: Vec<f64>,
    pub sigma1: f64,
    pub toy: Toy2dOpts,
    /// Texture side length.
    pub size: usize,
    pub scale: ScaleRange,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Gaussian,
            mu0: vec![1.0, -0.5],
            sigma0: 0.5,
            mu1: vec![0.0, 0.0],
            sigma1: 1.0,
            toy: Toy2dOpts::default(),
            size: 16,
            scale: ScaleRange::default(),
        }
    }
}

impl TaskConfig {
    pub fn gaussian(&self) -> Result<GaussianTask> {
        GaussianTask::new(self.mu0.clone(), self.sigma0, self.mu1.clone(), self.sigma1)
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            TaskKind::Gaussian => self.mu0.len(),
            TaskKind::Toy2d(_) => 2,
            TaskKind::Texture => self.size * self.size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub lora_rank: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = FlowMapConfig::new(1);
        Self {
            hidden: f.hidden,
            depth: f.depth,
            time_embed_dim: f.time_embed_dim,
            cond_dim: f.cond_dim,
            lora_rank: 4,
        }
    }
}

impl ModelConfig {
    pub fn flowmap(&self, state_dim: usize) -> FlowMapConfig {
        FlowMapConfig {
            state_dim,
            hidden: self.hidden,
            depth: self.depth,
            time_embed_dim: self.time_embed_dim,
            cond_dim: self.cond_dim,
            zero_init_final: true,
        }
    }
}

/// Phase lengths and optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePlan {
    pub setting: Setting,
    pub schedule: String,
    pub source: VelocitySource,
    pub fm_steps: usize,
    pub fmsd_steps: usize,
    pub cfg_steps: usize,
    pub adv_steps: usize,
    pub d_pretrain_steps: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_weightnet: f64,
    pub lr_disc: f64,
    pub w_max: f64,
    pub drop_prob: f64,
    pub lambda_adv: f64,
    pub lora_train_scale: f64,
    pub grid: GridConfig,
    /// `None` picks 1 for image tasks and 0 otherwise.
    pub perceptual_scale: Option<f64>,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            setting: Setting::Ssd,
            schedule: "standard".into(),
            source: VelocitySource::Conditional,
            fm_steps: 2000,
            fmsd_steps: 2000,
            cfg_steps: 1000,
            adv_steps: 1000,
            d_pretrain_steps: 100,
            batch_size: 256,
            lr_model: 1e-4,
            lr_weightnet: 1e-3,
            lr_disc: 1e-4,
            w_max: DEFAULT_W_MAX,
            drop_prob: DEFAULT_DROP_PROB,
            lambda_adv: DEFAULT_LAMBDA_ADV,
            lora_train_scale: 1.0,
            grid: GridConfig::default(),
            perceptual_scale: None,
        }
    }
}

impl PhasePlan {
    pub fn total_steps(&self) -> usize {
        self.fm_steps + self.fmsd_steps + self.cfg_steps + self.adv_steps
    }

    pub fn interpolant(&self) -> Result<InterpolantSchedule> {
        InterpolantSchedule::from_name(&self.schedule)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cond: Condition,
    pub lora_scale: f64,
    pub d_max: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            cond: Condition::Positive,
            lora_scale: 1.0,
            d_max: GridConfig::default().d_max,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let max = 1usize << self.d_max;
        if !self.steps.is_power_of_two() || self.steps > max {
            return Err(Error::InvalidArgument(format!(
                "step count {} must be a power of two no larger than {max}",
                self.steps
            )));
        }
        if !self.lora_scale.is_finite() {
            return Err(Error::InvalidArgument("adapter scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub plan: PhasePlan,
    pub sampler: SamplerConfig,
    pub degrade: DegradeOpts,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            plan: PhasePlan::default(),
            sampler: SamplerConfig::default(),
            degrade: DegradeOpts::default(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "plan",
        &[
            "seed",
            "setting",
            "schedule",
            "source",
            "fm_steps",
            "fmsd_steps",
            "cfg_steps",
            "adv_steps",
            "d_pretrain_steps",
            "batch_size",
            "lr_model",
            "lr_weightnet",
            "lr_disc",
            "w_max",
            "drop_prob",
            "lambda_adv",
            "lora_train_scale",
            "d_max",
            "p_fm",
            "perceptual_scale",
        ],
    ),
    ("sampler", &["steps", "cond", "lora_scale"]),
    (
        "degrade",
        &["blur_prob", "noise_std_max", "gaussian_noise_prob", "quant_levels", "interp"],
    ),
    (
        "task",
        &[
            "kind",
            "mu0",
            "sigma0",
            "mu1",
            "sigma1",
            "sigma",
            "contraction",
            "neg_noise",
            "size",
            "s_down_min",
            "s_down_max",
        ],
    ),
    ("model", &["hidden", "depth", "time_embed_dim", "cond_dim", "lora_rank"]),
];

struct Section<'a> {
    name: &'a str,
    props: Option<&'a ini::Properties>,
}

impl Section<'_> {
    fn parse<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(raw) = self.props.and_then(|p| p.get(key)) {
            *slot = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("[{}] {key} = '{raw}' is malformed", self.name)))?;
        }
        Ok(())
    }

    fn parse_with<T>(&self, key: &str, slot: &mut T, f: impl Fn(&str) -> Result<T>) -> Result<()> {
        if let Some(raw) = self.props.and_then(|p| p.get(key)) {
            *slot = f(raw.trim()).map_err(|e| Error::Config(format!("[{}] {key}: {e}", self.name)))?;
        }
        Ok(())
    }
}

fn parse_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("'{v}' is not a number"))))
        .collect()
}

fn parse_source(raw: &str) -> Result<VelocitySource> {
    match raw {
        "conditional" => Ok(VelocitySource::Conditional),
        "marginal" => Ok(VelocitySource::Marginal),
        other => Err(Error::Config(format!("unknown velocity source '{other}'"))),
    }
}

fn source_name(s: VelocitySource) -> &'static str {
    match s {
        VelocitySource::Conditional => "conditional",
        VelocitySource::Marginal => "marginal",
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key '{k}' outside any section")));
                }
                continue;
            };
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| Error::Config(format!("unknown section [{name}]")))?;
            let mut seen = BTreeSet::new();
            for (k, _) in props.iter() {
                if !known.1.contains(&k) {
                    return Err(Error::Config(format!("unknown key '{k}' in [{name}]")));
                }
                if !seen.insert(k) {
                    return Err(Error::Config(format!("duplicate key '{k}' in [{name}]")));
                }
            }
        }
        let sec = |name| Section {
            name,
            props: ini.section(Some(name)),
        };
        let mut c = Config::default();

        let p = sec("plan");
        p.parse("seed", &mut c.seed)?;
        p.parse("setting", &mut c.plan.setting)?;
        p.parse("schedule", &mut c.plan.schedule)?;
        p.parse_with("source", &mut c.plan.source, parse_source)?;
        p.parse("fm_steps", &mut c.plan.fm_steps)?;
        p.parse("fmsd_steps", &mut c.plan.fmsd_steps)?;
        p.parse("cfg_steps", &mut c.plan.cfg_steps)?;
        p.parse("adv_steps", &mut c.plan.adv_steps)?;
        p.parse("d_pretrain_steps", &mut c.plan.d_pretrain_steps)?;
        p.parse("batch_size", &mut c.plan.batch_size)?;
        p.parse("lr_model", &mut c.plan.lr_model)?;
        p.parse("lr_weightnet", &mut c.plan.lr_weightnet)?;
        p.parse("lr_disc", &mut c.plan.lr_disc)?;
        p.parse("w_max", &mut c.plan.w_max)?;
        p.parse("drop_prob", &mut c.plan.drop_prob)?;
        p.parse("lambda_adv", &mut c.plan.lambda_adv)?;
        p.parse("lora_train_scale", &mut c.plan.lora_train_scale)?;
        let (mut d_max, mut p_fm) = (c.plan.grid.d_max, c.plan.grid.p_fm);
        p.parse("d_max", &mut d_max)?;
        p.parse("p_fm", &mut p_fm)?;
        c.plan.grid = GridConfig::new(d_max, p_fm).map_err(|e| Error::Config(e.to_string()))?;
        p.parse_with("perceptual_scale", &mut c.plan.perceptual_scale, |v| {
            v.parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("'{v}' is not a number")))
        })?;
        c.sampler.d_max = d_max;

        let s = sec("sampler");
        s.parse("steps", &mut c.sampler.steps)?;
        s.parse("cond", &mut c.sampler.cond)?;
        s.parse("lora_scale", &mut c.sampler.lora_scale)?;

        let d = sec("degrade");
        d.parse("blur_prob", &mut c.degrade.blur_prob)?;
        d.parse("noise_std_max", &mut c.degrade.noise_std_max)?;
        d.parse("gaussian_noise_prob", &mut c.degrade.gaussian_noise_prob)?;
        d.parse("quant_levels", &mut c.degrade.quant_levels)?;
        d.parse_with("interp", &mut c.degrade.interp_modes, |v| {
            v.split(',').map(Interp::from_str).collect()
        })?;

        let t = sec("task");
        t.parse("kind", &mut c.task.kind)?;
        t.parse_with("mu0", &mut c.task.mu0, parse_list)?;
        t.parse("sigma0", &mut c.task.sigma0)?;
        t.parse_with("mu1", &mut c.task.mu1, parse_list)?;
        t.parse("sigma1", &mut c.task.sigma1)?;
        t.parse("sigma", &mut c.task.toy.sigma)?;
        t.parse("contraction", &mut c.task.toy.contraction)?;
        t.parse("neg_noise", &mut c.task.toy.neg_noise)?;
        t.parse("size", &mut c.task.size)?;
        t.parse("s_down_min", &mut c.task.scale.min)?;
        t.parse("s_down_max", &mut c.task.scale.max)?;

        let m = sec("model");
        m.parse("hidden", &mut c.model.hidden)?;
        m.parse("depth", &mut c.model.depth)?;
        m.parse("time_embed_dim", &mut c.model.time_embed_dim)?;
        m.parse("cond_dim", &mut c.model.cond_dim)?;
        m.parse("lora_rank", &mut c.model.lora_rank)?;

        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.plan;
        p.interpolant().map_err(|e| Error::Config(e.to_string()))?;
        if p.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("lr_model", p.lr_model), ("lr_weightnet", p.lr_weightnet), ("lr_disc", p.lr_disc)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(p.w_max > 1.0) || !(0.0..=1.0).contains(&p.drop_prob) {
            return bad("w_max must exceed 1 and drop_prob lie in [0, 1]".into());
        }
        if !(p.lambda_adv >= 0.0) || !p.lora_train_scale.is_finite() {
            return bad("lambda_adv must be non-negative and lora_train_scale finite".into());
        }
        if p.perceptual_scale.is_some_and(|v| !(v >= 0.0)) {
            return bad("perceptual_scale must be non-negative".into());
        }
        self.sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.degrade.validate().map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.task;
        match t.kind {
            TaskKind::Gaussian => {
                t.gaussian().map_err(|e| Error::Config(e.to_string()))?;
            }
            TaskKind::Texture => {
                if !crate::data::TEXTURE_SIZES.contains(&t.size) {
                    return bad(format!("texture size {} unsupported", t.size));
                }
                if !(t.scale.min > 0.0 && t.scale.min <= t.scale.max && t.scale.max <= 1.0) {
                    return bad("s_down range must lie in (0, 1]".into());
                }
            }
            TaskKind::Toy2d(_) => {}
        }
        let m = &self.model;
        if m.hidden == 0 || m.cond_dim == 0 || m.lora_rank == 0 || m.time_embed_dim == 0 || m.time_embed_dim % 2 != 0 {
            return bad("model dimensions must be positive and time_embed_dim even".into());
        }
        Ok(())
    }

    /// Perceptual multiplier after resolving the task default.
    pub fn perceptual_scale(&self) -> f64 {
        self.plan
            .perceptual_scale
            .unwrap_or(if self.task.kind == TaskKind::Texture { 1.0 } else { 0.0 })
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let p = &self.plan;
        let _ = writeln!(s, "[plan]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "setting = {}", p.setting.name().to_lowercase());
        let _ = writeln!(s, "schedule = {}", p.schedule);
        let _ = writeln!(s, "source = {}", source_name(p.source));
        for (k, v) in [
            ("fm_steps", p.fm_steps),
            ("fmsd_steps", p.fmsd_steps),
            ("cfg_steps", p.cfg_steps),
            ("adv_steps", p.adv_steps),
            ("d_pretrain_steps", p.d_pretrain_steps),
            ("batch_size", p.batch_size),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (k, v) in [
            ("lr_model", p.lr_model),
            ("lr_weightnet", p.lr_weightnet),
            ("lr_disc", p.lr_disc),
            ("w_max", p.w_max),
            ("drop_prob", p.drop_prob),
            ("lambda_adv", p.lambda_adv),
            ("lora_train_scale", p.lora_train_scale),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "d_max = {}", p.grid.d_max);
        let _ = writeln!(s, "p_fm = {}", p.grid.p_fm);
        if let Some(v) = p.perceptual_scale {
            let _ = writeln!(s, "perceptual_scale = {v}");
        }
        let _ = writeln!(s, "\n[sampler]");
        let _ = writeln!(s, "steps = {}", self.sampler.steps);
        let _ = writeln!(s, "cond = {}", self.sampler.cond.name());
        let _ = writeln!(s, "lora_scale = {}", self.sampler.lora_scale);
        let d = &self.degrade;
        let _ = writeln!(s, "\n[degrade]");
        let _ = writeln!(s, "blur_prob = {}", d.blur_prob);
        let _ = writeln!(s, "noise_std_max = {}", d.noise_std_max);
        let _ = writeln!(s, "gaussian_noise_prob = {}", d.gaussian_noise_prob);
        let _ = writeln!(s, "quant_levels = {}", d.quant_levels);
        let modes: Vec<&str> = d.interp_modes.iter().map(|m| m.name()).collect();
        let _ = writeln!(s, "interp = {}", modes.join(","));
        let t = &self.task;
        let _ = writeln!(s, "\n[task]");
        let _ = writeln!(s, "kind = {}", t.kind.name());
        let _ = writeln!(s, "mu0 = {}", join(&t.mu0));
        let _ = writeln!(s, "sigma0 = {}", t.sigma0);
        let _ = writeln!(s, "mu1 = {}", join(&t.mu1));
        let _ = writeln!(s, "sigma1 = {}", t.sigma1);
        let _ = writeln!(s, "sigma = {}", t.toy.sigma);
        let _ = writeln!(s, "contraction = {}", t.toy.contraction);
        let _ = writeln!(s, "neg_noise = {}", t.toy.neg_noise);
        let _ = writeln!(s, "size = {}", t.size);
        let _ = writeln!(s, "s_down_min = {}", t.scale.min);
        let _ = writeln!(s, "s_down_max = {}", t.scale.max);
        let m = &self.model;
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "hidden = {}", m.hidden);
        let _ = writeln!(s, "depth = {}", m.depth);
        let _ = writeln!(s, "time_embed_dim = {}", m.time_embed_dim);
        let _ = writeln!(s, "cond_dim = {}", m.cond_dim);
        let _ = writeln!(s, "lora_rank = {}", m.lora_rank);
        s
    }
}
