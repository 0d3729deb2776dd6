use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use flowmap::data::{degrade, gaussian_pair, gen_texture, gen_toy2d, write_corpus, write_pgm, ManifestRow, PairBatch};
use flowmap::nets::{AverageVelocity, Condition};
use flowmap::oracle::{
    gaussian_velocity, identity_residuals, random_probes, residuals_csv, semigroup_residuals, GaussianTask,
    DEFAULT_FD_STEP, DEFAULT_STEPS,
};
use flowmap::runtime::{
    evaluate, sample, train, Config, EvalOptions, SamplerConfig, TaskConfig, TaskKind, TaskSampler, TrainedModel,
    METRICS_HEADER,
};
use flowmap::schedule::Setting;
use flowmap::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-3;
const SEMIGROUP_TOL: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "flowmap", version, about = "Train, sample and check flow-map models")]
struct Cli {
    /// Seed for every random stream; overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the training phases described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "flowmap.fmck")]
        out: PathBuf,
        #[arg(long, default_value = "metrics.csv")]
        metrics: PathBuf,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cond: Option<Condition>,
        #[arg(long = "lora-scale")]
        lora_scale: Option<f64>,
        /// Number of fresh source draws.
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Print every iterate instead of only the endpoint.
        #[arg(long)]
        trajectory: bool,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write image endpoints as PGM files here.
        #[arg(long = "pgm-dir")]
        pgm_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out draws of its task.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cond: Option<Condition>,
        #[arg(long = "lora-scale")]
        lora_scale: Option<f64>,
    },
    /// Check a flow-map characterization against the Gaussian oracle.
    OracleCheck {
        #[arg(long, default_value = "ssd")]
        setting: Setting,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        /// Residual CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic paired dataset.
    GenData {
        /// gaussian, two_gaussians, moons or texture
        #[arg(long, default_value = "texture")]
        task: TaskKind,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Texture side length.
        #[arg(long)]
        size: Option<usize>,
        /// Config supplying task and degradation settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numeric));
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config, out, metrics } => cmd_train(&config, seed, &out, &metrics),
        Command::Sample {
            checkpoint,
            steps,
            cond,
            lora_scale,
            n,
            trajectory,
            out,
            pgm_dir,
        } => {
            let trained = load(&checkpoint)?;
            let cfg = sampler_config(&trained, steps, cond, lora_scale)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(trained.config.seed));
            let x1 = TaskSampler::new(&trained.config)?.batch(n.max(1), &mut rng)?.x1;
            let model = trained.model.with_lora_scale(cfg.lora_scale);
            let traj = sample(&model as &dyn AverageVelocity, &x1, cfg.steps, cfg.cond)?;
            let iterates: Vec<(usize, &Tensor)> = if trajectory {
                traj.iter().enumerate().map(|(i, x)| (cfg.steps - i, x)).collect()
            } else {
                vec![(0, traj.last().expect("endpoint"))]
            };
            emit(out.as_deref(), &states_csv(&iterates))?;
            if let Some(dir) = pgm_dir {
                let size = trained.config.task.size;
                if trained.config.task.kind != TaskKind::Texture {
                    bail!("--pgm-dir needs an image task");
                }
                fs::create_dir_all(&dir)?;
                let x0 = traj.last().expect("endpoint");
                for i in 0..x0.rows() {
                    let img = Tensor::new(vec![size, size], x0.row(i).to_vec())?;
                    write_pgm(&dir.join(format!("sample_{i:05}.pgm")), &img)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            n,
            steps,
            cond,
            lora_scale,
        } => {
            let trained = load(&checkpoint)?;
            let cfg = sampler_config(&trained, steps, cond, lora_scale)?;
            let eval_seed = seed.unwrap_or(trained.config.seed.wrapping_add(1));
            let report = evaluate(&trained, &cfg, &EvalOptions::new(n, eval_seed))?;
            print!("{}", report.to_csv());
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { setting, probes, out } => {
            let task = TaskConfig::default().gaussian()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            let probes = random_probes(&task, probes.max(1), &mut rng)?;
            let v = |x: &Tensor, t: f64| gaussian_velocity(&task, x, t);
            let res = identity_residuals(setting, &v, &probes, DEFAULT_STEPS, DEFAULT_FD_STEP)?;
            let semi = semigroup_residuals(&v, &probes, DEFAULT_STEPS)?;
            emit(out.as_deref(), &residuals_csv(setting.name(), &res))?;
            let max = res.iter().copied().fold(0.0, f64::max);
            let semi_max = semi.iter().copied().fold(0.0, f64::max);
            eprintln!("{}: max residual {max:e}, semigroup {semi_max:e}", setting.name());
            if max < ORACLE_TOL && semi_max < SEMIGROUP_TOL {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("identity check failed");
                Ok(ExitCode::from(2))
            }
        }
        Command::GenData {
            task,
            n,
            out,
            size,
            config,
        } => {
            let mut c = match config {
                Some(p) => Config::load(&p)?,
                None => Config::default(),
            };
            c.task.kind = task;
            if let Some(size) = size {
                c.task.size = size;
            }
            c.validate()?;
            gen_data(&c, n, &out, seed.unwrap_or(c.seed))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path) -> anyhow::Result<TrainedModel> {
    TrainedModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn sampler_config(
    trained: &TrainedModel,
    steps: Option<usize>,
    cond: Option<Condition>,
    lora_scale: Option<f64>,
) -> anyhow::Result<SamplerConfig> {
    let mut cfg = trained.config.sampler.clone();
    if let Some(k) = steps {
        cfg.steps = k;
    }
    if let Some(c) = cond {
        cfg.cond = c;
    }
    if let Some(g) = lora_scale {
        cfg.lora_scale = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path, metrics: &Path) -> anyhow::Result<ExitCode> {
    let mut c = Config::load(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    let mut file = fs::File::create(metrics).with_context(|| format!("creating {}", metrics.display()))?;
    writeln!(file, "{METRICS_HEADER}")?;
    let result = train(&c, &mut |row| {
        writeln!(file, "{}", row.to_csv())?;
        Ok(())
    });
    file.flush()?;
    let (trained, report) = match result {
        Ok(r) => r,
        Err(e) => {
            if e.is_numeric() {
                writeln!(file, "# aborted: {e}")?;
            }
            return Err(e.into());
        }
    };
    trained.save(out)?;
    eprintln!(
        "trained {} steps, phase {}, drop rate {:.4}; checkpoint {}",
        report.rows.len(),
        trained.phase,
        report.drop_rate(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn states_csv(iterates: &[(usize, &Tensor)]) -> String {
    let d = iterates[0].1.cols();
    let mut s = String::from("k,row");
    for j in 0..d {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (k, x) in iterates {
        for i in 0..x.rows() {
            let _ = write!(s, "{k},{i}");
            for v in x.row(i) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
    }
    s
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pairs_csv(batch: &PairBatch) -> String {
    let d = batch.dim();
    let mut s = String::new();
    let cols: Vec<String> = ["x0", "x1"]
        .iter()
        .flat_map(|p| (0..d).map(move |j| format!("{p}_{j}")))
        .collect();
    s.push_str(&cols.join(","));
    s.push('\n');
    for i in 0..batch.len() {
        let vals: Vec<String> = batch.x0.row(i).iter().chain(batch.x1.row(i)).map(|v| format!("{v:e}")).collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}

fn gen_data(c: &Config, n: usize, out: &Path, seed: u64) -> anyhow::Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match c.task.kind {
        TaskKind::Texture => {
            let hr = gen_texture(n, c.task.size, &mut rng)?;
            let mut rows = Vec::with_capacity(n);
            let mut lr = Vec::with_capacity(n);
            for (index, img) in hr.iter().enumerate() {
                let s_down = c.task.scale.sample(&mut rng)?;
                lr.push(degrade(img, s_down, &c.degrade, &mut rng)?);
                rows.push(ManifestRow { index, seed, s_down });
            }
            write_corpus(&out.join("hr"), &hr, &rows)?;
            write_corpus(&out.join("lr"), &lr, &rows)?;
        }
        TaskKind::Gaussian => {
            let task: GaussianTask = c.task.gaussian()?;
            fs::create_dir_all(out)?;
            fs::write(out.join("pairs.csv"), pairs_csv(&gaussian_pair(n, &task, &mut rng)?))?;
        }
        TaskKind::Toy2d(kind) => {
            fs::create_dir_all(out)?;
            fs::write(out.join("pairs.csv"), pairs_csv(&gen_toy2d(n, kind, &c.task.toy, &mut rng)?))?;
        }
    }
    Ok(())
}
