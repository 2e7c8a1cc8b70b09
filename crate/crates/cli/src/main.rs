//! `kedmd`: generate data, learn kernels, prune, predict and inspect spectra.

#[cfg(feature = "plots")]
mod plots;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kedmd::config::ExperimentConfig;
use kedmd::equivalence::{self, EquivalenceConfig};
use kedmd::run;
use kedmd::{Error, PredictMethod};

#[derive(Parser, Debug)]
#[command(name = "kedmd", version, about = "Kernel learning for kernel EDMD experiments")]
struct Cli {
    /// Only warnings and errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Per-batch loss lines in addition to the per-epoch summary.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Embedded preset: duffing, modulo or kse.
    #[arg(long)]
    preset: Option<String>,
    /// Output root; each command writes into a subdirectory named after it.
    #[arg(long, env = "KEDMD_OUT")]
    out: Option<PathBuf>,
    /// Overrides the data and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip PNG rendering. CSV outputs are identical either way.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Spectral,
    Recursive,
}

impl From<Method> for PredictMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Spectral => PredictMethod::Spectral,
            Method::Recursive => PredictMethod::Recursive,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a preset config, ready to edit.
    Config {
        #[arg(long)]
        preset: String,
    },
    /// Simulate training and test datasets into <out>/data.
    Generate(Common),
    /// Learn kernel parameters; writes <out>/train.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset [default: <out>/data/train.csv].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Start from the learned values of this checkpoint instead of the config kernel.
        #[arg(long)]
        kernel: Option<PathBuf>,
        /// Also write a checkpoint after every epoch.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Prune a checkpoint by the config policy and retrain when data is given; writes <out>/prune.
    Prune {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to prune [default: <out>/train/kernel.toml].
        #[arg(long)]
        kernel: Option<PathBuf>,
        /// Training dataset for retraining the survivors.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoints: bool,
    },
    /// Continue training on more centers; writes <out>/finetune.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// [default: <out>/data/train.csv]
        #[arg(long)]
        data: Option<PathBuf>,
        /// [default: <out>/prune/kernel.toml, else <out>/train/kernel.toml]
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long)]
        checkpoints: bool,
    },
    /// Predict trajectories from their initial states; writes <out>/predict.
    Predict {
        #[command(flatten)]
        common: Common,
        /// [default: newest of <out>/{finetune,prune,train}/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Stride-1 dataset [default: <out>/data/test.csv].
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Steps to predict [default: eval.horizon].
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Eigenvalues and residuals of a model; writes <out>/spectrum.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluation set when eval.residual_set is train or test.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Every loss of a kernel on the first-epoch batches; writes <out>/losses.
    Losses {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint whose learned kernel is scored [default: the config kernel].
        #[arg(long)]
        kernel: Option<PathBuf>,
    },
    /// Check that the simplified and truncated operators agree on random instances.
    EquivalenceCheck {
        /// Use this config's kernel instead of random positive definite sums.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, env = "KEDMD_OUT")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest instance size.
        #[arg(long, default_value_t = 20)]
        n_points: usize,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Feed an asymmetric function through the kernel gate (testing aid).
        #[arg(long, hide = true)]
        inject_asymmetric: bool,
    },
}

/// Process exit codes.
mod code {
    pub const CHECK_FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const DIVERGED: u8 = 4;
    pub const IO: u8 = 5;
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::InvalidKernel(_)
        | Error::PruneEmpty
        | Error::AsymmetricKernel { .. }
        | Error::TooManyCenters { .. }
        | Error::EmptyCenters
        | Error::DimensionMismatch { .. } => code::CONFIG,
        Error::Diverged { .. } | Error::LossNotFinite { .. } => code::DIVERGED,
        Error::Io { .. } => code::IO,
        _ => code::NUMERIC,
    }
}

fn load_config(config: Option<&Path>, preset: Option<&str>) -> kedmd::Result<ExperimentConfig> {
    match (config, preset) {
        (Some(p), _) => ExperimentConfig::from_toml(&kedmd::io::read_text(p)?),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (None, None) => Err(Error::config("config", "pass --config PATH or --preset NAME")),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    root: PathBuf,
    plots: bool,
}

impl Ctx {
    fn new(c: &Common) -> kedmd::Result<Self> {
        let mut cfg = load_config(c.config.as_deref(), c.preset.as_deref())?;
        if let Some(s) = c.seed {
            cfg.data.seed = s;
            cfg.train.seed = s;
        }
        cfg.validate()?;
        let root = c
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
        Ok(Ctx {
            cfg,
            root,
            plots: !c.no_plots,
        })
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn or(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.root.join(default))
    }

    fn first_existing(&self, given: &Option<PathBuf>, candidates: &[&str]) -> PathBuf {
        given.clone().unwrap_or_else(|| {
            candidates
                .iter()
                .map(|c| self.root.join(c))
                .find(|p| p.exists())
                .unwrap_or_else(|| self.root.join(candidates[candidates.len() - 1]))
        })
    }
}

#[cfg(feature = "plots")]
fn plot(enabled: bool, f: impl FnOnce() -> Result<(), String>) {
    if enabled && plots::fonts_available() {
        if let Err(e) = f() {
            log::warn!("plot skipped: {e}");
        }
    }
}

#[cfg(not(feature = "plots"))]
fn plot(_enabled: bool, _f: impl FnOnce() -> Result<(), String>) {}

fn print_train(s: &run::TrainSummary) {
    if let Some(last) = s.history.epochs.last() {
        println!(
            "epochs: {}  final mean pred loss: {}",
            last.epoch,
            last.mean.pred.map_or("-".into(), |v| format!("{v:.6e}"))
        );
    }
    for (p, w) in s.kernel.primitives().iter().zip(s.kernel.weights()) {
        println!("  w = {w:+.6}  {} {:?}", p.kind().name(), p.params());
    }
}

fn run_command(cmd: Command) -> kedmd::Result<u8> {
    match cmd {
        Command::Config { preset } => {
            print!("{}", ExperimentConfig::preset_text(&preset)?);
        }
        Command::Generate(c) => {
            let ctx = Ctx::new(&c)?;
            let (_, s) = run::generate(&ctx.cfg, &ctx.dir("data"))?;
            println!("train: {} pairs -> {}", s.train_pairs, s.train_path.display());
            println!("test:  {} pairs -> {}", s.test_pairs, s.test_path.display());
        }
        Command::Train {
            common,
            data,
            kernel,
            checkpoints,
        } => {
            let ctx = Ctx::new(&common)?;
            let out = ctx.dir("train");
            let (_, s) = run::train(
                &ctx.cfg,
                &ctx.or(&data, "data/train.csv"),
                kernel.as_deref(),
                &out,
                checkpoints,
            )?;
            print_train(&s);
            #[cfg(feature = "plots")]
            plot(ctx.plots, || plots::loss_curve(&out.join("loss.png"), &s.history));
            let _ = ctx.plots;
        }
        Command::Prune {
            common,
            kernel,
            data,
            checkpoints,
        } => {
            let ctx = Ctx::new(&common)?;
            let out = ctx.dir("prune");
            let (_, s) = run::prune(
                &ctx.cfg,
                &ctx.or(&kernel, "train/kernel.toml"),
                data.as_deref(),
                &out,
                checkpoints,
            )?;
            println!("kept primitives {:?} -> {}", s.kept, out.join("pruned.toml").display());
            if let Some(t) = &s.retrained {
                print_train(t);
                #[cfg(feature = "plots")]
                plot(ctx.plots, || plots::loss_curve(&out.join("loss.png"), &t.history));
            }
        }
        Command::Finetune {
            common,
            data,
            kernel,
            checkpoints,
        } => {
            let ctx = Ctx::new(&common)?;
            let out = ctx.dir("finetune");
            let ckpt = ctx.first_existing(&kernel, &["prune/kernel.toml", "train/kernel.toml"]);
            let (_, s) = run::finetune(&ctx.cfg, &ctx.or(&data, "data/train.csv"), &ckpt, &out, checkpoints)?;
            print_train(&s);
            #[cfg(feature = "plots")]
            plot(ctx.plots, || plots::loss_curve(&out.join("loss.png"), &s.history));
        }
        Command::Predict {
            common,
            model,
            data,
            method,
            horizon,
        } => {
            let ctx = Ctx::new(&common)?;
            let out = ctx.dir("predict");
            let model = ctx.first_existing(&model, &["finetune/model.json", "prune/model.json", "train/model.json"]);
            let method = method.map(Into::into).unwrap_or(ctx.cfg.eval.method);
            let horizon = horizon.unwrap_or(ctx.cfg.eval.horizon);
            let (_, s) = run::predict(&ctx.cfg, &model, &ctx.or(&data, "data/test.csv"), method, horizon, &out)?;
            println!(
                "{} trajectories, horizon {}, mean squared error {:.6e}, diverged {}",
                s.trajectories.len(),
                s.horizon,
                s.mean_mse(),
                s.diverged()
            );
            for t in s.trajectories.iter().filter(|t| t.diverged_at.is_some()) {
                println!(
                    "  trajectory {} diverged at step {}",
                    t.trajectory,
                    t.diverged_at.unwrap()
                );
            }
            #[cfg(feature = "plots")]
            plot(ctx.plots, || plots::trajectories(&out, &s));
        }
        Command::Spectrum { common, model, data } => {
            let ctx = Ctx::new(&common)?;
            let out = ctx.dir("spectrum");
            let model = ctx.first_existing(&model, &["finetune/model.json", "prune/model.json", "train/model.json"]);
            let (_, s) = run::spectrum(&ctx.cfg, &model, data.as_deref(), &out)?;
            let big = s.eigenvalues.iter().filter(|l| l.norm() > 0.5).count();
            println!("{} eigenvalues, {} with |lambda| > 0.5", s.eigenvalues.len(), big);
            match s.residual_stats() {
                Some((lo, med, hi)) => println!("residuals (min, median, max): ({lo:.3e}, {med:.3e}, {hi:.3e})"),
                None => println!("residuals: none finite"),
            }
            #[cfg(feature = "plots")]
            plot(ctx.plots, || plots::spectrum(&out.join("spectrum.png"), &s));
        }
        Command::Losses { common, data, kernel } => {
            let ctx = Ctx::new(&common)?;
            let (_, reports) = run::losses(
                &ctx.cfg,
                &ctx.or(&data, "data/train.csv"),
                kernel.as_deref(),
                &ctx.dir("losses"),
            )?;
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "batch {} pred {} dict {} eig {} eig_pred {} | tr dict {} eig {} eig_pred {}",
                    i + 1,
                    fmt(r.pred),
                    fmt(r.dict),
                    fmt(r.eig),
                    fmt(r.eig_pred),
                    fmt(r.tr_dict),
                    fmt(r.tr_eig),
                    fmt(r.tr_eig_pred)
                );
            }
        }
        Command::EquivalenceCheck {
            config,
            preset,
            out,
            seed,
            n_points,
            instances,
            tol,
            inject_asymmetric,
        } => {
            if inject_asymmetric {
                let rows: Vec<Vec<f64>> = (0..n_points.max(2))
                    .map(|i| vec![0.3 * i as f64 - 1.0, 0.1 * i as f64])
                    .collect();
                let probe = kedmd::SnapshotSet::from_rows(&rows, &rows)?;
                equivalence::admit_kernel_fn(|x, y| (-(x[0] - 2.0 * y[0]).powi(2)).exp(), &probe)?;
            }
            let cfg = match (&config, &preset) {
                (None, None) => None,
                _ => Some(load_config(config.as_deref(), preset.as_deref())?),
            };
            let eq = EquivalenceConfig {
                instances,
                max_points: n_points,
                seed,
                tol,
            };
            let root = out.unwrap_or_else(|| PathBuf::from("runs"));
            let (_, r) = run::equivalence_check(cfg.as_ref(), &eq, &root.join("equivalence"))?;
            let pass = r.passed();
            println!(
                "{} instances: max eigenvalue mismatch {:.3e}, operator mismatch {:.3e}, eigenvector defect {:.3e} (tol {:.0e}) {}",
                r.instances.len(),
                r.max_eig_mismatch(),
                r.max_operator_mismatch(),
                r.max_vector_defect(),
                r.tol,
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Ok(code::CHECK_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run_command(cli.command) {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::LossNotFinite { last_params, .. } = &e {
                eprintln!("last finite parameters: {last_params:?}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
