//! Experiment commands. Each reads its inputs, writes its outputs under an
//! output directory and records both, with the resolved config, in a manifest
//! `manifest-<command>.json`. Rerunning a command on the manifest's config and
//! inputs reproduces its outputs byte for byte on the same platform.

use std::path::{Path, PathBuf};

use faer::{c64, Mat};

use crate::config::{ExperimentConfig, ModesFit, ResidualSet};
use crate::equivalence::{self, EquivalenceConfig, EquivalenceReport};
use crate::error::{Error, Result};
use crate::io::{self, Dataset, DatasetMeta, FileDigest, KernelCheckpoint, Manifest, ModelFile, VariantSpec};
use crate::kernel::{map_rows, WeightedKernelSum};
use crate::koopman::{fit_sk, KoopmanModel, PredictMethod, SnapshotSet};
use crate::losses::LossReport;
use crate::systems::{generate_dataset, modulo_true_eigenvalues, SystemSpec};
use crate::trainer::{self, TrainConfig, TrainHistory};

/// A predicted state is divergent once its norm exceeds this multiple of the
/// largest true state norm on the trajectory.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Number of true modulo eigenvalues `exp(i omega j)` written for comparison.
pub const MODULO_OVERLAY: usize = 20;

/// Collects the files a command touches.
struct Recorder {
    manifest: Manifest,
    out: PathBuf,
}

impl Recorder {
    fn new(command: &str, cfg: &ExperimentConfig, out: &Path) -> Self {
        Recorder {
            manifest: Manifest::new(command, &cfg.to_toml(), cfg.data.seed),
            out: out.to_path_buf(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Output paths never alias an input: no command mutates what it read.
    fn check_output(&self, p: &Path) -> Result<()> {
        let same = |d: &FileDigest| {
            d.path == p || matches!((d.path.canonicalize(), p.canonicalize()), (Ok(a), Ok(b)) if a == b)
        };
        if self.manifest.inputs.iter().any(same) {
            return Err(Error::config(
                "out",
                format!("{} is an input of this command", p.display()),
            ));
        }
        Ok(())
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        self.check_output(&p)?;
        io::write_text(&p, contents)?;
        self.manifest.outputs.push(FileDigest::of(&p)?);
        Ok(p)
    }

    fn written(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn finish(self) -> Result<Manifest> {
        let name = format!("manifest-{}.json", self.manifest.command);
        self.manifest.write(&self.out.join(name))?;
        Ok(self.manifest)
    }
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

fn make_split(
    system: &SystemSpec,
    split: &str,
    n_ic: usize,
    steps: usize,
    stride: usize,
    seed: u64,
) -> Result<Dataset> {
    let bundle = generate_dataset(system, n_ic, steps, seed)?;
    let records = bundle.pairs(stride);
    Ok(Dataset {
        meta: DatasetMeta {
            split: split.to_string(),
            system: *system,
            seed,
            n_ic,
            steps,
            stride,
            dt: system.dt(),
            pairs: records.len(),
        },
        records,
    })
}

/// Writes `train.csv` and `test.csv` with their metadata sidecars.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, GenerateSummary)> {
    cfg.validate()?;
    let d = &cfg.data;
    let mut rec = Recorder::new("generate", cfg, out);
    let mut summary = GenerateSummary {
        train_pairs: 0,
        test_pairs: 0,
        train_path: rec.path("train.csv"),
        test_path: rec.path("test.csv"),
    };
    for (split, n_ic, stride, seed) in [
        ("train", d.train_ic, d.train_stride, d.seed),
        ("test", d.test_ic, d.test_stride, d.test_seed),
    ] {
        let data = make_split(&cfg.system, split, n_ic, d.steps, stride, seed)?;
        let path = rec.path(&format!("{split}.csv"));
        rec.check_output(&path)?;
        io::write_dataset(&path, &data)?;
        rec.written(&path)?;
        rec.written(&io::meta_path(&path))?;
        log::info!("{split}: {} pairs -> {}", data.records.len(), path.display());
        if split == "train" {
            summary.train_pairs = data.records.len();
        } else {
            summary.test_pairs = data.records.len();
        }
    }
    Ok((rec.finish()?, summary))
}

fn load_data(rec: &mut Recorder, path: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = io::read_dataset(path)?;
    if data.meta.system.dim() != cfg.system.dim() {
        return Err(Error::config(
            "system",
            format!(
                "dataset {} holds {}-dimensional states, config expects {}",
                path.display(),
                data.meta.system.dim(),
                cfg.system.dim()
            ),
        ));
    }
    rec.input(path)?;
    rec.input(&io::meta_path(path))?;
    Ok(data)
}

fn load_checkpoint(rec: &mut Recorder, path: &Path) -> Result<KernelCheckpoint> {
    let c = KernelCheckpoint::read(path)?;
    rec.input(path)?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: TrainHistory,
    pub kernel: WeightedKernelSum,
    pub eigenvalues: Vec<c64>,
    pub residuals: Vec<Option<f64>>,
}

/// Fits the evaluation model on the training centers.
fn eval_model(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    kernel: &WeightedKernelSum,
    data: &SnapshotSet,
) -> Result<KoopmanModel> {
    let centers = trainer::subsample_centers(data, train.n_centers, train.seed)?;
    let mut model = fit_sk(kernel, &centers, cfg.eval_beta_koop())?;
    model.fit_projection(train.beta_modes)?;
    match cfg.eval.modes {
        ModesFit::LeastSquares => model.fit_modes(train.beta_modes)?,
        ModesFit::Projection => model.modes_from_projection()?,
    };
    Ok(model)
}

/// Writes `kernel.toml`, `history.csv`, `history_epochs.csv`, `model.json` and
/// optionally `checkpoints/epoch-NNNN.toml`.
fn write_training(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    initial: &WeightedKernelSum,
    history: TrainHistory,
    data: &SnapshotSet,
    checkpoints: bool,
) -> Result<TrainSummary> {
    let kernel = history.final_kernel.clone();
    let ckpt = KernelCheckpoint::new(&kernel, initial, history.epochs.last().map_or(0, |e| e.epoch));
    rec.text("kernel.toml", &ckpt.to_toml())?;
    rec.text("history.csv", &io::history_csv(&history))?;
    rec.text("history_epochs.csv", &io::epoch_history_csv(&history))?;
    if checkpoints {
        for e in &history.epochs {
            let mut k = initial.clone();
            k.set_params(&e.params)?;
            rec.text(
                &format!("checkpoints/epoch-{:04}.toml", e.epoch),
                &KernelCheckpoint::new(&k, initial, e.epoch).to_toml(),
            )?;
        }
    }
    let model = eval_model(cfg, train, &kernel, data)?;
    let residuals = model.residuals_lenient(model.centers())?;
    let file = ModelFile::from_model(
        &model,
        VariantSpec::Simplified {
            beta_koop: cfg.eval_beta_koop(),
        },
        train.beta_modes,
        cfg.eval.modes,
        residuals.clone(),
    );
    let p = rec.path("model.json");
    rec.check_output(&p)?;
    file.write(&p)?;
    rec.written(&p)?;
    Ok(TrainSummary {
        history,
        kernel,
        eigenvalues: model.eigenvalues().to_vec(),
        residuals,
    })
}

fn log_epochs(history: &TrainHistory) {
    for e in &history.epochs {
        let m = &e.mean;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
        log::info!(
            "epoch {:>4} beta_koop {:.0e} pred {} dict {} eig {} eig_pred {} total {:.4e}",
            e.epoch,
            e.beta_koop,
            fmt(m.pred),
            fmt(m.dict),
            fmt(m.eig),
            fmt(m.eig_pred),
            m.total
        );
    }
}

/// Trains from the config kernel, or from the learned values of `kernel` when given.
pub fn train(
    cfg: &ExperimentConfig,
    data_path: &Path,
    kernel: Option<&Path>,
    out: &Path,
    checkpoints: bool,
) -> Result<(Manifest, TrainSummary)> {
    cfg.validate()?;
    let mut rec = Recorder::new("train", cfg, out);
    let data = load_data(&mut rec, data_path, cfg)?.snapshots()?;
    let (start, initial) = match kernel {
        Some(p) => {
            let c = load_checkpoint(&mut rec, p)?;
            (c.learned_kernel()?, c.initial_kernel()?)
        }
        None => {
            let k = cfg.initial_kernel()?;
            (k.clone(), k)
        }
    };
    let (_, history) = trainer::train(&start, &data, &cfg.train)?;
    log_epochs(&history);
    let summary = write_training(&mut rec, cfg, &cfg.train, &initial, history, &data, checkpoints)?;
    Ok((rec.finish()?, summary))
}

#[derive(Debug, Clone)]
pub struct PruneSummary {
    pub kept: Vec<usize>,
    pub pruned: KernelCheckpoint,
    /// Present when the survivors were retrained.
    pub retrained: Option<TrainSummary>,
}

/// Writes `pruned.toml` (learned and initial values of the survivors). With
/// training data and `prune.epochs > 0`, retrains the survivors from the
/// values `prune.reset` selects and writes the training outputs as well.
pub fn prune(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_path: Option<&Path>,
    out: &Path,
    checkpoints: bool,
) -> Result<(Manifest, PruneSummary)> {
    cfg.validate()?;
    let mut rec = Recorder::new("prune", cfg, out);
    let ckpt = load_checkpoint(&mut rec, checkpoint)?;
    let learned = ckpt.learned_kernel()?;
    let initial = ckpt.initial_kernel()?;
    if learned.len() != initial.len() {
        return Err(Error::InvalidKernel(
            "checkpoint learned and initial kernels differ in length".into(),
        ));
    }
    let kept = cfg.prune.policy.policy().select(learned.weights())?;
    let pruned = KernelCheckpoint::new(&learned.subset(&kept)?, &initial.subset(&kept)?, ckpt.epoch);
    rec.text("pruned.toml", &pruned.to_toml())?;
    log::info!("kept primitives {kept:?}");
    let retrained = match data_path {
        Some(p) if cfg.prune.epochs > 0 => {
            let data = load_data(&mut rec, p, cfg)?.snapshots()?;
            let train_cfg = TrainConfig {
                epochs: cfg.prune.epochs,
                ..cfg.train.clone()
            };
            let (_, history) = trainer::prune_and_retrain(
                &learned,
                &initial,
                &data,
                &train_cfg,
                &cfg.prune.policy.policy(),
                cfg.prune.reset,
            )?;
            log_epochs(&history);
            let start = initial.subset(&kept)?;
            Some(write_training(
                &mut rec,
                cfg,
                &train_cfg,
                &start,
                history,
                &data,
                checkpoints,
            )?)
        }
        _ => None,
    };
    Ok((
        rec.finish()?,
        PruneSummary {
            kept,
            pruned,
            retrained,
        },
    ))
}

/// Continues training the learned kernel on `finetune.n_centers` freshly drawn centers.
pub fn finetune(
    cfg: &ExperimentConfig,
    data_path: &Path,
    checkpoint: &Path,
    out: &Path,
    checkpoints: bool,
) -> Result<(Manifest, TrainSummary)> {
    cfg.validate()?;
    let mut rec = Recorder::new("finetune", cfg, out);
    let data = load_data(&mut rec, data_path, cfg)?.snapshots()?;
    let ckpt = load_checkpoint(&mut rec, checkpoint)?;
    let train_cfg = TrainConfig {
        n_centers: cfg.finetune.n_centers,
        epochs: cfg.finetune.epochs,
        ..cfg.train.clone()
    };
    train_cfg.validate()?;
    if train_cfg.n_centers > data.len() {
        return Err(Error::config(
            "finetune.n_centers",
            format!("{} centers requested from {} rows", train_cfg.n_centers, data.len()),
        ));
    }
    let (_, history) = trainer::fine_tune(&ckpt.learned_kernel()?, &data, &train_cfg)?;
    log_epochs(&history);
    let summary = write_training(
        &mut rec,
        cfg,
        &train_cfg,
        &ckpt.initial_kernel()?,
        history,
        &data,
        checkpoints,
    )?;
    Ok((rec.finish()?, summary))
}

#[derive(Debug, Clone)]
pub struct TrajectoryPrediction {
    pub trajectory: usize,
    /// `x_0, ..., x_T`.
    pub truth: Vec<Vec<f64>>,
    /// Row `t - 1` holds step `t`; shorter than the horizon after a non-finite step.
    pub predicted: Mat<f64>,
    /// First step whose prediction is non-finite or exceeds the divergence bound.
    pub diverged_at: Option<usize>,
    /// Mean squared error over the steps with ground truth.
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub method: PredictMethod,
    pub horizon: usize,
    pub trajectories: Vec<TrajectoryPrediction>,
    /// Mean over finite trajectories of the squared error at each step.
    pub step_mse: Vec<f64>,
}

impl PredictSummary {
    pub fn diverged(&self) -> usize {
        self.trajectories.iter().filter(|t| t.diverged_at.is_some()).count()
    }

    pub fn mean_mse(&self) -> f64 {
        let finite: Vec<f64> = self
            .trajectories
            .iter()
            .filter(|t| t.diverged_at.is_none())
            .map(|t| t.mse)
            .collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }
}

fn predict_one(
    model: &KoopmanModel,
    id: usize,
    truth: Vec<Vec<f64>>,
    horizon: usize,
    method: PredictMethod,
) -> Result<TrajectoryPrediction> {
    let (predicted, mut diverged_at) = match model.predict(&truth[0], horizon, method) {
        Ok(p) => (p, None),
        Err(Error::Diverged { last_finite_step }) => {
            let p = model.predict(&truth[0], last_finite_step, method)?;
            (p, Some(last_finite_step + 1))
        }
        Err(e) => return Err(e),
    };
    let bound = DIVERGENCE_FACTOR * truth.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let d = predicted.ncols();
    let mut sq = 0.0;
    let mut counted = 0;
    for t in 0..predicted.nrows() {
        let row: Vec<f64> = (0..d).map(|j| predicted[(t, j)]).collect();
        if diverged_at.is_none() && norm(&row) > bound {
            diverged_at = Some(t + 1);
        }
        if let Some(x) = truth.get(t + 1) {
            sq += row.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            counted += 1;
        }
    }
    Ok(TrajectoryPrediction {
        trajectory: id,
        truth,
        predicted,
        diverged_at,
        mse: if counted > 0 { sq / counted as f64 } else { 0.0 },
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Predicts every trajectory of a stride-1 dataset from its initial state.
/// Writes `predictions/traj-NNNN.csv`, `prediction_trajectories.csv` and `prediction_steps.csv`.
pub fn predict(
    cfg: &ExperimentConfig,
    model_path: &Path,
    data_path: &Path,
    method: PredictMethod,
    horizon: usize,
    out: &Path,
) -> Result<(Manifest, PredictSummary)> {
    cfg.validate()?;
    let mut rec = Recorder::new("predict", cfg, out);
    let model = ModelFile::read(model_path)?.to_model()?;
    rec.input(model_path)?;
    let data = load_data(&mut rec, data_path, cfg)?;
    let trajs = data.trajectories()?;
    let preds = map_rows(trajs.len(), |i| {
        let (id, states) = &trajs[i];
        predict_one(&model, *id, states.clone(), horizon, method)
    })?;
    for p in &preds {
        rec.text(
            &format!("predictions/traj-{:04}.csv", p.trajectory),
            &io::trajectory_csv(&p.truth[1..], &p.predicted),
        )?;
    }
    let mut w = String::from("trajectory,steps,mse,diverged_at\n");
    for p in &preds {
        let at = p.diverged_at.map_or(String::new(), |s| s.to_string());
        w += &format!("{},{},{},{at}\n", p.trajectory, p.predicted.nrows(), io::fmt_f64(p.mse));
    }
    rec.text("prediction_trajectories.csv", &w)?;
    let steps = preds
        .iter()
        .map(|p| p.predicted.nrows().min(p.truth.len() - 1))
        .max()
        .unwrap_or(0);
    let mut step_mse = Vec::with_capacity(steps);
    let mut w = String::from("step,mse,trajectories\n");
    for t in 0..steps {
        let errs: Vec<f64> = preds
            .iter()
            .filter(|p| p.diverged_at.is_none() && t < p.predicted.nrows() && t + 1 < p.truth.len())
            .map(|p| {
                (0..p.predicted.ncols())
                    .map(|j| (p.predicted[(t, j)] - p.truth[t + 1][j]).powi(2))
                    .sum()
            })
            .collect();
        let m = if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        };
        step_mse.push(m);
        w += &format!("{},{},{}\n", t + 1, io::fmt_f64(m), errs.len());
    }
    rec.text("prediction_steps.csv", &w)?;
    let summary = PredictSummary {
        method,
        horizon,
        trajectories: preds,
        step_mse,
    };
    log::info!(
        "{} trajectories, {} diverged, mean mse {:.4e}",
        summary.trajectories.len(),
        summary.diverged(),
        summary.mean_mse()
    );
    Ok((rec.finish()?, summary))
}

#[derive(Debug, Clone)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<c64>,
    pub residuals: Vec<Option<f64>>,
    /// `exp(i omega j)` for the modulo system.
    pub overlay: Option<Vec<c64>>,
}

impl SpectrumSummary {
    /// Minimum, median and maximum of the finite residuals.
    pub fn residual_stats(&self) -> Option<(f64, f64, f64)> {
        let mut r: Vec<f64> = self.residuals.iter().flatten().copied().collect();
        if r.is_empty() {
            return None;
        }
        r.sort_by(f64::total_cmp);
        let n = r.len();
        let median = if n % 2 == 1 {
            r[n / 2]
        } else {
            0.5 * (r[n / 2 - 1] + r[n / 2])
        };
        Some((r[0], median, r[n - 1]))
    }
}

/// Writes `spectrum.csv` with residuals on the configured evaluation set, and
/// `true_eigenvalues.csv` for the modulo system.
pub fn spectrum(
    cfg: &ExperimentConfig,
    model_path: &Path,
    data_path: Option<&Path>,
    out: &Path,
) -> Result<(Manifest, SpectrumSummary)> {
    cfg.validate()?;
    let mut rec = Recorder::new("spectrum", cfg, out);
    let model = ModelFile::read(model_path)?.to_model()?;
    rec.input(model_path)?;
    let eval_set = match (cfg.eval.residual_set, data_path) {
        (ResidualSet::Centers, _) => model.centers().clone(),
        (_, Some(p)) => load_data(&mut rec, p, cfg)?.snapshots()?,
        (set, None) => {
            return Err(Error::config(
                "eval.residual_set",
                format!("{set:?} residuals need a dataset"),
            ))
        }
    };
    let residuals = model.residuals_lenient(&eval_set)?;
    rec.text("spectrum.csv", &io::spectrum_csv(model.eigenvalues(), &residuals))?;
    let overlay = match cfg.system {
        SystemSpec::Modulo(m) => {
            let truth = modulo_true_eigenvalues(m.omega, MODULO_OVERLAY);
            let mut w = String::from("j,re,im\n");
            for (j, l) in truth.iter().enumerate() {
                w += &format!("{j},{},{}\n", io::fmt_f64(l.re), io::fmt_f64(l.im));
            }
            rec.text("true_eigenvalues.csv", &w)?;
            Some(truth)
        }
        _ => None,
    };
    let summary = SpectrumSummary {
        eigenvalues: model.eigenvalues().to_vec(),
        residuals,
        overlay,
    };
    match summary.residual_stats() {
        Some((lo, med, hi)) => log::info!(
            "{} eigenvalues, residual min {lo:.3e} median {med:.3e} max {hi:.3e}",
            summary.eigenvalues.len()
        ),
        None => log::info!("{} eigenvalues, no finite residuals", summary.eigenvalues.len()),
    }
    Ok((rec.finish()?, summary))
}

/// Evaluates every loss for a kernel on the epoch-1 batches of a dataset,
/// at the evaluation `beta_koop`. Writes `losses.csv` (epoch column 0).
pub fn losses(
    cfg: &ExperimentConfig,
    data_path: &Path,
    kernel: Option<&Path>,
    out: &Path,
) -> Result<(Manifest, Vec<LossReport>)> {
    cfg.validate()?;
    let mut rec = Recorder::new("losses", cfg, out);
    let data = load_data(&mut rec, data_path, cfg)?.snapshots()?;
    let k = match kernel {
        Some(p) => load_checkpoint(&mut rec, p)?.learned_kernel()?,
        None => cfg.initial_kernel()?,
    };
    let mut tc = cfg.train.clone();
    tc.tracking.sk = true;
    tc.tracking.tr = true;
    let centers = trainer::subsample_centers(&data, tc.n_centers, tc.seed)?;
    let beta = cfg.eval_beta_koop();
    let mut history = TrainHistory {
        initial_params: k.params(),
        epochs: Vec::new(),
        batches: Vec::new(),
        final_kernel: k.clone(),
    };
    let mut reports = Vec::new();
    for (b, batch) in trainer::make_batches(&data, tc.batches, tc.seed, 1).iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        let r = trainer::step(&k, &centers, batch, beta, &tc)?.evaluation.report;
        history.batches.push(trainer::BatchRecord {
            epoch: 0,
            batch: b + 1,
            report: r.clone(),
        });
        reports.push(r);
    }
    rec.text("losses.csv", &io::history_csv(&history))?;
    Ok((rec.finish()?, reports))
}

/// Runs the simplified/truncated equivalence oracle. With a config, its kernel
/// is used on random points of the system's dimension. Writes `equivalence.csv`.
pub fn equivalence_check(
    cfg: Option<&ExperimentConfig>,
    eq: &EquivalenceConfig,
    out: &Path,
) -> Result<(Manifest, EquivalenceReport)> {
    let (kernel, dim, config_text) = match cfg {
        Some(c) => {
            c.validate()?;
            (Some(c.initial_kernel()?), Some(c.system.dim()), c.to_toml())
        }
        None => (None, None, String::new()),
    };
    let text = format!(
        "{config_text}\n[equivalence]\n{}",
        toml::to_string(eq).expect("serializable")
    );
    let mut manifest = Manifest::new("equivalence-check", &text, eq.seed);
    let report = equivalence::run(eq, kernel.as_ref(), dim)?;
    let mut w = String::from("instance,n_points,nonzero,eig_mismatch,operator_mismatch,vector_defect\n");
    for (i, r) in report.instances.iter().enumerate() {
        w += &format!(
            "{i},{},{},{},{},{}\n",
            r.n_points,
            r.nonzero,
            io::fmt_f64(r.eig_mismatch),
            io::fmt_f64(r.operator_mismatch),
            io::fmt_f64(r.vector_defect)
        );
    }
    let p = out.join("equivalence.csv");
    io::write_text(&p, &w)?;
    manifest.outputs.push(FileDigest::of(&p)?);
    manifest.write(&out.join("manifest-equivalence-check.json"))?;
    Ok((manifest, report))
}
