//! Alternating kernel learning: refit `K` and `C_p` with frozen parameters,
//! then take one gradient step on a batch.

use std::hash::{DefaultHasher, Hash, Hasher};

use faer::MatRef;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{PrunePolicy, WeightedKernelSum};
use crate::koopman::{self, fit_tr, KoopmanModel, SnapshotSet};
use crate::losses::{self, LossEvaluation, LossReport, LossWeights};

// Distinct ChaCha streams so center and batch draws never share randomness.
const CENTER_STREAM: u64 = 1;
const BATCH_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
}

/// Which additional losses are evaluated (not trained on) at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Tracking {
    /// dict, eig and eig_pred of the simplified model.
    pub sk: bool,
    /// The truncated-variant suite.
    pub tr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub n_centers: usize,
    pub batches: usize,
    /// `(start_epoch, beta_koop)`, 1-based epochs, strictly increasing.
    pub beta_koop_schedule: Vec<(usize, f64)>,
    pub beta_modes: f64,
    pub loss: LossWeights,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Cap on the gradient 2-norm; diagnostics only.
    pub grad_clip: Option<f64>,
    pub tracking: Tracking,
    /// Truncation tolerance for the tracked truncated model.
    pub rank_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            n_centers: 40,
            batches: 5,
            beta_koop_schedule: vec![(1, 1e-8)],
            beta_modes: 1e-8,
            loss: LossWeights::default(),
            seed: 0,
            optimizer: Optimizer::Sgd,
            grad_clip: None,
            tracking: Tracking::default(),
            rank_tol: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be finite and nonnegative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.n_centers == 0 {
            return Err(Error::config("n_centers", "must be positive"));
        }
        if self.batches == 0 {
            return Err(Error::config("batches", "must be positive"));
        }
        validate_schedule(&self.beta_koop_schedule)?;
        if !(self.beta_modes.is_finite() && self.beta_modes >= 0.0) {
            return Err(Error::config("beta_modes", "must be finite and nonnegative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip", "must be positive"));
            }
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::config("rank_tol", "must lie in (0, 1)"));
        }
        self.loss.validate()
    }
}

fn validate_schedule(schedule: &[(usize, f64)]) -> Result<()> {
    match schedule.first() {
        None => return Err(Error::config("beta_koop_schedule", "must not be empty")),
        Some(&(e, _)) if e != 1 => {
            return Err(Error::config("beta_koop_schedule", "first entry must start at epoch 1"))
        }
        _ => {}
    }
    if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::config(
            "beta_koop_schedule",
            "start epochs must be strictly increasing",
        ));
    }
    if schedule.iter().any(|&(_, b)| !(b.is_finite() && b >= 0.0)) {
        return Err(Error::config(
            "beta_koop_schedule",
            "values must be finite and nonnegative",
        ));
    }
    Ok(())
}

/// Value of the latest entry with `start_epoch <= epoch`.
pub fn schedule_lookup(schedule: &[(usize, f64)], epoch: usize) -> f64 {
    schedule
        .iter()
        .take_while(|&&(start, _)| start <= epoch)
        .last()
        .or(schedule.first())
        .map_or(0.0, |&(_, b)| b)
}

/// `n` distinct rows drawn uniformly, kept in their original order.
pub fn subsample_centers(data: &SnapshotSet, n: usize, seed: u64) -> Result<SnapshotSet> {
    if n > data.len() {
        return Err(Error::TooManyCenters {
            requested: n,
            available: data.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyCenters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CENTER_STREAM);
    let mut idx = index::sample(&mut rng, data.len(), n).into_vec();
    idx.sort_unstable();
    Ok(data.select(&idx))
}

/// Row indices of each batch for `epoch`: a fresh permutation split into
/// contiguous chunks whose sizes differ by at most one.
pub fn batch_indices(n_rows: usize, batches: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BATCH_STREAM_BASE + epoch as u64);
    perm.shuffle(&mut rng);
    let batches = batches.max(1);
    let (base, extra) = (n_rows / batches, n_rows % batches);
    let mut out = Vec::with_capacity(batches);
    let mut start = 0;
    for b in 0..batches {
        let len = base + usize::from(b < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

pub fn make_batches(data: &SnapshotSet, batches: usize, seed: u64, epoch: usize) -> Vec<SnapshotSet> {
    batch_indices(data.len(), batches, seed, epoch)
        .iter()
        .map(|idx| data.select(idx))
        .collect()
}

/// Hash of the bit patterns of `K` and `C_p`.
pub fn operator_hash(k: MatRef<'_, f64>, cp: MatRef<'_, f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for m in [k, cp] {
        (m.nrows(), m.ncols()).hash(&mut h);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)].to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Outcome of one alternating step, before the parameter update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub evaluation: LossEvaluation,
    /// [`operator_hash`] of the `K` and `C_p` the loss was evaluated with.
    pub operator_hash: u64,
}

/// Fits the frozen matrices for `kernel` and evaluates the training loss on `batch`.
pub fn step(
    kernel: &WeightedKernelSum,
    centers: &SnapshotSet,
    batch: &SnapshotSet,
    beta_koop: f64,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let (k, g_xx) = koopman::sk_operator(kernel, centers, beta_koop)?;
    let cp = koopman::projection_from_gram(centers, g_xx.as_ref(), config.beta_modes)?;
    let hash = operator_hash(k.as_ref(), cp.as_ref());
    let [_, _, a_eig, a_eig_pred] = config.loss.alpha;
    let need_spectrum = a_eig > 0.0 || a_eig_pred > 0.0 || config.tracking.sk;
    let mut model = KoopmanModel::from_operator(kernel, centers, k, Some(cp), beta_koop, need_spectrum)?;
    if a_eig_pred > 0.0 || config.tracking.sk {
        model.fit_modes(config.beta_modes)?;
    }
    let mut evaluation = losses::combined_loss(kernel, &model, batch, &config.loss, config.tracking.sk)?;
    debug_assert_eq!(
        operator_hash(model.k(), model.projection().expect("projection set")),
        hash
    );
    if config.tracking.tr {
        let mut tr = fit_tr(kernel, centers, config.rank_tol)?;
        tr.fit_modes(config.beta_modes)?;
        let t = losses::loss_tr_suite(kernel, &tr, batch)?;
        evaluation.report.tr_dict = Some(t.dict);
        evaluation.report.tr_eig = Some(t.eig);
        evaluation.report.tr_eig_pred = t.eig_pred;
    }
    Ok(StepOutcome {
        evaluation,
        operator_hash: hash,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta_koop: f64,
    /// Batch means of every loss.
    pub mean: LossReport,
    /// Parameters after the epoch, in [`WeightedKernelSum::params`] layout.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial_params: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    pub final_kernel: WeightedKernelSum,
}

impl TrainHistory {
    fn new(kernel: &WeightedKernelSum) -> Self {
        TrainHistory {
            initial_params: kernel.params(),
            epochs: Vec::new(),
            batches: Vec::new(),
            final_kernel: kernel.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Per-epoch mean prediction loss.
    pub fn pred_curve(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.mean.pred).collect()
    }

    /// Appends `other`, renumbering its epochs after ours.
    pub fn extend(&mut self, other: TrainHistory) {
        let offset = self.epochs.last().map_or(0, |e| e.epoch);
        self.epochs.extend(other.epochs.into_iter().map(|mut e| {
            e.epoch += offset;
            e
        }));
        self.batches.extend(other.batches.into_iter().map(|mut b| {
            b.epoch += offset;
            b
        }));
        self.final_kernel = other.final_kernel;
    }
}

fn mean_report(reports: &[&LossReport]) -> LossReport {
    fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let v: Vec<f64> = vals.flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
    let n = reports.len().max(1) as f64;
    LossReport {
        pred: mean(reports.iter().map(|r| r.pred)),
        dict: mean(reports.iter().map(|r| r.dict)),
        eig: mean(reports.iter().map(|r| r.eig)),
        eig_pred: mean(reports.iter().map(|r| r.eig_pred)),
        tr_dict: mean(reports.iter().map(|r| r.tr_dict)),
        tr_eig: mean(reports.iter().map(|r| r.tr_eig)),
        tr_eig_pred: mean(reports.iter().map(|r| r.tr_eig_pred)),
        reg: reports.iter().map(|r| r.reg).sum::<f64>() / n,
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
    }
}

/// Trains on fixed centers; `epoch_offset` shifts the schedule and batch seeds.
fn train_on_centers(
    kernel: &WeightedKernelSum,
    data: &SnapshotSet,
    centers: &SnapshotSet,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    let mut kernel = kernel.clone();
    let mut history = TrainHistory::new(&kernel);
    for epoch in 1..=config.epochs {
        let beta_koop = schedule_lookup(&config.beta_koop_schedule, epoch);
        let mut reports = Vec::with_capacity(config.batches);
        for (b, batch) in make_batches(data, config.batches, config.seed, epoch)
            .iter()
            .enumerate()
        {
            if batch.is_empty() {
                continue;
            }
            let out = step(&kernel, centers, batch, beta_koop, config)?;
            let mut grad = out.evaluation.grad;
            let total = out.evaluation.report.total;
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::LossNotFinite {
                    epoch,
                    batch: b + 1,
                    last_params: kernel.params(),
                });
            }
            if let Some(cap) = config.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cap {
                    grad.iter_mut().for_each(|g| *g *= cap / norm);
                }
            }
            let params: Vec<f64> = kernel
                .params()
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - config.learning_rate * g)
                .collect();
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::LossNotFinite {
                    epoch,
                    batch: b + 1,
                    last_params: kernel.params(),
                });
            }
            kernel.set_params(&params)?;
            log::debug!("epoch {epoch} batch {} loss {total:.6e}", b + 1);
            reports.push(BatchRecord {
                epoch,
                batch: b + 1,
                report: out.evaluation.report,
            });
        }
        let mean = mean_report(&reports.iter().map(|r| &r.report).collect::<Vec<_>>());
        log::debug!(
            "epoch {epoch}/{} beta_koop {beta_koop:.1e} mean loss {:.6e}",
            config.epochs,
            mean.total
        );
        history.batches.extend(reports);
        history.epochs.push(EpochRecord {
            epoch,
            beta_koop,
            mean,
            params: kernel.params(),
        });
    }
    history.final_kernel = kernel;
    Ok(history)
}

/// Algorithm: subsample centers once, then per epoch and batch refit and step.
pub fn train(
    kernel: &WeightedKernelSum,
    data: &SnapshotSet,
    config: &TrainConfig,
) -> Result<(WeightedKernelSum, TrainHistory)> {
    config.validate()?;
    if kernel.weight_l1() == 0.0 {
        return Err(Error::DegenerateKernel);
    }
    let centers = subsample_centers(data, config.n_centers, config.seed)?;
    let history = train_on_centers(kernel, data, &centers, config)?;
    Ok((history.final_kernel.clone(), history))
}

/// How surviving primitives start the retraining after a prune.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReset {
    /// Back to the initialization values.
    #[default]
    Initial,
    /// Keep the trained values.
    Continue,
}

/// Prunes `trained` by `policy` and retrains the survivors.
///
/// `initial` must be the kernel training started from; with
/// [`PruneReset::Initial`] the survivors restart from its values.
pub fn prune_and_retrain(
    trained: &WeightedKernelSum,
    initial: &WeightedKernelSum,
    data: &SnapshotSet,
    config: &TrainConfig,
    policy: &PrunePolicy,
    reset: PruneReset,
) -> Result<(WeightedKernelSum, TrainHistory)> {
    if trained.len() != initial.len()
        || trained
            .primitives()
            .iter()
            .zip(initial.primitives())
            .any(|(a, b)| a.kind() != b.kind())
    {
        return Err(Error::InvalidKernel(
            "trained and initial kernels have different primitives".into(),
        ));
    }
    let keep = policy.select(trained.weights())?;
    let start = match reset {
        PruneReset::Initial => initial.subset(&keep)?,
        PruneReset::Continue => trained.subset(&keep)?,
    };
    log::info!("pruned to primitives {keep:?}");
    train(&start, data, config)
}

/// Continues training from the current parameters on freshly drawn centers.
pub fn fine_tune(
    kernel: &WeightedKernelSum,
    data: &SnapshotSet,
    config: &TrainConfig,
) -> Result<(WeightedKernelSum, TrainHistory)> {
    train(kernel, data, config)
}

/// Mean one-step prediction error of `C_p K g(X~, x)` over `data`.
pub fn mean_one_step_error(model: &KoopmanModel, data: &SnapshotSet) -> Result<f64> {
    let cp = model
        .projection()
        .ok_or(Error::MissingComponent("projection matrix (fit_projection)"))?;
    let pred = cp * model.k() * model.dictionary_at(data.x())?;
    let mut err = 0.0;
    for n in 0..data.len() {
        for i in 0..data.dim() {
            let e = pred[(i, n)] - data.y()[(n, i)];
            err += e * e;
        }
    }
    Ok(err / data.len().max(1) as f64)
}
