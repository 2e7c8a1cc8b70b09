//! On-disk formats: snapshot datasets, kernel checkpoints, fitted models,
//! spectra, loss histories, predicted trajectories and run manifests.
//!
//! Every CSV float is written with 17 significant digits, so a read followed
//! by a write reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{kernel_from_specs, kernel_to_specs, ModesFit, PrimitiveSpec};
use crate::error::{Error, Result};
use crate::kernel::WeightedKernelSum;
use crate::koopman::{fit_sk, fit_tr, KoopmanModel, SnapshotSet, Variant};
use crate::losses::LossReport;
use crate::systems::{PairRecord, SystemSpec};
use crate::trainer::TrainHistory;

/// Lossless decimal form of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("not a number: {s:?}")))
}

fn parse_usize(s: &str, path: &Path) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("not an index: {s:?}")))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV fields are UTF-8")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

/// Sidecar metadata for a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// `train` or `test`.
    pub split: String,
    pub system: SystemSpec,
    pub seed: u64,
    pub n_ic: usize,
    /// Snapshot intervals simulated per initial condition.
    pub steps: usize,
    pub stride: usize,
    pub dt: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<PairRecord>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.meta.system.dim()
    }

    pub fn snapshots(&self) -> Result<SnapshotSet> {
        if self.records.is_empty() {
            return Ok(SnapshotSet::empty(self.dim()));
        }
        let xs: Vec<Vec<f64>> = self.records.iter().map(|r| r.x.clone()).collect();
        let ys: Vec<Vec<f64>> = self.records.iter().map(|r| r.y.clone()).collect();
        SnapshotSet::from_rows(&xs, &ys)
    }

    /// Trajectories reassembled from stride-1 pairs: `x_0, x_1, ..., x_T` per id, in id order.
    pub fn trajectories(&self) -> Result<Vec<(usize, Vec<Vec<f64>>)>> {
        let mut out: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((id, states)) if *id == r.trajectory => {
                    if states.len() != r.step + 1 || states.last() != Some(&r.x) {
                        return Err(Error::Numeric(format!(
                            "trajectory {id} is not a contiguous stride-1 sequence at step {}",
                            r.step
                        )));
                    }
                    states.push(r.y.clone());
                }
                _ => {
                    if r.step != 0 {
                        return Err(Error::Numeric(format!(
                            "trajectory {} does not start at step 0",
                            r.trajectory
                        )));
                    }
                    out.push((r.trajectory, vec![r.x.clone(), r.y.clone()]));
                }
            }
        }
        Ok(out)
    }
}

/// Sidecar path: `train.csv` pairs with `train.toml`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("toml")
}

pub fn dataset_csv(records: &[PairRecord], dim: usize) -> String {
    let mut w = csv_writer();
    let mut header = vec!["trajectory".to_string(), "step".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.extend((0..dim).map(|i| format!("y{i}")));
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let mut row = vec![r.trajectory.to_string(), r.step.to_string()];
        row.extend(r.x.iter().chain(&r.y).map(|&v| fmt_f64(v)));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let dim = data.dim();
    if let Some(r) = data.records.iter().find(|r| r.x.len() != dim || r.y.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.x.len().max(r.y.len()),
        });
    }
    write_text(path, &dataset_csv(&data.records, dim))?;
    let meta = toml::to_string(&data.meta).expect("metadata is serializable");
    write_text(&meta_path(path), &meta)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mpath = meta_path(path);
    let meta: DatasetMeta = toml::from_str(&read_text(&mpath)?).map_err(|e| Error::parse(&mpath, e))?;
    meta.system.validate()?;
    let dim = meta.system.dim();
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let ncols = rdr.headers().map_err(|e| csv_err(path, e))?.len();
    if ncols != 2 + 2 * dim {
        return Err(Error::parse(
            path,
            format!("{ncols} columns, expected {} for dimension {dim}", 2 + 2 * dim),
        ));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let vals = (2..ncols)
            .map(|j| parse_f64(&row[j], path))
            .collect::<Result<Vec<_>>>()?;
        records.push(PairRecord {
            trajectory: parse_usize(&row[0], path)?,
            step: parse_usize(&row[1], path)?,
            x: vals[..dim].to_vec(),
            y: vals[dim..].to_vec(),
        });
    }
    if records.len() != meta.pairs {
        return Err(Error::parse(
            path,
            format!("{} pairs, metadata says {}", records.len(), meta.pairs),
        ));
    }
    Ok(Dataset { meta, records })
}

/// Kernel checkpoint: the learned kernel plus the initialization it started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckpoint {
    /// Last completed epoch; 0 for an untrained kernel.
    pub epoch: usize,
    pub learned: Vec<PrimitiveSpec>,
    pub initial: Vec<PrimitiveSpec>,
}

impl KernelCheckpoint {
    pub fn new(learned: &WeightedKernelSum, initial: &WeightedKernelSum, epoch: usize) -> Self {
        KernelCheckpoint {
            epoch,
            learned: kernel_to_specs(learned),
            initial: kernel_to_specs(initial),
        }
    }

    pub fn learned_kernel(&self) -> Result<WeightedKernelSum> {
        kernel_from_specs(&self.learned)
    }

    pub fn initial_kernel(&self) -> Result<WeightedKernelSum> {
        kernel_from_specs(&self.initial)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("checkpoint is serializable")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_toml())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c: KernelCheckpoint = toml::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))?;
        c.learned_kernel()?;
        c.initial_kernel()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantSpec {
    Simplified { beta_koop: f64 },
    Truncated { rank_tol: f64 },
}

/// A fitted model as text. Loading refits from the kernel and centers and
/// checks the stored operator, so the file cannot silently disagree with the code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kernel: Vec<PrimitiveSpec>,
    pub variant: VariantSpec,
    pub beta_modes: f64,
    pub modes_fit: ModesFit,
    /// Row-major `N x d`.
    pub centers_x: Vec<Vec<f64>>,
    pub centers_y: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    /// `[re, im]` pairs in spectrum order.
    pub eigenvalues: Vec<[f64; 2]>,
    /// Residuals on the centers; `None` for a degenerate eigenfunction.
    pub residuals: Vec<Option<f64>>,
}

fn rows(m: faer::MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Relative disagreement allowed between a stored and a refitted operator.
/// Refitting is deterministic, so on one platform the match is exact.
const MODEL_K_TOL: f64 = 1e-9;

impl ModelFile {
    pub fn from_model(
        model: &KoopmanModel,
        variant: VariantSpec,
        beta_modes: f64,
        modes_fit: ModesFit,
        residuals: Vec<Option<f64>>,
    ) -> Self {
        ModelFile {
            kernel: kernel_to_specs(model.kernel()),
            variant,
            beta_modes,
            modes_fit,
            centers_x: rows(model.centers().x()),
            centers_y: rows(model.centers().y()),
            k: rows(model.k()),
            eigenvalues: model.eigenvalues().iter().map(|l| [l.re, l.im]).collect(),
            residuals,
        }
    }

    /// Rebuilds the model, projection and modes included.
    pub fn to_model(&self) -> Result<KoopmanModel> {
        let kernel = kernel_from_specs(&self.kernel)?;
        let centers = SnapshotSet::from_rows(&self.centers_x, &self.centers_y)?;
        let mut model = match self.variant {
            VariantSpec::Simplified { beta_koop } => fit_sk(&kernel, &centers, beta_koop)?,
            VariantSpec::Truncated { rank_tol } => fit_tr(&kernel, &centers, rank_tol)?,
        };
        let k = model.k();
        let stored_ok = self.k.len() == k.nrows() && self.k.iter().all(|r| r.len() == k.ncols());
        if !stored_ok {
            return Err(Error::Numeric("stored operator has the wrong shape".into()));
        }
        let scale = (0..k.nrows())
            .flat_map(|i| (0..k.ncols()).map(move |j| (i, j)))
            .fold(0.0f64, |m, (i, j)| m.max(k[(i, j)].abs()));
        let defect = (0..k.nrows())
            .flat_map(|i| (0..k.ncols()).map(move |j| (i, j)))
            .fold(0.0f64, |m, (i, j)| m.max((k[(i, j)] - self.k[i][j]).abs()));
        if !(defect <= MODEL_K_TOL * scale.max(1.0)) {
            return Err(Error::Numeric(format!(
                "stored operator differs from refit by {defect:e}"
            )));
        }
        if let Variant::Simplified { .. } = model.variant() {
            model.fit_projection(self.beta_modes)?;
            match self.modes_fit {
                ModesFit::LeastSquares => {
                    model.fit_modes(self.beta_modes)?;
                }
                ModesFit::Projection => {
                    model.modes_from_projection()?;
                }
            }
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model is serializable");
        write_text(path, &(text + "\n"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
    }
}

/// Columns `index, re, im, magnitude, residual`; the residual cell is empty when unknown.
pub fn spectrum_csv(eigenvalues: &[faer::c64], residuals: &[Option<f64>]) -> String {
    let mut w = csv_writer();
    w.write_record(["index", "re", "im", "magnitude", "residual"])
        .expect("in-memory write");
    for (i, l) in eigenvalues.iter().enumerate() {
        let res = opt(residuals.get(i).copied().flatten());
        w.write_record([i.to_string(), fmt_f64(l.re), fmt_f64(l.im), fmt_f64(l.norm()), res])
            .expect("in-memory write");
    }
    finish_csv(w)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt_f64)
}

fn report_cells(r: &LossReport) -> [String; 9] {
    [
        opt(r.pred),
        opt(r.dict),
        opt(r.eig),
        opt(r.eig_pred),
        opt(r.tr_dict),
        opt(r.tr_eig),
        opt(r.tr_eig_pred),
        fmt_f64(r.reg),
        fmt_f64(r.total),
    ]
}

const HISTORY_HEADER: [&str; 11] = [
    "epoch",
    "batch",
    "pred",
    "dict",
    "eig",
    "eig_pred",
    "tr_dict",
    "tr_eig",
    "tr_eig_pred",
    "reg",
    "total",
];

/// One row per batch. Untracked losses are empty cells.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut w = csv_writer();
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for b in &history.batches {
        let mut row = vec![b.epoch.to_string(), b.batch.to_string()];
        row.extend(report_cells(&b.report));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w)
}

/// One row per epoch holding batch means; the batch column is empty.
pub fn epoch_history_csv(history: &TrainHistory) -> String {
    let mut w = csv_writer();
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for e in &history.epochs {
        let mut row = vec![e.epoch.to_string(), String::new()];
        row.extend(report_cells(&e.mean));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w)
}

/// Per-step true and predicted states of one trajectory plus the squared error.
/// Rows stop at the shorter of the two sequences.
pub fn trajectory_csv(truth: &[Vec<f64>], pred: &Mat<f64>) -> String {
    let dim = pred.ncols();
    let mut w = csv_writer();
    let mut header = vec!["step".to_string()];
    header.extend((0..dim).map(|i| format!("true{i}")));
    header.extend((0..dim).map(|i| format!("pred{i}")));
    header.push("sq_err".into());
    w.write_record(&header).expect("in-memory write");
    for t in 0..pred.nrows().min(truth.len()) {
        let mut row = vec![(t + 1).to_string()];
        row.extend(truth[t].iter().map(|&v| fmt_f64(v)));
        row.extend((0..dim).map(|j| fmt_f64(pred[(t, j)])));
        let err: f64 = (0..dim).map(|j| (pred[(t, j)] - truth[t][j]).powi(2)).sum();
        row.push(fmt_f64(err));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// What a command read and wrote. `config` is the full resolved TOML, so
/// rerunning the command on it with the same inputs reproduces every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config_toml: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config_toml.as_bytes()),
            seed,
            config: config_toml.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(
            path,
            &(serde_json::to_string_pretty(self).expect("manifest is serializable") + "\n"),
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
    }
}
