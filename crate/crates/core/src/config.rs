//! Experiment configuration: system, kernel, training, pruning and evaluation
//! settings in one TOML file. Three presets ship embedded.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Embedding, KernelKind, PrimitiveKernel, PrunePolicy, WeightedKernelSum};
use crate::koopman::PredictMethod;
use crate::systems::SystemSpec;
use crate::trainer::{PruneReset, TrainConfig};

const PRESETS: [(&str, &str); 3] = [
    ("duffing", include_str!("../presets/duffing.toml")),
    ("modulo", include_str!("../presets/modulo.toml")),
    ("kse", include_str!("../presets/kse.toml")),
];

/// One primitive of a kernel sum with its outer weight and named inner parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSpec {
    pub kind: KernelKind,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    /// Accepted for compatibility with published initializations; no kernel uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

impl PrimitiveSpec {
    pub fn from_primitive(p: &PrimitiveKernel, weight: f64) -> Self {
        let mut s = PrimitiveSpec {
            kind: p.kind(),
            weight,
            sigma: None,
            c1: None,
            a: None,
            b1: None,
            b2: None,
            c2: None,
        };
        match *p {
            PrimitiveKernel::Rbf { sigma } | PrimitiveKernel::EmbeddedRbf { sigma, .. } => s.sigma = Some(sigma),
            PrimitiveKernel::Linear { c1 } => s.c1 = Some(c1),
            PrimitiveKernel::Cosine { a } => s.a = Some(a),
            PrimitiveKernel::Nngp { b1, b2 } => {
                s.b1 = Some(b1);
                s.b2 = Some(b2);
            }
        }
        s
    }

    fn to_primitive(&self, index: usize) -> Result<PrimitiveKernel> {
        let field = |name: &str| format!("kernel[{index}].{name}");
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::config(field(name), "missing"));
        let allowed: &[&str] = match self.kind {
            KernelKind::Rbf | KernelKind::EmbeddedRbf => &["sigma"],
            KernelKind::Linear => &["c1"],
            KernelKind::Cosine => &["a"],
            KernelKind::Nngp => &["b1", "b2"],
        };
        for (name, v) in [
            ("sigma", self.sigma),
            ("c1", self.c1),
            ("a", self.a),
            ("b1", self.b1),
            ("b2", self.b2),
        ] {
            if v.is_some() && !allowed.contains(&name) {
                return Err(Error::config(
                    field(name),
                    format!("not a parameter of {}", self.kind.name()),
                ));
            }
        }
        if self.c2.is_some() {
            log::warn!("{}: c2 appears in no kernel formula and is ignored", field("c2"));
        }
        Ok(match self.kind {
            KernelKind::Rbf => PrimitiveKernel::Rbf {
                sigma: need(self.sigma, "sigma")?,
            },
            KernelKind::EmbeddedRbf => PrimitiveKernel::EmbeddedRbf {
                sigma: need(self.sigma, "sigma")?,
                embedding: Embedding::CosSin,
            },
            KernelKind::Linear => PrimitiveKernel::Linear {
                c1: need(self.c1, "c1")?,
            },
            KernelKind::Cosine => PrimitiveKernel::Cosine { a: need(self.a, "a")? },
            KernelKind::Nngp => PrimitiveKernel::Nngp {
                b1: need(self.b1, "b1")?,
                b2: need(self.b2, "b2")?,
            },
        })
    }
}

pub fn kernel_from_specs(specs: &[PrimitiveSpec]) -> Result<WeightedKernelSum> {
    if specs.is_empty() {
        return Err(Error::config("kernel", "needs at least one primitive"));
    }
    let prims = specs
        .iter()
        .enumerate()
        .map(|(i, s)| s.to_primitive(i))
        .collect::<Result<Vec<_>>>()?;
    WeightedKernelSum::new(prims, specs.iter().map(|s| s.weight).collect())
}

pub fn kernel_to_specs(kernel: &WeightedKernelSum) -> Vec<PrimitiveSpec> {
    kernel
        .primitives()
        .iter()
        .zip(kernel.weights())
        .map(|(p, &w)| PrimitiveSpec::from_primitive(p, w))
        .collect()
}

/// Dataset sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_ic: usize,
    pub test_ic: usize,
    pub steps: usize,
    /// Pair stride for the training set: 1 keeps every consecutive pair, 2 every second.
    pub train_stride: usize,
    pub test_stride: usize,
    pub seed: u64,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_ic: 100,
            test_ic: 100,
            steps: 10,
            train_stride: 1,
            test_stride: 1,
            seed: 0,
            test_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PruneRule {
    All,
    KeepLargest { count: usize },
    Threshold { min_abs_weight: f64 },
    Indices { keep: Vec<usize> },
}

impl PruneRule {
    pub fn policy(&self) -> PrunePolicy {
        match self {
            PruneRule::All => PrunePolicy::All,
            PruneRule::KeepLargest { count } => PrunePolicy::KeepLargest(*count),
            PruneRule::Threshold { min_abs_weight } => PrunePolicy::Threshold(*min_abs_weight),
            PruneRule::Indices { keep } => PrunePolicy::Indices(keep.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub policy: PruneRule,
    pub reset: PruneReset,
    /// Retraining budget; 0 keeps the pruned kernel without retraining.
    pub epochs: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            policy: PruneRule::All,
            reset: PruneReset::Initial,
            epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub n_centers: usize,
    pub epochs: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            n_centers: 500,
            epochs: 5,
        }
    }
}

/// How Koopman modes are fitted for spectral prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModesFit {
    /// Regularized least squares against the center targets.
    #[default]
    LeastSquares,
    /// `C_p V` rescaled, so spectral and recursive one-step predictions agree.
    Projection,
}

/// Point set on which spectral residuals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSet {
    #[default]
    Centers,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: usize,
    pub method: PredictMethod,
    pub modes: ModesFit,
    pub residual_set: ResidualSet,
    /// `beta_koop` for the evaluated model; `None` uses the last schedule value.
    pub beta_koop: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon: 10,
            method: PredictMethod::Spectral,
            modes: ModesFit::LeastSquares,
            residual_set: ResidualSet::Centers,
            beta_koop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub data: DataConfig,
    pub kernel: Vec<PrimitiveSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|p| p.0)
    }

    /// The embedded TOML text of a preset.
    pub fn preset_text(name: &str) -> Result<&'static str> {
        PRESETS.iter().find(|p| p.0 == name).map(|p| p.1).ok_or_else(|| {
            let known: Vec<&str> = Self::preset_names().collect();
            Error::config(
                "preset",
                format!("unknown preset {name:?}; known: {}", known.join(", ")),
            )
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml(Self::preset_text(name)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        kernel_from_specs(&self.kernel)?;
        self.train.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("train.{field}"), message),
            other => other,
        })?;
        let d = &self.data;
        if d.train_stride == 0 || d.test_stride == 0 {
            return Err(Error::config("data.train_stride", "strides must be positive"));
        }
        let train_pairs = d.train_ic * d.steps.div_ceil(d.train_stride);
        if self.train.n_centers > train_pairs {
            return Err(Error::config(
                "train.n_centers",
                format!(
                    "{} centers requested but only {train_pairs} training pairs",
                    self.train.n_centers
                ),
            ));
        }
        if let PruneRule::KeepLargest { count: 0 } = self.prune.policy {
            return Err(Error::config("prune.policy.count", "must keep at least one primitive"));
        }
        if self.finetune.n_centers == 0 {
            return Err(Error::config("finetune.n_centers", "must be positive"));
        }
        if let Some(b) = self.eval.beta_koop {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::config("eval.beta_koop", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn initial_kernel(&self) -> Result<WeightedKernelSum> {
        kernel_from_specs(&self.kernel)
    }

    /// `beta_koop` used for evaluation models.
    pub fn eval_beta_koop(&self) -> f64 {
        self.eval
            .beta_koop
            .unwrap_or_else(|| self.train.beta_koop_schedule.last().map_or(0.0, |e| e.1))
    }
}
