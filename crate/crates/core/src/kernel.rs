//! Parameterized primitive kernels and their normalized weighted sum.
//!
//! The learnable kernel is
//!
//! ```text
//! g(x, y) = sum_i (w_i / w_bar)^2 * g_i(x, y),   w_bar = sum_j |w_j|
//! ```
//!
//! where each `g_i` is a [`PrimitiveKernel`] with its own inner parameters.
//! Parameters are exposed as one flat vector: the outer weights first, then
//! the inner parameters of each primitive in order.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to `sigma^2` so RBF-type kernels stay finite as `sigma -> 0`.
pub const SIGMA_EPS: f64 = 1e-12;

/// Fixed (non-learnable) feature map applied before an RBF kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// Maps every coordinate `x_k` to `(cos x_k, sin x_k)`.
    CosSin,
}

impl Embedding {
    fn sq_dist(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Embedding::CosSin => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| {
                    let dc = a.cos() - b.cos();
                    let ds = a.sin() - b.sin();
                    dc * dc + ds * ds
                })
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
    Cosine,
    Nngp,
    EmbeddedRbf,
}

impl KernelKind {
    pub fn param_count(self) -> usize {
        match self {
            KernelKind::Nngp => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Linear => "linear",
            KernelKind::Cosine => "cosine",
            KernelKind::Nngp => "nngp",
            KernelKind::EmbeddedRbf => "embedded_rbf",
        }
    }
}

/// A single parameterized kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveKernel {
    /// `exp(-|x-y|^2 / (2 sigma^2))`
    Rbf { sigma: f64 },
    /// `c1^2 <x, y>`
    Linear { c1: f64 },
    /// `cos(a |x-y|^2)`; not positive semidefinite in general.
    Cosine { a: f64 },
    /// Closed-form infinite-width ReLU network covariance.
    Nngp { b1: f64, b2: f64 },
    /// RBF kernel applied to a fixed embedding of the inputs.
    EmbeddedRbf { sigma: f64, embedding: Embedding },
}

/// Pairwise quantities shared by all primitives for one `(x, y)` pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairStats {
    sq_dist: f64,
    dot: f64,
    xx: f64,
    yy: f64,
    emb_sq_dist: f64,
    dim: usize,
}

impl PairStats {
    fn new(x: &[f64], y: &[f64], xx: f64, yy: f64, embedding: Option<Embedding>) -> Self {
        let mut sq_dist = 0.0;
        let mut dot = 0.0;
        for (&a, &b) in x.iter().zip(y) {
            let d = a - b;
            sq_dist += d * d;
            dot += a * b;
        }
        let emb_sq_dist = embedding.map_or(0.0, |e| e.sq_dist(x, y));
        PairStats {
            sq_dist,
            dot,
            xx,
            yy,
            emb_sq_dist,
            dim: x.len(),
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

struct NngpTerms {
    g0_xy: f64,
    g0_x: f64,
    g0_y: f64,
    s: f64,
    omega: f64,
    j: f64,
}

fn nngp_terms(b1: f64, b2: f64, st: &PairStats) -> Result<NngpTerms> {
    let d = st.dim as f64;
    let b1s = b1 * b1;
    let b2s = b2 * b2;
    let g0_xy = b1s * st.dot / d + b2s;
    let g0_x = b1s * st.xx / d + b2s;
    let g0_y = b1s * st.yy / d + b2s;
    if !(g0_x > 0.0 && g0_y > 0.0) {
        return Err(Error::Numeric("nngp kernel: zero diagonal value g0(x, x)".into()));
    }
    let s = (g0_x * g0_y).sqrt();
    let rho = (g0_xy / s).clamp(-1.0, 1.0);
    let omega = rho.acos();
    let j = omega.sin() + (PI - omega) * omega.cos();
    Ok(NngpTerms {
        g0_xy,
        g0_x,
        g0_y,
        s,
        omega,
        j,
    })
}

impl PrimitiveKernel {
    pub fn kind(&self) -> KernelKind {
        match self {
            PrimitiveKernel::Rbf { .. } => KernelKind::Rbf,
            PrimitiveKernel::Linear { .. } => KernelKind::Linear,
            PrimitiveKernel::Cosine { .. } => KernelKind::Cosine,
            PrimitiveKernel::Nngp { .. } => KernelKind::Nngp,
            PrimitiveKernel::EmbeddedRbf { .. } => KernelKind::EmbeddedRbf,
        }
    }

    /// Builds a primitive from its kind and ordered inner parameters.
    pub fn from_params(kind: KernelKind, params: &[f64]) -> Result<Self> {
        if params.len() != kind.param_count() {
            return Err(Error::InvalidKernel(format!(
                "{} expects {} parameter(s), got {}",
                kind.name(),
                kind.param_count(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel parameter",
                index: i,
            });
        }
        Ok(match kind {
            KernelKind::Rbf => PrimitiveKernel::Rbf { sigma: params[0] },
            KernelKind::Linear => PrimitiveKernel::Linear { c1: params[0] },
            KernelKind::Cosine => PrimitiveKernel::Cosine { a: params[0] },
            KernelKind::Nngp => PrimitiveKernel::Nngp {
                b1: params[0],
                b2: params[1],
            },
            KernelKind::EmbeddedRbf => PrimitiveKernel::EmbeddedRbf {
                sigma: params[0],
                embedding: Embedding::CosSin,
            },
        })
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            PrimitiveKernel::Rbf { sigma } => vec![sigma],
            PrimitiveKernel::Linear { c1 } => vec![c1],
            PrimitiveKernel::Cosine { a } => vec![a],
            PrimitiveKernel::Nngp { b1, b2 } => vec![b1, b2],
            PrimitiveKernel::EmbeddedRbf { sigma, .. } => vec![sigma],
        }
    }

    pub fn param_count(&self) -> usize {
        self.kind().param_count()
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            PrimitiveKernel::Rbf { sigma } => *sigma = p[0],
            PrimitiveKernel::Linear { c1 } => *c1 = p[0],
            PrimitiveKernel::Cosine { a } => *a = p[0],
            PrimitiveKernel::Nngp { b1, b2 } => {
                *b1 = p[0];
                *b2 = p[1];
            }
            PrimitiveKernel::EmbeddedRbf { sigma, .. } => *sigma = p[0],
        }
    }

    fn embedding(&self) -> Option<Embedding> {
        match self {
            PrimitiveKernel::EmbeddedRbf { embedding, .. } => Some(*embedding),
            _ => None,
        }
    }

    /// Evaluates the primitive on a single pair of points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        let st = PairStats::new(x, y, dot(x, x), dot(y, y), self.embedding());
        self.eval_stats(&st)
    }

    pub(crate) fn eval_stats(&self, st: &PairStats) -> Result<f64> {
        Ok(match *self {
            PrimitiveKernel::Rbf { sigma } => rbf(sigma, st.sq_dist),
            PrimitiveKernel::EmbeddedRbf { sigma, .. } => rbf(sigma, st.emb_sq_dist),
            PrimitiveKernel::Linear { c1 } => c1 * c1 * st.dot,
            PrimitiveKernel::Cosine { a } => (a * st.sq_dist).cos(),
            PrimitiveKernel::Nngp { b1, b2 } => {
                let t = nngp_terms(b1, b2, st)?;
                b2 * b2 + b1 * b1 / (2.0 * PI) * t.s * t.j
            }
        })
    }

    /// Writes the partial derivatives w.r.t. the inner parameters into `out`.
    pub(crate) fn grad_stats(&self, st: &PairStats, out: &mut [f64]) -> Result<()> {
        match *self {
            PrimitiveKernel::Rbf { sigma } => out[0] = rbf_dsigma(sigma, st.sq_dist),
            PrimitiveKernel::EmbeddedRbf { sigma, .. } => out[0] = rbf_dsigma(sigma, st.emb_sq_dist),
            PrimitiveKernel::Linear { c1 } => out[0] = 2.0 * c1 * st.dot,
            PrimitiveKernel::Cosine { a } => out[0] = -(a * st.sq_dist).sin() * st.sq_dist,
            PrimitiveKernel::Nngp { b1, b2 } => {
                let t = nngp_terms(b1, b2, st)?;
                let d = st.dim as f64;
                let scale = b1 * b1 / (2.0 * PI);
                // derivative of the arccos term through rho: dJ/drho = pi - omega
                let through = |dg_xy: f64, dg_x: f64, dg_y: f64| {
                    let ds = (dg_x * t.g0_y + t.g0_x * dg_y) / (2.0 * t.s);
                    let drho = dg_xy / t.s - t.g0_xy * ds / (t.s * t.s);
                    ds * t.j + t.s * (PI - t.omega) * drho
                };
                let db1 = through(2.0 * b1 * st.dot / d, 2.0 * b1 * st.xx / d, 2.0 * b1 * st.yy / d);
                let db2 = through(2.0 * b2, 2.0 * b2, 2.0 * b2);
                out[0] = 2.0 * b1 / (2.0 * PI) * t.s * t.j + scale * db1;
                out[1] = 2.0 * b2 + scale * db2;
            }
        }
        Ok(())
    }
}

fn rbf(sigma: f64, r2: f64) -> f64 {
    (-r2 / (2.0 * (sigma * sigma + SIGMA_EPS))).exp()
}

fn rbf_dsigma(sigma: f64, r2: f64) -> f64 {
    let s2 = sigma * sigma + SIGMA_EPS;
    rbf(sigma, r2) * r2 * sigma / (s2 * s2)
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Closed-form NNGP (ReLU) kernel on a single pair.
pub fn eval_nngp(b1: f64, b2: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    PrimitiveKernel::Nngp { b1, b2 }.eval(x, y)
}

/// Partial derivatives of a [`WeightedKernelSum`] evaluated at one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    /// `dg/dw_i`, including the chain rule through `w_bar`.
    pub outer: Vec<f64>,
    /// `dg/dtheta_{i,k}` per primitive.
    pub inner: Vec<Vec<f64>>,
}

impl ParamGradient {
    /// Same layout as [`WeightedKernelSum::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.outer.clone();
        for g in &self.inner {
            v.extend_from_slice(g);
        }
        v
    }
}

/// Which primitives survive a pruning pass.
#[derive(Debug, Clone, PartialEq)]
pub enum PrunePolicy {
    /// Keep every primitive.
    All,
    /// Keep exactly these (0-based) indices.
    Indices(Vec<usize>),
    /// Drop primitives with `|w_i| < threshold`.
    Threshold(f64),
    /// Keep the `n` primitives with the largest `|w_i|`; lower index wins ties.
    KeepLargest(usize),
}

impl PrunePolicy {
    /// Indices retained from `weights`, in ascending order.
    pub fn select(&self, weights: &[f64]) -> Result<Vec<usize>> {
        let keep: Vec<usize> = match self {
            PrunePolicy::All => (0..weights.len()).collect(),
            PrunePolicy::Indices(idx) => {
                let mut idx = idx.clone();
                idx.sort_unstable();
                idx.dedup();
                if let Some(&bad) = idx.iter().find(|&&i| i >= weights.len()) {
                    return Err(Error::InvalidKernel(format!(
                        "prune index {bad} out of range for {} primitives",
                        weights.len()
                    )));
                }
                idx
            }
            PrunePolicy::Threshold(t) => (0..weights.len()).filter(|&i| weights[i].abs() >= *t).collect(),
            PrunePolicy::KeepLargest(n) => {
                let mut order: Vec<usize> = (0..weights.len()).collect();
                // stable sort keeps the lower index first among equal |w|
                order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()));
                let mut idx: Vec<usize> = order.into_iter().take(*n).collect();
                idx.sort_unstable();
                idx
            }
        };
        if keep.is_empty() {
            return Err(Error::PruneEmpty);
        }
        Ok(keep)
    }
}

/// Normalized weighted sum of primitive kernels; the learnable object.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKernelSum {
    primitives: Vec<PrimitiveKernel>,
    weights: Vec<f64>,
}

/// Row-major copy of a point matrix with cached squared norms.
pub(crate) struct PreparedPoints {
    rows: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
}

impl PreparedPoints {
    pub(crate) fn new(m: MatRef<'_, f64>) -> Self {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        let sq_norms = rows.iter().map(|r| dot(r, r)).collect();
        PreparedPoints { rows, sq_norms }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

impl WeightedKernelSum {
    pub fn new(primitives: Vec<PrimitiveKernel>, weights: Vec<f64>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::InvalidKernel("kernel needs at least one primitive".into()));
        }
        if primitives.len() != weights.len() {
            return Err(Error::InvalidKernel(format!(
                "{} primitives but {} outer weights",
                primitives.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                context: "outer weight",
                index: i,
            });
        }
        for p in &primitives {
            if let Some(i) = p.params().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "kernel parameter",
                    index: i,
                });
            }
            if p.kind() == KernelKind::Cosine {
                log::warn!("cosine primitive cos(a|x-y|^2) is not positive semidefinite in general");
            }
        }
        Ok(WeightedKernelSum { primitives, weights })
    }

    /// A sum with one primitive and unit weight.
    pub fn single(primitive: PrimitiveKernel) -> Self {
        WeightedKernelSum {
            primitives: vec![primitive],
            weights: vec![1.0],
        }
    }

    pub fn primitives(&self) -> &[PrimitiveKernel] {
        &self.primitives
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// `w_bar = sum |w_i|`
    pub fn weight_l1(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// `w_i / w_bar`
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let wbar = self.checked_wbar()?;
        Ok(self.weights.iter().map(|w| w / wbar).collect())
    }

    fn checked_wbar(&self) -> Result<f64> {
        let wbar = self.weight_l1();
        if wbar > 0.0 && wbar.is_finite() {
            Ok(wbar)
        } else {
            Err(Error::DegenerateKernel)
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.primitives.iter().map(|p| p.param_count()).sum::<usize>()
    }

    /// Outer weights followed by each primitive's inner parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        for p in &self.primitives {
            v.extend(p.params());
        }
        v
    }

    /// Inner parameters only, flattened.
    pub fn inner_params(&self) -> Vec<f64> {
        self.primitives.iter().flat_map(|p| p.params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel parameter",
                index: i,
            });
        }
        let m = self.weights.len();
        self.weights.copy_from_slice(&params[..m]);
        let mut off = m;
        for p in &mut self.primitives {
            let n = p.param_count();
            p.set_params(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn embedding(&self) -> Option<Embedding> {
        self.primitives.iter().find_map(|p| p.embedding())
    }

    fn stats(&self, x: &[f64], y: &[f64], xx: f64, yy: f64) -> PairStats {
        PairStats::new(x, y, xx, yy, self.embedding())
    }

    fn eval_with(&self, st: &PairStats, wbar: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (i, (p, w)) in self.primitives.iter().zip(&self.weights).enumerate() {
            let v = p.eval_stats(st)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "primitive kernel",
                    index: i,
                });
            }
            let wn = w / wbar;
            acc += wn * wn * v;
        }
        Ok(acc)
    }

    /// `sum_i (w_i / w_bar)^2 g_i(x, y)`
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        let wbar = self.checked_wbar()?;
        self.eval_with(&self.stats(x, y, dot(x, x), dot(y, y)), wbar)
    }

    fn grad_with(&self, st: &PairStats, wbar: f64, out: &mut [f64]) -> Result<()> {
        let m = self.weights.len();
        let mut values = Vec::with_capacity(m);
        let mut total = 0.0;
        let mut off = m;
        for (i, (p, w)) in self.primitives.iter().zip(&self.weights).enumerate() {
            let v = p.eval_stats(st)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "primitive kernel",
                    index: i,
                });
            }
            let wn = w / wbar;
            total += wn * wn * v;
            values.push(v);
            let n = p.param_count();
            p.grad_stats(st, &mut out[off..off + n])?;
            for g in &mut out[off..off + n] {
                *g *= wn * wn;
            }
            off += n;
        }
        // d/dw_j of (w_i/w_bar)^2 picks up -2 w_i^2 sign(w_j) / w_bar^3 through w_bar
        for j in 0..m {
            let w = self.weights[j];
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[j] = 2.0 * w * values[j] / (wbar * wbar) - 2.0 * sign * total / wbar;
        }
        Ok(())
    }

    /// Exact partial derivatives of [`eval`](Self::eval) w.r.t. every parameter.
    pub fn grad_params(&self, x: &[f64], y: &[f64]) -> Result<ParamGradient> {
        check_dims(x, y)?;
        let wbar = self.checked_wbar()?;
        let st = self.stats(x, y, dot(x, x), dot(y, y));
        let mut flat = vec![0.0; self.param_count()];
        self.grad_with(&st, wbar, &mut flat)?;
        let m = self.weights.len();
        let mut inner = Vec::with_capacity(m);
        let mut off = m;
        for p in &self.primitives {
            let n = p.param_count();
            inner.push(flat[off..off + n].to_vec());
            off += n;
        }
        flat.truncate(m);
        Ok(ParamGradient { outer: flat, inner })
    }

    /// Gram matrix with entry `(i, j) = g(a_i, b_j)`.
    pub fn gram(&self, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                got: b.ncols(),
            });
        }
        let pa = PreparedPoints::new(a);
        let pb = PreparedPoints::new(b);
        self.gram_prepared(&pa, &pb)
    }

    pub(crate) fn gram_prepared(&self, a: &PreparedPoints, b: &PreparedPoints) -> Result<Mat<f64>> {
        let wbar = self.checked_wbar()?;
        let row = |i: usize| -> Result<Vec<f64>> {
            (0..b.len())
                .map(|j| {
                    let st = self.stats(&a.rows[i], &b.rows[j], a.sq_norms[i], b.sq_norms[j]);
                    self.eval_with(&st, wbar).map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFinite {
                            context: "gram entry (row-major index)",
                            index: i * b.len() + j,
                        },
                        other => other,
                    })
                })
                .collect()
        };
        let rows = map_rows(a.len(), row)?;
        Ok(Mat::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
    }

    /// `sum_ij coeff_ij * grad g(a_i, b_j)` in the flat parameter layout.
    ///
    /// This is the chain rule for any scalar loss whose dependence on the
    /// kernel goes through the Gram matrix `gram(a, b)`, with
    /// `coeff = dL/dGram`.
    pub fn gram_grad_contract(
        &self,
        a: MatRef<'_, f64>,
        b: MatRef<'_, f64>,
        coeff: MatRef<'_, f64>,
    ) -> Result<Vec<f64>> {
        if coeff.nrows() != a.nrows() || coeff.ncols() != b.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows() * b.nrows(),
                got: coeff.nrows() * coeff.ncols(),
            });
        }
        let pa = PreparedPoints::new(a);
        let pb = PreparedPoints::new(b);
        let wbar = self.checked_wbar()?;
        let np = self.param_count();
        let row = |i: usize| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; np];
            let mut g = vec![0.0; np];
            for j in 0..pb.len() {
                let c = coeff[(i, j)];
                if c == 0.0 {
                    continue;
                }
                let st = self.stats(&pa.rows[i], &pb.rows[j], pa.sq_norms[i], pb.sq_norms[j]);
                self.grad_with(&st, wbar, &mut g)?;
                for (s, gk) in acc.iter_mut().zip(&g) {
                    *s += c * gk;
                }
            }
            Ok(acc)
        };
        let rows = map_rows(pa.len(), row)?;
        let mut total = vec![0.0; np];
        for r in rows {
            for (t, v) in total.iter_mut().zip(r) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// Removes primitives according to `policy`; surviving weights are kept as-is.
    pub fn prune(&self, policy: &PrunePolicy) -> Result<WeightedKernelSum> {
        self.subset(&policy.select(&self.weights)?)
    }

    /// The primitives at `idx`, in that order, with their current parameters.
    pub fn subset(&self, idx: &[usize]) -> Result<WeightedKernelSum> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidKernel(format!(
                "index {bad} out of range for {} primitives",
                self.len()
            )));
        }
        WeightedKernelSum::new(
            idx.iter().map(|&i| self.primitives[i].clone()).collect(),
            idx.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn map_rows<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_rows<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// Probes `f` for symmetry on the given points; rejects it when
/// `|f(x, y) - f(y, x)|` exceeds `tol` relative to the entry scale.
pub fn ensure_symmetric(f: impl Fn(&[f64], &[f64]) -> f64, points: MatRef<'_, f64>, tol: f64) -> Result<()> {
    let p = PreparedPoints::new(points);
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            let a = f(&p.rows[i], &p.rows[j]);
            let b = f(&p.rows[j], &p.rows[i]);
            let d = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            if !d.is_finite() {
                return Err(Error::AsymmetricKernel { defect: f64::INFINITY });
            }
            worst = worst.max(d);
        }
    }
    if worst > tol {
        Err(Error::AsymmetricKernel { defect: worst })
    } else {
        Ok(())
    }
}
