//! Kernel EDMD operators: the simplified (`sk`) and truncated (`tr`) variants.
//!
//! Both are built from the two Gram blocks `G_xx = g(X~, X~)` and
//! `G_xy = g(X~, Y~)`, where row `i` of `G_xy` is the dictionary element
//! `g(., x~_i)` evaluated on the successors. The simplified operator is
//!
//! ```text
//! K_sk = G_xy (G_xx + beta I)^+
//! ```
//!
//! and the truncated one is `K_tr = (Z S^+)^T G_xy (Z S^+)` with
//! `G_xx = Z S^2 Z^T`. The two share their nonzero spectrum.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::kernel::WeightedKernelSum;
use crate::linalg::{self, Spectrum};

/// Paired snapshots: row `n` of `y` is the image of row `n` of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    x: Mat<f64>,
    y: Mat<f64>,
}

impl SnapshotSet {
    pub fn new(x: Mat<f64>, y: Mat<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows() * x.ncols(),
                got: y.nrows() * y.ncols(),
            });
        }
        for (name, m) in [("snapshot x", &x), ("snapshot y", &y)] {
            for i in 0..m.nrows() {
                if (0..m.ncols()).any(|j| !m[(i, j)].is_finite()) {
                    return Err(Error::NonFinite {
                        context: name,
                        index: i,
                    });
                }
            }
        }
        Ok(SnapshotSet { x, y })
    }

    /// Builds a set from row slices of equal length.
    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        let d = xs.first().map_or(0, |r| r.len());
        if xs.len() != ys.len() || xs.iter().chain(ys).any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: ys.first().map_or(0, |r| r.len()),
            });
        }
        Self::new(
            Mat::from_fn(xs.len(), d, |i, j| xs[i][j]),
            Mat::from_fn(ys.len(), d, |i, j| ys[i][j]),
        )
    }

    pub fn empty(dim: usize) -> Self {
        SnapshotSet {
            x: Mat::zeros(0, dim),
            y: Mat::zeros(0, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> MatRef<'_, f64> {
        self.y.as_ref()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> SnapshotSet {
        let d = self.dim();
        SnapshotSet {
            x: Mat::from_fn(idx.len(), d, |i, j| self.x[(idx[i], j)]),
            y: Mat::from_fn(idx.len(), d, |i, j| self.y[(idx[i], j)]),
        }
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.x[(i, j)]).collect()
    }

    pub fn y_row(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.y[(i, j)]).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Variant {
    /// Dictionary of kernel sections at the centers.
    Simplified { beta_koop: f64 },
    /// Reduced coordinates from `G_xx = Z diag(sigma)^2 Z^T`.
    Truncated { z: Mat<f64>, sigma: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    TrToSk,
    SkToTr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMethod {
    /// `Re(C_m Lambda^t Phi(x0))`
    #[default]
    Spectral,
    /// `x_{t+1} = C_p K g(X~, x_t)`
    Recursive,
}

/// One eigenvalue with its left eigenvector and spectral residual.
#[derive(Debug, Clone)]
pub struct EigenpairReport {
    pub eigenvalue: c64,
    pub left_vector: Vec<c64>,
    pub residual: f64,
}

/// A fitted finite-dimensional Koopman approximation.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    kernel: WeightedKernelSum,
    centers: SnapshotSet,
    k: Mat<f64>,
    spectrum: Spectrum,
    projection: Option<Mat<f64>>,
    modes: Option<Mat<c64>>,
    variant: Variant,
}

/// `K_sk = G_xy (G_xx + beta I)^+` together with `G_xx`.
pub fn sk_operator(kernel: &WeightedKernelSum, centers: &SnapshotSet, beta_koop: f64) -> Result<(Mat<f64>, Mat<f64>)> {
    if centers.is_empty() {
        return Err(Error::EmptyCenters);
    }
    let g_xx = kernel.gram(centers.x(), centers.x())?;
    let g_xy = kernel.gram(centers.x(), centers.y())?;
    let k = linalg::regularized_right_solve(g_xy.as_ref(), g_xx.as_ref(), beta_koop)?;
    Ok((k, g_xx))
}

/// `C_p = X~^T (G_xx + beta I)^+`
pub fn projection_from_gram(centers: &SnapshotSet, g_xx: MatRef<'_, f64>, beta_modes: f64) -> Result<Mat<f64>> {
    let xt = centers.x().transpose().to_owned();
    linalg::regularized_right_solve(xt.as_ref(), g_xx, beta_modes)
}

/// Simplified kernel EDMD on the given centers.
pub fn fit_sk(kernel: &WeightedKernelSum, centers: &SnapshotSet, beta_koop: f64) -> Result<KoopmanModel> {
    let (k, _) = sk_operator(kernel, centers, beta_koop)?;
    let spectrum = linalg::eigen_left_right(k.as_ref())?;
    Ok(KoopmanModel {
        kernel: kernel.clone(),
        centers: centers.clone(),
        k,
        spectrum,
        projection: None,
        modes: None,
        variant: Variant::Simplified { beta_koop },
    })
}

/// Truncated kernel EDMD: keeps components with `sigma_i > rank_tol * max(sigma)`.
pub fn fit_tr(kernel: &WeightedKernelSum, centers: &SnapshotSet, rank_tol: f64) -> Result<KoopmanModel> {
    if centers.is_empty() {
        return Err(Error::EmptyCenters);
    }
    let g_xx = kernel.gram(centers.x(), centers.x())?;
    let g_xy = kernel.gram(centers.x(), centers.y())?;
    let (z_full, lam) = linalg::sym_eigen_desc(g_xx.as_ref())?;
    let sig_all: Vec<f64> = lam.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let smax = sig_all.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Err(Error::DegenerateGram);
    }
    let r = sig_all.iter().take_while(|&&s| s > rank_tol * smax).count();
    if r == 0 {
        return Err(Error::DegenerateGram);
    }
    let n = centers.len();
    let z = Mat::from_fn(n, r, |i, j| z_full[(i, j)]);
    let sigma = sig_all[..r].to_vec();
    let zs_inv = Mat::from_fn(n, r, |i, j| z[(i, j)] / sigma[j]);
    let k = zs_inv.transpose() * &g_xy * &zs_inv;
    let spectrum = linalg::eigen_left_right(k.as_ref())?;
    Ok(KoopmanModel {
        kernel: kernel.clone(),
        centers: centers.clone(),
        k,
        spectrum,
        projection: None,
        modes: None,
        variant: Variant::Truncated { z, sigma },
    })
}

impl KoopmanModel {
    /// Wraps an already fitted simplified operator. Without `with_spectrum` the
    /// spectrum is left empty, which is enough for the prediction loss.
    pub fn from_operator(
        kernel: &WeightedKernelSum,
        centers: &SnapshotSet,
        k: Mat<f64>,
        projection: Option<Mat<f64>>,
        beta_koop: f64,
        with_spectrum: bool,
    ) -> Result<Self> {
        let n = centers.len();
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: k.nrows() * k.ncols(),
            });
        }
        let spectrum = if with_spectrum {
            linalg::eigen_left_right(k.as_ref())?
        } else {
            Spectrum {
                values: Vec::new(),
                right: Mat::zeros(n, 0),
                left: Mat::zeros(0, n),
            }
        };
        Ok(KoopmanModel {
            kernel: kernel.clone(),
            centers: centers.clone(),
            k,
            spectrum,
            projection,
            modes: None,
            variant: Variant::Simplified { beta_koop },
        })
    }

    pub fn kernel(&self) -> &WeightedKernelSum {
        &self.kernel
    }

    pub fn centers(&self) -> &SnapshotSet {
        &self.centers
    }

    pub fn k(&self) -> MatRef<'_, f64> {
        self.k.as_ref()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn eigenvalues(&self) -> &[c64] {
        &self.spectrum.values
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self.variant, Variant::Truncated { .. })
    }

    pub fn projection(&self) -> Option<MatRef<'_, f64>> {
        self.projection.as_ref().map(|m| m.as_ref())
    }

    pub fn modes(&self) -> Option<MatRef<'_, c64>> {
        self.modes.as_ref().map(|m| m.as_ref())
    }

    /// `Z` and `sigma` of the truncated variant.
    pub fn truncation(&self) -> Result<(MatRef<'_, f64>, &[f64])> {
        match &self.variant {
            Variant::Truncated { z, sigma } => Ok((z.as_ref(), sigma)),
            Variant::Simplified { .. } => Err(Error::WrongVariant("truncated")),
        }
    }

    fn check_dim(&self, points: MatRef<'_, f64>) -> Result<()> {
        if points.ncols() != self.centers.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.centers.dim(),
                got: points.ncols(),
            });
        }
        Ok(())
    }

    /// `g(X~, points)`, one column per point.
    pub fn dictionary_at(&self, points: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check_dim(points)?;
        self.kernel.gram(self.centers.x(), points)
    }

    /// Coordinates the left eigenvectors act on: the dictionary itself for
    /// `sk`, `S^+ Z^T g(X~, .)` for `tr`.
    pub fn features_at(&self, points: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let psi = self.dictionary_at(points)?;
        Ok(match &self.variant {
            Variant::Simplified { .. } => psi,
            Variant::Truncated { z, sigma } => {
                let zt = Mat::from_fn(sigma.len(), z.nrows(), |i, j| z[(j, i)] / sigma[i]);
                zt * psi
            }
        })
    }

    /// Approximate eigenfunctions at `points`: row `j` is `phi_j`.
    pub fn eigenfunctions_at(&self, points: MatRef<'_, f64>) -> Result<Mat<c64>> {
        let f = linalg::to_complex(self.features_at(points)?.as_ref());
        Ok(&self.spectrum.left * f)
    }

    /// Maps eigenvectors between the truncated and simplified variants.
    ///
    /// `source` holds eigenvectors of `K_tr` (for [`MapDirection::TrToSk`]) or
    /// of `K_sk` on the same centers (for [`MapDirection::SkToTr`]); `self`
    /// supplies `Z` and `sigma`.
    pub fn map_spectrum(&self, direction: MapDirection, source: &Spectrum) -> Result<Spectrum> {
        let (z, sigma) = self.truncation()?;
        let n = z.nrows();
        let r = sigma.len();
        let zs = linalg::to_complex(Mat::from_fn(n, r, |i, j| z[(i, j)] * sigma[j]).as_ref());
        let zs_pinv_t = linalg::to_complex(Mat::from_fn(r, n, |i, j| z[(j, i)] / sigma[i]).as_ref());
        let (left, right) = match direction {
            // (w, v) -> (w S^+ Z^T, Z S v)
            MapDirection::TrToSk => (&source.left * &zs_pinv_t, &zs * &source.right),
            // (w, v) -> (w Z S, S^+ Z^T v)
            MapDirection::SkToTr => (&source.left * &zs, &zs_pinv_t * &source.right),
        };
        Ok(Spectrum {
            values: source.values.clone(),
            right,
            left,
        })
    }

    /// Fits `C_p = X~^T (G_xx + beta I)^+`.
    pub fn fit_projection(&mut self, beta_modes: f64) -> Result<MatRef<'_, f64>> {
        let g_xx = self.kernel.gram(self.centers.x(), self.centers.x())?;
        let cp = projection_from_gram(&self.centers, g_xx.as_ref(), beta_modes)?;
        self.projection = Some(cp);
        Ok(self.projection.as_ref().unwrap().as_ref())
    }

    /// Fits the Koopman modes `C_m = argmin |Y~^T - C Lambda Phi(X~)|^2 + beta |C|^2`.
    pub fn fit_modes(&mut self, beta: f64) -> Result<MatRef<'_, c64>> {
        let phi = self.eigenfunctions_at(self.centers.x())?;
        let lam_phi = Mat::from_fn(phi.nrows(), phi.ncols(), |i, j| self.spectrum.values[i] * phi[(i, j)]);
        let target = linalg::to_complex(self.centers.y().transpose());
        let cm = linalg::lstsq_right(target.as_ref(), lam_phi.as_ref(), beta)?;
        self.modes = Some(cm);
        Ok(self.modes.as_ref().unwrap().as_ref())
    }

    /// Sets `C_m = C_p V diag(1 / (w_j v_j))`, so that `C_m Lambda Phi = C_p K Psi`
    /// whenever `K` is diagonalizable.
    pub fn modes_from_projection(&mut self) -> Result<MatRef<'_, c64>> {
        if self.is_truncated() {
            return Err(Error::WrongVariant("simplified"));
        }
        let cp = self
            .projection
            .as_ref()
            .ok_or(Error::MissingComponent("projection matrix (fit_projection)"))?;
        let (w, v) = (&self.spectrum.left, &self.spectrum.right);
        let mut cm = linalg::to_complex(cp.as_ref()) * v;
        for j in 0..w.nrows() {
            let mut wv = c64::new(0.0, 0.0);
            for q in 0..w.ncols() {
                wv += w[(j, q)] * v[(q, j)];
            }
            if !(wv.norm() > 0.0) {
                return Err(Error::DegenerateEigenfunction { index: j });
            }
            for i in 0..cm.nrows() {
                cm[(i, j)] /= wv;
            }
        }
        self.modes = Some(cm);
        Ok(self.modes.as_ref().unwrap().as_ref())
    }

    /// Predicts `steps` states after `x0` (row `t-1` holds step `t`).
    pub fn predict(&self, x0: &[f64], steps: usize, method: PredictMethod) -> Result<Mat<f64>> {
        let d = self.centers.dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_finite_step: 0 });
        }
        let mut out = Mat::zeros(steps, d);
        if steps == 0 {
            return Ok(out);
        }
        let x0m = Mat::from_fn(1, d, |_, j| x0[j]);
        match method {
            PredictMethod::Spectral => {
                let cm = self
                    .modes
                    .as_ref()
                    .ok_or(Error::MissingComponent("Koopman modes (fit_modes)"))?;
                let phi0 = self.eigenfunctions_at(x0m.as_ref())?;
                let mut coeff: Vec<c64> = (0..phi0.nrows()).map(|j| phi0[(j, 0)]).collect();
                for t in 0..steps {
                    for (c, lam) in coeff.iter_mut().zip(&self.spectrum.values) {
                        *c *= lam;
                    }
                    for i in 0..d {
                        let mut s = 0.0;
                        for (j, c) in coeff.iter().enumerate() {
                            s += (cm[(i, j)] * c).re;
                        }
                        out[(t, i)] = s;
                    }
                    if (0..d).any(|i| !out[(t, i)].is_finite()) {
                        return Err(Error::Diverged { last_finite_step: t });
                    }
                }
            }
            PredictMethod::Recursive => {
                if self.is_truncated() {
                    return Err(Error::WrongVariant("simplified"));
                }
                let cp = self
                    .projection
                    .as_ref()
                    .ok_or(Error::MissingComponent("projection matrix (fit_projection)"))?;
                let step_map = cp * &self.k;
                let mut x = x0m;
                for t in 0..steps {
                    let psi = self.dictionary_at(x.as_ref())?;
                    let next = &step_map * &psi;
                    for i in 0..d {
                        out[(t, i)] = next[(i, 0)];
                    }
                    if (0..d).any(|i| !out[(t, i)].is_finite()) {
                        return Err(Error::Diverged { last_finite_step: t });
                    }
                    x = Mat::from_fn(1, d, |_, j| next[(j, 0)]);
                }
            }
        }
        Ok(out)
    }

    /// Quadratic forms for residuals on `eval_set`.
    pub fn residual_forms(&self, eval_set: &SnapshotSet) -> Result<ResidualForms> {
        ResidualForms::new(self, eval_set)
    }

    /// Residual of every eigenpair on `eval_set`; fails on the first degenerate one.
    pub fn residuals(&self, eval_set: &SnapshotSet) -> Result<Vec<f64>> {
        let forms = self.residual_forms(eval_set)?;
        (0..self.spectrum.len())
            .map(|j| forms.eval(self.left_row(j).as_slice(), self.spectrum.values[j], j))
            .collect()
    }

    /// Like [`Self::residuals`], with `None` for degenerate eigenfunctions.
    pub fn residuals_lenient(&self, eval_set: &SnapshotSet) -> Result<Vec<Option<f64>>> {
        let forms = self.residual_forms(eval_set)?;
        (0..self.spectrum.len())
            .map(|j| match forms.eval(&self.left_row(j), self.spectrum.values[j], j) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DegenerateEigenfunction { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    }

    /// Residual of eigenpair `index` on `eval_set`.
    pub fn residual(&self, index: usize, eval_set: &SnapshotSet) -> Result<f64> {
        if index >= self.spectrum.len() {
            return Err(Error::DimensionMismatch {
                expected: self.spectrum.len(),
                got: index,
            });
        }
        let forms = self.residual_forms(eval_set)?;
        forms.eval(&self.left_row(index), self.spectrum.values[index], index)
    }

    fn left_row(&self, j: usize) -> Vec<c64> {
        let w = &self.spectrum.left;
        (0..w.ncols()).map(|q| w[(j, q)]).collect()
    }

    pub fn eigenpair_reports(&self, eval_set: &SnapshotSet) -> Result<Vec<EigenpairReport>> {
        let res = self.residuals(eval_set)?;
        Ok(res
            .into_iter()
            .enumerate()
            .map(|(j, residual)| EigenpairReport {
                eigenvalue: self.spectrum.values[j],
                left_vector: self.left_row(j),
                residual,
            })
            .collect())
    }
}

/// Model features `F` on both halves of an evaluation set.
///
/// For `phi = w F` the squared residual of `(l, w)` is
/// `|phi(Y) - l phi(X)|^2 / |phi(X)|^2`, the empirical-measure form of
/// `w (A_yy - conj(l) A_yx - l A_xy + |l|^2 A_xx) w^H / (w A_xx w^H)` with
/// `A_ab = F(a) F(b)^T`. The numerator is accumulated as a sum of squares of
/// `w (F(Y) - l F(X))` rather than from the four quadratic forms, which would
/// square the conditioning of the cancellation.
#[derive(Debug, Clone)]
pub struct ResidualForms {
    fx: Mat<f64>,
    fy: Mat<f64>,
}

impl ResidualForms {
    fn new(model: &KoopmanModel, eval_set: &SnapshotSet) -> Result<Self> {
        Ok(ResidualForms {
            fx: model.features_at(eval_set.x())?,
            fy: model.features_at(eval_set.y())?,
        })
    }

    /// Residual of `(lambda, w)`; `index` only labels errors.
    pub fn eval(&self, w: &[c64], lambda: c64, index: usize) -> Result<f64> {
        if w.len() != self.fx.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.fx.nrows(),
                got: w.len(),
            });
        }
        // homogeneous in w: fix norm and phase so every rescaling sees the same vector
        let Some(pivot) = w.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())) else {
            return Err(Error::DegenerateEigenfunction { index });
        };
        if !(pivot.norm() > 0.0 && pivot.norm().is_finite()) {
            return Err(Error::DegenerateEigenfunction { index });
        }
        let w: Vec<c64> = w.iter().map(|v| v / pivot).collect();
        let (mut num, mut den, mut scale) = (0.0, 0.0, 0.0);
        for n in 0..self.fx.ncols() {
            let (mut px, mut py) = (c64::new(0.0, 0.0), c64::new(0.0, 0.0));
            for (q, wq) in w.iter().enumerate() {
                px += wq * self.fx[(q, n)];
                py += wq * self.fy[(q, n)];
            }
            num += (py - lambda * px).norm_sqr();
            den += px.norm_sqr();
            scale += (0..w.len()).map(|q| self.fx[(q, n)] * self.fx[(q, n)]).sum::<f64>();
        }
        let w2: f64 = w.iter().map(|v| v.norm_sqr()).sum();
        // below this phi(X) is indistinguishable from rounding noise of w F(X)
        if !(den > 1e4 * f64::EPSILON * f64::EPSILON * w2 * scale) {
            return Err(Error::DegenerateEigenfunction { index });
        }
        let r2 = num / den;
        if !r2.is_finite() {
            return Err(Error::NonFinite {
                context: "residual",
                index,
            });
        }
        Ok(r2.sqrt())
    }
}
