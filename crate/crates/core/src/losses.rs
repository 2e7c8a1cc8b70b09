//! Training losses and their gradients with respect to kernel parameters.
//!
//! Every loss depends on the kernel only through three Gram blocks against the
//! centers `X~`: `G_bx = g(X~, X_b)`, `G_by = g(X~, Y_b)` and, for the
//! normalized losses, `G_xx = g(X~, X~)`. `K`, `C_p`, `C_m`, `W` and `Lambda`
//! are frozen at the values fitted with the current parameters, so a gradient
//! is `dL/dG` contracted against the per-entry kernel gradients.

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::WeightedKernelSum;
use crate::koopman::{KoopmanModel, SnapshotSet, Variant};
use crate::linalg::{self, PINV_RCOND};

/// Weights of the combined loss and its regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// `(dict, pred, eig, eig_pred)`
    pub alpha: [f64; 4],
    pub beta1: f64,
    pub beta2: f64,
    /// Apply the L1 term to raw outer weights instead of normalized ones.
    pub l1_on_raw_weights: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: [0.0, 1.0, 0.0, 0.0],
            beta1: 1e-8,
            beta2: 1e-8,
            l1_on_raw_weights: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.alpha.iter().chain([&self.beta1, &self.beta2]);
        if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss", "loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// A loss value with its gradient in the flat parameter layout of
/// [`WeightedKernelSum::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Per-loss values of one evaluation; `None` where a loss was not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pred: Option<f64>,
    pub dict: Option<f64>,
    pub eig: Option<f64>,
    pub eig_pred: Option<f64>,
    pub tr_dict: Option<f64>,
    pub tr_eig: Option<f64>,
    pub tr_eig_pred: Option<f64>,
    pub reg: f64,
    pub total: f64,
}

/// The three truncated-variant losses, tracked but not trained on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrLosses {
    pub dict: f64,
    pub eig: f64,
    /// `None` when the truncated model has no Koopman modes.
    pub eig_pred: Option<f64>,
    /// False when `W^` was rank deficient and `V^` came from a pseudoinverse.
    pub full_rank: bool,
}

/// Gram blocks of a batch against the centers.
struct Grams {
    bx: Mat<f64>,
    by: Option<Mat<f64>>,
    xx: Option<Mat<f64>>,
}

impl Grams {
    fn new(kernel: &WeightedKernelSum, model: &KoopmanModel, batch: &SnapshotSet, by: bool, xx: bool) -> Result<Self> {
        let c = model.centers();
        if batch.dim() != c.dim() {
            return Err(Error::DimensionMismatch {
                expected: c.dim(),
                got: batch.dim(),
            });
        }
        Ok(Grams {
            bx: kernel.gram(c.x(), batch.x())?,
            by: if by { Some(kernel.gram(c.x(), batch.y())?) } else { None },
            xx: if xx { Some(kernel.gram(c.x(), c.x())?) } else { None },
        })
    }

    fn by(&self) -> MatRef<'_, f64> {
        self.by.as_ref().expect("G_by requested").as_ref()
    }

    fn xx(&self) -> MatRef<'_, f64> {
        self.xx.as_ref().expect("G_xx requested").as_ref()
    }
}

/// Accumulated `dL/dG` for each block.
struct GramCoeffs {
    bx: Mat<f64>,
    by: Mat<f64>,
    xx: Mat<f64>,
}

impl GramCoeffs {
    fn zeros(n_centers: usize, n_batch: usize) -> Self {
        GramCoeffs {
            bx: Mat::zeros(n_centers, n_batch),
            by: Mat::zeros(n_centers, n_batch),
            xx: Mat::zeros(n_centers, n_centers),
        }
    }

    fn contract(&self, kernel: &WeightedKernelSum, centers: &SnapshotSet, batch: &SnapshotSet) -> Result<Vec<f64>> {
        let mut g = vec![0.0; kernel.param_count()];
        for (coeff, b) in [(&self.bx, batch.x()), (&self.by, batch.y()), (&self.xx, centers.x())] {
            if linalg::frob2(coeff.as_ref()) == 0.0 {
                continue;
            }
            let part = kernel.gram_grad_contract(centers.x(), b, coeff.as_ref())?;
            for (a, p) in g.iter_mut().zip(part) {
                *a += p;
            }
        }
        Ok(g)
    }
}

fn add_scaled(dst: &mut Mat<f64>, src: MatRef<'_, f64>, s: f64) {
    for i in 0..dst.nrows() {
        for j in 0..dst.ncols() {
            dst[(i, j)] += s * src[(i, j)];
        }
    }
}

/// `W P`: left eigenvectors expressed against the raw dictionary `g(X~, .)`.
fn effective_left(model: &KoopmanModel) -> Mat<c64> {
    let w = &model.spectrum().left;
    match model.variant() {
        Variant::Simplified { .. } => w.clone(),
        Variant::Truncated { z, sigma } => {
            let p = Mat::from_fn(sigma.len(), z.nrows(), |i, j| c64::new(z[(j, i)] / sigma[i], 0.0));
            w * p
        }
    }
}

fn require_simplified(model: &KoopmanModel) -> Result<()> {
    if model.is_truncated() {
        return Err(Error::WrongVariant("simplified"));
    }
    Ok(())
}

/// Mean over centers of `|g(X~, x~_j)|_2` and its derivative with respect to `G_xx`.
fn norm_estimate(g_xx: MatRef<'_, f64>) -> Result<(f64, Mat<f64>)> {
    let n = g_xx.ncols();
    let norms: Vec<f64> = (0..n).map(|j| g_xx.col(j).norm_l2()).collect();
    let m = norms.iter().sum::<f64>() / n as f64;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::DegenerateDictionary);
    }
    let dm = Mat::from_fn(g_xx.nrows(), n, |i, j| {
        if norms[j] > 0.0 {
            g_xx[(i, j)] / (n as f64 * norms[j])
        } else {
            0.0
        }
    });
    Ok((m, dm))
}

/// `(value, dL/dG_bx)` of `|Y_b^T - C_p K G_bx|_F^2`.
fn pred_term(model: &KoopmanModel, g: &Grams, batch: &SnapshotSet) -> Result<(f64, Mat<f64>)> {
    let cp = model
        .projection()
        .ok_or(Error::MissingComponent("projection matrix (fit_projection)"))?;
    let a = cp * model.k();
    let mut r = &a * &g.bx;
    add_scaled(&mut r, batch.y().transpose(), -1.0);
    let value = linalg::frob2(r.as_ref());
    let mut d = a.transpose() * &r;
    d *= faer::Scale(2.0);
    Ok((value, d))
}

/// `(numerator, dN/dG_bx, dN/dG_by)` of `|G_by - K G_bx|_F^2`.
fn dict_numerator(model: &KoopmanModel, g: &Grams) -> (f64, Mat<f64>, Mat<f64>) {
    let mut r = g.by().to_owned();
    add_scaled(&mut r, (model.k() * &g.bx).as_ref(), -1.0);
    let value = linalg::frob2(r.as_ref());
    let mut d_bx = model.k().transpose() * &r;
    d_bx *= faer::Scale(-2.0);
    let mut d_by = r;
    d_by *= faer::Scale(2.0);
    (value, d_bx, d_by)
}

/// `(numerator, dN/dG_bx, dN/dG_by)` of `|W G_by - Lambda W G_bx|_F^2` for left vectors `w`.
fn eig_numerator(w: &Mat<c64>, values: &[c64], g: &Grams) -> (f64, Mat<f64>, Mat<f64>) {
    let lw = Mat::from_fn(w.nrows(), w.ncols(), |i, j| values[i] * w[(i, j)]);
    let by = linalg::to_complex(g.by());
    let bx = linalg::to_complex(g.bx.as_ref());
    let r = w * &by - &lw * &bx;
    let value = linalg::frob2_c(r.as_ref());
    let mut d_by = linalg::real_part((w.adjoint() * &r).as_ref());
    let mut d_bx = linalg::real_part((lw.adjoint() * &r).as_ref());
    d_by *= faer::Scale(2.0);
    d_bx *= faer::Scale(-2.0);
    (value, d_bx, d_by)
}

/// `(value, dL/dG_bx)` of `|Y_b^T - C_m Lambda W G_bx|_F^2`, complex residual.
fn eig_pred_term(model: &KoopmanModel, w: &Mat<c64>, g: &Grams, batch: &SnapshotSet) -> Result<(f64, Mat<f64>)> {
    let cm = model
        .modes()
        .ok_or(Error::MissingComponent("Koopman modes (fit_modes)"))?;
    let values = model.eigenvalues();
    let lw = Mat::from_fn(w.nrows(), w.ncols(), |i, j| values[i] * w[(i, j)]);
    let a = cm * &lw;
    let r = linalg::to_complex(batch.y().transpose()) - &a * linalg::to_complex(g.bx.as_ref());
    let value = linalg::frob2_c(r.as_ref());
    let mut d = linalg::real_part((a.adjoint() * &r).as_ref());
    d *= faer::Scale(-2.0);
    Ok((value, d))
}

/// `N / m^2` and its gradient pieces given the numerator pieces.
fn normalize(num: f64, d_bx: Mat<f64>, d_by: Mat<f64>, g: &Grams, n_batch: usize) -> Result<(f64, GramCoeffs)> {
    let (m, dm) = norm_estimate(g.xx())?;
    let inv = 1.0 / (m * m);
    let mut c = GramCoeffs::zeros(g.xx().nrows(), n_batch);
    add_scaled(&mut c.bx, d_bx.as_ref(), inv);
    add_scaled(&mut c.by, d_by.as_ref(), inv);
    add_scaled(&mut c.xx, dm.as_ref(), -2.0 * num / (m * m * m));
    Ok((num * inv, c))
}

/// `|Y_b^T - C_p K g(X~, X_b)|_F^2`.
pub fn loss_pred(kernel: &WeightedKernelSum, model: &KoopmanModel, batch: &SnapshotSet) -> Result<LossValue> {
    require_simplified(model)?;
    let g = Grams::new(kernel, model, batch, false, false)?;
    let (value, d) = pred_term(model, &g, batch)?;
    let mut c = GramCoeffs::zeros(model.centers().len(), batch.len());
    c.bx = d;
    Ok(LossValue {
        value,
        grad: c.contract(kernel, model.centers(), batch)?,
    })
}

/// `|Psi(Y_b) - K Psi(X_b)|_F^2 / m^2` with `m` the mean dictionary norm over the centers.
pub fn loss_dict_normalized(
    kernel: &WeightedKernelSum,
    model: &KoopmanModel,
    batch: &SnapshotSet,
) -> Result<LossValue> {
    require_simplified(model)?;
    let g = Grams::new(kernel, model, batch, true, true)?;
    let (num, d_bx, d_by) = dict_numerator(model, &g);
    let (value, c) = normalize(num, d_bx, d_by, &g, batch.len())?;
    Ok(LossValue {
        value,
        grad: c.contract(kernel, model.centers(), batch)?,
    })
}

/// `|W Psi(Y_b) - Lambda W Psi(X_b)|_F^2 / m^2`.
pub fn loss_eig_normalized(kernel: &WeightedKernelSum, model: &KoopmanModel, batch: &SnapshotSet) -> Result<LossValue> {
    require_simplified(model)?;
    let g = Grams::new(kernel, model, batch, true, true)?;
    let (num, d_bx, d_by) = eig_numerator(&model.spectrum().left, model.eigenvalues(), &g);
    let (value, c) = normalize(num, d_bx, d_by, &g, batch.len())?;
    Ok(LossValue {
        value,
        grad: c.contract(kernel, model.centers(), batch)?,
    })
}

/// `|Y_b^T - C_m Lambda Phi(X_b)|_F^2`; the imaginary part of the prediction counts.
pub fn loss_eig_pred(kernel: &WeightedKernelSum, model: &KoopmanModel, batch: &SnapshotSet) -> Result<LossValue> {
    require_simplified(model)?;
    let g = Grams::new(kernel, model, batch, false, false)?;
    let (value, d) = eig_pred_term(model, &model.spectrum().left, &g, batch)?;
    let mut c = GramCoeffs::zeros(model.centers().len(), batch.len());
    c.bx = d;
    Ok(LossValue {
        value,
        grad: c.contract(kernel, model.centers(), batch)?,
    })
}

/// Truncated-variant losses on a batch, for tracking.
pub fn loss_tr_suite(kernel: &WeightedKernelSum, model_tr: &KoopmanModel, batch: &SnapshotSet) -> Result<TrLosses> {
    let (_, sigma) = model_tr.truncation()?;
    let g = Grams::new(kernel, model_tr, batch, true, false)?;
    let w_eff = effective_left(model_tr);
    let values = model_tr.eigenvalues();
    let (eig, _, _) = eig_numerator(&w_eff, values, &g);
    let w_hat = &model_tr.spectrum().left;
    let (v_hat, full_rank) = linalg::pinv_c(w_hat.as_ref(), PINV_RCOND)?;
    if !full_rank {
        log::warn!(
            "truncated eigenvector matrix is rank deficient ({} components); using its pseudoinverse",
            sigma.len()
        );
    }
    let lw = Mat::from_fn(w_eff.nrows(), w_eff.ncols(), |i, j| values[i] * w_eff[(i, j)]);
    let r = &w_eff * linalg::to_complex(g.by()) - &lw * linalg::to_complex(g.bx.as_ref());
    let dict = linalg::frob2_c((&v_hat * &r).as_ref());
    let eig_pred = match model_tr.modes() {
        Some(_) => Some(eig_pred_term(model_tr, &w_eff, &g, batch)?.0),
        None => None,
    };
    Ok(TrLosses {
        dict,
        eig,
        eig_pred,
        full_rank,
    })
}

/// `beta1 sum|w~_i| + beta2 sum |theta_i|^2`.
///
/// On normalized weights the L1 term is identically `beta1` and has zero
/// gradient; with `l1_on_raw_weights` it is `beta1 sum|w_i|` with subgradient
/// 0 at `w_i = 0`.
pub fn regularization(kernel: &WeightedKernelSum, weights: &LossWeights) -> Result<LossValue> {
    let m = kernel.len();
    let mut grad = vec![0.0; kernel.param_count()];
    let l1 = if weights.l1_on_raw_weights {
        for (g, w) in grad.iter_mut().zip(kernel.weights()) {
            *g = if *w == 0.0 { 0.0 } else { weights.beta1 * w.signum() };
        }
        kernel.weight_l1()
    } else {
        kernel.normalized_weights()?.iter().map(|w| w.abs()).sum()
    };
    let inner = kernel.inner_params();
    for (g, t) in grad[m..].iter_mut().zip(&inner) {
        *g = 2.0 * weights.beta2 * t;
    }
    let value = weights.beta1 * l1 + weights.beta2 * inner.iter().map(|t| t * t).sum::<f64>();
    Ok(LossValue { value, grad })
}

/// Result of [`combined_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub report: LossReport,
    pub grad: Vec<f64>,
}

/// `alpha_1 dict + alpha_2 pred + alpha_3 eig + alpha_4 eig_pred + reg`.
///
/// Losses with zero weight are skipped unless `track` is set, in which case
/// they are reported (not differentiated) when the model has what they need.
pub fn combined_loss(
    kernel: &WeightedKernelSum,
    model: &KoopmanModel,
    batch: &SnapshotSet,
    weights: &LossWeights,
    track: bool,
) -> Result<LossEvaluation> {
    require_simplified(model)?;
    weights.validate()?;
    let [a_dict, a_pred, a_eig, a_eig_pred] = weights.alpha;
    let want_dict = a_dict > 0.0 || track;
    let want_eig = a_eig > 0.0 || track;
    let want_eig_pred = a_eig_pred > 0.0 || (track && model.modes().is_some());
    let want_pred = a_pred > 0.0 || (track && model.projection().is_some());
    let need_by = want_dict || want_eig;
    let g = Grams::new(kernel, model, batch, need_by, need_by)?;
    let mut coeffs = GramCoeffs::zeros(model.centers().len(), batch.len());
    let mut report = LossReport::default();
    let mut total = 0.0;

    if want_pred {
        let (v, d) = pred_term(model, &g, batch)?;
        report.pred = Some(v);
        if a_pred > 0.0 {
            total += a_pred * v;
            add_scaled(&mut coeffs.bx, d.as_ref(), a_pred);
        }
    }
    for (want, alpha, slot, eig) in [(want_dict, a_dict, 0, false), (want_eig, a_eig, 1, true)] {
        if !want {
            continue;
        }
        let (num, d_bx, d_by) = if eig {
            eig_numerator(&model.spectrum().left, model.eigenvalues(), &g)
        } else {
            dict_numerator(model, &g)
        };
        let (v, c) = normalize(num, d_bx, d_by, &g, batch.len())?;
        if slot == 0 {
            report.dict = Some(v);
        } else {
            report.eig = Some(v);
        }
        if alpha > 0.0 {
            total += alpha * v;
            add_scaled(&mut coeffs.bx, c.bx.as_ref(), alpha);
            add_scaled(&mut coeffs.by, c.by.as_ref(), alpha);
            add_scaled(&mut coeffs.xx, c.xx.as_ref(), alpha);
        }
    }
    if want_eig_pred {
        let (v, d) = eig_pred_term(model, &model.spectrum().left, &g, batch)?;
        report.eig_pred = Some(v);
        if a_eig_pred > 0.0 {
            total += a_eig_pred * v;
            add_scaled(&mut coeffs.bx, d.as_ref(), a_eig_pred);
        }
    }

    let reg = regularization(kernel, weights)?;
    report.reg = reg.value;
    report.total = total + reg.value;
    let mut grad = coeffs.contract(kernel, model.centers(), batch)?;
    for (g, r) in grad.iter_mut().zip(&reg.grad) {
        *g += r;
    }
    Ok(LossEvaluation { report, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PrimitiveKernel;
    use crate::koopman::{fit_sk, fit_tr};

    fn data(n: usize, shift: f64) -> SnapshotSet {
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = i as f64 * 0.61 + shift;
                vec![t.sin(), (0.7 * t).cos() * 0.8]
            })
            .collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![x[0] + 0.1 * x[1], x[1] - 0.1 * x[0].sin()])
            .collect();
        SnapshotSet::from_rows(&xs, &ys).unwrap()
    }

    fn identity_data(n: usize) -> SnapshotSet {
        let d = data(n, 0.0);
        SnapshotSet::new(d.x().to_owned(), d.x().to_owned()).unwrap()
    }

    fn mixed_kernel() -> WeightedKernelSum {
        WeightedKernelSum::new(
            vec![
                PrimitiveKernel::Rbf { sigma: 0.9 },
                PrimitiveKernel::Linear { c1: 0.7 },
                PrimitiveKernel::Nngp { b1: 1.1, b2: 0.4 },
            ],
            vec![0.8, -0.3, 0.5],
        )
        .unwrap()
    }

    fn fitted(kernel: &WeightedKernelSum, centers: &SnapshotSet) -> KoopmanModel {
        let mut m = fit_sk(kernel, centers, 1e-6).unwrap();
        m.fit_projection(1e-8).unwrap();
        m.fit_modes(1e-8).unwrap();
        m
    }

    /// Central differences of a frozen-model loss over every parameter.
    fn fd_grad(kernel: &WeightedKernelSum, f: impl Fn(&WeightedKernelSum) -> f64) -> Vec<f64> {
        let p0 = kernel.params();
        (0..p0.len())
            .map(|i| {
                let h = 1e-6 * p0[i].abs().max(1.0);
                let mut k = kernel.clone();
                let mut p = p0.clone();
                p[i] = p0[i] + h;
                k.set_params(&p).unwrap();
                let up = f(&k);
                p[i] = p0[i] - h;
                k.set_params(&p).unwrap();
                (up - f(&k)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(a: &[f64], b: &[f64]) {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= 1e-5 * scale, "component {i}: analytic {x} vs fd {y}");
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let k = mixed_kernel();
        let centers = data(7, 0.0);
        let batch = data(5, 0.37);
        let m = fitted(&k, &centers);
        type Loss = fn(&WeightedKernelSum, &KoopmanModel, &SnapshotSet) -> Result<LossValue>;
        let losses: [(&str, Loss); 4] = [
            ("pred", loss_pred),
            ("dict", loss_dict_normalized),
            ("eig", loss_eig_normalized),
            ("eig_pred", loss_eig_pred),
        ];
        for (name, f) in losses {
            let lv = f(&k, &m, &batch).unwrap();
            let fd = fd_grad(&k, |kk| f(kk, &m, &batch).unwrap().value);
            assert!(lv.value > 0.0, "{name}");
            assert_grad_close(&lv.grad, &fd);
        }
    }

    #[test]
    fn combined_gradient_is_weighted_sum() {
        let k = mixed_kernel();
        let centers = data(6, 0.0);
        let batch = data(4, 0.2);
        let m = fitted(&k, &centers);
        let w = LossWeights {
            alpha: [0.3, 1.0, 0.2, 0.5],
            beta1: 0.01,
            beta2: 0.02,
            l1_on_raw_weights: false,
        };
        let ev = combined_loss(&k, &m, &batch, &w, false).unwrap();
        let fd = fd_grad(&k, |kk| combined_loss(kk, &m, &batch, &w, false).unwrap().report.total);
        assert_grad_close(&ev.grad, &fd);
        let r = &ev.report;
        let sum = 0.3 * r.dict.unwrap() + r.pred.unwrap() + 0.2 * r.eig.unwrap() + 0.5 * r.eig_pred.unwrap() + r.reg;
        assert!((r.total - sum).abs() <= 1e-12 * sum.abs().max(1.0));
    }

    #[test]
    fn identity_system_has_zero_losses() {
        let k = WeightedKernelSum::single(PrimitiveKernel::Rbf { sigma: 1.3 });
        let set = identity_data(6);
        let mut m = fit_sk(&k, &set, 0.0).unwrap();
        m.fit_projection(0.0).unwrap();
        m.fit_modes(0.0).unwrap();
        for v in [
            loss_pred(&k, &m, &set).unwrap().value,
            loss_dict_normalized(&k, &m, &set).unwrap().value,
            loss_eig_normalized(&k, &m, &set).unwrap().value,
            loss_eig_pred(&k, &m, &set).unwrap().value,
        ] {
            assert!(v <= 1e-10, "{v}");
        }
        let mut tr = fit_tr(&k, &set, 1e-5).unwrap();
        tr.fit_modes(0.0).unwrap();
        let t = loss_tr_suite(&k, &tr, &set).unwrap();
        assert!(t.dict <= 1e-8 && t.eig <= 1e-8 && t.eig_pred.unwrap() <= 1e-8, "{t:?}");
    }

    #[test]
    fn normalized_losses_ignore_kernel_scale() {
        // doubling every raw weight's share is impossible under normalization, so
        // scale the kernel through a linear primitive: c1 -> 3 c1 scales g by 9
        let k1 = WeightedKernelSum::single(PrimitiveKernel::Linear { c1: 0.5 });
        let k9 = WeightedKernelSum::single(PrimitiveKernel::Linear { c1: 1.5 });
        let centers = data(2, 0.0);
        let batch = data(5, 0.3);
        let m = fitted(&k1, &centers);
        for f in [loss_dict_normalized, loss_eig_normalized] {
            let a = f(&k1, &m, &batch).unwrap().value;
            let b = f(&k9, &m, &batch).unwrap().value;
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn eig_pred_equals_pred_with_full_eigenbasis() {
        let k = WeightedKernelSum::single(PrimitiveKernel::Rbf { sigma: 1.1 });
        let centers = data(5, 0.0);
        let batch = data(6, 0.45);
        let mut m = fit_sk(&k, &centers, 0.0).unwrap();
        m.fit_projection(0.0).unwrap();
        m.modes_from_projection().unwrap();
        let a = loss_pred(&k, &m, &batch).unwrap().value;
        let b = loss_eig_pred(&k, &m, &batch).unwrap().value;
        assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn regularization_examples() {
        let k = WeightedKernelSum::single(PrimitiveKernel::Rbf { sigma: 2.0 });
        let zero = LossWeights {
            beta1: 0.0,
            beta2: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(regularization(&k, &zero).unwrap().value, 0.0);
        let l2 = LossWeights { beta2: 0.5, ..zero };
        let r = regularization(&k, &l2).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.grad, vec![0.0, 2.0]);
        let l1 = LossWeights { beta1: 0.25, ..zero };
        let mk = mixed_kernel();
        let r = regularization(&mk, &l1).unwrap();
        assert!((r.value - 0.25).abs() < 1e-15);
        assert!(r.grad.iter().all(|g| *g == 0.0));
        let raw = LossWeights {
            l1_on_raw_weights: true,
            ..l1
        };
        let r = regularization(&mk, &raw).unwrap();
        assert!((r.value - 0.25 * 1.6).abs() < 1e-15);
        assert_eq!(&r.grad[..3], &[0.25, -0.25, 0.25]);
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let k = mixed_kernel();
        let centers = data(5, 0.0);
        let m = fitted(&k, &centers);
        let w = LossWeights {
            alpha: [0.0; 4],
            beta1: 0.0,
            beta2: 0.0,
            l1_on_raw_weights: false,
        };
        let ev = combined_loss(&k, &m, &data(3, 0.1), &w, false).unwrap();
        assert_eq!(ev.report.total, 0.0);
        assert!(ev.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let k = mixed_kernel();
        let m = fitted(&k, &data(4, 0.0));
        let bad = SnapshotSet::new(Mat::zeros(3, 3), Mat::zeros(3, 3)).unwrap();
        assert!(matches!(loss_pred(&k, &m, &bad), Err(Error::DimensionMismatch { .. })));
    }
}
