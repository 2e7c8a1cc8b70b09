//! Dense linear algebra glue over `faer`.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when a regularization constant is zero.
pub const PINV_RCOND: f64 = 1e-10;

/// Eigenvalues are considered equal when they differ by less than this
/// (relative to the spectral radius) while pairing left and right vectors.
pub const PAIRING_TOL: f64 = 1e-8;

pub fn to_complex(m: MatRef<'_, f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

pub fn real_part(m: MatRef<'_, c64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

pub fn frob2(m: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s
}

pub fn frob2_c(m: MatRef<'_, c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s
}

pub fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

pub fn all_finite_c(m: MatRef<'_, c64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()))
}

/// `A (G + beta I)^+` for symmetric `G`.
///
/// `beta > 0` uses an LU solve of the shifted system; `beta == 0` uses an SVD
/// pseudoinverse with relative cutoff [`PINV_RCOND`].
pub fn regularized_right_solve(a: MatRef<'_, f64>, g: MatRef<'_, f64>, beta: f64) -> Result<Mat<f64>> {
    let n = g.nrows();
    if g.ncols() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if !all_finite(g) || !all_finite(a) {
        return Err(Error::NonFinite {
            context: "gram matrix",
            index: 0,
        });
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::Numeric(format!("regularization must be >= 0, got {beta}")));
    }
    let out = if beta > 0.0 {
        let shifted = Mat::from_fn(n, n, |i, j| g[(i, j)] + if i == j { beta } else { 0.0 });
        let lu = shifted.partial_piv_lu();
        // (G + bI) is symmetric, so A M^-1 = (M^-1 A^T)^T
        let at = a.transpose().to_owned();
        lu.solve(&at).transpose().to_owned()
    } else {
        a * pinv(g, PINV_RCOND)?
    };
    if !all_finite(out.as_ref()) {
        return Err(Error::Numeric("regularized solve produced non-finite values".into()));
    }
    Ok(out)
}

/// Moore-Penrose pseudoinverse with singular values below `rcond * s_max` dropped.
pub fn pinv(m: MatRef<'_, f64>, rcond: f64) -> Result<Mat<f64>> {
    let svd = m.thin_svd().map_err(|e| Error::Numeric(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = s.nrows();
    let smax = if k > 0 { s[0] } else { 0.0 };
    if !(smax > 0.0) {
        return Err(Error::DegenerateGram);
    }
    let cut = rcond * smax;
    let u = svd.U();
    let v = svd.V();
    let keep: Vec<usize> = (0..k).filter(|&i| s[i] > cut).collect();
    // V S^+ U^T restricted to the kept components
    let vs = Mat::from_fn(v.nrows(), keep.len(), |i, c| v[(i, keep[c])] / s[keep[c]]);
    let ut = Mat::from_fn(keep.len(), u.nrows(), |c, j| u[(j, keep[c])]);
    Ok(&vs * &ut)
}

/// Complex pseudoinverse; the flag is false when components were cut.
pub fn pinv_c(m: MatRef<'_, c64>, rcond: f64) -> Result<(Mat<c64>, bool)> {
    let svd = m.thin_svd().map_err(|e| Error::Numeric(format!("svd failed: {e:?}")))?;
    let s: Vec<f64> = (0..svd.S().dim()).map(|i| svd.S()[i].re).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Err(Error::Numeric("pseudoinverse of a zero matrix".into()));
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > rcond * smax).collect();
    let full = keep.len() == m.nrows().min(m.ncols());
    let u = svd.U();
    let v = svd.V();
    let vs = Mat::from_fn(v.nrows(), keep.len(), |i, c| v[(i, keep[c])] / s[keep[c]]);
    let uh = Mat::from_fn(keep.len(), u.nrows(), |c, j| u[(j, keep[c])].conj());
    Ok((&vs * &uh, full))
}

/// Symmetric eigendecomposition `G = Z diag(lambda) Z^T`, eigenvalues descending.
pub fn sym_eigen_desc(g: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>)> {
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let n = g.nrows();
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer sorts ascending
    let vals: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let z = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((z, vals))
}

/// Eigendecomposition of a real square matrix with paired left and right vectors.
///
/// Entries are ordered by descending `|lambda|`, then descending real part,
/// then descending imaginary part. Right vectors are the columns of `right`,
/// left vectors the rows of `left`; both are scaled to unit 2-norm.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<c64>,
    pub right: Mat<c64>,
    pub left: Mat<c64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn order_key(a: &c64, b: &c64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

fn raw_eigen(m: MatRef<'_, f64>) -> Result<(Vec<c64>, Mat<c64>)> {
    let evd = m
        .eigen()
        .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

fn col_norm(m: MatRef<'_, c64>, j: usize) -> f64 {
    (0..m.nrows()).map(|i| m[(i, j)].norm_sqr()).sum::<f64>().sqrt()
}

pub fn eigen_left_right(k: MatRef<'_, f64>) -> Result<Spectrum> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: k.ncols(),
        });
    }
    if !all_finite(k) {
        return Err(Error::NonFinite {
            context: "koopman matrix",
            index: 0,
        });
    }
    if n == 0 {
        return Ok(Spectrum {
            values: vec![],
            right: Mat::zeros(0, 0),
            left: Mat::zeros(0, 0),
        });
    }
    let (rvals, rvecs) = raw_eigen(k)?;
    // K^T u = mu u  <=>  u^T K = mu u^T
    let kt = k.transpose().to_owned();
    let (lvals, lvecs) = raw_eigen(kt.as_ref())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| order_key(&rvals[a], &rvals[b]));

    let radius = rvals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let tol = PAIRING_TOL * radius;
    let rnorms: Vec<f64> = (0..n).map(|j| col_norm(rvecs.as_ref(), j)).collect();
    let lnorms: Vec<f64> = (0..n).map(|j| col_norm(lvecs.as_ref(), j)).collect();

    let mut used = vec![false; n];
    let mut pairs = Vec::with_capacity(n);
    for &r in &order {
        let lam = rvals[r];
        let near: Vec<usize> = (0..n).filter(|&l| !used[l] && (lvals[l] - lam).norm() <= tol).collect();
        let pick = if near.is_empty() {
            (0..n)
                .filter(|&l| !used[l])
                .min_by(|&a, &b| (lvals[a] - lam).norm().total_cmp(&(lvals[b] - lam).norm()))
                .expect("an unused left eigenvector remains")
        } else {
            // among equal eigenvalues prefer the most aligned pair |w v|
            let overlap = |l: usize| {
                let mut s = c64::new(0.0, 0.0);
                for i in 0..n {
                    s += lvecs[(i, l)] * rvecs[(i, r)];
                }
                s.norm() / (lnorms[l] * rnorms[r])
            };
            let mut best = near[0];
            let mut best_ov = overlap(best);
            for &l in &near[1..] {
                let ov = overlap(l);
                if ov > best_ov {
                    best = l;
                    best_ov = ov;
                }
            }
            best
        };
        used[pick] = true;
        pairs.push((r, pick));
    }

    let values = pairs.iter().map(|&(r, _)| rvals[r]).collect();
    let right = Mat::from_fn(n, n, |i, j| {
        let (r, _) = pairs[j];
        rvecs[(i, r)] / rnorms[r]
    });
    let left = Mat::from_fn(n, n, |j, i| {
        let (_, l) = pairs[j];
        lvecs[(i, l)] / lnorms[l]
    });
    Ok(Spectrum { values, right, left })
}

/// Regularized complex least squares `argmin_C |F - C B|_F^2 + beta |C|_F^2`,
/// i.e. `C = F B^H (B B^H + beta I)^{-1}`.
pub fn lstsq_right(f: MatRef<'_, c64>, b: MatRef<'_, c64>, beta: f64) -> Result<Mat<c64>> {
    if f.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: b.ncols(),
            got: f.ncols(),
        });
    }
    let n = b.nrows();
    let bh = b.adjoint().to_owned();
    let mut gram = b * &bh;
    for i in 0..n {
        gram[(i, i)] += c64::new(beta, 0.0);
    }
    let rhs = (f * &bh).adjoint().to_owned();
    let lu = gram.partial_piv_lu();
    let sol = lu.solve(&rhs);
    if !all_finite_c(sol.as_ref()) {
        return Err(Error::Numeric("singular normal equations in mode fit".into()));
    }
    if beta == 0.0 {
        // an exactly singular system can still yield finite garbage
        let resid = frob2_c((&gram * &sol - &rhs).as_ref()).sqrt();
        let scale = frob2_c(rhs.as_ref()).sqrt().max(f64::MIN_POSITIVE);
        if resid > 1e-6 * scale {
            return Err(Error::Numeric("singular normal equations in mode fit".into()));
        }
    }
    // gram is Hermitian, so (gram^-1 rhs)^H = F B^H gram^-1
    Ok(sol.adjoint().to_owned())
}
