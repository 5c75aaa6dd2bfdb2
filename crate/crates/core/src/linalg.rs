//! Small dense linear-algebra and sampling helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &Mat, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{what}: non-finite entries")));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::numeric(format!("{what}: matrix is not positive definite")))
}

pub fn inverse_spd(m: &Mat, what: &str) -> Result<Mat> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn std_normal_mat<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> Mat {
    Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Solves the lower-triangular transpose system `Lᵀ x = z`.
fn solve_lt(chol: &Cholesky<f64, Dyn>, z: &Vector) -> Vector {
    chol.l_dirty()
        .transpose()
        .solve_upper_triangular(z)
        .expect("cholesky factor has a positive diagonal")
}

/// Gaussian in information form `N(J⁻¹h, J⁻¹)`: returns (mean, draw).
pub fn sample_gaussian_info<R: Rng + ?Sized>(
    precision: &Mat,
    info: &Vector,
    rng: &mut R,
    what: &str,
) -> Result<(Vector, Vector)> {
    let chol = cholesky(precision, what)?;
    let mean = chol.solve(info);
    let z = std_normal_vec(info.len(), rng);
    let draw = &mean + solve_lt(&chol, &z);
    Ok((mean, draw))
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &Vector,
    cov: &Mat,
    rng: &mut R,
    what: &str,
) -> Result<Vector> {
    let chol = cholesky(cov, what)?;
    let z = std_normal_vec(mean.len(), rng);
    Ok(mean + chol.l() * z)
}

/// Symmetric square root of a PSD matrix; tolerates singular and zero covariances.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&root) * eig.eigenvectors.transpose()
}

pub fn log_mvn_chol(x: &Vector, mean: &Vector, chol: &Cholesky<f64, Dyn>) -> f64 {
    let diff = x - mean;
    let white = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    -0.5 * (diff.len() as f64 * LN_2PI + log_det_chol(chol) + white.norm_squared())
}

pub fn log_mvn(x: &Vector, mean: &Vector, cov: &Mat) -> Result<f64> {
    let chol = cholesky(cov, "gaussian covariance")?;
    Ok(log_mvn_chol(x, mean, &chol))
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// log Γ_p(a), the multivariate gamma function.
pub fn ln_multi_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..p).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Draw from Wishart(df, scale) with the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &Mat, rng: &mut R) -> Result<Mat> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(Error::invalid(format!(
            "wishart degrees of freedom {df} must exceed dimension - 1 ({})",
            p - 1
        )));
    }
    let l = cholesky(scale, "wishart scale")?.l();
    let mut a = Mat::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::invalid(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    Ok(symmetrize(&(&la * la.transpose())))
}

/// Draw from InverseWishart(df, scale): the inverse of a Wishart(df, scale⁻¹) draw.
pub fn sample_inv_wishart<R: Rng + ?Sized>(df: f64, scale: &Mat, rng: &mut R) -> Result<Mat> {
    let scale_inv = inverse_spd(scale, "inverse-wishart scale")?;
    let w = sample_wishart(df, &scale_inv, rng)?;
    inverse_spd(&w, "wishart draw")
}

pub fn log_inv_wishart(x: &Mat, df: f64, scale: &Mat) -> Result<f64> {
    let p = x.nrows() as f64;
    let cx = cholesky(x, "inverse-wishart argument")?;
    let cs = cholesky(scale, "inverse-wishart scale")?;
    let trace = (scale * cx.inverse()).trace();
    Ok(0.5 * df * log_det_chol(&cs)
        - 0.5 * df * p * std::f64::consts::LN_2
        - ln_multi_gamma(x.nrows(), 0.5 * df)
        - 0.5 * (df + p + 1.0) * log_det_chol(&cx)
        - 0.5 * trace)
}

/// log(1 + e^v) without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// log σ(v).
pub fn log_sigmoid(v: f64) -> f64 {
    -softplus(-v)
}

/// σ(v) in the branch-stable form.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Regressor with a trailing 1 for the affine term.
pub fn augment(x: &Vector) -> Vector {
    let n = x.len();
    Vector::from_fn(n + 1, |i, _| if i < n { x[i] } else { 1.0 })
}

/// Column-major vec of a matrix.
pub fn vec_of(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// RQ factorisation of a square matrix: `m = upper · orthogonal`, upper with
/// a non-negative diagonal.
pub fn rq_square(m: &Mat) -> (Mat, Mat) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "rq_square expects a square matrix");
    // Reverse rows, transpose, QR, then undo the reversal.
    let rev = |a: &Mat| Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(a.nrows() - 1 - i, j)]);
    let flipped = rev(m).transpose();
    let qr = flipped.qr();
    let (q, r) = (qr.q(), qr.r());
    let rt = r.transpose();
    let mut upper = Mat::from_fn(n, n, |i, j| rt[(n - 1 - i, n - 1 - j)]);
    let qt = q.transpose();
    let mut orth = rev(&qt);
    for i in 0..n {
        if upper[(i, i)] < 0.0 {
            for r in 0..n {
                upper[(r, i)] = -upper[(r, i)];
            }
            for c in 0..n {
                orth[(i, c)] = -orth[(i, c)];
            }
        }
    }
    (upper, orth)
}
