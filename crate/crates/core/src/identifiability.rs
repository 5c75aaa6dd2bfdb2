//! Removes the scale and rotation freedom of the latent space.
//!
//! The latent space is remapped by `x' = M x` with `M = D₂ O D₁`: `D₁` scales
//! the columns of `C` to unit norm, `O` comes from an RQ factorisation of the
//! top `d_x × d_x` block and makes it upper triangular, and `D₂` restores unit
//! columns. Every parameter is mapped so that gate logits, transition residuals
//! and emission means are unchanged.

use crate::linalg::{rq_square, Mat};
use crate::model::{LatentState, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub enum NormalizeOutcome {
    Applied {
        /// The linear map `M` with `x' = M x`.
        transform: Mat,
        /// `log |det M|`.
        log_det: f64,
    },
    /// `C` does not have full column rank; nothing was changed.
    Skipped { reason: String },
}

impl NormalizeOutcome {
    pub fn applied(&self) -> bool {
        matches!(self, NormalizeOutcome::Applied { .. })
    }
}

const RANK_TOL: f64 = 1e-10;

fn column_scales(c: &Mat) -> Option<Vec<f64>> {
    let norms: Vec<f64> = c.column_iter().map(|col| col.norm()).collect();
    norms.iter().all(|&n| n > 0.0 && n.is_finite()).then_some(norms)
}

/// The map `M` that normalises `c`, or the reason it cannot be built.
pub fn normalizing_transform(c: &Mat) -> Result<Mat, String> {
    let (dy, dx) = c.shape();
    if dy < dx {
        return Err(format!("C is {dy} × {dx}; need at least as many outputs as latent dimensions"));
    }
    let sv = c.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err("C is rank deficient".into());
    }
    let d1 = column_scales(c).ok_or("C has a zero column")?;
    let c1 = Mat::from_fn(dy, dx, |i, j| c[(i, j)] / d1[j]);
    let top = c1.rows(0, dx).into_owned();
    let (upper, orth) = rq_square(&top);
    let diag_min = upper.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_min <= RANK_TOL {
        return Err("top block of C is singular".into());
    }
    let c2 = &c1 * orth.transpose();
    let d2 = column_scales(&c2).ok_or("degenerate rotated C")?;
    let m = Mat::from_diagonal(&nalgebra::DVector::from_vec(d2)) * orth * Mat::from_diagonal(&nalgebra::DVector::from_vec(d1));
    Ok(m)
}

/// Applies `x' = M x` to the parameters and latents.
pub fn apply_transform(params: &mut ModelParams, latents: &mut [LatentState], m: &Mat) -> Option<()> {
    let m_inv = m.clone().try_inverse()?;
    for d in &mut params.dynamics {
        d.a = m * &d.a * &m_inv;
        d.b = m * &d.b;
    }
    for q in &mut params.noise {
        *q = crate::linalg::symmetrize(&(m * &*q * m.transpose()));
    }
    let m_inv_t = m_inv.transpose();
    for (_, h) in params.hyperplanes.iter_mut() {
        h.weight = &m_inv_t * &h.weight;
    }
    params.emission.c = &params.emission.c * &m_inv;
    for lat in latents {
        for x in &mut lat.x {
            *x = m * &*x;
        }
    }
    Some(())
}

/// Normalises `C` to unit columns with an upper-triangular top block and maps
/// all other parameters and the latent paths accordingly.
pub fn normalize_rotation(params: &mut ModelParams, latents: &mut [LatentState]) -> NormalizeOutcome {
    let m = match normalizing_transform(&params.emission.c) {
        Ok(m) => m,
        Err(reason) => return NormalizeOutcome::Skipped { reason },
    };
    let log_det = m.determinant().abs().ln();
    if apply_transform(params, latents, &m).is_none() {
        return NormalizeOutcome::Skipped { reason: "normalising map is singular".into() };
    }
    NormalizeOutcome::Applied { transform: m, log_det }
}
