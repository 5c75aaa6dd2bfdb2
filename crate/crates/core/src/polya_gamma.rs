//! Exact Pólya-Gamma sampling.
//!
//! `PG(1, c)` is drawn with Devroye's alternating-series rejection sampler as
//! laid out by Polson, Scott and Windle; `PG(b, c)` for integer `b` sums `b`
//! independent `PG(1, c)` draws.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

/// Draw from `PG(b, c)`.
pub fn sample_pg<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> Result<f64> {
    if b == 0 {
        return Err(Error::invalid("Pólya-Gamma shape b must be at least 1"));
    }
    if !c.is_finite() {
        return Err(Error::numeric(format!("Pólya-Gamma tilt {c} is not finite")));
    }
    Ok((0..b).map(|_| sample_pg1(c, rng)).sum())
}

/// Draw from `PG(1, c)`; `c` must be finite.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // Sample J*(1, z) with z = |c|/2, then scale by 1/4.
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = mass_texpon(z, fz);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            rtigauss(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Alternating-series coefficient `a_n(x)` in the piecewise form.
fn series_coef(n: u32, x: f64) -> f64 {
    let half = n as f64 + 0.5;
    let k = half * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let expnt = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * half * half / x;
        expnt.exp()
    } else {
        0.0
    }
}

/// Probability of proposing from the exponential tail rather than the
/// truncated inverse Gaussian.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let b = (t * z - 1.0) / t.sqrt();
    let a = -(t * z + 1.0) / t.sqrt();
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 2.0 * FRAC_2_PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn rtigauss<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if TRUNC_RECIP > z {
        // Mean beyond the truncation point: propose from the z = 0 case and accept.
        loop {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let r = 1.0 + e1 * t;
            let x = t / (r * r);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let mu_y = mu * n * n;
            let half_mu = 0.5 * mu;
            let mut x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// `log Φ(x)` for the standard normal CDF.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -37.0 {
        (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// `E[PG(b, c)] = b/(2c) tanh(c/2)`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        b * 0.25 * (1.0 - c * c / 12.0)
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(b, c)] = b/(4c³)(sinh c − c) sech²(c/2)`.
pub fn pg_var(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        // (sinh c − c)/c³ = 1/6 + c²/120 + c⁴/5040 + …
        let c2 = c * c;
        let ratio = 1.0 / 6.0 + c2 / 120.0 + c2 * c2 / 5040.0;
        let sech2 = 1.0 / (0.5 * c).cosh().powi(2);
        b / 4.0 * ratio * sech2
    } else {
        // sinh c · sech²(c/2) = 2 tanh(c/2) avoids overflow.
        let sech2 = 1.0 / (0.5 * c).cosh().powi(2);
        b / (4.0 * c * c * c) * (2.0 * (0.5 * c).tanh() - c * sech2)
    }
}
