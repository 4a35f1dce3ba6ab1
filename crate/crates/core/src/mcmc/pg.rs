//! Pólya-Gamma draws.
//!
//! PG(1, c) uses Devroye's exact alternating-series sampler with truncation
//! point 0.64, as popularized by the BayesLogit package. Integer `b` sums
//! `b` such draws; fractional `b` adds a truncated gamma-series draw.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

const TRUNC: f64 = 0.64;
const SERIES_TERMS: usize = 200;

/// log Φ(x), accurate far into the lower tail.
fn ln_norm_cdf(x: f64) -> f64 {
    if x > -20.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Coefficient `a_n(x)` of the alternating series for the J*(1, 0) density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Probability of the exponential (right) piece of the proposal.
fn mass_texpon(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC).
fn truncated_inverse_gaussian<G: Rng + ?Sized>(z: f64, rng: &mut G) -> f64 {
    let t = TRUNC;
    let mut x = t + 1.0;
    if 1.0 / t > z {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            x = 1.0 + e1 * t;
            x = t / (x * x);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let y: f64 = rng.sample::<f64, _>(StandardNormal).powi(2);
            let mu_y = mu * y;
            x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

fn sample_pg1<G: Rng + ?Sized>(c: f64, rng: &mut G) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = mass_texpon(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + Distribution::<f64>::sample(&Exp1, rng) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
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

/// PG(b, c) for fractional b: the first terms of the infinite gamma
/// convolution plus the mean of the remainder.
fn sample_pg_series<G: Rng + ?Sized>(b: f64, c: f64, rng: &mut G) -> f64 {
    let d = c * c / (4.0 * PI * PI);
    let gamma = Gamma::new(b, 1.0).expect("positive shape");
    let mut sum = 0.0;
    for k in 1..=SERIES_TERMS {
        let h = k as f64 - 0.5;
        sum += gamma.sample(rng) / (h * h + d);
    }
    // Remainder Σ_{k>K} 1/((k−½)² + d) by the midpoint integral.
    let from = SERIES_TERMS as f64;
    let tail = if d > 0.0 {
        let r = d.sqrt();
        (0.5 * PI - (from / r).atan()) / r
    } else {
        1.0 / from
    };
    (sum + b * tail) / (2.0 * PI * PI)
}

/// One draw from the Pólya-Gamma distribution PG(b, c), `b > 0`.
pub fn sample_polya_gamma<G: Rng + ?Sized>(b: f64, c: f64, rng: &mut G) -> f64 {
    assert!(b > 0.0, "PG shape must be positive");
    let whole = b.floor() as usize;
    let frac = b - whole as f64;
    let mut x: f64 = (0..whole).map(|_| sample_pg1(c, rng)).sum();
    if frac > 1e-12 {
        x += sample_pg_series(frac, c, rng);
    }
    x
}

/// E[PG(b, c)] = b/(2c) · tanh(c/2), with limit b/4 at c = 0.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}
