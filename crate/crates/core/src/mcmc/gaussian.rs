//! Conjugate Gaussian pieces: weighted linear models with N(0, τ²I)
//! coefficient priors, integrated or drawn.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::Cholesky;

/// Posterior of coefficients β in r ~ N(Xβ, σ² W⁻¹), β ~ N(0, τ² I).
#[derive(Debug, Clone)]
pub struct LinearPosterior {
    chol: Cholesky,
    mean: Vec<f64>,
    /// log marginal likelihood up to terms shared by every design on the
    /// same rows: −½(K log τ² + log|P|) + ½ bᵀP⁻¹b.
    pub log_ml: f64,
}

impl LinearPosterior {
    /// `x` is `rows.len() × k` row-major, aligned with `rows`; `w` and `r`
    /// are indexed by row id.
    pub fn new(x: &[f64], k: usize, rows: &[usize], w: &[f64], r: &[f64], sigma2: f64, tau2: f64) -> Self {
        let mut prec = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for (xi, &i) in x.chunks_exact(k.max(1)).zip(rows) {
            let wi = w[i];
            let wr = wi * r[i];
            for a in 0..k {
                let v = wi * xi[a];
                b[a] += xi[a] * wr;
                if v != 0.0 {
                    let row = &mut prec[a * k..a * k + a + 1];
                    for (p, xb) in row.iter_mut().zip(&xi[..=a]) {
                        *p += v * xb;
                    }
                }
            }
        }
        for a in 0..k {
            for c in 0..a {
                prec[c * k + a] = prec[a * k + c];
            }
        }
        for v in prec.iter_mut() {
            *v /= sigma2;
        }
        for a in 0..k {
            prec[a * k + a] += 1.0 / tau2;
        }
        for v in b.iter_mut() {
            *v /= sigma2;
        }
        let chol = Cholesky::new(&prec, k).expect("posterior precision is positive definite");
        let mut y = b;
        chol.forward(&mut y);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        let log_ml = -0.5 * (k as f64 * tau2.ln() + chol.log_det()) + 0.5 * quad;
        let mut mean = y;
        chol.backward(&mut mean);
        Self { chol, mean, log_ml }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn draw<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.backward(&mut z);
        z.iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }
}

/// Posterior (mean, variance) of a single effect δ with r ~ N(uδ, σ²I),
/// δ ~ N(0, τ²).
pub fn node_effect_posterior(residual: &[f64], segment_covariate: &[f64], sigma2: f64, tau2: f64) -> (f64, f64) {
    assert_eq!(residual.len(), segment_covariate.len());
    let utu: f64 = segment_covariate.iter().map(|u| u * u).sum();
    let utr: f64 = segment_covariate.iter().zip(residual).map(|(u, r)| u * r).sum();
    let var = 1.0 / (utu / sigma2 + 1.0 / tau2);
    (var * utr / sigma2, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_covariate_gives_prior() {
        let (m, v) = node_effect_posterior(&[1.0, 2.0], &[0.0, 0.0], 1.0, 3.0);
        assert_eq!((m, v), (0.0, 3.0));
    }

    #[test]
    fn flat_limit_is_least_squares() {
        let r = [1.0, 3.0, 2.0];
        let u = [1.0, 2.0, 0.5];
        let (m, _) = node_effect_posterior(&r, &u, 1.0, 1e12);
        let ls = (1.0 + 6.0 + 1.0) / (1.0 + 4.0 + 0.25);
        assert!((m - ls).abs() < 1e-9);
    }

    #[test]
    fn small_case_matches_grid_integration() {
        let (m, v) = node_effect_posterior(&[1.0, 2.0], &[1.0, 1.0], 1.0, 1.0);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert!((m - 1.0).abs() < 1e-15);
        // Unnormalized posterior density on a fine grid.
        let dens = |d: f64| (-0.5 * ((1.0 - d).powi(2) + (2.0 - d).powi(2)) - 0.5 * d * d).exp();
        let h = 1e-3;
        let grid: Vec<f64> = (-6000..=6000).map(|i| i as f64 * h).collect();
        let z: f64 = grid.iter().map(|d| dens(*d)).sum::<f64>() * h;
        let gm: f64 = grid.iter().map(|d| d * dens(*d)).sum::<f64>() * h / z;
        let gv: f64 = grid.iter().map(|d| (d - gm).powi(2) * dens(*d)).sum::<f64>() * h / z;
        assert!((gm - m).abs() < 1e-6);
        assert!((gv - v).abs() < 1e-6);
    }

    #[test]
    fn univariate_linear_posterior_agrees() {
        let r = [0.3, -1.0, 2.0, 0.7];
        let u = [1.0, 2.0, 0.5, -1.0];
        let rows = [0, 1, 2, 3];
        let w = [1.0; 4];
        let lp = LinearPosterior::new(&u, 1, &rows, &w, &r, 2.0, 0.5);
        let (m, v) = node_effect_posterior(&r, &u, 2.0, 0.5);
        assert!((lp.mean()[0] - m).abs() < 1e-14);
        // log ML against the direct Gaussian marginal, up to the shared term.
        let utu: f64 = u.iter().map(|x| x * x).sum();
        let direct = -0.5 * (0.5f64.ln() + (utu / 2.0 + 2.0).ln()) + 0.5 * m * m / v;
        assert!((lp.log_ml - direct).abs() < 1e-12);
    }

    #[test]
    fn draws_have_posterior_moments() {
        let x = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 2.0, -1.0];
        let rows = [0, 1, 2, 3];
        let w = [1.0, 2.0, 0.5, 1.0];
        let r = [1.0, 0.5, -0.3, 2.0];
        let lp = LinearPosterior::new(&x, 2, &rows, &w, &r, 1.0, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40_000;
        let mut s = [0.0; 2];
        for _ in 0..n {
            let d = lp.draw(&mut rng);
            s[0] += d[0];
            s[1] += d[1];
        }
        assert!((s[0] / n as f64 - lp.mean()[0]).abs() < 0.02);
        assert!((s[1] / n as f64 - lp.mean()[1]).abs() < 0.02);
    }
}
