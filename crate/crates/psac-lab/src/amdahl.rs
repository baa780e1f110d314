//! Scalability model fitting.
//!
//! Throughput over cluster size is modeled as X(N) = lambda N / (1 +
//! sigma (N - 1)): lambda is single-node throughput, sigma the
//! contention that caps scaling, and lambda/sigma the asymptote no
//! amount of hardware moves past. Fitting runs a
//! linearized least squares first (1/X is linear in 1/N), then refines
//! both parameters with damped Gauss-Newton steps on the raw residuals,
//! since the linearization weights low-N points too heavily.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct AmdahlFit {
    /// Single-node throughput, in the unit of the input X values.
    pub lambda: f64,
    /// Contention coefficient in [0, 1].
    pub sigma: f64,
    /// lambda/sigma; None when sigma fitted to zero (linear scaling,
    /// no asymptote).
    pub a_inf: Option<f64>,
    /// Root mean square of the final residuals.
    pub residual: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least two distinct cluster sizes, got {0}")]
    NotEnoughPoints(usize),
    #[error("throughput must be positive, got {0} at N={1}")]
    NonPositive(f64, u32),
    #[error("normal equations are singular; the points do not constrain the model")]
    Singular,
}

pub fn model(lambda: f64, sigma: f64, n: f64) -> f64 {
    lambda * n / (1.0 + sigma * (n - 1.0))
}

/// Fit lambda and sigma to (N, X) throughput observations.
pub fn fit(points: &[(u32, f64)]) -> Result<AmdahlFit, FitError> {
    let mut sizes: Vec<u32> = points.iter().map(|(n, _)| *n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(FitError::NotEnoughPoints(sizes.len()));
    }
    for (n, x) in points {
        if *x <= 0.0 || !x.is_finite() {
            return Err(FitError::NonPositive(*x, *n));
        }
    }

    // Linearized start: 1/X = a(1/N) + b with a = (1 - sigma)/lambda
    // and b = sigma/lambda.
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0, 0.0, 0.0);
    let m = points.len() as f64;
    for (n, x) in points {
        let xi = 1.0 / f64::from(*n);
        let yi = 1.0 / x;
        sx += xi;
        sy += yi;
        sxx += xi * xi;
        sxy += xi * yi;
    }
    let det = m * sxx - sx * sx;
    if det.abs() < f64::EPSILON {
        return Err(FitError::Singular);
    }
    let a = (m * sxy - sx * sy) / det;
    let b = (sy * sxx - sx * sxy) / det;
    let denom = a + b;
    if denom.abs() < f64::EPSILON {
        return Err(FitError::Singular);
    }
    let mut lambda = 1.0 / denom;
    let mut sigma = (b / denom).clamp(0.0, 1.0);
    if !lambda.is_finite() || lambda <= 0.0 {
        // Fall back to the first point as a crude but safe start.
        lambda = points[0].1 / f64::from(points[0].0);
        sigma = 0.0;
    }

    // Gauss-Newton on r_i = X_i - model(N_i).
    for _ in 0..50 {
        let (mut jtj11, mut jtj12, mut jtj22) = (0.0f64, 0.0, 0.0);
        let (mut jtr1, mut jtr2) = (0.0f64, 0.0);
        for (n, x) in points {
            let nf = f64::from(*n);
            let d = 1.0 + sigma * (nf - 1.0);
            let r = x - lambda * nf / d;
            let dl = nf / d;
            let ds = -lambda * nf * (nf - 1.0) / (d * d);
            jtj11 += dl * dl;
            jtj12 += dl * ds;
            jtj22 += ds * ds;
            jtr1 += dl * r;
            jtr2 += ds * r;
        }
        let det = jtj11 * jtj22 - jtj12 * jtj12;
        let (step_l, step_s) = if det.abs() < 1e-12 {
            if jtj11.abs() < f64::EPSILON {
                return Err(FitError::Singular);
            }
            // sigma is unconstrained (e.g. all residual dependence is
            // on lambda); adjust lambda alone.
            (jtr1 / jtj11, 0.0)
        } else {
            ((jtj22 * jtr1 - jtj12 * jtr2) / det, (jtj11 * jtr2 - jtj12 * jtr1) / det)
        };
        lambda += step_l;
        sigma = (sigma + step_s).clamp(0.0, 1.0);
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(FitError::Singular);
        }
        if step_l.abs() < lambda.abs() * 1e-12 && step_s.abs() < 1e-14 {
            break;
        }
    }

    // Iteration noise can leave a vanishing positive sigma on perfectly
    // linear data; anything this small is indistinguishable from zero.
    if sigma < 1e-12 {
        sigma = 0.0;
    }
    let mut ss = 0.0;
    for (n, x) in points {
        let r = x - model(lambda, sigma, f64::from(*n));
        ss += r * r;
    }
    let residual = (ss / m).sqrt();
    let a_inf = if sigma > 0.0 { Some(lambda / sigma) } else { None };
    Ok(AmdahlFit { lambda, sigma, a_inf, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_synthetic_parameters() {
        let lambda = 1000.0;
        let sigma = 0.01;
        let points: Vec<(u32, f64)> =
            (1..=32).map(|n| (n, model(lambda, sigma, f64::from(n)))).collect();
        let fit = fit(&points).expect("fit");
        assert!((fit.lambda - lambda).abs() / lambda < 1e-3, "lambda {}", fit.lambda);
        assert!((fit.sigma - sigma).abs() / sigma < 1e-3, "sigma {}", fit.sigma);
        assert!(fit.residual < 1e-6);
    }

    #[test]
    fn linear_scaling_has_no_asymptote() {
        let points: Vec<(u32, f64)> = (1..=8).map(|n| (n, 500.0 * f64::from(n))).collect();
        let fit = fit(&points).expect("fit");
        assert_eq!(fit.a_inf, None, "sigma {}", fit.sigma);
        assert!((fit.lambda - 500.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert_eq!(fit(&[(4, 100.0)]), Err(FitError::NotEnoughPoints(1)));
        assert!(matches!(
            fit(&[(1, 100.0), (2, -5.0)]),
            Err(FitError::NonPositive(_, 2))
        ));
    }

    #[test]
    fn copes_with_noisy_observations() {
        // Residuals stay bounded and parameters land near truth even with
        // multiplicative noise baked into the points.
        let noise = [1.02, 0.97, 1.01, 0.99, 1.03, 0.98, 1.0, 1.01];
        let points: Vec<(u32, f64)> = (1u32..=8)
            .map(|n| (n, model(800.0, 0.05, f64::from(n)) * noise[(n - 1) as usize]))
            .collect();
        let fit = fit(&points).expect("fit");
        assert!((fit.lambda - 800.0).abs() / 800.0 < 0.05);
        assert!((fit.sigma - 0.05).abs() / 0.05 < 0.5);
    }
}
