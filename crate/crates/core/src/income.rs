//! Lognormal income parameters from published quintile means.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::golden_section;
use crate::taste::normal_draws;

pub const MU_BOUNDS: (f64, f64) = (-2.0, 5.0);
pub const SIGMA_BOUNDS: (f64, f64) = (0.0, 3.0);
/// Below this `sigma` the fit is reported as degenerate.
pub const DEGENERATE_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormalFit {
    pub mu: f64,
    pub sigma: f64,
    /// Sum of squared quintile-mean errors at the optimum.
    pub objective: f64,
    /// `sigma` collapsed onto its lower boundary.
    pub degenerate: bool,
}

/// Means of each fifth of a sorted sample.
fn quintile_means(sorted: &[f64]) -> [f64; 5] {
    let n = sorted.len();
    let mut out = [0.0; 5];
    for (k, q) in out.iter_mut().enumerate() {
        let (a, b) = (k * n / 5, (k + 1) * n / 5);
        *q = sorted[a..b].iter().sum::<f64>() / (b - a) as f64;
    }
    out
}

/// Fits `ln inc = mu + sigma v` to five quintile means by least squares over
/// one fixed seeded sample of `n_sim` standard normals.
///
/// For fixed `sigma` the objective is quadratic in `exp(mu)`, so the inner
/// minimization is exact; `sigma` is searched by golden section after a grid
/// scan. `mu` is clamped to [`MU_BOUNDS`].
pub fn fit_lognormal_from_quintiles(quintiles: &[f64; 5], n_sim: usize, seed: u64) -> Result<LognormalFit> {
    if quintiles.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
        return Err(Error::InvalidInput("quintile means must be positive".into()));
    }
    if quintiles.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("quintile means must be non-decreasing".into()));
    }
    if n_sim < 5 {
        return Err(Error::InvalidInput("need at least five simulated incomes".into()));
    }
    let mut v = normal_draws(seed, n_sim);
    v.sort_by(f64::total_cmp);
    let mut scratch = vec![0.0; n_sim];
    let mut fit_at = |sigma: f64| -> (f64, f64) {
        for (s, z) in scratch.iter_mut().zip(&v) {
            *s = (sigma * z).exp();
        }
        let m = quintile_means(&scratch);
        let num: f64 = m.iter().zip(quintiles).map(|(a, b)| a * b).sum();
        let den: f64 = m.iter().map(|a| a * a).sum();
        let mu = (num / den).ln().clamp(MU_BOUNDS.0, MU_BOUNDS.1);
        let scale = mu.exp();
        let obj = m.iter().zip(quintiles).map(|(a, b)| (scale * a - b).powi(2)).sum();
        (mu, obj)
    };
    let (lo, hi) = SIGMA_BOUNDS;
    let grid = 60;
    let step = (hi - lo) / grid as f64;
    let best = (0..=grid)
        .map(|i| lo + step * i as f64)
        .min_by(|&a, &b| fit_at(a).1.total_cmp(&fit_at(b).1))
        .expect("non-empty grid");
    let m = golden_section(
        |s| fit_at(s).1,
        (best - step).max(lo),
        (best + step).min(hi),
        1e-10,
        200,
    );
    let sigma = if fit_at(best).1 <= m.value { best } else { m.x };
    let (mu, objective) = fit_at(sigma);
    Ok(LognormalFit {
        mu,
        sigma,
        objective,
        degenerate: sigma < DEGENERATE_SIGMA,
    })
}

/// `market_id,q1,q2,q3,q4,q5` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuintileRow {
    pub market_id: String,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub q5: f64,
}

impl QuintileRow {
    pub fn means(&self) -> [f64; 5] {
        [self.q1, self.q2, self.q3, self.q4, self.q5]
    }
}

pub fn read_quintiles<R: Read>(reader: R) -> Result<Vec<QuintileRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Schema {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population_quintiles(mu: f64, sigma: f64) -> [f64; 5] {
        let mut v = normal_draws(777, 400_000);
        v.sort_by(f64::total_cmp);
        let inc: Vec<f64> = v.iter().map(|z| (mu + sigma * z).exp()).collect();
        quintile_means(&inc)
    }

    #[test]
    fn recovers_generating_parameters() {
        // Quintiles from an independent, much larger sample than the fit uses.
        let q = population_quintiles(1.0, 0.5);
        let fit = fit_lognormal_from_quintiles(&q, 10_000, 1).unwrap();
        assert!((fit.mu - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.sigma - 0.5).abs() < 0.05, "{fit:?}");
        assert!(!fit.degenerate);
    }

    #[test]
    fn scaling_shifts_mu_by_log_k() {
        let q = population_quintiles(0.8, 0.7);
        let base = fit_lognormal_from_quintiles(&q, 10_000, 2).unwrap();
        for k in [0.5, 3.0] {
            let scaled = q.map(|x| x * k);
            let fit = fit_lognormal_from_quintiles(&scaled, 10_000, 2).unwrap();
            assert!((fit.mu - base.mu - f64::ln(k)).abs() < 1e-9);
            assert!((fit.sigma - base.sigma).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_quintiles_are_degenerate() {
        let fit = fit_lognormal_from_quintiles(&[2.0; 5], 10_000, 3).unwrap();
        assert!(fit.degenerate);
        assert!((fit.mu - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn rejects_decreasing_or_non_positive() {
        assert!(fit_lognormal_from_quintiles(&[1.0, 2.0, 1.5, 3.0, 4.0], 1000, 0).is_err());
        assert!(fit_lognormal_from_quintiles(&[0.0, 2.0, 2.5, 3.0, 4.0], 1000, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let q = [1.0, 1.8, 2.5, 3.4, 5.9];
        assert_eq!(
            fit_lognormal_from_quintiles(&q, 5000, 9).unwrap(),
            fit_lognormal_from_quintiles(&q, 5000, 9).unwrap()
        );
    }

    #[test]
    fn reads_quintile_csv() {
        let csv = "market_id,q1,q2,q3,q4,q5\nbj-2011,1,2,3,4,5\n";
        let rows = read_quintiles(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].means(), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(
            read_quintiles("market_id,q1,q2,q3,q4,q5\nx,1,2,z,4,5\n".as_bytes()),
            Err(Error::Schema { row: 2, .. })
        ));
    }
}
