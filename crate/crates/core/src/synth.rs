//! Seeded Monte Carlo markets with a known data generating process.
//!
//! Each market draws `eps1, eps2, eps3 ~ U(0, 1)` and sets
//! `cpi = 1 + 0.2 eps1`, `mu = 1 + 0.1 eps2`, `sigma = 0.5 + 0.1 eps3`; real
//! prices and margins are the nominal vectors divided by `cpi`, and
//! `gamma_jt = xi_j + shock_scale * rho_jt` with `rho_jt ~ N(0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::choice::ProductLine;
use crate::error::{Error, Result};
use crate::panel::{Market, Panel, DEFAULT_GROUP};
use crate::shares::{
    predicted_shares, standard_logit_shares, SimulationDraws, DEFAULT_INTERVAL_DRAWS, DEFAULT_NORMAL_DRAWS,
};
use crate::taste::TasteDistribution;

/// How the true data generating process allocates products to consumers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpAssortment {
    /// Each consumer sees their profit-maximizing nested assortment.
    #[default]
    Foldable,
    /// Every consumer sees the whole line.
    FullAvailability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_markets: usize,
    pub xi: Vec<f64>,
    pub nominal_prices: Vec<f64>,
    pub nominal_margins: Vec<f64>,
    pub theta_true: f64,
    pub shock_scale: f64,
    pub seed: u64,
    pub assortment: DgpAssortment,
    /// Uniform draws per taste interval (foldable process).
    pub interval_draws: usize,
    /// Log-income draws (full-availability process).
    pub normal_draws: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_markets: 186,
            xi: vec![2.0, 1.5, 1.2, 1.0, 0.8],
            nominal_prices: vec![3.6, 2.4, 1.6, 1.2, 1.0],
            nominal_margins: vec![2.5, 1.8, 1.2, 1.0, 0.8],
            theta_true: 2.0,
            shock_scale: 0.3,
            seed: 20_240_601,
            assortment: DgpAssortment::Foldable,
            interval_draws: DEFAULT_INTERVAL_DRAWS,
            normal_draws: DEFAULT_NORMAL_DRAWS,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let j = self.xi.len();
        if j == 0 {
            return Err(Error::EmptyLine);
        }
        if self.nominal_prices.len() != j {
            return Err(Error::dims("nominal prices", j, self.nominal_prices.len()));
        }
        if self.nominal_margins.len() != j {
            return Err(Error::dims("nominal margins", j, self.nominal_margins.len()));
        }
        if self.n_markets == 0 {
            return Err(Error::InvalidInput("n_markets must be positive".into()));
        }
        if !(self.theta_true > 0.0) || !(self.shock_scale >= 0.0) {
            return Err(Error::InvalidInput(
                "theta_true must be positive and shock_scale non-negative".into(),
            ));
        }
        if self.interval_draws == 0 || self.normal_draws == 0 {
            return Err(Error::InvalidInput("draw counts must be positive".into()));
        }
        if self.xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("xi must be finite".into()));
        }
        let line = ProductLine::from_vectors(&self.nominal_margins, &self.nominal_prices)?;
        if self.assortment == DgpAssortment::Foldable {
            line.require_strict()?;
        }
        Ok(())
    }
}

/// A generated panel together with the parameters that produced it. An
/// estimator seeded with `config.seed` and the same draw counts reuses the
/// generating draws exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPanel {
    pub config: DgpConfig,
    pub panel: Panel,
    /// `gamma_jt`, one vector per market.
    pub true_gamma: Vec<Vec<f64>>,
}

impl SyntheticPanel {
    /// Pooled inside shares of every market and tier.
    pub fn pooled_shares(&self) -> Vec<f64> {
        self.panel
            .markets()
            .iter()
            .flat_map(|m| m.shares.iter().copied())
            .collect()
    }
}

pub fn generate_panel(cfg: &DgpConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let draws = SimulationDraws::new(cfg.seed, cfg.interval_draws, cfg.normal_draws)?;
    // Market parameters come from a separate stream of the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let width = cfg.n_markets.to_string().len();
    let mut markets = Vec::with_capacity(cfg.n_markets);
    let mut true_gamma = Vec::with_capacity(cfg.n_markets);
    for t in 0..cfg.n_markets {
        let (e1, e2, e3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let cpi = 1.0 + 0.2 * e1;
        let dist = TasteDistribution::new(cfg.theta_true, 1.0 + 0.1 * e2, 0.5 + 0.1 * e3)?;
        let gamma: Vec<f64> = cfg
            .xi
            .iter()
            .map(|&x| x + cfg.shock_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let prices: Vec<f64> = cfg.nominal_prices.iter().map(|p| p / cpi).collect();
        let margins: Vec<f64> = cfg.nominal_margins.iter().map(|m| m / cpi).collect();
        let line = ProductLine::from_vectors(&margins, &prices)?;
        let shares = match cfg.assortment {
            DgpAssortment::Foldable => predicted_shares(&gamma, &line, &dist, &draws.uniforms)?,
            DgpAssortment::FullAvailability => standard_logit_shares(&gamma, &line, &dist, &draws.normals)?,
        };
        markets.push(Market {
            id: format!("m{:0width$}", t + 1),
            group: DEFAULT_GROUP.to_string(),
            cpi,
            income_log_mean: dist.income_log_mean,
            income_log_sd: dist.income_log_sd,
            line,
            shares: shares.inside,
            market_size: 1.0,
            unit_tax: None,
        });
        true_gamma.push(gamma);
    }
    Ok(SyntheticPanel {
        config: cfg.clone(),
        panel: Panel::new(markets)?,
        true_gamma,
    })
}
