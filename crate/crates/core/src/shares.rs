//! Simulated market shares.
//!
//! Consumers are split into price-sensitivity intervals by the cutoffs; within
//! each interval a fixed set of uniform draws is pushed through the conditional
//! quantile function, so shares stay smooth in the parameters even as the
//! cutoffs move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assortment::cutoffs_into;
use crate::choice::ProductLine;
use crate::error::{Error, Result};
use crate::kernel::{logit_sums, weighted_logit_sums, Scratch};
use crate::taste::{self, DrawSet, Stratum, TasteDistribution};

/// Default number of uniform draws per interval.
pub const DEFAULT_INTERVAL_DRAWS: usize = 2000;
/// Default number of normal draws for the full-availability logit.
pub const DEFAULT_NORMAL_DRAWS: usize = 10_000;

/// Simulation draws held fixed across markets and parameter values: uniforms
/// for the stratified foldable integral, log-income normals for the
/// full-availability logit.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationDraws {
    pub uniforms: DrawSet,
    pub normals: Vec<f64>,
}

impl SimulationDraws {
    pub fn new(seed: u64, interval_draws: usize, normal_draws: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniforms = DrawSet::new(rng.random(), interval_draws)?;
        if normal_draws == 0 {
            return Err(Error::InvalidInput("need at least one normal draw".into()));
        }
        Ok(Self {
            uniforms,
            normals: taste::normal_draws(rng.random(), normal_draws),
        })
    }
}

/// Product shares (line order) plus the outside share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketShares {
    pub inside: Vec<f64>,
    pub outside: f64,
}

impl MarketShares {
    pub fn total(&self) -> f64 {
        self.inside.iter().sum::<f64>() + self.outside
    }
}

/// Which products a consumer in interval `j` sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Menu {
    /// The top `j` products.
    Nested,
    /// Every product, regardless of interval.
    Full,
}

/// Shares when consumers are stratified by `cutoffs` (the `J - 1` interior
/// thresholds). Writes `J` inside shares to `inside` and returns the outside share.
pub(crate) fn stratified_shares(
    gamma: &[f64],
    prices: &[f64],
    dist: &TasteDistribution,
    cutoffs: &[f64],
    menu: Menu,
    uniforms: &[f64],
    inside: &mut [f64],
) -> f64 {
    let j_total = gamma.len();
    inside.iter_mut().for_each(|s| *s = 0.0);
    let mut outside = 0.0;
    let mut scratch = Scratch::with_capacity(uniforms.len(), j_total);
    let n = uniforms.len() as f64;
    for depth in 1..=j_total {
        let lo = if depth == 1 {
            f64::NEG_INFINITY
        } else {
            cutoffs[depth - 2]
        };
        let hi = if depth == j_total {
            f64::INFINITY
        } else {
            cutoffs[depth - 1]
        };
        let stratum = Stratum::new(dist, lo, hi);
        let mass = stratum.mass();
        if mass <= 0.0 {
            continue;
        }
        let offered = match menu {
            Menu::Nested => depth,
            Menu::Full => j_total,
        };
        scratch.alphas.clear();
        scratch.alphas.extend(uniforms.iter().map(|&u| stratum.z_at(u)));
        let mut acc = [0.0_f64; 64];
        let log_alpha = (dist.log_alpha_location(), dist.income_log_sd);
        let acc_out = logit_sums(gamma, prices, offered, log_alpha, &mut scratch, &mut acc);
        let w = mass / n;
        for k in 0..offered {
            inside[k] += w * acc[k];
        }
        outside += w * acc_out;
    }
    outside
}

/// Probability mass of consumers facing each nested depth `1..=J`.
pub(crate) fn interval_masses(dist: &TasteDistribution, cutoffs: &[f64]) -> Vec<f64> {
    let j_total = cutoffs.len() + 1;
    (1..=j_total)
        .map(|depth| {
            let lo = if depth == 1 {
                f64::NEG_INFINITY
            } else {
                cutoffs[depth - 2]
            };
            let hi = if depth == j_total {
                f64::INFINITY
            } else {
                cutoffs[depth - 1]
            };
            Stratum::new(dist, lo, hi).mass()
        })
        .collect()
}

fn check_inputs(gamma: &[f64], line: &ProductLine) -> Result<()> {
    if line.is_empty() {
        return Err(Error::EmptyLine);
    }
    if line.len() > 64 {
        return Err(Error::InvalidInput(
            "share simulation supports at most 64 products".into(),
        ));
    }
    if gamma.len() != line.len() {
        return Err(Error::dims("gamma", line.len(), gamma.len()));
    }
    Ok(())
}

/// Market shares when every consumer is offered their profit-maximizing
/// nested assortment.
pub fn predicted_shares(
    gamma: &[f64],
    line: &ProductLine,
    dist: &TasteDistribution,
    draws: &DrawSet,
) -> Result<MarketShares> {
    check_inputs(gamma, line)?;
    line.require_strict()?;
    let (prices, margins) = (line.prices(), line.margins());
    let mut cutoffs = vec![0.0; line.len() - 1];
    cutoffs_into(gamma, &prices, &margins, &mut cutoffs)?;
    let mut inside = vec![0.0; line.len()];
    let outside = stratified_shares(
        gamma,
        &prices,
        dist,
        &cutoffs,
        Menu::Nested,
        draws.uniforms(),
        &mut inside,
    );
    Ok(MarketShares { inside, outside })
}

/// Precomputed `exp(-alpha_i p_k)` for a fixed set of consumers facing the
/// whole line; evaluating shares for new `gamma` is then a weighted sum.
#[derive(Clone, Debug)]
pub(crate) struct FullLogitKernel {
    n: usize,
    /// Column-major: `n` consumers per product.
    columns: Vec<f64>,
}

impl FullLogitKernel {
    pub(crate) fn new(prices: &[f64], dist: &TasteDistribution, normals: &[f64]) -> Self {
        let alphas: Vec<f64> = normals.iter().map(|&v| dist.alpha_from_income_draw(v)).collect();
        let columns = prices
            .iter()
            .flat_map(|p| alphas.iter().map(move |a| (-a * p).exp()))
            .collect();
        Self {
            n: normals.len(),
            columns,
        }
    }

    /// Inside shares written to `inside`; returns the outside share.
    pub(crate) fn shares(&self, gamma: &[f64], inside: &mut [f64]) -> f64 {
        let exp_gamma: Vec<f64> = gamma.iter().map(|g| g.exp()).collect();
        let mut denom = vec![0.0; self.n];
        inside.iter_mut().for_each(|s| *s = 0.0);
        let outside = weighted_logit_sums(&exp_gamma, &self.columns, &mut denom, inside);
        let n = self.n as f64;
        inside.iter_mut().for_each(|s| *s /= n);
        outside / n
    }
}

/// Mean logit shares with every consumer facing the full line, consumers
/// given by log-income shocks `normal_draws`.
pub fn standard_logit_shares(
    gamma: &[f64],
    line: &ProductLine,
    dist: &TasteDistribution,
    normal_draws: &[f64],
) -> Result<MarketShares> {
    check_inputs(gamma, line)?;
    if normal_draws.is_empty() {
        return Err(Error::InvalidInput("need at least one normal draw".into()));
    }
    let kernel = FullLogitKernel::new(&line.prices(), dist, normal_draws);
    let mut inside = vec![0.0; line.len()];
    let outside = kernel.shares(gamma, &mut inside);
    Ok(MarketShares { inside, outside })
}
