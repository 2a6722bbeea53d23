//! Counterfactuals at fitted parameters.
//!
//! Mean utilities `gamma` stay at their estimates throughout; only prices and
//! the menu rule change. Baselines and scenarios share one draw set, so every
//! difference reported here is free of simulation noise from redrawing.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assortment::cutoffs_into;
use crate::error::{Error, Result};
use crate::estimator::EstimationResult;
use crate::panel::{Market, Panel};
use crate::shares::{interval_masses, stratified_shares, FullLogitKernel, Menu, SimulationDraws};

/// How shares respond to a price change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Cutoffs re-solved at the new prices.
    Adjusted,
    /// Cutoffs frozen at their baseline values.
    FixedAssortment,
    /// Every consumer faces the full line.
    StandardLogit,
}

impl ResponseMode {
    pub fn label(self) -> &'static str {
        match self {
            ResponseMode::Adjusted => "adjusted",
            ResponseMode::FixedAssortment => "fixed_assortment",
            ResponseMode::StandardLogit => "standard_logit",
        }
    }
}

/// Estimated parameters attached to the panel and draws they were fit with.
pub struct FittedModel<'a> {
    panel: &'a Panel,
    theta: f64,
    gamma: &'a [Vec<f64>],
    draws: SimulationDraws,
}

impl<'a> FittedModel<'a> {
    pub fn new(result: &'a EstimationResult, panel: &'a Panel, draws: SimulationDraws) -> Result<Self> {
        Self::from_parts(panel, result.theta_hat, &result.gamma_hat, draws)
    }

    pub fn from_parts(panel: &'a Panel, theta: f64, gamma: &'a [Vec<f64>], draws: SimulationDraws) -> Result<Self> {
        if gamma.len() != panel.len() {
            return Err(Error::dims("gamma markets", panel.len(), gamma.len()));
        }
        if let Some(g) = gamma.iter().find(|g| g.len() != panel.n_products()) {
            return Err(Error::dims("gamma", panel.n_products(), g.len()));
        }
        if !(theta > 0.0) {
            return Err(Error::InvalidInput(format!("theta must be positive, got {theta}")));
        }
        Ok(Self {
            panel,
            theta,
            gamma,
            draws,
        })
    }

    pub fn panel(&self) -> &Panel {
        self.panel
    }

    fn cutoffs(&self, t: usize, prices: &[f64]) -> Result<Vec<f64>> {
        let m = &self.panel.markets()[t];
        m.line.require_strict()?;
        let mut c = vec![0.0; m.n_products() - 1];
        cutoffs_into(&self.gamma[t], prices, &m.line.margins(), &mut c)?;
        Ok(c)
    }

    /// Inside shares of market `t` at `prices` under `mode`; `base_cutoffs`
    /// are the baseline cutoffs used by the fixed-assortment mode.
    fn shares(&self, t: usize, prices: &[f64], mode: ResponseMode, base_cutoffs: &[f64]) -> Result<Vec<f64>> {
        let m = &self.panel.markets()[t];
        let dist = m.taste(self.theta)?;
        let gamma = &self.gamma[t];
        let mut inside = vec![0.0; m.n_products()];
        match mode {
            ResponseMode::Adjusted => {
                let c = self.cutoffs(t, prices)?;
                stratified_shares(
                    gamma,
                    prices,
                    &dist,
                    &c,
                    Menu::Nested,
                    self.draws.uniforms.uniforms(),
                    &mut inside,
                );
            }
            ResponseMode::FixedAssortment => {
                stratified_shares(
                    gamma,
                    prices,
                    &dist,
                    base_cutoffs,
                    Menu::Nested,
                    self.draws.uniforms.uniforms(),
                    &mut inside,
                );
            }
            ResponseMode::StandardLogit => {
                FullLogitKernel::new(prices, &dist, &self.draws.normals).shares(gamma, &mut inside);
            }
        }
        Ok(inside)
    }

    fn base_cutoffs(&self, t: usize, mode: ResponseMode) -> Result<Vec<f64>> {
        let m = &self.panel.markets()[t];
        match mode {
            ResponseMode::StandardLogit => Ok(Vec::new()),
            _ => self.cutoffs(t, &m.line.prices()),
        }
    }

    /// Sales (`share * market_size`) per market and tier at scaled prices.
    fn sales<F>(&self, mode: ResponseMode, price_factors: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&Market) -> Vec<f64>,
    {
        (0..self.panel.len())
            .map(|t| {
                let m = &self.panel.markets()[t];
                let base = self.base_cutoffs(t, mode)?;
                let prices: Vec<f64> = m
                    .line
                    .prices()
                    .iter()
                    .zip(price_factors(m))
                    .map(|(p, f)| p * f)
                    .collect();
                let s = self.shares(t, &prices, mode, &base)?;
                Ok(s.into_iter().map(|x| x * m.market_size).collect())
            })
            .collect()
    }
}

/// `entries[j][k]`: percent change in tier `k` sales when tier `j`'s price
/// rises by the step, averaged across markets with `weights`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityMatrix {
    pub mode: ResponseMode,
    pub entries: Vec<Vec<f64>>,
    /// Baseline total sales per market.
    pub weights: Vec<f64>,
}

/// Weighted mean of `values`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

fn pct_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        0.0
    } else {
        100.0 * (new - old) / old
    }
}

/// Elasticities for a price step of `step_pct` percent.
pub fn elasticities_with_step(model: &FittedModel<'_>, mode: ResponseMode, step_pct: f64) -> Result<ElasticityMatrix> {
    let j = model.panel.n_products();
    let base = model.sales(mode, |m| vec![1.0; m.n_products()])?;
    let weights: Vec<f64> = base.iter().map(|s| s.iter().sum()).collect();
    let mut entries = vec![vec![0.0; j]; j];
    for (row, entry) in entries.iter_mut().enumerate() {
        let bumped = model.sales(mode, |m| {
            let mut f = vec![1.0; m.n_products()];
            f[row] += step_pct / 100.0;
            f
        })?;
        for (k, e) in entry.iter_mut().enumerate() {
            let per_market: Vec<f64> = bumped.iter().zip(&base).map(|(b, s)| pct_change(b[k], s[k])).collect();
            *e = weighted_mean(&per_market, &weights);
        }
    }
    Ok(ElasticityMatrix { mode, entries, weights })
}

/// Elasticities for a one percent price increase.
pub fn elasticities(model: &FittedModel<'_>, mode: ResponseMode) -> Result<ElasticityMatrix> {
    elasticities_with_step(model, mode, 1.0)
}

/// Splits adjusted elasticities into the fixed-assortment response and the
/// part due to menus re-optimizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityDecomposition {
    pub adjusted: ElasticityMatrix,
    pub fixed: ElasticityMatrix,
    /// `adjusted - fixed`.
    pub assortment_adjustment: Vec<Vec<f64>>,
    /// `max |adjusted - fixed - adjustment|`; zero by construction.
    pub closure_error: f64,
}

pub fn decompose_elasticities(model: &FittedModel<'_>) -> Result<ElasticityDecomposition> {
    let adjusted = elasticities(model, ResponseMode::Adjusted)?;
    let fixed = elasticities(model, ResponseMode::FixedAssortment)?;
    let adjustment: Vec<Vec<f64>> = adjusted
        .entries
        .iter()
        .zip(&fixed.entries)
        .map(|(a, f)| a.iter().zip(f).map(|(x, y)| x - y).collect())
        .collect();
    let mut closure_error = 0.0_f64;
    for ((a, f), d) in adjusted.entries.iter().zip(&fixed.entries).zip(&adjustment) {
        for ((x, y), z) in a.iter().zip(f).zip(d) {
            closure_error = closure_error.max((x - y - z).abs());
        }
    }
    Ok(ElasticityDecomposition {
        adjusted,
        fixed,
        assortment_adjustment: adjustment,
        closure_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierOutcome {
    /// One-based tier number.
    pub tier: usize,
    pub baseline_sales: f64,
    pub scenario_sales: f64,
    pub sales_change_pct: f64,
    pub baseline_value: Option<f64>,
    pub scenario_value: Option<f64>,
    pub value_change_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub scenario: String,
    pub tiers: Vec<TierOutcome>,
    pub total_sales_change_pct: f64,
    /// Name of the value metric (`tax_revenue`, `wholesale_profit`), if any.
    pub value_metric: Option<String>,
    pub baseline_value: Option<f64>,
    pub scenario_value: Option<f64>,
    pub total_value_change_pct: Option<f64>,
    pub notice: Option<String>,
}

/// Per-unit values for the value metric: baseline and scenario, per market and tier.
struct ValueSpec {
    metric: &'static str,
    baseline: Vec<Vec<f64>>,
    scenario: Vec<Vec<f64>>,
}

fn build_report(
    scenario: String,
    base: &[Vec<f64>],
    new: &[Vec<f64>],
    value: Option<ValueSpec>,
    notice: Option<String>,
) -> CounterfactualReport {
    let j = base.first().map_or(0, |s| s.len());
    let column = |rows: &[Vec<f64>], k: usize| rows.iter().map(|r| r[k]).sum::<f64>();
    let dot = |units: &[Vec<f64>], sales: &[Vec<f64>], k: usize| {
        units.iter().zip(sales).map(|(u, s)| u[k] * s[k]).sum::<f64>()
    };
    let mut tiers = Vec::with_capacity(j);
    for k in 0..j {
        let (b, s) = (column(base, k), column(new, k));
        let (bv, sv) = match &value {
            Some(v) => (Some(dot(&v.baseline, base, k)), Some(dot(&v.scenario, new, k))),
            None => (None, None),
        };
        tiers.push(TierOutcome {
            tier: k + 1,
            baseline_sales: b,
            scenario_sales: s,
            sales_change_pct: pct_change(s, b),
            baseline_value: bv,
            scenario_value: sv,
            value_change_pct: bv.zip(sv).map(|(b, s)| pct_change(s, b)),
        });
    }
    let total_base: f64 = tiers.iter().map(|t| t.baseline_sales).sum();
    let total_new: f64 = tiers.iter().map(|t| t.scenario_sales).sum();
    let baseline_value = value
        .as_ref()
        .map(|_| tiers.iter().filter_map(|t| t.baseline_value).sum::<f64>());
    let scenario_value = value
        .as_ref()
        .map(|_| tiers.iter().filter_map(|t| t.scenario_value).sum::<f64>());
    CounterfactualReport {
        scenario,
        tiers,
        total_sales_change_pct: pct_change(total_new, total_base),
        value_metric: value.map(|v| v.metric.to_string()),
        baseline_value,
        scenario_value,
        total_value_change_pct: baseline_value.zip(scenario_value).map(|(b, s)| pct_change(s, b)),
        notice,
    }
}

/// All prices scaled by `1 + pct / 100`.
pub fn uniform_price_change(model: &FittedModel<'_>, pct: f64, mode: ResponseMode) -> Result<CounterfactualReport> {
    let factor = 1.0 + pct / 100.0;
    if !(factor > 0.0) {
        return Err(Error::InvalidInput(format!(
            "price change {pct}% leaves non-positive prices"
        )));
    }
    let base = model.sales(mode, |m| vec![1.0; m.n_products()])?;
    let new = model.sales(mode, |m| vec![factor; m.n_products()])?;
    Ok(build_report(
        format!("uniform_price_{pct}pct_{}", mode.label()),
        &base,
        &new,
        None,
        None,
    ))
}

/// Ad valorem retail tax increase of `rate`: retail prices scale by
/// `1 + rate`, margins are unchanged, and the per-unit tax becomes the
/// baseline unit tax plus `rate` times the baseline retail price. Revenue is
/// reported only when the panel carries baseline unit taxes.
pub fn tax_counterfactual(model: &FittedModel<'_>, rate: f64, mode: ResponseMode) -> Result<CounterfactualReport> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("tax rate must lie in [0, 1), got {rate}")));
    }
    let base = model.sales(mode, |m| vec![1.0; m.n_products()])?;
    let new = model.sales(mode, |m| vec![1.0 + rate; m.n_products()])?;
    let markets = model.panel.markets();
    let (value, notice) = if model.panel.has_unit_tax() {
        let baseline: Vec<Vec<f64>> = markets.iter().map(|m| m.unit_tax.clone().expect("unit tax")).collect();
        let scenario = markets
            .iter()
            .zip(&baseline)
            .map(|(m, t)| t.iter().zip(m.line.prices()).map(|(u, p)| u + rate * p).collect())
            .collect();
        (
            Some(ValueSpec {
                metric: "tax_revenue",
                baseline,
                scenario,
            }),
            None,
        )
    } else {
        (
            None,
            Some("panel has no unit_tax column; tax revenue not reported".to_string()),
        )
    };
    let label = format!("tax_{}pct_{}", rate * 100.0, mode.label());
    Ok(build_report(label, &base, &new, value, notice))
}

/// Every consumer offered the whole line, against the optimal nested menus,
/// at the fitted parameters with identical draws. The value metric is
/// wholesale profit `sum_j pi_j sales_j`.
pub fn full_availability(model: &FittedModel<'_>) -> Result<CounterfactualReport> {
    let markets = model.panel.markets();
    let mut base = Vec::with_capacity(markets.len());
    let mut new = Vec::with_capacity(markets.len());
    for (t, m) in markets.iter().enumerate() {
        let prices = m.line.prices();
        let cuts = model.cutoffs(t, &prices)?;
        let dist = m.taste(model.theta)?;
        let u = model.draws.uniforms.uniforms();
        let mut nested = vec![0.0; m.n_products()];
        let mut full = vec![0.0; m.n_products()];
        stratified_shares(&model.gamma[t], &prices, &dist, &cuts, Menu::Nested, u, &mut nested);
        stratified_shares(&model.gamma[t], &prices, &dist, &cuts, Menu::Full, u, &mut full);
        base.push(nested.into_iter().map(|s| s * m.market_size).collect::<Vec<f64>>());
        new.push(full.into_iter().map(|s| s * m.market_size).collect::<Vec<f64>>());
    }
    let margins: Vec<Vec<f64>> = markets.iter().map(|m| m.line.margins()).collect();
    let value = ValueSpec {
        metric: "wholesale_profit",
        baseline: margins.clone(),
        scenario: margins,
    };
    Ok(build_report("full_availability".into(), &base, &new, Some(value), None))
}

/// Mass of consumers offered each nested depth `1..=J`, per market.
pub fn assortment_distribution(model: &FittedModel<'_>) -> Result<Vec<Vec<f64>>> {
    model
        .panel
        .markets()
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let cuts = model.cutoffs(t, &m.line.prices())?;
            Ok(interval_masses(&m.taste(model.theta)?, &cuts))
        })
        .collect()
}

/// One line of a long-format results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub scenario: String,
    pub tier: String,
    pub metric: String,
    pub value: f64,
}

impl TidyRow {
    fn new(scenario: &str, tier: impl ToString, metric: &str, value: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            tier: tier.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

impl CounterfactualReport {
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let s = self.scenario.as_str();
        let mut rows = Vec::new();
        for t in &self.tiers {
            rows.push(TidyRow::new(s, t.tier, "baseline_sales", t.baseline_sales));
            rows.push(TidyRow::new(s, t.tier, "scenario_sales", t.scenario_sales));
            rows.push(TidyRow::new(s, t.tier, "sales_change_pct", t.sales_change_pct));
            if let (Some(metric), Some(v)) = (&self.value_metric, t.value_change_pct) {
                rows.push(TidyRow::new(s, t.tier, &format!("{metric}_change_pct"), v));
            }
        }
        rows.push(TidyRow::new(
            s,
            "total",
            "sales_change_pct",
            self.total_sales_change_pct,
        ));
        if let (Some(metric), Some(v)) = (&self.value_metric, self.total_value_change_pct) {
            rows.push(TidyRow::new(s, "total", &format!("{metric}_change_pct"), v));
        }
        rows
    }
}

impl ElasticityMatrix {
    /// Rows `elasticity_<mode>`, tier `j->k`.
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let scenario = format!("elasticity_{}", self.mode.label());
        let mut rows = Vec::new();
        for (j, row) in self.entries.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                rows.push(TidyRow::new(
                    &scenario,
                    format!("{}->{}", j + 1, k + 1),
                    "sales_change_pct",
                    *v,
                ));
            }
        }
        rows
    }
}

impl ElasticityDecomposition {
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = self.adjusted.tidy_rows();
        rows.extend(self.fixed.tidy_rows());
        for (j, row) in self.assortment_adjustment.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                rows.push(TidyRow::new(
                    "elasticity_assortment_adjustment",
                    format!("{}->{}", j + 1, k + 1),
                    "sales_change_pct",
                    *v,
                ));
            }
        }
        rows.push(TidyRow::new(
            "elasticity_decomposition",
            "all",
            "closure_error",
            self.closure_error,
        ));
        rows
    }
}

/// Rows `assortment_distribution`, tier = depth, one metric per market.
pub fn assortment_tidy_rows(panel: &Panel, masses: &[Vec<f64>]) -> Vec<TidyRow> {
    let mut rows = Vec::new();
    for (m, ms) in panel.markets().iter().zip(masses) {
        for (d, v) in ms.iter().enumerate() {
            rows.push(TidyRow::new(
                "assortment_distribution",
                d + 1,
                &format!("mass_{}", m.id),
                *v,
            ));
        }
    }
    rows
}

pub fn write_tidy_csv<W: Write>(rows: &[TidyRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
