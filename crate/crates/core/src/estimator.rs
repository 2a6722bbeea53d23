//! Nested fixed point GMM estimation of the price-sensitivity scale `theta`.
//!
//! For a candidate `theta`, each market's mean utilities are recovered by the
//! contraction `gamma <- gamma + ln s_obs - ln s(gamma, theta)`, regressed on
//! fixed-utility dummies, and the residual demand shocks are interacted with
//! real prices. The objective is the square of that single moment.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assortment::cutoffs_into;
use crate::error::{Error, Result};
use crate::optimize::golden_section;
use crate::panel::{Market, Panel, DEFAULT_GROUP};
use crate::shares::{
    stratified_shares, FullLogitKernel, Menu, SimulationDraws, DEFAULT_INTERVAL_DRAWS, DEFAULT_NORMAL_DRAWS,
};
use crate::taste::TasteDistribution;

/// Mean utilities beyond this magnitude are treated as a diverging contraction.
const DIVERGENCE_BOUND: f64 = 60.0;

/// Share model used to invert observed shares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Consumers face their profit-maximizing nested assortment.
    #[default]
    Foldable,
    /// Every consumer faces the whole line.
    StandardLogit,
}

/// Fixed-utility dummies in the second-stage regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyStructure {
    #[default]
    Tier,
    TierGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub contraction_tol: f64,
    pub max_contraction_iter: usize,
    pub theta_bracket: (f64, f64),
    pub dummy_structure: DummyStructure,
    pub bootstrap_reps: usize,
    pub seed: u64,
    pub interval_draws: usize,
    pub normal_draws: usize,
    /// Log-spaced points scanned before the golden-section refinement.
    pub grid_points: usize,
    pub theta_tol: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            contraction_tol: 1e-6,
            max_contraction_iter: 2000,
            theta_bracket: (0.2, 10.0),
            dummy_structure: DummyStructure::Tier,
            bootstrap_reps: 0,
            seed: 7,
            interval_draws: DEFAULT_INTERVAL_DRAWS,
            normal_draws: DEFAULT_NORMAL_DRAWS,
            grid_points: 12,
            theta_tol: 1e-3,
        }
    }
}

impl EstimationConfig {
    /// Defaults with the bracket widened downward for the standard logit,
    /// whose estimates sit well below one.
    pub fn standard_logit_default() -> Self {
        Self {
            theta_bracket: (0.01, 10.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.theta_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "theta bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"
            )));
        }
        if !(self.contraction_tol > 0.0) || !(self.theta_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_contraction_iter == 0 || self.interval_draws == 0 || self.normal_draws == 0 {
            return Err(Error::InvalidInput("iteration and draw counts must be positive".into()));
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidInput("grid_points must be at least 3".into()));
        }
        Ok(())
    }
}

impl SimulationDraws {
    pub fn from_config(cfg: &EstimationConfig) -> Result<Self> {
        Self::new(cfg.seed, cfg.interval_draws, cfg.normal_draws)
    }
}

/// Per-market share simulator at one `theta`.
pub(crate) enum MarketModel<'a> {
    Foldable {
        dist: TasteDistribution,
        prices: Vec<f64>,
        margins: Vec<f64>,
        uniforms: &'a [f64],
    },
    Standard(FullLogitKernel),
}

impl<'a> MarketModel<'a> {
    pub(crate) fn new(model: Model, market: &Market, theta: f64, draws: &'a SimulationDraws) -> Result<Self> {
        let dist = market.taste(theta)?;
        Ok(match model {
            Model::Foldable => {
                market.line.require_strict()?;
                MarketModel::Foldable {
                    dist,
                    prices: market.line.prices(),
                    margins: market.line.margins(),
                    uniforms: draws.uniforms.uniforms(),
                }
            }
            Model::StandardLogit => {
                MarketModel::Standard(FullLogitKernel::new(&market.line.prices(), &dist, &draws.normals))
            }
        })
    }

    /// Inside shares into `inside`; returns the outside share.
    pub(crate) fn shares(&self, gamma: &[f64], inside: &mut [f64], cutoffs: &mut [f64]) -> Result<f64> {
        match self {
            MarketModel::Foldable {
                dist,
                prices,
                margins,
                uniforms,
            } => {
                cutoffs_into(gamma, prices, margins, cutoffs)?;
                Ok(stratified_shares(
                    gamma,
                    prices,
                    dist,
                    cutoffs,
                    Menu::Nested,
                    uniforms,
                    inside,
                ))
            }
            MarketModel::Standard(kernel) => Ok(kernel.shares(gamma, inside)),
        }
    }
}

/// Outcome of inverting one market.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketInversion {
    pub gamma: Vec<f64>,
    pub iterations: usize,
    /// `max |ln s_obs - ln s(gamma)|` at the returned `gamma`.
    pub residual: f64,
}

/// Logit starting values `ln s_j - ln s_0`.
pub fn logit_start(shares: &[f64]) -> Vec<f64> {
    let s0 = 1.0 - shares.iter().sum::<f64>();
    shares.iter().map(|s| s.ln() - s0.ln()).collect()
}

/// One contraction step `next = gamma + ln s_obs - ln s(gamma)`; returns the
/// sup-norm of the update.
fn contraction_step(
    mm: &MarketModel<'_>,
    log_obs: &[f64],
    gamma: &[f64],
    next: &mut [f64],
    inside: &mut [f64],
    cutoffs: &mut [f64],
) -> Option<f64> {
    mm.shares(gamma, inside, cutoffs).ok()?;
    let mut step = 0.0_f64;
    for k in 0..gamma.len() {
        let d = log_obs[k] - inside[k].ln();
        next[k] = gamma[k] + d;
        step = step.max(d.abs());
    }
    (step.is_finite() && next.iter().all(|g| g.abs() <= DIVERGENCE_BOUND)).then_some(step)
}

/// Contraction for one market; `None` when it diverges or stalls.
///
/// Plain contraction steps are interleaved with squared extrapolation
/// (SQUAREM), which leaves the fixed point and the stopping rule unchanged:
/// the returned `gamma` is a contraction image whose update was below `tol`.
/// `iterations` counts share evaluations.
pub(crate) fn invert_market(
    mm: &MarketModel<'_>,
    observed: &[f64],
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<MarketInversion> {
    let j = observed.len();
    let log_obs: Vec<f64> = observed.iter().map(|s| s.ln()).collect();
    let mut x0 = start.to_vec();
    let (mut x1, mut x2, mut x3) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
    let mut inside = vec![0.0; j];
    let mut cutoffs = vec![0.0; j.saturating_sub(1)];
    let mut evals = 0;
    let converged = loop {
        if evals >= max_iter {
            return None;
        }
        evals += 2;
        if contraction_step(mm, &log_obs, &x0, &mut x1, &mut inside, &mut cutoffs)? < tol {
            break x1;
        }
        if contraction_step(mm, &log_obs, &x1, &mut x2, &mut inside, &mut cutoffs)? < tol {
            break x2;
        }
        let (mut rr, mut vv) = (0.0, 0.0);
        for k in 0..j {
            let r = x1[k] - x0[k];
            let v = x2[k] - 2.0 * x1[k] + x0[k];
            rr += r * r;
            vv += v * v;
        }
        if !(vv > 0.0) {
            std::mem::swap(&mut x0, &mut x2);
            continue;
        }
        let a = (-(rr / vv).sqrt()).min(-1.0);
        for k in 0..j {
            let r = x1[k] - x0[k];
            let v = x2[k] - 2.0 * x1[k] + x0[k];
            x0[k] = x0[k] - 2.0 * a * r + a * a * v;
        }
        evals += 1;
        // Stabilizing step from the extrapolated point; fall back to the plain iterate.
        if contraction_step(mm, &log_obs, &x0, &mut x3, &mut inside, &mut cutoffs).is_some() {
            std::mem::swap(&mut x0, &mut x3);
        } else {
            std::mem::swap(&mut x0, &mut x2);
        }
    };
    mm.shares(&converged, &mut inside, &mut cutoffs).ok()?;
    let residual = log_obs
        .iter()
        .zip(&inside)
        .map(|(o, s)| (o - s.ln()).abs())
        .fold(0.0, f64::max);
    Some(MarketInversion {
        gamma: converged,
        iterations: evals,
        residual,
    })
}

/// Inverts every market at `theta`, starting from `starts` when given and
/// from logit values otherwise. Failing markets are all reported.
pub fn invert_shares(
    panel: &Panel,
    theta: f64,
    model: Model,
    cfg: &EstimationConfig,
    draws: &SimulationDraws,
    starts: Option<&[Vec<f64>]>,
) -> Result<Vec<MarketInversion>> {
    panel.validate_shares()?;
    invert_all(panel, theta, model, cfg, draws, starts, false)
}

fn invert_all(
    panel: &Panel,
    theta: f64,
    model: Model,
    cfg: &EstimationConfig,
    draws: &SimulationDraws,
    starts: Option<&[Vec<f64>]>,
    fail_fast: bool,
) -> Result<Vec<MarketInversion>> {
    if !(theta > 0.0) {
        return Err(Error::InvalidInput(format!("theta must be positive, got {theta}")));
    }
    let mut out = Vec::with_capacity(panel.len());
    let mut failed = Vec::new();
    for (t, m) in panel.markets().iter().enumerate() {
        let mm = MarketModel::new(model, m, theta, draws)?;
        let start = match starts {
            Some(s) => s[t].clone(),
            None => logit_start(&m.shares),
        };
        let mut res = invert_market(&mm, &m.shares, &start, cfg.contraction_tol, cfg.max_contraction_iter);
        if res.is_none() && starts.is_some() {
            res = invert_market(
                &mm,
                &m.shares,
                &logit_start(&m.shares),
                cfg.contraction_tol,
                cfg.max_contraction_iter,
            );
        }
        match res {
            Some(r) => out.push(r),
            None => {
                failed.push(m.id.clone());
                if fail_fast {
                    break;
                }
            }
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(Error::InversionFailed { theta, markets: failed })
    }
}

/// Second-stage fit of mean utilities on fixed-utility dummies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyFit {
    /// Fixed utilities per group, tier order. Tier-only fits use one group.
    pub xi: BTreeMap<String, Vec<f64>>,
    /// `gamma - xi`, one vector per market.
    pub delta_xi: Vec<Vec<f64>>,
}

/// Least squares on saturated dummies: each cell's coefficient is the cell mean.
pub fn fit_dummies(panel: &Panel, gamma: &[Vec<f64>], dummies: DummyStructure) -> DummyFit {
    let j = panel.n_products();
    let key = |m: &Market| match dummies {
        DummyStructure::Tier => DEFAULT_GROUP.to_string(),
        DummyStructure::TierGroup => m.group.clone(),
    };
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (m, g) in panel.markets().iter().zip(gamma) {
        let e = sums.entry(key(m)).or_insert_with(|| (vec![0.0; j], 0));
        e.0.iter_mut().zip(g).for_each(|(s, x)| *s += x);
        e.1 += 1;
    }
    let xi: BTreeMap<String, Vec<f64>> = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    let delta_xi = panel
        .markets()
        .iter()
        .zip(gamma)
        .map(|(m, g)| g.iter().zip(&xi[&key(m)]).map(|(a, b)| a - b).collect())
        .collect();
    DummyFit { xi, delta_xi }
}

/// `sum_jt delta_xi_jt p_jt`, every market and tier weighted equally.
pub fn price_moment(panel: &Panel, delta_xi: &[Vec<f64>]) -> f64 {
    panel
        .markets()
        .iter()
        .zip(delta_xi)
        .map(|(m, d)| {
            d.iter()
                .zip(m.line.products())
                .map(|(x, p)| x * p.retail_price)
                .sum::<f64>()
        })
        .sum()
}

/// Everything computed at one `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEvaluation {
    pub theta: f64,
    pub value: f64,
    pub inversions: Vec<MarketInversion>,
    pub fit: DummyFit,
}

/// Objective evaluator that warm-starts each inversion from the recent
/// solutions, extrapolated linearly in `theta` when two are available.
pub struct GmmProblem<'a> {
    panel: &'a Panel,
    cfg: &'a EstimationConfig,
    model: Model,
    draws: SimulationDraws,
    history: RefCell<Vec<(f64, Vec<Vec<f64>>)>>,
}

impl<'a> GmmProblem<'a> {
    pub fn new(panel: &'a Panel, cfg: &'a EstimationConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        panel.validate_shares()?;
        Ok(Self {
            panel,
            cfg,
            model,
            draws: SimulationDraws::from_config(cfg)?,
            history: RefCell::new(Vec::new()),
        })
    }

    pub fn with_draws(
        panel: &'a Panel,
        cfg: &'a EstimationConfig,
        model: Model,
        draws: SimulationDraws,
    ) -> Result<Self> {
        cfg.validate()?;
        panel.validate_shares()?;
        Ok(Self {
            panel,
            cfg,
            model,
            draws,
            history: RefCell::new(Vec::new()),
        })
    }

    pub fn draws(&self) -> &SimulationDraws {
        &self.draws
    }

    /// Evaluation at `theta`; inversion failures list every failing market.
    pub fn evaluate(&self, theta: f64) -> Result<ObjectiveEvaluation> {
        self.evaluate_inner(theta, false)
    }

    fn evaluate_inner(&self, theta: f64, fail_fast: bool) -> Result<ObjectiveEvaluation> {
        let starts = self.warm_start(theta);
        let inversions = invert_all(
            self.panel,
            theta,
            self.model,
            self.cfg,
            &self.draws,
            starts.as_deref(),
            fail_fast,
        )?;
        let gamma: Vec<Vec<f64>> = inversions.iter().map(|r| r.gamma.clone()).collect();
        let fit = fit_dummies(self.panel, &gamma, self.cfg.dummy_structure);
        let value = price_moment(self.panel, &fit.delta_xi).powi(2);
        let mut history = self.history.borrow_mut();
        if history.len() == 2 {
            history.remove(0);
        }
        history.push((theta, gamma));
        Ok(ObjectiveEvaluation {
            theta,
            value,
            inversions,
            fit,
        })
    }

    fn warm_start(&self, theta: f64) -> Option<Vec<Vec<f64>>> {
        let history = self.history.borrow();
        match history.as_slice() {
            [] => None,
            [(_, g)] => Some(g.clone()),
            [(ta, ga), (tb, gb)] => {
                let span = tb - ta;
                if span == 0.0 || (theta - tb).abs() > 2.0 * span.abs() {
                    return Some(gb.clone());
                }
                let w = (theta - tb) / span;
                Some(
                    ga.iter()
                        .zip(gb)
                        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| y + w * (y - x)).collect())
                        .collect(),
                )
            }
            _ => unreachable!("history holds at most two solutions"),
        }
    }

    /// Objective for the search: stops at the first failing market.
    fn search_objective(&self, theta: f64) -> Result<f64> {
        self.evaluate_inner(theta, true).map(|e| e.value)
    }

    pub fn objective(&self, theta: f64) -> Result<f64> {
        self.evaluate(theta).map(|e| e.value)
    }
}

/// GMM objective at `theta` with draws seeded by `cfg`.
pub fn gmm_objective(theta: f64, panel: &Panel, model: Model, cfg: &EstimationConfig) -> Result<f64> {
    GmmProblem::new(panel, cfg, model)?.objective(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub se: f64,
    pub thetas: Vec<f64>,
    pub failed_reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: Model,
    pub theta_hat: f64,
    pub xi_hat: BTreeMap<String, Vec<f64>>,
    pub delta_xi_hat: Vec<Vec<f64>>,
    pub gamma_hat: Vec<Vec<f64>>,
    pub objective_value: f64,
    /// Contraction iterations summed over markets at `theta_hat`.
    pub contraction_iterations: usize,
    pub max_contraction_residual: f64,
    pub objective_evaluations: usize,
    /// Minimum sits within `theta_tol` of a bracket end.
    pub at_bracket_edge: bool,
    /// Grid points where inversion failed or that lie below such a point.
    pub infeasible_grid_points: Vec<f64>,
    pub bootstrap: Option<BootstrapSummary>,
}

/// Minimizes the GMM objective over `cfg.theta_bracket`.
///
/// A log-spaced grid is scanned from the top of the bracket downward, so warm
/// starts run away from the small-`theta` region where inversion fails; the
/// best grid cell is then refined by golden section. Failed evaluations count
/// as `+inf`.
pub fn estimate_with(panel: &Panel, cfg: &EstimationConfig, model: Model) -> Result<EstimationResult> {
    let problem = GmmProblem::new(panel, cfg, model)?;
    let (lo, hi) = cfg.theta_bracket;
    let n = cfg.grid_points;
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo * (ratio * i as f64).exp()).collect();
    let mut values = vec![f64::INFINITY; n];
    let mut evaluations = 0;
    let mut infeasible = Vec::new();
    for i in (0..n).rev() {
        evaluations += 1;
        match problem.search_objective(grid[i]) {
            Ok(v) => values[i] = v,
            Err(e) if e.is_numerical() => {
                // Inversion fails once theta is too small; below a failure
                // that follows a feasible point the grid is not scanned further.
                if values.iter().any(|v| v.is_finite()) {
                    infeasible.extend(grid[..=i].iter().rev());
                    break;
                }
                infeasible.push(grid[i]);
            }
            Err(e) => return Err(e),
        }
    }
    let best = (0..n)
        .filter(|&i| values[i].is_finite())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .ok_or(Error::BracketInfeasible { lo, hi })?;
    let (a, b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);
    // Warm start from the best grid point before refining around it.
    problem.search_objective(grid[best])?;
    evaluations += 1;
    let m = golden_section(
        |t| problem.search_objective(t).unwrap_or(f64::INFINITY),
        a,
        b,
        cfg.theta_tol,
        200,
    );
    evaluations += m.evaluations;
    let theta_hat = if m.value <= values[best] { m.x } else { grid[best] };
    let eval = problem.evaluate(theta_hat)?;
    evaluations += 1;
    Ok(EstimationResult {
        model,
        theta_hat,
        xi_hat: eval.fit.xi,
        delta_xi_hat: eval.fit.delta_xi,
        gamma_hat: eval.inversions.iter().map(|r| r.gamma.clone()).collect(),
        objective_value: eval.value,
        contraction_iterations: eval.inversions.iter().map(|r| r.iterations).sum(),
        max_contraction_residual: eval.inversions.iter().map(|r| r.residual).fold(0.0, f64::max),
        objective_evaluations: evaluations,
        at_bracket_edge: theta_hat - lo <= cfg.theta_tol || hi - theta_hat <= cfg.theta_tol,
        infeasible_grid_points: infeasible,
        bootstrap: None,
    })
}

/// Foldable-menu estimator.
pub fn estimate(panel: &Panel, cfg: &EstimationConfig) -> Result<EstimationResult> {
    estimate_with(panel, cfg, Model::Foldable)
}

/// Misspecified baseline that assumes every consumer sees the whole line.
pub fn estimate_standard_logit(panel: &Panel, cfg: &EstimationConfig) -> Result<EstimationResult> {
    estimate_with(panel, cfg, Model::StandardLogit)
}

/// Standard deviation of `theta_hat` over `cfg.bootstrap_reps` panels
/// resampled by market with replacement. Failed replications are dropped
/// and counted.
pub fn bootstrap_se(panel: &Panel, cfg: &EstimationConfig, model: Model) -> Result<BootstrapSummary> {
    if cfg.bootstrap_reps == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one replication".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb007_57a9);
    let mut thetas = Vec::with_capacity(cfg.bootstrap_reps);
    let mut failed = 0;
    for _ in 0..cfg.bootstrap_reps {
        let markets: Vec<Market> = (0..panel.len())
            .map(|_| panel.markets()[rng.random_range(0..panel.len())].clone())
            .collect();
        let resampled = Panel::new(markets)?;
        match estimate_with(&resampled, cfg, model) {
            Ok(r) => thetas.push(r.theta_hat),
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if thetas.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} of {} bootstrap replications converged",
            thetas.len(),
            cfg.bootstrap_reps
        )));
    }
    let n = thetas.len() as f64;
    let mean = thetas.iter().sum::<f64>() / n;
    let se = (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BootstrapSummary {
        se,
        thetas,
        failed_reps: failed,
    })
}
