//! Assortment competition between firms selling to a common logit population.
//!
//! Each firm picks a nested depth of its own margin-sorted line. Competitors'
//! offered products only enter a firm's profit through the logit denominator,
//! so best responses are monotone in rivals' depths under a representative
//! consumer and simultaneous best-response sweeps from the bottom of the
//! lattice climb to its least equilibrium.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{Assortment, Product, ProductLine};
use crate::error::{Error, Result};
use crate::panel::Panel;

/// Largest own line for which every subset deviation is enumerated.
pub const SUBSET_LIMIT: usize = 12;

/// Relative profit gain below which a deviation is not counted as profitable.
const GAIN_TOL: f64 = 1e-12;

/// Utilities are clamped here before exponentiation.
const MAX_UTILITY: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmProfile {
    pub firm_id: String,
    /// Owned products, margin-descending.
    pub line: ProductLine,
    /// Mean consumption utility of each owned product.
    pub gamma: Vec<f64>,
}

impl FirmProfile {
    pub fn new(firm_id: impl Into<String>, line: ProductLine, gamma: Vec<f64>) -> Result<Self> {
        if line.is_empty() {
            return Err(Error::EmptyLine);
        }
        if gamma.len() != line.len() {
            return Err(Error::dims("firm gamma", line.len(), gamma.len()));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("gamma must be finite".into()));
        }
        Ok(Self {
            firm_id: firm_id.into(),
            line,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.line.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line.is_empty()
    }
}

/// One nested depth per firm.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub depths: Vec<usize>,
}

impl LatticePoint {
    pub fn bottom(n_firms: usize) -> Self {
        Self {
            depths: vec![1; n_firms],
        }
    }

    /// Component-wise order.
    pub fn le(&self, other: &Self) -> bool {
        self.depths.len() == other.depths.len() && self.depths.iter().zip(&other.depths).all(|(a, b)| a <= b)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.depths.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Consumer-level random tastes around the firms' mean parameters: consumer
/// `d` has `alpha_d = alpha (1 + a v_d)` and `gamma_dj = gamma_j (1 + a w_dj)`
/// with independent standard normal `v_d`, `w_dj`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCoefSpec {
    pub n_draws: usize,
    pub taste_dispersion: f64,
    pub seed: u64,
}

impl RandomCoefSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(Error::InvalidInput("n_draws must be at least 1".into()));
        }
        if !(self.taste_dispersion >= 0.0) || !self.taste_dispersion.is_finite() {
            return Err(Error::InvalidInput(format!(
                "taste_dispersion must be finite and >= 0, got {}",
                self.taste_dispersion
            )));
        }
        Ok(())
    }
}

/// Firms and the consumers they sell to. All randomness is drawn at
/// construction.
#[derive(Clone, Debug)]
pub struct Game {
    firms: Vec<FirmProfile>,
    offsets: Vec<usize>,
    n_products: usize,
    /// `exp(delta_dj)`, one row of `n_products` per consumer.
    weights: Vec<f64>,
    n_consumers: usize,
}

fn check_partition(firms: &[FirmProfile]) -> Result<()> {
    if firms.is_empty() {
        return Err(Error::InvalidInput("at least one firm is required".into()));
    }
    let mut seen_firms = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for f in firms {
        if !seen_firms.insert(f.firm_id.as_str()) {
            return Err(Error::InvalidInput(format!("firm {} listed twice", f.firm_id)));
        }
        for p in f.line.products() {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::InvalidInput(format!("product {} owned more than once", p.id)));
            }
        }
    }
    Ok(())
}

impl Game {
    /// A single representative consumer with price sensitivity `alpha`.
    pub fn logit(firms: Vec<FirmProfile>, alpha: f64) -> Result<Self> {
        Self::build(firms, alpha, None)
    }

    pub fn random_coef(firms: Vec<FirmProfile>, alpha: f64, spec: &RandomCoefSpec) -> Result<Self> {
        spec.validate()?;
        Self::build(firms, alpha, Some(spec))
    }

    fn build(firms: Vec<FirmProfile>, alpha: f64, spec: Option<&RandomCoefSpec>) -> Result<Self> {
        check_partition(&firms)?;
        if !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be finite, got {alpha}")));
        }
        let mut offsets = Vec::with_capacity(firms.len());
        let mut gamma = Vec::new();
        let mut prices = Vec::new();
        for f in &firms {
            offsets.push(gamma.len());
            gamma.extend_from_slice(&f.gamma);
            prices.extend(f.line.prices());
        }
        let n_products = gamma.len();
        let weight = |g: f64, a: f64, p: f64| (g - a * p).min(MAX_UTILITY).exp();
        let (weights, n_consumers) = match spec {
            None => (
                gamma.iter().zip(&prices).map(|(&g, &p)| weight(g, alpha, p)).collect(),
                1,
            ),
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let a = s.taste_dispersion;
                let mut w = Vec::with_capacity(s.n_draws * n_products);
                for _ in 0..s.n_draws {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    let alpha_d = alpha * (1.0 + a * v);
                    for (&g, &p) in gamma.iter().zip(&prices) {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        w.push(weight(g * (1.0 + a * e), alpha_d, p));
                    }
                }
                (w, s.n_draws)
            }
        };
        Ok(Self {
            firms,
            offsets,
            n_products,
            weights,
            n_consumers,
        })
    }

    pub fn firms(&self) -> &[FirmProfile] {
        &self.firms
    }

    pub fn n_consumers(&self) -> usize {
        self.n_consumers
    }

    fn check_point(&self, point: &LatticePoint) -> Result<()> {
        if point.depths.len() != self.firms.len() {
            return Err(Error::dims("lattice point", self.firms.len(), point.depths.len()));
        }
        for (f, &d) in self.firms.iter().zip(&point.depths) {
            if d == 0 || d > f.len() {
                return Err(Error::InvalidInput(format!(
                    "depth {d} outside 1..={} for firm {}",
                    f.len(),
                    f.firm_id
                )));
            }
        }
        Ok(())
    }

    /// Per-consumer weight of rivals' offered products for firm `n`.
    fn rival_weights(&self, n: usize, point: &LatticePoint) -> Vec<f64> {
        (0..self.n_consumers)
            .map(|d| {
                let row = &self.weights[d * self.n_products..(d + 1) * self.n_products];
                (0..self.firms.len())
                    .filter(|&m| m != n)
                    .map(|m| {
                        row[self.offsets[m]..self.offsets[m] + point.depths[m]]
                            .iter()
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    /// Mean profit of firm `n` offering the owned positions in `members`.
    fn profit_with(&self, n: usize, members: &[usize], rivals: &[f64]) -> f64 {
        let margins = self.firms[n].line.products();
        let off = self.offsets[n];
        let mut total = 0.0;
        for (d, r) in rivals.iter().enumerate() {
            let row = &self.weights[d * self.n_products + off..];
            let (mut num, mut denom) = (0.0, 1.0 + r);
            for &k in members {
                num += margins[k].unit_margin * row[k];
                denom += row[k];
            }
            total += num / denom;
        }
        total / self.n_consumers as f64
    }

    /// Expected profit of firm `n` when it offers `own` and rivals follow `point`.
    pub fn firm_profit(&self, n: usize, own: &Assortment, point: &LatticePoint) -> Result<f64> {
        self.check_point(point)?;
        own.validate(self.firms[n].len())?;
        let members: Vec<usize> = own.members().collect();
        Ok(self.profit_with(n, &members, &self.rival_weights(n, point)))
    }

    /// Profit of every firm at `point`.
    pub fn profits(&self, point: &LatticePoint) -> Result<Vec<f64>> {
        self.check_point(point)?;
        Ok((0..self.firms.len())
            .map(|n| {
                let members: Vec<usize> = (0..point.depths[n]).collect();
                self.profit_with(n, &members, &self.rival_weights(n, point))
            })
            .collect())
    }

    /// Best nested depth of firm `n` against rivals at `point`, with its
    /// profit. Ties go to the smaller depth.
    pub fn best_response(&self, n: usize, point: &LatticePoint) -> Result<(usize, f64)> {
        self.check_point(point)?;
        Ok(self.best_depth(n, &self.rival_weights(n, point)))
    }

    fn best_depth(&self, n: usize, rivals: &[f64]) -> (usize, f64) {
        let mut members = Vec::with_capacity(self.firms[n].len());
        let mut best = (0, f64::NEG_INFINITY);
        for depth in 1..=self.firms[n].len() {
            members.push(depth - 1);
            let p = self.profit_with(n, &members, rivals);
            if p > best.1 {
                best = (depth, p);
            }
        }
        best
    }

    /// Best non-empty subset of firm `n`'s products against `rivals`. Ties go
    /// to the lower bitmask, so nested sets win ties against the sets they extend.
    fn best_subset(&self, n: usize, rivals: &[f64]) -> Result<(Assortment, f64)> {
        let len = self.firms[n].len();
        if len > SUBSET_LIMIT {
            return Err(Error::TooManyProducts {
                limit: SUBSET_LIMIT,
                actual: len,
            });
        }
        let mut best = (0_u64, f64::NEG_INFINITY);
        let mut members = Vec::with_capacity(len);
        for mask in 1..(1_u64 << len) {
            members.clear();
            members.extend((0..len).filter(|k| mask >> k & 1 == 1));
            let p = self.profit_with(n, &members, rivals);
            if p > best.1 {
                best = (mask, p);
            }
        }
        Ok((Assortment::from_mask(best.0), best.1))
    }
}

/// Output of the best-response iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPath {
    pub point: LatticePoint,
    /// Points visited, starting at the bottom of the lattice.
    pub trajectory: Vec<LatticePoint>,
    /// Every sweep was component-wise non-decreasing.
    pub monotone: bool,
    /// The last sweep changed nothing.
    pub converged: bool,
    pub profits: Vec<f64>,
}

/// Simultaneous best-response sweeps from every firm at depth 1.
///
/// Under a representative consumer the sweeps are non-decreasing and stop at
/// the least equilibrium within `sum_n J_n` rounds. With random coefficients
/// monotonicity is checked rather than assumed and the iteration is capped.
pub fn find_equilibrium(game: &Game) -> EquilibriumPath {
    let n_firms = game.firms.len();
    let cap = game.firms.iter().map(FirmProfile::len).sum::<usize>() + 1;
    let mut point = LatticePoint::bottom(n_firms);
    let mut trajectory = vec![point.clone()];
    let mut monotone = true;
    let mut converged = false;
    for _ in 0..cap {
        let next = LatticePoint {
            depths: (0..n_firms)
                .map(|n| game.best_depth(n, &game.rival_weights(n, &point)).0)
                .collect(),
        };
        if next == point {
            converged = true;
            break;
        }
        monotone &= point.le(&next);
        trajectory.push(next.clone());
        point = next;
    }
    let profits = game.profits(&point).expect("iteration stays on the lattice");
    EquilibriumPath {
        point,
        trajectory,
        monotone,
        converged,
        profits,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub firm: usize,
    pub firm_id: String,
    /// Zero-based positions in the firm's line.
    pub assortment: Assortment,
    pub current_profit: f64,
    pub deviation_profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub is_nash: bool,
    /// Most profitable deviation per firm that has one.
    pub deviations: Vec<Deviation>,
    /// Whether all-subset deviations were checked for every firm.
    pub subsets_checked: bool,
}

/// Checks unilateral nested deviations for every firm and, when
/// `all_subsets` is set and a firm owns at most `SUBSET_LIMIT` products,
/// every subset deviation too.
pub fn is_nash(game: &Game, point: &LatticePoint, all_subsets: bool) -> Result<NashReport> {
    game.check_point(point)?;
    let mut deviations = Vec::new();
    let mut subsets_checked = all_subsets;
    for n in 0..game.firms.len() {
        let rivals = game.rival_weights(n, point);
        let current_members: Vec<usize> = (0..point.depths[n]).collect();
        let current = game.profit_with(n, &current_members, &rivals);
        let (depth, fold) = game.best_depth(n, &rivals);
        let mut best = (Assortment::top(depth), fold);
        if all_subsets {
            match game.best_subset(n, &rivals) {
                Ok(candidate) if candidate.1 > best.1 => best = candidate,
                Ok(_) => {}
                Err(_) => subsets_checked = false,
            }
        }
        if best.1 - current > GAIN_TOL * current.abs().max(1.0) {
            deviations.push(Deviation {
                firm: n,
                firm_id: game.firms[n].firm_id.clone(),
                assortment: best.0,
                current_profit: current,
                deviation_profit: best.1,
            });
        }
    }
    Ok(NashReport {
        is_nash: deviations.is_empty(),
        deviations,
        subsets_checked,
    })
}

/// Every lattice point with no profitable nested deviation.
pub fn enumerate_nash(game: &Game) -> Vec<LatticePoint> {
    let sizes: Vec<usize> = game.firms.iter().map(FirmProfile::len).collect();
    let mut out = Vec::new();
    let mut depths = vec![1; sizes.len()];
    loop {
        let point = LatticePoint { depths: depths.clone() };
        if is_nash(game, &point, false).is_ok_and(|r| r.is_nash) {
            out.push(point);
        }
        let mut i = 0;
        while i < depths.len() && depths[i] == sizes[i] {
            depths[i] = 1;
            i += 1;
        }
        if i == depths.len() {
            return out;
        }
        depths[i] += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmLoss {
    pub firm_id: String,
    pub foldable_depth: usize,
    pub foldable_profit: f64,
    pub best_subset: Assortment,
    pub best_profit: f64,
    /// `1 - foldable_profit / best_profit`, clamped to `[0, 1]`.
    pub loss: f64,
    /// The best subset contains the firm's highest-margin product.
    pub includes_top: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCoefReport {
    pub equilibrium: EquilibriumPath,
    pub firms: Vec<FirmLoss>,
}

/// Cost of restricting firms to nested menus under random coefficients.
/// Competitors sit at the nested-menu equilibrium reached by
/// `find_equilibrium`; each firm's best nested profit is then compared with
/// its best profit over all non-empty subsets.
pub fn foldable_loss_random_coef(
    firms: Vec<FirmProfile>,
    alpha: f64,
    spec: &RandomCoefSpec,
) -> Result<RandomCoefReport> {
    if let Some(f) = firms.iter().find(|f| f.len() > SUBSET_LIMIT) {
        return Err(Error::TooManyProducts {
            limit: SUBSET_LIMIT,
            actual: f.len(),
        });
    }
    let game = Game::random_coef(firms, alpha, spec)?;
    let equilibrium = find_equilibrium(&game);
    let mut out = Vec::with_capacity(game.firms.len());
    for n in 0..game.firms.len() {
        let rivals = game.rival_weights(n, &equilibrium.point);
        let (depth, fold) = game.best_depth(n, &rivals);
        let (subset, best) = game.best_subset(n, &rivals)?;
        let (subset, best) = if fold >= best {
            (Assortment::top(depth), fold)
        } else {
            (subset, best)
        };
        let loss = if best > 0.0 {
            (1.0 - fold / best).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(FirmLoss {
            firm_id: game.firms[n].firm_id.clone(),
            foldable_depth: depth,
            foldable_profit: fold,
            includes_top: subset.contains(0),
            best_subset: subset,
            best_profit: best,
            loss,
        });
    }
    Ok(RandomCoefReport {
        equilibrium,
        firms: out,
    })
}

/// A point of sale: firms facing consumers with mean price sensitivity `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointOfSale {
    pub alpha: f64,
    pub firms: Vec<FirmProfile>,
}

/// Monopoly points of sale built from fitted parameters: `per_market` draws
/// of income from each market's log-normal, each giving `alpha = theta / income`
/// and the market's fitted `gamma`.
pub fn points_of_sale(
    panel: &Panel,
    theta: f64,
    gamma: &[Vec<f64>],
    per_market: usize,
    seed: u64,
) -> Result<Vec<PointOfSale>> {
    if gamma.len() != panel.len() {
        return Err(Error::dims("gamma markets", panel.len(), gamma.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(panel.len() * per_market);
    for (m, g) in panel.markets().iter().zip(gamma) {
        let firm = FirmProfile::new(m.id.clone(), m.line.clone(), g.clone())?;
        for _ in 0..per_market {
            let z: f64 = StandardNormal.sample(&mut rng);
            let income = (m.income_log_mean + m.income_log_sd * z).exp();
            out.push(PointOfSale {
                alpha: theta / income,
                firms: vec![firm.clone()],
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub taste_dispersion: f64,
    pub n_draws: usize,
    /// `1 - mean(foldable / best)` over every firm at every point of sale.
    pub loss: f64,
    pub max_loss: f64,
    /// Share of firm-points whose best menu is nested.
    pub foldable_optimal_share: f64,
}

/// Loss table over dispersions and draw counts. Point `i` uses seed
/// `seed + i` for every cell, so cells differ only through `a` and `n`.
pub fn random_coef_sweep(
    points: &[PointOfSale],
    dispersions: &[f64],
    draws: &[usize],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no points of sale".into()));
    }
    let mut rows = Vec::with_capacity(dispersions.len() * draws.len());
    for &n in draws {
        for &a in dispersions {
            let losses = points
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let spec = RandomCoefSpec {
                        n_draws: n,
                        taste_dispersion: a,
                        seed: seed.wrapping_add(i as u64),
                    };
                    foldable_loss_random_coef(p.firms.clone(), p.alpha, &spec)
                })
                .collect::<Result<Vec<_>>>()?;
            let firm_losses: Vec<&FirmLoss> = losses.iter().flat_map(|r| &r.firms).collect();
            let count = firm_losses.len() as f64;
            let mean_ratio = firm_losses.iter().map(|f| 1.0 - f.loss).sum::<f64>() / count;
            rows.push(SweepRow {
                taste_dispersion: a,
                n_draws: n,
                loss: (1.0 - mean_ratio).max(0.0),
                max_loss: firm_losses.iter().map(|f| f.loss).fold(0.0, f64::max),
                foldable_optimal_share: firm_losses.iter().filter(|f| f.loss == 0.0).count() as f64 / count,
            });
        }
    }
    Ok(rows)
}

/// Scenario file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitionScenario {
    pub alpha: f64,
    pub firms: Vec<FirmSpec>,
    #[serde(default)]
    pub random_coef: Option<RandomCoefSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmSpec {
    pub id: String,
    pub products: Vec<ProductSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub id: String,
    pub margin: f64,
    pub price: f64,
    pub gamma: f64,
}

impl CompetitionScenario {
    /// Firm profiles with each line sorted by descending margin.
    pub fn firm_profiles(&self) -> Result<Vec<FirmProfile>> {
        self.firms
            .iter()
            .map(|f| {
                let mut specs = f.products.clone();
                specs.sort_by(|a, b| b.margin.total_cmp(&a.margin));
                let products = specs
                    .iter()
                    .map(|p| Product::new(p.id.clone(), p.margin, p.price))
                    .collect::<Result<Vec<_>>>()?;
                FirmProfile::new(
                    f.id.clone(),
                    ProductLine::new(products)?,
                    specs.iter().map(|p| p.gamma).collect(),
                )
            })
            .collect()
    }

    pub fn game(&self) -> Result<Game> {
        match &self.random_coef {
            None => Game::logit(self.firm_profiles()?, self.alpha),
            Some(spec) => Game::random_coef(self.firm_profiles()?, self.alpha, spec),
        }
    }
}
