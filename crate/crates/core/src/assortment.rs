//! Profit-maximizing assortments for a single consumer.
//!
//! With products sorted by descending margin the optimum is always one of the
//! nested sets `{1}, {1,2}, .., {1..J}`, and which one is picked depends on the
//! consumer's price sensitivity only through `J - 1` ordered cutoffs.

use serde::{Deserialize, Serialize};

use crate::choice::{profit_of, Assortment, ConsumerTaste, FoldableAssortment, ProductLine};
use crate::error::{Error, Result};
use crate::optimize::bisect_increasing;

/// Largest line `brute_force_best` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

const CUTOFF_TOL: f64 = 1e-12;
const CUTOFF_MAX_ITER: usize = 200;

/// Depth of the most profitable nested assortment. Ties go to the smaller depth.
pub fn optimal_foldable(taste: &ConsumerTaste, line: &ProductLine) -> Result<FoldableAssortment> {
    if line.is_empty() {
        return Err(Error::EmptyLine);
    }
    let deltas = taste.deltas(line)?;
    let depth = best_depth(&deltas, &line.margins(), 0.0);
    FoldableAssortment::new(depth, line.len())
}

/// Best nested depth for utilities `deltas` when `rival_weight` (sum of
/// exponentiated competitor utilities) also sits in the logit denominator.
pub(crate) fn best_depth(deltas: &[f64], margins: &[f64], rival_weight: f64) -> usize {
    let mut best = (1, f64::NEG_INFINITY);
    for depth in 1..=deltas.len() {
        let profit = nested_profit(deltas, margins, depth, rival_weight);
        if profit > best.1 {
            best = (depth, profit);
        }
    }
    best.0
}

/// Profit of the first `depth` products with an additive rival term in the denominator.
pub(crate) fn nested_profit(deltas: &[f64], margins: &[f64], depth: usize, rival_weight: f64) -> f64 {
    if rival_weight == 0.0 {
        return profit_of(deltas, margins, 0..depth);
    }
    let (mut num, mut denom) = (0.0, 1.0 + rival_weight);
    for k in 0..depth {
        let e = deltas[k].exp();
        num += margins[k] * e;
        denom += e;
    }
    num / denom
}

/// Exhaustive search over every non-empty subset. Test oracle; exponential in `J`.
pub fn brute_force_best(taste: &ConsumerTaste, line: &ProductLine) -> Result<(Assortment, f64)> {
    let n = line.len();
    if n == 0 {
        return Err(Error::EmptyLine);
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyProducts {
            limit: BRUTE_FORCE_LIMIT,
            actual: n,
        });
    }
    let deltas = taste.deltas(line)?;
    let margins = line.margins();
    let mut best = (0u64, f64::NEG_INFINITY);
    for mask in 1u64..(1 << n) {
        let members = (0..n).filter(move |k| mask >> k & 1 == 1);
        let profit = profit_of(&deltas, &margins, members);
        if profit > best.1 {
            best = (mask, profit);
        }
    }
    Ok((Assortment::from_mask(best.0), best.1))
}

/// Ordered price-sensitivity thresholds `c_{1,2} < .. < c_{J-1,J}`.
///
/// The implicit sentinels are `c_{0,1} = -inf` and `c_{J,J+1} = +inf`. A
/// product with zero margin is never worth adding, so its cutoff is `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffVector {
    interior: Vec<f64>,
}

impl CutoffVector {
    pub fn from_interior(interior: Vec<f64>) -> Self {
        Self { interior }
    }

    /// Number of products in the line the cutoffs were solved for.
    pub fn line_len(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// `c_{k,k+1}` for `k` in `0..=J`, sentinels included.
    pub fn boundary(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k > self.interior.len() {
            f64::INFINITY
        } else {
            self.interior[k - 1]
        }
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.interior.windows(2).all(|w| w[0] < w[1])
    }
}

/// Solves every cutoff `c_{j-1,j}`, the alpha at which offering product `j`
/// exactly breaks even against the nested set `{1..j-1}`.
pub fn solve_cutoffs(gamma: &[f64], line: &ProductLine) -> Result<CutoffVector> {
    if line.is_empty() {
        return Err(Error::EmptyLine);
    }
    if gamma.len() != line.len() {
        return Err(Error::dims("gamma", line.len(), gamma.len()));
    }
    line.require_strict()?;
    let mut interior = vec![0.0; line.len() - 1];
    cutoffs_into(gamma, &line.prices(), &line.margins(), &mut interior)?;
    Ok(CutoffVector { interior })
}

/// Slice-level cutoff solver shared with the share simulator. Inputs are
/// assumed validated (strict margins, positive prices).
pub(crate) fn cutoffs_into(gamma: &[f64], prices: &[f64], margins: &[f64], out: &mut [f64]) -> Result<()> {
    for j in 1..gamma.len() {
        let target = margins[j];
        if target <= 0.0 {
            out[j - 1] = f64::INFINITY;
            continue;
        }
        // Sign of target - E[profit of top j](alpha) changes exactly once, from - to +.
        let gap = |alpha: f64| {
            let mut shift = 0.0_f64;
            for k in 0..j {
                shift = shift.max(gamma[k] - alpha * prices[k]);
            }
            let mut denom = (-shift).exp();
            let mut num = 0.0;
            for k in 0..j {
                let e = (gamma[k] - alpha * prices[k] - shift).exp();
                denom += e;
                num += margins[k] * e;
            }
            target - num / denom
        };
        out[j - 1] = bisect_increasing(gap, -1.0, 1.0, CUTOFF_TOL, CUTOFF_MAX_ITER)?;
    }
    Ok(())
}

/// Depth `j` with `alpha` in `(c_{j-1,j}, c_{j,j+1}]`.
pub fn assortment_for_alpha(alpha: f64, cuts: &CutoffVector) -> FoldableAssortment {
    let below = cuts.interior.iter().take_while(|&&c| c < alpha).count();
    FoldableAssortment::new(below + 1, cuts.line_len()).expect("depth within line")
}
