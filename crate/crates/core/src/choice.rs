//! Products, consumer tastes, assortments and the logit choice kernel.
//!
//! Mean utility of product `j` for a consumer is `gamma_j - alpha * price_j`;
//! the outside option has deterministic utility zero. Probability vectors put
//! the outside option at index 0 and product `k` (zero-based position in the
//! line) at index `k + 1`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sellable good with a fixed retail price and per-unit margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub unit_margin: f64,
    pub retail_price: f64,
}

impl Product {
    pub fn new(id: impl Into<String>, unit_margin: f64, retail_price: f64) -> Result<Self> {
        let id = id.into();
        if !(unit_margin >= 0.0) || !unit_margin.is_finite() {
            return Err(Error::InvalidInput(format!(
                "product {id}: unit margin must be finite and >= 0, got {unit_margin}"
            )));
        }
        if !(retail_price > 0.0) || !retail_price.is_finite() {
            return Err(Error::InvalidInput(format!(
                "product {id}: retail price must be finite and > 0, got {retail_price}"
            )));
        }
        Ok(Self {
            id,
            unit_margin,
            retail_price,
        })
    }
}

/// Products ordered by unit margin, highest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductLine {
    products: Vec<Product>,
}

impl ProductLine {
    /// Builds a line, requiring margins to be weakly descending.
    pub fn new(products: Vec<Product>) -> Result<Self> {
        if let Some(k) = products.windows(2).position(|w| w[1].unit_margin > w[0].unit_margin) {
            return Err(Error::InvalidInput(format!(
                "product line must be sorted by descending margin (positions {} and {})",
                k,
                k + 1
            )));
        }
        Ok(Self { products })
    }

    /// Convenience constructor from parallel margin and price slices; ids are `1..=J`.
    pub fn from_vectors(margins: &[f64], prices: &[f64]) -> Result<Self> {
        if margins.len() != prices.len() {
            return Err(Error::dims("price vector", margins.len(), prices.len()));
        }
        let products = margins
            .iter()
            .zip(prices)
            .enumerate()
            .map(|(k, (&m, &p))| Product::new((k + 1).to_string(), m, p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(products)
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn margins(&self) -> Vec<f64> {
        self.products.iter().map(|p| p.unit_margin).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.products.iter().map(|p| p.retail_price).collect()
    }

    pub fn max_margin(&self) -> f64 {
        self.products.first().map_or(0.0, |p| p.unit_margin)
    }

    /// Fails unless every adjacent pair of margins is strictly descending.
    pub fn require_strict(&self) -> Result<()> {
        match self
            .products
            .windows(2)
            .position(|w| !(w[1].unit_margin < w[0].unit_margin))
        {
            Some(k) => Err(Error::MarginsNotStrictlyDescending(k, k + 1)),
            None => Ok(()),
        }
    }

    /// Same products with every retail price multiplied by the matching factor.
    pub fn with_scaled_prices(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.len() {
            return Err(Error::dims("price factors", self.len(), factors.len()));
        }
        let products = self
            .products
            .iter()
            .zip(factors)
            .map(|(p, &f)| Product::new(p.id.clone(), p.unit_margin, p.retail_price * f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { products })
    }
}

/// Price sensitivity and per-product consumption utilities of one consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerTaste {
    pub alpha: f64,
    pub gamma: Vec<f64>,
}

impl ConsumerTaste {
    pub fn new(alpha: f64, gamma: Vec<f64>) -> Self {
        Self { alpha, gamma }
    }

    /// Mean utilities `gamma_j - alpha * p_j` over the line.
    pub fn deltas(&self, line: &ProductLine) -> Result<Vec<f64>> {
        if self.gamma.len() != line.len() {
            return Err(Error::dims("taste gamma", line.len(), self.gamma.len()));
        }
        Ok(self
            .gamma
            .iter()
            .zip(line.products())
            .map(|(g, p)| g - self.alpha * p.retail_price)
            .collect())
    }
}

/// A set of zero-based product positions offered to a consumer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assortment {
    members: BTreeSet<usize>,
}

impl Assortment {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        Self {
            members: members.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The first `depth` products of the line.
    pub fn top(depth: usize) -> Self {
        Self::new(0..depth)
    }

    /// Decodes a subset bitmask (bit `k` set means position `k` is offered).
    pub fn from_mask(mask: u64) -> Self {
        Self::new((0..64).filter(|k| mask >> k & 1 == 1))
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        self.members.iter().copied()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members.contains(&k)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Depth `j` when this set is exactly `{0, .., j-1}`.
    pub fn as_foldable(&self) -> Option<FoldableAssortment> {
        let n = self.members.len();
        (n > 0 && self.members.iter().enumerate().all(|(i, &k)| i == k)).then_some(FoldableAssortment { depth: n })
    }

    pub(crate) fn validate(&self, len: usize) -> Result<()> {
        match self.members.iter().next_back() {
            Some(&k) if k >= len => Err(Error::AssortmentOutOfRange { index: k, len }),
            _ => Ok(()),
        }
    }
}

/// The nested set `{1, .., depth}` of top-margin products.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FoldableAssortment {
    depth: usize,
}

impl FoldableAssortment {
    pub fn new(depth: usize, line_len: usize) -> Result<Self> {
        if depth == 0 || depth > line_len {
            return Err(Error::InvalidInput(format!(
                "foldable depth must be in 1..={line_len}, got {depth}"
            )));
        }
        Ok(Self { depth })
    }

    pub fn depth(self) -> usize {
        self.depth
    }

    pub fn assortment(self) -> Assortment {
        Assortment::top(self.depth)
    }
}

/// Logit probabilities over `members` with outside utility zero, written into
/// `out` (outside at index 0). Uses a max shift so large utilities cannot overflow.
pub(crate) fn logit_into(deltas: &[f64], members: impl Iterator<Item = usize> + Clone, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let shift = members.clone().map(|k| deltas[k]).fold(0.0_f64, f64::max);
    let outside = (-shift).exp();
    let mut denom = outside;
    for k in members.clone() {
        let e = (deltas[k] - shift).exp();
        out[k + 1] = e;
        denom += e;
    }
    out[0] = outside / denom;
    for k in members {
        out[k + 1] /= denom;
    }
}

/// Expected profit `sum_j margin_j * prob_j` over the members of an assortment.
pub(crate) fn profit_of(deltas: &[f64], margins: &[f64], members: impl Iterator<Item = usize> + Clone) -> f64 {
    let shift = members.clone().map(|k| deltas[k]).fold(0.0_f64, f64::max);
    let mut denom = (-shift).exp();
    let mut num = 0.0;
    for k in members {
        let e = (deltas[k] - shift).exp();
        denom += e;
        num += margins[k] * e;
    }
    num / denom
}

/// Choice probabilities (outside option first) when `a` is offered.
pub fn choice_probabilities(taste: &ConsumerTaste, line: &ProductLine, a: &Assortment) -> Result<Vec<f64>> {
    let deltas = taste.deltas(line)?;
    a.validate(line.len())?;
    let mut out = vec![0.0; line.len() + 1];
    logit_into(&deltas, a.members(), &mut out);
    Ok(out)
}

/// Expected per-consumer profit of offering `a`; zero for the empty set.
pub fn expected_profit(taste: &ConsumerTaste, line: &ProductLine, a: &Assortment) -> Result<f64> {
    let deltas = taste.deltas(line)?;
    a.validate(line.len())?;
    Ok(profit_of(&deltas, &line.margins(), a.members()))
}
