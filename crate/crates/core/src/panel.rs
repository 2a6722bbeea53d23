//! Market panels and their CSV representation.
//!
//! One CSV row per market and tier:
//!
//! ```text
//! market_id,tier,observed_share,real_price,real_margin,income_log_mean,income_log_sd,cpi[,group][,market_size][,unit_tax]
//! ```
//!
//! Tiers are numbered `1..=J` in descending-margin order. `group` selects the
//! fixed-utility cell under tier-by-group dummies, `market_size` converts
//! shares to sales (default 1) and `unit_tax` is the baseline per-unit tax used
//! for revenue accounting.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::choice::ProductLine;
use crate::error::{Error, Result};
use crate::taste::TasteDistribution;

pub const DEFAULT_GROUP: &str = "all";

/// One province-year style market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub id: String,
    pub group: String,
    pub cpi: f64,
    pub income_log_mean: f64,
    pub income_log_sd: f64,
    /// Real prices and margins.
    pub line: ProductLine,
    /// Observed inside shares, line order.
    pub shares: Vec<f64>,
    pub market_size: f64,
    pub unit_tax: Option<Vec<f64>>,
}

impl Market {
    pub fn outside_share(&self) -> f64 {
        1.0 - self.shares.iter().sum::<f64>()
    }

    pub fn taste(&self, theta: f64) -> Result<TasteDistribution> {
        TasteDistribution::new(theta, self.income_log_mean, self.income_log_sd)
    }

    pub fn n_products(&self) -> usize {
        self.line.len()
    }
}

/// A collection of markets sharing the same number of tiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    markets: Vec<Market>,
}

impl Panel {
    pub fn new(markets: Vec<Market>) -> Result<Self> {
        let Some(first) = markets.first() else {
            return Err(Error::InvalidInput("panel has no markets".into()));
        };
        let j = first.n_products();
        if j == 0 {
            return Err(Error::EmptyLine);
        }
        for m in &markets {
            if m.n_products() != j || m.shares.len() != j {
                return Err(Error::InvalidInput(format!(
                    "market {} has {} products and {} shares, expected {j}",
                    m.id,
                    m.n_products(),
                    m.shares.len()
                )));
            }
            if let Some(tax) = &m.unit_tax {
                if tax.len() != j {
                    return Err(Error::dims("unit tax", j, tax.len()));
                }
            }
        }
        Ok(Self { markets })
    }

    pub fn markets(&self) -> &[Market] {
        &self.markets
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn n_products(&self) -> usize {
        self.markets[0].n_products()
    }

    pub fn has_unit_tax(&self) -> bool {
        self.markets.iter().all(|m| m.unit_tax.is_some())
    }

    /// Checks the share preconditions of inversion: every share in (0, 1)
    /// and a strictly positive outside share.
    pub fn validate_shares(&self) -> Result<()> {
        for m in &self.markets {
            if let Some(k) = m.shares.iter().position(|&s| !(s > 0.0 && s < 1.0)) {
                return Err(Error::InvalidInput(format!(
                    "market {} tier {}: observed share {} must lie strictly inside (0, 1)",
                    m.id,
                    k + 1,
                    m.shares[k]
                )));
            }
            if !(m.outside_share() > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "market {}: outside share must be positive",
                    m.id
                )));
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        for required in PanelRow::REQUIRED {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::Schema {
                    row: 1,
                    message: format!("missing required column `{required}`"),
                });
            }
        }
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(usize, PanelRow)>> = HashMap::new();
        for (i, rec) in rdr.deserialize::<PanelRow>().enumerate() {
            // Line numbers count the header as line 1.
            let line = i + 2;
            let row = rec.map_err(|e| Error::Schema {
                row: line,
                message: e.to_string(),
            })?;
            if !rows.contains_key(&row.market_id) {
                order.push(row.market_id.clone());
            }
            rows.entry(row.market_id.clone()).or_default().push((line, row));
        }
        let mut markets = Vec::with_capacity(order.len());
        for id in order {
            let mut group = rows.remove(&id).expect("market rows");
            group.sort_by_key(|(_, r)| r.tier);
            markets.push(assemble_market(&id, &group)?);
        }
        Self::new(markets)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for m in &self.markets {
            for (k, p) in m.line.products().iter().enumerate() {
                wtr.serialize(PanelRow {
                    market_id: m.id.clone(),
                    tier: k + 1,
                    observed_share: m.shares[k],
                    real_price: p.retail_price,
                    real_margin: p.unit_margin,
                    income_log_mean: m.income_log_mean,
                    income_log_sd: m.income_log_sd,
                    cpi: m.cpi,
                    group: Some(m.group.clone()),
                    market_size: Some(m.market_size),
                    unit_tax: m.unit_tax.as_ref().map(|t| t[k]),
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PanelRow {
    market_id: String,
    tier: usize,
    observed_share: f64,
    real_price: f64,
    real_margin: f64,
    income_log_mean: f64,
    income_log_sd: f64,
    cpi: f64,
    #[serde(default)]
    group: Option<String>,
    #[serde(default)]
    market_size: Option<f64>,
    #[serde(default)]
    unit_tax: Option<f64>,
}

impl PanelRow {
    const REQUIRED: [&'static str; 8] = [
        "market_id",
        "tier",
        "observed_share",
        "real_price",
        "real_margin",
        "income_log_mean",
        "income_log_sd",
        "cpi",
    ];
}

fn assemble_market(id: &str, rows: &[(usize, PanelRow)]) -> Result<Market> {
    let schema = |row: usize, message: String| Error::Schema { row, message };
    let (first_line, first) = &rows[0];
    for (k, (line, r)) in rows.iter().enumerate() {
        if r.tier != k + 1 {
            return Err(schema(
                *line,
                format!(
                    "market {id}: tiers must be exactly 1..={} without gaps or repeats",
                    rows.len()
                ),
            ));
        }
        let same = r.income_log_mean == first.income_log_mean
            && r.income_log_sd == first.income_log_sd
            && r.cpi == first.cpi
            && r.group == first.group
            && r.market_size == first.market_size;
        if !same {
            return Err(schema(
                *line,
                format!("market {id}: market-level columns differ between tiers"),
            ));
        }
        if r.unit_tax.is_some() != first.unit_tax.is_some() {
            return Err(schema(
                *line,
                format!("market {id}: unit_tax given for some tiers only"),
            ));
        }
    }
    if !(first.income_log_sd > 0.0) || !(first.cpi > 0.0) {
        return Err(schema(
            *first_line,
            format!("market {id}: income_log_sd and cpi must be positive"),
        ));
    }
    let margins: Vec<f64> = rows.iter().map(|(_, r)| r.real_margin).collect();
    let prices: Vec<f64> = rows.iter().map(|(_, r)| r.real_price).collect();
    let line =
        ProductLine::from_vectors(&margins, &prices).map_err(|e| schema(*first_line, format!("market {id}: {e}")))?;
    let market_size = first.market_size.unwrap_or(1.0);
    if !(market_size > 0.0) {
        return Err(schema(
            *first_line,
            format!("market {id}: market_size must be positive"),
        ));
    }
    Ok(Market {
        id: id.to_string(),
        group: first.group.clone().unwrap_or_else(|| DEFAULT_GROUP.to_string()),
        cpi: first.cpi,
        income_log_mean: first.income_log_mean,
        income_log_sd: first.income_log_sd,
        line,
        shares: rows.iter().map(|(_, r)| r.observed_share).collect(),
        market_size,
        unit_tax: first
            .unit_tax
            .is_some()
            .then(|| rows.iter().map(|(_, r)| r.unit_tax.unwrap_or(0.0)).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
market_id,tier,observed_share,real_price,real_margin,income_log_mean,income_log_sd,cpi
m1,2,0.1,2.0,1.0,1.0,0.5,1.1
m1,1,0.2,3.0,2.0,1.0,0.5,1.1
m2,1,0.25,3.0,2.0,1.1,0.6,1.0
m2,2,0.15,2.0,1.0,1.1,0.6,1.0
";

    #[test]
    fn reads_minimal_schema() {
        let p = Panel::read_csv(CSV.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.n_products(), 2);
        let m1 = &p.markets()[0];
        assert_eq!(m1.id, "m1");
        assert_eq!(m1.shares, vec![0.2, 0.1]);
        assert_eq!(m1.group, DEFAULT_GROUP);
        assert_eq!(m1.market_size, 1.0);
        assert!(m1.unit_tax.is_none());
        assert!((m1.outside_share() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let bad = CSV.replace(",cpi", "");
        match Panel::read_csv(bad.as_bytes()) {
            Err(Error::Schema { row: 1, message }) => assert!(message.contains("cpi")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_row_number() {
        let bad = CSV.replace("m2,1,0.25", "m2,1,abc");
        match Panel::read_csv(bad.as_bytes()) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tier_gap_rejected() {
        let bad = CSV.replace("m2,2,0.15", "m2,3,0.15");
        assert!(matches!(Panel::read_csv(bad.as_bytes()), Err(Error::Schema { .. })));
    }

    #[test]
    fn zero_share_fails_validation() {
        let bad = CSV.replace("m2,2,0.15", "m2,2,0.0");
        let p = Panel::read_csv(bad.as_bytes()).unwrap();
        assert!(p.validate_shares().is_err());
        assert!(Panel::read_csv(CSV.as_bytes()).unwrap().validate_shares().is_ok());
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut p = Panel::read_csv(CSV.as_bytes()).unwrap();
        p.markets[0].unit_tax = Some(vec![1.0 / 3.0, 0.1]);
        p.markets[1].unit_tax = Some(vec![0.7, 0.2]);
        p.markets[1].group = "north".into();
        p.markets[1].market_size = 12.5;
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = Panel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
