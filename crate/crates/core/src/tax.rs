//! After-tax wholesale margins from the tobacco price chain.
//!
//! The retail price is built up as `P_r = A (1 + a)(1 + b)(1 + vat)` from the
//! allocation price `A`, so the wholesale price is `P_w = A (1 + a)(1 + vat)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxParams {
    pub wholesale_price: f64,
    /// `a`: allocation-to-wholesale margin rate.
    pub allocation_margin_rate: f64,
    /// `b`: wholesale-to-retail margin rate.
    pub retail_margin_rate: f64,
    pub vat_rate: f64,
    /// `t_a`: ad valorem tax on the allocation price.
    pub advalorem_rate: f64,
    /// `t_s`: specific tax per unit.
    pub specific_tax: f64,
}

impl TaxParams {
    pub fn new(
        wholesale_price: f64,
        allocation_margin_rate: f64,
        retail_margin_rate: f64,
        vat_rate: f64,
        advalorem_rate: f64,
        specific_tax: f64,
    ) -> Result<Self> {
        let p = Self {
            wholesale_price,
            allocation_margin_rate,
            retail_margin_rate,
            vat_rate,
            advalorem_rate,
            specific_tax,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.allocation_margin_rate,
            self.retail_margin_rate,
            self.vat_rate,
            self.advalorem_rate,
        ];
        if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidInput("tax and margin rates must lie in [0, 1)".into()));
        }
        if !(self.wholesale_price > 0.0) || !(self.specific_tax >= 0.0) {
            return Err(Error::InvalidInput(
                "wholesale price must be positive and specific tax non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `A = P_w / ((1 + a)(1 + vat))`.
    pub fn allocation_price(&self) -> f64 {
        self.wholesale_price / ((1.0 + self.allocation_margin_rate) * (1.0 + self.vat_rate))
    }

    pub fn retail_price(&self) -> f64 {
        self.wholesale_price * (1.0 + self.retail_margin_rate)
    }
}

/// `pi_w = A a - A t_a - t_s`.
pub fn wholesale_margin(tax: &TaxParams) -> f64 {
    let a = tax.allocation_price();
    a * tax.allocation_margin_rate - a * tax.advalorem_rate - tax.specific_tax
}
