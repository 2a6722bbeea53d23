//! Demand estimation when prices are fixed and a profit-maximizing seller
//! chooses which products each consumer gets to see.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod analysis;
pub mod assortment;
pub mod choice;
pub mod competition;
pub mod error;
pub mod estimator;
pub mod income;
mod kernel;
pub mod optimize;
pub mod panel;
pub mod shares;
pub mod synth;
pub mod taste;
pub mod tax;

pub use analysis::{
    assortment_distribution, decompose_elasticities, elasticities, full_availability, tax_counterfactual,
    uniform_price_change, CounterfactualReport, ElasticityMatrix, FittedModel, ResponseMode,
};
pub use assortment::{assortment_for_alpha, brute_force_best, optimal_foldable, solve_cutoffs, CutoffVector};
pub use choice::{
    choice_probabilities, expected_profit, Assortment, ConsumerTaste, FoldableAssortment, Product, ProductLine,
};
pub use competition::{
    enumerate_nash, find_equilibrium, foldable_loss_random_coef, is_nash, points_of_sale, random_coef_sweep,
    CompetitionScenario, EquilibriumPath, FirmProfile, Game, LatticePoint, NashReport, RandomCoefReport,
    RandomCoefSpec, SweepRow,
};
pub use error::{Error, Result};
pub use estimator::{
    bootstrap_se, estimate, estimate_standard_logit, gmm_objective, invert_shares, DummyStructure, EstimationConfig,
    EstimationResult, Model,
};
pub use income::{fit_lognormal_from_quintiles, LognormalFit};
pub use panel::{Market, Panel};
pub use shares::{predicted_shares, standard_logit_shares, MarketShares, SimulationDraws};
pub use synth::{generate_panel, DgpAssortment, DgpConfig, SyntheticPanel};
pub use taste::{alpha_cdf, conditional_alpha_sample, DrawSet, TasteDistribution};
pub use tax::{wholesale_margin, TaxParams};
