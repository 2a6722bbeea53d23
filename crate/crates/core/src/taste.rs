//! Distribution of price sensitivity across consumers in a market.
//!
//! Price sensitivity is `alpha = theta / income` with log income normal, so
//! `log alpha ~ N(log theta - mu, sigma^2)` and every CDF and quantile below is
//! closed form.

#![allow(clippy::excessive_precision)]

use libm::erfc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal upper tail `1 - cdf(z)`, accurate far into the tail.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&AS241_A, r) / poly(&AS241_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&AS241_C, r) / poly(&AS241_D, r)
    } else {
        let r = r - 5.0;
        poly(&AS241_E, r) / poly(&AS241_F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Inverse of `norm_sf`; exact symmetry keeps small upper-tail areas precise.
pub fn norm_isf(q: f64) -> f64 {
    -norm_quantile(q)
}

#[inline]
fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_6,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_4e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const AS241_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_854_5e3,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_545,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_8e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_8e-15,
];

/// Lognormal income taste distribution of one market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasteDistribution {
    pub theta: f64,
    pub income_log_mean: f64,
    pub income_log_sd: f64,
}

impl TasteDistribution {
    pub fn new(theta: f64, income_log_mean: f64, income_log_sd: f64) -> Result<Self> {
        if !(theta > 0.0) || !(income_log_sd > 0.0) || !income_log_mean.is_finite() {
            return Err(Error::InvalidInput(format!(
                "taste distribution needs theta > 0 and sd > 0 (theta={theta}, mu={income_log_mean}, sd={income_log_sd})"
            )));
        }
        Ok(Self {
            theta,
            income_log_mean,
            income_log_sd,
        })
    }

    /// Location of `log alpha`.
    pub fn log_alpha_location(&self) -> f64 {
        self.theta.ln() - self.income_log_mean
    }

    /// Standardized log-alpha score of a cutoff; `-inf` for `alpha <= 0`.
    pub fn z_score(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            f64::NEG_INFINITY
        } else if alpha == f64::INFINITY {
            f64::INFINITY
        } else {
            (alpha.ln() - self.log_alpha_location()) / self.income_log_sd
        }
    }

    pub fn alpha_at(&self, z: f64) -> f64 {
        (self.log_alpha_location() + self.income_log_sd * z).exp()
    }

    /// Alpha implied by a standard-normal log-income draw `v`: `theta / exp(mu + sigma v)`.
    pub fn alpha_from_income_draw(&self, v: f64) -> f64 {
        self.theta / (self.income_log_mean + self.income_log_sd * v).exp()
    }
}

/// `P(alpha <= x)`; zero on the non-positive half line.
pub fn alpha_cdf(dist: &TasteDistribution, alpha: f64) -> f64 {
    norm_cdf(dist.z_score(alpha))
}

/// Fixed uniform draws reused for every interval, market and parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawSet {
    seed: u64,
    uniforms: Vec<f64>,
}

impl DrawSet {
    pub fn new(seed: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidInput("draw set needs at least one draw".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniforms = (0..count).map(|_| rng.sample(Open01)).collect();
        Ok(Self { seed, uniforms })
    }

    /// Draw set from explicit uniforms in the open unit interval.
    pub fn from_uniforms(seed: u64, uniforms: Vec<f64>) -> Result<Self> {
        if uniforms.is_empty() || uniforms.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
            return Err(Error::InvalidInput("uniform draws must lie in (0, 1)".into()));
        }
        Ok(Self { seed, uniforms })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniforms(&self) -> &[f64] {
        &self.uniforms
    }

    pub fn len(&self) -> usize {
        self.uniforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uniforms.is_empty()
    }
}

/// Seeded standard normal draws (log-income shocks for the full-availability model).
pub fn normal_draws(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Probability mass of `(lo, hi]` and a sampler for it, computed in whichever
/// tail keeps the most precision.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stratum {
    upper_tail: bool,
    start: f64,
    mass: f64,
}

impl Stratum {
    pub(crate) fn new(dist: &TasteDistribution, lo: f64, hi: f64) -> Self {
        let (zl, zh) = (dist.z_score(lo), dist.z_score(hi));
        if zl > 0.0 {
            let (ql, qh) = (norm_sf(zl), norm_sf(zh));
            Stratum {
                upper_tail: true,
                start: ql,
                mass: (ql - qh).max(0.0),
            }
        } else {
            let (pl, ph) = (norm_cdf(zl), norm_cdf(zh));
            Stratum {
                upper_tail: false,
                start: pl,
                mass: (ph - pl).max(0.0),
            }
        }
    }

    pub(crate) fn mass(&self) -> f64 {
        self.mass
    }

    /// Standard-normal score of the conditional quantile at `u`.
    #[inline]
    pub(crate) fn z_at(&self, u: f64) -> f64 {
        if self.upper_tail {
            norm_isf(self.start - u * self.mass)
        } else {
            norm_quantile(self.start + u * self.mass)
        }
    }
}

/// Alphas distributed as the taste law conditioned on `(lo, hi]`, one per
/// uniform draw, by inverting the conditional CDF. `None` when the interval
/// carries no probability mass.
pub fn conditional_alpha_sample(dist: &TasteDistribution, interval: (f64, f64), draws: &DrawSet) -> Option<Vec<f64>> {
    let (lo, hi) = interval;
    let stratum = Stratum::new(dist, lo, hi);
    if stratum.mass() <= 0.0 {
        return None;
    }
    Some(
        draws
            .uniforms()
            .iter()
            .map(|&u| dist.alpha_at(stratum.z_at(u)).clamp(lo.max(0.0), hi))
            .collect(),
    )
}
