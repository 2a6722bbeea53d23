//! Vectorizable inner loop of the simulated share integrals.
//!
//! The loops are written over flat arrays with a branch-free `exp` so the
//! compiler can vectorize them; on x86-64 an AVX2/FMA build of the same code
//! is selected at runtime.

#![allow(clippy::excessive_precision)]

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// `1.5 * 2^52`: adding it rounds to an integer held in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
/// Inputs are clamped here; `exp(-700)` is far below any share of interest.
const EXP_LIMIT: f64 = 700.0;

/// Taylor coefficients `1/k!` for `k = 0..=13`.
const EXP_TAYLOR: [f64; 14] = [
    1.0,
    1.0,
    0.5,
    1.666_666_666_666_666_6e-1,
    4.166_666_666_666_666_4e-2,
    8.333_333_333_333_333e-3,
    1.388_888_888_888_889e-3,
    1.984_126_984_126_984e-4,
    2.480_158_730_158_730_2e-5,
    2.755_731_922_398_589e-6,
    2.755_731_922_398_589_3e-7,
    2.505_210_838_544_172e-8,
    2.087_675_698_786_81e-9,
    1.605_904_383_682_161_3e-10,
];

/// `exp(x)` to within a few ulp for `|x| <= 700`, without branches or tables.
#[inline(always)]
pub(crate) fn exp_branchless(x: f64) -> f64 {
    let x = x.clamp(-EXP_LIMIT, EXP_LIMIT);
    let t = x * LOG2E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = EXP_TAYLOR[13];
    for c in EXP_TAYLOR[..13].iter().rev() {
        p = p * r + c;
    }
    let k = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    f64::from_bits(k.wrapping_add(1023) << 52) * p
}

/// Scratch space for one interval of consumers.
#[derive(Default)]
pub(crate) struct Scratch {
    /// Standard-normal scores of log alpha on input; alphas after `logit_sums`.
    pub(crate) alphas: Vec<f64>,
    weights: Vec<f64>,
    denom: Vec<f64>,
}

impl Scratch {
    pub(crate) fn with_capacity(n: usize, j: usize) -> Self {
        Self {
            alphas: Vec::with_capacity(n),
            weights: vec![0.0; n * j],
            denom: vec![0.0; n],
        }
    }
}

/// Sums logit probabilities over consumers with `alpha = exp(loc + scale z)`
/// for the scores `z` in `scratch.alphas`, each facing products
/// `0..offered`. Adds into `acc` and returns the summed outside probability.
pub(crate) fn logit_sums(
    gamma: &[f64],
    prices: &[f64],
    offered: usize,
    (loc, scale): (f64, f64),
    scratch: &mut Scratch,
    acc: &mut [f64],
) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected above.
            return unsafe { logit_sums_avx2(gamma, prices, offered, (loc, scale), scratch, acc) };
        }
    }
    logit_sums_body(gamma, prices, offered, (loc, scale), scratch, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn logit_sums_avx2(
    gamma: &[f64],
    prices: &[f64],
    offered: usize,
    log_alpha: (f64, f64),
    scratch: &mut Scratch,
    acc: &mut [f64],
) -> f64 {
    logit_sums_body(gamma, prices, offered, log_alpha, scratch, acc)
}

#[inline(always)]
fn logit_sums_body(
    gamma: &[f64],
    prices: &[f64],
    offered: usize,
    (loc, scale): (f64, f64),
    scratch: &mut Scratch,
    acc: &mut [f64],
) -> f64 {
    for z in scratch.alphas.iter_mut() {
        *z = exp_branchless(loc + scale * *z);
    }
    let n = scratch.alphas.len();
    let alphas = &scratch.alphas[..];
    if scratch.weights.len() < n * offered {
        scratch.weights.resize(n * offered, 0.0);
    }
    if scratch.denom.len() < n {
        scratch.denom.resize(n, 0.0);
    }
    let denom = &mut scratch.denom[..n];
    denom.fill(1.0);
    for k in 0..offered {
        let (g, p) = (gamma[k], prices[k]);
        let row = &mut scratch.weights[k * n..(k + 1) * n];
        for ((w, d), a) in row.iter_mut().zip(denom.iter_mut()).zip(alphas) {
            let v = exp_branchless(g - a * p);
            *w = v;
            *d += v;
        }
    }
    for d in denom.iter_mut() {
        *d = 1.0 / *d;
    }
    for (a, row) in acc[..offered].iter_mut().zip(scratch.weights.chunks_exact(n)) {
        *a += sum_products(row, denom);
    }
    denom.iter().sum()
}

/// Logit sums for consumers with precomputed `exp(-alpha_i p_k)` stored
/// column-major in `columns` (`n` rows per product). `exp_gamma` holds
/// `exp(gamma_k)`; `denom` is scratch of length `n`.
pub(crate) fn weighted_logit_sums(exp_gamma: &[f64], columns: &[f64], denom: &mut [f64], acc: &mut [f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected above.
            return unsafe { weighted_logit_sums_avx2(exp_gamma, columns, denom, acc) };
        }
    }
    weighted_logit_sums_body(exp_gamma, columns, denom, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weighted_logit_sums_avx2(exp_gamma: &[f64], columns: &[f64], denom: &mut [f64], acc: &mut [f64]) -> f64 {
    weighted_logit_sums_body(exp_gamma, columns, denom, acc)
}

#[inline(always)]
fn weighted_logit_sums_body(exp_gamma: &[f64], columns: &[f64], denom: &mut [f64], acc: &mut [f64]) -> f64 {
    let n = denom.len();
    denom.fill(1.0);
    for (k, &eg) in exp_gamma.iter().enumerate() {
        for (d, w) in denom.iter_mut().zip(&columns[k * n..(k + 1) * n]) {
            *d += eg * w;
        }
    }
    for d in denom.iter_mut() {
        *d = 1.0 / *d;
    }
    for (k, &eg) in exp_gamma.iter().enumerate() {
        acc[k] += eg * sum_products(&columns[k * n..(k + 1) * n], denom);
    }
    denom.iter().sum()
}

/// Dot product with four running sums.
#[inline(always)]
fn sum_products(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            s[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}
