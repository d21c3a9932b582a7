//! Shared numeric helpers: deterministic summation, stable exponential-moment
//! accumulation, binomial intervals, and scalar Gaussian utilities.

use statrs::function::erf::erfc;

/// Pairwise (cascade) summation.
///
/// Used everywhere a sum feeds a reproducibility-sensitive result (empirical
/// losses over up to 10^6 samples, Monte Carlo reductions): the fixed
/// reduction tree keeps results identical across runs and bounds rounding
/// error growth at O(log n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// ln(sum exp(x_i)), max-subtracted.
pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Partial summary of exponential-moment samples from one worker chunk.
///
/// A chunk records the maximum exponent together with sums of exp(g - max)
/// and exp(2(g - max)). Chunk boundaries are a fixed function of the sample
/// count alone, and chunks are merged in index order, so the merged result is
/// bit-identical whatever the thread count.
#[derive(Debug, Clone, Copy)]
pub struct ExpMomentChunk {
    pub count: u64,
    pub max: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ExpMomentChunk {
    pub fn from_exponents(gs: &[f64]) -> Self {
        if gs.is_empty() {
            return ExpMomentChunk {
                count: 0,
                max: f64::NEG_INFINITY,
                sum: 0.0,
                sum_sq: 0.0,
            };
        }
        let max = gs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = gs.iter().map(|g| (g - max).exp()).collect();
        let squares: Vec<f64> = shifted.iter().map(|w| w * w).collect();
        ExpMomentChunk {
            count: gs.len() as u64,
            max,
            sum: pairwise_sum(&shifted),
            sum_sq: pairwise_sum(&squares),
        }
    }
}

/// Merged log-mean-exp with a delta-method standard error on the log scale
/// and the (sum w)^2 / sum w^2 effective sample size.
#[derive(Debug, Clone, Copy)]
pub struct ExpMomentSummary {
    pub count: u64,
    pub log_mean: f64,
    pub se_log: f64,
    pub ess: f64,
}

pub fn merge_exp_chunks(chunks: &[ExpMomentChunk]) -> ExpMomentSummary {
    let mut global_max = f64::NEG_INFINITY;
    for c in chunks {
        if c.count > 0 {
            global_max = global_max.max(c.max);
        }
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut count = 0u64;
    for c in chunks {
        if c.count == 0 {
            continue;
        }
        let w = (c.max - global_max).exp();
        s1 += w * c.sum;
        s2 += (w * w) * c.sum_sq;
        count += c.count;
    }
    let n = count as f64;
    let mean = s1 / n;
    let log_mean = global_max + mean.ln();
    let var = if count > 1 {
        ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let se_log = if mean > 0.0 {
        (var / n).sqrt() / mean
    } else {
        f64::INFINITY
    };
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { n };
    ExpMomentSummary {
        count,
        log_mean,
        se_log,
        ess,
    }
}

/// Wilson score interval for a binomial proportion at critical value `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Two-sided 95% critical value.
pub const Z_95: f64 = 1.959963984540054;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// E[min(Z^2, clip)] for Z ~ N(mean, sd^2).
pub fn gaussian_clipped_square_moment(mean: f64, sd: f64, clip: f64) -> f64 {
    debug_assert!(clip > 0.0 && sd >= 0.0);
    if sd == 0.0 {
        return (mean * mean).min(clip);
    }
    let s = clip.sqrt();
    let a = (-s - mean) / sd;
    let b = (s - mean) / sd;
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let p_in = normal_cdf(b) - normal_cdf(a);
    // E[Z^2; a <= (Z-mean)/sd <= b] from truncated-normal moments.
    let e2_in =
        mean * mean * p_in + 2.0 * mean * sd * (pa - pb) + sd * sd * (p_in + a * pa - b * pb);
    (e2_in + clip * (1.0 - p_in)).clamp(0.0, clip)
}
