//! Pearson correlation, paired Wilcoxon signed-rank test, Cliff's delta and
//! Student-t confidence intervals.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Effective sample size up to which Wilcoxon p-values are exact.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

fn check_finite(name: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(name, alloc::format!("{name} contains non-finite values")))
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (v.len() - 1) as f64)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 2 {
        return Err(invalid("x", "pearson needs at least 2 points"));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMode {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub mode: PValueMode,
}

/// Ranks of `|d|` doubled so mid-ranks stay integral, plus tie-group sizes.
fn doubled_abs_ranks(d: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0u64; d.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && d[order[end + 1]].abs() == d[order[start]].abs() {
            end += 1;
        }
        // Mid-rank of 1-based positions start+1..=end+1, doubled.
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        ties.push(end - start + 1);
        start = end + 1;
    }
    (ranks, ties)
}

/// Paired two-sided Wilcoxon signed-rank test on `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), found: b.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    wilcoxon_differences(&d)
}

/// Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped and tied magnitudes receive mid-ranks. Up to
/// [`EXACT_WILCOXON_MAX_N`] nonzero differences the p-value is exact, from the
/// distribution of `W+` over all sign assignments of the observed ranks;
/// beyond that a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_differences(d: &[f64]) -> Result<WilcoxonResult> {
    if d.is_empty() {
        return Err(Error::Empty("paired sample"));
    }
    check_finite("differences", d)?;
    let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::DegeneratePairing);
    }
    let n = nz.len();
    let (ranks, ties) = doubled_abs_ranks(&nz);
    let plus2: u64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total2 = (n * (n + 1)) as u64;
    let minus2 = total2 - plus2;
    let stat2 = plus2.min(minus2);

    let (p_value, mode) = if n <= EXACT_WILCOXON_MAX_N {
        // counts[s] = number of sign assignments with doubled W+ == s.
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let tail: u64 = counts[..=stat2 as usize].iter().sum();
        let p = 2.0 * tail as f64 / libm::ldexp(1.0, n as i32);
        (p.min(1.0), PValueMode::Exact)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let w = stat2 as f64 / 2.0;
        let diff = w - mu;
        let cc = if diff > 0.0 { 0.5 } else if diff < 0.0 { -0.5 } else { 0.0 };
        let z = (diff - cc) / libm::sqrt(var);
        ((libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2)).min(1.0), PValueMode::Normal)
    };
    Ok(WilcoxonResult {
        statistic: stat2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        p_value,
        n_effective: n,
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    /// `|d| < 0.147` negligible, `< 0.33` small, `< 0.474` medium, else large.
    pub fn from_delta(delta: f64) -> Self {
        let a = libm::fabs(delta);
        if a < 0.147 {
            Magnitude::Negligible
        } else if a < 0.33 {
            Magnitude::Small
        } else if a < 0.474 {
            Magnitude::Medium
        } else {
            Magnitude::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub delta: f64,
    pub magnitude: Magnitude,
}

/// Cliff's delta `(#(a > b) - #(a < b)) / (|a| |b|)` over all cross pairs.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<EffectSize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("cliffs_delta sample"));
    }
    check_finite("a", a)?;
    check_finite("b", b)?;
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &x in a {
        let below = sorted.partition_point(|&v| v.partial_cmp(&x) == Some(Ordering::Less));
        let not_above = sorted.partition_point(|&v| v <= x);
        let above = sorted.len() - not_above;
        dominance += below as i64 - above as i64;
    }
    let delta = dominance as f64 / (a.len() as f64 * b.len() as f64);
    Ok(EffectSize { delta, magnitude: Magnitude::from_delta(delta) })
}

/// Regularized incomplete beta `I_x(a, b)` by continued fraction.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t by bracketing and bisection on the CDF.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", "quantile probability must be in (0, 1)"));
    }
    if !(df > 0.0) {
        return Err(invalid("df", "degrees of freedom must be positive"));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return student_t_quantile(1.0 - p, df).map(|q| -q);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided Student-t interval for the mean: `mean +- t * sd / sqrt(n)`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(invalid("values", "confidence interval needs n >= 2"));
    }
    check_finite("values", values)?;
    if !(0.0..1.0).contains(&level) {
        return Err(invalid("level", "level must be in [0, 1)"));
    }
    let m = mean(values);
    let sd = sample_sd(values);
    if level == 0.0 || sd == 0.0 {
        return Ok((m, m));
    }
    let n = values.len() as f64;
    let t = student_t_quantile(0.5 * (1.0 + level), n - 1.0)?;
    let half = t * sd / libm::sqrt(n);
    Ok((m - half, m + half))
}
