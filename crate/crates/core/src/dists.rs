//! Scalar distribution kernels: logit transforms, truncated normal, Fisher's
//! non-central hypergeometric and its biased-binomial approximation.
//!
//! All mass functions work in log space. The hypergeometric kernels build
//! their weights from the pmf ratio recurrence rather than factorials, so a
//! population of 10^7 costs nothing beyond the width of the support.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit requires 0 < p < 1, got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of `Normal(mean, var)`; `var` is a variance.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// Upper tail `P(Z > z)` of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `ln P(Z > z)`, with an asymptotic expansion once `erfc` underflows.
fn log_normal_sf(z: f64) -> f64 {
    let q = normal_sf(z);
    if q > 0.0 {
        q.ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `ln(Phi(b) - Phi(a))` for standardized bounds `a < b`.
pub fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // both bounds in the upper tail
        let la = log_normal_sf(a);
        let lb = log_normal_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        log_normal_mass(-b, -a)
    } else {
        (1.0 - normal_sf(b) - normal_sf(-a)).ln()
    }
}

fn check_truncation(var: f64, lower: f64, upper: f64) -> Result<()> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Domain(format!("normal variance must be positive, got {var}")));
    }
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::Domain(format!("empty truncation interval ({lower}, {upper})")));
    }
    Ok(())
}

/// Log-density of `Normal(mean, var)` truncated to `(lower, upper)`; `-inf`
/// outside the interval.
pub fn truncnorm_logpdf(x: f64, mean: f64, var: f64, lower: f64, upper: f64) -> Result<f64> {
    check_truncation(var, lower, upper)?;
    if x < lower || x > upper {
        return Ok(f64::NEG_INFINITY);
    }
    let sd = var.sqrt();
    let mass = log_normal_mass((lower - mean) / sd, (upper - mean) / sd);
    Ok(normal_logpdf(x, mean, var) - mass)
}

/// Log-density of the half-normal `Normal(0, var) T(0, inf)`.
pub fn half_normal_logpdf(x: f64, var: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        normal_logpdf(x, 0.0, var) + LN_2
    }
}

/// Draw from `Normal(mean, var)` truncated to `(lower, upper)`.
pub fn truncnorm_sample<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    check_truncation(var, lower, upper)?;
    let sd = var.sqrt();
    let z = std_truncnorm((lower - mean) / sd, (upper - mean) / sd, rng);
    Ok(mean + sd * z)
}

/// Standard normal restricted to `(a, b)`, by the mixed rejection scheme of
/// Robert (1995): normal, uniform or translated-exponential proposals
/// depending on where the interval sits.
fn std_truncnorm<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a > 0.0 {
        return std_truncnorm_tail(a, b, rng);
    }
    if b < 0.0 {
        return -std_truncnorm_tail(-b, -a, rng);
    }
    if b - a >= (2.0 * PI).sqrt() {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let x = rng.random_range(a..b);
        if rng.random::<f64>() < (-0.5 * x * x).exp() {
            return x;
        }
    }
}

/// Case `0 <= a < b`.
fn std_truncnorm_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b * b - a * a <= 2.0 {
        loop {
            let x = rng.random_range(a..b);
            if rng.random::<f64>() < (0.5 * (a * a - x * x)).exp() {
                return x;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z >= b {
            continue;
        }
        let d = z - rate;
        if rng.random::<f64>() < (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Fisher's non-central hypergeometric: `m1` positives and `m2` negatives in
/// the population, `n` drawn, odds ratio `phi` favouring positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NchgParams {
    pub m1: u64,
    pub m2: u64,
    pub n: u64,
    pub phi: f64,
}

impl NchgParams {
    pub fn new(m1: u64, m2: u64, n: u64, phi: f64) -> Result<Self> {
        if n > m1 + m2 {
            return Err(Error::Domain(format!("sample size {n} exceeds population {}", m1 + m2)));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Domain(format!("odds ratio must be positive and finite, got {phi}")));
        }
        Ok(Self { m1, m2, n, phi })
    }

    /// Inclusive support `[max(0, n - m2), min(n, m1)]`.
    pub fn support(&self) -> (u64, u64) {
        (self.n.saturating_sub(self.m2), self.n.min(self.m1))
    }

    /// `ln(w(y) / w(y - 1))` for unnormalized weights
    /// `w(y) = C(m1, y) C(m2, n - y) phi^y`; `y` must satisfy `lo < y <= hi`.
    fn log_ratio(&self, y: u64) -> f64 {
        let num = ((self.m1 - y + 1) as f64) * ((self.n - y + 1) as f64);
        let den = (y as f64) * ((self.m2 + y - self.n) as f64);
        (num / den).ln() + self.phi.ln()
    }

    /// Mode of the distribution. The weight ratio is decreasing in `y`, so
    /// the mode is the last `y` whose ratio is at least one.
    pub fn mode(&self) -> u64 {
        let (lo, hi) = self.support();
        let (mut left, mut right) = (lo, hi);
        while left < right {
            let mid = left + (right - left).div_ceil(2);
            if self.log_ratio(mid) >= 0.0 {
                left = mid;
            } else {
                right = mid - 1;
            }
        }
        left
    }

    /// Normalized log-pmf over the whole support, built outward from the mode.
    pub fn log_pmf_table(&self) -> NchgTable {
        let (lo, hi) = self.support();
        let mode = self.mode();
        let width = (hi - lo + 1) as usize;
        let mut logw = vec![0.0; width];
        let m = (mode - lo) as usize;
        for i in (m + 1)..width {
            logw[i] = logw[i - 1] + self.log_ratio(lo + i as u64);
        }
        for i in (0..m).rev() {
            logw[i] = logw[i + 1] - self.log_ratio(lo + i as u64 + 1);
        }
        // logw[m] = 0 is the maximum, so the sum is in [1, width]
        let log_norm = logw.iter().map(|w| w.exp()).sum::<f64>().ln();
        for w in &mut logw {
            *w -= log_norm;
        }
        NchgTable { lo, mode, log_pmf: logw }
    }
}

/// Log-pmf of a non-central hypergeometric over its support.
#[derive(Debug, Clone)]
pub struct NchgTable {
    lo: u64,
    mode: u64,
    log_pmf: Vec<f64>,
}

impl NchgTable {
    pub fn log_pmf(&self, y: u64) -> f64 {
        if y < self.lo {
            return f64::NEG_INFINITY;
        }
        self.log_pmf.get((y - self.lo) as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn support(&self) -> (u64, u64) {
        (self.lo, self.lo + self.log_pmf.len() as u64 - 1)
    }

    pub fn mean(&self) -> f64 {
        self.log_pmf.iter().enumerate().map(|(i, lp)| (self.lo + i as u64) as f64 * lp.exp()).sum()
    }

    /// Inverts the CDF by chop-down search alternating outward from the mode.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let mut u: f64 = rng.random();
        let m = (self.mode - self.lo) as usize;
        let len = self.log_pmf.len();
        let (mut left, mut right) = (m as isize, m + 1);
        u -= self.log_pmf[m].exp();
        if u <= 0.0 {
            return self.mode;
        }
        left -= 1;
        loop {
            let mut progressed = false;
            if right < len {
                u -= self.log_pmf[right].exp();
                if u <= 0.0 {
                    return self.lo + right as u64;
                }
                right += 1;
                progressed = true;
            }
            if left >= 0 {
                u -= self.log_pmf[left as usize].exp();
                if u <= 0.0 {
                    return self.lo + left as u64;
                }
                left -= 1;
                progressed = true;
            }
            if !progressed {
                // rounding left a sliver of mass; give it to the mode
                return self.mode;
            }
        }
    }
}

/// Log-pmf of Fisher's non-central hypergeometric at `y`; `-inf` off support.
pub fn nchg_logpmf(y: u64, params: &NchgParams) -> f64 {
    let (lo, hi) = params.support();
    if y < lo || y > hi {
        return f64::NEG_INFINITY;
    }
    params.log_pmf_table().log_pmf(y)
}

/// Central hypergeometric log-pmf; the `phi = 1` case of [`nchg_logpmf`].
pub fn hypergeometric_logpmf(y: u64, m1: u64, m2: u64, n: u64) -> Result<f64> {
    Ok(nchg_logpmf(y, &NchgParams::new(m1, m2, n, 1.0)?))
}

pub fn nchg_sample<R: Rng + ?Sized>(params: &NchgParams, rng: &mut R) -> Result<u64> {
    let p = NchgParams::new(params.m1, params.m2, params.n, params.phi)?;
    Ok(p.log_pmf_table().sample(rng))
}

/// Success probability of the binomial approximation, `p phi / (1 - p + p phi)`.
pub fn biased_success_prob(p: f64, phi: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("rate must lie in (0, 1), got {p}")));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("odds ratio must be positive, got {phi}")));
    }
    Ok(p * phi / (1.0 - p + p * phi))
}

/// Binomial log-pmf with success probability given on the logit scale.
pub fn binomial_logpmf_logit(y: u64, n: u64, logit_q: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    // ln q = -softplus(-x), ln(1-q) = -softplus(x)
    ln_binomial(n, y) - (y as f64) * softplus(-logit_q) - ((n - y) as f64) * softplus(logit_q)
}

pub fn binomial_logpmf(y: u64, n: u64, q: f64) -> f64 {
    if y > n || !(0.0..=1.0).contains(&q) {
        return f64::NEG_INFINITY;
    }
    let mut lp = ln_binomial(n, y);
    if y > 0 {
        lp += y as f64 * q.ln();
    }
    if y < n {
        lp += (n - y) as f64 * (-q).ln_1p();
    }
    lp
}
