//! Split R-hat and effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::ChainDraws;

/// Per-parameter convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub r_hat: Vec<f64>,
    pub ess: Vec<f64>,
    /// All `r_hat <= 1.1`.
    pub converged: bool,
}

impl Diagnostics {
    pub const R_HAT_THRESHOLD: f64 = 1.1;

    pub fn compute(draws: &ChainDraws, names: Vec<String>) -> Self {
        let flat: Vec<Vec<Vec<f64>>> =
            draws.draws.iter().map(|c| c.iter().map(|s| s.flatten()).collect()).collect();
        let mut r = Vec::with_capacity(names.len());
        let mut e = Vec::with_capacity(names.len());
        for j in 0..names.len() {
            let series: Vec<Vec<f64>> = flat.iter().map(|c| c.iter().map(|v| v[j]).collect()).collect();
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            r.push(r_hat(&refs).unwrap_or(f64::NAN));
            e.push(ess(&refs).unwrap_or(f64::NAN));
        }
        let converged = r.iter().all(|&x| x <= Self::R_HAT_THRESHOLD);
        Self { names, r_hat: r, ess: e, converged }
    }

    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|n| n == name).map(|i| (self.r_hat[i], self.ess[i]))
    }

    pub fn max_r_hat(&self) -> f64 {
        self.r_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Halves every chain, dropping the middle draw of odd-length chains.
fn split(chains: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    if chains.is_empty() {
        return Err(Error::Domain("no chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::Domain(format!("chains need at least 4 draws, got {n}")));
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n];
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    Ok(out)
}

/// Split-chain potential scale reduction factor. Chains are trimmed to the
/// shortest length. Zero within- and between-chain variance gives 1.
pub fn r_hat(chains: &[&[f64]]) -> Result<f64> {
    let halves = split(chains)?;
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let within = halves.iter().map(|c| var(c)).sum::<f64>() / m;
    let between = n * var(&means);
    if within <= 0.0 {
        return Ok(if between <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok((var_plus / within).sqrt())
}

/// Autocovariance at every lag via FFT (biased, divided by `n`).
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size on split chains, using Geyer's initial
/// monotone sequence of paired autocorrelations.
pub fn ess(chains: &[&[f64]]) -> Result<f64> {
    let halves = split(chains)?;
    let m = halves.len() as f64;
    let n = halves[0].len();
    let nf = n as f64;
    let acov: Vec<Vec<f64>> = halves.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let within = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m;
    let between = if halves.len() > 1 { var(&means) } else { 0.0 };
    let var_plus = within * (nf - 1.0) / nf + between;
    if var_plus <= 0.0 {
        return Ok(m * nf);
    }
    let rho = |lag: usize| 1.0 - (within - acov.iter().map(|a| a[lag]).sum::<f64>() / m) / var_plus;

    let mut pair_sums = Vec::new();
    let mut lag = 0;
    while lag + 1 < n {
        let p = rho(lag) + rho(lag + 1);
        if p <= 0.0 {
            break;
        }
        pair_sums.push(p);
        lag += 2;
    }
    for i in 1..pair_sums.len() {
        pair_sums[i] = pair_sums[i].min(pair_sums[i - 1]);
    }
    let tau = (-1.0 + 2.0 * pair_sums.iter().sum::<f64>()).max(1.0 / (m * nf).log10().max(1.0));
    Ok(m * nf / tau)
}
