use super::diagnostics::Diagnostics;
use crate::dists::inv_logit;
use crate::likelihood::log_phi;
use crate::model::{
    param_names, BiasKind, ChainDraws, Interval, ModelSpec, ParamRow, PhiRow, RateRow, SummaryTable,
};

/// Scale on which `theta` rows are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// `inv_logit(theta_t)`, the positive rate.
    Rate,
    /// Raw `theta_t`.
    Natural,
}

/// Linearly interpolated quantile of sorted data (R type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and equal-tailed `1 - alpha` interval.
pub(crate) fn interval(mut values: Vec<f64>, alpha: f64) -> Interval {
    values.sort_by(f64::total_cmp);
    Interval {
        median: quantile(&values, 0.5),
        lower: quantile(&values, alpha / 2.0),
        upper: quantile(&values, 1.0 - alpha / 2.0),
    }
}

/// Posterior medians and equal-tailed intervals for the rate at every time
/// point, every scalar parameter and the odds ratio of every biased survey.
pub fn summarize(
    draws: &ChainDraws,
    diagnostics: &Diagnostics,
    spec: &ModelSpec,
    labels: &[String],
    alpha: f64,
    transform: Transform,
) -> SummaryTable {
    let pooled: Vec<_> = draws.pooled().collect();
    let time_points = pooled.first().map_or(0, |s| s.theta.len());

    let rates = (0..time_points)
        .map(|t| {
            let vals = pooled
                .iter()
                .map(|s| match transform {
                    Transform::Rate => inv_logit(s.theta[t]),
                    Transform::Natural => s.theta[t],
                })
                .collect();
            let iv = interval(vals, alpha);
            RateRow { t: t + 1, median: iv.median, lower: iv.lower, upper: iv.upper }
        })
        .collect();

    let names = param_names(spec, time_points);
    let flat: Vec<Vec<f64>> = pooled.iter().map(|s| s.flatten()).collect();
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let iv = interval(flat.iter().map(|v| v[j]).collect(), alpha);
            let (r_hat, ess) = diagnostics.get(name).unwrap_or((f64::NAN, f64::NAN));
            ParamRow { name: name.clone(), median: iv.median, lower: iv.lower, upper: iv.upper, r_hat, ess }
        })
        .collect();

    let mut phi = Vec::new();
    for (k, b) in spec.bias.iter().enumerate() {
        if b.kind == BiasKind::Known {
            continue;
        }
        for t in 0..time_points {
            let vals =
                pooled.iter().map(|s| log_phi(spec, k, &s.gamma[k], t, time_points).exp()).collect();
            let iv = interval(vals, alpha);
            phi.push(PhiRow {
                survey: k + 1,
                label: labels.get(k).cloned().unwrap_or_default(),
                t: t + 1,
                median: iv.median,
                lower: iv.lower,
                upper: iv.upper,
            });
        }
    }

    SummaryTable { alpha, rates, params, phi, converged: diagnostics.converged }
}
