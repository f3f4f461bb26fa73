//! Joint log-posterior: bias models, random-walk priors, hyper-priors and
//! the observation likelihood.

use crate::dists::{
    binomial_logpmf_logit, half_normal_logpdf, inv_logit, nchg_logpmf, normal_logpdf, NchgParams,
};
use crate::error::{Error, Result};
use crate::model::{BiasParams, LatentState, ModelSpec, SurveyPanel};
use std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityReport {
    pub log_prior: f64,
    pub log_lik: f64,
    pub log_post: f64,
    /// Additive contributions, prior blocks first, in summation order.
    pub per_block: Vec<(String, f64)>,
}

/// Time coordinate used by the linear bias model at 0-based index `t`.
pub fn linear_time(t: usize, time_points: usize, center: bool) -> f64 {
    let pos = (t + 1) as f64;
    if center {
        pos - time_points as f64 / 2.0
    } else {
        pos
    }
}

/// `ln phi` for one survey; callers guarantee the parameter shape.
pub(crate) fn log_phi(spec: &ModelSpec, k: usize, gamma: &BiasParams, t: usize, time_points: usize) -> f64 {
    match gamma {
        BiasParams::Known => spec.bias[k].fixed_phi.as_ref().map_or(0.0, |phi| phi[t].ln()),
        BiasParams::Constant(g) => *g,
        BiasParams::Linear { intercept, slope } => {
            intercept + slope * linear_time(t, time_points, spec.center_time)
        }
        BiasParams::Walk(g) => g[t],
    }
}

/// Odds ratio of survey `k` at 0-based time `t`.
pub fn phi_value(spec: &ModelSpec, state: &LatentState, k: usize, t: usize) -> Result<f64> {
    let time_points = state.theta.len();
    let gamma = state
        .gamma
        .get(k)
        .ok_or_else(|| Error::Shape(format!("state has no bias block for survey {k}")))?;
    let b = spec.bias.get(k).ok_or_else(|| Error::Shape(format!("spec has no survey {k}")))?;
    if gamma.kind() != b.kind {
        return Err(Error::Shape(format!("survey {k}: state has {} bias, spec says {}", gamma.kind(), b.kind)));
    }
    if t >= time_points {
        return Err(Error::Shape(format!("time index {t} out of range")));
    }
    if let BiasParams::Walk(g) = gamma {
        if g.len() != time_points {
            return Err(Error::Shape(format!("survey {k}: walk bias has {} entries", g.len())));
        }
    }
    if let Some(phi) = &b.fixed_phi {
        if phi.len() != time_points {
            return Err(Error::Shape(format!("survey {k}: fixed_phi has {} entries", phi.len())));
        }
    }
    Ok(log_phi(spec, k, gamma, t, time_points).exp())
}

/// One step of the latent walk; truncated below at `prev` when monotone.
pub(crate) fn walk_logpdf(prev: f64, cur: f64, var: f64, monotone: bool) -> f64 {
    if monotone {
        if cur < prev {
            f64::NEG_INFINITY
        } else {
            // the truncation point is the mean, so the kept mass is 1/2
            normal_logpdf(cur, prev, var) + LN_2
        }
    } else {
        normal_logpdf(cur, prev, var)
    }
}

/// Log-likelihood of one observed cell given `theta_t` and `ln phi`.
pub(crate) fn cell_loglik(y: u64, n: u64, theta: f64, log_phi: f64, population: u64, exact: bool) -> f64 {
    if exact {
        let m1 = (inv_logit(theta) * population as f64).round() as u64;
        let m1 = m1.min(population);
        match NchgParams::new(m1, population - m1, n, log_phi.exp()) {
            Ok(p) => nchg_logpmf(y, &p),
            Err(_) => f64::NEG_INFINITY,
        }
    } else {
        // logit of p phi / (1 - p + p phi) is theta + ln phi
        binomial_logpmf_logit(y, n, theta + log_phi)
    }
}

fn prior_blocks(state: &LatentState, spec: &ModelSpec) -> Vec<(String, f64)> {
    let pr = &spec.priors;
    let mut blocks = Vec::new();
    let theta = &state.theta;
    blocks.push(("theta0".to_string(), normal_logpdf(theta[0], pr.nu0, pr.theta0_var)));
    let sigma_ok = state.sigma_sq > 0.0 && state.sigma_sq.is_finite();
    let walk = if sigma_ok {
        theta.windows(2).map(|w| walk_logpdf(w[0], w[1], state.sigma_sq, spec.monotone_walk)).sum()
    } else {
        f64::NEG_INFINITY
    };
    blocks.push(("theta_walk".to_string(), walk));
    blocks.push(("sigma_sq".to_string(), if sigma_ok { half_normal_logpdf(state.sigma_sq, pr.eta0_sq) } else { f64::NEG_INFINITY }));
    let pi_ok = state.pi_sq.is_some_and(|p| p > 0.0 && p.is_finite());
    for (k, g) in state.gamma.iter().enumerate() {
        let lp = match g {
            BiasParams::Known => continue,
            BiasParams::Constant(g) => normal_logpdf(*g, 0.0, pr.gamma0_var),
            BiasParams::Linear { intercept, slope } => {
                normal_logpdf(*intercept, 0.0, pr.gamma0_var) + normal_logpdf(*slope, 0.0, pr.gamma1_var)
            }
            BiasParams::Walk(g) => {
                if pi_ok {
                    let pi_sq = state.pi_sq.unwrap_or(f64::NAN);
                    normal_logpdf(g[0], 0.0, pr.gamma0_var)
                        + g.windows(2).map(|w| normal_logpdf(w[1], w[0], pi_sq)).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        };
        blocks.push((format!("gamma[{}]", k + 1), lp));
    }
    if let Some(pi_sq) = state.pi_sq {
        blocks.push(("pi_sq".to_string(), if pi_ok { half_normal_logpdf(pi_sq, pr.pi_sq_scale) } else { f64::NEG_INFINITY }));
    }
    blocks
}

fn lik_blocks(state: &LatentState, panel: &SurveyPanel, spec: &ModelSpec) -> Vec<(String, f64)> {
    let time_points = panel.n_times();
    (0..panel.n_surveys())
        .map(|k| {
            let mut s = 0.0;
            for t in 0..time_points {
                if let Some((y, n)) = panel.observed(k, t) {
                    let lphi = log_phi(spec, k, &state.gamma[k], t, time_points);
                    s += cell_loglik(y, n, state.theta[t], lphi, panel.population(), spec.use_exact_nchg);
                }
            }
            (format!("lik[{}]", k + 1), s)
        })
        .collect()
}

fn check_state(state: &LatentState, spec: &ModelSpec) -> Result<()> {
    if state.theta.is_empty() {
        return Err(Error::Shape("state has no time points".into()));
    }
    state.check_shape(spec, state.theta.len())?;
    for (k, b) in spec.bias.iter().enumerate() {
        if let Some(phi) = &b.fixed_phi {
            if phi.len() != state.theta.len() {
                return Err(Error::Shape(format!("survey {k}: fixed_phi has {} entries", phi.len())));
            }
        }
    }
    Ok(())
}

/// Sum of all prior terms; `-inf` for states outside the support.
pub fn log_prior(state: &LatentState, spec: &ModelSpec) -> Result<f64> {
    check_state(state, spec)?;
    Ok(prior_blocks(state, spec).iter().map(|(_, v)| v).sum())
}

/// Observation log-likelihood; missing cells contribute nothing.
pub fn log_likelihood(state: &LatentState, panel: &SurveyPanel, spec: &ModelSpec) -> Result<f64> {
    check_state(state, spec)?;
    spec.check(panel)?;
    if state.theta.len() != panel.n_times() {
        return Err(Error::Shape(format!("state has {} time points, panel {}", state.theta.len(), panel.n_times())));
    }
    Ok(lik_blocks(state, panel, spec).iter().map(|(_, v)| v).sum())
}

pub fn log_posterior(state: &LatentState, panel: &SurveyPanel, spec: &ModelSpec) -> Result<LogDensityReport> {
    check_state(state, spec)?;
    spec.check(panel)?;
    if state.theta.len() != panel.n_times() {
        return Err(Error::Shape(format!("state has {} time points, panel {}", state.theta.len(), panel.n_times())));
    }
    let prior = prior_blocks(state, spec);
    let lik = lik_blocks(state, panel, spec);
    let log_prior: f64 = prior.iter().map(|(_, v)| v).sum();
    let log_lik: f64 = lik.iter().map(|(_, v)| v).sum();
    let mut per_block = prior;
    per_block.extend(lik);
    Ok(LogDensityReport { log_prior, log_lik, log_post: log_prior + log_lik, per_block })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::logit;
    use crate::io::example_panel;
    use crate::model::{BiasKind, BiasModelSpec};
    use proptest::prelude::*;

    fn linear_state(t: usize, intercept: f64, slope: f64) -> LatentState {
        LatentState {
            theta: vec![-2.0; t],
            sigma_sq: 0.3,
            gamma: vec![BiasParams::Known, BiasParams::Linear { intercept, slope }],
            pi_sq: None,
        }
    }

    #[test]
    fn phi_examples() {
        let spec = ModelSpec::anchored(2, BiasKind::Linear);
        let s = linear_state(10, 0.0, 0.1);
        for t in 0..10 {
            assert_eq!(phi_value(&spec, &s, 0, t).unwrap(), 1.0);
        }
        // 1-based position 5 of 10 is the centre
        assert_eq!(phi_value(&spec, &s, 1, 4).unwrap(), 1.0);
        let cspec = ModelSpec::anchored(2, BiasKind::Constant);
        let c = LatentState { gamma: vec![BiasParams::Known, BiasParams::Constant(2f64.ln())], ..s.clone() };
        for t in 0..10 {
            assert!((phi_value(&cspec, &c, 1, t).unwrap() - 2.0).abs() < 1e-15);
        }
        assert!(phi_value(&cspec, &s, 1, 0).is_err());
    }

    #[test]
    fn fixed_phi_for_known_survey() {
        let mut spec = ModelSpec::anchored(2, BiasKind::Constant);
        spec.bias[0].fixed_phi = Some(vec![0.5, 2.0]);
        let s = LatentState {
            theta: vec![0.0, 0.0],
            sigma_sq: 1.0,
            gamma: vec![BiasParams::Known, BiasParams::Constant(0.0)],
            pi_sq: None,
        };
        assert_eq!(phi_value(&spec, &s, 0, 1).unwrap(), 2.0);
    }

    #[test]
    fn single_point_prior() {
        let spec = ModelSpec::new(vec![BiasModelSpec::anchor()]);
        let s = LatentState { theta: vec![0.0], sigma_sq: 0.5, gamma: vec![BiasParams::Known], pi_sq: None };
        let expect = -0.5 * (4.0 * std::f64::consts::PI).ln() + half_normal_logpdf(0.5, 1.0);
        assert!((log_prior(&s, &spec).unwrap() - expect).abs() < 1e-12);
        assert!((-0.5 * (4.0 * std::f64::consts::PI).ln() + 1.2655).abs() < 1e-4);
    }

    #[test]
    fn monotone_violation_is_rejected() {
        let spec = ModelSpec::new(vec![BiasModelSpec::anchor()]).monotone(true);
        let s = LatentState { theta: vec![0.0, -0.1], sigma_sq: 0.5, gamma: vec![BiasParams::Known], pi_sq: None };
        assert_eq!(log_prior(&s, &spec).unwrap(), f64::NEG_INFINITY);
        let ok = LatentState { theta: vec![0.0, 0.1], ..s };
        assert!(log_prior(&ok, &spec).unwrap().is_finite());
    }

    #[test]
    fn monotone_step_is_renormalized_half_normal() {
        // integrates to one over [prev, inf)
        let f = |x: f64| walk_logpdf(0.3, x, 0.2, true).exp();
        let h = 1e-4;
        let total: f64 = (0..100_000).map(|i| f(0.3 + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blocks_sum_bit_exactly() {
        let panel = example_panel();
        let spec = ModelSpec::anchored(3, BiasKind::Walk);
        let s = LatentState {
            theta: (0..10).map(|t| -2.0 + 0.05 * t as f64).collect(),
            sigma_sq: 0.2,
            gamma: vec![BiasParams::Known, BiasParams::Walk(vec![-0.5; 10]), BiasParams::Walk(vec![0.7; 10])],
            pi_sq: Some(0.05),
        };
        let r = log_posterior(&s, &panel, &spec).unwrap();
        let n_prior = r.per_block.len() - 3;
        let prior: f64 = r.per_block[..n_prior].iter().map(|(_, v)| v).sum();
        let lik: f64 = r.per_block[n_prior..].iter().map(|(_, v)| v).sum();
        assert_eq!(prior, r.log_prior);
        assert_eq!(lik, r.log_lik);
        assert_eq!(r.log_post, r.log_prior + r.log_lik);
        assert_eq!(r.log_prior, log_prior(&s, &spec).unwrap());
        assert_eq!(r.log_lik, log_likelihood(&s, &panel, &spec).unwrap());
        assert!(r.log_post.is_finite());
    }

    #[test]
    fn empty_panel_has_no_likelihood() {
        let panel = SurveyPanel::new(1000, vec!["a".into(), "b".into()], 4);
        let spec = ModelSpec::anchored(2, BiasKind::Constant);
        let s = LatentState {
            theta: vec![0.1; 4],
            sigma_sq: 1.0,
            gamma: vec![BiasParams::Known, BiasParams::Constant(0.3)],
            pi_sq: None,
        };
        assert_eq!(log_likelihood(&s, &panel, &spec).unwrap(), 0.0);
        let r = log_posterior(&s, &panel, &spec).unwrap();
        assert_eq!(r.log_post, r.log_prior);
    }

    #[test]
    fn single_cell_binomial() {
        let mut panel = SurveyPanel::new(10_000, vec!["a".into()], 1);
        panel.set(0, 0, 9, 100);
        let spec = ModelSpec::new(vec![BiasModelSpec::anchor()]);
        let s = LatentState { theta: vec![logit(0.09).unwrap()], sigma_sq: 1.0, gamma: vec![BiasParams::Known], pi_sq: None };
        // direct oracle: C(100,9) 0.09^9 0.91^91
        let oracle = statrs::function::factorial::binomial(100, 9) * 0.09f64.powi(9) * 0.91f64.powi(91);
        let ll = log_likelihood(&s, &panel, &spec).unwrap();
        assert!((ll - oracle.ln()).abs() < 1e-10);
        assert!((oracle - 0.1381).abs() < 1e-4);
    }

    #[test]
    fn unbiased_spec_reduces_to_plain_binomial() {
        let panel = example_panel();
        let mut spec = ModelSpec::anchored(3, BiasKind::Constant);
        for b in &mut spec.bias {
            *b = BiasModelSpec::anchor();
        }
        let theta: Vec<f64> = (0..10).map(|t| -2.2 + 0.03 * t as f64).collect();
        let s = LatentState { theta: theta.clone(), sigma_sq: 1.0, gamma: vec![BiasParams::Known; 3], pi_sq: None };
        let mut direct = 0.0;
        for k in 0..3 {
            for t in 0..10 {
                let (y, n) = panel.observed(k, t).unwrap();
                direct += crate::dists::binomial_logpmf(y, n, inv_logit(theta[t]));
            }
        }
        assert!((log_likelihood(&s, &panel, &spec).unwrap() - direct).abs() < 1e-8);
    }

    #[test]
    fn exact_and_approximate_agree_at_large_population() {
        let mut panel = SurveyPanel::new(10_000_000, vec!["a".into(), "b".into()], 1);
        panel.set(0, 0, 30, 100);
        panel.set(1, 0, 520, 1000);
        let mut spec = ModelSpec::anchored(2, BiasKind::Constant);
        let s = LatentState {
            theta: vec![logit(0.31).unwrap()],
            sigma_sq: 1.0,
            gamma: vec![BiasParams::Known, BiasParams::Constant(0.9)],
            pi_sq: None,
        };
        let approx = log_likelihood(&s, &panel, &spec).unwrap();
        spec.use_exact_nchg = true;
        let exact = log_likelihood(&s, &panel, &spec).unwrap();
        assert!((approx - exact).abs() < 0.1, "{approx} vs {exact}");
    }

    proptest! {
        #[test]
        fn centered_linear_mirror(g0 in -2.0f64..2.0, g1 in -0.5f64..0.5, half in 1usize..12, t in 0usize..24) {
            let time_points = 2 * half;
            prop_assume!(t + 1 < time_points);
            let spec = ModelSpec::anchored(2, BiasKind::Linear);
            let s = linear_state(time_points, g0, g1);
            // mirror of 1-based position p about T/2 is T - p
            let pos = t + 1;
            let mirror = time_points - pos - 1;
            let prod = phi_value(&spec, &s, 1, t).unwrap() * phi_value(&spec, &s, 1, mirror).unwrap();
            prop_assert!((prod / (2.0 * g0).exp() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exact_vs_approx_per_cell(p in 0.05f64..0.95, lphi in -1.5f64..1.5, n in 1u64..1000, frac in 0.0f64..1.0) {
            let theta = logit(p).unwrap();
            let q = crate::dists::biased_success_prob(p, lphi.exp()).unwrap();
            // stay near the bulk; far tails of both are tiny anyway
            let y = ((n as f64 * q) + (frac - 0.5) * 2.0 * (n as f64 * q * (1.0 - q)).sqrt()).round().clamp(0.0, n as f64) as u64;
            let a = cell_loglik(y, n, theta, lphi, 10_000_000, false);
            let e = cell_loglik(y, n, theta, lphi, 10_000_000, true);
            prop_assert!((a - e).abs() < 0.05, "{} vs {}", a, e);
        }

        #[test]
        fn posterior_finite_for_valid_states(thetas in proptest::collection::vec(-4.0f64..4.0, 10), s2 in 0.001f64..5.0, g in -3.0f64..3.0) {
            let panel = example_panel();
            let spec = ModelSpec::anchored(3, BiasKind::Constant);
            let s = LatentState { theta: thetas, sigma_sq: s2, gamma: vec![BiasParams::Known, BiasParams::Constant(g), BiasParams::Constant(-g)], pi_sq: None };
            let r = log_posterior(&s, &panel, &spec).unwrap();
            prop_assert!(r.log_post.is_finite());
        }
    }
}
