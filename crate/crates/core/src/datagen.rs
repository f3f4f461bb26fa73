//! Synthetic truths and survey panels.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dists::{inv_logit, nchg_sample, NchgParams};
use crate::error::{Error, Result};
use crate::likelihood::log_phi;
use crate::model::{BiasKind, BiasModelSpec, BiasParams, LatentState, ModelSpec, PriorSpec, SurveyPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorRegime {
    #[default]
    Default,
    Narrowed,
}

impl PriorRegime {
    pub fn priors(self) -> PriorSpec {
        match self {
            PriorRegime::Default => PriorSpec::default(),
            PriorRegime::Narrowed => PriorSpec::narrowed(),
        }
    }
}

/// What to simulate. `sample_sizes[k][t] == 0` means survey `k` is not run
/// at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDesign {
    pub population: u64,
    pub time_points: usize,
    pub labels: Vec<String>,
    pub sample_sizes: Vec<Vec<u64>>,
    pub bias: Vec<BiasKind>,
    #[serde(default)]
    pub regime: PriorRegime,
    #[serde(default)]
    pub monotone_walk: bool,
    #[serde(default)]
    pub truth_seed: u64,
}

impl GenDesign {
    /// One anchor of size `anchor_n` followed by one survey of size
    /// `biased_n` per entry of `biased`, all run at every time point.
    pub fn standard(population: u64, time_points: usize, anchor_n: u64, biased_n: u64, biased: &[BiasKind]) -> Self {
        let mut bias = vec![BiasKind::Known];
        bias.extend_from_slice(biased);
        let sample_sizes = bias
            .iter()
            .map(|&b| vec![if b == BiasKind::Known { anchor_n } else { biased_n }; time_points])
            .collect();
        Self {
            population,
            time_points,
            labels: (1..=bias.len()).map(|k| format!("survey{k}")).collect(),
            sample_sizes,
            bias,
            regime: PriorRegime::Narrowed,
            monotone_walk: false,
            truth_seed: 0,
        }
    }

    pub fn n_surveys(&self) -> usize {
        self.bias.len()
    }

    pub fn check(&self) -> Result<()> {
        let k = self.bias.len();
        if k == 0 || self.time_points == 0 {
            return Err(Error::Data("design needs at least one survey and one time point".into()));
        }
        if self.labels.len() != k || self.sample_sizes.len() != k {
            return Err(Error::Shape(format!(
                "design has {k} bias kinds, {} labels and {} sample-size rows",
                self.labels.len(),
                self.sample_sizes.len()
            )));
        }
        for (i, row) in self.sample_sizes.iter().enumerate() {
            if row.len() != self.time_points {
                return Err(Error::Shape(format!("sample sizes of survey {} have {} entries", i + 1, row.len())));
            }
            if let Some(n) = row.iter().find(|&&n| n > self.population) {
                return Err(Error::Domain(format!("sample size {n} exceeds population {}", self.population)));
            }
        }
        if !self.bias.contains(&BiasKind::Known) {
            return Err(Error::Shape("design needs an anchor survey (kind=known)".into()));
        }
        Ok(())
    }

    /// Model specification matching the generating process.
    pub fn model_spec(&self) -> ModelSpec {
        let bias = self.bias.iter().map(|&b| BiasModelSpec::of(b)).collect();
        ModelSpec::new(bias).with_priors(self.regime.priors()).monotone(self.monotone_walk)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).expect("finite positive variance").sample(rng)
}

fn half_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> f64 {
    normal(rng, 0.0, var).abs()
}

/// Draws a complete truth from the priors of the design's regime.
pub fn draw_parameters<R: Rng + ?Sized>(design: &GenDesign, rng: &mut R) -> LatentState {
    let pr = design.regime.priors();
    let t_len = design.time_points;
    let sigma_sq = half_normal(rng, pr.eta0_sq);
    let mut theta = Vec::with_capacity(t_len);
    theta.push(normal(rng, pr.nu0, pr.theta0_var));
    for t in 1..t_len {
        let step = if design.monotone_walk { half_normal(rng, sigma_sq) } else { normal(rng, 0.0, sigma_sq) };
        theta.push(theta[t - 1] + step);
    }
    let has_walk = design.bias.contains(&BiasKind::Walk);
    let pi_sq = has_walk.then(|| half_normal(rng, pr.pi_sq_scale));
    let gamma = design
        .bias
        .iter()
        .map(|b| match b {
            BiasKind::Known => BiasParams::Known,
            BiasKind::Constant => BiasParams::Constant(normal(rng, 0.0, pr.gamma0_var)),
            BiasKind::Linear => BiasParams::Linear {
                intercept: normal(rng, 0.0, pr.gamma0_var),
                slope: normal(rng, 0.0, pr.gamma1_var),
            },
            BiasKind::Walk => {
                let pi_sq = pi_sq.expect("drawn above");
                let mut g = vec![normal(rng, 0.0, pr.gamma0_var)];
                for t in 1..t_len {
                    let next = g[t - 1] + normal(rng, 0.0, pi_sq);
                    g.push(next);
                }
                BiasParams::Walk(g)
            }
        })
        .collect();
    LatentState { theta, sigma_sq, gamma, pi_sq }
}

/// A generated panel with the finite-population quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub panel: SurveyPanel,
    /// Number of positives `P_t` in the population.
    pub positives: Vec<u64>,
    /// `phi[k][t]` used to draw each cell.
    pub phi: Vec<Vec<f64>>,
}

/// Draws `P_t ~ Binomial(N, inv_logit(theta_t))` and then every planned cell
/// from the exact non-central hypergeometric.
pub fn generate_panel<R: Rng + ?Sized>(truth: &LatentState, design: &GenDesign, rng: &mut R) -> Result<Generated> {
    design.check()?;
    let spec = design.model_spec();
    truth.check_shape(&spec, design.time_points)?;
    let t_len = design.time_points;
    let big_n = design.population;
    let positives: Vec<u64> = truth
        .theta
        .iter()
        .map(|&th| Binomial::new(big_n, inv_logit(th)).expect("probability in [0, 1]").sample(rng))
        .collect();
    let phi: Vec<Vec<f64>> = (0..design.n_surveys())
        .map(|k| (0..t_len).map(|t| log_phi(&spec, k, &truth.gamma[k], t, t_len).exp()).collect())
        .collect();
    let mut panel = SurveyPanel::new(big_n, design.labels.clone(), t_len);
    for k in 0..design.n_surveys() {
        for t in 0..t_len {
            let n = design.sample_sizes[k][t];
            if n == 0 {
                continue;
            }
            let p = positives[t];
            let params = NchgParams::new(p, big_n - p, n, phi[k][t].clamp(f64::MIN_POSITIVE, f64::MAX))?;
            panel.set(k, t, nchg_sample(&params, rng)?, n);
        }
    }
    Ok(Generated { panel, positives, phi })
}

/// One row of the truth sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub t: usize,
    pub survey: String,
    pub theta: f64,
    pub rate: f64,
    pub positives: u64,
    pub phi: f64,
}

/// Long-format truth: one row per time point and survey.
pub fn truth_rows(truth: &LatentState, generated: &Generated) -> Vec<TruthRow> {
    let mut rows = Vec::new();
    for t in 0..truth.theta.len() {
        for (k, label) in generated.panel.labels().iter().enumerate() {
            rows.push(TruthRow {
                t: t + 1,
                survey: label.clone(),
                theta: truth.theta[t],
                rate: inv_logit(truth.theta[t]),
                positives: generated.positives[t],
                phi: generated.phi[k][t],
            });
        }
    }
    rows
}
