//! Domain types shared across the engine: survey panels, model specifications,
//! latent parameter states and result containers.
//!
//! Time is indexed from 0 internally. A panel with `T` columns has latent
//! states `theta[0..T]`; the first surveyed time point carries the `theta_0`
//! prior directly. Anything user-facing (CSV files, reports) uses 1-based
//! time points.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::SamplerSettings;

/// Rectangular `K x T` grid of survey counts with missingness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyPanel {
    population: u64,
    labels: Vec<String>,
    time_points: usize,
    y: Vec<Vec<Option<u64>>>,
    n: Vec<Vec<Option<u64>>>,
}

impl SurveyPanel {
    /// An all-missing panel.
    pub fn new(population: u64, labels: Vec<String>, time_points: usize) -> Self {
        let k = labels.len();
        Self {
            population,
            labels,
            time_points,
            y: vec![vec![None; time_points]; k],
            n: vec![vec![None; time_points]; k],
        }
    }

    /// Builds a fully observed panel from `(y, n)` rows.
    pub fn from_counts(population: u64, labels: Vec<String>, counts: &[Vec<(u64, u64)>]) -> Self {
        let t = counts.first().map_or(0, Vec::len);
        let mut panel = Self::new(population, labels, t);
        for (k, row) in counts.iter().enumerate() {
            for (t, &(y, n)) in row.iter().enumerate() {
                panel.set(k, t, y, n);
            }
        }
        panel
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn n_surveys(&self) -> usize {
        self.labels.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_points
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn survey_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn set(&mut self, k: usize, t: usize, y: u64, n: u64) {
        self.y[k][t] = Some(y);
        self.n[k][t] = Some(n);
    }

    /// Sets the raw cell contents, including half-missing cells that
    /// [`validate_panel`] will report.
    pub fn set_raw(&mut self, k: usize, t: usize, y: Option<u64>, n: Option<u64>) {
        self.y[k][t] = y;
        self.n[k][t] = n;
    }

    pub fn clear(&mut self, k: usize, t: usize) {
        self.set_raw(k, t, None, None);
    }

    pub fn raw(&self, k: usize, t: usize) -> (Option<u64>, Option<u64>) {
        (self.y[k][t], self.n[k][t])
    }

    /// `(y, n)` when the cell is wholly observed.
    pub fn observed(&self, k: usize, t: usize) -> Option<(u64, u64)> {
        match (self.y[k][t], self.n[k][t]) {
            (Some(y), Some(n)) => Some((y, n)),
            _ => None,
        }
    }

    pub fn n_observed(&self) -> usize {
        (0..self.n_surveys())
            .flat_map(|k| (0..self.time_points).map(move |t| (k, t)))
            .filter(|&(k, t)| self.observed(k, t).is_some())
            .count()
    }

    /// Sub-panel holding only the listed surveys, in the given order.
    pub fn select_surveys(&self, surveys: &[usize]) -> Self {
        Self {
            population: self.population,
            labels: surveys.iter().map(|&k| self.labels[k].clone()).collect(),
            time_points: self.time_points,
            y: surveys.iter().map(|&k| self.y[k].clone()).collect(),
            n: surveys.iter().map(|&k| self.n[k].clone()).collect(),
        }
    }

    /// Sub-panel of the first `time_points` columns.
    pub fn truncate(&self, time_points: usize) -> Self {
        let time_points = time_points.min(self.time_points);
        Self {
            population: self.population,
            labels: self.labels.clone(),
            time_points,
            y: self.y.iter().map(|r| r[..time_points].to_vec()).collect(),
            n: self.n.iter().map(|r| r[..time_points].to_vec()).collect(),
        }
    }

    /// Returns the panel if it passes [`validate_panel`].
    pub fn validated(self) -> Result<Self> {
        let violations = validate_panel(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            let msg = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            Err(Error::InvalidPanel(msg))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationRule {
    NoSurveys,
    NoTimePoints,
    HalfMissing,
    YExceedsN,
    ZeroSampleSize,
    NExceedsPopulation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub survey: Option<usize>,
    pub time: Option<usize>,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.rule {
            ViolationRule::NoSurveys => "panel has no surveys",
            ViolationRule::NoTimePoints => "panel has no time points",
            ViolationRule::HalfMissing => "half-missing cell",
            ViolationRule::YExceedsN => "y exceeds n",
            ViolationRule::ZeroSampleSize => "sample size n is zero",
            ViolationRule::NExceedsPopulation => "n exceeds population size",
        };
        match (self.survey, self.time) {
            // 1-based, matching the CSV formats
            (Some(k), Some(t)) => write!(f, "{what} at ({},{})", k + 1, t + 1),
            _ => f.write_str(what),
        }
    }
}

/// Lists every broken panel invariant; empty iff the panel is valid.
pub fn validate_panel(panel: &SurveyPanel) -> Vec<Violation> {
    let mut out = Vec::new();
    if panel.n_surveys() == 0 {
        out.push(Violation { survey: None, time: None, rule: ViolationRule::NoSurveys });
    }
    if panel.n_times() == 0 {
        out.push(Violation { survey: None, time: None, rule: ViolationRule::NoTimePoints });
    }
    for k in 0..panel.n_surveys() {
        for t in 0..panel.n_times() {
            let at = |rule| Violation { survey: Some(k), time: Some(t), rule };
            match panel.raw(k, t) {
                (None, None) => {}
                (Some(_), None) | (None, Some(_)) => out.push(at(ViolationRule::HalfMissing)),
                (Some(y), Some(n)) => {
                    if n == 0 {
                        out.push(at(ViolationRule::ZeroSampleSize));
                    }
                    if y > n {
                        out.push(at(ViolationRule::YExceedsN));
                    }
                    if n > panel.population() {
                        out.push(at(ViolationRule::NExceedsPopulation));
                    }
                }
            }
        }
    }
    out
}

/// Biased-survey cells with `y = 0` or `y = n`, where the odds ratio is only
/// bounded on one side by the data.
pub fn detect_saturated_cells(panel: &SurveyPanel, spec: &ModelSpec) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 0..panel.n_surveys() {
        if spec.bias.get(k).is_none_or(|b| b.kind == BiasKind::Known) {
            continue;
        }
        for t in 0..panel.n_times() {
            if let Some((y, n)) = panel.observed(k, t) {
                if y == 0 || y == n {
                    out.push((k, t));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Known,
    Constant,
    Linear,
    Walk,
}

impl BiasKind {
    pub const BIASED: [BiasKind; 3] = [BiasKind::Constant, BiasKind::Linear, BiasKind::Walk];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasKind::Known => "known",
            BiasKind::Constant => "constant",
            BiasKind::Linear => "linear",
            BiasKind::Walk => "walk",
        }
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "known" | "anchor" => Ok(BiasKind::Known),
            "constant" => Ok(BiasKind::Constant),
            "linear" => Ok(BiasKind::Linear),
            "walk" | "random-walk" => Ok(BiasKind::Walk),
            other => Err(Error::Parse(format!("unknown bias kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModelSpec {
    pub kind: BiasKind,
    /// Only used with [`BiasKind::Known`]; `None` means `phi = 1` throughout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_phi: Option<Vec<f64>>,
}

impl BiasModelSpec {
    pub fn anchor() -> Self {
        Self { kind: BiasKind::Known, fixed_phi: None }
    }

    pub fn of(kind: BiasKind) -> Self {
        Self { kind, fixed_phi: None }
    }
}

/// Prior hyper-parameters. Every second normal parameter is a variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    /// Variance of the half-normal prior on `sigma_sq`.
    pub eta0_sq: f64,
    /// Prior mean of `theta_0`.
    pub nu0: f64,
    /// Prior variance of `theta_0`.
    #[serde(alias = "Gamma0_sq")]
    pub theta0_var: f64,
    /// Variance of the normal prior on constant `gamma_k`, linear `gamma_k0`
    /// and the walk starting value.
    pub gamma0_var: f64,
    /// Variance of the normal prior on the linear slope `gamma_k1`.
    pub gamma1_var: f64,
    /// Variance of the half-normal prior on `pi_sq`.
    pub pi_sq_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            eta0_sq: 1.0,
            nu0: 0.0,
            theta0_var: 2.0,
            gamma0_var: 1.0,
            gamma1_var: 0.25,
            pi_sq_scale: 1.0,
        }
    }
}

impl PriorSpec {
    /// The narrower priors used to generate simulation-study truths.
    pub fn narrowed() -> Self {
        Self {
            eta0_sq: 0.1,
            nu0: 0.0,
            theta0_var: 1.0,
            gamma0_var: 1.0,
            gamma1_var: 0.01,
            pi_sq_scale: 0.01,
        }
    }

    /// Vaccine-uptake configuration: low initial rate, otherwise defaults.
    pub fn low_initial_rate() -> Self {
        Self { nu0: -2.0, theta0_var: 1.0, ..Self::default() }
    }

    pub fn check(&self) -> Result<()> {
        let vars = [
            ("eta0_sq", self.eta0_sq),
            ("theta0_var", self.theta0_var),
            ("gamma0_var", self.gamma0_var),
            ("gamma1_var", self.gamma1_var),
            ("pi_sq_scale", self.pi_sq_scale),
        ];
        for (name, v) in vars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("prior variance {name} must be positive, got {v}")));
            }
        }
        if !self.nu0.is_finite() {
            return Err(Error::Domain("prior mean nu0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub priors: PriorSpec,
    pub bias: Vec<BiasModelSpec>,
    /// Truncate every `theta` increment below at zero.
    pub monotone_walk: bool,
    /// Use `t - T/2` inside the linear bias model.
    pub center_time: bool,
    /// Exact non-central hypergeometric likelihood instead of the biased binomial.
    pub use_exact_nchg: bool,
}

impl ModelSpec {
    pub fn new(bias: Vec<BiasModelSpec>) -> Self {
        Self {
            priors: PriorSpec::default(),
            bias,
            monotone_walk: false,
            center_time: true,
            use_exact_nchg: false,
        }
    }

    /// First survey is the anchor, the rest share `kind`.
    pub fn anchored(n_surveys: usize, kind: BiasKind) -> Self {
        let bias = (0..n_surveys)
            .map(|k| if k == 0 { BiasModelSpec::anchor() } else { BiasModelSpec::of(kind) })
            .collect();
        Self::new(bias)
    }

    pub fn with_priors(mut self, priors: PriorSpec) -> Self {
        self.priors = priors;
        self
    }

    pub fn monotone(mut self, on: bool) -> Self {
        self.monotone_walk = on;
        self
    }

    pub fn n_surveys(&self) -> usize {
        self.bias.len()
    }

    pub fn has_walk(&self) -> bool {
        self.bias.iter().any(|b| b.kind == BiasKind::Walk)
    }

    pub fn anchors(&self) -> Vec<usize> {
        (0..self.bias.len()).filter(|&k| self.bias[k].kind == BiasKind::Known).collect()
    }

    /// Specification for a sub-panel built with [`SurveyPanel::select_surveys`].
    pub fn restrict(&self, surveys: &[usize]) -> Self {
        Self { bias: surveys.iter().map(|&k| self.bias[k].clone()).collect(), ..self.clone() }
    }

    /// Checks the specification against a panel.
    pub fn check(&self, panel: &SurveyPanel) -> Result<()> {
        self.priors.check()?;
        if self.bias.len() != panel.n_surveys() {
            return Err(Error::Shape(format!(
                "model has {} bias entries, panel has {} surveys",
                self.bias.len(),
                panel.n_surveys()
            )));
        }
        if self.anchors().is_empty() {
            return Err(Error::Shape("at least one survey must have kind=known".into()));
        }
        for (k, b) in self.bias.iter().enumerate() {
            if let Some(phi) = &b.fixed_phi {
                if b.kind != BiasKind::Known {
                    return Err(Error::Shape(format!("fixed_phi given for non-known survey {k}")));
                }
                if phi.len() != panel.n_times() {
                    return Err(Error::Shape(format!(
                        "fixed_phi for survey {k} has {} entries, expected {}",
                        phi.len(),
                        panel.n_times()
                    )));
                }
                if phi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                    return Err(Error::Domain(format!("fixed_phi for survey {k} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Per-survey bias parameters on the log-odds-ratio scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BiasParams {
    Known,
    Constant(f64),
    Linear { intercept: f64, slope: f64 },
    Walk(Vec<f64>),
}

impl BiasParams {
    pub fn zero(kind: BiasKind, time_points: usize) -> Self {
        match kind {
            BiasKind::Known => BiasParams::Known,
            BiasKind::Constant => BiasParams::Constant(0.0),
            BiasKind::Linear => BiasParams::Linear { intercept: 0.0, slope: 0.0 },
            BiasKind::Walk => BiasParams::Walk(vec![0.0; time_points]),
        }
    }

    pub fn kind(&self) -> BiasKind {
        match self {
            BiasParams::Known => BiasKind::Known,
            BiasParams::Constant(_) => BiasKind::Constant,
            BiasParams::Linear { .. } => BiasKind::Linear,
            BiasParams::Walk(_) => BiasKind::Walk,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BiasParams::Known => 0,
            BiasParams::Constant(_) => 1,
            BiasParams::Linear { .. } => 2,
            BiasParams::Walk(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            BiasParams::Known => panic!("known bias has no parameters"),
            BiasParams::Constant(g) => *g,
            BiasParams::Linear { intercept, slope } => [*intercept, *slope][i],
            BiasParams::Walk(g) => g[i],
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        match self {
            BiasParams::Known => panic!("known bias has no parameters"),
            BiasParams::Constant(g) => *g = value,
            BiasParams::Linear { intercept, slope } => {
                if i == 0 {
                    *intercept = value
                } else {
                    *slope = value
                }
            }
            BiasParams::Walk(g) => g[i] = value,
        }
    }
}

/// One full parameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub theta: Vec<f64>,
    pub sigma_sq: f64,
    pub gamma: Vec<BiasParams>,
    /// Walk-jump variance of the bias; present iff some survey uses a walk.
    pub pi_sq: Option<f64>,
}

impl LatentState {
    /// Checks that the state has the shape `spec` implies for `time_points`.
    pub fn check_shape(&self, spec: &ModelSpec, time_points: usize) -> Result<()> {
        if self.theta.len() != time_points {
            return Err(Error::Shape(format!(
                "theta has {} entries, expected {time_points}",
                self.theta.len()
            )));
        }
        if self.gamma.len() != spec.n_surveys() {
            return Err(Error::Shape(format!(
                "state has {} bias blocks, spec has {} surveys",
                self.gamma.len(),
                spec.n_surveys()
            )));
        }
        for (k, (g, b)) in self.gamma.iter().zip(&spec.bias).enumerate() {
            if g.kind() != b.kind {
                return Err(Error::Shape(format!(
                    "survey {k}: state has {} bias, spec says {}",
                    g.kind(),
                    b.kind
                )));
            }
            if let BiasParams::Walk(v) = g {
                if v.len() != time_points {
                    return Err(Error::Shape(format!("survey {k}: walk bias has {} entries", v.len())));
                }
            }
        }
        if spec.has_walk() != self.pi_sq.is_some() {
            return Err(Error::Shape("pi_sq must be present iff some survey uses a walk".into()));
        }
        Ok(())
    }

    /// Value invariants: positive variances, finite values, monotone theta
    /// when requested.
    pub fn satisfies_invariants(&self, spec: &ModelSpec) -> bool {
        let finite = self.theta.iter().all(|x| x.is_finite())
            && self.gamma.iter().all(|g| (0..g.len()).all(|i| g.get(i).is_finite()));
        let variances = self.sigma_sq > 0.0 && self.sigma_sq.is_finite() && self.pi_sq.is_none_or(|p| p > 0.0 && p.is_finite());
        let monotone = !spec.monotone_walk || self.theta.windows(2).all(|w| w[1] >= w[0]);
        finite && variances && monotone
    }

    /// All scalar parameters in the order of [`param_names`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.theta.clone();
        out.push(self.sigma_sq);
        for g in &self.gamma {
            out.extend((0..g.len()).map(|i| g.get(i)));
        }
        out.extend(self.pi_sq);
        out
    }
}

/// Names of the scalar parameters, 1-based in time and survey.
pub fn param_names(spec: &ModelSpec, time_points: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=time_points).map(|t| format!("theta[{t}]")).collect();
    out.push("sigma_sq".into());
    for (k, b) in spec.bias.iter().enumerate() {
        let k = k + 1;
        match b.kind {
            BiasKind::Known => {}
            BiasKind::Constant => out.push(format!("gamma[{k}]")),
            BiasKind::Linear => {
                out.push(format!("gamma0[{k}]"));
                out.push(format!("gamma1[{k}]"));
            }
            BiasKind::Walk => out.extend((1..=time_points).map(|t| format!("gamma[{k},{t}]"))),
        }
    }
    if spec.has_walk() {
        out.push("pi_sq".into());
    }
    out
}

/// Retained sampler output for all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `draws[chain][i]`, post burn-in and thinning.
    pub draws: Vec<Vec<LatentState>>,
    pub settings: SamplerSettings,
    /// Per chain, `(block name, acceptance rate over retained iterations)`.
    pub acceptance_rates: Vec<Vec<(String, f64)>>,
    /// Per chain, proposal scales frozen at the end of burn-in.
    pub frozen_scales: Vec<Vec<f64>>,
    /// Per chain, proposal scales in use after the final iteration.
    pub final_scales: Vec<Vec<f64>>,
}

impl ChainDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_per_chain(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn pooled(&self) -> impl Iterator<Item = &LatentState> {
        self.draws.iter().flatten()
    }

    /// Per-chain series of a scalar function of the state.
    pub fn series<F: Fn(&LatentState) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(&f).collect()).collect()
    }
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Whether `[lower, upper]` intersects `[lo, hi]`; touching counts.
    pub fn intersects(&self, lo: f64, hi: f64) -> bool {
        self.lower <= hi && lo <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// 1-based time point.
    pub t: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl RateRow {
    pub fn interval(&self) -> Interval {
        Interval { median: self.median, lower: self.lower, upper: self.upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub r_hat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiRow {
    /// 1-based survey index.
    pub survey: usize,
    pub label: String,
    /// 1-based time point.
    pub t: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior medians and equal-tailed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub alpha: f64,
    pub rates: Vec<RateRow>,
    pub params: Vec<ParamRow>,
    pub phi: Vec<PhiRow>,
    pub converged: bool,
}

impl SummaryTable {
    pub fn rate_at(&self, t: usize) -> Option<&RateRow> {
        self.rates.iter().find(|r| r.t == t)
    }

    pub fn param(&self, name: &str) -> Option<&ParamRow> {
        self.params.iter().find(|p| p.name == name)
    }
}
