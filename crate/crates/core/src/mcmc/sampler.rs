use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::diagnostics::Diagnostics;
use super::SamplerSettings;
use crate::dists::{half_normal_logpdf, logit, normal_logpdf, softplus};
use crate::error::{Error, Result};
use crate::likelihood::{cell_loglik, log_phi, log_posterior, walk_logpdf};
use crate::model::{
    param_names, validate_panel, BiasKind, BiasParams, ChainDraws, LatentState, ModelSpec, SurveyPanel,
};
use crate::seed::{derive_seed, rng_from};

/// Median of the standard half-normal.
const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;
const INIT_JITTER_SD: f64 = 0.05;

/// Output of a single chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub draws: Vec<LatentState>,
    /// `(block, acceptance rate)` over all post burn-in iterations.
    pub acceptance: Vec<(String, f64)>,
    /// Proposal scales at the end of burn-in, one per move of a sweep.
    pub frozen_scales: Vec<f64>,
    /// Proposal scales after the last iteration, one per move.
    pub final_scales: Vec<f64>,
}

/// Multi-chain output together with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub draws: ChainDraws,
    pub diagnostics: Diagnostics,
}

/// Observation lookup and conditional log densities for one panel.
struct Target<'a> {
    spec: &'a ModelSpec,
    population: u64,
    time_points: usize,
    obs: Vec<Vec<Option<(u64, u64)>>>,
    by_time: Vec<Vec<(usize, u64, u64)>>,
}

impl<'a> Target<'a> {
    fn new(panel: &SurveyPanel, spec: &'a ModelSpec) -> Self {
        let time_points = panel.n_times();
        let obs: Vec<Vec<_>> = (0..panel.n_surveys())
            .map(|k| (0..time_points).map(|t| panel.observed(k, t)).collect())
            .collect();
        let by_time = (0..time_points)
            .map(|t| {
                (0..panel.n_surveys())
                    .filter_map(|k| obs[k][t].map(|(y, n)| (k, y, n)))
                    .collect()
            })
            .collect();
        Self { spec, population: panel.population(), time_points, obs, by_time }
    }

    /// Cell log-likelihood up to terms that do not depend on parameters.
    fn cell(&self, y: u64, n: u64, theta: f64, lphi: f64) -> f64 {
        if self.spec.use_exact_nchg {
            cell_loglik(y, n, theta, lphi, self.population, true)
        } else {
            let x = theta + lphi;
            -(y as f64) * softplus(-x) - ((n - y) as f64) * softplus(x)
        }
    }

    fn theta_local(&self, s: &LatentState, t: usize) -> f64 {
        let pr = &self.spec.priors;
        let mono = self.spec.monotone_walk;
        let mut lp = if t == 0 {
            normal_logpdf(s.theta[0], pr.nu0, pr.theta0_var)
        } else {
            walk_logpdf(s.theta[t - 1], s.theta[t], s.sigma_sq, mono)
        };
        if t + 1 < self.time_points {
            lp += walk_logpdf(s.theta[t], s.theta[t + 1], s.sigma_sq, mono);
        }
        for &(k, y, n) in &self.by_time[t] {
            let lphi = log_phi(self.spec, k, &s.gamma[k], t, self.time_points);
            lp += self.cell(y, n, s.theta[t], lphi);
        }
        lp
    }

    fn sigma_local(&self, s: &LatentState) -> f64 {
        let mono = self.spec.monotone_walk;
        let walk: f64 = s.theta.windows(2).map(|w| walk_logpdf(w[0], w[1], s.sigma_sq, mono)).sum();
        walk + half_normal_logpdf(s.sigma_sq, self.spec.priors.eta0_sq)
    }

    fn gamma_local(&self, s: &LatentState, k: usize, i: usize) -> f64 {
        let pr = &self.spec.priors;
        let tp = self.time_points;
        let survey_cells = |lp: f64| {
            let mut lp = lp;
            for t in 0..tp {
                if let Some((y, n)) = self.obs[k][t] {
                    lp += self.cell(y, n, s.theta[t], log_phi(self.spec, k, &s.gamma[k], t, tp));
                }
            }
            lp
        };
        match &s.gamma[k] {
            BiasParams::Known => 0.0,
            BiasParams::Constant(g) => survey_cells(normal_logpdf(*g, 0.0, pr.gamma0_var)),
            BiasParams::Linear { intercept, slope } => survey_cells(
                normal_logpdf(*intercept, 0.0, pr.gamma0_var) + normal_logpdf(*slope, 0.0, pr.gamma1_var),
            ),
            BiasParams::Walk(g) => {
                let pi_sq = s.pi_sq.unwrap_or(f64::NAN);
                let mut lp = if i == 0 {
                    normal_logpdf(g[0], 0.0, pr.gamma0_var)
                } else {
                    normal_logpdf(g[i], g[i - 1], pi_sq)
                };
                if i + 1 < tp {
                    lp += normal_logpdf(g[i + 1], g[i], pi_sq);
                }
                if let Some((y, n)) = self.obs[k][i] {
                    lp += self.cell(y, n, s.theta[i], g[i]);
                }
                lp
            }
        }
    }

    /// Terms that change when every `theta_t` moves by `d` and every bias
    /// level by `-d`.
    fn level_local(&self, s: &LatentState) -> f64 {
        let pr = &self.spec.priors;
        let tp = self.time_points;
        let mut lp = normal_logpdf(s.theta[0], pr.nu0, pr.theta0_var);
        for (k, g) in s.gamma.iter().enumerate() {
            lp += match g {
                BiasParams::Known => 0.0,
                BiasParams::Constant(g) => normal_logpdf(*g, 0.0, pr.gamma0_var),
                BiasParams::Linear { intercept, .. } => normal_logpdf(*intercept, 0.0, pr.gamma0_var),
                BiasParams::Walk(g) => normal_logpdf(g[0], 0.0, pr.gamma0_var),
            };
            for t in 0..tp {
                if let Some((y, n)) = self.obs[k][t] {
                    lp += self.cell(y, n, s.theta[t], log_phi(self.spec, k, g, t, tp));
                }
            }
        }
        lp
    }

    /// Terms that change when `theta_t` moves by `d` and every walk bias at
    /// `t` by `-d`.
    fn ridge_local(&self, s: &LatentState, t: usize) -> f64 {
        let pr = &self.spec.priors;
        let tp = self.time_points;
        let mono = self.spec.monotone_walk;
        let mut lp = if t == 0 {
            normal_logpdf(s.theta[0], pr.nu0, pr.theta0_var)
        } else {
            walk_logpdf(s.theta[t - 1], s.theta[t], s.sigma_sq, mono)
        };
        if t + 1 < tp {
            lp += walk_logpdf(s.theta[t], s.theta[t + 1], s.sigma_sq, mono);
        }
        let pi_sq = s.pi_sq.unwrap_or(f64::NAN);
        for g in &s.gamma {
            if let BiasParams::Walk(g) = g {
                lp += if t == 0 { normal_logpdf(g[0], 0.0, pr.gamma0_var) } else { normal_logpdf(g[t], g[t - 1], pi_sq) };
                if t + 1 < tp {
                    lp += normal_logpdf(g[t + 1], g[t], pi_sq);
                }
            }
        }
        for &(k, y, n) in &self.by_time[t] {
            lp += self.cell(y, n, s.theta[t], log_phi(self.spec, k, &s.gamma[k], t, tp));
        }
        lp
    }

    fn pi_local(&self, s: &LatentState) -> f64 {
        let pi_sq = s.pi_sq.unwrap_or(f64::NAN);
        let mut lp = half_normal_logpdf(pi_sq, self.spec.priors.pi_sq_scale);
        for g in &s.gamma {
            if let BiasParams::Walk(g) = g {
                lp += g.windows(2).map(|w| normal_logpdf(w[1], w[0], pi_sq)).sum::<f64>();
            }
        }
        lp
    }
}

/// Moves of one sweep: scalar parameters in the order of
/// [`LatentState::flatten`], then the joint moves along the
/// `theta + gamma` ridge that biased surveys pin down.
#[derive(Debug, Clone)]
enum Slot {
    Theta(usize),
    Sigma,
    Gamma(usize, usize),
    Pi,
    /// All `theta_t` up, every bias level down by the same amount.
    Level,
    /// `theta_t` up, every walk bias at `t` down by the same amount.
    Ridge(usize),
}

struct Layout {
    slots: Vec<Slot>,
    /// Block index of every slot, into `blocks`.
    block_of: Vec<usize>,
    blocks: Vec<String>,
}

impl Layout {
    fn new(spec: &ModelSpec, time_points: usize) -> Self {
        let mut slots = Vec::new();
        let mut block_of = Vec::new();
        let mut blocks = vec!["theta".to_string(), "sigma_sq".to_string()];
        for t in 0..time_points {
            slots.push(Slot::Theta(t));
            block_of.push(0);
        }
        slots.push(Slot::Sigma);
        block_of.push(1);
        for (k, b) in spec.bias.iter().enumerate() {
            let len = match b.kind {
                BiasKind::Known => continue,
                BiasKind::Constant => 1,
                BiasKind::Linear => 2,
                BiasKind::Walk => time_points,
            };
            blocks.push(format!("gamma[{}]", k + 1));
            for i in 0..len {
                slots.push(Slot::Gamma(k, i));
                block_of.push(blocks.len() - 1);
            }
        }
        if spec.has_walk() {
            blocks.push("pi_sq".to_string());
            slots.push(Slot::Pi);
            block_of.push(blocks.len() - 1);
        }
        if spec.bias.iter().any(|b| b.kind != BiasKind::Known) {
            blocks.push("level".to_string());
            slots.push(Slot::Level);
            block_of.push(blocks.len() - 1);
        }
        if spec.has_walk() {
            blocks.push("ridge".to_string());
            for t in 0..time_points {
                slots.push(Slot::Ridge(t));
                block_of.push(blocks.len() - 1);
            }
        }
        Self { slots, block_of, blocks }
    }

    fn initial_log_scales(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Theta(_) | Slot::Gamma(..) | Slot::Level | Slot::Ridge(_) => 0.1f64.ln(),
                Slot::Sigma | Slot::Pi => 0.5f64.ln(),
            })
            .collect()
    }
}

/// Folds `x` back into `[lo, hi]` by reflection at the bounds.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (false, false) => x,
        (true, false) => {
            if x < lo {
                2.0 * lo - x
            } else {
                x
            }
        }
        (false, true) => {
            if x > hi {
                2.0 * hi - x
            } else {
                x
            }
        }
        (true, true) => {
            let w = hi - lo;
            if w <= 0.0 {
                return lo;
            }
            let y = (x - lo).rem_euclid(2.0 * w);
            lo + if y > w { 2.0 * w - y } else { y }
        }
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    // NaN compares false and is rejected
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn shift_level(state: &mut LatentState, d: f64) {
    for th in &mut state.theta {
        *th += d;
    }
    for g in &mut state.gamma {
        match g {
            BiasParams::Known => {}
            BiasParams::Constant(v) => *v -= d,
            BiasParams::Linear { intercept, .. } => *intercept -= d,
            BiasParams::Walk(v) => v.iter_mut().for_each(|x| *x -= d),
        }
    }
}

/// Moves every walk bias at `t` by `-d`; `theta_t` is set by the caller.
fn shift_ridge(state: &mut LatentState, t: usize, d: f64) {
    for g in &mut state.gamma {
        if let BiasParams::Walk(v) = g {
            v[t] -= d;
        }
    }
}

/// One Metropolis-within-Gibbs sweep over every move; sets `accepted[i]`.
fn sweep<R: Rng + ?Sized>(
    target: &Target<'_>,
    layout: &Layout,
    state: &mut LatentState,
    log_scales: &[f64],
    accepted: &mut [bool],
    rng: &mut R,
) {
    let tp = target.time_points;
    for (i, slot) in layout.slots.iter().enumerate() {
        let scale = log_scales[i].exp();
        let z: f64 = rng.sample(StandardNormal);
        accepted[i] = match *slot {
            Slot::Theta(t) => {
                let old = state.theta[t];
                let before = target.theta_local(state, t);
                let mut new = old + scale * z;
                if target.spec.monotone_walk {
                    let lo = if t > 0 { state.theta[t - 1] } else { f64::NEG_INFINITY };
                    let hi = if t + 1 < tp { state.theta[t + 1] } else { f64::INFINITY };
                    new = reflect(new, lo, hi);
                }
                state.theta[t] = new;
                let after = target.theta_local(state, t);
                let ok = accept(after - before, rng);
                if !ok {
                    state.theta[t] = old;
                }
                ok
            }
            Slot::Sigma => {
                let old = state.sigma_sq;
                let before = target.sigma_local(state);
                let new = old * (scale * z).exp();
                state.sigma_sq = new;
                let after = target.sigma_local(state);
                // log-scale random walk: Jacobian new/old
                let ok = accept(after - before + (new / old).ln(), rng);
                if !ok {
                    state.sigma_sq = old;
                }
                ok
            }
            Slot::Gamma(k, j) => {
                let old = state.gamma[k].get(j);
                let before = target.gamma_local(state, k, j);
                state.gamma[k].set(j, old + scale * z);
                let after = target.gamma_local(state, k, j);
                let ok = accept(after - before, rng);
                if !ok {
                    state.gamma[k].set(j, old);
                }
                ok
            }
            Slot::Pi => {
                let old = state.pi_sq.unwrap_or(f64::NAN);
                let before = target.pi_local(state);
                let new = old * (scale * z).exp();
                state.pi_sq = Some(new);
                let after = target.pi_local(state);
                let ok = accept(after - before + (new / old).ln(), rng);
                if !ok {
                    state.pi_sq = Some(old);
                }
                ok
            }
            Slot::Level => {
                let before = target.level_local(state);
                let saved = (state.theta.clone(), state.gamma.clone());
                shift_level(state, scale * z);
                let after = target.level_local(state);
                let ok = accept(after - before, rng);
                if !ok {
                    (state.theta, state.gamma) = saved;
                }
                ok
            }
            Slot::Ridge(t) => {
                let before = target.ridge_local(state, t);
                let old = state.theta[t];
                let saved: Vec<f64> = state.gamma.iter().map(|g| if g.kind() == BiasKind::Walk { g.get(t) } else { 0.0 }).collect();
                let mut new = old + scale * z;
                if target.spec.monotone_walk {
                    let lo = if t > 0 { state.theta[t - 1] } else { f64::NEG_INFINITY };
                    let hi = if t + 1 < tp { state.theta[t + 1] } else { f64::INFINITY };
                    new = reflect(new, lo, hi);
                }
                shift_ridge(state, t, new - old);
                state.theta[t] = new;
                let after = target.ridge_local(state, t);
                let ok = accept(after - before, rng);
                if !ok {
                    state.theta[t] = old;
                    for (g, &v) in state.gamma.iter_mut().zip(&saved) {
                        if g.kind() == BiasKind::Walk {
                            g.set(t, v);
                        }
                    }
                }
                ok
            }
        };
    }
}

/// Starting state: empirical logit of the pooled anchor surveys, variances at
/// their prior medians, bias parameters at zero, plus a little seeded jitter
/// on `theta`.
pub fn initial_state<R: Rng + ?Sized>(panel: &SurveyPanel, spec: &ModelSpec, rng: &mut R) -> LatentState {
    let tp = panel.n_times();
    let anchors = spec.anchors();
    let mut empirical: Vec<Option<f64>> = (0..tp)
        .map(|t| {
            let (mut y, mut n, mut shift) = (0.0, 0.0, 0.0);
            for &k in &anchors {
                if let Some((yk, nk)) = panel.observed(k, t) {
                    y += yk as f64;
                    n += nk as f64;
                    if let Some(phi) = &spec.bias[k].fixed_phi {
                        shift += nk as f64 * phi[t].ln();
                    }
                }
            }
            (n > 0.0).then(|| logit((y + 0.5) / (n + 1.0)).unwrap_or(0.0) - shift / n)
        })
        .collect();
    // forward fill, then back fill any leading gap
    let mut last = None;
    for v in empirical.iter_mut() {
        match v {
            Some(x) => last = Some(*x),
            None => *v = last,
        }
    }
    let first = empirical.iter().flatten().next().copied().unwrap_or(spec.priors.nu0);
    let mut theta: Vec<f64> = empirical
        .into_iter()
        .map(|v| v.unwrap_or(first) + INIT_JITTER_SD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if spec.monotone_walk {
        for t in 1..tp {
            theta[t] = theta[t].max(theta[t - 1]);
        }
    }
    let pr = &spec.priors;
    LatentState {
        theta,
        sigma_sq: pr.eta0_sq.sqrt() * HALF_NORMAL_MEDIAN,
        gamma: spec.bias.iter().map(|b| BiasParams::zero(b.kind, tp)).collect(),
        pi_sq: spec.has_walk().then(|| pr.pi_sq_scale.sqrt() * HALF_NORMAL_MEDIAN),
    }
}

fn check_inputs(panel: &SurveyPanel, spec: &ModelSpec, settings: &SamplerSettings) -> Result<()> {
    settings.check()?;
    let violations = validate_panel(panel);
    if !violations.is_empty() {
        return Err(Error::InvalidPanel(violations[0].to_string()));
    }
    spec.check(panel)
}

/// Runs one adaptive Metropolis-within-Gibbs chain.
pub fn run_chain(
    panel: &SurveyPanel,
    spec: &ModelSpec,
    settings: &SamplerSettings,
    chain_seed: u64,
) -> Result<ChainRun> {
    check_inputs(panel, spec, settings)?;
    let mut rng = rng_from(chain_seed);
    let mut state = initial_state(panel, spec, &mut rng);
    let report = log_posterior(&state, panel, spec)?;
    if let Some((block, _)) = report.per_block.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Init { block: block.clone() });
    }

    let target = Target::new(panel, spec);
    let layout = Layout::new(spec, panel.n_times());
    let n_slots = layout.slots.len();
    let mut log_scales = layout.initial_log_scales();
    let mut accepted = vec![false; n_slots];
    let mut window_acc = vec![0u32; n_slots];
    let mut kept_acc = vec![0u64; n_slots];
    let mut n_windows = 0u32;
    let mut frozen_scales = None;
    let mut draws = Vec::with_capacity(settings.kept());

    for iter in 0..settings.burn_in + settings.n_draws {
        if iter == settings.burn_in {
            frozen_scales = Some(log_scales.iter().map(|s| s.exp()).collect::<Vec<_>>());
        }
        sweep(&target, &layout, &mut state, &log_scales, &mut accepted, &mut rng);
        debug_assert!(state.satisfies_invariants(spec));
        if iter < settings.burn_in {
            for (w, &a) in window_acc.iter_mut().zip(&accepted) {
                *w += a as u32;
            }
            if (iter + 1) % settings.adapt_window == 0 {
                n_windows += 1;
                // Robbins-Monro on the log scale with a decaying gain
                let gain = (n_windows as f64).powf(-0.5);
                for (ls, w) in log_scales.iter_mut().zip(window_acc.iter_mut()) {
                    let rate = *w as f64 / settings.adapt_window as f64;
                    *ls = (*ls + gain * (rate - settings.target_accept)).clamp(-12.0, 3.0);
                    *w = 0;
                }
            }
        } else {
            for (c, &a) in kept_acc.iter_mut().zip(&accepted) {
                *c += a as u64;
            }
            if (iter - settings.burn_in + 1).is_multiple_of(settings.thin) {
                draws.push(state.clone());
            }
        }
    }

    let mut block_acc = vec![(0u64, 0u64); layout.blocks.len()];
    for (i, &c) in kept_acc.iter().enumerate() {
        let b = &mut block_acc[layout.block_of[i]];
        b.0 += c;
        b.1 += settings.n_draws as u64;
    }
    let acceptance = layout
        .blocks
        .iter()
        .zip(&block_acc)
        .map(|(name, &(a, n))| (name.clone(), if n == 0 { f64::NAN } else { a as f64 / n as f64 }))
        .collect();
    let final_scales: Vec<f64> = log_scales.iter().map(|s| s.exp()).collect();
    Ok(ChainRun {
        draws,
        acceptance,
        frozen_scales: frozen_scales.unwrap_or_else(|| final_scales.clone()),
        final_scales,
    })
}

/// Runs `settings.n_chains` independent chains in parallel, with per-chain
/// seeds derived from `settings.seed`, and computes diagnostics.
pub fn run_chains(panel: &SurveyPanel, spec: &ModelSpec, settings: &SamplerSettings) -> Result<Fit> {
    check_inputs(panel, spec, settings)?;
    let runs = (0..settings.n_chains)
        .into_par_iter()
        .map(|c| run_chain(panel, spec, settings, derive_seed(settings.seed, &[c as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut draws = ChainDraws {
        draws: Vec::with_capacity(runs.len()),
        settings: *settings,
        acceptance_rates: Vec::with_capacity(runs.len()),
        frozen_scales: Vec::with_capacity(runs.len()),
        final_scales: Vec::with_capacity(runs.len()),
    };
    for run in runs {
        draws.draws.push(run.draws);
        draws.acceptance_rates.push(run.acceptance);
        draws.frozen_scales.push(run.frozen_scales);
        draws.final_scales.push(run.final_scales);
    }
    let names = param_names(spec, panel.n_times());
    let diagnostics = Diagnostics::compute(&draws, names);
    Ok(Fit { draws, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::example_panel;
    use crate::likelihood::log_posterior;
    use crate::model::BiasModelSpec;

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(-0.3, 0.0, f64::INFINITY), 0.3);
        assert!((reflect(1.4, f64::NEG_INFINITY, 1.0) - 0.6).abs() < 1e-12);
        assert!((reflect(2.3, 0.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((reflect(-1.2, 0.0, 1.0) - 0.8).abs() < 1e-12);
        for i in 0..1000 {
            let x = -50.0 + 0.1 * i as f64;
            let r = reflect(x, 0.2, 0.7);
            assert!((0.2..=0.7).contains(&r));
        }
    }

    /// Every conditional density must change by exactly as much as the full
    /// log-posterior does when only its scalar moves.
    #[test]
    fn local_densities_track_full_posterior() {
        let panel = example_panel();
        let spec = ModelSpec::new(vec![
            BiasModelSpec::anchor(),
            BiasModelSpec::of(BiasKind::Linear),
            BiasModelSpec::of(BiasKind::Walk),
        ]);
        let mut rng = rng_from(3);
        let base = initial_state(&panel, &spec, &mut rng);
        let target = Target::new(&panel, &spec);
        let layout = Layout::new(&spec, panel.n_times());
        let full = |s: &LatentState| log_posterior(s, &panel, &spec).unwrap().log_post;
        for slot in &layout.slots {
            let mut moved = base.clone();
            let (lb, lm) = match *slot {
                Slot::Theta(t) => {
                    let b = target.theta_local(&moved, t);
                    moved.theta[t] += 0.07;
                    (b, target.theta_local(&moved, t))
                }
                Slot::Sigma => {
                    let b = target.sigma_local(&moved);
                    moved.sigma_sq *= 1.3;
                    (b, target.sigma_local(&moved))
                }
                Slot::Gamma(k, j) => {
                    let b = target.gamma_local(&moved, k, j);
                    let v = moved.gamma[k].get(j);
                    moved.gamma[k].set(j, v + 0.05);
                    (b, target.gamma_local(&moved, k, j))
                }
                Slot::Pi => {
                    let b = target.pi_local(&moved);
                    moved.pi_sq = moved.pi_sq.map(|p| p * 0.8);
                    (b, target.pi_local(&moved))
                }
                Slot::Level => {
                    let b = target.level_local(&moved);
                    shift_level(&mut moved, 0.09);
                    (b, target.level_local(&moved))
                }
                Slot::Ridge(t) => {
                    let b = target.ridge_local(&moved, t);
                    shift_ridge(&mut moved, t, 0.06);
                    moved.theta[t] += 0.06;
                    (b, target.ridge_local(&moved, t))
                }
            };
            let d_full = full(&moved) - full(&base);
            assert!((d_full - (lm - lb)).abs() < 1e-8, "{slot:?}: {d_full} vs {}", lm - lb);
        }
    }

    #[test]
    fn initial_state_is_finite_and_monotone() {
        let mut panel = example_panel();
        panel.clear(0, 0);
        panel.clear(0, 1);
        let spec = ModelSpec::anchored(3, BiasKind::Walk).monotone(true);
        let s = initial_state(&panel, &spec, &mut rng_from(1));
        assert!(s.satisfies_invariants(&spec));
        s.check_shape(&spec, 10).unwrap();
        assert!(log_posterior(&s, &panel, &spec).unwrap().log_post.is_finite());
    }

    #[test]
    fn init_failure_names_block() {
        let panel = example_panel();
        let mut spec = ModelSpec::anchored(3, BiasKind::Constant);
        spec.bias[0].fixed_phi = Some(vec![1.0; 10]);
        // a huge prior mean makes the theta0 block overflow to -inf
        spec.priors.nu0 = 1e300;
        let err = run_chain(&panel, &spec, &SamplerSettings::desk(1), 1).unwrap_err();
        match err {
            Error::Init { block } => assert_eq!(block, "theta0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chain_lengths_and_freeze() {
        let panel = example_panel();
        let spec = ModelSpec::anchored(3, BiasKind::Constant);
        let settings = SamplerSettings { n_chains: 2, burn_in: 400, n_draws: 600, thin: 3, ..SamplerSettings::desk(5) };
        let fit = run_chains(&panel, &spec, &settings).unwrap();
        assert_eq!(fit.draws.n_chains(), 2);
        assert!(fit.draws.draws.iter().all(|c| c.len() == 200));
        assert_eq!(fit.draws.frozen_scales, fit.draws.final_scales);
        assert!(fit.draws.pooled().all(|s| s.satisfies_invariants(&spec)));
    }

    #[test]
    fn monotone_draws_are_monotone() {
        let mut panel = example_panel();
        panel.clear(0, 3);
        let spec = ModelSpec::anchored(3, BiasKind::Walk).monotone(true);
        let settings = SamplerSettings { n_chains: 2, burn_in: 500, n_draws: 1000, thin: 2, ..SamplerSettings::desk(9) };
        let fit = run_chains(&panel, &spec, &settings).unwrap();
        for s in fit.draws.pooled() {
            assert!(s.theta.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn bad_settings_rejected() {
        let panel = example_panel();
        let spec = ModelSpec::anchored(3, BiasKind::Constant);
        let s = SamplerSettings { thin: 0, ..SamplerSettings::desk(1) };
        assert!(run_chains(&panel, &spec, &s).is_err());
        let s = SamplerSettings { n_chains: 0, ..SamplerSettings::desk(1) };
        assert!(run_chains(&panel, &spec, &s).is_err());
    }
}
