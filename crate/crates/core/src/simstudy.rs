//! Truth-bias-model by fitted-bias-model simulation grid, scored by the
//! squared error of the now-cast rate at the last time point.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_parameters, generate_panel, GenDesign, Generated, PriorRegime};
use crate::dists::inv_logit;
use crate::error::{Error, Result};
use crate::mcmc::{quantile, run_chains, SamplerSettings};
use crate::model::{BiasKind, BiasModelSpec, LatentState, ModelSpec, PriorSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Constant,
    Linear,
    Walk,
    /// The anchor survey alone.
    UnbiasedOnly,
}

impl FitKind {
    pub const ALL: [FitKind; 4] = [FitKind::Constant, FitKind::Linear, FitKind::Walk, FitKind::UnbiasedOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FitKind::Constant => "constant",
            FitKind::Linear => "linear",
            FitKind::Walk => "walk",
            FitKind::UnbiasedOnly => "unbiased-only",
        }
    }

    pub fn bias(self) -> Option<BiasKind> {
        match self {
            FitKind::Constant => Some(BiasKind::Constant),
            FitKind::Linear => Some(BiasKind::Linear),
            FitKind::Walk => Some(BiasKind::Walk),
            FitKind::UnbiasedOnly => None,
        }
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&f| f == self).expect("listed") as u64
    }
}

impl fmt::Display for FitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased-only" | "unbiased" => Ok(FitKind::UnbiasedOnly),
            other => match other.parse::<BiasKind>()? {
                BiasKind::Constant => Ok(FitKind::Constant),
                BiasKind::Linear => Ok(FitKind::Linear),
                BiasKind::Walk => Ok(FitKind::Walk),
                BiasKind::Known => Err(Error::Parse("`known` is not a fit kind".into())),
            },
        }
    }
}

/// Study configuration. Defaults are the desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub population: u64,
    pub anchor_n: u64,
    pub biased_n: u64,
    /// Number of biased surveys next to the anchor.
    pub n_biased: usize,
    pub time_points: Vec<usize>,
    pub n_reps: usize,
    pub seed: u64,
    pub sampler: SamplerSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl SimConfig {
    /// 100 replications per cell with shortened chains.
    pub fn desk(seed: u64) -> Self {
        Self {
            population: 10_000_000,
            anchor_n: 100,
            biased_n: 1000,
            n_biased: 2,
            time_points: vec![5, 10, 15],
            n_reps: 100,
            seed,
            sampler: SamplerSettings::desk(seed),
        }
    }

    /// 2000 replications per cell with production chains. Long-running.
    pub fn paper(seed: u64) -> Self {
        Self { n_reps: 2000, sampler: SamplerSettings::paper(seed), ..Self::desk(seed) }
    }

    pub fn design(&self, truth: BiasKind, time_points: usize) -> GenDesign {
        let mut d = GenDesign::standard(
            self.population,
            time_points,
            self.anchor_n,
            self.biased_n,
            &vec![truth; self.n_biased],
        );
        d.regime = PriorRegime::Narrowed;
        d
    }

    fn check(&self) -> Result<()> {
        self.sampler.check()?;
        if self.n_reps == 0 {
            return Err(Error::Domain("n_reps must be at least 1".into()));
        }
        if self.time_points.contains(&0) {
            return Err(Error::Domain("time points must be positive".into()));
        }
        Ok(())
    }
}

/// Model fitted for `fit` on data of a design with `n_biased` biased surveys.
pub fn fit_spec(fit: FitKind, n_biased: usize) -> ModelSpec {
    let bias = match fit.bias() {
        Some(kind) => ModelSpec::anchored(n_biased + 1, kind).bias,
        None => vec![BiasModelSpec::anchor()],
    };
    ModelSpec::new(bias).with_priors(PriorSpec::narrowed())
}

fn truth_index(kind: BiasKind) -> u64 {
    match kind {
        BiasKind::Known => 0,
        BiasKind::Constant => 1,
        BiasKind::Linear => 2,
        BiasKind::Walk => 3,
    }
}

fn dataset_seed(cfg: &SimConfig, truth: BiasKind, time_points: usize, rep: usize) -> u64 {
    derive_seed(cfg.seed, &[truth_index(truth), time_points as u64, rep as u64])
}

/// Truth and panel of one replication. Depends only on the seed,
/// truth kind, number of time points and replication index, so every fit
/// kind sees the same data.
pub fn dataset(cfg: &SimConfig, truth: BiasKind, time_points: usize, rep: usize) -> Result<(LatentState, Generated)> {
    let design = cfg.design(truth, time_points);
    let mut rng = crate::seed::rng_from(dataset_seed(cfg, truth, time_points, rep));
    let state = draw_parameters(&design, &mut rng);
    let generated = generate_panel(&state, &design, &mut rng)?;
    Ok((state, generated))
}

/// One replication of one cell, as stored in the per-replication file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub truth: BiasKind,
    pub fit: FitKind,
    pub time_points: usize,
    pub rep: usize,
    pub truth_rate: f64,
    pub estimate: Option<f64>,
    pub sq_error: Option<f64>,
    pub converged: bool,
    pub max_r_hat: Option<f64>,
    /// Sampler error message, empty on success.
    pub error: String,
}

impl RepRecord {
    /// Counted in the aggregate only when the fit ran and converged.
    pub fn ok(&self) -> bool {
        self.converged && self.sq_error.is_some()
    }
}

fn run_replication(cfg: &SimConfig, truth: BiasKind, time_points: usize, rep: usize, fits: &[FitKind]) -> Vec<RepRecord> {
    let record = |fit: FitKind, truth_rate: f64| RepRecord {
        truth,
        fit,
        time_points,
        rep,
        truth_rate,
        estimate: None,
        sq_error: None,
        converged: false,
        max_r_hat: None,
        error: String::new(),
    };
    let (state, generated) = match dataset(cfg, truth, time_points, rep) {
        Ok(d) => d,
        Err(e) => {
            return fits.iter().map(|&f| RepRecord { error: e.to_string(), ..record(f, f64::NAN) }).collect();
        }
    };
    let truth_rate = inv_logit(state.theta[time_points - 1]);
    fits.iter()
        .map(|&fit| {
            let spec = fit_spec(fit, cfg.n_biased);
            let panel = match fit {
                FitKind::UnbiasedOnly => generated.panel.select_surveys(&[0]),
                _ => generated.panel.clone(),
            };
            let seed = derive_seed(dataset_seed(cfg, truth, time_points, rep), &[fit.index()]);
            let settings = cfg.sampler.with_seed(seed);
            match run_chains(&panel, &spec, &settings) {
                Ok(out) => {
                    let mut rates: Vec<f64> =
                        out.draws.pooled().map(|s| inv_logit(s.theta[time_points - 1])).collect();
                    rates.sort_by(f64::total_cmp);
                    let estimate = quantile(&rates, 0.5);
                    let err = estimate - truth_rate;
                    RepRecord {
                        estimate: Some(estimate),
                        sq_error: Some(err * err),
                        converged: out.diagnostics.converged,
                        max_r_hat: Some(out.diagnostics.max_r_hat()),
                        ..record(fit, truth_rate)
                    }
                }
                Err(e) => RepRecord { error: e.to_string(), ..record(fit, truth_rate) },
            }
        })
        .collect()
}

/// Aggregate of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub truth: BiasKind,
    pub fit: FitKind,
    pub time_points: usize,
    pub n_reps: usize,
    /// Replications that failed or did not converge; excluded from the MSE.
    pub failures: usize,
    pub mse: Option<f64>,
    /// `sd(squared errors) / sqrt(n)`; missing with fewer than two usable replications.
    pub mcse: Option<f64>,
    pub ci95_lo: Option<f64>,
    pub ci95_hi: Option<f64>,
}

/// Aggregates the records of one cell, in replication order.
pub fn aggregate(truth: BiasKind, fit: FitKind, time_points: usize, records: &[RepRecord]) -> CellResult {
    let mut records: Vec<&RepRecord> = records.iter().collect();
    records.sort_by_key(|r| r.rep);
    let errs: Vec<f64> = records.iter().filter(|r| r.ok()).filter_map(|r| r.sq_error).collect();
    let n = errs.len();
    let mse = (n > 0).then(|| errs.iter().sum::<f64>() / n as f64);
    let mcse = match mse {
        Some(m) if n > 1 => {
            let var = errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n - 1) as f64;
            Some(var.sqrt() / (n as f64).sqrt())
        }
        _ => None,
    };
    let ci = mse.zip(mcse).map(|(m, s)| (m - 1.96 * s, m + 1.96 * s));
    CellResult {
        truth,
        fit,
        time_points,
        n_reps: records.len(),
        failures: records.len() - n,
        mse,
        mcse,
        ci95_lo: ci.map(|c| c.0),
        ci95_hi: ci.map(|c| c.1),
    }
}

/// Runs every replication of a single cell.
pub fn run_cell(cfg: &SimConfig, truth: BiasKind, fit: FitKind, time_points: usize) -> Result<(CellResult, Vec<RepRecord>)> {
    cfg.check()?;
    if truth == BiasKind::Known {
        return Err(Error::Domain("truth kind must be a bias model".into()));
    }
    let records: Vec<RepRecord> = (0..cfg.n_reps)
        .into_par_iter()
        .flat_map_iter(|rep| run_replication(cfg, truth, time_points, rep, &[fit]))
        .collect();
    Ok((aggregate(truth, fit, time_points, &records), records))
}

/// Full grid output.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    pub records: Vec<RepRecord>,
}

/// All truth kinds by all fit kinds for every configured number of time
/// points, plus the per-replication records. Each replication generates its
/// dataset once and fits every kind to it.
pub fn run_grid(cfg: &SimConfig) -> Result<GridResult> {
    cfg.check()?;
    let mut jobs = Vec::new();
    for &t in &cfg.time_points {
        for truth in BiasKind::BIASED {
            for rep in 0..cfg.n_reps {
                jobs.push((truth, t, rep));
            }
        }
    }
    let records: Vec<RepRecord> = jobs
        .into_par_iter()
        .flat_map_iter(|(truth, t, rep)| run_replication(cfg, truth, t, rep, &FitKind::ALL))
        .collect();
    Ok(GridResult { cells: cells_from_records(&records), records })
}

/// Recomputes the cell table from stored per-replication records.
pub fn cells_from_records(records: &[RepRecord]) -> Vec<CellResult> {
    let mut keys: Vec<(usize, BiasKind, FitKind)> = Vec::new();
    for r in records {
        let key = (r.time_points, r.truth, r.fit);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by_key(|&(t, truth, fit)| (t, truth_index(truth), fit.index()));
    keys.into_iter()
        .map(|(t, truth, fit)| {
            let cell: Vec<RepRecord> =
                records.iter().filter(|r| (r.time_points, r.truth, r.fit) == (t, truth, fit)).cloned().collect();
            aggregate(truth, fit, t, &cell)
        })
        .collect()
}

pub fn write_cells<W: std::io::Write>(cells: &[CellResult], w: W) -> Result<()> {
    crate::io::write_rows(cells, w)
}

pub fn read_cells<R: std::io::Read>(r: R) -> Result<Vec<CellResult>> {
    crate::io::read_rows(r)
}

pub fn write_records<W: std::io::Write>(records: &[RepRecord], w: W) -> Result<()> {
    crate::io::write_rows(records, w)
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<RepRecord>> {
    crate::io::read_rows(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rep: usize, sq: Option<f64>, converged: bool) -> RepRecord {
        RepRecord {
            truth: BiasKind::Walk,
            fit: FitKind::Linear,
            time_points: 5,
            rep,
            truth_rate: 0.5,
            estimate: sq.map(|s| 0.5 + s.sqrt()),
            sq_error: sq,
            converged,
            max_r_hat: Some(1.0),
            error: String::new(),
        }
    }

    #[test]
    fn aggregation_arithmetic() {
        let recs = vec![rec(0, Some(0.01), true), rec(1, Some(0.03), true), rec(2, Some(5.0), false), rec(3, None, false)];
        let c = aggregate(BiasKind::Walk, FitKind::Linear, 5, &recs);
        assert_eq!((c.n_reps, c.failures), (4, 2));
        assert!((c.mse.unwrap() - 0.02).abs() < 1e-15);
        let sd = (2.0f64 * 0.01 * 0.01).sqrt();
        assert!((c.mcse.unwrap() - sd / 2f64.sqrt()).abs() < 1e-15);
        assert!((c.ci95_hi.unwrap() - c.mse.unwrap() - 1.96 * c.mcse.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn single_replication_has_no_mcse() {
        let c = aggregate(BiasKind::Walk, FitKind::Linear, 5, &[rec(0, Some(0.04), true)]);
        assert_eq!(c.mse, Some(0.04));
        assert_eq!((c.mcse, c.ci95_lo, c.ci95_hi), (None, None, None));
    }

    #[test]
    fn fit_kind_names() {
        for f in FitKind::ALL {
            assert_eq!(f.as_str().parse::<FitKind>().unwrap(), f);
        }
        assert!("known".parse::<FitKind>().is_err());
        assert_eq!(fit_spec(FitKind::UnbiasedOnly, 2).n_surveys(), 1);
        assert_eq!(fit_spec(FitKind::Walk, 2).bias[2].kind, BiasKind::Walk);
    }

    #[test]
    fn datasets_shared_and_distinct() {
        let cfg = SimConfig::desk(9);
        let a = dataset(&cfg, BiasKind::Linear, 5, 3).unwrap();
        assert_eq!(a, dataset(&cfg, BiasKind::Linear, 5, 3).unwrap());
        assert_ne!(a.1.panel, dataset(&cfg, BiasKind::Linear, 5, 4).unwrap().1.panel);
        assert_ne!(a.1.panel, dataset(&cfg, BiasKind::Walk, 5, 3).unwrap().1.panel);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = vec![rec(0, Some(0.1f64.powi(3) / 7.0), true), rec(1, None, false), rec(2, Some(std::f64::consts::PI), true)];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
        let cells = cells_from_records(&recs);
        let mut buf = Vec::new();
        write_cells(&cells, &mut buf).unwrap();
        assert_eq!(read_cells(buf.as_slice()).unwrap(), cells);
    }
}
