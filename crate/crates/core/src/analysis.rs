//! Applied pipeline: date alignment, full-data and now-cast fits, interval
//! width ratios, benchmark coverage and effective iid sample sizes.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datagen::{generate_panel, GenDesign, PriorRegime};
use crate::error::{Error, Result};
use crate::io::{BenchmarkPoint, DatedRecord};
use crate::mcmc::{quantile, run_chains, summarize, Diagnostics, SamplerSettings, Transform};
use crate::model::{
    detect_saturated_cells, BiasKind, BiasModelSpec, BiasParams, LatentState, ModelSpec, PriorSpec, RateRow,
    SummaryTable, SurveyPanel,
};
use crate::seed::{derive_seed, rng_from};

/// Days after a benchmark date that still count as the same time point.
pub const ALIGN_WINDOW_DAYS: u64 = 6;

/// Interval level used throughout the applied pipeline.
pub const ALPHA: f64 = 0.05;

/// A panel built from dated records, with the calendar date of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub panel: SurveyPanel,
    pub dates: Vec<NaiveDate>,
    /// Records that were dropped, one message each.
    pub warnings: Vec<String>,
}

/// Uses the dates of `benchmark_label` as the time index. A record of another
/// survey dated `d..=d+6` for benchmark date `d` lands at `d`'s index; when
/// windows overlap the latest such `d` is used. Within a cell the earliest
/// record wins.
pub fn align_dates(records: &[DatedRecord], benchmark_label: &str, population: u64) -> Result<Aligned> {
    let mut dates: Vec<NaiveDate> = records.iter().filter(|r| r.survey == benchmark_label).map(|r| r.date).collect();
    if dates.is_empty() {
        return Err(Error::Data(format!("benchmark survey `{benchmark_label}` has no records")));
    }
    dates.sort();
    if let Some(w) = dates.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate benchmark date {}", w[0])));
    }
    let mut labels: Vec<String> = Vec::new();
    for r in records {
        if !labels.contains(&r.survey) {
            labels.push(r.survey.clone());
        }
    }
    let mut sorted: Vec<&DatedRecord> = records.iter().collect();
    sorted.sort_by_key(|a| a.date);
    let mut panel = SurveyPanel::new(population, labels, dates.len());
    let mut warnings = Vec::new();
    for r in sorted {
        let k = panel.survey_index(&r.survey).expect("registered above");
        let slot = dates.partition_point(|&d| d <= r.date).checked_sub(1);
        let t = match slot {
            Some(t) if r.date <= dates[t] + Days::new(ALIGN_WINDOW_DAYS) => t,
            _ => {
                warnings.push(format!("{} {}: no benchmark date within {ALIGN_WINDOW_DAYS} days before", r.survey, r.date));
                continue;
            }
        };
        if panel.observed(k, t).is_some() {
            warnings.push(format!("{} {}: cell at {} already filled by an earlier record", r.survey, r.date, dates[t]));
            continue;
        }
        panel.set(k, t, r.y, r.n);
    }
    Ok(Aligned { panel, dates, warnings })
}

/// Records of an aligned panel, each dated at its benchmark date.
pub fn records_from_aligned(aligned: &Aligned) -> Vec<DatedRecord> {
    let p = &aligned.panel;
    let mut out = Vec::new();
    for k in 0..p.n_surveys() {
        for (t, &date) in aligned.dates.iter().enumerate() {
            if let Some((y, n)) = p.observed(k, t) {
                out.push(DatedRecord { survey: p.labels()[k].clone(), date, y, n });
            }
        }
    }
    out
}

/// Benchmark rate and absolute margin per (1-based) time point.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSeries {
    points: BTreeMap<usize, BenchmarkPoint>,
}

impl BenchmarkSeries {
    pub const DEFAULT_MARGIN: f64 = 0.05;

    pub fn new(points: Vec<BenchmarkPoint>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in points {
            if !(p.rate > 0.0 && p.rate < 1.0) || !(p.margin >= 0.0) {
                return Err(Error::Data(format!("benchmark at t={} out of range", p.t)));
            }
            if map.insert(p.t, p).is_some() {
                return Err(Error::Data(format!("duplicate benchmark time point {}", p.t)));
            }
        }
        Ok(Self { points: map })
    }

    pub fn get(&self, t: usize) -> Option<&BenchmarkPoint> {
        self.points.get(&t)
    }

    pub fn points(&self) -> impl Iterator<Item = &BenchmarkPoint> {
        self.points.values()
    }

    /// Same rates with a different margin everywhere.
    pub fn with_margin(&self, margin: f64) -> Self {
        Self { points: self.points.iter().map(|(&t, p)| (t, BenchmarkPoint { margin, ..*p })).collect() }
    }
}

/// Output of a full-data fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FullFit {
    pub summary: SummaryTable,
    pub diagnostics: Diagnostics,
    /// `(survey, time)` cells of biased surveys with `y = 0` or `y = n`, 0-based.
    pub saturated: Vec<(usize, usize)>,
}

/// Fits the whole panel and summarizes rates, bias trajectories and every
/// scalar parameter.
pub fn fit_full(panel: &SurveyPanel, spec: &ModelSpec, settings: &SamplerSettings) -> Result<FullFit> {
    if panel.n_observed() == 0 {
        return Err(Error::Data("no observed cells".into()));
    }
    let fit = run_chains(panel, spec, settings)?;
    let summary = summarize(&fit.draws, &fit.diagnostics, spec, panel.labels(), ALPHA, Transform::Rate);
    Ok(FullFit { summary, diagnostics: fit.diagnostics, saturated: detect_saturated_cells(panel, spec) })
}

/// The first `time_points` columns of `spec`, for fits on a truncated panel.
fn truncate_spec(spec: &ModelSpec, time_points: usize) -> ModelSpec {
    let mut out = spec.clone();
    for b in &mut out.bias {
        if let Some(phi) = &mut b.fixed_phi {
            phi.truncate(time_points);
        }
    }
    out
}

/// Now-cast at one time point: the posterior at `t` given data up to `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastRow {
    pub t: usize,
    pub median: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sigma_sq_median: Option<f64>,
    pub sigma_sq_lower: Option<f64>,
    pub sigma_sq_upper: Option<f64>,
    pub pi_sq_median: Option<f64>,
    pub pi_sq_lower: Option<f64>,
    pub pi_sq_upper: Option<f64>,
    pub converged: bool,
    /// Failure message, empty when the fit ran.
    pub error: String,
}

impl NowcastRow {
    pub fn rate(&self) -> Option<RateRow> {
        Some(RateRow { t: self.t, median: self.median?, lower: self.lower?, upper: self.upper? })
    }
}

fn nowcast_one(panel: &SurveyPanel, spec: &ModelSpec, settings: &SamplerSettings, t: usize) -> NowcastRow {
    let mut row = NowcastRow {
        t,
        median: None,
        lower: None,
        upper: None,
        sigma_sq_median: None,
        sigma_sq_lower: None,
        sigma_sq_upper: None,
        pi_sq_median: None,
        pi_sq_lower: None,
        pi_sq_upper: None,
        converged: false,
        error: String::new(),
    };
    let sub = panel.truncate(t);
    let settings = settings.with_seed(derive_seed(settings.seed, &[t as u64]));
    match fit_full(&sub, &truncate_spec(spec, t), &settings) {
        Ok(fit) => {
            let s = &fit.summary;
            let r = s.rate_at(t).expect("one row per time point");
            (row.median, row.lower, row.upper) = (Some(r.median), Some(r.lower), Some(r.upper));
            if let Some(p) = s.param("sigma_sq") {
                (row.sigma_sq_median, row.sigma_sq_lower, row.sigma_sq_upper) = (Some(p.median), Some(p.lower), Some(p.upper));
            }
            if let Some(p) = s.param("pi_sq") {
                (row.pi_sq_median, row.pi_sq_lower, row.pi_sq_upper) = (Some(p.median), Some(p.lower), Some(p.upper));
            }
            row.converged = s.converged;
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Fits every prefix `1..=t*` of the panel and keeps the row for `t*`.
/// Fits run concurrently; a failed fit leaves its row empty.
pub fn nowcast_series(panel: &SurveyPanel, spec: &ModelSpec, settings: &SamplerSettings) -> Result<Vec<NowcastRow>> {
    settings.check()?;
    spec.check(panel)?;
    Ok((1..=panel.n_times()).into_par_iter().map(|t| nowcast_one(panel, spec, settings, t)).collect())
}

pub fn nowcast_rates(rows: &[NowcastRow]) -> Vec<RateRow> {
    rows.iter().filter_map(NowcastRow::rate).collect()
}

/// 1-based time points at which survey `k` is observed.
pub fn observed_times(panel: &SurveyPanel, k: usize) -> Vec<usize> {
    (0..panel.n_times()).filter(|&t| panel.observed(k, t).is_some()).map(|t| t + 1).collect()
}

fn mean_median(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (Some(values.iter().sum::<f64>() / values.len() as f64), Some(quantile(&v, 0.5)))
}

/// Rows of both tables at the same time points, restricted to `times` if given.
fn paired<'a>(baseline: &'a [RateRow], method: &'a [RateRow], times: Option<&[usize]>) -> Vec<(&'a RateRow, &'a RateRow)> {
    baseline
        .iter()
        .filter(|b| times.is_none_or(|ts| ts.contains(&b.t)))
        .filter_map(|b| method.iter().find(|m| m.t == b.t).map(|m| (b, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub t: usize,
    pub baseline_width: f64,
    pub method_width: f64,
    /// `baseline_width / method_width`; missing when the method width is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthRatios {
    pub rows: Vec<RatioRow>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Time points whose ratio is undefined.
    pub undefined: Vec<usize>,
}

/// Baseline-to-method credible interval width ratio per time point.
pub fn ci_width_ratio(baseline: &[RateRow], method: &[RateRow], times: Option<&[usize]>) -> WidthRatios {
    let rows: Vec<RatioRow> = paired(baseline, method, times)
        .into_iter()
        .map(|(b, m)| {
            let (bw, mw) = (b.interval().width(), m.interval().width());
            RatioRow { t: b.t, baseline_width: bw, method_width: mw, ratio: (mw > 0.0).then(|| bw / mw) }
        })
        .collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let (mean, median) = mean_median(&ratios);
    let undefined = rows.iter().filter(|r| r.ratio.is_none()).map(|r| r.t).collect();
    WidthRatios { rows, mean, median, undefined }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub hits: usize,
    pub total: usize,
    pub fraction: f64,
    /// Time points whose interval misses the benchmark band.
    pub misses: Vec<usize>,
}

/// Counts time points whose interval intersects `[rate - margin, rate + margin]`.
/// Time points without a benchmark are skipped.
pub fn coverage_vs_benchmark(method: &[RateRow], bench: &BenchmarkSeries) -> Coverage {
    let mut hits = 0;
    let mut misses = Vec::new();
    for row in method {
        if let Some(b) = bench.get(row.t) {
            if row.interval().intersects(b.rate - b.margin, b.rate + b.margin) {
                hits += 1;
            } else {
                misses.push(row.t);
            }
        }
    }
    let total = hits + misses.len();
    Coverage { hits, total, fraction: if total == 0 { f64::NAN } else { hits as f64 / total as f64 }, misses }
}

/// `Z^2 p (1 - p) / MOE^2`; undefined for `p` in `{0, 1}` or zero margin.
pub fn n_iid(z: f64, p_hat: f64, moe: f64) -> Option<f64> {
    (p_hat > 0.0 && p_hat < 1.0 && moe > 0.0).then(|| z * z * p_hat * (1.0 - p_hat) / (moe * moe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiidRow {
    pub t: usize,
    pub baseline_p_hat: f64,
    pub baseline_moe: f64,
    pub baseline_n_iid: Option<f64>,
    pub p_hat: f64,
    pub moe: f64,
    pub n_iid: Option<f64>,
    /// Baseline width over method width.
    pub ratio: Option<f64>,
    /// `n_iid - baseline_n_iid`.
    pub gain: Option<f64>,
    /// `Z^2 p (1 - p) / (R MOE)` with `R` the method-to-baseline width ratio,
    /// `MOE` the baseline margin and `p` the method median, kept for comparison.
    pub literal_n_iid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiidReport {
    pub alpha: f64,
    pub z: f64,
    pub rows: Vec<NiidRow>,
    pub mean_gain: Option<f64>,
    pub median_gain: Option<f64>,
    /// Time points where either `n_iid` is undefined.
    pub undefined: Vec<usize>,
}

/// Effective iid sample size of baseline and method intervals and their
/// difference, at the paired time points (restricted to `times` if given).
pub fn n_iid_gain(baseline: &[RateRow], method: &[RateRow], alpha: f64, times: Option<&[usize]>) -> NiidReport {
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let rows: Vec<NiidRow> = paired(baseline, method, times)
        .into_iter()
        .map(|(b, m)| {
            let (b_moe, m_moe) = (b.interval().width() / 2.0, m.interval().width() / 2.0);
            let base = n_iid(z, b.median, b_moe);
            let own = n_iid(z, m.median, m_moe);
            let ratio = (m_moe > 0.0).then(|| b_moe / m_moe);
            // R times the baseline margin is the method margin
            let literal = (m.median > 0.0 && m.median < 1.0 && m_moe > 0.0)
                .then(|| z * z * m.median * (1.0 - m.median) / m_moe);
            NiidRow {
                t: b.t,
                baseline_p_hat: b.median,
                baseline_moe: b_moe,
                baseline_n_iid: base,
                p_hat: m.median,
                moe: m_moe,
                n_iid: own,
                ratio,
                gain: base.zip(own).map(|(b, o)| o - b),
                literal_n_iid: literal,
            }
        })
        .collect();
    let gains: Vec<f64> = rows.iter().filter_map(|r| r.gain).collect();
    let (mean_gain, median_gain) = mean_median(&gains);
    let undefined = rows.iter().filter(|r| r.gain.is_none()).map(|r| r.t).collect();
    NiidReport { alpha, z, rows, mean_gain, median_gain, undefined }
}

/// Model for the applied setting: named anchor with `phi = 1`, every other
/// survey with `kind`, monotone walk and a low initial rate prior.
pub fn vaccine_spec(panel: &SurveyPanel, anchor: &str, kind: BiasKind) -> Result<ModelSpec> {
    let a = panel.survey_index(anchor).ok_or_else(|| Error::Data(format!("no survey labelled `{anchor}`")))?;
    let bias = (0..panel.n_surveys())
        .map(|k| if k == a { BiasModelSpec::anchor() } else { BiasModelSpec::of(kind) })
        .collect();
    Ok(ModelSpec::new(bias).with_priors(PriorSpec::low_initial_rate()).monotone(true))
}

/// Synthetic stand-in for the applied data set: 48 weekly time points, a
/// small unbiased poll with gaps, a large weekly panel used as the date
/// benchmark and a bi-weekly panel, both over-representing positives with
/// drifting odds ratios. The benchmark covers the first 46 weeks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVaccine {
    pub population: u64,
    pub records: Vec<DatedRecord>,
    pub benchmark: Vec<BenchmarkPoint>,
    /// True rate `P_t / N` per week.
    pub rates: Vec<f64>,
}

pub const SYNTH_ANCHOR: &str = "poll";
pub const SYNTH_WEEKLY: &str = "weekly";
pub const SYNTH_BIWEEKLY: &str = "biweekly";
pub const SYNTH_SEED: u64 = 2021;
const SYNTH_WEEKS: usize = 48;

/// 1-based weeks with no unbiased poll.
pub const SYNTH_ANCHOR_GAPS: [usize; 12] = [2, 6, 9, 13, 17, 21, 25, 28, 33, 37, 41, 45];

pub fn synthetic_vaccine(seed: u64) -> Result<SyntheticVaccine> {
    let t_len = SYNTH_WEEKS;
    let population = 255_000_000;
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let theta: Vec<f64> = (0..t_len)
        .map(|t| {
            let rate = 0.03 + 0.70 * logistic((t as f64 - 14.0) / 5.0);
            (rate / (1.0 - rate)).ln()
        })
        .collect();
    let weekly: Vec<f64> = (0..t_len).map(|t| 0.45 + 0.2 * (t as f64 / 7.0).sin()).collect();
    let biweekly: Vec<f64> = (0..t_len).map(|t| 0.25 + 0.012 * t as f64).collect();
    let truth = LatentState {
        theta,
        sigma_sq: 0.05,
        gamma: vec![BiasParams::Known, BiasParams::Walk(weekly), BiasParams::Walk(biweekly)],
        pi_sq: Some(0.01),
    };
    let anchor_n: Vec<u64> = (1..=t_len).map(|t| if SYNTH_ANCHOR_GAPS.contains(&t) { 0 } else { 1000 }).collect();
    let biweekly_n: Vec<u64> = (1..=t_len).map(|t| if t % 2 == 1 { 75_000 } else { 0 }).collect();
    let design = GenDesign {
        population,
        time_points: t_len,
        labels: vec![SYNTH_ANCHOR.into(), SYNTH_WEEKLY.into(), SYNTH_BIWEEKLY.into()],
        sample_sizes: vec![anchor_n, vec![250_000; t_len], biweekly_n],
        bias: vec![BiasKind::Known, BiasKind::Walk, BiasKind::Walk],
        regime: PriorRegime::Default,
        monotone_walk: true,
        truth_seed: seed,
    };
    let mut rng = rng_from(seed);
    let generated = generate_panel(&truth, &design, &mut rng)?;
    let start = NaiveDate::from_ymd_opt(2021, 1, 9).expect("valid date");
    let offset = [2u64, 0, 3];
    let mut records = Vec::new();
    for k in 0..3 {
        for t in 0..t_len {
            if let Some((y, n)) = generated.panel.observed(k, t) {
                let date = start + Days::new(7 * t as u64 + offset[k]);
                records.push(DatedRecord { survey: design.labels[k].clone(), date, y, n });
            }
        }
    }
    records.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.survey.cmp(&b.survey)));
    let rates: Vec<f64> = generated.positives.iter().map(|&p| p as f64 / population as f64).collect();
    let benchmark = rates
        .iter()
        .take(t_len - 2)
        .enumerate()
        .map(|(t, &rate)| BenchmarkPoint { t: t + 1, rate, margin: BenchmarkSeries::DEFAULT_MARGIN })
        .collect();
    Ok(SyntheticVaccine { population, records, benchmark, rates })
}
