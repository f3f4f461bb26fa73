use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use surveysynth::analysis::{
    align_dates, ci_width_ratio, coverage_vs_benchmark, fit_full, n_iid_gain, nowcast_rates, nowcast_series,
    observed_times, synthetic_vaccine, BenchmarkSeries, ALPHA,
};
use surveysynth::datagen::{draw_parameters, generate_panel, truth_rows, GenDesign, PriorRegime};
use surveysynth::io::{self, read_panel, write_panel, write_rows};
use surveysynth::model::{BiasKind, RateRow, SurveyPanel};
use surveysynth::seed::rng_from;
use surveysynth::simstudy::{cells_from_records, read_records, run_grid, write_cells, write_records, SimConfig};

use crate::config::{bias_specs, require, ConfigError, Resolved, RunConfig, Scale};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    time_points: Option<usize>,
    #[arg(long)]
    population: Option<u64>,
    #[arg(long)]
    anchor_n: Option<u64>,
    #[arg(long)]
    biased_n: Option<u64>,
    /// Number of biased surveys next to the anchor.
    #[arg(long)]
    n_biased: Option<usize>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<PriorRegime>,
    /// Dated records and a benchmark shaped like a vaccination-uptake study
    /// instead of a panel.
    #[arg(long)]
    vaccine_shaped: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, value_name = "PATH")]
    panel: Option<PathBuf>,
    /// Comma-separated labels or 1-based indices to keep.
    #[arg(long, value_delimiter = ',')]
    surveys: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SimStudyArgs {
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    time_points: Vec<usize>,
    /// Rebuild the cell table from a stored per-replication file instead of running.
    #[arg(long, value_name = "ERRORS_CSV")]
    recompute: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long, value_name = "PATH")]
    records: Option<PathBuf>,
    /// Survey whose dates define the time index.
    #[arg(long)]
    benchmark_survey: String,
    #[arg(long)]
    population: u64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Rates CSV of the baseline (anchor-only) fit.
    #[arg(long, value_name = "PATH")]
    baseline: Option<PathBuf>,
    /// Rates CSV of the fit being assessed.
    #[arg(long, value_name = "PATH")]
    method: Option<PathBuf>,
    /// Benchmark CSV `t,rate,margin` for coverage.
    #[arg(long, value_name = "PATH")]
    benchmark: Option<PathBuf>,
    /// Panel used with `--anchor` to restrict comparisons to the anchor's time points.
    #[arg(long, value_name = "PATH")]
    panel: Option<PathBuf>,
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long, default_value_t = ALPHA)]
    alpha: f64,
    /// Replaces every benchmark margin.
    #[arg(long)]
    margin: Option<f64>,
}

fn parse_regime(s: &str) -> Result<PriorRegime, String> {
    match s {
        "default" => Ok(PriorRegime::Default),
        "narrowed" => Ok(PriorRegime::Narrowed),
        _ => Err(format!("unknown regime `{s}` (default|narrowed)")),
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn emit<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> anyhow::Result<()> {
    write_rows(rows, create(dir, name)?).with_context(|| format!("writing {name}"))?;
    Ok(())
}

fn load_panel(path: &Path) -> anyhow::Result<SurveyPanel> {
    let panel = read_panel(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(panel.validated()?)
}

fn header(command: &str, r: &Resolved) {
    let scale = match r.scale {
        Scale::Desk => "desk",
        Scale::Paper => "paper",
    };
    println!("surveysynth {command}  seed={}  scale={scale}  out={}", r.seed, r.out.display());
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn simulate(a: &SimulateArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("simulate", r);
    if a.vaccine_shaped {
        let v = synthetic_vaccine(r.seed)?;
        io::write_records(&v.records, create(&r.out, "records.csv")?)?;
        emit(&r.out, "benchmark.csv", &v.benchmark)?;
        #[derive(Serialize)]
        struct TruthRate {
            t: usize,
            rate: f64,
        }
        let rates: Vec<TruthRate> = v.rates.iter().enumerate().map(|(t, &rate)| TruthRate { t: t + 1, rate }).collect();
        emit(&r.out, "truth.csv", &rates)?;
        println!("records: {}  population: {}  weeks: {}", v.records.len(), v.population, v.rates.len());
        println!("wrote records.csv benchmark.csv truth.csv  ({:.1}s)", start.elapsed().as_secs_f64());
        return Ok(());
    }

    let o = &cfg.simulate;
    let n_biased = a.n_biased.unwrap_or(o.bias.len());
    let anchor_n = a.anchor_n.unwrap_or(o.anchor_n);
    let biased_n = a.biased_n.unwrap_or(o.biased_n);
    let time_points = a.time_points.unwrap_or(o.time_points);
    let mut design = GenDesign::standard(
        a.population.unwrap_or(o.population),
        time_points,
        anchor_n,
        biased_n,
        &vec![BiasKind::Linear; n_biased],
    );
    design.bias = if r.bias.is_empty() && n_biased == o.bias.len() {
        std::iter::once(BiasKind::Known).chain(o.bias.iter().copied()).collect()
    } else if r.bias.is_empty() {
        let kind = o.bias.first().copied().unwrap_or(BiasKind::Linear);
        std::iter::once(BiasKind::Known).chain(std::iter::repeat_n(kind, n_biased)).collect()
    } else {
        bias_specs(&design.labels, &r.bias)?.iter().map(|b| b.kind).collect()
    };
    design.sample_sizes = design
        .bias
        .iter()
        .map(|&b| vec![if b == BiasKind::Known { anchor_n } else { biased_n }; time_points])
        .collect();
    design.regime = a.regime.unwrap_or(o.regime);
    design.monotone_walk = r.monotone || o.monotone_walk;
    design.truth_seed = r.seed;
    design.check()?;

    let mut rng = rng_from(r.seed);
    let truth = draw_parameters(&design, &mut rng);
    let generated = generate_panel(&truth, &design, &mut rng)?;
    write_panel(&generated.panel, create(&r.out, "panel.csv")?)?;
    emit(&r.out, "truth.csv", &truth_rows(&truth, &generated))?;

    let kinds: Vec<&str> = design.bias.iter().map(|b| b.as_str()).collect();
    println!(
        "surveys: {}  time points: {}  population: {}  bias: {}",
        design.n_surveys(),
        time_points,
        design.population,
        kinds.join(",")
    );
    println!("sigma_sq: {:.4}  rate at T: {:.4}", truth.sigma_sq, generated.positives[time_points - 1] as f64 / design.population as f64);
    println!("wrote panel.csv truth.csv  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}

fn survey_subset(panel: &SurveyPanel, names: &[String]) -> anyhow::Result<Option<Vec<usize>>> {
    if names.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for name in names {
        let k = panel
            .survey_index(name)
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i >= 1 && i <= panel.n_surveys()).map(|i| i - 1))
            .ok_or_else(|| ConfigError(format!("--surveys names unknown survey `{name}`")))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(Some(out))
}

fn fit_input(a: &FitArgs, cfg: &RunConfig) -> anyhow::Result<SurveyPanel> {
    let path = require(a.panel.as_deref(), cfg.inputs.panel.as_deref(), "panel")?;
    let panel = load_panel(path)?;
    Ok(match survey_subset(&panel, &a.surveys)? {
        Some(keep) => panel.select_surveys(&keep),
        None => panel,
    })
}

fn print_spec(panel: &SurveyPanel, spec: &surveysynth::model::ModelSpec) {
    let kinds: Vec<String> =
        panel.labels().iter().zip(&spec.bias).map(|(l, b)| format!("{l}={}", b.kind.as_str())).collect();
    println!(
        "surveys: {}  time points: {}  observed cells: {}  monotone: {}",
        kinds.join(","),
        panel.n_times(),
        panel.n_observed(),
        spec.monotone_walk
    );
}

#[derive(Serialize)]
struct SaturatedRow {
    survey: usize,
    label: String,
    t: usize,
}

pub fn fit(a: &FitArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("fit", r);
    let panel = fit_input(a, cfg)?;
    let spec = r.model_spec(panel.labels())?;
    print_spec(&panel, &spec);
    let full = fit_full(&panel, &spec, &r.sampler)?;
    let s = &full.summary;
    io::write_rates(&s.rates, create(&r.out, "rates.csv")?)?;
    io::write_params(&s.params, create(&r.out, "params.csv")?)?;
    io::write_phi(&s.phi, create(&r.out, "phi.csv")?)?;
    let saturated: Vec<SaturatedRow> = full
        .saturated
        .iter()
        .map(|&(k, t)| SaturatedRow { survey: k + 1, label: panel.labels()[k].clone(), t: t + 1 })
        .collect();
    emit(&r.out, "saturated.csv", &saturated)?;

    println!("{:>4} {:>8} {:>8} {:>8}", "t", "median", "lower", "upper");
    for row in &s.rates {
        println!("{:>4} {:>8.4} {:>8.4} {:>8.4}", row.t, row.median, row.lower, row.upper);
    }
    for name in ["sigma_sq", "pi_sq", "theta0"] {
        if let Some(p) = s.param(name) {
            println!("{name}: {:.4} [{:.4}, {:.4}]", p.median, p.lower, p.upper);
        }
    }
    println!(
        "max R-hat: {:.3}  min ESS: {:.0}  converged: {}",
        full.diagnostics.max_r_hat(),
        full.diagnostics.ess.iter().copied().fold(f64::INFINITY, f64::min),
        s.converged
    );
    if !saturated.is_empty() {
        let cells: Vec<String> = saturated.iter().map(|c| format!("{}@{}", c.label, c.t)).collect();
        println!("saturated cells (odds ratio prior-dominated): {}", cells.join(" "));
    }
    println!("wrote rates.csv params.csv phi.csv saturated.csv  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn nowcast(a: &FitArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("nowcast", r);
    let panel = fit_input(a, cfg)?;
    let spec = r.model_spec(panel.labels())?;
    print_spec(&panel, &spec);
    let rows = nowcast_series(&panel, &spec, &r.sampler)?;
    emit(&r.out, "nowcast.csv", &rows)?;
    io::write_rates(&nowcast_rates(&rows), create(&r.out, "nowcast_rates.csv")?)?;
    let failed: Vec<String> = rows.iter().filter(|x| x.median.is_none()).map(|x| format!("{}: {}", x.t, x.error)).collect();
    let unconverged = rows.iter().filter(|x| x.median.is_some() && !x.converged).count();
    println!("{:>4} {:>8} {:>8} {:>8}", "t", "median", "lower", "upper");
    for row in &rows {
        println!("{:>4} {:>8} {:>8} {:>8}", row.t, fmt_opt(row.median), fmt_opt(row.lower), fmt_opt(row.upper));
    }
    println!("fits: {}  failed: {}  not converged: {}", rows.len(), failed.len(), unconverged);
    for f in &failed {
        println!("  failed at t={f}");
    }
    println!("wrote nowcast.csv nowcast_rates.csv  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn sim_study(a: &SimStudyArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("sim-study", r);
    let (cells, records) = match &a.recompute {
        Some(path) => {
            let records = read_records(open(path)?).with_context(|| format!("reading {}", path.display()))?;
            (cells_from_records(&records), None)
        }
        None => {
            let base = match r.scale {
                Scale::Desk => SimConfig::desk(r.seed),
                Scale::Paper => SimConfig::paper(r.seed),
            };
            let mut sc = cfg.sim_study.apply(base);
            sc.sampler = r.sampler;
            if let Some(n) = a.n_reps {
                sc.n_reps = n;
            }
            if !a.time_points.is_empty() {
                sc.time_points = a.time_points.clone();
            }
            println!(
                "reps: {}  time points: {:?}  chains: {}x{}+{}",
                sc.n_reps, sc.time_points, sc.sampler.n_chains, sc.sampler.burn_in, sc.sampler.n_draws
            );
            let grid = run_grid(&sc)?;
            (grid.cells, Some(grid.records))
        }
    };
    write_cells(&cells, create(&r.out, "sim_results.csv")?)?;
    if let Some(records) = &records {
        write_records(records, create(&r.out, "sim_errors.csv")?)?;
    }
    println!("{:>3} {:>9} {:>14} {:>5} {:>10} {:>10}", "T", "truth", "fit", "fail", "mse", "mcse");
    for c in &cells {
        println!(
            "{:>3} {:>9} {:>14} {:>5} {:>10} {:>10}",
            c.time_points,
            c.truth.as_str(),
            c.fit.as_str(),
            c.failures,
            c.mse.map_or("n/a".into(), |v| format!("{v:.6}")),
            c.mcse.map_or("n/a".into(), |v| format!("{v:.6}")),
        );
    }
    let written = if records.is_some() { "sim_results.csv sim_errors.csv" } else { "sim_results.csv" };
    println!("wrote {written}  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn align(a: &AlignArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("align", r);
    let path = require(a.records.as_deref(), cfg.inputs.records.as_deref(), "records")?;
    let records = io::read_records(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let aligned = align_dates(&records, &a.benchmark_survey, a.population)?;
    write_panel(&aligned.panel, create(&r.out, "panel.csv")?)?;
    #[derive(Serialize)]
    struct DateRow {
        t: usize,
        date: String,
    }
    let dates: Vec<DateRow> =
        aligned.dates.iter().enumerate().map(|(t, d)| DateRow { t: t + 1, date: d.to_string() }).collect();
    emit(&r.out, "dates.csv", &dates)?;
    println!(
        "records: {}  surveys: {}  time points: {}  cells: {}  dropped: {}",
        records.len(),
        aligned.panel.n_surveys(),
        aligned.panel.n_times(),
        aligned.panel.n_observed(),
        aligned.warnings.len()
    );
    for w in &aligned.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote panel.csv dates.csv  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}

fn load_rates(path: &Path) -> anyhow::Result<Vec<RateRow>> {
    io::read_rates(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn report(a: &ReportArgs, cfg: &RunConfig, r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    header("report", r);
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(ConfigError(format!("--alpha {} outside (0, 1)", a.alpha)).into());
    }
    let baseline = load_rates(require(a.baseline.as_deref(), cfg.inputs.baseline.as_deref(), "baseline")?)?;
    let method = load_rates(require(a.method.as_deref(), cfg.inputs.method.as_deref(), "method")?)?;
    let times = match (&a.panel, &a.anchor) {
        (Some(p), Some(anchor)) => {
            let panel = load_panel(p)?;
            let k = panel
                .survey_index(anchor)
                .ok_or_else(|| ConfigError(format!("--anchor `{anchor}` not in {}", p.display())))?;
            Some(observed_times(&panel, k))
        }
        (None, None) => None,
        _ => return Err(ConfigError("--panel and --anchor go together".into()).into()),
    };
    let ratios = ci_width_ratio(&baseline, &method, times.as_deref());
    emit(&r.out, "ratios.csv", &ratios.rows)?;
    let niid = n_iid_gain(&baseline, &method, a.alpha, times.as_deref());
    emit(&r.out, "niid.csv", &niid.rows)?;
    println!("paired time points: {}", ratios.rows.len());
    println!("CI width ratio  mean: {}  median: {}", fmt_opt(ratios.mean), fmt_opt(ratios.median));
    if !ratios.undefined.is_empty() {
        println!("  undefined at t = {:?}", ratios.undefined);
    }
    println!("n_iid gain  mean: {}  median: {}  (z = {:.4})", fmt_opt(niid.mean_gain), fmt_opt(niid.median_gain), niid.z);

    let bench_path = a.benchmark.as_deref().or(cfg.inputs.benchmark.as_deref());
    let mut written = String::from("ratios.csv niid.csv");
    if let Some(p) = bench_path {
        let points = io::read_benchmark(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        let mut bench = BenchmarkSeries::new(points)?;
        if let Some(m) = a.margin {
            bench = bench.with_margin(m);
        }
        let cov = coverage_vs_benchmark(&method, &bench);
        #[derive(Serialize)]
        struct CoverageRow {
            t: usize,
            lower: f64,
            upper: f64,
            benchmark: f64,
            margin: f64,
            hit: bool,
        }
        let rows: Vec<CoverageRow> = method
            .iter()
            .filter_map(|m| {
                bench.get(m.t).map(|b| CoverageRow {
                    t: m.t,
                    lower: m.lower,
                    upper: m.upper,
                    benchmark: b.rate,
                    margin: b.margin,
                    hit: !cov.misses.contains(&m.t),
                })
            })
            .collect();
        emit(&r.out, "coverage.csv", &rows)?;
        println!("benchmark coverage: {}/{}  misses: {:?}", cov.hits, cov.total, cov.misses);
        written.push_str(" coverage.csv");
    }
    println!("wrote {written}  ({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}
