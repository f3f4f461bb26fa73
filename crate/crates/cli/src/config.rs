//! TOML run configuration and its merge with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use surveysynth::datagen::PriorRegime;
use surveysynth::mcmc::SamplerSettings;
use surveysynth::model::{BiasKind, BiasModelSpec, ModelSpec, PriorSpec};
use surveysynth::simstudy::SimConfig;

/// Raised for unusable configuration; reported with category `config`.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new(ConfigError(format!($($arg)*))))
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PriorPreset {
    Default,
    Narrowed,
    LowInitialRate,
}

impl PriorPreset {
    pub fn priors(self) -> PriorSpec {
        match self {
            PriorPreset::Default => PriorSpec::default(),
            PriorPreset::Narrowed => PriorSpec::narrowed(),
            PriorPreset::LowInitialRate => PriorSpec::low_initial_rate(),
        }
    }
}

/// Whole configuration document. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub out: Option<PathBuf>,
    pub model: ModelOptions,
    pub sampler: SamplerOverrides,
    pub simulate: SimulateOptions,
    pub sim_study: SimStudyOptions,
    pub inputs: Inputs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub prior_preset: Option<PriorPreset>,
    /// Complete prior block; replaces the preset when given.
    pub priors: Option<PriorSpec>,
    /// Same syntax as `--bias`: `KIND` or `SURVEY=KIND`.
    pub bias: Vec<String>,
    pub monotone_walk: bool,
    pub exact_nchg: bool,
    pub center_time: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOverrides {
    pub n_chains: Option<usize>,
    pub burn_in: Option<usize>,
    pub n_draws: Option<usize>,
    pub thin: Option<usize>,
    pub target_accept: Option<f64>,
    pub adapt_window: Option<usize>,
}

impl SamplerOverrides {
    pub fn apply(&self, mut s: SamplerSettings) -> SamplerSettings {
        s.n_chains = self.n_chains.unwrap_or(s.n_chains);
        s.burn_in = self.burn_in.unwrap_or(s.burn_in);
        s.n_draws = self.n_draws.unwrap_or(s.n_draws);
        s.thin = self.thin.unwrap_or(s.thin);
        s.target_accept = self.target_accept.unwrap_or(s.target_accept);
        s.adapt_window = self.adapt_window.unwrap_or(s.adapt_window);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub population: u64,
    pub time_points: usize,
    pub anchor_n: u64,
    pub biased_n: u64,
    /// Kinds of the biased surveys; the anchor is always added first.
    pub bias: Vec<BiasKind>,
    pub regime: PriorRegime,
    pub monotone_walk: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            population: 10_000,
            time_points: 10,
            anchor_n: 100,
            biased_n: 1000,
            bias: vec![BiasKind::Linear, BiasKind::Linear],
            regime: PriorRegime::Default,
            monotone_walk: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimStudyOptions {
    pub population: Option<u64>,
    pub anchor_n: Option<u64>,
    pub biased_n: Option<u64>,
    pub n_biased: Option<usize>,
    pub time_points: Option<Vec<usize>>,
    pub n_reps: Option<usize>,
}

impl SimStudyOptions {
    pub fn apply(&self, mut c: SimConfig) -> SimConfig {
        c.population = self.population.unwrap_or(c.population);
        c.anchor_n = self.anchor_n.unwrap_or(c.anchor_n);
        c.biased_n = self.biased_n.unwrap_or(c.biased_n);
        c.n_biased = self.n_biased.unwrap_or(c.n_biased);
        c.time_points = self.time_points.clone().unwrap_or(c.time_points);
        c.n_reps = self.n_reps.unwrap_or(c.n_reps);
        c
    }
}

/// Input file paths, relative to the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub panel: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub method: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::Error::new(ConfigError(format!("{}: {e}", path.display()))))
    }
}

/// One `--bias` entry.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasArg {
    All(BiasKind),
    Survey(String, BiasKind),
}

pub fn parse_bias(s: &str) -> anyhow::Result<BiasArg> {
    let parse_kind = |k: &str| {
        k.trim().parse::<BiasKind>().map_err(|e| anyhow::Error::new(ConfigError(format!("--bias {s}: {e}"))))
    };
    match s.split_once('=') {
        Some((survey, kind)) => Ok(BiasArg::Survey(survey.trim().to_string(), parse_kind(kind)?)),
        None => Ok(BiasArg::All(parse_kind(s)?)),
    }
}

/// Bias model per survey. Surveys not named explicitly take the last bare
/// kind (default `walk`); unless some survey is named `known`, the first
/// survey is the anchor. Surveys are named by label or 1-based index.
pub fn bias_specs(labels: &[String], args: &[BiasArg]) -> anyhow::Result<Vec<BiasModelSpec>> {
    let mut default_kind = BiasKind::Walk;
    let mut named: BTreeMap<usize, BiasKind> = BTreeMap::new();
    for a in args {
        match a {
            BiasArg::All(BiasKind::Known) => {
                config_bail!("`known` applies to one survey; use SURVEY=known")
            }
            BiasArg::All(kind) => default_kind = *kind,
            BiasArg::Survey(name, kind) => {
                let k = labels
                    .iter()
                    .position(|l| l == name)
                    .or_else(|| name.parse::<usize>().ok().filter(|&i| i >= 1 && i <= labels.len()).map(|i| i - 1));
                match k {
                    Some(k) => {
                        named.insert(k, *kind);
                    }
                    None => config_bail!("--bias names unknown survey `{name}`"),
                }
            }
        }
    }
    let explicit_anchor = named.values().any(|&k| k == BiasKind::Known);
    Ok((0..labels.len())
        .map(|k| {
            let kind = named.get(&k).copied().unwrap_or(if k == 0 && !explicit_anchor {
                BiasKind::Known
            } else {
                default_kind
            });
            BiasModelSpec::of(kind)
        })
        .collect())
}

/// Settings shared by all commands after merging file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub scale: Scale,
    pub out: PathBuf,
    pub sampler: SamplerSettings,
    pub bias: Vec<BiasArg>,
    pub priors: PriorSpec,
    pub monotone: bool,
    pub exact_nchg: bool,
    pub center_time: bool,
}

impl Resolved {
    pub fn model_spec(&self, labels: &[String]) -> anyhow::Result<ModelSpec> {
        let mut spec = ModelSpec::new(bias_specs(labels, &self.bias)?).with_priors(self.priors).monotone(self.monotone);
        spec.use_exact_nchg = self.exact_nchg;
        spec.center_time = self.center_time;
        Ok(spec)
    }
}

pub struct FlagValues<'a> {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub out: Option<&'a Path>,
    pub bias: &'a [String],
    pub priors: Option<PriorPreset>,
    pub monotone: bool,
    pub exact_nchg: bool,
}

pub fn resolve(cfg: &RunConfig, flags: &FlagValues<'_>) -> anyhow::Result<Resolved> {
    let seed = flags.seed.or(cfg.seed).unwrap_or(0);
    let scale = flags.scale.or(cfg.scale).unwrap_or_default();
    let base = match scale {
        Scale::Desk => SamplerSettings::desk(seed),
        Scale::Paper => SamplerSettings::paper(seed),
    };
    let sampler = cfg.sampler.apply(base);
    if let Err(e) = sampler.check() {
        config_bail!("sampler settings: {e}");
    }
    let mut bias = Vec::new();
    for s in cfg.model.bias.iter().chain(flags.bias) {
        bias.push(parse_bias(s)?);
    }
    let priors = match (flags.priors, cfg.model.priors, cfg.model.prior_preset) {
        (Some(p), _, _) => p.priors(),
        (None, Some(p), _) => p,
        (None, None, Some(p)) => p.priors(),
        (None, None, None) => PriorSpec::default(),
    };
    if let Err(e) = priors.check() {
        config_bail!("priors: {e}");
    }
    Ok(Resolved {
        seed,
        scale,
        out: flags.out.map(Path::to_path_buf).or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        sampler,
        bias,
        priors,
        monotone: flags.monotone || cfg.model.monotone_walk,
        exact_nchg: flags.exact_nchg || cfg.model.exact_nchg,
        center_time: cfg.model.center_time.unwrap_or(true),
    })
}

pub fn require<'a>(flag: Option<&'a Path>, file: Option<&'a Path>, name: &str) -> anyhow::Result<&'a Path> {
    match flag.or(file) {
        Some(p) => Ok(p),
        None => bail!(ConfigError(format!("missing input: pass --{name} or set inputs.{name} in the config"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    #[test]
    fn default_bias_layout() {
        let b = bias_specs(&labels(), &[]).unwrap();
        let kinds: Vec<_> = b.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, [BiasKind::Known, BiasKind::Walk, BiasKind::Walk]);
    }

    #[test]
    fn named_anchor_replaces_first() {
        let args = vec![parse_bias("linear").unwrap(), parse_bias("c=known").unwrap(), parse_bias("1=constant").unwrap()];
        let kinds: Vec<_> = bias_specs(&labels(), &args).unwrap().iter().map(|b| b.kind).collect();
        assert_eq!(kinds, [BiasKind::Constant, BiasKind::Linear, BiasKind::Known]);
    }

    #[test]
    fn bad_bias_entries() {
        assert!(parse_bias("wobbly").is_err());
        assert!(bias_specs(&labels(), &[parse_bias("known").unwrap()]).is_err());
        assert!(bias_specs(&labels(), &[parse_bias("z=walk").unwrap()]).is_err());
        assert!(bias_specs(&labels(), &[parse_bias("4=walk").unwrap()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2\n").is_err());
        assert!(toml::from_str::<RunConfig>("[sampler]\nchains = 2\n").is_err());
        let c: RunConfig = toml::from_str("seed = 4\n[sampler]\nn_chains = 2\n[model]\nbias = [\"linear\"]\n").unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.sampler.n_chains, Some(2));
    }

    #[test]
    fn flags_override_file() {
        let c: RunConfig = toml::from_str("seed = 4\nscale = \"paper\"\n[sampler]\nn_chains = 2\n").unwrap();
        let flags = FlagValues { seed: Some(9), scale: None, out: None, bias: &[], priors: None, monotone: true, exact_nchg: false };
        let r = resolve(&c, &flags).unwrap();
        assert_eq!((r.seed, r.scale, r.sampler.n_chains, r.sampler.burn_in), (9, Scale::Paper, 2, 20_000));
        assert_eq!(r.sampler.seed, 9);
        assert!(r.monotone);
    }
}
