use std::path::{Path, PathBuf};

use arena_core::sampler::SamplerConfig;
use arena_core::scoring::CountryMix;
use serde::{Deserialize, Serialize};

use crate::{CliError, GlobalOpts};

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub census: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<Vec<String>>,
    pub country_mix: Option<String>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub draws: Option<usize>,
    pub warmup: Option<usize>,
    pub target_accept: Option<f64>,
    pub allow_prior: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.census, &mut cfg.mapping, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flags merged over the config file over defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub census: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub out: PathBuf,
    pub metrics: Option<Vec<String>>,
    pub country_mix: Option<CountryMix>,
    pub sampler: SamplerConfig,
    pub allow_prior: bool,
}

impl RunConfig {
    pub fn resolve(opts: &GlobalOpts) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let defaults = SamplerConfig::default();
        let sampler = SamplerConfig {
            n_chains: opts.chains.or(file.chains).unwrap_or(defaults.n_chains),
            n_draws: opts.draws.or(file.draws).unwrap_or(defaults.n_draws),
            n_warmup: opts.warmup.or(file.warmup).unwrap_or(defaults.n_warmup),
            seed: opts.seed.or(file.seed).unwrap_or(defaults.seed),
            target_accept: file.target_accept.unwrap_or(defaults.target_accept),
            ..defaults
        };
        sampler.validate()?;
        let country_mix = opts
            .country_mix
            .clone()
            .or(file.country_mix)
            .map(|s| CountryMix::parse(&s))
            .transpose()?;
        let metrics = opts.metrics.clone().or(file.metrics).filter(|m| !m.is_empty());
        let cfg = Self {
            dataset: file.dataset,
            census: file.census,
            mapping: file.mapping,
            out: opts.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            metrics,
            country_mix,
            sampler,
            allow_prior: file.allow_prior.unwrap_or(false),
        };
        for p in [&cfg.dataset, &cfg.census, &cfg.mapping].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }
}
