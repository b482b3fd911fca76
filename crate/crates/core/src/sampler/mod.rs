//! Adaptive Hamiltonian Monte Carlo over the BTD posterior.
//!
//! Each chain runs static-length HMC with a trajectory length drawn
//! uniformly from `1..=L_max`. Warmup adapts the step size by dual averaging
//! and a diagonal metric over doubling windows; `L_max` follows the step size
//! so that the mean integration time stays near a quarter period of a unit
//! normal.
//!
//! Chain `c` draws from a ChaCha20 stream seeded with `seed` and selected with
//! `set_stream(c + 1)`, so adding chains never perturbs existing ones.

mod diagnostics;
mod hmc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{
    compute_diagnostics, effective_sample_size, split_rhat, Diagnostics, RHAT_DIVERGED,
};
pub use hmc::{leapfrog_step, DualAverage, LogDensity, PhasePoint, DIVERGENCE_THRESHOLD};

use crate::domain::{Dataset, DemographicAxis};
use crate::likelihood::{
    centered_adjustments, BtdPosterior, LikelihoodError, MetricData, ModelSpec, ParameterState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("non-finite log density or gradient")]
    NonFiniteGradient,
    #[error("{divergent} of {total} post-warmup transitions diverged")]
    DivergenceFlood { divergent: usize, total: usize },
    #[error("diagnostics need at least 2 chains of 10 draws, got {chains} x {draws}")]
    InsufficientDraws { chains: usize, draws: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("draw violates parameter invariants: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub max_leapfrog_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            target_accept: 0.8,
            seed: 0,
            max_leapfrog_steps: 1024,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_owned()));
        if self.n_chains < 1 || self.n_draws < 1 || self.max_leapfrog_steps < 1 {
            return bad("chain, draw and leapfrog counts must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One post-warmup draw on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub chain: usize,
    pub iteration: usize,
    /// Sum-to-zero skills.
    pub theta: Vec<f64>,
    /// Centred, scaled adjustments per axis, row-major `(model, group)`.
    pub u: [Vec<f64>; 3],
    /// Raw adjustments per axis, row-major `(model, group)`.
    pub u_raw: [Vec<f64>; 3],
    pub tau: [f64; 3],
    pub nu: f64,
}

impl ParameterSnapshot {
    pub fn n_models(&self) -> usize {
        self.theta.len()
    }

    pub fn n_groups(&self, axis: usize) -> usize {
        self.u[axis].len().checked_div(self.theta.len()).unwrap_or(0)
    }

    pub fn adjustment(&self, axis: usize, model: usize, group: usize) -> f64 {
        self.u[axis][model * self.n_groups(axis) + group]
    }

    /// Constrained scalars in [`scalar_names`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.theta.clone();
        for u in &self.u {
            out.extend_from_slice(u);
        }
        out.extend_from_slice(&self.tau);
        out.push(self.nu);
        out
    }

    fn from_state(state: &ParameterState, spec: &ModelSpec, chain: usize, iteration: usize) -> Self {
        Self {
            chain,
            iteration,
            theta: state.theta(),
            u: DemographicAxis::ALL.map(|a| centered_adjustments(state, spec, a)),
            u_raw: state.u_raw.clone(),
            tau: state.log_tau.map(f64::exp),
            nu: state.nu(),
        }
    }

    fn check_invariants(&self) -> Result<(), SamplerError> {
        let sum: f64 = self.theta.iter().sum();
        if sum.abs() > 1e-10 {
            return Err(SamplerError::InvariantViolation(format!("skills sum to {sum}")));
        }
        if self.tau.iter().chain([&self.nu]).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SamplerError::InvariantViolation(
                "non-positive scale or tie propensity".into(),
            ));
        }
        let finite = self
            .theta
            .iter()
            .chain(self.u.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(SamplerError::InvariantViolation("non-finite value".into()));
        }
        Ok(())
    }
}

/// Labels that make a draw set self-describing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawLabels {
    pub metric: String,
    pub models: Vec<String>,
    pub groups: [Vec<String>; 3],
}

impl DrawLabels {
    pub fn from_dataset(ds: &Dataset, metric: &str) -> Self {
        Self {
            metric: metric.to_owned(),
            models: ds.model_index.names().to_vec(),
            groups: [0, 1, 2].map(|k| ds.group_index[k].names().to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub labels: DrawLabels,
    pub alpha: f64,
    pub n_chains: usize,
    pub n_draws: usize,
    /// Chain-major: all of chain 0, then chain 1, ...
    pub draws: Vec<ParameterSnapshot>,
    pub divergence_count: usize,
    pub acceptance_rate: Vec<f64>,
    pub step_size: Vec<f64>,
}

impl PosteriorDraws {
    pub fn chain(&self, c: usize) -> &[ParameterSnapshot] {
        &self.draws[c * self.n_draws..(c + 1) * self.n_draws]
    }

    pub fn n_models(&self) -> usize {
        self.labels.models.len()
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.labels.models.iter().position(|m| m == name)
    }

    pub fn group_index(&self, axis: DemographicAxis, label: &str) -> Option<usize> {
        self.labels.groups[axis.index()].iter().position(|g| g == label)
    }

    /// Posterior mean of each scalar in [`scalar_names`] order.
    pub fn posterior_mean(&self) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for d in &self.draws {
            let flat = d.flatten();
            if acc.is_empty() {
                acc = vec![0.0; flat.len()];
            }
            for (a, v) in acc.iter_mut().zip(flat) {
                *a += v;
            }
        }
        let n = self.draws.len().max(1) as f64;
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// Names of the constrained scalars, matching [`ParameterSnapshot::flatten`].
pub fn scalar_names(labels: &DrawLabels) -> Vec<String> {
    let mut names: Vec<String> = labels.models.iter().map(|m| format!("theta[{m}]")).collect();
    for axis in DemographicAxis::ALL {
        for m in &labels.models {
            for g in &labels.groups[axis.index()] {
                names.push(format!("u_{axis}[{m},{g}]"));
            }
        }
    }
    for axis in DemographicAxis::ALL {
        names.push(format!("tau_{axis}"));
    }
    names.push("nu".to_owned());
    names
}

struct ChainResult {
    states: Vec<Vec<f64>>,
    divergences: usize,
    accept_sum: f64,
    step_size: f64,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

fn trajectory_cap(step_size: f64, max_steps: usize) -> usize {
    let steps = (std::f64::consts::PI / step_size).ceil();
    if steps.is_finite() {
        (steps as usize).clamp(1, max_steps)
    } else {
        max_steps
    }
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainResult, SamplerError> {
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, chain);

    let mut current = None;
    for _ in 0..100 {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(p) = PhasePoint::new(target, x, vec![0.0; dim]) {
            current = Some(p);
            break;
        }
    }
    let mut current = current.ok_or(SamplerError::NonFiniteGradient)?;

    let mut inv_mass = vec![1.0; dim];
    let mut step = hmc::find_reasonable_step_size(target, &current, &inv_mass, &mut rng);
    let mut dual = DualAverage::new(config.target_accept, step);
    let windows = hmc::slow_windows(config.n_warmup);
    let mut window_idx = 0;
    let mut welford = hmc::Welford::new(dim);

    for it in 0..config.n_warmup {
        let n_steps = rng.random_range(1..=trajectory_cap(step, config.max_leapfrog_steps));
        let tr = hmc::hmc_transition(target, &mut current, step, n_steps, &inv_mass, &mut rng);
        dual.update(tr.accept_stat);
        step = dual.step_size();

        if let Some(&(start, end)) = windows.get(window_idx) {
            if it >= start && it < end {
                welford.add(&current.position);
            }
            if it + 1 == end {
                inv_mass = welford.regularized_variance();
                welford = hmc::Welford::new(dim);
                window_idx += 1;
                step = hmc::find_reasonable_step_size(target, &current, &inv_mass, &mut rng);
                dual = DualAverage::new(config.target_accept, step);
            }
        }
    }
    if config.n_warmup > 0 {
        step = dual.final_step_size();
    }

    let cap = trajectory_cap(step, config.max_leapfrog_steps);
    let mut states = Vec::with_capacity(config.n_draws);
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    for _ in 0..config.n_draws {
        let n_steps = rng.random_range(1..=cap);
        let tr = hmc::hmc_transition(target, &mut current, step, n_steps, &inv_mass, &mut rng);
        divergences += usize::from(tr.divergent);
        accept_sum += tr.accept_stat;
        states.push(current.position.clone());
    }
    Ok(ChainResult {
        states,
        divergences,
        accept_sum,
        step_size: step,
    })
}

/// Runs all chains against an arbitrary target and returns the raw
/// post-warmup positions, chain-major.
pub fn sample_target<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
) -> Result<(Vec<Vec<Vec<f64>>>, usize), SamplerError> {
    config.validate()?;
    let results: Vec<ChainResult> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_, _>>()?;
    let divergences = results.iter().map(|r| r.divergences).sum();
    Ok((results.into_iter().map(|r| r.states).collect(), divergences))
}

/// Samples the posterior of one metric's compressed data.
pub fn sample_posterior(
    data: &MetricData,
    spec: &ModelSpec,
    config: &SamplerConfig,
    labels: DrawLabels,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let target = BtdPosterior::new(spec.clone(), data.clone())?;
    let results: Vec<ChainResult> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&target, config, c))
        .collect::<Result<_, _>>()?;

    let total = config.n_chains * config.n_draws;
    let divergence_count: usize = results.iter().map(|r| r.divergences).sum();
    if divergence_count * 10 > total {
        return Err(SamplerError::DivergenceFlood {
            divergent: divergence_count,
            total,
        });
    }

    let mut draws = Vec::with_capacity(total);
    for (c, r) in results.iter().enumerate() {
        for (i, x) in r.states.iter().enumerate() {
            let state = ParameterState::from_flat(spec, x)?;
            let snap = ParameterSnapshot::from_state(&state, spec, c, i);
            snap.check_invariants()?;
            draws.push(snap);
        }
    }
    Ok(PosteriorDraws {
        labels,
        alpha: spec.alpha,
        n_chains: config.n_chains,
        n_draws: config.n_draws,
        draws,
        divergence_count,
        acceptance_rate: results
            .iter()
            .map(|r| r.accept_sum / config.n_draws as f64)
            .collect(),
        step_size: results.iter().map(|r| r.step_size).collect(),
    })
}

/// Compiles one metric of `dataset` and samples its posterior.
pub fn fit_metric(
    dataset: &Dataset,
    metric: &str,
    spec: &ModelSpec,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let data = MetricData::compile(dataset, metric)?;
    sample_posterior(&data, spec, config, DrawLabels::from_dataset(dataset, metric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 2,
            n_warmup: 300,
            n_draws: 500,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SamplerConfig::default();
        assert!(c.validate().is_ok());
        c.target_accept = 1.0;
        assert!(c.validate().is_err());
        c = SamplerConfig {
            n_chains: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn chain_streams_are_independent_of_chain_count() {
        let spec = ModelSpec::new(3, [2, 0, 0]);
        let labels = DrawLabels::default();
        let mut cfg = prior_config(7);
        cfg.n_warmup = 50;
        cfg.n_draws = 20;
        let two = sample_posterior(&MetricData::default(), &spec, &cfg, labels.clone()).unwrap();
        cfg.n_chains = 3;
        let three = sample_posterior(&MetricData::default(), &spec, &cfg, labels).unwrap();
        assert_eq!(two.chain(1), &three.chain(1)[..]);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ModelSpec::new(3, [2, 2, 0]);
        let cfg = SamplerConfig {
            n_warmup: 60,
            n_draws: 30,
            seed: 11,
            ..Default::default()
        };
        let a = sample_posterior(&MetricData::default(), &spec, &cfg, DrawLabels::default()).unwrap();
        let b = sample_posterior(&MetricData::default(), &spec, &cfg, DrawLabels::default()).unwrap();
        assert_eq!(a, b);
        let flat_a: Vec<u64> = a.draws.iter().flat_map(|d| d.flatten()).map(f64::to_bits).collect();
        let flat_b: Vec<u64> = b.draws.iter().flat_map(|d| d.flatten()).map(f64::to_bits).collect();
        assert_eq!(flat_a, flat_b);
    }

    #[test]
    fn scalar_names_match_flatten() {
        let spec = ModelSpec::new(2, [3, 1, 0]);
        let labels = DrawLabels {
            metric: "m".into(),
            models: vec!["a".into(), "b".into()],
            groups: [
                vec!["x".into(), "y".into(), "z".into()],
                vec!["w".into()],
                vec![],
            ],
        };
        let snap = ParameterSnapshot::from_state(&ParameterState::zeros(&spec), &spec, 0, 0);
        let names = scalar_names(&labels);
        assert_eq!(names.len(), snap.flatten().len());
        assert_eq!(names[0], "theta[a]");
        assert_eq!(names[2], "u_age[a,x]");
        assert_eq!(names.last().unwrap(), "nu");
    }

    #[test]
    fn trajectory_cap_bounds() {
        assert_eq!(trajectory_cap(1e-9, 1024), 1024);
        assert_eq!(trajectory_cap(10.0, 1024), 1);
        assert_eq!(trajectory_cap(0.1, 1024), 32);
    }
}
