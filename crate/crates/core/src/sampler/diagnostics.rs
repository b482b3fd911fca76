//! Rank-normalised split-R̂ and bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{scalar_names, PosteriorDraws, SamplerError};

/// Reported R̂ when chains disagree but have no within-chain variation.
pub const RHAT_DIVERGED: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub divergence_count: usize,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn compute_diagnostics(draws: &PosteriorDraws) -> Result<Diagnostics, SamplerError> {
    if draws.n_chains < 2 || draws.n_draws < 10 {
        return Err(SamplerError::InsufficientDraws {
            chains: draws.n_chains,
            draws: draws.n_draws,
        });
    }
    let flat: Vec<Vec<f64>> = draws.draws.iter().map(|d| d.flatten()).collect();
    let n_scalars = flat.first().map_or(0, Vec::len);
    let mut rhat = Vec::with_capacity(n_scalars);
    let mut ess = Vec::with_capacity(n_scalars);
    for j in 0..n_scalars {
        let chains: Vec<Vec<f64>> = (0..draws.n_chains)
            .map(|c| {
                flat[c * draws.n_draws..(c + 1) * draws.n_draws]
                    .iter()
                    .map(|x| x[j])
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        rhat.push(split_rhat(&refs)?);
        ess.push(effective_sample_size(&refs)?);
    }
    let mut names = scalar_names(&draws.labels);
    if names.len() != n_scalars {
        names = (0..n_scalars).map(|j| format!("x[{j}]")).collect();
    }
    Ok(Diagnostics {
        names,
        rhat,
        ess,
        acceptance_rate: draws.acceptance_rate.clone(),
        divergence_count: draws.divergence_count,
    })
}

fn check_shape(chains: &[&[f64]]) -> Result<usize, SamplerError> {
    let n = chains.first().map_or(0, |c| c.len());
    if chains.len() < 2 || n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(SamplerError::InsufficientDraws {
            chains: chains.len(),
            draws: n,
        });
    }
    Ok(n)
}

/// Halves each chain, dropping the middle draw of odd-length chains.
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of pooled fractional ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn classic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = chains.iter().map(|c| sample_var(c)).sum::<f64>() / chains.len() as f64;
    let between_over_n = sample_var(&means);
    if within <= 0.0 {
        return if between_over_n <= 0.0 { 1.0 } else { RHAT_DIVERGED };
    }
    let var_plus = (n - 1.0) / n * within + between_over_n;
    (var_plus / within).sqrt()
}

/// Rank-normalised split-R̂: the larger of the bulk and folded
/// (`|x - median|`) statistics.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64, SamplerError> {
    check_shape(chains)?;
    let halves = split(chains);
    let bulk = classic_rhat(&rank_normalize(&halves));

    let mut pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mid = pooled.len() / 2;
    let median = if pooled.len() % 2 == 0 {
        0.5 * (pooled[mid - 1] + pooled[mid])
    } else {
        pooled[mid]
    };
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - median).abs()).collect())
        .collect();
    let tail = classic_rhat(&rank_normalize(&folded));
    Ok(bulk.max(tail))
}

fn autocov(xs: &[f64], lag: usize, m: f64) -> f64 {
    let n = xs.len();
    xs[..n - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence, computed on
/// rank-normalised split chains.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64, SamplerError> {
    check_shape(chains)?;
    let z = rank_normalize(&split(chains));
    Ok(ess_raw(&z))
}

fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let total = m * nf;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, lag, mu))
            .sum::<f64>()
            / m
    };
    let acov0 = mean_acov(0);
    let mean_var = acov0 * nf / (nf - 1.0);
    let var_plus = mean_var * (nf - 1.0) / nf + sample_var(&means);
    if !(var_plus > 0.0) {
        return total;
    }

    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 4 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}
