//! Bradley-Terry-Davidson likelihood with hierarchical demographic
//! adjustments, and its closed-form gradient.
//!
//! For a comparison of model `a` against model `b` judged by a rater with
//! per-axis membership weights `w`, the latent advantage is
//!
//! ```text
//! eta = (theta_a - theta_b) + alpha * sum_axis <w_axis, u_axis[a] - u_axis[b]>
//! ```
//!
//! where `u_axis[i] = (u_raw_axis[i] - mean(u_raw_axis[i])) * tau_axis`, and the
//! outcome probabilities are `(e^eta, nu, e^-eta) / Z`.
//!
//! Sampling happens on an unconstrained vector: skills live in an orthonormal
//! sum-to-zero (Helmert) basis, and both `tau` and `nu` are sampled on the log
//! scale with the matching Jacobian terms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{sparse_membership_weights, ComparisonRecord, Dataset, DemographicAxis, Index};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tie propensity must be positive, got {0}")]
    NonPositiveNu(f64),
    #[error("index {index} out of range for {what} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_models: usize,
    pub n_groups: [usize; 3],
    /// Scale applied to the summed demographic effect.
    pub alpha: f64,
    /// Rate of the exponential prior on each axis scale.
    pub tau_prior_rate: f64,
    pub theta_prior_sd: f64,
    pub log_nu_prior_sd: f64,
}

impl ModelSpec {
    pub fn new(n_models: usize, n_groups: [usize; 3]) -> Self {
        Self {
            n_models,
            n_groups,
            alpha: 1.0 / 3f64.sqrt(),
            tau_prior_rate: 12.0,
            theta_prior_sd: 1.0,
            log_nu_prior_sd: 1.0,
        }
    }

    pub fn for_dataset(ds: &Dataset) -> Self {
        Self::new(ds.n_models(), ds.n_groups())
    }

    pub fn validate(&self) -> Result<(), LikelihoodError> {
        let bad = |m: &str| Err(LikelihoodError::InvalidSpec(m.to_owned()));
        if self.n_models < 1 {
            return bad("n_models must be at least 1");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.tau_prior_rate > 0.0) {
            return bad("tau_prior_rate must be positive");
        }
        if !(self.theta_prior_sd > 0.0) || !(self.log_nu_prior_sd > 0.0) {
            return bad("prior standard deviations must be positive");
        }
        Ok(())
    }

    /// Length of the unconstrained parameter vector.
    pub fn dim(&self) -> usize {
        self.n_models.saturating_sub(1)
            + self.n_groups.iter().map(|g| g * self.n_models).sum::<usize>()
            + 4
    }

    fn u_offset(&self, axis: usize) -> usize {
        self.n_models.saturating_sub(1)
            + self.n_groups[..axis]
                .iter()
                .map(|g| g * self.n_models)
                .sum::<usize>()
    }

    fn log_tau_offset(&self) -> usize {
        self.dim() - 4
    }
}

/// Latent parameters on the unconstrained sampling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub theta_free: Vec<f64>,
    /// Row-major `(model, group)` raw adjustments per axis.
    pub u_raw: [Vec<f64>; 3],
    pub log_tau: [f64; 3],
    pub log_nu: f64,
}

impl ParameterState {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            theta_free: vec![0.0; spec.n_models.saturating_sub(1)],
            u_raw: [0, 1, 2].map(|k| vec![0.0; spec.n_models * spec.n_groups[k]]),
            log_tau: [0.0; 3],
            log_nu: 0.0,
        }
    }

    pub fn from_flat(spec: &ModelSpec, x: &[f64]) -> Result<Self, LikelihoodError> {
        if x.len() != spec.dim() {
            return Err(LikelihoodError::DimensionMismatch {
                expected: spec.dim(),
                got: x.len(),
            });
        }
        let nf = spec.n_models.saturating_sub(1);
        let u_raw = [0, 1, 2].map(|k| {
            let off = spec.u_offset(k);
            x[off..off + spec.n_models * spec.n_groups[k]].to_vec()
        });
        let t = spec.log_tau_offset();
        Ok(Self {
            theta_free: x[..nf].to_vec(),
            u_raw,
            log_tau: [x[t], x[t + 1], x[t + 2]],
            log_nu: x[t + 3],
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = self.theta_free.clone();
        for raw in &self.u_raw {
            x.extend_from_slice(raw);
        }
        x.extend_from_slice(&self.log_tau);
        x.push(self.log_nu);
        x
    }

    pub fn check_dims(&self, spec: &ModelSpec) -> Result<(), LikelihoodError> {
        let expected = spec.n_models.saturating_sub(1);
        if self.theta_free.len() != expected {
            return Err(LikelihoodError::DimensionMismatch {
                expected,
                got: self.theta_free.len(),
            });
        }
        for k in 0..3 {
            let expected = spec.n_models * spec.n_groups[k];
            if self.u_raw[k].len() != expected {
                return Err(LikelihoodError::DimensionMismatch {
                    expected,
                    got: self.u_raw[k].len(),
                });
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> Vec<f64> {
        expand_theta(&self.theta_free)
    }

    pub fn tau(&self, axis: DemographicAxis) -> f64 {
        self.log_tau[axis.index()].exp()
    }

    pub fn nu(&self) -> f64 {
        self.log_nu.exp()
    }

    pub fn constrain(&self, spec: &ModelSpec) -> ConstrainedParams {
        ConstrainedParams {
            theta: self.theta(),
            u: DemographicAxis::ALL.map(|axis| centered_adjustments(self, spec, axis)),
            tau: self.log_tau.map(f64::exp),
            nu: self.nu(),
        }
    }
}

/// Parameters on their natural scale: sum-to-zero skills, centred and scaled
/// adjustments, positive scales and tie propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedParams {
    pub theta: Vec<f64>,
    /// Row-major `(model, group)` adjustments per axis.
    pub u: [Vec<f64>; 3],
    pub tau: [f64; 3],
    pub nu: f64,
}

impl ConstrainedParams {
    pub fn n_models(&self) -> usize {
        self.theta.len()
    }

    pub fn n_groups(&self, axis: usize) -> usize {
        self.u[axis].len().checked_div(self.theta.len()).unwrap_or(0)
    }

    pub fn adjustment(&self, axis: usize, model: usize, group: usize) -> f64 {
        self.u[axis][model * self.n_groups(axis) + group]
    }

    /// Latent advantage of `a` over `b` for a rater with the given sparse
    /// per-axis weights.
    pub fn eta(&self, alpha: f64, a: usize, b: usize, weights: &[Vec<(usize, f64)>; 3]) -> f64 {
        let mut demo = 0.0;
        for (k, axis_w) in weights.iter().enumerate() {
            let g = self.n_groups(k);
            for &(grp, w) in axis_w {
                demo += w * (self.u[k][a * g + grp] - self.u[k][b * g + grp]);
            }
        }
        self.theta[a] - self.theta[b] + alpha * demo
    }
}

fn helmert_coef(k: usize) -> f64 {
    1.0 / (((k + 1) * (k + 2)) as f64).sqrt()
}

/// Maps `n-1` free coordinates to `n` skills summing to zero, through an
/// orthonormal contrast basis.
pub fn expand_theta(free: &[f64]) -> Vec<f64> {
    let n = free.len() + 1;
    let mut theta = vec![0.0; n];
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        if i < free.len() {
            suffix += helmert_coef(i) * free[i];
        }
        theta[i] = suffix;
        if i > 0 {
            theta[i] -= i as f64 * helmert_coef(i - 1) * free[i - 1];
        }
    }
    theta
}

/// Transpose of [`expand_theta`]. On sum-to-zero input this is its inverse;
/// on a gradient it pulls `d/dtheta` back to the free coordinates.
pub fn contract_theta(theta: &[f64]) -> Vec<f64> {
    let n = theta.len();
    let mut free = Vec::with_capacity(n.saturating_sub(1));
    let mut prefix = 0.0;
    for k in 0..n.saturating_sub(1) {
        prefix += theta[k];
        free.push(helmert_coef(k) * (prefix - (k + 1) as f64 * theta[k + 1]));
    }
    free
}

/// Row-centred, `tau`-scaled adjustments for one axis, row-major
/// `(model, group)`.
pub fn centered_adjustments(
    state: &ParameterState,
    spec: &ModelSpec,
    axis: DemographicAxis,
) -> Vec<f64> {
    let k = axis.index();
    center_rows(&state.u_raw[k], spec.n_groups[k], state.log_tau[k].exp())
}

fn center_rows(raw: &[f64], n_groups: usize, scale: f64) -> Vec<f64> {
    if n_groups == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(raw.len());
    for row in raw.chunks_exact(n_groups) {
        let mean = row.iter().sum::<f64>() / n_groups as f64;
        out.extend(row.iter().map(|x| (x - mean) * scale));
    }
    out
}

/// Latent advantage for `record`, whose models and groups are resolved
/// against `dataset`'s indices.
pub fn latent_advantage(
    state: &ParameterState,
    spec: &ModelSpec,
    record: &ComparisonRecord,
    dataset: &Dataset,
) -> Result<f64, LikelihoodError> {
    state.check_dims(spec)?;
    let resolve = |name: &str| {
        dataset
            .model_index
            .get(name)
            .filter(|i| *i < spec.n_models)
            .ok_or(LikelihoodError::IndexOutOfRange {
                what: "model",
                index: usize::MAX,
                size: spec.n_models,
            })
    };
    let a = resolve(&record.model_a.0)?;
    let b = resolve(&record.model_b.0)?;
    let weights = DemographicAxis::ALL
        .map(|axis| sparse_membership_weights(&record.rater, axis, &dataset.group_index[axis.index()]));
    latent_advantage_indexed(state, spec, a, b, &weights)
}

pub fn latent_advantage_indexed(
    state: &ParameterState,
    spec: &ModelSpec,
    a: usize,
    b: usize,
    weights: &[Vec<(usize, f64)>; 3],
) -> Result<f64, LikelihoodError> {
    state.check_dims(spec)?;
    for idx in [a, b] {
        if idx >= spec.n_models {
            return Err(LikelihoodError::IndexOutOfRange {
                what: "model",
                index: idx,
                size: spec.n_models,
            });
        }
    }
    for (k, axis_w) in weights.iter().enumerate() {
        if let Some(&(g, _)) = axis_w.iter().find(|(g, _)| *g >= spec.n_groups[k]) {
            return Err(LikelihoodError::IndexOutOfRange {
                what: "group",
                index: g,
                size: spec.n_groups[k],
            });
        }
    }
    Ok(state.constrain(spec).eta(spec.alpha, a, b, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbs {
    pub p_a: f64,
    pub p_t: f64,
    pub p_b: f64,
}

impl OutcomeProbs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.p_a, self.p_t, self.p_b]
    }
}

/// `ln Z` for `Z = e^eta + e^-eta + nu`, shifted by the largest exponent.
#[inline]
fn log_normalizer(eta: f64, log_nu: f64) -> f64 {
    let m = eta.abs().max(log_nu);
    m + ((eta - m).exp() + (-eta - m).exp() + (log_nu - m).exp()).ln()
}

pub fn outcome_probs(eta: f64, nu: f64) -> Result<OutcomeProbs, LikelihoodError> {
    if !(nu > 0.0) {
        return Err(LikelihoodError::NonPositiveNu(nu));
    }
    Ok(outcome_probs_log_nu(eta, nu.ln()))
}

/// Same as [`outcome_probs`] with `nu` given on the log scale.
pub fn outcome_probs_log_nu(eta: f64, log_nu: f64) -> OutcomeProbs {
    let lz = log_normalizer(eta, log_nu);
    OutcomeProbs {
        p_a: (eta - lz).exp(),
        p_t: (log_nu - lz).exp(),
        p_b: (-eta - lz).exp(),
    }
}

/// A group of identical comparisons: same ordered pair (`a < b`), same rater
/// weight pattern. Outcome counts are in `[A, tie, B]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub a: usize,
    pub b: usize,
    /// `(axis, group, weight)` triples.
    pub weights: Vec<(usize, usize, f64)>,
    pub counts: [f64; 3],
}

/// One metric's comparisons, compressed into [`Cell`]s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricData {
    pub cells: Vec<Cell>,
    pub n_records: usize,
}

type CellKey = (usize, usize, Vec<(usize, usize, u64)>);

impl MetricData {
    pub fn compile(dataset: &Dataset, metric: &str) -> Result<Self, LikelihoodError> {
        Self::from_records(
            dataset.records_for_metric(metric),
            &dataset.model_index,
            &dataset.group_index,
        )
    }

    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a ComparisonRecord>,
        models: &Index,
        groups: &[Index; 3],
    ) -> Result<Self, LikelihoodError> {
        let mut builder = MetricDataBuilder::default();
        for r in records {
            let find = |name: &str| {
                models.get(name).ok_or(LikelihoodError::IndexOutOfRange {
                    what: "model",
                    index: usize::MAX,
                    size: models.len(),
                })
            };
            let a = find(&r.model_a.0)?;
            let b = find(&r.model_b.0)?;
            let weights = DemographicAxis::ALL
                .map(|axis| sparse_membership_weights(&r.rater, axis, &groups[axis.index()]));
            builder.push(a, b, &weights, r.outcome.index());
        }
        Ok(builder.finish())
    }

    pub fn is_empty(&self) -> bool {
        self.n_records == 0
    }

    /// Largest model index referenced plus one.
    fn min_models(&self) -> usize {
        self.cells.iter().map(|c| c.b + 1).max().unwrap_or(0)
    }
}

/// Incremental construction of [`MetricData`] from indexed comparisons.
#[derive(Debug, Default)]
pub struct MetricDataBuilder {
    cells: BTreeMap<CellKey, [f64; 3]>,
    n: usize,
}

impl MetricDataBuilder {
    /// `outcome` is `0` (A wins), `1` (tie) or `2` (B wins).
    pub fn push(&mut self, a: usize, b: usize, weights: &[Vec<(usize, f64)>; 3], outcome: usize) {
        let (lo, hi, outcome) = if a < b { (a, b, outcome) } else { (b, a, 2 - outcome) };
        let mut pattern = Vec::new();
        for (k, axis_w) in weights.iter().enumerate() {
            for &(g, w) in axis_w {
                pattern.push((k, g, w.to_bits()));
            }
        }
        pattern.sort_unstable();
        self.cells.entry((lo, hi, pattern)).or_insert([0.0; 3])[outcome] += 1.0;
        self.n += 1;
    }

    pub fn finish(self) -> MetricData {
        let cells = self
            .cells
            .into_iter()
            .map(|((a, b, pattern), counts)| Cell {
                a,
                b,
                weights: pattern
                    .into_iter()
                    .map(|(k, g, bits)| (k, g, f64::from_bits(bits)))
                    .collect(),
                counts,
            })
            .collect();
        MetricData {
            cells,
            n_records: self.n,
        }
    }
}

/// Log posterior of one metric's data, evaluated on flat unconstrained
/// vectors. This is what the sampler targets.
#[derive(Debug, Clone)]
pub struct BtdPosterior {
    pub spec: ModelSpec,
    pub data: MetricData,
}

impl BtdPosterior {
    pub fn new(spec: ModelSpec, data: MetricData) -> Result<Self, LikelihoodError> {
        spec.validate()?;
        if data.min_models() > spec.n_models {
            return Err(LikelihoodError::DimensionMismatch {
                expected: spec.n_models,
                got: data.min_models(),
            });
        }
        for cell in &data.cells {
            for &(k, g, _) in &cell.weights {
                if g >= spec.n_groups[k] {
                    return Err(LikelihoodError::IndexOutOfRange {
                        what: "group",
                        index: g,
                        size: spec.n_groups[k],
                    });
                }
            }
        }
        Ok(Self { spec, data })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Log density at `x`; when `grad` is given it receives the gradient.
    pub fn evaluate(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let spec = &self.spec;
        let n = spec.n_models;
        let nf = n.saturating_sub(1);
        let t_off = spec.log_tau_offset();
        let log_nu = x[t_off + 3];
        let alpha = spec.alpha;

        let theta = expand_theta(&x[..nf]);
        let tau: [f64; 3] = [x[t_off].exp(), x[t_off + 1].exp(), x[t_off + 2].exp()];
        let offsets = [spec.u_offset(0), spec.u_offset(1), spec.u_offset(2)];
        let u: [Vec<f64>; 3] = [0, 1, 2].map(|k| {
            let len = n * spec.n_groups[k];
            center_rows(&x[offsets[k]..offsets[k] + len], spec.n_groups[k], tau[k])
        });

        let want_grad = grad.is_some();
        let mut g_theta = vec![0.0; n];
        let mut g_u: [Vec<f64>; 3] = [0, 1, 2].map(|k| vec![0.0; if want_grad { u[k].len() } else { 0 }]);
        let mut g_log_nu = 0.0;

        let mut lp = 0.0;
        for cell in &self.data.cells {
            let (a, b) = (cell.a, cell.b);
            let mut demo = 0.0;
            for &(k, g, w) in &cell.weights {
                let ng = spec.n_groups[k];
                demo += w * (u[k][a * ng + g] - u[k][b * ng + g]);
            }
            let eta = theta[a] - theta[b] + alpha * demo;
            let lz = log_normalizer(eta, log_nu);
            let [c_a, c_t, c_b] = cell.counts;
            lp += c_a * (eta - lz) + c_t * (log_nu - lz) + c_b * (-eta - lz);
            if want_grad {
                let total = c_a + c_t + c_b;
                let p_a = (eta - lz).exp();
                let p_b = (-eta - lz).exp();
                let p_t = (log_nu - lz).exp();
                let d_eta = c_a - c_b - total * (p_a - p_b);
                g_log_nu += c_t - total * p_t;
                g_theta[a] += d_eta;
                g_theta[b] -= d_eta;
                let d_demo = alpha * d_eta;
                for &(k, g, w) in &cell.weights {
                    let ng = spec.n_groups[k];
                    g_u[k][a * ng + g] += w * d_demo;
                    g_u[k][b * ng + g] -= w * d_demo;
                }
            }
        }

        // Priors.
        let sd_t = spec.theta_prior_sd;
        for &f in &x[..nf] {
            lp += -0.5 * (f / sd_t).powi(2) - sd_t.ln() - LN_SQRT_2PI;
        }
        for k in 0..3 {
            for &r in &x[offsets[k]..offsets[k] + n * spec.n_groups[k]] {
                lp += -0.5 * r * r - LN_SQRT_2PI;
            }
            let lambda = spec.tau_prior_rate;
            lp += lambda.ln() - lambda * tau[k] + x[t_off + k];
        }
        let sd_nu = spec.log_nu_prior_sd;
        lp += -0.5 * (log_nu / sd_nu).powi(2) - sd_nu.ln() - LN_SQRT_2PI;

        if let Some(grad) = grad.as_deref_mut() {
            let g_free = contract_theta(&g_theta);
            for i in 0..nf {
                grad[i] = g_free[i] - x[i] / (sd_t * sd_t);
            }
            for k in 0..3 {
                let ng = spec.n_groups[k];
                let off = offsets[k];
                let mut g_log_tau = 0.0;
                for (row, (gu_row, u_row)) in g_u[k]
                    .chunks_exact(ng.max(1))
                    .zip(u[k].chunks_exact(ng.max(1)))
                    .enumerate()
                {
                    if ng == 0 {
                        break;
                    }
                    let mean = gu_row.iter().sum::<f64>() / ng as f64;
                    for y in 0..ng {
                        g_log_tau += gu_row[y] * u_row[y];
                        let idx = off + row * ng + y;
                        grad[idx] = tau[k] * (gu_row[y] - mean) - x[idx];
                    }
                }
                grad[t_off + k] = g_log_tau - spec.tau_prior_rate * tau[k] + 1.0;
            }
            grad[t_off + 3] = g_log_nu - log_nu / (sd_nu * sd_nu);
        }
        lp
    }
}

/// Unnormalised log posterior (the prior terms are normalised densities).
pub fn log_posterior(
    state: &ParameterState,
    data: &MetricData,
    spec: &ModelSpec,
) -> Result<f64, LikelihoodError> {
    state.check_dims(spec)?;
    let post = BtdPosterior::new(spec.clone(), data.clone())?;
    Ok(post.evaluate(&state.to_flat(), None))
}

/// Gradient of [`log_posterior`] with respect to every unconstrained
/// coordinate, returned in the same shape as the state.
pub fn grad_log_posterior(
    state: &ParameterState,
    data: &MetricData,
    spec: &ModelSpec,
) -> Result<ParameterState, LikelihoodError> {
    state.check_dims(spec)?;
    let post = BtdPosterior::new(spec.clone(), data.clone())?;
    let mut grad = vec![0.0; spec.dim()];
    post.evaluate(&state.to_flat(), Some(&mut grad));
    ParameterState::from_flat(spec, &grad)
}

/// Log prior density alone.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec) -> Result<f64, LikelihoodError> {
    log_posterior(state, &MetricData::default(), spec)
}
