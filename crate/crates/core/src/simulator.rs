//! Synthetic ground truth, rater populations and data-collection campaigns
//! for recovery checks.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    build_index_with_models, ComparisonRecord, Country, Dataset, DemographicAxis, DomainError,
    GroupRegistry, MetricRef, ModelRef, Outcome, RaterProfile,
};
use crate::likelihood::{outcome_probs, LikelihoodError};
use crate::matchmaker::{select_pair, MatchConfig, MatchError, TournamentState};
use crate::sampler::PosteriorDraws;
use crate::stats::{quantile_sorted, spearman};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{what} index {index} out of range for size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("unknown {axis} group {label:?}")]
    UnknownGroup { axis: DemographicAxis, label: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid truth config: {0}")]
    InvalidConfig(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub models: Vec<String>,
    pub metrics: Vec<String>,
    /// Group labels per axis (age, ethnicity, politics).
    pub groups: [Vec<String>; 3],
    pub theta_sd: f64,
    /// Target heterogeneity scale per axis.
    pub tau: [f64; 3],
    /// Tie propensity per metric.
    pub nu: Vec<f64>,
    pub alpha: f64,
}

impl TruthConfig {
    /// Six models, one metric, the desk-scale population groups.
    pub fn desk(tau: f64) -> Self {
        let population = PopulationSpec::uniform_desk();
        Self {
            models: (1..=6).map(|i| format!("model-{i}")).collect(),
            metrics: vec!["overall".into()],
            groups: population.group_labels(),
            theta_sd: 1.0,
            tau: [tau; 3],
            nu: vec![0.5],
            alpha: 1.0 / 3f64.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.models.len() < 2 {
            return Err(SimError::InvalidConfig("need at least 2 models".into()));
        }
        if self.metrics.is_empty() || self.metrics.len() != self.nu.len() {
            return Err(SimError::InvalidConfig("need one nu per metric".into()));
        }
        if self.nu.iter().any(|v| !(*v > 0.0)) {
            return Err(SimError::InvalidConfig("nu must be positive".into()));
        }
        if self.tau.iter().any(|v| !(*v >= 0.0)) || !(self.theta_sd >= 0.0) {
            return Err(SimError::InvalidConfig("scales must be non-negative".into()));
        }
        let unique: BTreeSet<&String> = self.models.iter().collect();
        if unique.len() != self.models.len() {
            return Err(SimError::InvalidConfig("duplicate model id".into()));
        }
        Ok(())
    }
}

/// Per-metric true parameters. Models and groups are sorted, matching the
/// index order a fitted dataset uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub models: Vec<String>,
    pub metrics: Vec<String>,
    pub groups: [Vec<String>; 3],
    pub alpha: f64,
    /// `theta[metric][model]`, summing to zero per metric.
    pub theta: Vec<Vec<f64>>,
    /// `u[metric][axis]`, row-major `models x groups`, rows centred.
    pub u: Vec<[Vec<f64>; 3]>,
    pub tau: Vec<[f64; 3]>,
    pub nu: Vec<f64>,
}

impl GroundTruth {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn metric_index(&self, metric: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == metric)
    }

    pub fn group_registry(&self) -> GroupRegistry {
        let mut reg = GroupRegistry::new();
        for axis in DemographicAxis::ALL {
            for g in &self.groups[axis.index()] {
                reg.insert(axis, g.clone());
            }
        }
        reg
    }

    /// True latent advantage of `a` over `b` for this rater.
    pub fn eta(
        &self,
        rater: &RaterProfile,
        a: usize,
        b: usize,
        metric: usize,
    ) -> Result<f64, SimError> {
        let n = self.n_models();
        for idx in [a, b] {
            if idx >= n {
                return Err(SimError::IndexOutOfRange {
                    what: "model",
                    index: idx,
                    size: n,
                });
            }
        }
        if metric >= self.metrics.len() {
            return Err(SimError::IndexOutOfRange {
                what: "metric",
                index: metric,
                size: self.metrics.len(),
            });
        }
        let mut demo = 0.0;
        for axis in DemographicAxis::ALL {
            let k = axis.index();
            let labels = rater.groups(axis);
            if labels.is_empty() {
                continue;
            }
            let g = self.groups[k].len();
            let w = 1.0 / labels.len() as f64;
            for label in labels {
                let j = self.groups[k]
                    .binary_search(label)
                    .map_err(|_| SimError::UnknownGroup {
                        axis,
                        label: label.clone(),
                    })?;
                let u = &self.u[metric][k];
                demo += w * (u[a * g + j] - u[b * g + j]);
            }
        }
        Ok(self.theta[metric][a] - self.theta[metric][b] + self.alpha * demo)
    }
}

/// Draws skills, centres them, and draws per-axis adjustments as centred
/// standard normals scaled by the configured `tau`.
pub fn sample_ground_truth<R: Rng + ?Sized>(
    cfg: &TruthConfig,
    rng: &mut R,
) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let mut models = cfg.models.clone();
    models.sort();
    let groups = cfg.groups.clone().map(|g| {
        let set: BTreeSet<String> = g.into_iter().collect();
        set.into_iter().collect::<Vec<_>>()
    });
    let n = models.len();
    let mut theta = Vec::new();
    let mut u = Vec::new();
    for _ in &cfg.metrics {
        let mut t: Vec<f64> = (0..n)
            .map(|_| cfg.theta_sd * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        let mean = t.iter().sum::<f64>() / n as f64;
        t.iter_mut().for_each(|x| *x -= mean);
        theta.push(t);

        let per_axis: [Vec<f64>; 3] = [0, 1, 2].map(|k| {
            let g = groups[k].len();
            let mut raw: Vec<f64> = (0..n * g).map(|_| StandardNormal.sample(rng)).collect();
            for row in raw.chunks_mut(g.max(1)) {
                let m = row.iter().sum::<f64>() / row.len() as f64;
                row.iter_mut().for_each(|x| *x = (*x - m) * cfg.tau[k]);
            }
            raw
        });
        u.push(per_axis);
    }
    Ok(GroundTruth {
        models,
        metrics: cfg.metrics.clone(),
        groups,
        alpha: cfg.alpha,
        theta,
        u,
        tau: vec![cfg.tau; cfg.metrics.len()],
        nu: cfg.nu.clone(),
    })
}

pub fn sample_outcome<R: Rng + ?Sized>(eta: f64, nu: f64, rng: &mut R) -> Result<Outcome, SimError> {
    let p = outcome_probs(eta, nu)?;
    let x: f64 = rng.random();
    Ok(if x < p.p_a {
        Outcome::WinA
    } else if x < p.p_a + p.p_t {
        Outcome::Tie
    } else {
        Outcome::WinB
    })
}

pub fn simulate_comparison<R: Rng + ?Sized>(
    truth: &GroundTruth,
    rater: &RaterProfile,
    pair: (usize, usize),
    metric: usize,
    rng: &mut R,
) -> Result<Outcome, SimError> {
    let eta = truth.eta(rater, pair.0, pair.1, metric)?;
    sample_outcome(eta, truth.nu[metric], rng)
}

/// Membership distribution on one axis for one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMembership {
    pub labels: Vec<(String, f64)>,
    /// Probability a rater lists a second group on this axis.
    pub p_multi: f64,
    /// Probability the axis is left blank.
    pub p_missing: f64,
}

impl AxisMembership {
    pub fn uniform<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let w = 1.0 / labels.len() as f64;
        Self {
            labels: labels.into_iter().map(|l| (l, w)).collect(),
            p_multi: 0.0,
            p_missing: 0.0,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, exclude: Option<usize>) -> usize {
        let total: f64 = self
            .labels
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(_, (_, w))| w)
            .sum();
        let mut x = rng.random::<f64>() * total;
        let mut last = 0;
        for (i, (_, w)) in self.labels.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            last = i;
            if x < *w {
                return i;
            }
            x -= w;
        }
        last
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        if self.labels.is_empty() || rng.random::<f64>() < self.p_missing {
            return Vec::new();
        }
        let first = self.draw(rng, None);
        let mut out = vec![self.labels[first].0.clone()];
        if self.labels.len() > 1 && rng.random::<f64>() < self.p_multi {
            let second = self.draw(rng, Some(first));
            out.push(self.labels[second].0.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryPopulation {
    pub country: Country,
    pub share: f64,
    pub axes: [AxisMembership; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub countries: Vec<CountryPopulation>,
}

const DESK_GROUPS: [(Country, [&str; 3], [&str; 3]); 2] = [
    (
        Country::US,
        ["US:Hispanic", "US:African American", "US:White"],
        ["US:Democrat", "US:Republican", "US:Independent"],
    ),
    (
        Country::UK,
        ["UK:Asian", "UK:Black", "UK:White"],
        ["UK:Conservative", "UK:Labour", "UK:Liberal Democrats"],
    ),
];

const AGE_BANDS: [&str; 3] = ["18-34", "35-54", "55+"];

impl PopulationSpec {
    /// Two countries with equal shares, three groups per axis each, uniform
    /// memberships.
    pub fn uniform_desk() -> Self {
        Self {
            countries: DESK_GROUPS
                .iter()
                .map(|(country, eth, pol)| CountryPopulation {
                    country: *country,
                    share: 0.5,
                    axes: [
                        AxisMembership::uniform(AGE_BANDS),
                        AxisMembership::uniform(*eth),
                        AxisMembership::uniform(*pol),
                    ],
                })
                .collect(),
        }
    }

    /// Desk population skewed towards young raters and the first listed
    /// ethnicity, with some multi-membership and missing answers.
    pub fn skewed_desk() -> Self {
        let mut spec = Self::uniform_desk();
        spec.countries[0].share = 0.7;
        spec.countries[1].share = 0.3;
        for c in &mut spec.countries {
            let [age, eth, pol] = &mut c.axes;
            for (w, v) in age.labels.iter_mut().zip([0.6, 0.3, 0.1]) {
                w.1 = v;
            }
            for (w, v) in eth.labels.iter_mut().zip([0.2, 0.2, 0.6]) {
                w.1 = v;
            }
            eth.p_multi = 0.05;
            pol.p_missing = 0.1;
        }
        spec
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.countries.is_empty() {
            return Err(SimError::InvalidPopulation("no countries".into()));
        }
        let total: f64 = self.countries.iter().map(|c| c.share).sum();
        if (total - 1.0).abs() > 1e-9 || self.countries.iter().any(|c| !(c.share >= 0.0)) {
            return Err(SimError::InvalidPopulation(format!("country shares sum to {total}")));
        }
        for c in &self.countries {
            for (axis, m) in DemographicAxis::ALL.iter().zip(&c.axes) {
                let s: f64 = m.labels.iter().map(|(_, w)| w).sum();
                if !m.labels.is_empty() && ((s - 1.0).abs() > 1e-9 || m.labels.iter().any(|(_, w)| !(*w >= 0.0))) {
                    return Err(SimError::InvalidPopulation(format!(
                        "{} {axis} proportions sum to {s}",
                        c.country
                    )));
                }
                for p in [m.p_multi, m.p_missing] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(SimError::InvalidPopulation("probability outside [0, 1]".into()));
                    }
                }
                if let Some((l, _)) = m.labels.iter().find(|(l, _)| !c.country.owns_label(*axis, l)) {
                    return Err(SimError::InvalidPopulation(format!(
                        "{} population uses foreign group {l:?}",
                        c.country
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sorted labels per axis across all countries.
    pub fn group_labels(&self) -> [Vec<String>; 3] {
        [0, 1, 2].map(|k| {
            let set: BTreeSet<String> = self
                .countries
                .iter()
                .flat_map(|c| c.axes[k].labels.iter().map(|(l, _)| l.clone()))
                .collect();
            set.into_iter().collect()
        })
    }

    pub fn sample_rater<R: Rng + ?Sized>(&self, rng: &mut R) -> RaterProfile {
        let mut x = rng.random::<f64>();
        let mut chosen = &self.countries[self.countries.len() - 1];
        for c in &self.countries {
            if x < c.share {
                chosen = c;
                break;
            }
            x -= c.share;
        }
        let mut rater = RaterProfile::new(chosen.country);
        for (k, m) in chosen.axes.iter().enumerate() {
            rater.memberships[k] = m.sample(rng);
        }
        rater
    }
}

/// Tournament key for a rater's group: country-namespaced labels are used
/// as is, shared labels get a country prefix.
pub fn stratum_key(country: Country, axis: DemographicAxis, label: &str) -> String {
    if axis.is_country_namespaced() {
        label.to_owned()
    } else {
        format!("{}:{label}", country.code())
    }
}

pub fn rater_strata(rater: &RaterProfile) -> Vec<String> {
    DemographicAxis::ALL
        .iter()
        .flat_map(|&axis| {
            rater
                .groups(axis)
                .iter()
                .map(move |l| stratum_key(rater.country, axis, l))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pairing {
    Uniform,
    Adaptive(MatchConfig),
}

/// Which tournament adaptive pairing draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TournamentScope {
    /// One tournament per rater stratum.
    #[default]
    Strata,
    /// A single tournament over every rater; the tracker selects pairs.
    Pooled,
}

/// Step-by-step campaign. Each comparison samples a rater, enters one of
/// the rater's strata tournaments, picks a pair and records one outcome per
/// metric. Tournaments are updated with the first metric's outcome.
#[derive(Debug, Clone)]
pub struct Campaign<'a> {
    truth: &'a GroundTruth,
    population: &'a PopulationSpec,
    pairing: Pairing,
    scope: TournamentScope,
    match_cfg: MatchConfig,
    tournaments: BTreeMap<String, TournamentState>,
    /// One rating table over every comparison, whatever the pairing.
    tracker: TournamentState,
    records: Vec<ComparisonRecord>,
    n_comparisons: usize,
}

impl<'a> Campaign<'a> {
    pub fn new(
        truth: &'a GroundTruth,
        population: &'a PopulationSpec,
        pairing: Pairing,
    ) -> Result<Self, SimError> {
        Self::with_scope(truth, population, pairing, TournamentScope::Strata)
    }

    pub fn with_scope(
        truth: &'a GroundTruth,
        population: &'a PopulationSpec,
        pairing: Pairing,
        scope: TournamentScope,
    ) -> Result<Self, SimError> {
        population.validate()?;
        let match_cfg = match pairing {
            Pairing::Adaptive(cfg) => cfg,
            Pairing::Uniform => MatchConfig::default(),
        };
        let tracker = TournamentState::new("all", truth.models.iter().cloned(), &match_cfg)?;
        Ok(Self {
            truth,
            population,
            pairing,
            scope,
            match_cfg,
            tournaments: BTreeMap::new(),
            tracker,
            records: Vec::new(),
            n_comparisons: 0,
        })
    }

    pub fn n_comparisons(&self) -> usize {
        self.n_comparisons
    }

    pub fn tracker(&self) -> &TournamentState {
        &self.tracker
    }

    pub fn tournaments(&self) -> &BTreeMap<String, TournamentState> {
        &self.tournaments
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    /// Runs one comparison and returns the selected model indices.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(usize, usize), SimError> {
        let truth = self.truth;
        let rater = self.population.sample_rater(rng);
        let strata = rater_strata(&rater);
        let stratum = if strata.is_empty() {
            format!("{}:unstratified", rater.country.code())
        } else {
            strata[rng.random_range(0..strata.len())].clone()
        };
        let n = truth.n_models();
        let (a, b) = match self.pairing {
            Pairing::Uniform => {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            }
            Pairing::Adaptive(cfg) => {
                let state = match self.scope {
                    TournamentScope::Pooled => &self.tracker,
                    TournamentScope::Strata => match self.tournaments.entry(stratum.clone()) {
                        std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(TournamentState::new(&stratum, truth.models.iter().cloned(), &cfg)?)
                        }
                    },
                };
                let (ma, mb) = select_pair(state, &cfg, rng)?;
                let idx = |m: &str| truth.models.binary_search_by(|x| x.as_str().cmp(m)).expect("known model");
                (idx(&ma), idx(&mb))
            }
        };
        let k = self.n_comparisons;
        for metric in 0..truth.metrics.len() {
            let outcome = simulate_comparison(truth, &rater, (a, b), metric, rng)?;
            if metric == 0 {
                let (ma, mb) = (&truth.models[a], &truth.models[b]);
                if let Some(state) = self.tournaments.get_mut(&stratum) {
                    state.record(ma, mb, outcome, &self.match_cfg)?;
                }
                self.tracker.record(ma, mb, outcome, &self.match_cfg)?;
            }
            self.records.push(ComparisonRecord {
                id: format!("sim-{k}-{}", truth.metrics[metric]),
                metric: MetricRef::new(truth.metrics[metric].clone()),
                model_a: ModelRef::new(truth.models[a].clone()),
                model_b: ModelRef::new(truth.models[b].clone()),
                outcome,
                rater: rater.clone(),
                stratum: Some(stratum.clone()),
            });
        }
        self.n_comparisons += 1;
        Ok((a, b))
    }

    pub fn into_dataset(self) -> Result<Dataset, SimError> {
        let models: BTreeSet<String> = self.truth.models.iter().cloned().collect();
        Ok(build_index_with_models(
            self.records,
            models,
            &self.truth.group_registry(),
        )?)
    }
}

/// Runs `n_comparisons` comparisons (one record per metric each).
pub fn run_campaign<R: Rng + ?Sized>(
    truth: &GroundTruth,
    population: &PopulationSpec,
    pairing: Pairing,
    n_comparisons: usize,
    rng: &mut R,
) -> Result<Dataset, SimError> {
    let mut campaign = Campaign::new(truth, population, pairing)?;
    for _ in 0..n_comparisons {
        campaign.step(rng)?;
    }
    campaign.into_dataset()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub spearman_theta: f64,
    pub ci_coverage: f64,
    /// Per axis; `NaN`-free, zero for axes without groups.
    pub tau_error: [f64; 3],
    pub nu_error: f64,
}

/// Compares a fit for `metric` to the truth that generated its data.
pub fn recovery_metrics(
    draws: &PosteriorDraws,
    truth: &GroundTruth,
    metric: &str,
) -> Result<RecoveryMetrics, SimError> {
    let m = truth
        .metric_index(metric)
        .ok_or_else(|| SimError::DimensionMismatch(format!("truth has no metric {metric:?}")))?;
    if draws.labels.models != truth.models {
        return Err(SimError::DimensionMismatch("model rosters differ".into()));
    }
    if draws.draws.is_empty() {
        return Err(SimError::DimensionMismatch("no draws".into()));
    }
    let n = truth.n_models();
    let total = draws.draws.len() as f64;
    let mut mean_theta = vec![0.0; n];
    let mut covered = 0usize;
    for i in 0..n {
        let mut xs: Vec<f64> = draws.draws.iter().map(|d| d.theta[i]).collect();
        mean_theta[i] = xs.iter().sum::<f64>() / total;
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&xs, 0.025), quantile_sorted(&xs, 0.975));
        let t = truth.theta[m][i];
        if lo <= t && t <= hi {
            covered += 1;
        }
    }
    let mut tau_error = [0.0; 3];
    for (k, err) in tau_error.iter_mut().enumerate() {
        if draws.labels.groups[k].is_empty() {
            continue;
        }
        let mean_tau = draws.draws.iter().map(|d| d.tau[k]).sum::<f64>() / total;
        *err = (mean_tau - truth.tau[m][k]).abs();
    }
    let mean_nu = draws.draws.iter().map(|d| d.nu).sum::<f64>() / total;
    Ok(RecoveryMetrics {
        spearman_theta: spearman(&mean_theta, &truth.theta[m]),
        ci_coverage: covered as f64 / n as f64,
        tau_error,
        nu_error: (mean_nu - truth.nu[m]).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_truth(tau: f64, seed: u64) -> GroundTruth {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_ground_truth(&TruthConfig::desk(tau), &mut rng).unwrap()
    }

    #[test]
    fn zero_heterogeneity_gives_zero_adjustments() {
        let t = small_truth(0.0, 1);
        assert!(t.u[0].iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn truth_invariants_and_determinism() {
        let t = small_truth(0.3, 2);
        assert!(t.theta[0].iter().sum::<f64>().abs() < 1e-12);
        for k in 0..3 {
            let g = t.groups[k].len();
            for row in t.u[0][k].chunks(g) {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
        assert_eq!(t, small_truth(0.3, 2));
        assert_ne!(t, small_truth(0.3, 3));
    }

    fn flat_truth(theta: Vec<f64>, nu: f64) -> GroundTruth {
        let n = theta.len();
        GroundTruth {
            models: (0..n).map(|i| format!("m{i}")).collect(),
            metrics: vec!["x".into()],
            groups: Default::default(),
            alpha: 1.0 / 3f64.sqrt(),
            theta: vec![theta],
            u: vec![Default::default()],
            tau: vec![[0.0; 3]],
            nu: vec![nu],
        }
    }

    fn frequencies(truth: &GroundTruth, n: usize, seed: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rater = RaterProfile::new(Country::US);
        let mut c = [0.0; 3];
        for _ in 0..n {
            let o = simulate_comparison(truth, &rater, (0, 1), 0, &mut rng).unwrap();
            c[o.index()] += 1.0;
        }
        c.map(|x| x / n as f64)
    }

    #[test]
    fn symmetric_outcomes_are_uniform() {
        let f = frequencies(&flat_truth(vec![0.0, 0.0], 1.0), 10_000, 5);
        let sd = (1.0 / 3.0 * 2.0 / 3.0 / 10_000.0f64).sqrt();
        for p in f {
            assert!((p - 1.0 / 3.0).abs() < 3.0 * sd, "{f:?}");
        }
    }

    #[test]
    fn saturated_outcomes() {
        let f = frequencies(&flat_truth(vec![5.0, -5.0], 1.0), 10_000, 6);
        assert!(f[0] > 0.999);
    }

    #[test]
    fn tie_rate_grows_with_nu() {
        let mut last = 0.0;
        for nu in [0.1, 0.5, 1.0, 3.0] {
            let f = frequencies(&flat_truth(vec![0.3, -0.3], nu), 20_000, 7);
            assert!(f[1] > last);
            last = f[1];
        }
    }

    #[test]
    fn out_of_range_pair() {
        let t = flat_truth(vec![0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = RaterProfile::new(Country::US);
        assert!(matches!(
            simulate_comparison(&t, &r, (0, 2), 0, &mut rng),
            Err(SimError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn campaign_basics() {
        let truth = small_truth(0.2, 4);
        let pop = PopulationSpec::uniform_desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = run_campaign(&truth, &pop, Pairing::Uniform, 0, &mut rng).unwrap();
        assert!(empty.records.is_empty());
        assert_eq!(empty.n_models(), 6);

        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_campaign(&truth, &pop, Pairing::Adaptive(MatchConfig::default()), 200, &mut rng)
                .unwrap()
                .records
        };
        let a = run(9);
        assert_eq!(a.len(), 200);
        assert_eq!(a, run(9));
        assert_ne!(a, run(10));
    }

    #[test]
    fn populations_validate() {
        PopulationSpec::uniform_desk().validate().unwrap();
        PopulationSpec::skewed_desk().validate().unwrap();
        let mut bad = PopulationSpec::uniform_desk();
        bad.countries[0].share = 0.9;
        assert!(bad.validate().is_err());
        let mut foreign = PopulationSpec::uniform_desk();
        foreign.countries[0].axes[1] = AxisMembership::uniform(["UK:White"]);
        assert!(foreign.validate().is_err());
    }

    #[test]
    fn skewed_population_multi_and_missing() {
        let pop = PopulationSpec::skewed_desk();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raters: Vec<RaterProfile> = (0..5000).map(|_| pop.sample_rater(&mut rng)).collect();
        let multi = raters.iter().filter(|r| r.memberships[1].len() == 2).count();
        let missing = raters.iter().filter(|r| r.memberships[2].is_empty()).count();
        assert!((150..350).contains(&multi), "{multi}");
        assert!((350..650).contains(&missing), "{missing}");
        assert!(raters.iter().all(|r| r.memberships[1].iter().all(|l| r.country.owns_label(DemographicAxis::Ethnicity, l))));
    }

    #[test]
    fn strata_keys() {
        let r = RaterProfile::new(Country::UK)
            .with(DemographicAxis::Age, "55+")
            .with(DemographicAxis::Politics, "UK:Labour");
        assert_eq!(rater_strata(&r), ["UK:55+", "UK:Labour"]);
    }
}
