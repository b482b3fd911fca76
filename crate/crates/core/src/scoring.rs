//! Leaderboards from posterior draws: post-stratified skills, round-robin
//! expected points, expected rank, P(best), per-group rankings, rank shifts
//! and empirical tie rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Country, Dataset, DemographicAxis, GroupRegistry, Outcome};
use crate::likelihood::{outcome_probs, LikelihoodError};
use crate::sampler::{ParameterSnapshot, PosteriorDraws};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("no census weights for {0}")]
    MissingCensus(Country),
    #[error("invalid census: {0}")]
    InvalidCensus(String),
    #[error("unknown {axis} group {label:?}")]
    UnknownGroup { axis: DemographicAxis, label: String },
    #[error("no posterior draws")]
    EmptyDraws,
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("need at least 2 groups on {axis}, got {count}")]
    TooFewGroups { axis: DemographicAxis, count: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid country mix: {0}")]
    InvalidMix(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Census share of each group, per country and axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryCensus {
    /// Adult population, used for the default country mix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adult_population: Option<f64>,
    #[serde(default)]
    pub age: BTreeMap<String, f64>,
    #[serde(default)]
    pub ethnicity: BTreeMap<String, f64>,
    #[serde(default)]
    pub politics: BTreeMap<String, f64>,
}

impl CountryCensus {
    pub fn axis(&self, axis: DemographicAxis) -> &BTreeMap<String, f64> {
        match axis {
            DemographicAxis::Age => &self.age,
            DemographicAxis::Ethnicity => &self.ethnicity,
            DemographicAxis::Politics => &self.politics,
        }
    }

    pub fn axis_mut(&mut self, axis: DemographicAxis) -> &mut BTreeMap<String, f64> {
        match axis {
            DemographicAxis::Age => &mut self.age,
            DemographicAxis::Ethnicity => &mut self.ethnicity,
            DemographicAxis::Politics => &mut self.politics,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CensusTable {
    pub countries: BTreeMap<Country, CountryCensus>,
}

impl CensusTable {
    /// Checks each (country, axis) block sums to one, is non-negative, and
    /// only uses registered labels owned by that country.
    pub fn validate(&self, registry: &GroupRegistry) -> Result<(), ScoringError> {
        for (country, census) in &self.countries {
            for axis in DemographicAxis::ALL {
                let weights = census.axis(axis);
                let mut total = 0.0;
                for (label, &w) in weights {
                    if !(w >= 0.0) || !w.is_finite() {
                        return Err(ScoringError::InvalidCensus(format!(
                            "{country} {axis} weight for {label:?} is {w}"
                        )));
                    }
                    if !registry.contains(axis, label) {
                        return Err(ScoringError::UnknownGroup {
                            axis,
                            label: label.clone(),
                        });
                    }
                    if w > 0.0 && !country.owns_label(axis, label) {
                        return Err(ScoringError::InvalidCensus(format!(
                            "{country} census puts weight on foreign group {label:?}"
                        )));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(ScoringError::InvalidCensus(format!(
                        "{country} {axis} weights sum to {total}"
                    )));
                }
            }
            if let Some(p) = census.adult_population {
                if !(p > 0.0) {
                    return Err(ScoringError::InvalidCensus(format!(
                        "{country} adult population must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dense census weights over `labels` for each axis.
    pub fn dense_weights(
        &self,
        country: Country,
        labels: &[Vec<String>; 3],
    ) -> Result<[Vec<f64>; 3], ScoringError> {
        let census = self
            .countries
            .get(&country)
            .ok_or(ScoringError::MissingCensus(country))?;
        let mut out: [Vec<f64>; 3] = [0, 1, 2].map(|k| vec![0.0; labels[k].len()]);
        for axis in DemographicAxis::ALL {
            let k = axis.index();
            if labels[k].is_empty() {
                continue;
            }
            for (label, &w) in census.axis(axis) {
                if let Some(i) = labels[k].iter().position(|l| l == label) {
                    out[k][i] = w;
                }
            }
        }
        Ok(out)
    }

    /// Census groups with positive weight that `labels` lacks. Their raters
    /// contribute zero adjustment in `dense_weights`.
    pub fn unfitted_groups(&self, labels: &[Vec<String>; 3]) -> Vec<(Country, DemographicAxis, String, f64)> {
        let mut out = Vec::new();
        for (&country, census) in &self.countries {
            for axis in DemographicAxis::ALL {
                let k = axis.index();
                if labels[k].is_empty() {
                    continue;
                }
                for (label, &w) in census.axis(axis) {
                    if w > 0.0 && !labels[k].contains(label) {
                        out.push((country, axis, label.clone(), w));
                    }
                }
            }
        }
        out
    }

    /// Mix proportional to adult population when every country supplies
    /// one, equal weights otherwise.
    pub fn default_country_mix(&self) -> CountryMix {
        let pops: Option<Vec<(Country, f64)>> = self
            .countries
            .iter()
            .map(|(c, census)| census.adult_population.map(|p| (*c, p)))
            .collect();
        match pops {
            Some(p) if !p.is_empty() => {
                let total: f64 = p.iter().map(|(_, v)| v).sum();
                CountryMix(p.into_iter().map(|(c, v)| (c, v / total)).collect())
            }
            _ => {
                let n = self.countries.len().max(1) as f64;
                CountryMix(self.countries.keys().map(|c| (*c, 1.0 / n)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryMix(pub Vec<(Country, f64)>);

impl CountryMix {
    pub fn single(country: Country) -> Self {
        Self(vec![(country, 1.0)])
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.0.is_empty() {
            return Err(ScoringError::InvalidMix("empty".into()));
        }
        if self.0.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(ScoringError::InvalidMix("negative weight".into()));
        }
        let total: f64 = self.0.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ScoringError::InvalidMix(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// Parses `US=0.6,UK=0.4`.
    pub fn parse(s: &str) -> Result<Self, ScoringError> {
        let mut out = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (c, w) = part
                .split_once('=')
                .ok_or_else(|| ScoringError::InvalidMix(format!("expected COUNTRY=WEIGHT, got {part:?}")))?;
            let country = Country::parse(c.trim())
                .ok_or_else(|| ScoringError::InvalidMix(format!("unknown country {c:?}")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| ScoringError::InvalidMix(format!("bad weight {w:?}")))?;
            out.push((country, w));
        }
        let mix = Self(out);
        mix.validate()?;
        Ok(mix)
    }
}

/// Skills with demographic effects averaged under census weights:
/// `theta_i + alpha * sum_axis <w_axis, u_axis[i, .]>`.
pub fn population_skill_dense(
    draw: &ParameterSnapshot,
    alpha: f64,
    weights: &[Vec<f64>; 3],
) -> Vec<f64> {
    (0..draw.n_models())
        .map(|i| {
            let mut demo = 0.0;
            for k in 0..3 {
                let g = draw.n_groups(k);
                if g == 0 {
                    continue;
                }
                demo += weights[k]
                    .iter()
                    .zip(&draw.u[k][i * g..(i + 1) * g])
                    .map(|(w, u)| w * u)
                    .sum::<f64>();
            }
            draw.theta[i] + alpha * demo
        })
        .collect()
}

pub fn population_skill(
    draw: &ParameterSnapshot,
    draws: &PosteriorDraws,
    census: &CensusTable,
    country: Country,
) -> Result<Vec<f64>, ScoringError> {
    let weights = census.dense_weights(country, &draws.labels.groups)?;
    Ok(population_skill_dense(draw, draws.alpha, &weights))
}

/// Winshare of `i` against `j`: `p_win + p_tie / 2`. The two orientations
/// sum to exactly one.
pub fn expected_points(theta_i: f64, theta_j: f64, nu: f64) -> Result<f64, ScoringError> {
    let eta = theta_i - theta_j;
    let favourable = |e: f64| -> Result<f64, ScoringError> {
        let p = outcome_probs(e, nu)?;
        Ok(0.5 + 0.5 * (p.p_a - p.p_b))
    };
    if eta >= 0.0 {
        favourable(eta)
    } else {
        Ok(1.0 - favourable(-eta)?)
    }
}

/// Each model's total expected points against every other model.
pub fn score_per_draw(theta_pop: &[f64], nu: f64) -> Result<Vec<f64>, ScoringError> {
    let n = theta_pop.len();
    if n < 2 {
        return Err(ScoringError::TooFewModels(n));
    }
    let mut scores = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let ep = expected_points(theta_pop[i], theta_pop[j], nu)?;
            scores[i] += ep;
            scores[j] += 1.0 - ep;
        }
    }
    Ok(scores)
}

/// 1-based ranks, best first; equal scores are ordered by model index
/// (which is lexicographic by model id).
pub fn ranks_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub model: String,
    pub score_mean: f64,
    pub score_ci: (f64, f64),
    pub expected_rank: f64,
    pub p_best: f64,
}

/// Aggregates per-draw scores computed from `skills(draw)`.
pub fn leaderboard_from_skills<F>(
    draws: &PosteriorDraws,
    mut skills: F,
) -> Result<Vec<LeaderboardEntry>, ScoringError>
where
    F: FnMut(&ParameterSnapshot) -> Vec<f64>,
{
    if draws.draws.is_empty() {
        return Err(ScoringError::EmptyDraws);
    }
    let n = draws.n_models();
    if n < 2 {
        return Err(ScoringError::TooFewModels(n));
    }
    let mut per_model: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.draws.len()); n];
    let mut rank_sum = vec![0.0; n];
    let mut best = vec![0usize; n];
    for d in &draws.draws {
        let scores = score_per_draw(&skills(d), d.nu)?;
        let ranks = ranks_from_scores(&scores);
        for i in 0..n {
            per_model[i].push(scores[i]);
            rank_sum[i] += ranks[i] as f64;
            if ranks[i] == 1 {
                best[i] += 1;
            }
        }
    }
    let total = draws.draws.len() as f64;
    let mut entries: Vec<LeaderboardEntry> = per_model
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            let mean = s.iter().sum::<f64>() / total;
            s.sort_by(f64::total_cmp);
            LeaderboardEntry {
                model: draws.labels.models[i].clone(),
                score_mean: mean,
                score_ci: (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)),
                expected_rank: rank_sum[i] / total,
                p_best: best[i] as f64 / total,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score_mean
            .total_cmp(&a.score_mean)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(entries)
}

/// Post-stratified leaderboard. Per draw the skills are the `mix`-weighted
/// combination of each country's population skills.
pub fn leaderboard(
    draws: &PosteriorDraws,
    census: &CensusTable,
    mix: &CountryMix,
) -> Result<Vec<LeaderboardEntry>, ScoringError> {
    mix.validate()?;
    let weights: Vec<(f64, [Vec<f64>; 3])> = mix
        .0
        .iter()
        .map(|(c, w)| Ok((*w, census.dense_weights(*c, &draws.labels.groups)?)))
        .collect::<Result<_, ScoringError>>()?;
    let alpha = draws.alpha;
    leaderboard_from_skills(draws, |d| {
        let mut combined = vec![0.0; d.n_models()];
        for (w, dense) in &weights {
            for (c, s) in combined.iter_mut().zip(population_skill_dense(d, alpha, dense)) {
                *c += w * s;
            }
        }
        combined
    })
}

/// Leaderboard on baseline skills alone (uniform weighting over groups).
pub fn baseline_leaderboard(draws: &PosteriorDraws) -> Result<Vec<LeaderboardEntry>, ScoringError> {
    leaderboard_from_skills(draws, |d| d.theta.clone())
}

/// Ranking for raters in one group: `theta_i + alpha * u_axis[i, group]`,
/// other axes contributing nothing.
pub fn group_leaderboard(
    draws: &PosteriorDraws,
    axis: DemographicAxis,
    group: &str,
) -> Result<Vec<LeaderboardEntry>, ScoringError> {
    let g = draws
        .group_index(axis, group)
        .ok_or_else(|| ScoringError::UnknownGroup {
            axis,
            label: group.to_owned(),
        })?;
    let k = axis.index();
    let alpha = draws.alpha;
    leaderboard_from_skills(draws, |d| {
        (0..d.n_models())
            .map(|i| d.theta[i] + alpha * d.adjustment(k, i, g))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankShiftReport {
    pub axis: DemographicAxis,
    /// Mean `|group rank - overall rank|` per model, in model order.
    pub per_model: Vec<(String, f64)>,
    pub axis_mean: f64,
}

/// Position (1-based) of each model in a sorted leaderboard, in model order.
pub fn board_positions(models: &[String], board: &[LeaderboardEntry]) -> Vec<f64> {
    models
        .iter()
        .map(|m| {
            board
                .iter()
                .position(|e| &e.model == m)
                .map_or(f64::NAN, |p| (p + 1) as f64)
        })
        .collect()
}

/// How far each model's rank moves between the overall board and each
/// group's board on `axis`. Ranks are leaderboard positions by posterior
/// mean Score; the overall board weights all groups equally.
pub fn rank_shift_report(
    draws: &PosteriorDraws,
    axis: DemographicAxis,
) -> Result<RankShiftReport, ScoringError> {
    let groups = &draws.labels.groups[axis.index()];
    if groups.len() < 2 {
        return Err(ScoringError::TooFewGroups {
            axis,
            count: groups.len(),
        });
    }
    let models = &draws.labels.models;
    let overall = board_positions(models, &baseline_leaderboard(draws)?);
    let mut shift = vec![0.0; models.len()];
    for g in groups {
        let ranks = board_positions(models, &group_leaderboard(draws, axis, g)?);
        for i in 0..models.len() {
            shift[i] += (ranks[i] - overall[i]).abs();
        }
    }
    let per_model: Vec<(String, f64)> = models
        .iter()
        .zip(shift)
        .map(|(m, s)| (m.clone(), s / groups.len() as f64))
        .collect();
    let axis_mean = per_model.iter().map(|(_, s)| s).sum::<f64>() / per_model.len() as f64;
    Ok(RankShiftReport {
        axis,
        per_model,
        axis_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieGrouping {
    Metric,
    AgeGroup,
    MetricAndAge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieRateReport {
    pub metric: Option<String>,
    pub group: Option<String>,
    pub ties: usize,
    pub n: usize,
    pub tie_rate: f64,
}

impl TieRateReport {
    pub fn key(&self) -> String {
        match (&self.metric, &self.group) {
            (Some(m), Some(g)) => format!("{m} x {g}"),
            (Some(m), None) => m.clone(),
            (None, Some(g)) => g.clone(),
            (None, None) => "all".into(),
        }
    }
}

/// Raw share of `Tie` outcomes per cell. A rater listed under several age
/// groups counts in each; raters without an age group are left out of the
/// age groupings.
pub fn empirical_tie_rates(
    dataset: &Dataset,
    grouping: TieGrouping,
) -> Result<Vec<TieRateReport>, ScoringError> {
    if dataset.records.is_empty() {
        return Err(ScoringError::EmptyDataset);
    }
    let mut cells: BTreeMap<(Option<String>, Option<String>), (usize, usize)> = BTreeMap::new();
    for r in &dataset.records {
        let tie = usize::from(r.outcome == Outcome::Tie);
        let metric = Some(r.metric.0.clone());
        let mut bump = |key: (Option<String>, Option<String>)| {
            let e = cells.entry(key).or_insert((0, 0));
            e.0 += tie;
            e.1 += 1;
        };
        match grouping {
            TieGrouping::Metric => bump((metric, None)),
            TieGrouping::AgeGroup => {
                for g in r.rater.groups(DemographicAxis::Age) {
                    bump((None, Some(g.clone())));
                }
            }
            TieGrouping::MetricAndAge => {
                for g in r.rater.groups(DemographicAxis::Age) {
                    bump((metric.clone(), Some(g.clone())));
                }
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((metric, group), (ties, n))| TieRateReport {
            metric,
            group,
            ties,
            n,
            tie_rate: ties as f64 / n as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::DrawLabels;

    pub(crate) fn snapshot(theta: Vec<f64>, u: [Vec<f64>; 3], nu: f64) -> ParameterSnapshot {
        ParameterSnapshot {
            chain: 0,
            iteration: 0,
            u_raw: u.clone(),
            theta,
            u,
            tau: [1.0; 3],
            nu,
        }
    }

    pub(crate) fn draws_of(models: &[&str], groups: [Vec<&str>; 3], snaps: Vec<ParameterSnapshot>) -> PosteriorDraws {
        PosteriorDraws {
            labels: DrawLabels {
                metric: "m".into(),
                models: models.iter().map(|s| s.to_string()).collect(),
                groups: groups.map(|g| g.into_iter().map(String::from).collect()),
            },
            alpha: 1.0 / 3f64.sqrt(),
            n_chains: 1,
            n_draws: snaps.len(),
            draws: snaps,
            divergence_count: 0,
            acceptance_rate: vec![],
            step_size: vec![],
        }
    }

    #[test]
    fn expected_points_cases() {
        assert_eq!(expected_points(0.3, 0.3, 2.0).unwrap(), 0.5);
        let ep = expected_points(2f64.ln(), 0.0, 1.0).unwrap();
        assert!((ep - 5.0 / 7.0).abs() < 1e-15);
        assert!((expected_points(3.0, -1.0, 1e300).unwrap() - 0.5).abs() < 1e-12);
        assert!(expected_points(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn expected_points_orientations_sum_to_one() {
        for &(a, b, nu) in &[(0.1, 0.7, 0.3), (5.0, -3.0, 1.0), (1e-9, 0.0, 10.0), (-2.5, 2.5, 0.01)] {
            let s = expected_points(a, b, nu).unwrap() + expected_points(b, a, nu).unwrap();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn scores_for_equal_skills() {
        let s = score_per_draw(&[0.0; 28], 0.7).unwrap();
        assert!(s.iter().all(|v| *v == 13.5));
        let two = score_per_draw(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((two[0] - 5.0 / 7.0).abs() < 1e-15);
        assert!((two[1] - 2.0 / 7.0).abs() < 1e-15);
        assert!(matches!(score_per_draw(&[1.0], 1.0), Err(ScoringError::TooFewModels(1))));
    }

    #[test]
    fn single_draw_leaderboard() {
        let d = draws_of(
            &["a", "b", "c"],
            [vec![], vec![], vec![]],
            vec![snapshot(vec![-1.0, 1.5, -0.5], [vec![], vec![], vec![]], 1.0)],
        );
        let board = baseline_leaderboard(&d).unwrap();
        assert_eq!(board[0].model, "b");
        assert_eq!(board[0].p_best, 1.0);
        for e in &board {
            assert_eq!(e.score_ci.0, e.score_mean);
            assert_eq!(e.score_ci.1, e.score_mean);
        }
        let ranks: f64 = board.iter().map(|e| e.expected_rank).sum();
        assert_eq!(ranks / 3.0, 2.0);
    }

    #[test]
    fn equal_scores_break_lexicographically() {
        let d = draws_of(
            &["a", "b"],
            [vec![], vec![], vec![]],
            vec![snapshot(vec![0.0, 0.0], [vec![], vec![], vec![]], 1.0)],
        );
        let board = baseline_leaderboard(&d).unwrap();
        assert_eq!(board[0].model, "a");
        assert_eq!(board[0].p_best, 1.0);
        assert_eq!(board[1].p_best, 0.0);
    }

    #[test]
    fn empty_draws_rejected() {
        let d = draws_of(&["a", "b"], [vec![], vec![], vec![]], vec![]);
        assert!(matches!(baseline_leaderboard(&d), Err(ScoringError::EmptyDraws)));
    }

    fn census_us_age(weights: &[(&str, f64)]) -> CensusTable {
        let mut c = CountryCensus::default();
        for (l, w) in weights {
            c.age.insert(l.to_string(), *w);
        }
        c.ethnicity.insert("US:White".into(), 1.0);
        c.politics.insert("US:Democrat".into(), 1.0);
        let mut t = CensusTable::default();
        t.countries.insert(Country::US, c);
        t
    }

    #[test]
    fn one_hot_census_picks_group_adjustment() {
        let u_age = vec![0.2, -0.2, -0.1, 0.1];
        let d = draws_of(
            &["a", "b"],
            [vec!["18-34", "55+"], vec![], vec![]],
            vec![snapshot(vec![0.5, -0.5], [u_age, vec![], vec![]], 1.0)],
        );
        let census = census_us_age(&[("18-34", 1.0), ("55+", 0.0)]);
        census.validate(&GroupRegistry::standard()).unwrap();
        let unfitted = census_us_age(&[("18-34", 0.5), ("35-54", 0.5)]);
        assert_eq!(unfitted.dense_weights(Country::US, &d.labels.groups).unwrap()[0], vec![0.5, 0.0]);
        assert_eq!(
            unfitted.unfitted_groups(&d.labels.groups),
            vec![(Country::US, DemographicAxis::Age, "35-54".to_string(), 0.5)]
        );
        let pop = population_skill(&d.draws[0], &d, &census, Country::US).unwrap();
        let a = d.alpha;
        assert!((pop[0] - (0.5 + a * 0.2)).abs() < 1e-15);
        assert!((pop[1] - (-0.5 - a * 0.1)).abs() < 1e-15);
        assert!(matches!(
            population_skill(&d.draws[0], &d, &census, Country::UK),
            Err(ScoringError::MissingCensus(Country::UK))
        ));
    }

    #[test]
    fn census_validation() {
        let reg = GroupRegistry::standard();
        let ok = census_us_age(&[("18-34", 0.3), ("35-54", 0.3), ("55+", 0.4)]);
        ok.validate(&reg).unwrap();
        let bad_sum = census_us_age(&[("18-34", 0.3), ("35-54", 0.3)]);
        assert!(bad_sum.validate(&reg).is_err());
        let mut foreign = ok.clone();
        foreign
            .countries
            .get_mut(&Country::US)
            .unwrap()
            .politics
            .insert("UK:Labour".into(), 0.0);
        foreign.validate(&reg).unwrap();
        let p = &mut foreign.countries.get_mut(&Country::US).unwrap().politics;
        p.insert("UK:Labour".into(), 0.5);
        p.insert("US:Democrat".into(), 0.5);
        assert!(foreign.validate(&reg).is_err());
    }

    #[test]
    fn country_mix_parse_and_default() {
        let m = CountryMix::parse("US=0.75, UK=0.25").unwrap();
        assert_eq!(m.0, vec![(Country::US, 0.75), (Country::UK, 0.25)]);
        assert!(CountryMix::parse("US=0.5").is_err());
        let mut t = CensusTable::default();
        t.countries.insert(Country::US, CountryCensus { adult_population: Some(3.0), ..Default::default() });
        t.countries.insert(Country::UK, CountryCensus { adult_population: Some(1.0), ..Default::default() });
        assert_eq!(t.default_country_mix().0, vec![(Country::US, 0.75), (Country::UK, 0.25)]);
        t.countries.get_mut(&Country::UK).unwrap().adult_population = None;
        assert_eq!(t.default_country_mix().0, vec![(Country::US, 0.5), (Country::UK, 0.5)]);
    }

    #[test]
    fn group_leaderboard_without_heterogeneity_matches_baseline() {
        let d = draws_of(
            &["a", "b", "c"],
            [vec!["g1", "g2"], vec![], vec![]],
            vec![
                snapshot(vec![0.2, -0.5, 0.3], [vec![0.0; 6], vec![], vec![]], 0.8),
                snapshot(vec![0.4, -0.1, -0.3], [vec![0.0; 6], vec![], vec![]], 1.2),
            ],
        );
        let base = baseline_leaderboard(&d).unwrap();
        assert_eq!(group_leaderboard(&d, DemographicAxis::Age, "g2").unwrap(), base);
        assert!(group_leaderboard(&d, DemographicAxis::Age, "nope").is_err());
        let shift = rank_shift_report(&d, DemographicAxis::Age).unwrap();
        assert!(shift.per_model.iter().all(|(_, s)| *s == 0.0));
        assert!(matches!(
            rank_shift_report(&d, DemographicAxis::Politics),
            Err(ScoringError::TooFewGroups { .. })
        ));
    }

    #[test]
    fn planted_adjacent_swap_gives_half_rank_shift() {
        // Baseline order a > b > c > d. Group g2 swaps b and c; g1 matches
        // the baseline.
        let theta = vec![1.5, 0.5, -0.5, -1.5];
        let alpha = 1.0 / 3f64.sqrt();
        let mut u = vec![0.0; 8];
        let x = 0.75 / alpha;
        u[2 * 2 + 1] = x; // c in g2
        u[2 * 2] = -x;
        u[2 + 1] = -x; // b in g2
        u[2] = x;
        let d = draws_of(
            &["a", "b", "c", "d"],
            [vec!["g1", "g2"], vec![], vec![]],
            vec![snapshot(theta, [u, vec![], vec![]], 1.0)],
        );
        let g1 = group_leaderboard(&d, DemographicAxis::Age, "g1").unwrap();
        let g1_order: Vec<&str> = g1.iter().map(|e| e.model.as_str()).collect();
        assert_eq!(g1_order, ["a", "b", "c", "d"]);
        let report = rank_shift_report(&d, DemographicAxis::Age).unwrap();
        let shifts: Vec<f64> = report.per_model.iter().map(|(_, s)| *s).collect();
        assert_eq!(shifts, vec![0.0, 0.5, 0.5, 0.0]);
        assert_eq!(report.axis_mean, 0.25);
    }
}
