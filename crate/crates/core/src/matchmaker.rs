//! Two-player TrueSkill with draws, match-quality pair selection and
//! event-log replay for per-stratum tournaments.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::domain::Outcome;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("a model cannot play itself ({0:?})")]
    SelfMatch(String),
    #[error("event seq {got} is not after cursor {cursor}")]
    OutOfOrderEvent { cursor: u64, got: u64 },
    #[error("event for stratum {got:?} replayed into {expected:?}")]
    StratumMismatch { expected: String, got: String },
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("numerical underflow in rating update")]
    NumericalUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub mu: f64,
    pub sigma: f64,
}

impl Rating {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    fn check(&self) -> Result<(), MatchError> {
        if !self.mu.is_finite() || !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(MatchError::InvalidRating(format!(
                "mu {} sigma {}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub mu0: f64,
    pub sigma0: f64,
    pub perf_beta: f64,
    pub dyn_tau: f64,
    pub p_draw: f64,
    pub exploration_eps: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        let sigma0 = 25.0 / 3.0;
        Self {
            mu0: 25.0,
            sigma0,
            perf_beta: sigma0 / 2.0,
            dyn_tau: sigma0 / 100.0,
            p_draw: 0.10,
            exploration_eps: 0.10,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let positive = [
            ("mu0", self.mu0),
            ("sigma0", self.sigma0),
            ("perf_beta", self.perf_beta),
            ("dyn_tau", self.dyn_tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MatchError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p_draw > 0.0 && self.p_draw < 1.0) {
            return Err(MatchError::InvalidConfig(format!(
                "p_draw must be in (0, 1), got {}",
                self.p_draw
            )));
        }
        if !(0.0..=1.0).contains(&self.exploration_eps) {
            return Err(MatchError::InvalidConfig(format!(
                "exploration_eps must be in [0, 1], got {}",
                self.exploration_eps
            )));
        }
        Ok(())
    }

    /// Same config with `p_draw` set from an observed tie rate.
    pub fn with_tie_rate(mut self, tie_rate: f64) -> Self {
        self.p_draw = tie_rate.clamp(0.01, 0.99);
        self
    }

    pub fn initial_rating(&self) -> Rating {
        Rating::new(self.mu0, self.sigma0)
    }

    /// Draw margin on the performance-difference scale.
    pub fn draw_margin(&self) -> f64 {
        Normal::standard().inverse_cdf((self.p_draw + 1.0) / 2.0)
            * std::f64::consts::SQRT_2
            * self.perf_beta
    }
}

const TAIL_BELOW: f64 = -3.0;

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Tail of Laplace's continued fraction `Phi(-z)/phi(z) = 1/(z + K(z))`,
/// with `K(z) = 1/(z + 2/(z + 3/(z + ...)))`.
fn mills_tail(z: f64) -> f64 {
    let mut f = z;
    for n in (2..=200).rev() {
        f = z + n as f64 / f;
    }
    1.0 / f
}

/// Inverse Mills ratio `phi(x) / Phi(x)`.
fn mills(x: f64) -> f64 {
    if x < TAIL_BELOW {
        -x + mills_tail(-x)
    } else {
        pdf(x) / cdf(x)
    }
}

/// Mean and variance multipliers for a win with margin: `x = t - eps`.
fn v_w_win(x: f64) -> (f64, f64) {
    if x < TAIL_BELOW {
        let k = mills_tail(-x);
        let v = -x + k;
        (v, v * k)
    } else {
        let v = mills(x);
        (v, v * (v + x))
    }
}

/// Mean and variance multipliers for a draw: the truncated normal on
/// `[-eps - t, eps - t]`.
fn v_w_draw(t: f64, eps: f64) -> (f64, f64) {
    if t < 0.0 {
        let (v, w) = v_w_draw(-t, eps);
        return (-v, w);
    }
    let a = eps - t;
    let b = -eps - t;
    if a > -5.0 {
        let z = cdf(a) - cdf(b);
        let v = (pdf(b) - pdf(a)) / z;
        let w = v * v + (a * pdf(a) - b * pdf(b)) / z;
        (v, w)
    } else {
        // Both ends deep in the lower tail: work with ratios to Phi(a).
        let rho = (-0.5 * (b * b - a * a)).exp();
        let ma = mills(a);
        let mb = mills(b);
        let denom = 1.0 - rho * ma / mb;
        let v = ma * (rho - 1.0) / denom;
        let w = v * v + ma * (a - b * rho) / denom;
        (v, w)
    }
}

/// Posterior ratings after one game between `a` and `b`.
pub fn update_ratings(
    r_a: Rating,
    r_b: Rating,
    outcome: Outcome,
    cfg: &MatchConfig,
) -> Result<(Rating, Rating), MatchError> {
    r_a.check()?;
    r_b.check()?;
    if outcome == Outcome::WinB {
        let (b, a) = update_ratings(r_b, r_a, Outcome::WinA, cfg)?;
        return Ok((a, b));
    }
    let tau2 = cfg.dyn_tau * cfg.dyn_tau;
    let var_a = r_a.sigma * r_a.sigma + tau2;
    let var_b = r_b.sigma * r_b.sigma + tau2;
    let c2 = 2.0 * cfg.perf_beta * cfg.perf_beta + var_a + var_b;
    let c = c2.sqrt();
    let t = (r_a.mu - r_b.mu) / c;
    let eps = cfg.draw_margin() / c;
    let (v, w) = match outcome {
        Outcome::WinA => v_w_win(t - eps),
        Outcome::Tie => v_w_draw(t, eps),
        Outcome::WinB => unreachable!(),
    };
    if !v.is_finite() || !w.is_finite() {
        return Err(MatchError::NumericalUnderflow);
    }
    let w = w.clamp(0.0, 1.0);
    let new_a = Rating::new(
        r_a.mu + var_a / c * v,
        (var_a * (1.0 - var_a / c2 * w)).sqrt(),
    );
    let new_b = Rating::new(
        r_b.mu - var_b / c * v,
        (var_b * (1.0 - var_b / c2 * w)).sqrt(),
    );
    if !(new_a.sigma > 0.0) || !(new_b.sigma > 0.0) {
        return Err(MatchError::NumericalUnderflow);
    }
    Ok((new_a, new_b))
}

/// Draw likelihood relative to two identical, perfectly known players.
pub fn match_quality(r_a: Rating, r_b: Rating, cfg: &MatchConfig) -> f64 {
    let beta2 = 2.0 * cfg.perf_beta * cfg.perf_beta;
    let c2 = beta2 + (r_a.sigma * r_a.sigma + r_b.sigma * r_b.sigma);
    let d = r_a.mu - r_b.mu;
    (beta2 / c2).sqrt() * (-d * d / (2.0 * c2)).exp()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEvent {
    pub seq: u64,
    pub event_id: String,
    pub stratum: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentState {
    pub stratum: String,
    pub ratings: BTreeMap<String, Rating>,
    pub play_counts: BTreeMap<String, u64>,
    /// Sequence number of the last applied event; 0 before any.
    pub log_cursor: u64,
    pub seen_events: BTreeSet<String>,
}

impl TournamentState {
    pub fn new<I, S>(stratum: &str, models: I, cfg: &MatchConfig) -> Result<Self, MatchError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        cfg.validate()?;
        let mut ratings = BTreeMap::new();
        let mut play_counts = BTreeMap::new();
        for m in models {
            let m = m.into();
            ratings.insert(m.clone(), cfg.initial_rating());
            play_counts.insert(m, 0);
        }
        Ok(Self {
            stratum: stratum.to_owned(),
            ratings,
            play_counts,
            log_cursor: 0,
            seen_events: BTreeSet::new(),
        })
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.ratings.keys().map(String::as_str)
    }

    pub fn rating(&self, model: &str) -> Result<Rating, MatchError> {
        self.ratings
            .get(model)
            .copied()
            .ok_or_else(|| MatchError::UnknownModel(model.to_owned()))
    }

    /// Applies one game outside the event log.
    pub fn record(
        &mut self,
        model_a: &str,
        model_b: &str,
        outcome: Outcome,
        cfg: &MatchConfig,
    ) -> Result<(), MatchError> {
        if model_a == model_b {
            return Err(MatchError::SelfMatch(model_a.to_owned()));
        }
        let ra = self.rating(model_a)?;
        let rb = self.rating(model_b)?;
        let (na, nb) = update_ratings(ra, rb, outcome, cfg)?;
        self.ratings.insert(model_a.to_owned(), na);
        self.ratings.insert(model_b.to_owned(), nb);
        *self.play_counts.entry(model_a.to_owned()).or_default() += 1;
        *self.play_counts.entry(model_b.to_owned()).or_default() += 1;
        Ok(())
    }

    /// Checks an event without applying it. `Ok(false)` means it is a
    /// duplicate and would be skipped.
    pub fn check_event(&self, event: &ResultEvent) -> Result<bool, MatchError> {
        if self.seen_events.contains(&event.event_id) {
            return Ok(false);
        }
        if event.stratum != self.stratum {
            return Err(MatchError::StratumMismatch {
                expected: self.stratum.clone(),
                got: event.stratum.clone(),
            });
        }
        if event.seq <= self.log_cursor {
            return Err(MatchError::OutOfOrderEvent {
                cursor: self.log_cursor,
                got: event.seq,
            });
        }
        if event.model_a == event.model_b {
            return Err(MatchError::SelfMatch(event.model_a.clone()));
        }
        self.rating(&event.model_a)?;
        self.rating(&event.model_b)?;
        Ok(true)
    }

    /// Applies a logged event. Returns `false` for an already seen event id.
    pub fn apply(&mut self, event: &ResultEvent, cfg: &MatchConfig) -> Result<bool, MatchError> {
        if !self.check_event(event)? {
            return Ok(false);
        }
        self.record(&event.model_a, &event.model_b, event.outcome, cfg)?;
        self.log_cursor = event.seq;
        self.seen_events.insert(event.event_id.clone());
        Ok(true)
    }

    /// Models ordered by `mu` descending, ties by id.
    pub fn standings(&self) -> Vec<(String, Rating, u64)> {
        let mut out: Vec<(String, Rating, u64)> = self
            .ratings
            .iter()
            .map(|(m, r)| (m.clone(), *r, self.play_counts.get(m).copied().unwrap_or(0)))
            .collect();
        out.sort_by(|a, b| b.1.mu.total_cmp(&a.1.mu).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

/// Picks the next pair: ε-greedy over maximal match quality, ties broken by
/// fewer total plays then model ids. The returned order is the A/B
/// presentation order and is randomized.
pub fn select_pair<R: Rng + ?Sized>(
    state: &TournamentState,
    cfg: &MatchConfig,
    rng: &mut R,
) -> Result<(String, String), MatchError> {
    let models: Vec<&String> = state.ratings.keys().collect();
    if models.len() < 2 {
        return Err(MatchError::TooFewModels(models.len()));
    }
    let (i, j) = if rng.random::<f64>() < cfg.exploration_eps {
        let pick: Vec<usize> = (0..models.len()).collect::<Vec<_>>().choose_multiple(rng, 2).copied().collect();
        (pick[0].min(pick[1]), pick[0].max(pick[1]))
    } else {
        let plays = |k: usize| state.play_counts.get(models[k]).copied().unwrap_or(0);
        let mut best: Option<(f64, u64, usize, usize)> = None;
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                let q = match_quality(state.ratings[models[i]], state.ratings[models[j]], cfg);
                let total = plays(i) + plays(j);
                let better = match best {
                    None => true,
                    Some((bq, bt, _, _)) => q > bq || (q == bq && total < bt),
                };
                if better {
                    best = Some((q, total, i, j));
                }
            }
        }
        let (_, _, i, j) = best.expect("at least one pair");
        (i, j)
    };
    let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
    Ok((models[a].clone(), models[b].clone()))
}

/// Folds `events` into a fresh state for `models`.
pub fn replay_log<'a, I, S>(
    stratum: &str,
    models: I,
    events: impl IntoIterator<Item = &'a ResultEvent>,
    cfg: &MatchConfig,
) -> Result<TournamentState, MatchError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut state = TournamentState::new(stratum, models, cfg)?;
    for e in events {
        state.apply(e, cfg)?;
    }
    Ok(state)
}
