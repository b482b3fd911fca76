use arena_core::domain::Outcome;
use arena_core::matchmaker::{
    match_quality, replay_log, select_pair, update_ratings, MatchConfig, MatchError, Rating, ResultEvent,
    TournamentState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn outcome_strategy() -> impl Strategy<Value = Outcome> {
    prop_oneof![Just(Outcome::WinA), Just(Outcome::Tie), Just(Outcome::WinB)]
}

fn rating_strategy() -> impl Strategy<Value = Rating> {
    (-20.0f64..70.0, 0.5f64..12.0).prop_map(|(mu, sigma)| Rating::new(mu, sigma))
}

fn event(seq: u64, id: &str, a: &str, b: &str, outcome: Outcome) -> ResultEvent {
    ResultEvent {
        seq,
        event_id: id.into(),
        stratum: "US:55+".into(),
        model_a: a.into(),
        model_b: b.into(),
        outcome,
        timestamp: "2026-01-01T00:00:00Z".into(),
    }
}

fn random_log(rng: &mut ChaCha8Rng, models: &[&str], n: usize) -> Vec<ResultEvent> {
    (0..n)
        .map(|k| {
            let i = rng.random_range(0..models.len());
            let mut j = rng.random_range(0..models.len() - 1);
            if j >= i {
                j += 1;
            }
            let o = [Outcome::WinA, Outcome::Tie, Outcome::WinB][rng.random_range(0..3)];
            event(k as u64 + 1, &format!("e{k}"), models[i], models[j], o)
        })
        .collect()
}

proptest! {
    #[test]
    fn variance_never_exceeds_dynamics_inflation(a in rating_strategy(), b in rating_strategy(), o in outcome_strategy()) {
        let cfg = MatchConfig::default();
        let (na, nb) = update_ratings(a, b, o, &cfg).unwrap();
        for (old, new) in [(a, na), (b, nb)] {
            let bound = (old.sigma * old.sigma + cfg.dyn_tau * cfg.dyn_tau).sqrt();
            prop_assert!(new.sigma > 0.0 && new.sigma <= bound * (1.0 + 1e-12));
            prop_assert!(new.mu.is_finite());
        }
    }

    #[test]
    fn win_moves_means_strictly(a in rating_strategy(), b in rating_strategy()) {
        let cfg = MatchConfig::default();
        let (na, nb) = update_ratings(a, b, Outcome::WinA, &cfg).unwrap();
        let (wa, wb) = update_ratings(a, b, Outcome::WinB, &cfg).unwrap();
        prop_assert!(na.mu >= a.mu && nb.mu <= b.mu);
        prop_assert!(wa.mu <= a.mu && wb.mu >= b.mu);
        // Far beyond the favourite's margin the shift drops below one ulp.
        if (a.mu - b.mu).abs() < 20.0 {
            prop_assert!(na.mu > a.mu && nb.mu < b.mu);
            prop_assert!(wa.mu < a.mu && wb.mu > b.mu);
        }
    }

    #[test]
    fn equal_uncertainty_conserves_total_mean(mu_a in -20.0f64..70.0, mu_b in -20.0f64..70.0, s in 0.5f64..12.0, o in outcome_strategy()) {
        let cfg = MatchConfig::default();
        let (na, nb) = update_ratings(Rating::new(mu_a, s), Rating::new(mu_b, s), o, &cfg).unwrap();
        prop_assert!((na.mu + nb.mu - mu_a - mu_b).abs() < 1e-9);
    }

    #[test]
    fn draw_pulls_means_together(a in rating_strategy(), b in rating_strategy()) {
        let cfg = MatchConfig::default();
        let (na, nb) = update_ratings(a, b, Outcome::Tie, &cfg).unwrap();
        prop_assert!((na.mu - nb.mu).abs() <= (a.mu - b.mu).abs() + 1e-12);
    }

    #[test]
    fn quality_in_unit_interval_and_symmetric(a in rating_strategy(), b in rating_strategy()) {
        let cfg = MatchConfig::default();
        let q = match_quality(a, b, &cfg);
        prop_assert!(q > 0.0 && q <= 1.0);
        prop_assert_eq!(q, match_quality(b, a, &cfg));
    }

    #[test]
    fn replay_equals_incremental(seed in 0u64..10_000, n in 0usize..60) {
        let cfg = MatchConfig::default();
        let models = ["m1", "m2", "m3", "m4"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = random_log(&mut rng, &models, n);
        let mut live = TournamentState::new("US:55+", models, &cfg).unwrap();
        for e in &log {
            prop_assert!(live.apply(e, &cfg).unwrap());
        }
        let replayed = replay_log("US:55+", models, &log, &cfg).unwrap();
        prop_assert_eq!(&live, &replayed);
        prop_assert_eq!(live.log_cursor, n as u64);
        let plays: u64 = live.play_counts.values().sum();
        prop_assert_eq!(plays, 2 * n as u64);
    }
}

#[test]
fn duplicate_events_are_idempotent() {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let log = random_log(&mut rng, &["x", "y", "z"], 30);
    let mut once = TournamentState::new("US:55+", ["x", "y", "z"], &cfg).unwrap();
    for e in &log {
        once.apply(e, &cfg).unwrap();
    }
    let mut twice = TournamentState::new("US:55+", ["x", "y", "z"], &cfg).unwrap();
    for e in &log {
        assert!(twice.apply(e, &cfg).unwrap());
        assert!(!twice.apply(e, &cfg).unwrap());
    }
    assert_eq!(once, twice);
    // A redelivered old event after later ones is still a no-op.
    assert!(!twice.apply(&log[3], &cfg).unwrap());
    assert_eq!(once, twice);
}

#[test]
fn invalid_events_leave_state_untouched() {
    let cfg = MatchConfig::default();
    let mut s = TournamentState::new("US:55+", ["x", "y"], &cfg).unwrap();
    s.apply(&event(5, "a", "x", "y", Outcome::WinA), &cfg).unwrap();
    let before = s.clone();
    assert!(matches!(
        s.apply(&event(5, "b", "x", "y", Outcome::WinA), &cfg),
        Err(MatchError::OutOfOrderEvent { cursor: 5, got: 5 })
    ));
    assert!(matches!(s.apply(&event(6, "c", "x", "x", Outcome::Tie), &cfg), Err(MatchError::SelfMatch(_))));
    assert!(matches!(s.apply(&event(6, "d", "x", "w", Outcome::Tie), &cfg), Err(MatchError::UnknownModel(_))));
    let mut other = event(6, "e", "x", "y", Outcome::Tie);
    other.stratum = "UK:55+".into();
    assert!(matches!(s.apply(&other, &cfg), Err(MatchError::StratumMismatch { .. })));
    assert_eq!(s, before);
}

#[test]
fn greedy_selection_prefers_closest_uncertain_pair() {
    let cfg = MatchConfig {
        exploration_eps: 0.0,
        ..MatchConfig::default()
    };
    let mut s = TournamentState::new("s", ["a", "b", "c"], &cfg).unwrap();
    s.ratings.insert("a".into(), Rating::new(40.0, 2.0));
    s.ratings.insert("b".into(), Rating::new(25.0, 2.0));
    s.ratings.insert("c".into(), Rating::new(24.0, 2.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut orders = [0usize; 2];
    for _ in 0..200 {
        let (x, y) = select_pair(&s, &cfg, &mut rng).unwrap();
        let mut pair = [x.clone(), y];
        pair.sort();
        assert_eq!(pair, ["b".to_string(), "c".to_string()]);
        orders[(x == "b") as usize] += 1;
    }
    // Presentation order is randomized.
    assert!(orders[0] > 60 && orders[1] > 60);
}

#[test]
fn ratings_separate_a_dominant_model() {
    let cfg = MatchConfig::default();
    let mut s = TournamentState::new("s", ["strong", "weak"], &cfg).unwrap();
    for _ in 0..30 {
        s.record("strong", "weak", Outcome::WinA, &cfg).unwrap();
    }
    let st = s.standings();
    assert_eq!(st[0].0, "strong");
    assert!(st[0].1.mu - st[1].1.mu > 10.0);
    assert!(st[0].1.sigma < cfg.sigma0);
}
