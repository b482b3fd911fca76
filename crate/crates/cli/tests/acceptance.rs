//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one `[PASS]` / `[FAIL]` / `[SKIP]` line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use arena_core::decompose::{anova_decompose, tie_rate_table, CellWeighting, RateTable};
use arena_core::domain::{
    build_index, ComparisonRecord, Country, Dataset, DemographicAxis, GroupRegistry, Outcome, RaterProfile,
};
use arena_core::io::{ingest_dataset, read_event_log, read_json, FieldMapping, IngestOptions};
use arena_core::likelihood::{grad_log_posterior, log_posterior, outcome_probs, MetricData, ModelSpec, ParameterState};
use arena_core::matchmaker::{replay_log, MatchConfig};
use arena_core::sampler::{effective_sample_size, fit_metric, DrawLabels, ParameterSnapshot, PosteriorDraws, SamplerConfig};
use arena_core::scoring::{baseline_leaderboard, empirical_tie_rates, score_per_draw, TieGrouping};
use arena_core::simulator::{
    recovery_metrics, run_campaign, sample_ground_truth, Campaign, GroundTruth, Pairing, PopulationSpec, TournamentScope,
    TruthConfig,
};
use arena_core::stats::{mean, spearman, std_dev};
use arena_service::{log_file_name, standings_of, AppState, PairTicket, ServiceConfig, StandingEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn run(&mut self, id: &str, name: &str, budget: Duration, check: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        let tag = if pass { "PASS" } else { "FAIL" };
        let mut detail = out.detail;
        if !in_time {
            detail.push_str(&format!("; over budget {:.0?}", budget));
        }
        println!("[{tag}] {id} {name}: {detail} ({:.1}s)", took.as_secs_f64());
        if !pass {
            self.failed.push(id.to_owned());
        }
    }

    fn skip(&self, id: &str, name: &str, why: &str) {
        println!("[SKIP] {id} {name}: {why}");
    }
}

// ---------------------------------------------------------------- 1

fn likelihood_grid() -> Verdict {
    let n = 1000;
    let mut worst_norm: f64 = 0.0;
    let mut asymmetric = 0usize;
    for i in 0..n {
        let eta = -50.0 + 100.0 * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let nu = (-15.0 + 30.0 * j as f64 / (n - 1) as f64).exp();
            let p = outcome_probs(eta, nu).unwrap();
            let q = outcome_probs(-eta, nu).unwrap();
            worst_norm = worst_norm.max((p.p_a + p.p_t + p.p_b - 1.0).abs());
            if p.p_a != q.p_b || p.p_b != q.p_a || p.p_t != q.p_t {
                asymmetric += 1;
            }
        }
    }
    verdict(
        worst_norm <= 1e-12 && asymmetric == 0,
        format!("max |sum-1| = {worst_norm:.1e}, asymmetric points = {asymmetric} of {}", n * n),
    )
}

// ---------------------------------------------------------------- 2

const AGES: [&str; 3] = ["18-34", "35-54", "55+"];
const US_ETH: [&str; 2] = ["US:Hispanic", "US:White"];
const US_POL: [&str; 3] = ["US:Democrat", "US:Republican", "US:Independent"];

fn random_dataset(rng: &mut ChaCha8Rng, n_models: usize, n_records: usize) -> Dataset {
    let mut reg = GroupRegistry::new();
    for a in AGES {
        reg.insert(DemographicAxis::Age, a);
    }
    for e in US_ETH {
        reg.insert(DemographicAxis::Ethnicity, e);
    }
    for p in US_POL {
        reg.insert(DemographicAxis::Politics, p);
    }
    let records = (0..n_records)
        .map(|i| {
            let a = rng.random_range(0..n_models);
            let mut b = rng.random_range(0..n_models - 1);
            if b >= a {
                b += 1;
            }
            let mut rater = RaterProfile::new(Country::US);
            for (axis, labels) in [
                (DemographicAxis::Age, &AGES[..]),
                (DemographicAxis::Ethnicity, &US_ETH[..]),
                (DemographicAxis::Politics, &US_POL[..]),
            ] {
                match rng.random_range(0..6) {
                    0 => {}
                    1 => rater = rater.with(axis, labels[0]).with(axis, labels[1]),
                    _ => rater = rater.with(axis, labels[rng.random_range(0..labels.len())]),
                }
            }
            ComparisonRecord {
                id: format!("r{i}"),
                metric: "m".into(),
                model_a: format!("model{a}").as_str().into(),
                model_b: format!("model{b}").as_str().into(),
                outcome: [Outcome::WinA, Outcome::Tie, Outcome::WinB][rng.random_range(0..3)],
                rater,
                stratum: None,
            }
        })
        .collect();
    build_index(records, &reg).unwrap()
}

fn gradient_error(state: &ParameterState, data: &MetricData, spec: &ModelSpec) -> f64 {
    let grad = grad_log_posterior(state, data, spec).unwrap().to_flat();
    let x0 = state.to_flat();
    let f = |x: &[f64]| log_posterior(&ParameterState::from_flat(spec, x).unwrap(), data, spec).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..x0.len() {
        let h = 1e-5 * x0[j].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        worst = worst.max((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1.0));
    }
    worst
}

fn gradient_gate() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n_models = rng.random_range(2..=8);
        let n_records = rng.random_range(1..=500);
        let ds = random_dataset(&mut rng, n_models, n_records);
        let spec = ModelSpec::for_dataset(&ds);
        let data = MetricData::compile(&ds, "m").unwrap();
        let x: Vec<f64> = (0..spec.dim()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let state = ParameterState::from_flat(&spec, &x).unwrap();
        worst = worst.max(gradient_error(&state, &data, &spec));
    }
    verdict(worst < 1e-6, format!("max relative error {worst:.2e} over 50 states"))
}

// ---------------------------------------------------------------- 3

fn two_model_dataset(counts: [usize; 3]) -> Dataset {
    let outcomes = [Outcome::WinA, Outcome::Tie, Outcome::WinB];
    let mut records = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            records.push(ComparisonRecord {
                id: format!("r{}", records.len()),
                metric: "m".into(),
                model_a: "alpha".into(),
                model_b: "beta".into(),
                outcome: outcomes[k],
                rater: RaterProfile::new(Country::UK),
                stratum: None,
            });
        }
    }
    build_index(records, &GroupRegistry::new()).unwrap()
}

/// Posterior mean of the skill difference on a grid over the difference
/// and `log nu`; the difference has a N(0, 2) prior.
fn quadrature_mean(counts: [usize; 3]) -> f64 {
    let n = 600;
    let (hd, hl) = (16.0 / n as f64, 12.0 / n as f64);
    let mut cells = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        let d = -8.0 + i as f64 * hd;
        for j in 0..=n {
            let ln_nu = -6.0 + j as f64 * hl;
            let ln_z = (d.exp() + (-d).exp() + ln_nu.exp()).ln();
            let ll = counts[0] as f64 * (d - ln_z) + counts[1] as f64 * (ln_nu - ln_z) + counts[2] as f64 * (-d - ln_z);
            cells.push((d, ll - d * d / 4.0 - ln_nu * ln_nu / 2.0));
        }
    }
    let max = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m) = (0.0, 0.0);
    for (d, l) in cells {
        let w = (l - max).exp();
        z += w;
        m += w * d;
    }
    m / z
}

fn small_instance_oracle() -> Verdict {
    let cases = [[12, 5, 3], [4, 20, 6], [30, 2, 28], [1, 0, 9], [7, 7, 7]];
    let mut worst_z: f64 = 0.0;
    for (seed, counts) in cases.into_iter().enumerate() {
        let ds = two_model_dataset(counts);
        let spec = ModelSpec::for_dataset(&ds);
        let cfg = SamplerConfig {
            n_chains: 4,
            n_warmup: 500,
            n_draws: 1500,
            seed: 300 + seed as u64,
            ..Default::default()
        };
        let draws = fit_metric(&ds, "m", &spec, &cfg).unwrap();
        let diffs: Vec<Vec<f64>> = (0..cfg.n_chains)
            .map(|c| draws.chain(c).iter().map(|d| d.theta[0] - d.theta[1]).collect())
            .collect();
        let refs: Vec<&[f64]> = diffs.iter().map(Vec::as_slice).collect();
        let ess = effective_sample_size(&refs).unwrap();
        let all = diffs.concat();
        let mcse = std_dev(&all) / ess.sqrt();
        worst_z = worst_z.max((mean(&all) - quadrature_mean(counts)).abs() / mcse);
    }
    verdict(worst_z <= 3.0, format!("max |mcmc - quadrature| = {worst_z:.2} MCSE over 5 datasets"))
}

// ---------------------------------------------------------------- 4

/// Expected tie share under uniform pairs and the population's raters.
fn expected_tie_rate(truth: &GroundTruth, raters: &[RaterProfile], nu: f64) -> f64 {
    let n = truth.n_models();
    let mut total = 0.0;
    for r in raters {
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    total += outcome_probs(truth.eta(r, a, b, 0).unwrap(), nu).unwrap().p_t;
                }
            }
        }
    }
    total / (raters.len() * n * (n - 1)) as f64
}

fn calibrate_nu(truth: &GroundTruth, pop: &PopulationSpec, target: f64, rng: &mut ChaCha8Rng) -> f64 {
    let raters: Vec<RaterProfile> = (0..500).map(|_| pop.sample_rater(rng)).collect();
    let (mut lo, mut hi) = (-8.0f64, 8.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_tie_rate(truth, &raters, mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn recovery() -> Verdict {
    let pop = PopulationSpec::uniform_desk();
    let mut spearmans = Vec::new();
    let mut covered = 0.0;
    let mut components = 0.0;
    let mut tie_rates = Vec::new();
    let mut best_ok = 0;
    let mut best_checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let mut truth = sample_ground_truth(&TruthConfig::desk(0.2), &mut rng).unwrap();
        truth.nu[0] = calibrate_nu(&truth, &pop, 0.25, &mut rng);
        let ds = run_campaign(&truth, &pop, Pairing::Uniform, 20_000, &mut rng).unwrap();
        let ties = ds.records.iter().filter(|r| r.outcome == Outcome::Tie).count();
        tie_rates.push(ties as f64 / ds.records.len() as f64);
        let spec = ModelSpec::for_dataset(&ds);
        let cfg = SamplerConfig {
            seed: 40 + seed,
            ..Default::default()
        };
        let draws = fit_metric(&ds, "overall", &spec, &cfg).unwrap();
        let m = recovery_metrics(&draws, &truth, "overall").unwrap();
        spearmans.push(m.spearman_theta);
        covered += m.ci_coverage * truth.n_models() as f64;
        components += truth.n_models() as f64;

        // The best-model check applies when the true Score margin exceeds
        // the posterior spread of that margin.
        let true_scores = score_per_draw(&truth.theta[0], truth.nu[0]).unwrap();
        let mut order: Vec<usize> = (0..truth.n_models()).collect();
        order.sort_by(|&a, &b| true_scores[b].total_cmp(&true_scores[a]));
        let (best, second) = (order[0], order[1]);
        let margins: Vec<f64> = draws
            .draws
            .iter()
            .map(|d| {
                let s = score_per_draw(&d.theta, d.nu).unwrap();
                s[best] - s[second]
            })
            .collect();
        if true_scores[best] - true_scores[second] > std_dev(&margins) {
            best_checked += 1;
            let board = baseline_leaderboard(&draws).unwrap();
            let top = board.iter().max_by(|a, b| a.p_best.total_cmp(&b.p_best)).unwrap();
            if top.model == truth.models[best] {
                best_ok += 1;
            }
        }
    }
    let rho = mean(&spearmans);
    let coverage = covered / components;
    let pass = rho >= 0.95 && (0.85..=1.0).contains(&coverage) && best_ok == best_checked;
    verdict(
        pass,
        format!(
            "mean spearman {rho:.3} (min {:.3}), coverage {coverage:.3}, best model tops P(best) in {best_ok}/{best_checked} separable seeds, tie rate {:.3}",
            spearmans.iter().copied().fold(f64::INFINITY, f64::min),
            mean(&tie_rates)
        ),
    )
}

// ---------------------------------------------------------------- 5

fn equal_skill_draws(n_models: usize, thetas: Vec<Vec<f64>>) -> PosteriorDraws {
    let n_draws = thetas.len();
    let draws = thetas
        .into_iter()
        .enumerate()
        .map(|(k, theta)| ParameterSnapshot {
            chain: 0,
            iteration: k,
            theta,
            u: Default::default(),
            u_raw: Default::default(),
            tau: [0.1; 3],
            nu: 0.7,
        })
        .collect();
    PosteriorDraws {
        labels: DrawLabels {
            metric: "overall".into(),
            models: (0..n_models).map(|i| format!("model-{i:02}")).collect(),
            groups: Default::default(),
        },
        alpha: 1.0 / 3f64.sqrt(),
        n_chains: 1,
        n_draws,
        draws,
        divergence_count: 0,
        acceptance_rate: vec![0.8],
        step_size: vec![0.1],
    }
}

fn scoring_arithmetic() -> Verdict {
    let k = 28;
    let board = baseline_leaderboard(&equal_skill_draws(k, vec![vec![0.0; k]; 50])).unwrap();
    let all_half = board.iter().all(|e| e.score_mean == 13.5);
    let p_sum: f64 = board.iter().map(|e| e.p_best).sum();
    let mean_rank = board.iter().map(|e| e.expected_rank).sum::<f64>() / k as f64;

    let mut dominant = vec![0.0; k];
    dominant[0] = 60.0;
    let max_score = score_per_draw(&dominant, 0.7).unwrap()[0];

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random: Vec<Vec<f64>> = (0..200).map(|_| (0..k).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
    let rboard = baseline_leaderboard(&equal_skill_draws(k, random)).unwrap();
    let rp_sum: f64 = rboard.iter().map(|e| e.p_best).sum();
    let r_rank = rboard.iter().map(|e| e.expected_rank).sum::<f64>() / k as f64;

    let pass = all_half
        && (max_score - 27.0).abs() < 1e-9
        && (p_sum - 1.0).abs() <= 1e-9
        && (rp_sum - 1.0).abs() <= 1e-9
        && (mean_rank - 14.5).abs() < 1e-12
        && (r_rank - 14.5).abs() < 1e-12;
    verdict(
        pass,
        format!(
            "every score 13.5: {all_half}, max attainable {max_score:.9}, sum P(best) {p_sum} / {rp_sum:.12}, mean rank {mean_rank} / {r_rank}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn anova_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rows = rng.random_range(2..=4);
        let cols = rng.random_range(2..=5);
        let y: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random::<f64>()).collect()).collect();
        let d = anova_decompose(
            &RateTable::from_rates(DemographicAxis::Age, DemographicAxis::Politics, y.clone()),
            CellWeighting::Unweighted,
        )
        .unwrap();

        let total: f64 = y.iter().flatten().sum();
        let mu = total / (rows * cols) as f64;
        let r: Vec<f64> = y.iter().map(|row| row.iter().sum::<f64>() / cols as f64 - mu).collect();
        let c: Vec<f64> = (0..cols).map(|j| y.iter().map(|row| row[j]).sum::<f64>() / rows as f64 - mu).collect();
        let mut ss = [0.0; 3];
        let mut err = (d.grand_mean - mu).abs();
        for i in 0..rows {
            err = err.max((d.row_effects[i] - r[i]).abs());
            for j in 0..cols {
                let g = y[i][j] - mu - r[i] - c[j];
                err = err.max((d.interaction[i][j] - g).abs());
                let rebuilt = d.grand_mean + d.row_effects[i] + d.col_effects[j] + d.interaction[i][j];
                err = err.max((rebuilt - y[i][j]).abs());
                ss[0] += r[i] * r[i];
                ss[1] += c[j] * c[j];
                ss[2] += g * g;
            }
        }
        for j in 0..cols {
            err = err.max((d.col_effects[j] - c[j]).abs());
            err = err.max(d.interaction.iter().map(|row| row[j]).sum::<f64>().abs());
        }
        for row in &d.interaction {
            err = err.max(row.iter().sum::<f64>().abs());
        }
        err = err.max(d.row_effects.iter().sum::<f64>().abs());
        err = err.max(d.col_effects.iter().sum::<f64>().abs());
        err = err.max((d.variance_share_interaction - ss[2] / (ss[0] + ss[1] + ss[2])).abs());
        worst = worst.max(err);
    }
    verdict(worst <= 1e-12, format!("max deviation {worst:.2e} over 1000 tables"))
}

// ---------------------------------------------------------------- 7

/// First checkpoint after which the tracker's rating order stays within
/// Spearman 0.9 of the true order; `None` if it never settles.
fn comparisons_to_target(
    truth: &GroundTruth,
    pairing: Pairing,
    scope: TournamentScope,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let pop = PopulationSpec::uniform_desk();
    let mut c = Campaign::with_scope(truth, &pop, pairing, scope).unwrap();
    let every = 10;
    let mut settled = None;
    for step in 1..=steps {
        c.step(rng).unwrap();
        if step % every == 0 {
            let mu: Vec<f64> = truth.models.iter().map(|m| c.tracker().rating(m).unwrap().mu).collect();
            if spearman(&mu, &truth.theta[0]) >= 0.9 {
                settled.get_or_insert(step);
            } else {
                settled = None;
            }
        }
    }
    settled
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn median_ratio(scope: TournamentScope) -> (f64, f64) {
    let steps = 6000;
    let cap = (steps + 1) as f64;
    let (mut uniform, mut adaptive) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let truth = sample_ground_truth(&TruthConfig::desk(0.2), &mut rng).unwrap();
        let mut ru = ChaCha8Rng::seed_from_u64(7100 + seed);
        let mut ra = ChaCha8Rng::seed_from_u64(7200 + seed);
        let adaptive_pairing = Pairing::Adaptive(MatchConfig::default());
        uniform.push(comparisons_to_target(&truth, Pairing::Uniform, scope, steps, &mut ru).map_or(cap, |n| n as f64));
        adaptive.push(comparisons_to_target(&truth, adaptive_pairing, scope, steps, &mut ra).map_or(cap, |n| n as f64));
    }
    (median(adaptive), median(uniform))
}

/// Pairs are chosen by the same tournament whose ranking is measured. The
/// per-stratum variant is reported alongside.
fn matchmaker_efficiency() -> Verdict {
    let (ma, mu) = median_ratio(TournamentScope::Pooled);
    let ratio = ma / mu;
    let (sa, su) = median_ratio(TournamentScope::Strata);
    verdict(
        ratio <= 1.0,
        format!(
            "median comparisons adaptive {ma:.0} vs uniform {mu:.0}, ratio {ratio:.3} (target 0.8, ceiling 1.05); per-stratum selection against the pooled ranking {sa:.0} vs {su:.0}, ratio {:.3}",
            sa / su
        ),
    )
}

// ---------------------------------------------------------------- 8

fn percent_encode(s: &str) -> String {
    s.bytes()
        .map(|b| if b.is_ascii_alphanumeric() || b == b'-' { (b as char).to_string() } else { format!("%{b:02X}") })
        .collect()
}

struct Running {
    base: String,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    async fn start(cfg: ServiceConfig) -> Self {
        let app = AppState::open(cfg).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let handle = tokio::spawn(arena_service::serve(listener, app, std::future::pending()));
        Self { base, handle }
    }

    fn url(&self, stratum: &str, route: &str) -> String {
        format!("{}/tournaments/{}/{route}", self.base, percent_encode(stratum))
    }

    async fn kill(self) {
        self.handle.abort();
        let _ = self.handle.await;
    }

    async fn standings(&self, c: &reqwest::Client, strata: &[&str]) -> Vec<Vec<StandingEntry>> {
        let mut out = Vec::new();
        for s in strata {
            out.push(c.get(self.url(s, "standings")).send().await.unwrap().json().await.unwrap());
        }
        out
    }
}

async fn durability(dir: PathBuf) -> Verdict {
    let models = ["m-a", "m-b", "m-c", "m-d", "m-e", "m-f"];
    let strata = ["US:18-34", "UK:55+", "US:Republican", "UK:Reform UK"];
    let mut cfg = ServiceConfig::new(models, &dir);
    cfg.strata = strata.iter().map(|s| s.to_string()).collect();
    let server = Running::start(cfg.clone()).await;
    let client = reqwest::Client::new();

    let n = 1000;
    let mut tickets = Vec::with_capacity(n);
    for i in 0..n {
        let s = strata[i % strata.len()];
        let t: PairTicket = client.get(server.url(s, "next-pair")).send().await.unwrap().json().await.unwrap();
        tickets.push(t);
    }
    let outcomes = ["A", "B", "tie"];
    let body = |i: usize, t: &PairTicket| {
        serde_json::json!({"ticket_id": t.ticket_id, "outcome": outcomes[i % 3], "idempotency_key": format!("key-{i}")})
    };
    // Every fifth submission is sent twice at once.
    let mut sends = Vec::new();
    for (i, t) in tickets.iter().enumerate() {
        let copies = if i % 5 == 0 { 2 } else { 1 };
        for _ in 0..copies {
            let (client, url, body) = (client.clone(), server.url(&t.stratum, "results"), body(i, t));
            sends.push(tokio::spawn(async move {
                let r = client.post(url).json(&body).send().await.unwrap();
                (i, r.status().as_u16(), r.text().await.unwrap())
            }));
        }
    }
    let mut acks: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut bad_status = 0;
    for h in sends {
        let (i, status, text) = h.await.unwrap();
        if status != 200 {
            bad_status += 1;
        }
        acks.entry(i).or_default().insert(text);
    }
    let divergent_acks = acks.values().filter(|v| v.len() != 1).count();

    let before = server.standings(&client, &strata).await;
    server.kill().await;

    let mut events = 0;
    let mut keys = BTreeSet::new();
    let mut replayed = Vec::new();
    let mut gapless = true;
    for s in strata {
        let log = read_event_log(&dir.join(log_file_name(s))).unwrap();
        gapless &= log.iter().enumerate().all(|(k, e)| e.seq == k as u64 + 1);
        events += log.len();
        keys.extend(log.iter().map(|e| e.event_id.clone()));
        replayed.push(standings_of(&replay_log(s, models, &log, &cfg.match_cfg).unwrap()));
    }
    let plays: u64 = before.iter().flatten().map(|e| e.plays).sum();

    // A torn write after the kill must not disturb recovery.
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(dir.join(log_file_name(strata[0]))).unwrap();
        f.write_all(b"{\"seq\":999999,\"event_id\":\"torn").unwrap();
    }
    let server = Running::start(cfg).await;
    let after = server.standings(&client, &strata).await;
    let again = client
        .post(server.url(&tickets[0].stratum, "results"))
        .json(&body(0, &tickets[0]))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let same_ack_after_restart = acks[&0].contains(&again);
    let unchanged = server.standings(&client, &strata).await == after;
    server.kill().await;

    let pass = bad_status == 0
        && divergent_acks == 0
        && events == n
        && keys.len() == n
        && gapless
        && plays == 2 * n as u64
        && before == after
        && before == replayed
        && same_ack_after_restart
        && unchanged;
    verdict(
        pass,
        format!(
            "{} requests, non-200 {bad_status}, logged events {events}, distinct keys {}, divergent acks {divergent_acks}, restart bit-exact {}, replay bit-exact {}, duplicate after restart ignored {}",
            n + n / 5,
            keys.len(),
            before == after,
            before == replayed,
            same_ack_after_restart && unchanged
        ),
    )
}

// ---------------------------------------------------------------- 9

fn find_metric<'a>(metrics: impl Iterator<Item = &'a str>, needle: &str) -> Option<String> {
    metrics.into_iter().find(|m| m.to_lowercase().contains(needle)).map(str::to_owned)
}

fn released_dataset(path: &Path) -> Verdict {
    let mapping: FieldMapping = match std::env::var_os("PREF_ARENA_MAPPING") {
        Some(p) => read_json(Path::new(&p)).unwrap(),
        None => FieldMapping::default(),
    };
    let opts = IngestOptions {
        mapping,
        extend_groups: true,
        ..IngestOptions::default()
    };
    let ds = match ingest_dataset(path, &opts) {
        Ok(ds) => ds,
        Err(e) => return verdict(false, format!("cannot ingest {}: {e}", path.display())),
    };
    let by_metric = empirical_tie_rates(&ds, TieGrouping::Metric).unwrap();
    let metrics = || by_metric.iter().filter_map(|r| r.metric.as_deref());
    let (Some(trust), Some(overall)) = (find_metric(metrics(), "trust"), find_metric(metrics(), "overall")) else {
        return verdict(false, "dataset lacks a trust or overall metric");
    };
    let rate = |m: &str| by_metric.iter().find(|r| r.metric.as_deref() == Some(m)).unwrap().tie_rate;
    let (t, o) = (rate(&trust), rate(&overall));
    let extremes = by_metric.iter().all(|r| r.tie_rate <= t && r.tie_rate >= o);
    let metric_ok = extremes && (t - 0.65).abs() <= 0.03 && (o - 0.10).abs() <= 0.03;

    let by_age = empirical_tie_rates(&ds, TieGrouping::MetricAndAge).unwrap();
    let age_rate = |g: &str| {
        by_age
            .iter()
            .find(|r| r.metric.as_deref() == Some(overall.as_str()) && r.group.as_deref() == Some(g))
            .map_or(f64::NAN, |r| r.tie_rate)
    };
    let (young, old) = (age_rate("18-34"), age_rate("55+"));
    let age_ok = (young - 0.097).abs() <= 0.02 && (old - 0.125).abs() <= 0.02;

    let share = tie_rate_table(&ds, DemographicAxis::Age, DemographicAxis::Politics, Country::US, Some(&overall))
        .ok()
        .and_then(|t| anova_decompose(&t.drop_empty(), CellWeighting::Unweighted).ok())
        .map_or(f64::NAN, |d| d.variance_share_interaction);
    let share_ok = (share - 0.070).abs() <= 0.05;

    let spec = ModelSpec::for_dataset(&ds);
    let top3 = fit_metric(&ds, &overall, &spec, &SamplerConfig { seed: 9, ..Default::default() })
        .ok()
        .and_then(|d| baseline_leaderboard(&d).ok())
        .map(|b| b.into_iter().take(3).map(|e| e.model).collect::<Vec<_>>())
        .unwrap_or_default();
    let third_tier = ["mistralai/magistral-medium-2506", "x-ai/grok-4", "x-ai/grok-3"];
    let top_ok = top3.len() == 3
        && top3[0] == "google/gemini-2.5-pro"
        && top3[1] == "deepseek/deepseek-chat-v3-0324"
        && third_tier.contains(&top3[2].as_str());

    verdict(
        metric_ok && age_ok && share_ok && top_ok,
        format!(
            "trust {t:.3}, overall {o:.3}, ordering {extremes}; age 18-34 {young:.3}, 55+ {old:.3}; US age x politics share {share:.3}; top 3 {top3:?}"
        ),
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: Vec::new() };
    suite.run("1", "likelihood normalisation and symmetry", Duration::from_secs(10), likelihood_grid);
    suite.run("2", "gradient against finite differences", Duration::from_secs(60), gradient_gate);
    suite.run("3", "two-model posterior against quadrature", Duration::from_secs(300), small_instance_oracle);
    suite.run("4", "end-to-end recovery", Duration::from_secs(900), recovery);
    suite.run("5", "scoring arithmetic", Duration::from_secs(10), scoring_arithmetic);
    suite.run("6", "two-way decomposition oracle", Duration::from_secs(10), anova_oracle);
    suite.run("7", "adaptive pairing efficiency", Duration::from_secs(600), matchmaker_efficiency);
    suite.run("8", "service kill and replay", Duration::from_secs(120), || {
        let dir = tempfile::tempdir().unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        rt.block_on(durability(dir.path().to_owned()))
    });
    match std::env::var_os("PREF_ARENA_DATASET") {
        Some(p) => suite.run("9", "released dataset", Duration::from_secs(3600), || released_dataset(Path::new(&p))),
        None => suite.skip("9", "released dataset", "PREF_ARENA_DATASET not set"),
    }
    if suite.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", suite.failed.join(", "));
        ExitCode::FAILURE
    }
}
