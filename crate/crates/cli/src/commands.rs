use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use arena_core::decompose::CellWeighting;
use arena_core::domain::{Country, Dataset, DemographicAxis, GroupRegistry};
use arena_core::io::{
    export_dataset, ingest_dataset, load_census, load_draws, read_json, save_draws, write_json, FieldMapping,
    IngestOptions,
};
use arena_core::likelihood::ModelSpec;
use arena_core::matchmaker::MatchConfig;
use arena_core::sampler::{compute_diagnostics, fit_metric, PosteriorDraws};
use arena_core::scoring::{
    baseline_leaderboard, empirical_tie_rates, group_leaderboard, leaderboard as population_board, rank_shift_report, CensusTable,
    CountryMix, TieGrouping,
};
use arena_core::simulator::{run_campaign, sample_ground_truth, Pairing, PopulationSpec, TruthConfig};
use arena_service::{AppState, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::report::{self, Board, DecomposePlan, FitSummary};
use crate::{
    CliError, DataArgs, DecomposeArgs, FitArgs, IngestArgs, LeaderboardArgs, PairingArg, PopulationArg,
    ServeArgs, SimulateArgs, WeightingArg, EXIT_NOT_CONVERGED, MAX_RHAT,
};

/// File stem for a metric name; bytes outside `[A-Za-z0-9-]` are escaped.
pub fn file_stem(name: &str) -> String {
    let mut out = String::new();
    for b in name.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("~{b:02X}"));
        }
    }
    out
}

fn ingest_options(mapping: Option<&Path>, extend_groups: bool) -> Result<IngestOptions, CliError> {
    let mapping: FieldMapping = match mapping {
        Some(p) => read_json(p)?,
        None => FieldMapping::default(),
    };
    Ok(IngestOptions {
        mapping,
        extend_groups,
        ..IngestOptions::default()
    })
}

fn load_dataset(cfg: &RunConfig, data: &DataArgs) -> Result<Dataset, CliError> {
    let path = data
        .dataset
        .clone()
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| CliError::Config("no dataset given".into()))?;
    let mapping = data.mapping.clone().or_else(|| cfg.mapping.clone());
    let opts = ingest_options(mapping.as_deref(), data.extend_groups)?;
    let ds = ingest_dataset(&path, &opts)?;
    log::info!(
        "{}: {} records, {} models, {} metrics",
        path.display(),
        ds.records.len(),
        ds.n_models(),
        ds.metric_index.len()
    );
    Ok(ds)
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

pub fn ingest(cfg: &RunConfig, args: &IngestArgs) -> Result<u8, CliError> {
    let ds = load_dataset(cfg, &args.data)?;
    let out = cfg.out.join("dataset.jsonl");
    export_dataset(&out, &ds)?;
    for (metric, n) in ds.metric_counts() {
        println!("{metric}\t{n}");
    }
    println!("wrote {} records to {}", ds.records.len(), out.display());
    Ok(0)
}

fn selected_metrics(cfg: &RunConfig, ds: &Dataset) -> Vec<String> {
    match &cfg.metrics {
        Some(m) => m.clone(),
        None => ds.metric_index.names().to_vec(),
    }
}

pub fn fit(cfg: &RunConfig, args: &FitArgs) -> Result<u8, CliError> {
    let ds = load_dataset(cfg, &args.data)?;
    let allow_prior = args.allow_prior || cfg.allow_prior;
    let metrics = selected_metrics(cfg, &ds);
    if metrics.is_empty() {
        return Err(CliError::Config(
            "dataset has no records; pass --metrics with --allow-prior to sample the prior".into(),
        ));
    }
    if ds.n_models() < 2 {
        return Err(CliError::Config(format!("need at least 2 models, found {}", ds.n_models())));
    }
    let counts: Vec<usize> = metrics.iter().map(|m| ds.records_for_metric(m).count()).collect();
    for (m, n) in metrics.iter().zip(&counts) {
        if *n == 0 && !allow_prior {
            return Err(CliError::Config(format!(
                "metric {m:?} has no records; pass --allow-prior to sample the prior"
            )));
        }
    }
    let spec = ModelSpec::for_dataset(&ds);
    let draws_dir = cfg.out.join("draws");
    let diag_dir = cfg.out.join("diagnostics");
    mkdir(&draws_dir)?;
    mkdir(&diag_dir)?;

    let summaries = metrics
        .par_iter()
        .zip(&counts)
        .map(|(metric, &n)| -> Result<FitSummary, CliError> {
            let draws = fit_metric(&ds, metric, &spec, &cfg.sampler)?;
            save_draws(&draws_dir.join(format!("{}.jsonl", file_stem(metric))), &draws)?;
            let diag = match compute_diagnostics(&draws) {
                Ok(d) => {
                    report::write_diagnostics(&diag_dir.join(format!("{}.csv", file_stem(metric))), &d)?;
                    Some(d)
                }
                Err(e) => {
                    log::warn!("{metric}: no convergence diagnostics ({e})");
                    None
                }
            };
            Ok(FitSummary::new(&draws, n, diag.as_ref()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    report::write_fit_summary(&cfg.out.join("diagnostics.csv"), &summaries, MAX_RHAT)?;

    let mut status = 0;
    for s in &summaries {
        println!(
            "{}\trecords={}\tmax_rhat={}\tmin_ess={}\tdivergences={}",
            s.metric,
            s.records,
            s.max_rhat.map_or_else(|| report::NA.to_owned(), report::num),
            s.min_ess.map_or_else(|| report::NA.to_owned(), report::num),
            s.divergences
        );
        if s.converged(MAX_RHAT) == Some(false) {
            log::error!("{}: max R-hat {:.3} exceeds {MAX_RHAT}", s.metric, s.max_rhat.unwrap_or(f64::NAN));
            status = EXIT_NOT_CONVERGED;
        }
    }
    Ok(status)
}

/// Loads every draw file in `dir`, ordered by metric name.
pub fn load_draws_dir(dir: &Path) -> Result<Vec<PosteriorDraws>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::File {
        path: dir.to_owned(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = paths.iter().map(|p| load_draws(p)).collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err(CliError::MissingDraws(dir.to_owned()));
    }
    out.sort_by(|a, b| a.labels.metric.cmp(&b.labels.metric));
    Ok(out)
}

fn census_registry(draws: &[PosteriorDraws]) -> GroupRegistry {
    let mut reg = GroupRegistry::standard();
    for d in draws {
        for axis in DemographicAxis::ALL {
            for g in &d.labels.groups[axis.index()] {
                reg.insert(axis, g.clone());
            }
        }
    }
    reg
}

pub fn leaderboard(cfg: &RunConfig, args: &LeaderboardArgs) -> Result<u8, CliError> {
    let draws_dir = args.draws_dir.clone().unwrap_or_else(|| cfg.out.join("draws"));
    let mut all = load_draws_dir(&draws_dir)?;
    if let Some(wanted) = &cfg.metrics {
        all.retain(|d| wanted.contains(&d.labels.metric));
        if all.is_empty() {
            return Err(CliError::MissingDraws(draws_dir));
        }
    }
    let census_path = args.census.clone().or_else(|| cfg.census.clone());
    let census: Option<CensusTable> = census_path
        .as_deref()
        .map(|p| load_census(p, &census_registry(&all)))
        .transpose()?;
    if let Some(c) = &census {
        for d in &all {
            for (country, axis, label, w) in c.unfitted_groups(&d.labels.groups) {
                log::warn!(
                    "{}: census group {country} {axis} {label:?} (weight {w:.3}) has no fitted adjustment; it contributes skill only",
                    d.labels.metric
                );
            }
        }
    }
    let mix = match (&cfg.country_mix, &census) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(c)) => Some(c.default_country_mix()),
        (None, None) => None,
    };
    let report_dir = cfg.out.join("reports");
    mkdir(&report_dir)?;

    let mut boards = Vec::new();
    let mut group_boards = Vec::new();
    let mut shifts = Vec::new();
    for d in &all {
        let metric = d.labels.metric.clone();
        if let (Some(census), Some(mix)) = (&census, &mix) {
            boards.push(Board {
                metric: metric.clone(),
                name: "population".into(),
                entries: population_board(d, census, mix)?,
            });
            for &country in census.countries.keys() {
                boards.push(Board {
                    metric: metric.clone(),
                    name: country.to_string(),
                    entries: population_board(d, census, &CountryMix::single(country))?,
                });
            }
        }
        boards.push(Board {
            metric: metric.clone(),
            name: "baseline".into(),
            entries: baseline_leaderboard(d)?,
        });
        for axis in DemographicAxis::ALL {
            let groups = &d.labels.groups[axis.index()];
            for g in groups {
                group_boards.push((metric.clone(), axis, g.clone(), group_leaderboard(d, axis, g)?));
            }
            if !groups.is_empty() {
                shifts.push((metric.clone(), rank_shift_report(d, axis)?));
            }
        }
    }
    report::write_leaderboards(&report_dir, &boards)?;
    report::write_group_boards(&report_dir.join("group_leaderboards.csv"), &group_boards)?;
    report::write_rank_shift(&report_dir.join("rank_shift.csv"), &shifts)?;

    let data = DataArgs {
        dataset: args.dataset.clone(),
        mapping: args.mapping.clone(),
        extend_groups: args.extend_groups,
    };
    if data.dataset.is_some() || cfg.dataset.is_some() {
        let ds = load_dataset(cfg, &data)?;
        write_data_reports(&report_dir, &ds, cfg.metrics.as_deref(), CellWeighting::Unweighted)?;
    }
    print!("{}", report::leaderboard_markdown(&boards));
    Ok(0)
}

fn write_data_reports(
    dir: &Path,
    ds: &Dataset,
    metrics: Option<&[String]>,
    weighting: CellWeighting,
) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (name, g) in [
        ("metric", TieGrouping::Metric),
        ("age", TieGrouping::AgeGroup),
        ("metric_age", TieGrouping::MetricAndAge),
    ] {
        for r in empirical_tie_rates(ds, g)? {
            rows.push((name, r));
        }
    }
    report::write_tie_rates(&dir.join("tie_rates.csv"), &rows)?;
    let plan = DecomposePlan {
        countries: Country::ALL.to_vec(),
        axis_pairs: DecomposePlan::all_pairs(),
        metrics: metric_scopes(metrics),
        weighting,
    };
    report::write_decompositions(dir, &report::run_decompositions(ds, &plan)?)
}

fn metric_scopes(metrics: Option<&[String]>) -> Vec<Option<String>> {
    match metrics {
        Some(m) => m.iter().cloned().map(Some).collect(),
        None => vec![None],
    }
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<u8, CliError> {
    if args.models < 2 {
        return Err(CliError::Config("--models must be at least 2".into()));
    }
    let mut truth_cfg = TruthConfig::desk(args.tau);
    truth_cfg.models = (1..=args.models).map(|i| format!("model-{i}")).collect();
    truth_cfg.metrics = cfg.metrics.clone().unwrap_or_else(|| vec!["overall".into()]);
    truth_cfg.nu = vec![args.nu; truth_cfg.metrics.len()];
    let population = match args.population {
        PopulationArg::Uniform => PopulationSpec::uniform_desk(),
        PopulationArg::Skewed => PopulationSpec::skewed_desk(),
    };
    let pairing = match args.pairing {
        PairingArg::Uniform => Pairing::Uniform,
        PairingArg::Adaptive => Pairing::Adaptive(MatchConfig::default()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let truth = sample_ground_truth(&truth_cfg, &mut rng)?;
    let ds = run_campaign(&truth, &population, pairing, args.comparisons, &mut rng)?;
    let path = cfg.out.join("dataset.jsonl");
    export_dataset(&path, &ds)?;
    write_json(&cfg.out.join("truth.json"), &truth)?;
    println!("wrote {} records to {}", ds.records.len(), path.display());
    Ok(0)
}

pub fn serve(cfg: &RunConfig, args: &ServeArgs) -> Result<u8, CliError> {
    let models: Vec<String> = match (&args.models, &args.dataset) {
        (Some(m), _) => m.clone(),
        (None, Some(p)) => {
            let data = DataArgs {
                dataset: Some(p.clone()),
                ..DataArgs::default()
            };
            load_dataset(cfg, &data)?.model_index.names().to_vec()
        }
        (None, None) => return Err(CliError::Config("pass --models or --dataset for the roster".into())),
    };
    let unique: BTreeSet<&String> = models.iter().collect();
    if unique.len() != models.len() {
        return Err(CliError::Config("duplicate model in roster".into()));
    }
    let mut svc = ServiceConfig::new(models, args.log_dir.clone().unwrap_or_else(|| cfg.out.join("events")));
    if let Some(s) = &args.strata {
        svc.strata = s.clone();
    }
    let mut m = MatchConfig::default();
    if let Some(s) = args.sigma0 {
        // Derived scales follow sigma0 unless overridden below.
        m = MatchConfig {
            sigma0: s,
            perf_beta: s / 2.0,
            dyn_tau: s / 100.0,
            ..m
        };
    }
    m.mu0 = args.mu0.unwrap_or(m.mu0);
    m.perf_beta = args.beta.unwrap_or(m.perf_beta);
    m.dyn_tau = args.dyn_tau.unwrap_or(m.dyn_tau);
    m.p_draw = args.p_draw.unwrap_or(m.p_draw);
    m.exploration_eps = args.exploration_eps.unwrap_or(m.exploration_eps);
    m.validate().map_err(|e| CliError::Config(e.to_string()))?;
    svc.match_cfg = m;

    let app = AppState::open(svc)?;
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::File {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    let listen = args.listen.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen).await.map_err(|source| CliError::File {
            path: PathBuf::from(&listen),
            source,
        })?;
        arena_service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| CliError::File {
            path: PathBuf::from(&listen),
            source,
        })
    })?;
    Ok(0)
}

fn parse_axis(s: &str) -> Result<DemographicAxis, CliError> {
    DemographicAxis::parse(s).ok_or_else(|| CliError::Config(format!("unknown axis {s:?}")))
}

pub fn decompose(cfg: &RunConfig, args: &DecomposeArgs) -> Result<u8, CliError> {
    let ds = load_dataset(cfg, &args.data)?;
    let countries = match &args.country {
        Some(c) => vec![Country::parse(c).ok_or_else(|| CliError::Config(format!("unknown country {c:?}")))?],
        None => Country::ALL.to_vec(),
    };
    let axis_pairs = match (&args.rows, &args.cols) {
        (Some(r), Some(c)) => vec![(parse_axis(r)?, parse_axis(c)?)],
        (None, None) => DecomposePlan::all_pairs(),
        _ => return Err(CliError::Config("--rows and --cols go together".into())),
    };
    let plan = DecomposePlan {
        countries,
        axis_pairs,
        metrics: metric_scopes(cfg.metrics.as_deref()),
        weighting: match args.weighting {
            WeightingArg::Unweighted => CellWeighting::Unweighted,
            WeightingArg::Counts => CellWeighting::Counts,
        },
    };
    let runs = report::run_decompositions(&ds, &plan)?;
    let dir = cfg.out.join("reports");
    mkdir(&dir)?;
    report::write_decompositions(&dir, &runs)?;
    for r in &runs {
        println!(
            "{}\t{}x{}\t{}\tinteraction_share={}",
            r.country,
            r.result.row_axis,
            r.result.col_axis,
            r.metric.as_deref().unwrap_or("all"),
            report::num(r.result.variance_share_interaction)
        );
    }
    Ok(0)
}
