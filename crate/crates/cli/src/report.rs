//! CSV and Markdown writers. Numbers print with three decimals; anything
//! non-finite prints as `NA`.

use std::fmt::Write as _;
use std::path::Path;

use arena_core::decompose::{anova_decompose, tie_rate_table, CellWeighting, DecomposeError, DecompositionResult};
use arena_core::domain::{Country, Dataset, DemographicAxis};
use arena_core::sampler::{Diagnostics, PosteriorDraws};
use arena_core::scoring::{LeaderboardEntry, RankShiftReport, TieRateReport};

use crate::CliError;

pub const NA: &str = "NA";

pub fn num(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.3}");
        // Avoid printing "-0.000".
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_owned()
        } else {
            s
        }
    } else {
        NA.to_owned()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_owned(), num)
}

fn writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>, CliError> {
    Ok(csv::Writer::from_writer(arena_core::io::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut f = arena_core::io::create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|source| CliError::File {
            path: path.to_owned(),
            source,
        })
}

/// One named leaderboard for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    pub metric: String,
    pub name: String,
    pub entries: Vec<LeaderboardEntry>,
}

pub fn leaderboard_markdown(boards: &[Board]) -> String {
    let mut md = String::from("# Leaderboards\n");
    for b in boards {
        let k = b.entries.len();
        let _ = write!(
            md,
            "\n## {} ({})\n\nScores range from 0 to {}.\n\n| model | Score | 95% CI | Expected Rank | P(best) |\n|---|---:|---:|---:|---:|\n",
            b.metric,
            b.name,
            k.saturating_sub(1)
        );
        for e in &b.entries {
            let _ = writeln!(
                md,
                "| {} | {} | [{}, {}] | {} | {} |",
                e.model.replace('|', "\\|"),
                num(e.score_mean),
                num(e.score_ci.0),
                num(e.score_ci.1),
                num(e.expected_rank),
                num(e.p_best)
            );
        }
    }
    md
}

pub fn write_leaderboards(dir: &Path, boards: &[Board]) -> Result<(), CliError> {
    write_text(&dir.join("leaderboard.md"), &leaderboard_markdown(boards))?;
    let mut w = writer(&dir.join("leaderboard.csv"))?;
    w.write_record(["metric", "board", "model", "score", "ci_low", "ci_high", "expected_rank", "p_best"])?;
    for b in boards {
        for e in &b.entries {
            w.write_record([
                b.metric.clone(),
                b.name.clone(),
                e.model.clone(),
                num(e.score_mean),
                num(e.score_ci.0),
                num(e.score_ci.1),
                num(e.expected_rank),
                num(e.p_best),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-group boards: `(metric, axis, group, entries)`.
pub fn write_group_boards(
    path: &Path,
    boards: &[(String, DemographicAxis, String, Vec<LeaderboardEntry>)],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "axis", "group", "model", "score", "ci_low", "ci_high", "expected_rank", "p_best"])?;
    for (metric, axis, group, entries) in boards {
        for e in entries {
            w.write_record([
                metric.clone(),
                axis.to_string(),
                group.clone(),
                e.model.clone(),
                num(e.score_mean),
                num(e.score_ci.0),
                num(e.score_ci.1),
                num(e.expected_rank),
                num(e.p_best),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const AXIS_MEAN_ROW: &str = "(axis mean)";

pub fn write_rank_shift(path: &Path, reports: &[(String, RankShiftReport)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "axis", "model", "mean_abs_rank_shift"])?;
    for (metric, r) in reports {
        for (model, shift) in &r.per_model {
            w.write_record([metric.clone(), r.axis.to_string(), model.clone(), num(*shift)])?;
        }
        w.write_record([metric.clone(), r.axis.to_string(), AXIS_MEAN_ROW.to_owned(), num(r.axis_mean)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_tie_rates(path: &Path, rows: &[(&str, TieRateReport)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["grouping", "metric", "age_group", "ties", "n", "tie_rate"])?;
    for (grouping, r) in rows {
        w.write_record([
            grouping.to_string(),
            r.metric.clone().unwrap_or_default(),
            r.group.clone().unwrap_or_default(),
            r.ties.to_string(),
            r.n.to_string(),
            num(r.tie_rate),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_diagnostics(path: &Path, diag: &Diagnostics) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["parameter", "rhat", "ess"])?;
    for ((name, r), e) in diag.names.iter().zip(&diag.rhat).zip(&diag.ess) {
        w.write_record([name.clone(), num(*r), num(*e)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub metric: String,
    pub records: usize,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergences: usize,
    pub mean_accept: f64,
    pub step_size: f64,
}

impl FitSummary {
    pub fn new(draws: &PosteriorDraws, records: usize, diag: Option<&Diagnostics>) -> Self {
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            metric: draws.labels.metric.clone(),
            records,
            max_rhat: diag.map(Diagnostics::max_rhat),
            min_ess: diag.map(Diagnostics::min_ess),
            divergences: draws.divergence_count,
            mean_accept: mean(&draws.acceptance_rate),
            step_size: mean(&draws.step_size),
        }
    }

    pub fn converged(&self, max_rhat: f64) -> Option<bool> {
        self.max_rhat.map(|r| r <= max_rhat)
    }
}

pub fn write_fit_summary(path: &Path, rows: &[FitSummary], max_rhat: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "records", "max_rhat", "min_ess", "divergences", "mean_accept", "step_size", "converged"])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.records.to_string(),
            opt(r.max_rhat),
            opt(r.min_ess),
            r.divergences.to_string(),
            num(r.mean_accept),
            num(r.step_size),
            r.converged(max_rhat).map_or_else(|| NA.to_owned(), |c| c.to_string()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Which tables to decompose.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposePlan {
    pub countries: Vec<Country>,
    pub axis_pairs: Vec<(DemographicAxis, DemographicAxis)>,
    /// `None` pools all metrics.
    pub metrics: Vec<Option<String>>,
    pub weighting: CellWeighting,
}

impl DecomposePlan {
    pub fn all_pairs() -> Vec<(DemographicAxis, DemographicAxis)> {
        use DemographicAxis::*;
        vec![(Age, Ethnicity), (Age, Politics), (Ethnicity, Politics)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRun {
    pub country: Country,
    pub metric: Option<String>,
    pub dropped_cells: usize,
    pub result: DecompositionResult,
    pub counts: Vec<Vec<f64>>,
}

/// Runs every table in the plan. Tables without data, or left with fewer
/// than two rows or columns after dropping empty cells, are skipped.
pub fn run_decompositions(ds: &Dataset, plan: &DecomposePlan) -> Result<Vec<DecompositionRun>, CliError> {
    let mut out = Vec::new();
    for &country in &plan.countries {
        for &(row, col) in &plan.axis_pairs {
            for metric in &plan.metrics {
                let label = format!("{country} {row}x{col} {}", metric.as_deref().unwrap_or("all metrics"));
                let table = match tie_rate_table(ds, row, col, country, metric.as_deref()) {
                    Ok(t) => t,
                    Err(DecomposeError::NoData { .. }) => {
                        log::warn!("{label}: no data, skipped");
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let dropped_cells = table.empty_cells().len();
                let table = table.drop_empty();
                match anova_decompose(&table, plan.weighting) {
                    Ok(result) => out.push(DecompositionRun {
                        country,
                        metric: metric.clone(),
                        dropped_cells,
                        counts: table.counts.clone(),
                        result,
                    }),
                    Err(DecomposeError::DegenerateTable(why)) => log::warn!("{label}: {why}, skipped"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(out)
}

pub fn write_decompositions(dir: &Path, runs: &[DecompositionRun]) -> Result<(), CliError> {
    let mut s = writer(&dir.join("decomposition_summary.csv"))?;
    s.write_record([
        "country",
        "row_axis",
        "col_axis",
        "metric",
        "weighting",
        "rows",
        "cols",
        "dropped_cells",
        "grand_mean",
        "interaction_share",
        "interaction_share_count_weighted",
        "max_abs_interaction",
        "mean_abs_interaction",
    ])?;
    let mut c = writer(&dir.join("decomposition_cells.csv"))?;
    c.write_record([
        "country", "row_axis", "col_axis", "metric", "row_group", "col_group", "count", "observed", "additive",
        "interaction",
    ])?;
    for run in runs {
        let d = &run.result;
        let metric = run.metric.clone().unwrap_or_else(|| "all".to_owned());
        let weighting = match d.weighting {
            CellWeighting::Unweighted => "unweighted",
            CellWeighting::Counts => "counts",
        };
        s.write_record([
            run.country.to_string(),
            d.row_axis.to_string(),
            d.col_axis.to_string(),
            metric.clone(),
            weighting.to_owned(),
            d.row_groups.len().to_string(),
            d.col_groups.len().to_string(),
            run.dropped_cells.to_string(),
            num(d.grand_mean),
            num(d.variance_share_interaction),
            num(d.variance_share_interaction_count_weighted),
            num(d.max_abs_interaction),
            num(d.mean_abs_interaction),
        ])?;
        let additive = d.additive();
        for (i, rg) in d.row_groups.iter().enumerate() {
            for (j, cg) in d.col_groups.iter().enumerate() {
                c.write_record([
                    run.country.to_string(),
                    d.row_axis.to_string(),
                    d.col_axis.to_string(),
                    metric.clone(),
                    rg.clone(),
                    cg.clone(),
                    num(run.counts[i][j]),
                    num(d.observed[i][j]),
                    num(additive[i][j]),
                    num(d.interaction[i][j]),
                ])?;
            }
        }
    }
    s.flush().map_err(csv::Error::from)?;
    c.flush().map_err(csv::Error::from)?;
    Ok(())
}
