//! Two-way decomposition of tie rates over pairs of demographic axes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Country, Dataset, DemographicAxis, Outcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("row and column axes are both {0}")]
    SameAxis(DemographicAxis),
    #[error("no {country} records observe both {row} and {col}")]
    NoData {
        country: Country,
        row: DemographicAxis,
        col: DemographicAxis,
    },
    #[error("cell ({row:?}, {col:?}) has no observations")]
    EmptyCellPresent { row: String, col: String },
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub row_axis: DemographicAxis,
    pub col_axis: DemographicAxis,
    pub row_groups: Vec<String>,
    pub col_groups: Vec<String>,
    /// `None` marks an empty cell.
    pub rates: Vec<Vec<Option<f64>>>,
    /// Fractional observation counts.
    pub counts: Vec<Vec<f64>>,
}

impl RateTable {
    /// Fully observed table with unit counts.
    pub fn from_rates(
        row_axis: DemographicAxis,
        col_axis: DemographicAxis,
        rates: Vec<Vec<f64>>,
    ) -> Self {
        let rows = rates.len();
        let cols = rates.first().map_or(0, Vec::len);
        Self {
            row_axis,
            col_axis,
            row_groups: (0..rows).map(|i| format!("r{i}")).collect(),
            col_groups: (0..cols).map(|j| format!("c{j}")).collect(),
            counts: vec![vec![1.0; cols]; rows],
            rates: rates
                .into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
        }
    }

    pub fn empty_cells(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, row) in self.rates.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                if r.is_none() {
                    out.push((self.row_groups[i].clone(), self.col_groups[j].clone()));
                }
            }
        }
        out
    }

    /// Removes the row or column with the most empty cells until none are
    /// left. Rows win ties.
    pub fn drop_empty(&self) -> RateTable {
        let mut t = self.clone();
        loop {
            let row_empty: Vec<usize> = t
                .rates
                .iter()
                .map(|r| r.iter().filter(|x| x.is_none()).count())
                .collect();
            let col_empty: Vec<usize> = (0..t.col_groups.len())
                .map(|j| t.rates.iter().filter(|r| r[j].is_none()).count())
                .collect();
            let (ri, rmax) = argmax(&row_empty);
            let (cj, cmax) = argmax(&col_empty);
            if rmax == 0 && cmax == 0 {
                return t;
            }
            if rmax >= cmax {
                t.row_groups.remove(ri);
                t.rates.remove(ri);
                t.counts.remove(ri);
            } else {
                t.col_groups.remove(cj);
                for r in &mut t.rates {
                    r.remove(cj);
                }
                for r in &mut t.counts {
                    r.remove(cj);
                }
            }
        }
    }
}

fn argmax(xs: &[usize]) -> (usize, usize) {
    xs.iter()
        .enumerate()
        .fold((0, 0), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
}

/// Tie rates per (row group, col group) cell among raters from `country`.
/// A rater with `m` groups on one axis and `k` on the other adds `1/(m k)`
/// to each matching cell. `metric` restricts to one metric.
pub fn tie_rate_table(
    dataset: &Dataset,
    row_axis: DemographicAxis,
    col_axis: DemographicAxis,
    country: Country,
    metric: Option<&str>,
) -> Result<RateTable, DecomposeError> {
    if row_axis == col_axis {
        return Err(DecomposeError::SameAxis(row_axis));
    }
    let owned = |axis: DemographicAxis| -> Vec<String> {
        dataset.group_index[axis.index()]
            .names()
            .iter()
            .filter(|l| country.owns_label(axis, l))
            .cloned()
            .collect()
    };
    let row_groups = owned(row_axis);
    let col_groups = owned(col_axis);
    let mut ties = vec![vec![0.0; col_groups.len()]; row_groups.len()];
    let mut counts = vec![vec![0.0; col_groups.len()]; row_groups.len()];
    let mut any = false;
    for r in &dataset.records {
        if r.rater.country != country || metric.is_some_and(|m| r.metric.0 != m) {
            continue;
        }
        let rows: Vec<usize> = r
            .rater
            .groups(row_axis)
            .iter()
            .filter_map(|l| row_groups.iter().position(|g| g == l))
            .collect();
        let cols: Vec<usize> = r
            .rater
            .groups(col_axis)
            .iter()
            .filter_map(|l| col_groups.iter().position(|g| g == l))
            .collect();
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        any = true;
        let w = 1.0 / (rows.len() * cols.len()) as f64;
        let tie = if r.outcome == Outcome::Tie { w } else { 0.0 };
        for &i in &rows {
            for &j in &cols {
                counts[i][j] += w;
                ties[i][j] += tie;
            }
        }
    }
    if !any {
        return Err(DecomposeError::NoData {
            country,
            row: row_axis,
            col: col_axis,
        });
    }
    let rates = ties
        .iter()
        .zip(&counts)
        .map(|(t, n)| {
            t.iter()
                .zip(n)
                .map(|(&t, &n)| (n > 0.0).then(|| t / n))
                .collect()
        })
        .collect();
    Ok(RateTable {
        row_axis,
        col_axis,
        row_groups,
        col_groups,
        rates,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellWeighting {
    Unweighted,
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub row_axis: DemographicAxis,
    pub col_axis: DemographicAxis,
    pub row_groups: Vec<String>,
    pub col_groups: Vec<String>,
    pub weighting: CellWeighting,
    pub grand_mean: f64,
    pub row_effects: Vec<f64>,
    pub col_effects: Vec<f64>,
    pub interaction: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    /// Interaction share with sums of squares taken over cells.
    pub variance_share_interaction: f64,
    /// Same share with each cell's squares weighted by its count.
    pub variance_share_interaction_count_weighted: f64,
    pub max_abs_interaction: f64,
    pub mean_abs_interaction: f64,
}

impl DecompositionResult {
    /// `mu + alpha_i + beta_j`.
    pub fn additive(&self) -> Vec<Vec<f64>> {
        self.row_effects
            .iter()
            .map(|a| {
                self.col_effects
                    .iter()
                    .map(|b| self.grand_mean + a + b)
                    .collect()
            })
            .collect()
    }
}

/// Interaction share; zero when the table is constant up to rounding.
fn share(ss: [f64; 3], floor: f64) -> f64 {
    let total: f64 = ss.iter().sum();
    if total > floor {
        ss[2] / total
    } else {
        0.0
    }
}

/// Grand mean, main effects and interaction residuals of a complete table.
pub fn anova_decompose(
    table: &RateTable,
    weighting: CellWeighting,
) -> Result<DecompositionResult, DecomposeError> {
    let rows = table.rates.len();
    let cols = table.col_groups.len();
    if rows < 2 || cols < 2 {
        return Err(DecomposeError::DegenerateTable(format!(
            "need at least 2x2, got {rows}x{cols}"
        )));
    }
    let mut y = vec![vec![0.0; cols]; rows];
    for i in 0..rows {
        if table.rates[i].len() != cols || table.counts[i].len() != cols {
            return Err(DecomposeError::DegenerateTable("ragged table".into()));
        }
        for j in 0..cols {
            match table.rates[i][j] {
                Some(v) if v.is_finite() => y[i][j] = v,
                _ => {
                    return Err(DecomposeError::EmptyCellPresent {
                        row: table.row_groups[i].clone(),
                        col: table.col_groups[j].clone(),
                    })
                }
            }
        }
    }
    let n: Vec<Vec<f64>> = match weighting {
        CellWeighting::Unweighted => vec![vec![1.0; cols]; rows],
        CellWeighting::Counts => table.counts.clone(),
    };
    let total_n: f64 = n.iter().flatten().sum();
    if !(total_n > 0.0) {
        return Err(DecomposeError::DegenerateTable("no weight".into()));
    }
    let weighted_mean = |cells: &mut dyn Iterator<Item = (f64, f64)>| -> Result<f64, DecomposeError> {
        let (mut s, mut w) = (0.0, 0.0);
        for (v, c) in cells {
            s += v * c;
            w += c;
        }
        if w > 0.0 {
            Ok(s / w)
        } else {
            Err(DecomposeError::DegenerateTable("zero-weight row or column".into()))
        }
    };
    let mu = weighted_mean(&mut (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| (y[i][j], n[i][j])))?;
    let row_effects = (0..rows)
        .map(|i| Ok(weighted_mean(&mut (0..cols).map(|j| (y[i][j], n[i][j])))? - mu))
        .collect::<Result<Vec<f64>, DecomposeError>>()?;
    let col_effects = (0..cols)
        .map(|j| Ok(weighted_mean(&mut (0..rows).map(|i| (y[i][j], n[i][j])))? - mu))
        .collect::<Result<Vec<f64>, DecomposeError>>()?;
    let interaction: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| y[i][j] - (mu + row_effects[i] + col_effects[j]))
                .collect()
        })
        .collect();

    let sums = |w: &dyn Fn(usize, usize) -> f64| -> [f64; 3] {
        let mut ss = [0.0; 3];
        for i in 0..rows {
            for j in 0..cols {
                let c = w(i, j);
                ss[0] += c * row_effects[i].powi(2);
                ss[1] += c * col_effects[j].powi(2);
                ss[2] += c * interaction[i][j].powi(2);
            }
        }
        ss
    };
    let counts = &table.counts;
    let scale = y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = |ss_weight: f64| ss_weight * (64.0 * f64::EPSILON * scale).powi(2);
    let count_total: f64 = counts.iter().flatten().sum();
    let abs: Vec<f64> = interaction.iter().flatten().map(|g| g.abs()).collect();
    Ok(DecompositionResult {
        row_axis: table.row_axis,
        col_axis: table.col_axis,
        row_groups: table.row_groups.clone(),
        col_groups: table.col_groups.clone(),
        weighting,
        grand_mean: mu,
        variance_share_interaction: share(sums(&|_, _| 1.0), floor((rows * cols) as f64)),
        variance_share_interaction_count_weighted: share(sums(&|i, j| counts[i][j]), floor(count_total)),
        max_abs_interaction: abs.iter().copied().fold(0.0, f64::max),
        mean_abs_interaction: abs.iter().sum::<f64>() / abs.len() as f64,
        row_effects,
        col_effects,
        interaction,
        observed: y,
    })
}
