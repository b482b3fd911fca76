//! File formats: canonical comparison records (JSONL), census tables,
//! posterior draw files and tournament event logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{
    build_index, validate_record, ComparisonRecord, Country, Dataset, DemographicAxis,
    DomainError, GroupRegistry, MetricRef, ModelRef, Outcome, RaterProfile, Registry,
};
use crate::matchmaker::ResultEvent;
use crate::sampler::{scalar_names, DrawLabels, ParameterSnapshot, PosteriorDraws};
use crate::scoring::{CensusTable, ScoringError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field {field:?}")]
    MissingField { line: usize, field: String },
    #[error("line {line}: {source}")]
    Validation { line: usize, source: DomainError },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid census: {0}")]
    Census(#[from] ScoringError),
    #[error("invalid mapping: {0}")]
    Mapping(String),
    #[error("draw file: {0}")]
    Draws(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Canonical field names a mapping can redirect.
pub const CANONICAL_FIELDS: [&str; 11] = [
    "id",
    "metric",
    "model_a",
    "model_b",
    "outcome",
    "stratum",
    "rater",
    "rater.country",
    "rater.age",
    "rater.ethnicity",
    "rater.politics",
];

/// Adapts a foreign schema to canonical records: `fields` maps a canonical
/// field to a dotted source path, `outcomes` maps source outcome values to
/// `"A"`, `"tie"` or `"B"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMapping {
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    #[serde(default)]
    pub outcomes: BTreeMap<String, String>,
}

impl FieldMapping {
    pub fn validate(&self) -> Result<(), IoError> {
        for key in self.fields.keys() {
            if !CANONICAL_FIELDS.contains(&key.as_str()) {
                return Err(IoError::Mapping(format!("unknown canonical field {key:?}")));
            }
        }
        for v in self.outcomes.values() {
            if Outcome::from_wire(v).is_none() {
                return Err(IoError::Mapping(format!("outcome target {v:?} is not A, tie or B")));
            }
        }
        Ok(())
    }

    fn source(&self, canonical: &str) -> String {
        self.fields
            .get(canonical)
            .cloned()
            .unwrap_or_else(|| match canonical.strip_prefix("rater.") {
                Some(sub) => format!("{}.{sub}", self.source("rater")),
                None => canonical.to_owned(),
            })
    }
}

fn lookup<'a>(obj: &'a Map<String, Value>, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = obj.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_object()?.get(p)?;
    }
    Some(cur)
}

fn string_field(
    obj: &Map<String, Value>,
    mapping: &FieldMapping,
    field: &str,
    line: usize,
) -> Result<String, IoError> {
    let path = mapping.source(field);
    match lookup(obj, &path) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Null) | None => Err(IoError::MissingField {
            line,
            field: path,
        }),
        Some(other) => Err(IoError::Parse {
            line,
            message: format!("{path} should be a string, got {other}"),
        }),
    }
}

fn label_list(value: Option<&Value>, path: &str, line: usize) -> Result<Vec<String>, IoError> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) if s.is_empty() => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().map(str::to_owned).ok_or_else(|| IoError::Parse {
                    line,
                    message: format!("{path} entries must be strings"),
                })
            })
            .collect(),
        Some(other) => Err(IoError::Parse {
            line,
            message: format!("{path} should be a list of labels, got {other}"),
        }),
    }
}

/// Top-level keys of a source object the mapping reads from.
fn consumed_roots(mapping: &FieldMapping) -> BTreeSet<String> {
    CANONICAL_FIELDS
        .iter()
        .map(|f| {
            let src = mapping.source(f);
            src.split('.').next().unwrap_or_default().to_owned()
        })
        .collect()
}

/// Parses one line into a record without registry checks. Keys the
/// mapping does not read are added to `unknown`.
pub fn parse_record_line(
    text: &str,
    line: usize,
    mapping: &FieldMapping,
    unknown: &mut BTreeSet<String>,
) -> Result<ComparisonRecord, IoError> {
    let value: Value = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| IoError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let roots = consumed_roots(mapping);
    unknown.extend(obj.keys().filter(|k| !roots.contains(*k)).cloned());

    let raw_outcome = string_field(obj, mapping, "outcome", line)?;
    let wire = mapping
        .outcomes
        .get(&raw_outcome)
        .map(String::as_str)
        .unwrap_or(&raw_outcome);
    let outcome = Outcome::from_wire(wire).ok_or_else(|| IoError::Parse {
        line,
        message: format!("unknown outcome {raw_outcome:?}"),
    })?;
    let country_raw = string_field(obj, mapping, "rater.country", line)?;
    let country = Country::parse(&country_raw).ok_or_else(|| IoError::Parse {
        line,
        message: format!("unknown country {country_raw:?}"),
    })?;
    let mut rater = RaterProfile::new(country);
    for axis in DemographicAxis::ALL {
        let path = mapping.source(&format!("rater.{}", axis.name()));
        rater.memberships[axis.index()] = label_list(lookup(obj, &path), &path, line)?;
    }
    let stratum_path = mapping.source("stratum");
    let stratum = match lookup(obj, &stratum_path) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(IoError::Parse {
                line,
                message: format!("{stratum_path} should be a string, got {other}"),
            })
        }
    };
    Ok(ComparisonRecord {
        id: string_field(obj, mapping, "id", line)?,
        metric: MetricRef::new(string_field(obj, mapping, "metric", line)?),
        model_a: ModelRef::new(string_field(obj, mapping, "model_a", line)?),
        model_b: ModelRef::new(string_field(obj, mapping, "model_b", line)?),
        outcome,
        rater,
        stratum,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub mapping: FieldMapping,
    pub groups: GroupRegistry,
    /// Register group labels found in the data instead of rejecting them.
    pub extend_groups: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            mapping: FieldMapping::default(),
            groups: GroupRegistry::standard(),
            extend_groups: false,
        }
    }
}

/// Streams, validates and indexes records. Blank lines are skipped.
pub fn read_dataset<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<Dataset, IoError> {
    opts.mapping.validate()?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut unknown = BTreeSet::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text.map_err(|e| IoError::Parse {
            line,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        records.push(parse_record_line(&text, line, &opts.mapping, &mut unknown)?);
        lines.push(line);
    }
    for field in &unknown {
        log::warn!("ignoring unknown field {field:?}");
    }
    let mut groups = opts.groups.clone();
    if opts.extend_groups {
        groups.merge(&GroupRegistry::from_records(&records));
    }
    let registry = Registry {
        models: records
            .iter()
            .flat_map(|r| [r.model_a.0.clone(), r.model_b.0.clone()])
            .collect(),
        groups: groups.clone(),
    };
    let mut ids = BTreeSet::new();
    for (r, &line) in records.iter().zip(&lines) {
        validate_record(r.clone(), &registry).map_err(|source| IoError::Validation { line, source })?;
        if !ids.insert(r.id.as_str()) {
            return Err(IoError::Parse {
                line,
                message: format!("duplicate record id {:?}", r.id),
            });
        }
    }
    Ok(build_index(records, &groups)?)
}

pub fn ingest_dataset(path: &Path, opts: &IngestOptions) -> Result<Dataset, IoError> {
    read_dataset(open(path)?, opts)
}

#[derive(Serialize)]
struct CanonicalRater<'a> {
    country: &'a str,
    age: &'a [String],
    ethnicity: &'a [String],
    politics: &'a [String],
}

#[derive(Serialize)]
struct CanonicalLine<'a> {
    id: &'a str,
    metric: &'a str,
    model_a: &'a str,
    model_b: &'a str,
    outcome: &'a str,
    rater: CanonicalRater<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratum: Option<&'a str>,
}

pub fn record_line(r: &ComparisonRecord) -> Result<String, IoError> {
    Ok(serde_json::to_string(&CanonicalLine {
        id: &r.id,
        metric: r.metric.as_str(),
        model_a: r.model_a.as_str(),
        model_b: r.model_b.as_str(),
        outcome: r.outcome.as_wire(),
        rater: CanonicalRater {
            country: r.rater.country.code(),
            age: r.rater.groups(DemographicAxis::Age),
            ethnicity: r.rater.groups(DemographicAxis::Ethnicity),
            politics: r.rater.groups(DemographicAxis::Politics),
        },
        stratum: r.stratum.as_deref(),
    })?)
}

pub fn write_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a ComparisonRecord>,
) -> Result<(), IoError> {
    for r in records {
        writeln!(w, "{}", record_line(r)?).map_err(io_err(Path::new("<output>")))?;
    }
    w.flush().map_err(io_err(Path::new("<output>")))
}

pub fn export_dataset(path: &Path, dataset: &Dataset) -> Result<(), IoError> {
    write_records(create(path)?, &dataset.records)
}

pub fn load_census(path: &Path, registry: &GroupRegistry) -> Result<CensusTable, IoError> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(io_err(path))?;
    let census: CensusTable = serde_json::from_str(&text)?;
    census.validate(registry)?;
    Ok(census)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DrawHeader {
    format: String,
    labels: DrawLabels,
    alpha: f64,
    n_chains: usize,
    n_draws: usize,
    divergence_count: usize,
    acceptance_rate: Vec<f64>,
    step_size: Vec<f64>,
    names: Vec<String>,
}

const DRAW_FORMAT: &str = "posterior-draws/1";

struct DrawLine<'a> {
    chain: usize,
    iteration: usize,
    names: &'a [String],
    values: Vec<f64>,
}

impl Serialize for DrawLine<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.names.len() + 2))?;
        map.serialize_entry("chain", &self.chain)?;
        map.serialize_entry("iteration", &self.iteration)?;
        for (n, v) in self.names.iter().zip(&self.values) {
            map.serialize_entry(n, v)?;
        }
        map.end()
    }
}

/// Header line, then one object per draw with the constrained scalars
/// under their [`scalar_names`].
pub fn write_draws<W: Write>(mut w: W, draws: &PosteriorDraws) -> Result<(), IoError> {
    let names = scalar_names(&draws.labels);
    let header = DrawHeader {
        format: DRAW_FORMAT.into(),
        labels: draws.labels.clone(),
        alpha: draws.alpha,
        n_chains: draws.n_chains,
        n_draws: draws.n_draws,
        divergence_count: draws.divergence_count,
        acceptance_rate: draws.acceptance_rate.clone(),
        step_size: draws.step_size.clone(),
        names: names.clone(),
    };
    let out = Path::new("<draws>");
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w).map_err(io_err(out))?;
    for d in &draws.draws {
        let values = d.flatten();
        if values.len() != names.len() {
            return Err(IoError::Draws("draw does not match its labels".into()));
        }
        serde_json::to_writer(
            &mut w,
            &DrawLine {
                chain: d.chain,
                iteration: d.iteration,
                names: &names,
                values,
            },
        )?;
        writeln!(w).map_err(io_err(out))?;
    }
    w.flush().map_err(io_err(out))
}

pub fn save_draws(path: &Path, draws: &PosteriorDraws) -> Result<(), IoError> {
    write_draws(create(path)?, draws)
}

/// Reads a draw file. Raw adjustments are not stored; they come back as
/// the centred adjustments divided by their scale.
pub fn read_draws<R: BufRead>(reader: R) -> Result<PosteriorDraws, IoError> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| IoError::Draws("empty draw file".into()))?
        .map_err(io_err(Path::new("<draws>")))?;
    let header: DrawHeader = serde_json::from_str(&first)?;
    if header.format != DRAW_FORMAT {
        return Err(IoError::Draws(format!("unsupported format {:?}", header.format)));
    }
    if scalar_names(&header.labels) != header.names {
        return Err(IoError::Draws("header names do not match labels".into()));
    }
    let n = header.labels.models.len();
    let g = [0, 1, 2].map(|k| header.labels.groups[k].len());
    let mut draws = Vec::new();
    for (i, text) in lines.enumerate() {
        let line = i + 2;
        let text = text.map_err(io_err(Path::new("<draws>")))?;
        if text.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            line,
            message: e.to_string(),
        })?;
        let get = |key: &str| -> Result<f64, IoError> {
            obj.get(key).and_then(Value::as_f64).ok_or_else(|| IoError::MissingField {
                line,
                field: key.to_owned(),
            })
        };
        let values: Vec<f64> = header.names.iter().map(|k| get(k)).collect::<Result<_, _>>()?;
        let mut it = values.into_iter();
        let theta: Vec<f64> = it.by_ref().take(n).collect();
        let u: [Vec<f64>; 3] = g.map(|gk| it.by_ref().take(n * gk).collect());
        let tau = [0, 1, 2].map(|_| it.next().unwrap_or(f64::NAN));
        let nu = it.next().unwrap_or(f64::NAN);
        let u_raw = [0, 1, 2].map(|k| u[k].iter().map(|x| x / tau[k]).collect());
        draws.push(ParameterSnapshot {
            chain: get("chain")? as usize,
            iteration: get("iteration")? as usize,
            theta,
            u,
            u_raw,
            tau,
            nu,
        });
    }
    if draws.len() != header.n_chains * header.n_draws {
        return Err(IoError::Draws(format!(
            "expected {} draws, found {}",
            header.n_chains * header.n_draws,
            draws.len()
        )));
    }
    Ok(PosteriorDraws {
        labels: header.labels,
        alpha: header.alpha,
        n_chains: header.n_chains,
        n_draws: header.n_draws,
        draws,
        divergence_count: header.divergence_count,
        acceptance_rate: header.acceptance_rate,
        step_size: header.step_size,
    })
}

pub fn load_draws(path: &Path) -> Result<PosteriorDraws, IoError> {
    read_draws(open(path)?)
}

/// Reads an event log. A final line cut short by a crash (no trailing
/// newline, unparsable) is dropped with a warning; a missing file is an
/// empty log.
pub fn read_event_log(path: &Path) -> Result<Vec<ResultEvent>, IoError> {
    let mut text = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut text).map_err(io_err(path))?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    }
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ResultEvent>(l) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: dropping truncated final line", path.display());
            }
            Err(e) => {
                return Err(IoError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

/// Append-only handle on an event log. Each append is flushed and synced
/// before returning.
#[derive(Debug)]
pub struct EventLogWriter {
    path: PathBuf,
    file: File,
}

impl EventLogWriter {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut w = Self {
            path: path.to_owned(),
            file,
        };
        w.repair_tail()?;
        Ok(w)
    }

    /// Cuts a torn final line so later appends start clean.
    fn repair_tail(&mut self) -> Result<(), IoError> {
        let text = std::fs::read(&self.path).map_err(io_err(&self.path))?;
        if !text.is_empty() && !text.ends_with(b"\n") {
            let keep = text.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
            log::warn!("{}: truncating torn final line", self.path.display());
            self.file.set_len(keep as u64).map_err(io_err(&self.path))?;
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        Ok(())
    }

    pub fn append(&mut self, event: &ResultEvent) -> Result<(), IoError> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
