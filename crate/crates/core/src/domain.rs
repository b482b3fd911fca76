//! Domain vocabulary: models, metrics, demographic groups, comparison
//! records, and the dense indices every numerical module works against.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("record {id:?} compares model {model:?} with itself")]
    SelfComparison { id: String, model: String },
    #[error("record {id:?} references unknown {axis} group {label:?}")]
    UnknownGroup {
        id: String,
        axis: DemographicAxis,
        label: String,
    },
    #[error("record {id:?} references unknown model {model:?}")]
    UnknownModel { id: String, model: String },
    #[error("record has an empty {field}")]
    EmptyId { field: &'static str },
    #[error("record {id:?} lists {axis} group {label:?} more than once")]
    DuplicateGroup {
        id: String,
        axis: DemographicAxis,
        label: String,
    },
}

/// One of the three demographic axes a rater is described on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemographicAxis {
    Age,
    Ethnicity,
    Politics,
}

impl DemographicAxis {
    pub const ALL: [DemographicAxis; 3] = [
        DemographicAxis::Age,
        DemographicAxis::Ethnicity,
        DemographicAxis::Politics,
    ];

    pub fn index(self) -> usize {
        match self {
            DemographicAxis::Age => 0,
            DemographicAxis::Ethnicity => 1,
            DemographicAxis::Politics => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DemographicAxis::Age => "age",
            DemographicAxis::Ethnicity => "ethnicity",
            DemographicAxis::Politics => "politics",
        }
    }

    /// Ethnicity and politics labels carry a `COUNTRY:` prefix; age labels
    /// are shared between countries.
    pub fn is_country_namespaced(self) -> bool {
        !matches!(self, DemographicAxis::Age)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "age" => Some(DemographicAxis::Age),
            "ethnicity" | "eth" => Some(DemographicAxis::Ethnicity),
            "politics" | "pol" => Some(DemographicAxis::Politics),
            _ => None,
        }
    }
}

impl fmt::Display for DemographicAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Country {
    US,
    UK,
}

impl Country {
    pub const ALL: [Country; 2] = [Country::US, Country::UK];

    pub fn code(self) -> &'static str {
        match self {
            Country::US => "US",
            Country::UK => "UK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "US" | "us" => Some(Country::US),
            "UK" | "uk" | "GB" => Some(Country::UK),
            _ => None,
        }
    }

    /// Whether a group label on `axis` is visible to raters from this country.
    pub fn owns_label(self, axis: DemographicAxis, label: &str) -> bool {
        if !axis.is_country_namespaced() {
            return true;
        }
        label
            .split_once(':')
            .is_some_and(|(prefix, _)| prefix == self.code())
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelRef(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetricRef(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupRef {
    pub axis: DemographicAxis,
    pub label: String,
}

impl GroupRef {
    pub fn new(axis: DemographicAxis, label: impl Into<String>) -> Self {
        Self {
            axis,
            label: label.into(),
        }
    }
}

macro_rules! string_ref {
    ($t:ty) => {
        impl $t {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_ref!(ModelRef);
string_ref!(MetricRef);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "A")]
    WinA,
    #[serde(rename = "tie")]
    Tie,
    #[serde(rename = "B")]
    WinB,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::WinA, Outcome::Tie, Outcome::WinB];

    pub fn index(self) -> usize {
        match self {
            Outcome::WinA => 0,
            Outcome::Tie => 1,
            Outcome::WinB => 2,
        }
    }

    /// The same result seen with A and B swapped.
    pub fn flipped(self) -> Self {
        match self {
            Outcome::WinA => Outcome::WinB,
            Outcome::Tie => Outcome::Tie,
            Outcome::WinB => Outcome::WinA,
        }
    }

    /// Canonical wire spelling: `"A"`, `"tie"`, `"B"`.
    pub fn as_wire(self) -> &'static str {
        match self {
            Outcome::WinA => "A",
            Outcome::Tie => "tie",
            Outcome::WinB => "B",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "A" => Some(Outcome::WinA),
            "tie" => Some(Outcome::Tie),
            "B" => Some(Outcome::WinB),
            _ => None,
        }
    }
}

/// A rater's country and group memberships, one label list per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub country: Country,
    pub memberships: [Vec<String>; 3],
}

impl RaterProfile {
    pub fn new(country: Country) -> Self {
        Self {
            country,
            memberships: Default::default(),
        }
    }

    pub fn with(mut self, axis: DemographicAxis, label: impl Into<String>) -> Self {
        self.memberships[axis.index()].push(label.into());
        self
    }

    pub fn groups(&self, axis: DemographicAxis) -> &[String] {
        &self.memberships[axis.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub id: String,
    pub metric: MetricRef,
    pub model_a: ModelRef,
    pub model_b: ModelRef,
    pub outcome: Outcome,
    pub rater: RaterProfile,
    pub stratum: Option<String>,
}

/// Known group labels per axis. The model set is implied by the records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupRegistry {
    groups: [BTreeSet<String>; 3],
}

impl GroupRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The strata used for the US/UK arena: shared age bands plus
    /// country-namespaced ethnicity and party labels.
    pub fn standard() -> Self {
        let mut reg = Self::new();
        for age in ["18-34", "35-54", "55+"] {
            reg.insert(DemographicAxis::Age, age);
        }
        for eth in ["Asian", "Black", "White", "Other"] {
            reg.insert(DemographicAxis::Ethnicity, format!("UK:{eth}"));
        }
        for eth in ["Hispanic", "Asian", "African American", "White"] {
            reg.insert(DemographicAxis::Ethnicity, format!("US:{eth}"));
        }
        for pol in ["Democrat", "Republican", "Independent"] {
            reg.insert(DemographicAxis::Politics, format!("US:{pol}"));
        }
        for pol in [
            "Conservative",
            "Labour",
            "Liberal Democrats",
            "Greens",
            "Reform UK",
        ] {
            reg.insert(DemographicAxis::Politics, format!("UK:{pol}"));
        }
        reg
    }

    /// Registry containing every group any record mentions.
    pub fn from_records(records: &[ComparisonRecord]) -> Self {
        let mut reg = Self::new();
        for r in records {
            for axis in DemographicAxis::ALL {
                for label in r.rater.groups(axis) {
                    reg.insert(axis, label.clone());
                }
            }
        }
        reg
    }

    pub fn insert(&mut self, axis: DemographicAxis, label: impl Into<String>) {
        self.groups[axis.index()].insert(label.into());
    }

    pub fn contains(&self, axis: DemographicAxis, label: &str) -> bool {
        self.groups[axis.index()].contains(label)
    }

    pub fn labels(&self, axis: DemographicAxis) -> impl Iterator<Item = &str> {
        self.groups[axis.index()].iter().map(String::as_str)
    }

    pub fn merge(&mut self, other: &GroupRegistry) {
        for axis in DemographicAxis::ALL {
            for label in other.labels(axis) {
                self.insert(axis, label);
            }
        }
    }
}

/// Models and groups a record may reference.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub models: BTreeSet<String>,
    pub groups: GroupRegistry,
}

pub fn validate_record(
    record: ComparisonRecord,
    registry: &Registry,
) -> Result<ComparisonRecord, DomainError> {
    if record.id.is_empty() {
        return Err(DomainError::EmptyId { field: "id" });
    }
    if record.metric.0.is_empty() {
        return Err(DomainError::EmptyId { field: "metric" });
    }
    if record.model_a.0.is_empty() || record.model_b.0.is_empty() {
        return Err(DomainError::EmptyId { field: "model" });
    }
    if record.model_a == record.model_b {
        return Err(DomainError::SelfComparison {
            id: record.id.clone(),
            model: record.model_a.0.clone(),
        });
    }
    for model in [&record.model_a, &record.model_b] {
        if !registry.models.contains(&model.0) {
            return Err(DomainError::UnknownModel {
                id: record.id.clone(),
                model: model.0.clone(),
            });
        }
    }
    for axis in DemographicAxis::ALL {
        let labels = record.rater.groups(axis);
        for (i, label) in labels.iter().enumerate() {
            if !registry.groups.contains(axis, label) {
                return Err(DomainError::UnknownGroup {
                    id: record.id.clone(),
                    axis,
                    label: label.clone(),
                });
            }
            if labels[..i].contains(label) {
                return Err(DomainError::DuplicateGroup {
                    id: record.id.clone(),
                    axis,
                    label: label.clone(),
                });
            }
        }
    }
    Ok(record)
}

/// Dense bijection between identifiers and `0..n`, assigned in lexicographic
/// order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Index {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Index {
    pub fn from_sorted<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = set.into_iter().collect();
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, lookup }
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<ComparisonRecord>,
    pub model_index: Index,
    pub group_index: [Index; 3],
    pub metric_index: Index,
}

/// Validates and indexes a record sequence. Models are taken from the
/// records; groups come from `groups` (every registered group is indexed,
/// observed or not, so census weights always have a slot).
pub fn build_index(
    records: Vec<ComparisonRecord>,
    groups: &GroupRegistry,
) -> Result<Dataset, DomainError> {
    let models: BTreeSet<String> = records
        .iter()
        .flat_map(|r| [r.model_a.0.clone(), r.model_b.0.clone()])
        .collect();
    build_index_with_models(records, models, groups)
}

/// Like [`build_index`], but with an explicit model roster. Models that
/// never appear in a record are still indexed.
pub fn build_index_with_models(
    records: Vec<ComparisonRecord>,
    models: BTreeSet<String>,
    groups: &GroupRegistry,
) -> Result<Dataset, DomainError> {
    let registry = Registry {
        models,
        groups: groups.clone(),
    };
    let records = records
        .into_iter()
        .map(|r| validate_record(r, &registry))
        .collect::<Result<Vec<_>, _>>()?;
    let metric_index = Index::from_sorted(records.iter().map(|r| r.metric.0.clone()));
    let group_index = DemographicAxis::ALL.map(|axis| Index::from_sorted(groups.labels(axis)));
    Ok(Dataset {
        model_index: Index::from_sorted(registry.models),
        group_index,
        metric_index,
        records,
    })
}

impl Dataset {
    pub fn n_models(&self) -> usize {
        self.model_index.len()
    }

    pub fn n_groups(&self) -> [usize; 3] {
        [
            self.group_index[0].len(),
            self.group_index[1].len(),
            self.group_index[2].len(),
        ]
    }

    pub fn records_for_metric<'a>(
        &'a self,
        metric: &'a str,
    ) -> impl Iterator<Item = &'a ComparisonRecord> + 'a {
        self.records.iter().filter(move |r| r.metric.0 == metric)
    }

    /// Registry equivalent to what this dataset was indexed against.
    pub fn group_registry(&self) -> GroupRegistry {
        let mut reg = GroupRegistry::new();
        for axis in DemographicAxis::ALL {
            for label in self.group_index[axis.index()].names() {
                reg.insert(axis, label.clone());
            }
        }
        reg
    }

    pub fn metric_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.metric.0.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Equal weights `1/m` over the rater's `m` groups on `axis`; all zeros when
/// the axis is unobserved. Labels missing from `group_index` are ignored.
pub fn membership_weights(
    rater: &RaterProfile,
    axis: DemographicAxis,
    group_index: &Index,
) -> Vec<f64> {
    let mut weights = vec![0.0; group_index.len()];
    let indices: Vec<usize> = rater
        .groups(axis)
        .iter()
        .filter_map(|label| group_index.get(label))
        .collect();
    if indices.is_empty() {
        return weights;
    }
    let w = 1.0 / indices.len() as f64;
    for i in indices {
        weights[i] = w;
    }
    weights
}

/// Sparse form of [`membership_weights`]: `(group, weight)` pairs.
pub fn sparse_membership_weights(
    rater: &RaterProfile,
    axis: DemographicAxis,
    group_index: &Index,
) -> Vec<(usize, f64)> {
    let mut indices: Vec<usize> = rater
        .groups(axis)
        .iter()
        .filter_map(|label| group_index.get(label))
        .collect();
    indices.sort_unstable();
    indices.dedup();
    let w = 1.0 / indices.len().max(1) as f64;
    indices.into_iter().map(|i| (i, w)).collect()
}
