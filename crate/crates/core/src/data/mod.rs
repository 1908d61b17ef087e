//! Crop dataset ingestion, validation and preprocessing.
//!
//! A [`Dataset`] is a list of soil/weather readings in a fixed 7-feature
//! order plus the canonical list of 22 crop classes. Loading maps the
//! abbreviated headers of the public CSV (`N`, `P`, `K`, ...) onto the
//! schema and rejects rows whose values are out of physical range.

mod scaler;
mod split;
mod stats;

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scaler::Scaler;
pub use split::{stratified_folds, stratified_split, stratified_subset};
pub use stats::{compute_stats, quantile_linear, FeatureStats, FeatureSummary};

/// Number of input features in every reading.
pub const N_FEATURES: usize = 7;

/// A single reading in schema order.
pub type Features = [f64; N_FEATURES];

/// Column indices in schema order.
pub mod feature {
    pub const NITROGEN: usize = 0;
    pub const PHOSPHORUS: usize = 1;
    pub const POTASSIUM: usize = 2;
    pub const TEMPERATURE: usize = 3;
    pub const HUMIDITY: usize = 4;
    pub const PH: usize = 5;
    pub const RAINFALL: usize = 6;
}

/// The 22 crop labels of the public dataset, in lexicographic order.
pub const CROPS: [&str; 22] = [
    "apple",
    "banana",
    "blackgram",
    "chickpea",
    "coconut",
    "coffee",
    "cotton",
    "grapes",
    "jute",
    "kidneybeans",
    "lentil",
    "maize",
    "mango",
    "mothbeans",
    "mungbean",
    "muskmelon",
    "orange",
    "papaya",
    "pigeonpeas",
    "pomegranate",
    "rice",
    "watermelon",
];

/// Small labeled CSV (10 rows for each of papaya, rice, mango and banana)
/// used by offline tests and demos.
pub const FIXTURE_CSV: &str = include_str!("../../data/fixture.csv");

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    InvalidSchema(String),
    #[error("line {line}: cannot parse `{value}` as a number for `{column}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: unknown crop label `{label}`")]
    UnknownLabel { line: u64, label: String },
    #[error("{} row(s) out of range: {}", .0.len(), format_violations(.0))]
    InvalidRows(Vec<RowViolation>),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("dataset is empty")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A row rejected by range validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    pub line: u64,
    pub feature: String,
    pub value: f64,
}

fn format_violations(rows: &[RowViolation]) -> String {
    let shown: Vec<String> = rows
        .iter()
        .take(10)
        .map(|r| format!("line {} {}={}", r.line, r.feature, r.value))
        .collect();
    let mut out = shown.join(", ");
    if rows.len() > 10 {
        out.push_str(&format!(", ... ({} more)", rows.len() - 10));
    }
    out
}

/// Names and units of the 7 features plus the label column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub label_name: String,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::crop()
    }
}

impl FeatureSchema {
    /// Soil nutrients, weather and pH, in the order used throughout the crate.
    pub fn crop() -> Self {
        let names = [
            "nitrogen",
            "phosphorus",
            "potassium",
            "temperature",
            "humidity",
            "ph",
            "rainfall",
        ];
        let units = [
            "soil-nutrient ratio",
            "soil-nutrient ratio",
            "soil-nutrient ratio",
            "°C",
            "%",
            "pH",
            "mm",
        ];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            units: units.iter().map(|s| s.to_string()).collect(),
            label_name: "label".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.names.len() != N_FEATURES || self.units.len() != N_FEATURES {
            return Err(DataError::InvalidSchema(format!(
                "expected {N_FEATURES} features, got {} names and {} units",
                self.names.len(),
                self.units.len()
            )));
        }
        let unique: HashSet<&str> = self.names.iter().map(String::as_str).collect();
        if unique.len() != N_FEATURES {
            return Err(DataError::InvalidSchema("feature names must be unique".into()));
        }
        if unique.contains(self.label_name.as_str()) {
            return Err(DataError::InvalidSchema(format!(
                "label column `{}` collides with a feature name",
                self.label_name
            )));
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let wanted = name.trim().to_ascii_lowercase();
        self.names.iter().position(|n| *n == wanted)
    }

    /// Header spellings accepted for each schema column.
    fn aliases(name: &str) -> Vec<String> {
        let mut out = vec![name.to_ascii_lowercase()];
        let extra: &[&str] = match name {
            "nitrogen" => &["n"],
            "phosphorus" => &["p"],
            "potassium" => &["k"],
            "temperature" => &["temp"],
            "ph" => &["p_h", "soil_ph"],
            "label" => &["crop", "target"],
            _ => &[],
        };
        out.extend(extra.iter().map(|s| s.to_string()));
        out
    }
}

/// Normalizes a crop label to the dataset spelling ("kidney beans" -> "kidneybeans").
pub fn normalize_label(label: &str) -> String {
    label
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Index of a crop in [`CROPS`], accepting spaced or mixed-case spellings.
pub fn crop_index(label: &str) -> Option<usize> {
    let norm = normalize_label(label);
    CROPS.iter().position(|c| *c == norm)
}

/// One soil-weather reading with an optional class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Features,
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(features: Features) -> Self {
        Self {
            features,
            label: None,
        }
    }

    pub fn labeled(features: Features, label: usize) -> Self {
        Self {
            features,
            label: Some(label),
        }
    }

    /// Returns `(feature index, reason)` for the first range violation.
    pub fn check(&self) -> Result<(), (usize, &'static str)> {
        check_features(&self.features)
    }
}

pub(crate) fn check_features(x: &Features) -> Result<(), (usize, &'static str)> {
    for (j, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err((j, "must be finite"));
        }
        let ok = match j {
            feature::NITROGEN | feature::PHOSPHORUS | feature::POTASSIUM => v >= 0.0,
            feature::HUMIDITY => (0.0..=100.0).contains(&v),
            feature::PH => (0.0..=14.0).contains(&v),
            feature::RAINFALL => v >= 0.0,
            _ => true,
        };
        if !ok {
            let reason = match j {
                feature::HUMIDITY => "must be within [0, 100]",
                feature::PH => "must be within [0, 14]",
                _ => "must be non-negative",
            };
            return Err((j, reason));
        }
    }
    Ok(())
}

/// Validates a feature vector, producing an error that names the feature.
pub fn validate_features(schema: &FeatureSchema, x: &Features) -> Result<(), DataError> {
    check_features(x).map_err(|(j, reason)| {
        DataError::InvalidSample(format!("{} = {} {reason}", schema.names[j], x[j]))
    })
}

/// A labeled (or partially labeled) collection of readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
}

impl Dataset {
    /// Empty dataset over the crop schema and the 22 canonical classes.
    pub fn empty() -> Self {
        Self {
            schema: FeatureSchema::crop(),
            samples: Vec::new(),
            classes: CROPS.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn from_samples(samples: Vec<Sample>) -> Self {
        Self {
            samples,
            ..Self::empty()
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        let norm = normalize_label(name);
        self.classes.iter().position(|c| normalize_label(c) == norm)
    }

    /// Samples per class; unlabeled samples are not counted.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Number of classes with at least one sample.
    pub fn n_present_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn features(&self) -> Vec<Features> {
        self.samples.iter().map(|s| s.features).collect()
    }

    /// Labels of every sample, or an error naming the first unlabeled row.
    pub fn labels(&self) -> Result<Vec<usize>, DataError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.label
                    .ok_or_else(|| DataError::InvalidSample(format!("sample {i} has no label")))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }
}

/// Parses a CSV stream into a [`Dataset`].
///
/// The header must contain every schema feature (aliases such as `N`, `P`,
/// `K` are accepted). The label column is optional; when present every
/// label must name one of the 22 crops. Rows with out-of-range values are
/// collected and reported together with their line numbers.
pub fn load_dataset<R: Read>(source: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let find = |name: &str| {
        let aliases = FeatureSchema::aliases(name);
        headers.iter().position(|h| aliases.iter().any(|a| a == h))
    };
    let mut columns = [0usize; N_FEATURES];
    for (j, name) in schema.names.iter().enumerate() {
        columns[j] = find(name).ok_or_else(|| DataError::MissingColumn(name.clone()))?;
    }
    let label_col = find(&schema.label_name);

    let mut dataset = Dataset {
        schema: schema.clone(),
        samples: Vec::new(),
        classes: CROPS.iter().map(|c| c.to_string()).collect(),
    };
    let mut violations = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut x = [0.0; N_FEATURES];
        for (j, &col) in columns.iter().enumerate() {
            let raw = record.get(col).unwrap_or("");
            x[j] = raw.parse::<f64>().map_err(|_| DataError::Parse {
                line,
                column: schema.names[j].clone(),
                value: raw.to_string(),
            })?;
        }
        let label = match label_col.and_then(|c| record.get(c)) {
            Some(raw) if !raw.is_empty() => Some(crop_index(raw).ok_or_else(|| {
                DataError::UnknownLabel {
                    line,
                    label: raw.to_string(),
                }
            })?),
            _ => None,
        };
        if let Err((j, _)) = check_features(&x) {
            violations.push(RowViolation {
                line,
                feature: schema.names[j].clone(),
                value: x[j],
            });
            continue;
        }
        dataset.samples.push(Sample { features: x, label });
    }
    if !violations.is_empty() {
        return Err(DataError::InvalidRows(violations));
    }
    Ok(dataset)
}

pub fn load_dataset_path(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset(std::io::BufReader::new(file), schema)
}

/// The bundled fixture as a [`Dataset`].
pub fn fixture_dataset() -> Dataset {
    load_dataset(FIXTURE_CSV.as_bytes(), &FeatureSchema::crop()).expect("bundled fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "N,P,K,temperature,humidity,ph,rainfall,label\n";

    #[test]
    fn parses_single_rice_row() {
        let csv = format!("{HEADER}90,42,43,20.88,82.00,6.50,202.94,rice\n");
        let ds = load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.samples[0];
        assert_eq!(s.features, [90.0, 42.0, 43.0, 20.88, 82.0, 6.5, 202.94]);
        assert_eq!(s.label, Some(crop_index("rice").unwrap()));
        assert_eq!(ds.classes[s.label.unwrap()], "rice");
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let ds = load_dataset(HEADER.as_bytes(), &FeatureSchema::crop()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.n_classes(), 22);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "N,P,temperature,humidity,ph,rainfall,label\n";
        let err = load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "potassium"), "{err}");
    }

    #[test]
    fn bad_number_reports_line() {
        let csv = format!("{HEADER}1,2,3,4,50,6,7,rice\n1,2,x,4,50,6,7,rice\n");
        match load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap_err() {
            DataError::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "potassium");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let csv = format!("{HEADER}1,2,3,4,50,6,7,tomato\n");
        let err = load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap_err();
        assert!(matches!(err, DataError::UnknownLabel { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_range_rows_collected_with_lines() {
        let csv = format!(
            "{HEADER}1,2,3,4,50,6,7,rice\n1,2,3,4,101,6,7,rice\n1,2,3,4,50,15,7,rice\n-1,2,3,4,50,6,7,rice\n"
        );
        match load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap_err() {
            DataError::InvalidRows(rows) => {
                let lines: Vec<u64> = rows.iter().map(|r| r.line).collect();
                assert_eq!(lines, vec![3, 4, 5]);
                assert_eq!(rows[0].feature, "humidity");
                assert_eq!(rows[1].feature, "ph");
                assert_eq!(rows[2].feature, "nitrogen");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn spaced_labels_and_long_headers_accepted() {
        let csv = "nitrogen,phosphorus,potassium,temperature,humidity,ph,rainfall,crop\n\
                   10,60,20,20,20,5.8,100,kidney beans\n";
        let ds = load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap();
        assert_eq!(ds.classes[ds.samples[0].label.unwrap()], "kidneybeans");
    }

    #[test]
    fn unlabeled_csv_loads_without_labels() {
        let csv = "N,P,K,temperature,humidity,ph,rainfall\n1,2,3,4,50,6,7\n";
        let ds = load_dataset(csv.as_bytes(), &FeatureSchema::crop()).unwrap();
        assert_eq!(ds.samples[0].label, None);
        assert!(ds.labels().is_err());
    }

    #[test]
    fn schema_invariants() {
        let schema = FeatureSchema::crop();
        schema.validate().unwrap();
        let mut dup = schema.clone();
        dup.names[1] = "nitrogen".into();
        assert!(dup.validate().is_err());
        let mut clash = schema.clone();
        clash.label_name = "ph".into();
        assert!(clash.validate().is_err());
    }

    #[test]
    fn crops_are_sorted_and_fixture_loads() {
        let mut sorted = CROPS.to_vec();
        sorted.sort();
        assert_eq!(sorted, CROPS.to_vec());
        let ds = fixture_dataset();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.n_present_classes(), 4);
        for name in ["papaya", "rice", "mango", "banana"] {
            assert_eq!(ds.class_counts()[ds.class_index(name).unwrap()], 10);
        }
    }
}
