//! Typed column metadata, row storage and CSV ingestion for mixed
//! numeric/categorical tables.
//!
//! Column order in a [`DatasetSchema`] is significant: it is the order in
//! which the cascade generates features.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::validity::ValidityRule;

/// Code assigned to a category label that is absent from the reference
/// dictionary after [`DataTable::align_to`]. Metrics count it, encoders reject it.
pub const UNSEEN: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    #[default]
    Feature,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BinaryClassification,
    Regression,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
            role: ColumnRole::Feature,
        }
    }

    pub fn categorical(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            role: ColumnRole::Feature,
        }
    }

    pub fn as_target(mut self) -> Self {
        self.role = ColumnRole::Target;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub task: Task,
    pub columns: Vec<ColumnSpec>,
    #[serde(default, rename = "rules")]
    pub validity_rules: Vec<ValidityRule>,
}

impl DatasetSchema {
    pub fn new(name: &str, task: Task, columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = DatasetSchema {
            name: name.to_string(),
            task,
            columns,
            validity_rules: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_rules(mut self, rules: Vec<ValidityRule>) -> Result<Self> {
        self.validity_rules = rules;
        self.validate()?;
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: DatasetSchema =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name \"{}\"", c.name)));
            }
        }
        let targets: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target)
            .collect();
        if targets.len() > 1 {
            return Err(Error::Schema("more than one target column".into()));
        }
        match (self.task, targets.first()) {
            (Task::BinaryClassification, Some(t)) if t.kind != ColumnKind::Categorical => {
                return Err(Error::Schema(format!(
                    "binary classification target \"{}\" must be categorical",
                    t.name
                )))
            }
            (Task::Regression, Some(t)) if t.kind != ColumnKind::Numeric => {
                return Err(Error::Schema(format!(
                    "regression target \"{}\" must be numeric",
                    t.name
                )))
            }
            (Task::BinaryClassification | Task::Regression, None) => {
                return Err(Error::Schema("task requires a target column".into()))
            }
            _ => {}
        }
        for rule in &self.validity_rules {
            rule.check_columns(self)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.role == ColumnRole::Target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub codes: Vec<u32>,
    pub dictionary: Vec<String>,
}

impl CategoricalColumn {
    pub fn label(&self, row: usize) -> Option<&str> {
        self.dictionary.get(self.codes[row] as usize).map(String::as_str)
    }

    pub fn lookup(&self, label: &str) -> Option<u32> {
        self.dictionary.iter().position(|l| l == label).map(|i| i as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(CategoricalColumn),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(c) => c.codes.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(c) => ColumnData::Categorical(CategoricalColumn {
                codes: rows.iter().map(|&r| c.codes[r]).collect(),
                dictionary: c.dictionary.clone(),
            }),
        }
    }
}

/// Immutable column-major table whose columns follow the schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: DatasetSchema,
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl DataTable {
    pub fn new(schema: DatasetSchema, columns: Vec<ColumnData>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::Shape(format!(
                "{} columns for a schema of {}",
                columns.len(),
                schema.len()
            )));
        }
        let row_count = columns.first().map_or(0, ColumnData::len);
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if col.len() != row_count {
                return Err(Error::Shape(format!(
                    "column \"{}\" has {} rows, expected {}",
                    spec.name,
                    col.len(),
                    row_count
                )));
            }
            match (spec.kind, col) {
                (ColumnKind::Numeric, ColumnData::Numeric(_)) => {}
                (ColumnKind::Categorical, ColumnData::Categorical(c)) => {
                    let n = c.dictionary.len() as u32;
                    if let Some(bad) = c.codes.iter().find(|&&code| code >= n && code != UNSEEN) {
                        return Err(Error::Shape(format!(
                            "column \"{}\": code {} outside dictionary of {}",
                            spec.name, bad, n
                        )));
                    }
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "column \"{}\" data does not match its declared kind",
                        spec.name
                    )))
                }
            }
        }
        Ok(DataTable {
            schema,
            columns,
            row_count,
        })
    }

    pub fn empty(schema: DatasetSchema) -> Self {
        let columns = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
                ColumnKind::Categorical => ColumnData::Categorical(CategoricalColumn {
                    codes: Vec::new(),
                    dictionary: Vec::new(),
                }),
            })
            .collect();
        DataTable {
            schema,
            columns,
            row_count: 0,
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &ColumnData {
        &self.columns[idx]
    }

    pub fn numeric(&self, idx: usize) -> Option<&[f64]> {
        match &self.columns[idx] {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn categorical(&self, idx: usize) -> Option<&CategoricalColumn> {
        match &self.columns[idx] {
            ColumnData::Categorical(c) => Some(c),
            ColumnData::Numeric(_) => None,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            row_count: rows.len(),
        }
    }

    /// Binary classification needs exactly two target categories.
    pub fn validate_task(&self) -> Result<()> {
        if self.schema.task == Task::BinaryClassification {
            let t = self.schema.target_index().expect("validated schema has a target");
            let c = self.categorical(t).expect("validated target is categorical");
            if c.dictionary.len() != 2 {
                return Err(Error::Schema(format!(
                    "binary classification target \"{}\" has {} categories",
                    self.schema.columns[t].name,
                    c.dictionary.len()
                )));
            }
        }
        Ok(())
    }

    /// Drops dictionary entries that no row uses, keeping the relative order
    /// of the remaining labels.
    pub fn compact_dictionaries(&self) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                ColumnData::Numeric(v) => ColumnData::Numeric(v.clone()),
                ColumnData::Categorical(c) => {
                    let mut used = vec![false; c.dictionary.len()];
                    for &code in &c.codes {
                        if code != UNSEEN {
                            used[code as usize] = true;
                        }
                    }
                    let mut remap = vec![UNSEEN; c.dictionary.len()];
                    let mut dictionary = Vec::new();
                    for (i, label) in c.dictionary.iter().enumerate() {
                        if used[i] {
                            remap[i] = dictionary.len() as u32;
                            dictionary.push(label.clone());
                        }
                    }
                    let codes = c
                        .codes
                        .iter()
                        .map(|&code| if code == UNSEEN { UNSEEN } else { remap[code as usize] })
                        .collect();
                    ColumnData::Categorical(CategoricalColumn { codes, dictionary })
                }
            })
            .collect();
        DataTable {
            schema: self.schema.clone(),
            columns,
            row_count: self.row_count,
        }
    }

    /// Re-expresses categorical codes against another table's dictionaries.
    /// Labels missing from the reference map to [`UNSEEN`].
    pub fn align_to(&self, reference: &DataTable) -> Result<DataTable> {
        if self.schema.columns != reference.schema.columns {
            return Err(Error::Schema("tables do not share a column layout".into()));
        }
        let dicts: Vec<Option<&[String]>> = reference
            .columns
            .iter()
            .map(|c| match c {
                ColumnData::Categorical(c) => Some(c.dictionary.as_slice()),
                ColumnData::Numeric(_) => None,
            })
            .collect();
        Ok(self.align_to_dictionaries(&dicts))
    }

    pub fn align_to_dictionaries(&self, dicts: &[Option<&[String]>]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .zip(dicts)
            .map(|(col, dict)| match (col, dict) {
                (ColumnData::Categorical(c), Some(dict)) => {
                    let index: HashMap<&str, u32> = dict
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.as_str(), i as u32))
                        .collect();
                    let remap: Vec<u32> = c
                        .dictionary
                        .iter()
                        .map(|l| index.get(l.as_str()).copied().unwrap_or(UNSEEN))
                        .collect();
                    let codes = c
                        .codes
                        .iter()
                        .map(|&code| if code == UNSEEN { UNSEEN } else { remap[code as usize] })
                        .collect();
                    ColumnData::Categorical(CategoricalColumn {
                        codes,
                        dictionary: dict.to_vec(),
                    })
                }
                (other, _) => other.clone(),
            })
            .collect();
        DataTable {
            schema: self.schema.clone(),
            columns,
            row_count: self.row_count,
        }
    }

    /// Cell rendered as text, as written to CSV.
    pub fn cell_text(&self, row: usize, col: usize) -> String {
        match &self.columns[col] {
            ColumnData::Numeric(v) => format!("{}", v[row]),
            ColumnData::Categorical(c) => c.label(row).unwrap_or("").to_string(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.columns.len());
        for row in 0..self.row_count {
            record.clear();
            for col in 0..self.columns.len() {
                record.push(self.cell_text(row, col));
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Loads a CSV file whose header contains every schema column (in any order).
/// Category dictionaries are built in first-appearance order.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<DataTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    read_csv(&bytes[..], schema)
}

pub fn read_csv<R: std::io::Read>(input: R, schema: &DatasetSchema) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    let mut codes: Vec<Vec<u32>> = vec![Vec::new(); schema.len()];
    let mut dicts: Vec<Vec<String>> = vec![Vec::new(); schema.len()];
    let mut lookup: Vec<HashMap<String, u32>> = vec![HashMap::new(); schema.len()];

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        for (col, (spec, &pos)) in schema.columns.iter().zip(&positions).enumerate() {
            let cell = record.get(pos).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    row,
                    column: spec.name.clone(),
                });
            }
            match spec.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| Error::ParseNumeric {
                        row,
                        column: spec.name.clone(),
                        value: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::ParseNumeric {
                            row,
                            column: spec.name.clone(),
                            value: cell.to_string(),
                        });
                    }
                    numeric[col].push(v);
                }
                ColumnKind::Categorical => {
                    let next = dicts[col].len() as u32;
                    let code = *lookup[col].entry(cell.to_string()).or_insert_with(|| {
                        dicts[col].push(cell.to_string());
                        next
                    });
                    codes[col].push(code);
                }
            }
        }
    }

    let columns = schema
        .columns
        .iter()
        .enumerate()
        .map(|(col, spec)| match spec.kind {
            ColumnKind::Numeric => ColumnData::Numeric(std::mem::take(&mut numeric[col])),
            ColumnKind::Categorical => ColumnData::Categorical(CategoricalColumn {
                codes: std::mem::take(&mut codes[col]),
                dictionary: std::mem::take(&mut dicts[col]),
            }),
        })
        .collect();
    DataTable::new(schema.clone(), columns)
}

/// Seeded shuffle followed by a split at `floor(train_fraction * N)`.
pub fn split_holdout(
    table: &DataTable,
    train_fraction: f64,
    seed: u64,
) -> Result<(DataTable, DataTable)> {
    let n = table.row_count();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "split_holdout needs at least 2 rows, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * n as f64).floor() as usize;
    let (train, holdout) = order.split_at(cut);
    Ok((table.select_rows(train), table.select_rows(holdout)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            "t",
            Task::None,
            vec![ColumnSpec::numeric("age"), ColumnSpec::categorical("sex")],
        )
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let t = read_csv("sex,age\nMale,30\nFemale,41.5\nMale,22\n".as_bytes(), &schema()).unwrap();
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.numeric(0).unwrap(), &[30.0, 41.5, 22.0]);
        let sex = t.categorical(1).unwrap();
        assert_eq!(sex.dictionary, vec!["Male", "Female"]);
        assert_eq!(sex.codes, vec![0, 1, 0]);
    }

    #[test]
    fn header_only_is_empty_table() {
        let t = read_csv("age,sex\n".as_bytes(), &schema()).unwrap();
        assert_eq!(t.row_count(), 0);
    }

    #[test]
    fn reports_bad_numeric_cell() {
        let err = read_csv("age,sex\n30,Male\nabc,Female\n".as_bytes(), &schema()).unwrap_err();
        match err {
            Error::ParseNumeric { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_missing_values_and_columns() {
        let err = read_csv("age,sex\n30,\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 1, .. }));
        let err = read_csv("age\n30\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "sex"));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        fs::write(&p, "").unwrap();
        assert!(matches!(load_csv(&p, &schema()), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn schema_invariants() {
        assert!(DatasetSchema::new(
            "d",
            Task::None,
            vec![ColumnSpec::numeric("a"), ColumnSpec::numeric("a")]
        )
        .is_err());
        assert!(DatasetSchema::new(
            "d",
            Task::None,
            vec![
                ColumnSpec::numeric("a").as_target(),
                ColumnSpec::numeric("b").as_target()
            ]
        )
        .is_err());
        assert!(DatasetSchema::new(
            "d",
            Task::BinaryClassification,
            vec![ColumnSpec::numeric("a").as_target()]
        )
        .is_err());
    }

    #[test]
    fn binary_task_needs_two_categories() {
        let s = DatasetSchema::new(
            "d",
            Task::BinaryClassification,
            vec![ColumnSpec::numeric("x"), ColumnSpec::categorical("y").as_target()],
        )
        .unwrap();
        let t = read_csv("x,y\n1,a\n2,b\n".as_bytes(), &s).unwrap();
        assert!(t.validate_task().is_ok());
        let t = read_csv("x,y\n1,a\n2,a\n".as_bytes(), &s).unwrap();
        assert!(t.validate_task().is_err());
    }

    #[test]
    fn split_follows_floor_rule() {
        let s = DatasetSchema::new("d", Task::None, vec![ColumnSpec::numeric("x")]).unwrap();
        let mk = |n: usize| {
            DataTable::new(s.clone(), vec![ColumnData::Numeric((0..n).map(|i| i as f64).collect())])
                .unwrap()
        };
        let (a, b) = split_holdout(&mk(100), 0.5, 1).unwrap();
        assert_eq!((a.row_count(), b.row_count()), (50, 50));
        let (a, b) = split_holdout(&mk(5), 0.5, 1).unwrap();
        assert_eq!((a.row_count(), b.row_count()), (2, 3));
        let (a2, _) = split_holdout(&mk(5), 0.5, 1).unwrap();
        assert_eq!(a, a2);
        assert!(split_holdout(&mk(1), 0.5, 1).is_err());
    }

    #[test]
    fn align_marks_unseen_labels() {
        let train = read_csv("age,sex\n1,Male\n".as_bytes(), &schema()).unwrap();
        let hold = read_csv("age,sex\n1,Female\n2,Male\n".as_bytes(), &schema()).unwrap();
        let aligned = hold.align_to(&train).unwrap();
        assert_eq!(aligned.categorical(1).unwrap().codes, vec![UNSEEN, 0]);
    }

    #[test]
    fn compact_keeps_order_of_used_labels() {
        let t = read_csv("age,sex\n1,a\n2,b\n3,c\n".as_bytes(), &schema()).unwrap();
        let sub = t.select_rows(&[2, 0]).compact_dictionaries();
        let c = sub.categorical(1).unwrap();
        assert_eq!(c.dictionary, vec!["a", "c"]);
        assert_eq!(c.codes, vec![1, 0]);
    }

    #[test]
    fn schema_toml_parses_rules() {
        let s = DatasetSchema::from_toml_str(
            r#"
name = "adult"
task = "binary_classification"

[[columns]]
name = "relationship"
kind = "categorical"

[[columns]]
name = "sex"
kind = "categorical"

[[columns]]
name = "income"
kind = "categorical"
role = "target"

[[rules]]
kind = "pair_implication"
if_column = "relationship"
if_value = "Husband"
then_column = "sex"
then_value = "Male"
"#,
        )
        .unwrap();
        assert_eq!(s.columns.len(), 3);
        assert_eq!(s.target_index(), Some(2));
        assert_eq!(s.validity_rules.len(), 1);
        let back = DatasetSchema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
    }
}
