//! Table transforms: the GAN representation (mode-normalized numerics plus
//! one-hot categoricals) and the auxiliary-learner representation (raw
//! numerics plus integer category codes).

mod vgm;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{CategoricalColumn, ColumnData, ColumnKind, DataTable, DatasetSchema, UNSEEN};
use crate::tensor::Matrix;

pub use vgm::{argmax, fit_em, Mixture, VgmEncoder, VgmParams, SCALE_SIGMAS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub column: String,
    pub dictionary: Vec<String>,
}

impl OneHotEncoder {
    pub fn new(column: &str, dictionary: Vec<String>) -> Result<Self> {
        if dictionary.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "column \"{column}\" has an empty category dictionary"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = dictionary.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "column \"{column}\": duplicate category \"{dup}\""
            )));
        }
        Ok(OneHotEncoder {
            column: column.to_string(),
            dictionary,
        })
    }

    pub fn width(&self) -> usize {
        self.dictionary.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoder {
    Numeric(VgmEncoder),
    Categorical(OneHotEncoder),
}

impl ColumnEncoder {
    /// Encoded width: K + 1 for numerics, category count for categoricals.
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoder::Numeric(v) => v.k() + 1,
            ColumnEncoder::Categorical(o) => o.width(),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnEncoder::Numeric(_) => ColumnKind::Numeric,
            ColumnEncoder::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            ColumnEncoder::Numeric(v) => &v.column,
            ColumnEncoder::Categorical(o) => &o.column,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSlot {
    pub offset: usize,
    pub width: usize,
    pub kind: ColumnKind,
}

/// Position of each source column inside an encoded row. Numeric slices are
/// `[scalar, mode_1 .. mode_K]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub slots: Vec<ColumnSlot>,
    pub total_width: usize,
}

impl ColumnLayout {
    pub fn from_encoders(encoders: &[ColumnEncoder]) -> Self {
        let mut offset = 0;
        let slots = encoders
            .iter()
            .map(|e| {
                let slot = ColumnSlot {
                    offset,
                    width: e.width(),
                    kind: e.kind(),
                };
                offset += slot.width;
                slot
            })
            .collect();
        ColumnLayout {
            slots,
            total_width: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Width of the first `n` column slices.
    pub fn prefix_width(&self, n: usize) -> usize {
        self.slots[..n].iter().map(|s| s.width).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub layout: ColumnLayout,
    pub data: Matrix,
}

/// Fitted per-column encoders for a schema, plus training-split statistics
/// used to standardize numeric auxiliary losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder {
    pub encoders: Vec<ColumnEncoder>,
    pub layout: ColumnLayout,
    /// Per column (mean, std) of the training data; categorical entries unused.
    pub column_stats: Vec<(f64, f64)>,
    /// Per column (min, max) of the training data; categorical entries unused.
    pub column_bounds: Vec<(f64, f64)>,
}

impl TableEncoder {
    pub fn fit(table: &DataTable, params: VgmParams, seed: u64) -> Result<Self> {
        let schema = table.schema();
        let mut encoders = Vec::with_capacity(schema.len());
        let mut stats = Vec::with_capacity(schema.len());
        let mut bounds = Vec::with_capacity(schema.len());
        for (i, spec) in schema.columns.iter().enumerate() {
            match table.column(i) {
                ColumnData::Numeric(v) => {
                    let col_seed = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
                    encoders.push(ColumnEncoder::Numeric(VgmEncoder::fit(
                        &spec.name, v, params, col_seed,
                    )?));
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    stats.push((mean, var.sqrt()));
                    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    bounds.push((lo, hi));
                }
                ColumnData::Categorical(c) => {
                    // Dictionary restricted to labels the training rows use.
                    let mut used = vec![false; c.dictionary.len()];
                    for &code in &c.codes {
                        if code != UNSEEN {
                            used[code as usize] = true;
                        }
                    }
                    let dict = c
                        .dictionary
                        .iter()
                        .zip(&used)
                        .filter(|(_, &u)| u)
                        .map(|(l, _)| l.clone())
                        .collect();
                    encoders.push(ColumnEncoder::Categorical(OneHotEncoder::new(&spec.name, dict)?));
                    stats.push((0.0, 1.0));
                    bounds.push((0.0, 1.0));
                }
            }
        }
        let layout = ColumnLayout::from_encoders(&encoders);
        Ok(TableEncoder {
            encoders,
            layout,
            column_stats: stats,
            column_bounds: bounds,
        })
    }

    pub fn dictionaries(&self) -> Vec<Option<&[String]>> {
        self.encoders
            .iter()
            .map(|e| match e {
                ColumnEncoder::Categorical(o) => Some(o.dictionary.as_slice()),
                ColumnEncoder::Numeric(_) => None,
            })
            .collect()
    }

    fn check_schema(&self, schema: &DatasetSchema) -> Result<()> {
        if schema.len() != self.encoders.len()
            || schema
                .columns
                .iter()
                .zip(&self.encoders)
                .any(|(c, e)| c.name != e.column() || c.kind != e.kind())
        {
            return Err(Error::Schema("table columns do not match the fitted encoders".into()));
        }
        Ok(())
    }

    /// Per-row category codes in encoder-dictionary space; unknown labels are errors.
    fn encoder_codes(&self, table: &DataTable, col: usize) -> Result<Vec<u32>> {
        let enc = match &self.encoders[col] {
            ColumnEncoder::Categorical(o) => o,
            ColumnEncoder::Numeric(_) => unreachable!("categorical column expected"),
        };
        let c: &CategoricalColumn = table.categorical(col).expect("kind checked");
        let index: HashMap<&str, u32> = enc
            .dictionary
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let remap: Vec<Option<u32>> = c
            .dictionary
            .iter()
            .map(|l| index.get(l.as_str()).copied())
            .collect();
        c.codes
            .iter()
            .enumerate()
            .map(|(row, &code)| {
                let mapped = if code == UNSEEN { None } else { remap[code as usize] };
                mapped.ok_or_else(|| Error::UnseenCategory {
                    row: row + 1,
                    column: enc.column.clone(),
                    label: c.label(row).unwrap_or("<unseen>").to_string(),
                })
            })
            .collect()
    }

    /// Encodes every row, sampling each numeric value's mode from its posterior.
    pub fn encode_table<R: Rng + ?Sized>(&self, table: &DataTable, rng: &mut R) -> Result<EncodedMatrix> {
        self.check_schema(table.schema())?;
        let n = table.row_count();
        let mut data = Matrix::zeros(n, self.layout.total_width);
        for (col, (enc, slot)) in self.encoders.iter().zip(&self.layout.slots).enumerate() {
            match enc {
                ColumnEncoder::Numeric(v) => {
                    let values = table.numeric(col).expect("kind checked");
                    for (row, &x) in values.iter().enumerate() {
                        let (s, k) = v.encode(x, rng);
                        let r = data.row_mut(row);
                        r[slot.offset] = s;
                        r[slot.offset + 1 + k] = 1.0;
                    }
                }
                ColumnEncoder::Categorical(_) => {
                    let codes = self.encoder_codes(table, col)?;
                    for (row, code) in codes.into_iter().enumerate() {
                        data.row_mut(row)[slot.offset + code as usize] = 1.0;
                    }
                }
            }
        }
        Ok(EncodedMatrix {
            layout: self.layout.clone(),
            data,
        })
    }

    /// Seeded convenience wrapper over [`encode_table`](Self::encode_table).
    pub fn encode_table_seeded(&self, table: &DataTable, seed: u64) -> Result<EncodedMatrix> {
        self.encode_table(table, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Decodes one column slice of a row into a raw value (numeric) or a
    /// category index (categorical), using argmax everywhere.
    pub fn decode_cell(&self, col: usize, slice: &[f64]) -> f64 {
        match &self.encoders[col] {
            ColumnEncoder::Numeric(v) => v.decode(slice[0], &slice[1..], true),
            ColumnEncoder::Categorical(_) => argmax(slice) as f64,
        }
    }

    /// Hard decoding back to a table with the encoders' dictionaries.
    pub fn decode_table(&self, matrix: &EncodedMatrix, schema: &DatasetSchema) -> Result<DataTable> {
        self.check_schema(schema)?;
        if matrix.layout != self.layout || matrix.data.cols() != self.layout.total_width {
            return Err(Error::Shape("encoded matrix layout does not match encoders".into()));
        }
        let n = matrix.data.rows();
        let mut columns = Vec::with_capacity(self.encoders.len());
        for (col, (enc, slot)) in self.encoders.iter().zip(&self.layout.slots).enumerate() {
            let cells = (0..n).map(|r| {
                let row = matrix.data.row(r);
                self.decode_cell(col, &row[slot.offset..slot.offset + slot.width])
            });
            columns.push(match enc {
                ColumnEncoder::Numeric(_) => ColumnData::Numeric(cells.collect()),
                ColumnEncoder::Categorical(o) => ColumnData::Categorical(CategoricalColumn {
                    codes: cells.map(|c| c as u32).collect(),
                    dictionary: o.dictionary.clone(),
                }),
            });
        }
        DataTable::new(schema.clone(), columns)
    }

    /// Raw matrix for the auxiliary learners: numerics unchanged, categories
    /// as indices into the fitted dictionaries. Width equals the column count.
    pub fn encode_aux(&self, table: &DataTable) -> Result<AuxMatrix> {
        self.check_schema(table.schema())?;
        let n = table.row_count();
        let m = self.encoders.len();
        let mut data = Matrix::zeros(n, m);
        for col in 0..m {
            match &self.encoders[col] {
                ColumnEncoder::Numeric(_) => {
                    for (row, &x) in table.numeric(col).unwrap().iter().enumerate() {
                        data.set(row, col, x);
                    }
                }
                ColumnEncoder::Categorical(_) => {
                    for (row, code) in self.encoder_codes(table, col)?.into_iter().enumerate() {
                        data.set(row, col, code as f64);
                    }
                }
            }
        }
        Ok(AuxMatrix {
            data,
            features: self.feature_info(),
        })
    }

    pub fn feature_info(&self) -> Vec<FeatureInfo> {
        self.encoders
            .iter()
            .map(|e| match e {
                ColumnEncoder::Numeric(_) => FeatureInfo::Numeric,
                ColumnEncoder::Categorical(o) => FeatureInfo::Categorical(o.width()),
            })
            .collect()
    }
}

/// Kind of one raw feature; categorical carries its category count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "categories", rename_all = "snake_case")]
pub enum FeatureInfo {
    Numeric,
    Categorical(usize),
}

/// Rows of raw numerics and integer category codes.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxMatrix {
    pub data: Matrix,
    pub features: Vec<FeatureInfo>,
}

impl AuxMatrix {
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }
}
