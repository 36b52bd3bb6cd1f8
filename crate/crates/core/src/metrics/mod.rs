//! Evaluation of synthetic tables against real data.

pub mod similarity;
pub mod stats;
pub mod tstr;
pub mod validity;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schema::{DataTable, Task};

pub use similarity::{
    corr_rmse, correlation_matrix, cordv, dimwise_mean_rmse, ks_per_column, upcc, upcc_ratio,
};
pub use stats::{cramers_v, ks_statistic, pearson, pr_auc, r2};
pub use tstr::{tstr, PredictorScore, TstrReport};
pub use validity::{invalid_ratio, invalid_rows, ValidityRule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnKs {
    pub column: String,
    pub ks: f64,
}

/// Full metric suite for one synthetic table. Field order is the
/// serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows_real: usize,
    pub rows_synth: usize,
    pub tstr: Option<TstrReport>,
    pub dimwise_mean_rmse: f64,
    pub ks_mean: f64,
    pub ks: Vec<ColumnKs>,
    pub corr_rmse: f64,
    pub upcc_count: usize,
    pub upcc_train_count: usize,
    pub upcc_ratio: Option<f64>,
    pub cordv: Option<f64>,
    pub invalid_ratio: f64,
    #[serde(skip)]
    pub corr_real: Vec<Vec<Option<f64>>>,
    #[serde(skip)]
    pub corr_synth: Vec<Vec<Option<f64>>>,
}

/// Scores `synth` against `real`. `train` is the reference for UPCC and
/// pair-membership rules and defaults to `real`. TSTR runs when the schema
/// declares a task, fitting on `synth` and scoring on `real`.
pub fn evaluate(
    synth: &DataTable,
    real: &DataTable,
    train: Option<&DataTable>,
    seed: u64,
) -> Result<EvalReport> {
    if synth.schema().columns != real.schema().columns {
        return Err(Error::Schema("tables do not share a column layout".into()));
    }
    let train = train.unwrap_or(real);
    let tstr = match real.schema().task {
        Task::None => None,
        _ => Some(tstr::tstr(synth, real, seed)?),
    };
    let ks_values = ks_per_column(real, synth)?;
    let ks_mean = if ks_values.is_empty() {
        0.0
    } else {
        ks_values.iter().sum::<f64>() / ks_values.len() as f64
    };
    let ks = real
        .schema()
        .columns
        .iter()
        .zip(&ks_values)
        .map(|(c, &ks)| ColumnKs {
            column: c.name.clone(),
            ks,
        })
        .collect();
    let corr = corr_rmse(real, synth)?;
    let upcc_train_count = upcc(train);
    let ratio = if upcc_train_count > 0 {
        Some(upcc_ratio(synth, train)?)
    } else {
        None
    };
    let cordv = match ratio {
        Some(r) if r > 0.0 => Some(cordv(corr, r)?),
        _ => None,
    };
    let invalid = invalid_ratio(synth, &real.schema().validity_rules, Some(train))?;
    Ok(EvalReport {
        rows_real: real.row_count(),
        rows_synth: synth.row_count(),
        tstr,
        dimwise_mean_rmse: dimwise_mean_rmse(real, synth)?,
        ks_mean,
        ks,
        corr_rmse: corr,
        upcc_count: upcc(synth),
        upcc_train_count,
        upcc_ratio: ratio,
        cordv,
        invalid_ratio: invalid,
        corr_real: correlation_matrix(real),
        corr_synth: correlation_matrix(synth),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json`, `ks.csv`, `corr_real.csv` and `corr_synth.csv`.
    pub fn write(&self, dir: &Path, columns: &[String]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;

        let path = dir.join("ks.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["column", "ks"])?;
        for c in &self.ks {
            w.write_record([c.column.clone(), c.ks.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        for (name, m) in [("corr_real.csv", &self.corr_real), ("corr_synth.csv", &self.corr_synth)] {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec![String::new()];
            header.extend(columns.iter().cloned());
            w.write_record(&header)?;
            for (i, row) in m.iter().enumerate() {
                let mut rec = vec![columns[i].clone()];
                rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
