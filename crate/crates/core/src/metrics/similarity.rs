//! Table-level similarity, correlation and diversity scores.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::metrics::stats::{cramers_v, ks_statistic, pearson, rmse};
use crate::schema::{CategoricalColumn, ColumnData, DataTable, UNSEEN};

/// Category codes with the unseen bucket placed after the dictionary.
pub fn levels(col: &CategoricalColumn) -> Vec<usize> {
    let n = col.dictionary.len();
    col.codes
        .iter()
        .map(|&c| if c == UNSEEN { n } else { c as usize })
        .collect()
}

fn same_layout(a: &DataTable, b: &DataTable) -> Result<()> {
    if a.schema().columns != b.schema().columns {
        return Err(Error::Schema("tables do not share a column layout".into()));
    }
    Ok(())
}

fn non_empty(t: &DataTable, what: &str) -> Result<()> {
    if t.row_count() == 0 {
        return Err(Error::InvalidArgument(format!("{what} table is empty")));
    }
    Ok(())
}

/// Per-dimension means of `table` after min-max scaling numerics with
/// `bounds` and one-hot expanding categoricals over `width` levels.
fn dimension_means(table: &DataTable, bounds: &[(f64, f64)], widths: &[usize]) -> Vec<f64> {
    let n = table.row_count() as f64;
    let mut out = Vec::new();
    for (i, col) in table.columns().iter().enumerate() {
        match col {
            ColumnData::Numeric(v) => {
                let (lo, hi) = bounds[i];
                let span = if hi > lo { hi - lo } else { 1.0 };
                out.push(v.iter().map(|x| (x - lo) / span).sum::<f64>() / n);
            }
            ColumnData::Categorical(c) => {
                let mut counts = vec![0.0; widths[i]];
                for l in levels(c) {
                    counts[l] += 1.0;
                }
                out.extend(counts.into_iter().map(|k| k / n));
            }
        }
    }
    out
}

/// RMSE between the per-dimension means of the real and synthetic tables.
/// Numerics are scaled to [0, 1] by the real bounds; categoricals are
/// one-hot over the real dictionary, plus an unseen dimension when either
/// table has labels outside it.
pub fn dimwise_mean_rmse(real: &DataTable, synth: &DataTable) -> Result<f64> {
    same_layout(real, synth)?;
    non_empty(real, "real")?;
    non_empty(synth, "synthetic")?;
    let synth = synth.align_to(real)?;
    let mut bounds = Vec::new();
    let mut widths = Vec::new();
    for (rc, sc) in real.columns().iter().zip(synth.columns()) {
        match (rc, sc) {
            (ColumnData::Numeric(v), _) => {
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                bounds.push((lo, hi));
                widths.push(0);
            }
            (ColumnData::Categorical(r), ColumnData::Categorical(s)) => {
                let unseen = r.codes.contains(&UNSEEN) || s.codes.contains(&UNSEEN);
                bounds.push((0.0, 0.0));
                widths.push(r.dictionary.len() + usize::from(unseen));
            }
            _ => unreachable!("layouts checked"),
        }
    }
    let a = dimension_means(real, &bounds, &widths);
    let b = dimension_means(&synth, &bounds, &widths);
    Ok(rmse(&a, &b))
}

/// KS statistic per column; categoricals compare codes in the real dictionary.
pub fn ks_per_column(real: &DataTable, synth: &DataTable) -> Result<Vec<f64>> {
    same_layout(real, synth)?;
    let synth = synth.align_to(real)?;
    real.columns()
        .iter()
        .zip(synth.columns())
        .map(|(rc, sc)| match (rc, sc) {
            (ColumnData::Numeric(a), ColumnData::Numeric(b)) => ks_statistic(a, b),
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                let a: Vec<f64> = levels(a).into_iter().map(|l| l as f64).collect();
                let b: Vec<f64> = levels(b).into_iter().map(|l| l as f64).collect();
                ks_statistic(&a, &b)
            }
            _ => unreachable!("layouts checked"),
        })
        .collect()
}

/// Pairwise association matrix: Pearson for numeric pairs, Cramér's V for
/// categorical pairs, `None` for mixed pairs.
pub fn correlation_matrix(table: &DataTable) -> Vec<Vec<Option<f64>>> {
    let cols = table.columns();
    let coded: Vec<Option<Vec<usize>>> = cols
        .iter()
        .map(|c| match c {
            ColumnData::Categorical(c) => Some(levels(c)),
            ColumnData::Numeric(_) => None,
        })
        .collect();
    let m = cols.len();
    let mut out = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = match (&cols[i], &cols[j]) {
                (ColumnData::Numeric(x), ColumnData::Numeric(y)) => Some(pearson(x, y)),
                (ColumnData::Categorical(_), ColumnData::Categorical(_)) => Some(cramers_v(
                    coded[i].as_ref().unwrap(),
                    coded[j].as_ref().unwrap(),
                )),
                _ => None,
            };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// RMSE over the strict upper triangle of the two association matrices,
/// restricted to same-kind pairs. 0 when there are no such pairs.
pub fn corr_rmse(real: &DataTable, synth: &DataTable) -> Result<f64> {
    same_layout(real, synth)?;
    let a = correlation_matrix(real);
    let b = correlation_matrix(synth);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if let (Some(p), Some(q)) = (a[i][j], b[i][j]) {
                x.push(p);
                y.push(q);
            }
        }
    }
    Ok(rmse(&x, &y))
}

/// Distinct (label, label) combinations summed over every unordered pair of
/// categorical columns.
pub fn upcc(table: &DataTable) -> usize {
    let cats: Vec<&CategoricalColumn> = table
        .columns()
        .iter()
        .filter_map(|c| match c {
            ColumnData::Categorical(c) => Some(c),
            ColumnData::Numeric(_) => None,
        })
        .collect();
    let mut total = 0;
    for i in 0..cats.len() {
        for j in i + 1..cats.len() {
            let pairs: HashSet<(u32, u32)> = cats[i]
                .codes
                .iter()
                .zip(&cats[j].codes)
                .map(|(&a, &b)| (a, b))
                .collect();
            total += pairs.len();
        }
    }
    total
}

pub fn upcc_ratio(synth: &DataTable, train: &DataTable) -> Result<f64> {
    let base = upcc(train);
    if base == 0 {
        return Err(Error::InvalidArgument(
            "training table has no categorical combinations".into(),
        ));
    }
    Ok(upcc(synth) as f64 / base as f64)
}

pub fn cordv(corr_rmse: f64, upcc_ratio: f64) -> Result<f64> {
    if !(upcc_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cordv needs a positive upcc ratio, got {upcc_ratio}"
        )));
    }
    Ok(corr_rmse / upcc_ratio)
}
