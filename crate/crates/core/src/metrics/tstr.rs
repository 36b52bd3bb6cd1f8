//! Train on synthetic, test on real: three predictors fitted on the
//! synthetic table and scored on a real holdout.

use serde::Serialize;

use crate::encode::FeatureInfo;
use crate::error::{Error, Result};
use crate::gbdt::{fit_regression_tree, fit_single, GbdtParams, Prediction};
use crate::metrics::stats::{pr_auc, r2};
use crate::schema::{ColumnData, DataTable, Task, UNSEEN};
use crate::tensor::Matrix;

pub const TREE_MAX_DEPTH: usize = 8;
pub const TREE_MIN_LEAF: usize = 5;
/// L2 penalty on the linear and logistic weights (intercept excluded).
pub const LINEAR_L2: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorScore {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TstrReport {
    /// "pr_auc" or "r2".
    pub metric: String,
    pub mean: f64,
    pub predictors: Vec<PredictorScore>,
    /// Set when the synthetic target has a single value and every
    /// predictor falls back to the prior.
    pub degenerate: bool,
    pub positive_label: Option<String>,
}

/// Feature views of one table: a dense design matrix for the linear model
/// and raw values (codes for categoricals) for the trees.
struct Features {
    dense: Matrix,
    raw: Matrix,
    kinds: Vec<FeatureInfo>,
}

enum ColumnScale {
    Numeric { mean: f64, std: f64 },
    Categorical(usize),
}

struct Scaling {
    columns: Vec<ColumnScale>,
    width: usize,
}

fn scaling(train: &DataTable, inputs: &[usize]) -> Scaling {
    let mut width = 0;
    let columns = inputs
        .iter()
        .map(|&c| match train.column(c) {
            ColumnData::Numeric(v) => {
                width += 1;
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                ColumnScale::Numeric { mean, std }
            }
            ColumnData::Categorical(cat) => {
                width += cat.dictionary.len();
                ColumnScale::Categorical(cat.dictionary.len())
            }
        })
        .collect();
    Scaling { columns, width }
}

fn features(table: &DataTable, inputs: &[usize], s: &Scaling) -> Features {
    let n = table.row_count();
    let mut dense = Matrix::zeros(n, s.width);
    let mut raw = Matrix::zeros(n, inputs.len());
    let mut kinds = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for (k, (&c, sc)) in inputs.iter().zip(&s.columns).enumerate() {
        match (table.column(c), sc) {
            (ColumnData::Numeric(v), ColumnScale::Numeric { mean, std }) => {
                for r in 0..n {
                    dense.set(r, offset, (v[r] - mean) / std);
                    raw.set(r, k, v[r]);
                }
                kinds.push(FeatureInfo::Numeric);
                offset += 1;
            }
            (ColumnData::Categorical(cat), ColumnScale::Categorical(w)) => {
                for r in 0..n {
                    let code = cat.codes[r];
                    if code != UNSEEN {
                        dense.set(r, offset + code as usize, 1.0);
                    }
                    raw.set(r, k, code as f64);
                }
                kinds.push(FeatureInfo::Categorical(*w));
                offset += w;
            }
            _ => unreachable!("scaling built from the same layout"),
        }
    }
    Features { dense, raw, kinds }
}

/// Solves the symmetric positive definite system `a x = b` in place.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::InvalidArgument("linear system is not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Weighted normal equations `(Xᵀ W X + λI') β = Xᵀ z` with an unpenalized
/// intercept in the last slot.
fn weighted_ridge(x: &Matrix, w: &[f64], z: &[f64], l2: f64) -> Result<Vec<f64>> {
    let d = x.cols() + 1;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut row = vec![0.0; d];
    for r in 0..x.rows() {
        row[..d - 1].copy_from_slice(x.row(r));
        row[d - 1] = 1.0;
        for i in 0..d {
            let wi = w[r] * row[i];
            if wi == 0.0 {
                continue;
            }
            b[i] += wi * z[r];
            for j in 0..=i {
                a[i * d + j] += wi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[j * d + i] = a[i * d + j];
        }
    }
    for i in 0..d - 1 {
        a[i * d + i] += l2;
    }
    a[(d - 1) * d + d - 1] += 1e-10;
    cholesky_solve(&mut a, &mut b, d)?;
    Ok(b)
}

fn linear_predict(beta: &[f64], x: &Matrix) -> Vec<f64> {
    let d = x.cols();
    (0..x.rows())
        .map(|r| x.row(r).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + beta[d])
        .collect()
}

/// L2-regularized logistic regression by Newton iterations.
fn logistic_fit(x: &Matrix, y: &[f64], l2: f64) -> Result<Vec<f64>> {
    let n = x.rows();
    let mut beta = vec![0.0; x.cols() + 1];
    for _ in 0..50 {
        let eta = linear_predict(&beta, x);
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        for r in 0..n {
            let p = 1.0 / (1.0 + (-eta[r]).exp());
            let v = (p * (1.0 - p)).max(1e-10);
            w[r] = v;
            z[r] = eta[r] + (y[r] - p) / v;
        }
        let next = weighted_ridge(x, &w, &z, l2)?;
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next;
        if change < 1e-8 {
            break;
        }
    }
    Ok(beta)
}

fn gbdt_predict(model: &crate::gbdt::AuxLearner, raw: &Matrix, classify: bool) -> Result<Vec<f64>> {
    (0..raw.rows())
        .map(|r| {
            Ok(match model.predict(raw.row(r))? {
                Prediction::Value(v) => v,
                Prediction::Probabilities(p) if classify => p[1],
                Prediction::Probabilities(p) => p[0],
            })
        })
        .collect()
}

/// Fits the three predictors on `synth` and scores them on `real_test`.
/// For binary targets the positive class is the rarer label of the real
/// test table (the later dictionary entry on ties).
pub fn tstr(synth: &DataTable, real_test: &DataTable, seed: u64) -> Result<TstrReport> {
    if synth.schema().columns != real_test.schema().columns {
        return Err(Error::Schema("tables do not share a column layout".into()));
    }
    let schema = real_test.schema();
    let target = schema
        .target_index()
        .ok_or_else(|| Error::InvalidArgument("TSTR needs a target column".into()))?;
    if synth.row_count() == 0 || real_test.row_count() == 0 {
        return Err(Error::InvalidArgument("TSTR needs non-empty tables".into()));
    }
    let inputs: Vec<usize> = (0..schema.len()).filter(|&c| c != target).collect();
    let test = real_test.align_to(synth)?;
    let scale = scaling(synth, &inputs);
    let train_f = features(synth, &inputs, &scale);
    let test_f = features(&test, &inputs, &scale);

    match schema.task {
        Task::BinaryClassification => {
            let real_col = real_test.categorical(target).unwrap();
            let mut counts = vec![0usize; real_col.dictionary.len()];
            for &c in &real_col.codes {
                counts[c as usize] += 1;
            }
            let pos_code = (0..counts.len())
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty table");
            let pos_label = real_col.dictionary[pos_code].clone();
            let y_test: Vec<u8> = real_col.codes.iter().map(|&c| u8::from(c as usize == pos_code)).collect();
            let synth_col = synth.categorical(target).unwrap();
            let y: Vec<f64> = (0..synth.row_count())
                .map(|r| f64::from(u8::from(synth_col.label(r) == Some(pos_label.as_str()))))
                .collect();
            let positives = y.iter().sum::<f64>();
            let names = ["logistic", "decision_tree", "gbdt"];
            if positives == 0.0 || positives == y.len() as f64 {
                // Prior-only predictor: every row gets the same score.
                let prior = vec![positives / y.len() as f64; y_test.len()];
                let v = pr_auc(&prior, &y_test)?;
                return Ok(report("pr_auc", &names, vec![v; 3], true, Some(pos_label)));
            }
            let beta = logistic_fit(&train_f.dense, &y, LINEAR_L2)?;
            let s_lin = linear_predict(&beta, &test_f.dense);
            let tree = fit_regression_tree(&train_f.raw, &train_f.kinds, &y, TREE_MAX_DEPTH, TREE_MIN_LEAF);
            let s_tree: Vec<f64> = (0..test_f.raw.rows()).map(|r| tree.predict(test_f.raw.row(r))).collect();
            let gb = fit_single(
                &train_f.raw,
                &train_f.kinds,
                &y,
                FeatureInfo::Categorical(2),
                &GbdtParams::default(),
                seed,
            )?;
            let s_gb = gbdt_predict(&gb, &test_f.raw, true)?;
            let values = vec![
                pr_auc(&s_lin, &y_test)?,
                pr_auc(&s_tree, &y_test)?,
                pr_auc(&s_gb, &y_test)?,
            ];
            Ok(report("pr_auc", &names, values, false, Some(pos_label)))
        }
        Task::Regression => {
            let y = synth.numeric(target).unwrap().to_vec();
            let y_test = real_test.numeric(target).unwrap();
            let names = ["ridge", "decision_tree", "gbdt"];
            if y.iter().all(|&v| v == y[0]) {
                let prior = vec![y[0]; y_test.len()];
                let v = r2(&prior, y_test)?;
                return Ok(report("r2", &names, vec![v; 3], true, None));
            }
            let ones = vec![1.0; y.len()];
            let beta = weighted_ridge(&train_f.dense, &ones, &y, LINEAR_L2)?;
            let p_lin = linear_predict(&beta, &test_f.dense);
            let tree = fit_regression_tree(&train_f.raw, &train_f.kinds, &y, TREE_MAX_DEPTH, TREE_MIN_LEAF);
            let p_tree: Vec<f64> = (0..test_f.raw.rows()).map(|r| tree.predict(test_f.raw.row(r))).collect();
            let gb = fit_single(
                &train_f.raw,
                &train_f.kinds,
                &y,
                FeatureInfo::Numeric,
                &GbdtParams::default(),
                seed,
            )?;
            let p_gb = gbdt_predict(&gb, &test_f.raw, false)?;
            let values = vec![r2(&p_lin, y_test)?, r2(&p_tree, y_test)?, r2(&p_gb, y_test)?];
            Ok(report("r2", &names, values, false, None))
        }
        Task::None => Err(Error::InvalidArgument("TSTR needs a classification or regression task".into())),
    }
}

fn report(metric: &str, names: &[&str], values: Vec<f64>, degenerate: bool, positive_label: Option<String>) -> TstrReport {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    TstrReport {
        metric: metric.to_string(),
        mean,
        predictors: names
            .iter()
            .zip(values)
            .map(|(n, value)| PredictorScore {
                name: n.to_string(),
                value,
            })
            .collect(),
        degenerate,
        positive_label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{read_csv, ColumnSpec, DatasetSchema};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn class_schema() -> DatasetSchema {
        DatasetSchema::new(
            "c",
            Task::BinaryClassification,
            vec![
                ColumnSpec::numeric("x"),
                ColumnSpec::categorical("g"),
                ColumnSpec::categorical("y").as_target(),
            ],
        )
        .unwrap()
    }

    fn class_table(seed: u64, n: usize, shuffle_labels: bool) -> DataTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<(f64, &str, &str)> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-3.0..3.0);
                let g = ["a", "b"][rng.gen_range(0..2)];
                let pos = x + if g == "a" { 0.5 } else { -0.5 } > 1.0;
                (x, g, if pos { "yes" } else { "no" })
            })
            .collect();
        if shuffle_labels {
            let mut labels: Vec<&str> = rows.iter().map(|r| r.2).collect();
            labels.shuffle(&mut rng);
            for (r, l) in rows.iter_mut().zip(labels) {
                r.2 = l;
            }
        }
        let mut text = String::from("x,g,y\n");
        for (x, g, y) in rows {
            text.push_str(&format!("{x},{g},{y}\n"));
        }
        read_csv(text.as_bytes(), &class_schema()).unwrap()
    }

    #[test]
    fn separable_identity_is_near_perfect() {
        let train = class_table(1, 800, false);
        let test = class_table(2, 400, false);
        let rep = tstr(&train, &test, 0).unwrap();
        assert_eq!(rep.metric, "pr_auc");
        assert_eq!(rep.positive_label.as_deref(), Some("yes"));
        assert!(rep.mean > 0.9, "{rep:?}");
        assert!(!rep.degenerate);
    }

    #[test]
    fn shuffled_labels_score_near_prevalence() {
        let train = class_table(3, 2000, true);
        let test = class_table(4, 2000, false);
        let prevalence = {
            let c = test.categorical(2).unwrap();
            let yes = c.lookup("yes").unwrap();
            c.codes.iter().filter(|&&v| v == yes).count() as f64 / c.codes.len() as f64
        };
        let rep = tstr(&train, &test, 0).unwrap();
        assert!((rep.mean - prevalence).abs() < 0.05, "{} vs {}", rep.mean, prevalence);
    }

    #[test]
    fn single_class_synthetic_is_degenerate() {
        let test = class_table(5, 300, false);
        let text = "x,g,y\n".to_string() + &"1.0,a,no\n".repeat(30);
        let synth = read_csv(text.as_bytes(), &class_schema()).unwrap();
        let rep = tstr(&synth, &test, 0).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.predictors.len(), 3);
    }

    #[test]
    fn regression_identity() {
        let s = DatasetSchema::new(
            "r",
            Task::Regression,
            vec![
                ColumnSpec::numeric("x"),
                ColumnSpec::categorical("g"),
                ColumnSpec::numeric("y").as_target(),
            ],
        )
        .unwrap();
        let make = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut text = String::from("x,g,y\n");
            for _ in 0..600 {
                let x: f64 = rng.gen_range(-2.0..2.0);
                let g = rng.gen_range(0..3);
                let y = 2.0 * x + g as f64 + rng.gen_range(-0.1..0.1);
                text.push_str(&format!("{x},{},{y}\n", ["p", "q", "r"][g]));
            }
            read_csv(text.as_bytes(), &s).unwrap()
        };
        let rep = tstr(&make(1), &make(2), 0).unwrap();
        assert_eq!(rep.metric, "r2");
        assert!(rep.mean > 0.9, "{rep:?}");
    }

    #[test]
    fn ridge_solves_exact_linear_data() {
        let x = Matrix::from_fn(50, 2, |r, c| ((r * (c + 3)) % 7) as f64);
        let y: Vec<f64> = (0..50).map(|r| 2.0 * x.get(r, 0) - x.get(r, 1) + 4.0).collect();
        let beta = weighted_ridge(&x, &[1.0; 50], &y, 0.0).unwrap();
        for (b, want) in beta.iter().zip([2.0, -1.0, 4.0]) {
            assert!((b - want).abs() < 1e-6, "{beta:?}");
        }
    }

    #[test]
    fn missing_target_rejected() {
        let s = DatasetSchema::new("n", Task::None, vec![ColumnSpec::numeric("x")]).unwrap();
        let t = read_csv("x\n1\n2\n".as_bytes(), &s).unwrap();
        assert!(tstr(&t, &t, 0).is_err());
    }
}
