//! White-box attack simulator: an attacker holding the auxiliary learners
//! repeatedly re-imputes every feature of selected synthetic rows, pulling
//! them towards what the learners memorised about the training data.

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{argmax, TableEncoder};
use crate::error::{Error, Result};
use crate::gbdt::{AuxLearner, Objective};
use crate::schema::{CategoricalColumn, ColumnData, DataTable, UNSEEN};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub iterations: usize,
    pub fraction: f64,
    /// Whether the attacker holds the model's category dictionaries.
    pub access_preprocessors: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 5,
            fraction: 0.10,
            access_preprocessors: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("attack iterations must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "attacked fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Attacked table plus the sorted indices of the rows that were attacked.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub table: DataTable,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDistance {
    pub row: usize,
    pub to_train: f64,
    pub to_preattack: f64,
}

/// Distances are Euclidean in min-max scaled numerics (training bounds)
/// plus one-hot categoricals. `euc_to_train` averages nearest-neighbour
/// distances to the training rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub rows_attacked: usize,
    pub iterations: usize,
    pub fraction: f64,
    pub epsilon: f64,
    pub access_preprocessors: bool,
    pub distance: String,
    pub euc_to_train: f64,
    pub euc_to_preattack: f64,
    #[serde(skip)]
    pub per_row: Vec<RowDistance>,
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn per_row_csv(&self) -> String {
        let mut out = String::from("row,euc_to_train,euc_to_preattack\n");
        for r in &self.per_row {
            out.push_str(&format!("{},{},{}\n", r.row, r.to_train, r.to_preattack));
        }
        out
    }
}

/// Per-column label list the attacker uses for integer codes.
fn attacker_dictionaries(synth: &DataTable, encoder: &TableEncoder, access: bool) -> Vec<Option<Vec<String>>> {
    let model = encoder.dictionaries();
    synth
        .columns()
        .iter()
        .zip(model)
        .map(|(col, dict)| match col {
            ColumnData::Numeric(_) => None,
            ColumnData::Categorical(_) if access => dict.map(<[String]>::to_vec),
            ColumnData::Categorical(c) => {
                // Refit from the synthetic rows alone, in first-appearance order.
                let mut seen = vec![false; c.dictionary.len()];
                let mut out = Vec::new();
                for &code in &c.codes {
                    if code != UNSEEN && !seen[code as usize] {
                        seen[code as usize] = true;
                        out.push(c.dictionary[code as usize].clone());
                    }
                }
                Some(out)
            }
        })
        .collect()
}

/// Re-imputes round(fraction·N) seeded rows of `synth`. Each iteration sweeps
/// the columns in order and overwrites column i with AL_i's prediction from
/// the current values of the others (argmax class for categoricals).
pub fn whitebox_attack(
    synth: &DataTable,
    learners: &[AuxLearner],
    encoder: &TableEncoder,
    config: &AttackConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    let m = synth.schema().len();
    if learners.len() != m || encoder.encoders.len() != m {
        return Err(Error::Shape(format!(
            "{} learners and {} encoders for {m} columns",
            learners.len(),
            encoder.encoders.len()
        )));
    }
    for (i, l) in learners.iter().enumerate() {
        if l.target != i {
            return Err(Error::Shape(format!("learner {i} predicts column {}", l.target)));
        }
    }
    let n = synth.row_count();
    let k = (config.fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {} of {n} rows rounds to zero",
            config.fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = index::sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();

    let dicts = attacker_dictionaries(synth, encoder, config.access_preprocessors);
    // Attacker-space matrix: raw numerics and attacker codes.
    let mut x = Matrix::zeros(k, m);
    for (c, col) in synth.columns().iter().enumerate() {
        match col {
            ColumnData::Numeric(v) => {
                for (j, &r) in rows.iter().enumerate() {
                    x.set(j, c, v[r]);
                }
            }
            ColumnData::Categorical(cat) => {
                let dict = dicts[c].as_ref().expect("categorical column has a dictionary");
                let index: HashMap<&str, usize> =
                    dict.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                for (j, &r) in rows.iter().enumerate() {
                    let label = cat.label(r).unwrap_or("");
                    let code = index.get(label).ok_or_else(|| Error::UnseenCategory {
                        row: r + 1,
                        column: synth.schema().columns[c].name.clone(),
                        label: label.to_string(),
                    })?;
                    x.set(j, c, *code as f64);
                }
            }
        }
    }

    for _ in 0..config.iterations {
        for (c, learner) in learners.iter().enumerate() {
            let pred = learner.predict_batch(&x)?;
            for j in 0..k {
                let v = match learner.objective {
                    Objective::Mse => pred.get(j, 0),
                    Objective::CrossEntropy => {
                        let class = argmax(pred.row(j));
                        // A class index past the attacker's dictionary has no
                        // label it could write; the cell keeps its value.
                        match &dicts[c] {
                            Some(d) if class < d.len() => class as f64,
                            _ => x.get(j, c),
                        }
                    }
                };
                x.set(j, c, v);
            }
        }
    }

    let columns = synth
        .columns()
        .iter()
        .enumerate()
        .map(|(c, col)| match col {
            ColumnData::Numeric(v) => {
                let mut v = v.clone();
                for (j, &r) in rows.iter().enumerate() {
                    v[r] = x.get(j, c);
                }
                ColumnData::Numeric(v)
            }
            ColumnData::Categorical(cat) => {
                // Keep the original dictionary so untouched rows stay
                // bit-identical; append any label it lacks.
                let mut out = cat.clone();
                let dict = dicts[c].as_ref().expect("categorical column has a dictionary");
                for (j, &r) in rows.iter().enumerate() {
                    let label = &dict[x.get(j, c) as usize];
                    let code = match out.lookup(label) {
                        Some(code) => code,
                        None => {
                            out.dictionary.push(label.clone());
                            (out.dictionary.len() - 1) as u32
                        }
                    };
                    out.codes[r] = code;
                }
                ColumnData::Categorical(out)
            }
        })
        .collect();
    Ok(AttackOutcome {
        table: DataTable::new(synth.schema().clone(), columns)?,
        rows,
    })
}

/// Rows of a table in the distance space. Categorical cells become label ids
/// shared across tables; each mismatch contributes 2 to the squared distance,
/// the squared gap between two one-hot vectors.
struct DistanceSpace {
    numeric: Vec<Option<(f64, f64)>>,
    labels: Vec<HashMap<String, u32>>,
}

impl DistanceSpace {
    fn new(train: &DataTable) -> Self {
        let numeric = train
            .columns()
            .iter()
            .map(|c| match c {
                ColumnData::Numeric(v) => {
                    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let range = if hi > lo { hi - lo } else { 1.0 };
                    Some((lo, range))
                }
                ColumnData::Categorical(_) => None,
            })
            .collect();
        DistanceSpace {
            numeric,
            labels: vec![HashMap::new(); train.schema().len()],
        }
    }

    fn embed(&mut self, t: &DataTable, rows: &[usize]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(t.schema().len()); rows.len()];
        for (c, col) in t.columns().iter().enumerate() {
            match col {
                ColumnData::Numeric(v) => {
                    let (lo, range) = self.numeric[c].expect("numeric column");
                    for (o, &r) in out.iter_mut().zip(rows) {
                        o.push((v[r] - lo) / range);
                    }
                }
                ColumnData::Categorical(cat) => {
                    let ids = &mut self.labels[c];
                    for (o, &r) in out.iter_mut().zip(rows) {
                        let label = label_key(cat, r);
                        let next = ids.len() as u32;
                        o.push(*ids.entry(label).or_insert(next) as f64);
                    }
                }
            }
        }
        out
    }

    fn squared(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, (x, y)) in a.iter().zip(b).enumerate() {
            s += match self.numeric[c] {
                Some(_) => (x - y) * (x - y),
                None if x != y => 2.0,
                None => 0.0,
            };
        }
        s
    }
}

fn label_key(c: &CategoricalColumn, row: usize) -> String {
    match c.label(row) {
        Some(l) => l.to_string(),
        None => "\u{0}unseen".to_string(),
    }
}

/// Distances of the attacked rows to their nearest training row and to the
/// same rows before the attack.
pub fn attack_distances(
    outcome: &AttackOutcome,
    preattack: &DataTable,
    train: &DataTable,
    config: &AttackConfig,
    epsilon: f64,
) -> Result<AttackReport> {
    let schema = train.schema();
    if outcome.table.schema().columns != schema.columns || preattack.schema().columns != schema.columns {
        return Err(Error::Schema("attack tables do not share the training columns".into()));
    }
    if train.row_count() == 0 {
        return Err(Error::InvalidArgument("training table is empty".into()));
    }
    if preattack.row_count() != outcome.table.row_count() {
        return Err(Error::Shape("attacked and pre-attack tables differ in length".into()));
    }
    let mut space = DistanceSpace::new(train);
    let all: Vec<usize> = (0..train.row_count()).collect();
    let train_rows = space.embed(train, &all);
    let attacked = space.embed(&outcome.table, &outcome.rows);
    let before = space.embed(preattack, &outcome.rows);
    let per_row: Vec<RowDistance> = outcome
        .rows
        .iter()
        .zip(attacked.iter().zip(&before))
        .map(|(&row, (a, b))| {
            let nearest = train_rows
                .iter()
                .map(|t| space.squared(a, t))
                .fold(f64::INFINITY, f64::min);
            RowDistance {
                row,
                to_train: nearest.sqrt(),
                to_preattack: space.squared(a, b).sqrt(),
            }
        })
        .collect();
    let k = per_row.len().max(1) as f64;
    Ok(AttackReport {
        rows_attacked: per_row.len(),
        iterations: config.iterations,
        fraction: config.fraction,
        epsilon,
        access_preprocessors: config.access_preprocessors,
        distance: "nearest_neighbour_minmax_onehot".into(),
        euc_to_train: per_row.iter().map(|r| r.to_train).sum::<f64>() / k,
        euc_to_preattack: per_row.iter().map(|r| r.to_preattack).sum::<f64>() / k,
        per_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{FeatureInfo, VgmParams};
    use crate::gbdt::{GbdtParams, PerturbationConfig};
    use crate::schema::{read_csv, ColumnSpec, DatasetSchema, Task};
    use proptest::prelude::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            "pair",
            Task::None,
            vec![ColumnSpec::categorical("a"), ColumnSpec::categorical("b"), ColumnSpec::numeric("x")],
        )
        .unwrap()
    }

    /// Train rows obey b = a (same index) and x = 10 · index.
    fn train_table() -> DataTable {
        let mut text = String::from("a,b,x\n");
        for r in 0..300 {
            let i = r % 3;
            text.push_str(&format!("a{i},b{i},{}\n", 10 * i));
        }
        read_csv(text.as_bytes(), &schema()).unwrap()
    }

    fn synth_table() -> DataTable {
        let mut text = String::from("a,b,x\n");
        for r in 0..40 {
            let (i, j) = ((r * 7 + 2) % 3, (r / 3) % 3);
            text.push_str(&format!("a{i},b{j},{}\n", (r as f64) * 0.7));
        }
        read_csv(text.as_bytes(), &schema()).unwrap()
    }

    fn learners(train: &DataTable) -> (TableEncoder, Vec<AuxLearner>) {
        let enc = TableEncoder::fit(train, VgmParams::default(), 0).unwrap();
        let aux = enc.encode_aux(train).unwrap();
        let ls = (0..3)
            .map(|i| AuxLearner::train(&aux, i, &GbdtParams::default(), PerturbationConfig::none()).unwrap())
            .collect();
        (enc, ls)
    }

    fn config(iterations: usize, fraction: f64, access: bool) -> AttackConfig {
        AttackConfig {
            iterations,
            fraction,
            access_preprocessors: access,
            seed: 5,
        }
    }

    #[test]
    fn perfect_rules_land_on_train_manifold() {
        let train = train_table();
        let synth = synth_table();
        let (enc, ls) = learners(&train);
        let out = whitebox_attack(&synth, &ls, &enc, &config(1, 0.5, true)).unwrap();
        assert_eq!(out.rows.len(), 20);
        for &r in &out.rows {
            // By hand: a takes b's index, then b and x follow a.
            let j = synth.categorical(1).unwrap().label(r).unwrap()[1..].to_string();
            assert_eq!(out.table.cell_text(r, 0), format!("a{j}"));
            assert_eq!(out.table.cell_text(r, 1), format!("b{j}"));
            let x = out.table.numeric(2).unwrap()[r];
            assert!((x - 10.0 * j.parse::<f64>().unwrap()).abs() < 0.5, "x = {x}");
        }
        let rep = attack_distances(&out, &synth, &train, &config(1, 0.5, true), 0.0).unwrap();
        assert!(rep.euc_to_train < 0.05, "{}", rep.euc_to_train);
        assert!(rep.euc_to_preattack > 0.0);
    }

    #[test]
    fn more_iterations_never_move_away_from_train() {
        let train = train_table();
        let synth = synth_table();
        let (enc, ls) = learners(&train);
        let mut last = f64::INFINITY;
        for it in 1..=5 {
            let c = config(it, 0.5, true);
            let out = whitebox_attack(&synth, &ls, &enc, &c).unwrap();
            let d = attack_distances(&out, &synth, &train, &c, 0.0).unwrap().euc_to_train;
            assert!(d <= last + 1e-12, "iteration {it}: {d} > {last}");
            last = d;
        }
    }

    #[test]
    fn untouched_rows_are_identical_and_runs_repeat() {
        let train = train_table();
        let synth = synth_table();
        let (enc, ls) = learners(&train);
        let c = config(2, 0.25, false);
        let a = whitebox_attack(&synth, &ls, &enc, &c).unwrap();
        let b = whitebox_attack(&synth, &ls, &enc, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 10);
        for r in 0..synth.row_count() {
            if a.rows.binary_search(&r).is_err() {
                for col in 0..3 {
                    assert_eq!(a.table.cell_text(r, col), synth.cell_text(r, col));
                }
            }
        }
    }

    #[test]
    fn no_access_codes_are_misaligned() {
        let train = train_table();
        let (enc, ls) = learners(&train);
        // Column a first appears as a2, a0, a1; column b keeps the model's order.
        let mut text = String::from("a,b,x\n");
        for r in 0..30 {
            let (i, j) = ([2, 0, 1][r % 3], r % 3);
            text.push_str(&format!("a{i},b{j},{}\n", 10 * j));
        }
        let synth = read_csv(text.as_bytes(), &schema()).unwrap();
        let with = whitebox_attack(&synth, &ls, &enc, &config(1, 1.0, true)).unwrap();
        let without = whitebox_attack(&synth, &ls, &enc, &config(1, 1.0, false)).unwrap();
        for r in 0..30 {
            let j = r % 3;
            assert_eq!(with.table.cell_text(r, 0), format!("a{j}"));
            // Class j read through the attacker's own dictionary.
            assert_eq!(without.table.cell_text(r, 0), format!("a{}", [2, 0, 1][j]));
        }
    }

    #[test]
    fn single_column_is_replaced_by_prediction() {
        let s = DatasetSchema::new("one", Task::None, vec![ColumnSpec::categorical("c")]).unwrap();
        let t = read_csv("c\nx\ny\nx\ny\n".as_bytes(), &s).unwrap();
        let enc = TableEncoder::fit(&t, VgmParams::default(), 0).unwrap();
        let learner = AuxLearner {
            target: 0,
            inputs: vec![],
            input_kinds: vec![],
            objective: Objective::CrossEntropy,
            num_classes: 2,
            learning_rate: 0.1,
            base_scores: vec![0.1, 2.0],
            rounds: vec![],
            best_round: 0,
            train_loss: vec![],
            valid_loss: vec![],
        };
        let out = whitebox_attack(&t, &[learner], &enc, &config(1, 1.0, true)).unwrap();
        assert!((0..4).all(|r| out.table.cell_text(r, 0) == "y"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let train = train_table();
        let (enc, ls) = learners(&train);
        let synth = synth_table();
        assert!(whitebox_attack(&synth, &ls, &enc, &config(0, 0.1, true)).is_err());
        assert!(whitebox_attack(&synth, &ls, &enc, &config(1, 0.0, true)).is_err());
        assert!(whitebox_attack(&synth, &ls, &enc, &config(1, 0.01, true)).is_err());
        let _ = FeatureInfo::Numeric;
    }

    #[test]
    fn distances_match_brute_force() {
        let train = {
            let mut text = String::from("a,b,x\n");
            for r in 0..20 {
                text.push_str(&format!("a{},b{},{}\n", r % 3, (r * 5) % 3, (r as f64 * 1.3).sin() * 4.0));
            }
            read_csv(text.as_bytes(), &schema()).unwrap()
        };
        let synth = synth_table();
        let (enc, ls) = learners(&train_table());
        let c = config(2, 0.5, true);
        let out = whitebox_attack(&synth, &ls, &enc, &c).unwrap();
        let rep = attack_distances(&out, &synth, &train, &c, 0.3).unwrap();
        let xs = train.numeric(2).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dist = |p: &DataTable, r: usize, q: &DataTable, s: usize| {
            let mut d = 0.0;
            for col in 0..2 {
                if p.cell_text(r, col) != q.cell_text(s, col) {
                    d += 2.0;
                }
            }
            let dx = (p.numeric(2).unwrap()[r] - q.numeric(2).unwrap()[s]) / (hi - lo);
            (d + dx * dx).sqrt()
        };
        let mut nn = 0.0;
        let mut pre = 0.0;
        for &r in &out.rows {
            nn += (0..20).map(|s| dist(&out.table, r, &train, s)).fold(f64::INFINITY, f64::min);
            pre += dist(&out.table, r, &synth, r);
        }
        let k = out.rows.len() as f64;
        assert!((rep.euc_to_train - nn / k).abs() < 1e-12);
        assert!((rep.euc_to_preattack - pre / k).abs() < 1e-12);
        assert_eq!(rep.epsilon, 0.3);
        assert!(rep.to_json().contains("\"euc_to_train\""));
        assert_eq!(rep.per_row_csv().lines().count(), out.rows.len() + 1);
    }

    #[test]
    fn identity_distances_are_zero() {
        let train = train_table();
        let out = AttackOutcome {
            table: train.clone(),
            rows: (0..30).collect(),
        };
        let rep = attack_distances(&out, &train, &train, &AttackConfig::default(), 0.0).unwrap();
        assert_eq!(rep.euc_to_train, 0.0);
        assert_eq!(rep.euc_to_preattack, 0.0);
        let empty = train.select_rows(&[]);
        assert!(attack_distances(&out, &train, &empty, &AttackConfig::default(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn attacked_count_is_rounded_fraction(fraction in 0.05f64..=1.0, seed in 0u64..50) {
            let train = train_table();
            let synth = synth_table();
            let (enc, ls) = learners(&train);
            let c = AttackConfig { iterations: 1, fraction, access_preprocessors: seed % 2 == 0, seed };
            let out = whitebox_attack(&synth, &ls, &enc, &c).unwrap();
            prop_assert_eq!(out.rows.len(), (fraction * 40.0).round() as usize);
            let rep = attack_distances(&out, &synth, &train, &c, 0.0).unwrap();
            prop_assert!(rep.euc_to_train >= 0.0 && rep.euc_to_preattack >= 0.0);
        }
    }
}
