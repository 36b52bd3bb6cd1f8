//! Rule-based validity checks on synthetic rows.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, DataTable, DatasetSchema, UNSEEN};

/// A semantic dependency that real rows satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidityRule {
    /// `if_column = if_value` implies `then_column = then_value`.
    PairImplication {
        if_column: String,
        if_value: String,
        then_column: String,
        then_value: String,
    },
    /// Every (left, right) label pair must occur in the training data.
    PairMembership { left: String, right: String },
    /// `greater >= lesser` on two numeric columns.
    NumericOrder { greater: String, lesser: String },
}

impl ValidityRule {
    fn columns(&self) -> [(&str, ColumnKind); 2] {
        match self {
            ValidityRule::PairImplication {
                if_column,
                then_column,
                ..
            } => [
                (if_column, ColumnKind::Categorical),
                (then_column, ColumnKind::Categorical),
            ],
            ValidityRule::PairMembership { left, right } => {
                [(left, ColumnKind::Categorical), (right, ColumnKind::Categorical)]
            }
            ValidityRule::NumericOrder { greater, lesser } => {
                [(greater, ColumnKind::Numeric), (lesser, ColumnKind::Numeric)]
            }
        }
    }

    pub fn check_columns(&self, schema: &DatasetSchema) -> Result<()> {
        for (name, kind) in self.columns() {
            let idx = schema
                .index_of(name)
                .ok_or_else(|| Error::Schema(format!("rule references unknown column \"{name}\"")))?;
            if schema.columns[idx].kind != kind {
                return Err(Error::Schema(format!(
                    "rule needs column \"{name}\" to be {kind:?}"
                )));
            }
        }
        Ok(())
    }

    fn needs_train(&self) -> bool {
        matches!(self, ValidityRule::PairMembership { .. })
    }
}

/// A rule resolved against one table's column indices and dictionaries.
enum Compiled {
    Implication {
        a: usize,
        a_code: Option<u32>,
        b: usize,
        b_code: Option<u32>,
    },
    Membership {
        a: usize,
        b: usize,
        allowed: HashSet<(u32, u32)>,
    },
    Order {
        hi: usize,
        lo: usize,
    },
}

fn compile(rule: &ValidityRule, table: &DataTable, train: Option<&DataTable>) -> Result<Compiled> {
    let schema = table.schema();
    rule.check_columns(schema)?;
    let idx = |name: &str| schema.index_of(name).expect("checked above");
    Ok(match rule {
        ValidityRule::PairImplication {
            if_column,
            if_value,
            then_column,
            then_value,
        } => {
            let (a, b) = (idx(if_column), idx(then_column));
            Compiled::Implication {
                a,
                a_code: table.categorical(a).unwrap().lookup(if_value),
                b,
                b_code: table.categorical(b).unwrap().lookup(then_value),
            }
        }
        ValidityRule::PairMembership { left, right } => {
            let train = train.ok_or_else(|| {
                Error::InvalidArgument("pair_membership rule needs the training table".into())
            })?;
            let (a, b) = (idx(left), idx(right));
            let ta = train
                .schema()
                .index_of(left)
                .and_then(|i| train.categorical(i))
                .ok_or_else(|| Error::Schema(format!("training table lacks \"{left}\"")))?;
            let tb = train
                .schema()
                .index_of(right)
                .and_then(|i| train.categorical(i))
                .ok_or_else(|| Error::Schema(format!("training table lacks \"{right}\"")))?;
            let ca = table.categorical(a).unwrap();
            let cb = table.categorical(b).unwrap();
            // Translate training labels into this table's codes; pairs with a
            // label this table never uses cannot match any row anyway.
            let mut allowed = HashSet::new();
            for r in 0..train.row_count() {
                if let (Some(la), Some(lb)) = (ta.label(r), tb.label(r)) {
                    if let (Some(x), Some(y)) = (ca.lookup(la), cb.lookup(lb)) {
                        allowed.insert((x, y));
                    }
                }
            }
            Compiled::Membership { a, b, allowed }
        }
        ValidityRule::NumericOrder { greater, lesser } => Compiled::Order {
            hi: idx(greater),
            lo: idx(lesser),
        },
    })
}

impl Compiled {
    fn violated(&self, table: &DataTable, row: usize) -> bool {
        match self {
            Compiled::Implication { a, a_code, b, b_code } => {
                let av = table.categorical(*a).unwrap().codes[row];
                let bv = table.categorical(*b).unwrap().codes[row];
                match a_code {
                    Some(ac) if av == *ac && av != UNSEEN => Some(bv) != *b_code,
                    _ => false,
                }
            }
            Compiled::Membership { a, b, allowed } => {
                let av = table.categorical(*a).unwrap().codes[row];
                let bv = table.categorical(*b).unwrap().codes[row];
                !allowed.contains(&(av, bv))
            }
            Compiled::Order { hi, lo } => {
                table.numeric(*hi).unwrap()[row] < table.numeric(*lo).unwrap()[row]
            }
        }
    }
}

/// Per-row flags: true where the row breaks at least one rule.
pub fn invalid_rows(
    table: &DataTable,
    rules: &[ValidityRule],
    train: Option<&DataTable>,
) -> Result<Vec<bool>> {
    let compiled: Vec<Compiled> = rules
        .iter()
        .map(|r| compile(r, table, if r.needs_train() { train } else { None }))
        .collect::<Result<_>>()?;
    Ok((0..table.row_count())
        .map(|row| compiled.iter().any(|c| c.violated(table, row)))
        .collect())
}

/// Fraction of rows violating any rule; 0 for an empty table.
pub fn invalid_ratio(
    table: &DataTable,
    rules: &[ValidityRule],
    train: Option<&DataTable>,
) -> Result<f64> {
    let flags = invalid_rows(table, rules, train)?;
    if flags.is_empty() {
        return Ok(0.0);
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}
