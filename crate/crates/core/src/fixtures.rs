//! Seeded synthetic tables used by the test suites, the acceptance harness
//! and the examples in the README.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::metrics::ValidityRule;
use crate::schema::{CategoricalColumn, ColumnData, ColumnSpec, DataTable, DatasetSchema, Task};

fn categorical(codes: Vec<u32>, labels: &[String]) -> ColumnData {
    ColumnData::Categorical(CategoricalColumn {
        codes,
        dictionary: labels.to_vec(),
    })
}

/// Schema of [`city_country`]: `city, country, a, b` with a pair-membership
/// rule on (city, country).
pub fn city_country_schema() -> DatasetSchema {
    DatasetSchema::new(
        "city_country",
        Task::None,
        vec![
            ColumnSpec::categorical("city"),
            ColumnSpec::categorical("country"),
            ColumnSpec::numeric("a"),
            ColumnSpec::numeric("b"),
        ],
    )
    .expect("valid schema")
    .with_rules(vec![ValidityRule::PairMembership {
        left: "city".into(),
        right: "country".into(),
    }])
    .expect("valid rule")
}

/// Nine cities split evenly over three countries (`city{3k+j}` lies in
/// `country{k}`), `a = 10k + 2·N(0,1)` and `b = a/2 + N(0,1)`.
pub fn city_country(rows: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut city, mut country, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..rows {
        let c: u32 = rng.gen_range(0..9);
        let k = c / 3;
        let x = 10.0 * k as f64 + 2.0 * n01.sample(&mut rng);
        city.push(c);
        country.push(k);
        a.push(x);
        b.push(0.5 * x + n01.sample(&mut rng));
    }
    let cities: Vec<String> = (0..9).map(|i| format!("city{i}")).collect();
    let countries: Vec<String> = (0..3).map(|i| format!("country{i}")).collect();
    DataTable::new(
        city_country_schema(),
        vec![
            categorical(city, &cities),
            categorical(country, &countries),
            ColumnData::Numeric(a),
            ColumnData::Numeric(b),
        ],
    )
    .expect("consistent columns")
}

/// Schema of [`logistic`]: `x1, x2, group, label` with `label` as the
/// binary target.
pub fn logistic_schema() -> DatasetSchema {
    DatasetSchema::new(
        "logistic",
        Task::BinaryClassification,
        vec![
            ColumnSpec::numeric("x1"),
            ColumnSpec::numeric("x2"),
            ColumnSpec::categorical("group"),
            ColumnSpec::categorical("label").as_target(),
        ],
    )
    .expect("valid schema")
}

/// Learnable binary target: `label = yes` with probability
/// `sigmoid(2·x1 − 1.5·x2 − 1 + N(0, 0.5²))`; `group` is an uninformative
/// three-level categorical.
pub fn logistic(rows: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut x1, mut x2, mut group, mut label) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..rows {
        let a = n01.sample(&mut rng);
        let b = n01.sample(&mut rng);
        let logit: f64 = 2.0 * a - 1.5 * b - 1.0 + 0.5 * n01.sample(&mut rng);
        let p = 1.0 / (1.0 + (-logit).exp());
        x1.push(a);
        x2.push(b);
        group.push(rng.gen_range(0..3));
        label.push(u32::from(rng.gen::<f64>() < p));
    }
    let groups: Vec<String> = ["g0", "g1", "g2"].map(String::from).to_vec();
    let labels: Vec<String> = ["no", "yes"].map(String::from).to_vec();
    DataTable::new(
        logistic_schema(),
        vec![
            ColumnData::Numeric(x1),
            ColumnData::Numeric(x2),
            categorical(group, &groups),
            categorical(label, &labels),
        ],
    )
    .expect("consistent columns")
}

/// Mixed-type table: `income` (two far-apart uniform bands), `colour`
/// (four levels), `score` (tiny-scale uniform) and `flag` (two levels).
pub fn mixed(rows: usize, seed: u64) -> DataTable {
    let schema = DatasetSchema::new(
        "mixed",
        Task::None,
        vec![
            ColumnSpec::numeric("income"),
            ColumnSpec::categorical("colour"),
            ColumnSpec::numeric("score"),
            ColumnSpec::categorical("flag"),
        ],
    )
    .expect("valid schema");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut income, mut colour, mut score, mut flag) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..rows {
        income.push(if rng.gen::<bool>() { rng.gen_range(1e4..2e4) } else { rng.gen_range(8e4..9e4) });
        colour.push(rng.gen_range(0..4));
        score.push(rng.gen_range(-1.0..1.0) * 1e-3);
        flag.push(rng.gen_range(0..2));
    }
    let colours: Vec<String> = ["red", "green", "blue", "grey"].map(String::from).to_vec();
    let flags: Vec<String> = ["y", "n"].map(String::from).to_vec();
    DataTable::new(
        schema,
        vec![
            ColumnData::Numeric(income),
            categorical(colour, &colours),
            ColumnData::Numeric(score),
            categorical(flag, &flags),
        ],
    )
    .expect("consistent columns")
}
