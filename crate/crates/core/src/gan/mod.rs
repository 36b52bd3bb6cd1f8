//! Cascaded generators, the shared critic, and the training loop.

mod config;
mod generator;
mod train;

use std::path::Path;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::encode::{EncodedMatrix, TableEncoder};
use crate::error::{Error, Result};
use crate::gbdt::{AuxLearner, PerturbationConfig};
use crate::nn::{Activation, AdamState, Mlp, MlpSpec};
use crate::schema::{DataTable, DatasetSchema};
use crate::tensor::Matrix;

pub use config::{aux_coefficients, TrainConfig};
pub use generator::{CascadeGenerator, CascadeOutput, GeneratorStage};
pub use train::{
    aux_loss, batches, d_loss_graph, d_train_step, g_loss_graph, g_train_step, noise_batch, to_aux_space,
    GeneratorLoss, LossHistory, LossRecord, StepLosses,
};

const SAMPLE_CHUNK: usize = 1024;
pub const MODEL_KIND: &str = "castgan-model";

/// Seed streams derived from the run seed.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A fitted model: encoders, frozen auxiliary learners, generator cascade
/// and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasTgan {
    pub schema: DatasetSchema,
    pub config: TrainConfig,
    pub perturbation: PerturbationConfig,
    pub encoder: TableEncoder,
    pub learners: Vec<AuxLearner>,
    pub generator: CascadeGenerator,
    pub discriminator: Mlp,
}

/// Trains one learner per column, spreading columns over `threads` workers.
/// Results do not depend on the thread count.
pub fn train_learners(
    encoder: &TableEncoder,
    table: &DataTable,
    config: &TrainConfig,
    perturbation: PerturbationConfig,
    threads: usize,
) -> Result<Vec<AuxLearner>> {
    let aux = encoder.encode_aux(table)?;
    let m = aux.cols();
    let threads = threads.clamp(1, m.max(1));
    let mut slots: Vec<Option<Result<AuxLearner>>> = (0..m).map(|_| None).collect();
    thread::scope(|s| {
        let chunk = m.div_ceil(threads);
        let handles: Vec<_> = (0..m)
            .collect::<Vec<_>>()
            .chunks(chunk)
            .map(|cols| {
                let cols = cols.to_vec();
                let aux = &aux;
                s.spawn(move || {
                    cols.into_iter()
                        .map(|c| (c, AuxLearner::train(aux, c, &config.gbdt, perturbation)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("learner thread panicked") {
                slots[c] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every column trained")).collect()
}

impl CasTgan {
    /// Fits encoders and auxiliary learners on `table` and initializes the
    /// networks; no adversarial training yet.
    pub fn build(
        table: &DataTable,
        config: TrainConfig,
        perturbation: PerturbationConfig,
        threads: usize,
    ) -> Result<Self> {
        config.validate()?;
        perturbation.validate()?;
        if table.row_count() == 0 {
            return Err(Error::InvalidArgument("training table is empty".into()));
        }
        let encoder = TableEncoder::fit(table, config.vgm, sub_seed(config.seed, 1))?;
        let learners = train_learners(&encoder, table, &config, perturbation, threads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 2));
        let generator = CascadeGenerator::init(&encoder.layout, &config, &mut rng)?;
        let discriminator = Mlp::init(
            MlpSpec {
                input: encoder.layout.total_width,
                hidden: config.discriminator_hidden.clone(),
                activation: Activation::Relu,
                layer_norm: true,
                output: 1,
            },
            &mut rng,
        )?;
        Ok(CasTgan {
            schema: table.schema().clone(),
            config,
            perturbation,
            encoder,
            learners,
            generator,
            discriminator,
        })
    }

    /// Builds and trains in one call.
    pub fn fit(
        table: &DataTable,
        config: TrainConfig,
        perturbation: PerturbationConfig,
        threads: usize,
    ) -> Result<(Self, LossHistory)> {
        let mut model = CasTgan::build(table, config, perturbation, threads)?;
        let history = model.train(table)?;
        Ok((model, history))
    }

    pub fn coefficients(&self) -> Vec<f64> {
        aux_coefficients(
            self.learners.len(),
            self.config.lambda_al_first,
            self.config.lambda_al_last,
        )
    }

    /// Adversarial training for `config.epochs` epochs over full batches.
    pub fn train(&mut self, table: &DataTable) -> Result<LossHistory> {
        self.train_with(table, |_| {})
    }

    /// As [`train`](Self::train), calling `on_epoch` after each epoch.
    pub fn train_with(&mut self, table: &DataTable, mut on_epoch: impl FnMut(&LossRecord)) -> Result<LossHistory> {
        crate::tensor::retain_heap();
        let cfg = self.config.clone();
        let n = table.row_count();
        if cfg.batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the {n} training rows",
                cfg.batch_size
            )));
        }
        let encoded: EncodedMatrix = self.encoder.encode_table_seeded(table, sub_seed(cfg.seed, 3))?;
        let coefficients = self.coefficients();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 4));
        let mut d_adam = AdamState::new(cfg.discriminator_adam, &self.discriminator.params);
        let mut g_adam = AdamState::new(cfg.generator_adam, &self.generator.primary_params());
        let m = self.learners.len();
        let mut history = LossHistory::default();

        for epoch in 0..cfg.epochs {
            let (mut d_sum, mut adv_sum) = (0.0, 0.0);
            let mut aux_sum = vec![0.0; m];
            let (mut d_count, mut g_count) = (0usize, 0usize);
            for rows in batches(n, cfg.batch_size, &mut rng) {
                let real = encoded.data.select_rows(&rows);
                for _ in 0..cfg.d_steps {
                    d_sum += d_train_step(
                        &self.generator,
                        &mut self.discriminator,
                        &mut d_adam,
                        &real,
                        cfg.lambda_gp,
                        cfg.real_noise_std,
                        &mut rng,
                    )?;
                    d_count += 1;
                }
                let step = g_train_step(
                    &mut self.generator,
                    &mut g_adam,
                    &self.discriminator,
                    &self.encoder,
                    &self.learners,
                    &coefficients,
                    cfg.batch_size,
                    &mut rng,
                )?;
                adv_sum += step.adversarial.iter().sum::<f64>() / m as f64;
                for (a, v) in aux_sum.iter_mut().zip(&step.aux) {
                    *a += v;
                }
                g_count += 1;
            }
            let record = LossRecord {
                epoch: epoch + 1,
                d_loss: d_sum / d_count as f64,
                g_adv_loss: adv_sum / g_count as f64,
                aux_loss: aux_sum.iter().map(|v| v / g_count as f64).collect(),
            };
            on_epoch(&record);
            history.records.push(record);
        }
        Ok(history)
    }

    /// Encoded synthetic rows from the cascade's final output.
    pub fn sample_encoded(&self, n: usize, seed: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = self.encoder.layout.total_width;
        let mut out = Matrix::zeros(n, width);
        let mut done = 0;
        while done < n {
            let rows = SAMPLE_CHUNK.min(n - done);
            let z = noise_batch(&mut rng, rows, self.generator.noise_dim);
            let x = self.generator.generate(&z, &mut rng)?;
            for r in 0..rows {
                out.row_mut(done + r).copy_from_slice(x.row(r));
            }
            done += rows;
        }
        Ok(out)
    }

    /// `n` synthetic rows, hard-decoded to raw values.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataTable> {
        let data = self.sample_encoded(n, seed)?;
        self.encoder.decode_table(
            &EncodedMatrix {
                layout: self.encoder.layout.clone(),
                data,
            },
            &self.schema,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::to_bytes(MODEL_KIND, self)
    }

    /// Parses a container and checks that its parts fit together.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let model: CasTgan = container::from_bytes(MODEL_KIND, bytes)?;
        model.schema.validate()?;
        let m = model.schema.len();
        if model.encoder.encoders.len() != m
            || model.learners.len() != m
            || model.generator.stages.len() != m
            || model.generator.layout != model.encoder.layout
        {
            return Err(Error::Format("model parts disagree on the column count".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, MODEL_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::ColumnEncoder;
    use crate::schema::{read_csv, ColumnData, ColumnSpec, Task};
    use crate::tensor::Graph;
    use rand::Rng;

    pub(crate) fn fixture(rows: usize, seed: u64) -> DataTable {
        let schema = DatasetSchema::new(
            "f",
            Task::None,
            vec![
                ColumnSpec::categorical("city"),
                ColumnSpec::categorical("country"),
                ColumnSpec::numeric("x"),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("city,country,x\n");
        for _ in 0..rows {
            let c = rng.gen_range(0..6);
            let x: f64 = if c < 3 { rng.gen_range(0.0..1.0) } else { rng.gen_range(5.0..6.0) };
            text.push_str(&format!("c{c},k{},{x}\n", c / 2));
        }
        read_csv(text.as_bytes(), &schema).unwrap()
    }

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 32,
            noise_dim: 8,
            generator_hidden: vec![16, 8],
            secondary_hidden: vec![4],
            discriminator_hidden: vec![16, 8],
            gbdt: crate::gbdt::GbdtParams {
                rounds: 10,
                ..Default::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let t = fixture(100, 0);
        let cfg = TrainConfig { epochs: 0, ..tiny_config() };
        let built = CasTgan::build(&t, cfg.clone(), PerturbationConfig::none(), 1).unwrap();
        let (fitted, hist) = CasTgan::fit(&t, cfg, PerturbationConfig::none(), 1).unwrap();
        assert!(hist.is_empty());
        assert_eq!(built, fitted);
    }

    #[test]
    fn training_is_deterministic_and_respects_frozen_parts() {
        let t = fixture(200, 1);
        let cfg = tiny_config();
        let built = CasTgan::build(&t, cfg.clone(), PerturbationConfig::none(), 1).unwrap();
        let mut a = built.clone();
        let ha = a.train(&t).unwrap();
        let (b, hb) = CasTgan::fit(&t, cfg, PerturbationConfig::none(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 2);
        assert!(ha.all_finite());
        assert_ne!(a.generator.primary_params(), built.generator.primary_params());
        assert_ne!(a.discriminator, built.discriminator);
        for (s, s0) in a.generator.stages.iter().zip(&built.generator.stages) {
            assert_eq!(s.secondary, s0.secondary);
        }
        assert_eq!(a.learners, built.learners);
        let csv = ha.to_csv(3);
        assert!(csv.starts_with("epoch,d_loss,g_adv_loss,aux_loss_1,aux_loss_2,aux_loss_3\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn container_round_trip_is_bit_stable() {
        let t = fixture(200, 4);
        let (m, _) = CasTgan::fit(&t, tiny_config(), PerturbationConfig { epsilon: 0.2, seed: 3 }, 1).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = CasTgan::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.sample(50, 9).unwrap(), m.sample(50, 9).unwrap());
        let names: Vec<String> = container::array_table(&bytes).unwrap().into_iter().map(|a| a.name).collect();
        assert!(names.iter().any(|n| n.starts_with("generator.stages.0.primary.params.0")));
        assert!(names.iter().any(|n| n.starts_with("learners.0.rounds")));
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(CasTgan::from_bytes(&future), Err(Error::Format(_))));
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let t = fixture(40, 2);
        let cfg = TrainConfig { batch_size: 64, ..tiny_config() };
        assert!(CasTgan::fit(&t, cfg, PerturbationConfig::none(), 1).is_err());
    }

    #[test]
    fn batches_drop_partial_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batches(10, 3, &mut rng);
        assert_eq!(b.len(), 3);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn sampling_contract() {
        let t = fixture(100, 3);
        let m = CasTgan::build(&t, tiny_config(), PerturbationConfig::none(), 1).unwrap();
        let empty = m.sample(0, 1).unwrap();
        assert_eq!(empty.row_count(), 0);
        assert_eq!(empty.schema(), t.schema());
        let s = m.sample(300, 7).unwrap();
        assert_eq!(s, m.sample(300, 7).unwrap());
        assert_ne!(s, m.sample(300, 8).unwrap());
        for (i, col) in s.columns().iter().enumerate() {
            match (col, &m.encoder.encoders[i]) {
                (ColumnData::Categorical(c), ColumnEncoder::Categorical(o)) => {
                    assert_eq!(c.dictionary, o.dictionary);
                    assert!(c.codes.iter().all(|&k| (k as usize) < o.dictionary.len()));
                }
                (ColumnData::Numeric(v), ColumnEncoder::Numeric(e)) => {
                    for x in v {
                        let ok = (0..e.k()).any(|k| (x - e.means[k]).abs() <= 4.0 * e.stds[k] * (1.0 + 1e-12));
                        assert!(ok, "{x} outside every mode");
                    }
                }
                _ => panic!("kind mismatch"),
            }
        }
    }

    #[test]
    fn generator_loss_decomposes() {
        let t = fixture(120, 4);
        let m = CasTgan::build(&t, tiny_config(), PerturbationConfig::none(), 1).unwrap();
        let coef = m.coefficients();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = noise_batch(&mut rng, 16, 8);
        let mut g = Graph::new();
        let p = m.generator.bind(&mut g, true);
        let loss = g_loss_graph(&mut g, &m.generator, &p, &m.discriminator, &m.encoder, &m.learners, &coef, &z, &mut rng).unwrap();
        let total = g.value(loss.total).item();
        let adv: f64 = loss.adversarial.iter().map(|&n| g.value(n).item()).sum();
        let aux: f64 = loss.aux.iter().zip(&coef).map(|(&n, c)| c * g.value(n).item()).sum();
        assert!((total - (adv + aux)).abs() < 1e-9);

        // Zero coefficients leave only the adversarial part.
        let zero = vec![0.0; coef.len()];
        let mut g = Graph::new();
        let p = m.generator.bind(&mut g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = noise_batch(&mut rng, 16, 8);
        let loss = g_loss_graph(&mut g, &m.generator, &p, &m.discriminator, &m.encoder, &m.learners, &zero, &z, &mut rng).unwrap();
        let adv: f64 = loss.adversarial.iter().map(|&n| g.value(n).item()).sum();
        assert!((g.value(loss.total).item() - adv).abs() < 1e-12);
    }

    #[test]
    fn numeric_aux_loss_vanishes_on_exact_prediction() {
        let t = fixture(120, 6);
        let m = CasTgan::build(&t, tiny_config(), PerturbationConfig::none(), 1).unwrap();
        let enc = &m.encoder;
        let slot = enc.layout.slots[2];
        let v = match &enc.encoders[2] {
            ColumnEncoder::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        // Rows whose numeric slice decodes exactly to the learner's prediction.
        let mut rows = Matrix::zeros(4, enc.layout.total_width);
        for r in 0..4 {
            let row = rows.row_mut(r);
            row[r % 3] = 1.0;
            row[enc.layout.slots[1].offset + r % 3] = 1.0;
        }
        for r in 0..4 {
            let raw = to_aux_space(enc, &rows);
            let pred = m.learners[2].predict_point(raw.row(r)).unwrap();
            let k = (0..v.k()).min_by(|&a, &b| (pred - v.means[a]).abs().total_cmp(&(pred - v.means[b]).abs())).unwrap();
            let s = (pred - v.means[k]) / (4.0 * v.stds[k]);
            assert!(s.abs() <= 1.0);
            let row = rows.row_mut(r);
            row[slot.offset] = s;
            row[slot.offset + 1 + k] = 1.0;
        }
        let mut g = Graph::new();
        let pad = g.constant(rows.clone());
        let feat = g.slice_cols(pad, slot.offset, slot.width);
        let l = aux_loss(&mut g, enc, &m.learners[2], pad, feat).unwrap();
        assert!(g.value(l).item() < 1e-20, "{}", g.value(l).item());
    }

    #[test]
    fn single_column_without_aux_matches_plain_wgan_generator() {
        let schema = DatasetSchema::new("one", Task::None, vec![ColumnSpec::categorical("c")]).unwrap();
        let mut text = String::from("c\n");
        for i in 0..60 {
            text.push_str(&format!("v{}\n", i % 3));
        }
        let t = read_csv(text.as_bytes(), &schema).unwrap();
        let cfg = TrainConfig { lambda_al_first: 0.0, lambda_al_last: 0.0, ..tiny_config() };
        let m = CasTgan::build(&t, cfg, PerturbationConfig::none(), 1).unwrap();
        let coef = m.coefficients();
        let z = noise_batch(&mut ChaCha8Rng::seed_from_u64(9), 10, 8);

        let mut g = Graph::new();
        let p = m.generator.bind(&mut g, true);
        let loss = g_loss_graph(&mut g, &m.generator, &p, &m.discriminator, &m.encoder, &m.learners, &coef, &z, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ours = g.backward(loss.total, &p[0]).unwrap();

        // Plain generator: gumbel-softmax head on the primary net, -mean D.
        let mut g = Graph::new();
        let net = &m.generator.stages[0].primary;
        let p = net.bind(&mut g, true);
        let zn = g.constant(z.clone());
        let logits = net.forward(&mut g, &p, zn).unwrap();
        let x = crate::nn::gumbel_softmax(&mut g, logits, m.config.tau, &mut ChaCha8Rng::seed_from_u64(3));
        let dp = m.discriminator.bind(&mut g, false);
        let d = m.discriminator.forward(&mut g, &dp, x).unwrap();
        let md = g.mean_all(d);
        let l = g.neg(md);
        let plain = g.backward(l, &p).unwrap();
        assert_eq!(ours, plain);
    }
}
