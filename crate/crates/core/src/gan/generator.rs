use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{ColumnLayout, ColumnSlot};
use crate::error::{Error, Result};
use crate::nn::{gumbel_softmax, Activation, Mlp, MlpSpec};
use crate::schema::ColumnKind;
use crate::tensor::{Graph, Matrix, NodeId};

use super::config::TrainConfig;

/// Generator for one column. The primary network sees the noise and every
/// earlier column's output; the secondary network fills the columns after
/// this one from the noise alone and is never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStage {
    pub index: usize,
    pub primary: Mlp,
    pub secondary: Option<Mlp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeGenerator {
    pub noise_dim: usize,
    pub tau: f64,
    pub layout: ColumnLayout,
    pub stages: Vec<GeneratorStage>,
}

/// Graph nodes produced by one pass through the cascade.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// Stage outputs padded to the full width: `[X̂_1 .. X̂_i, Z_i]`.
    pub padded: Vec<NodeId>,
    /// The activated slice each stage generates for its own column.
    pub features: Vec<NodeId>,
}

impl CascadeOutput {
    pub fn last(&self) -> NodeId {
        *self.padded.last().expect("cascade has at least one stage")
    }
}

/// Output activations for a run of column slots: tanh on numeric scalars,
/// Gumbel-softmax over numeric modes and categories.
fn heads<R: Rng + ?Sized>(
    g: &mut Graph,
    raw: NodeId,
    slots: &[ColumnSlot],
    tau: f64,
    rng: &mut R,
) -> NodeId {
    let base = slots.first().map_or(0, |s| s.offset);
    let mut parts = Vec::with_capacity(slots.len() * 2);
    for s in slots {
        let start = s.offset - base;
        match s.kind {
            ColumnKind::Numeric => {
                let scalar = g.slice_cols(raw, start, 1);
                parts.push(g.tanh(scalar));
                let modes = g.slice_cols(raw, start + 1, s.width - 1);
                parts.push(gumbel_softmax(g, modes, tau, rng));
            }
            ColumnKind::Categorical => {
                let logits = g.slice_cols(raw, start, s.width);
                parts.push(gumbel_softmax(g, logits, tau, rng));
            }
        }
    }
    g.concat_cols(&parts)
}

impl CascadeGenerator {
    pub fn init<R: Rng + ?Sized>(layout: &ColumnLayout, config: &TrainConfig, rng: &mut R) -> Result<Self> {
        if layout.is_empty() {
            return Err(Error::Shape("cascade needs at least one column".into()));
        }
        let m = layout.len();
        let mut stages = Vec::with_capacity(m);
        for i in 0..m {
            let primary = Mlp::init(
                MlpSpec {
                    input: config.noise_dim + layout.prefix_width(i),
                    hidden: config.generator_hidden.clone(),
                    activation: Activation::LeakyRelu,
                    layer_norm: true,
                    output: layout.slots[i].width,
                },
                rng,
            )?;
            let rest = layout.total_width - layout.prefix_width(i + 1);
            let secondary = if rest > 0 {
                Some(Mlp::init(
                    MlpSpec {
                        input: config.noise_dim,
                        hidden: config.secondary_hidden.clone(),
                        activation: Activation::LeakyRelu,
                        layer_norm: true,
                        output: rest,
                    },
                    rng,
                )?)
            } else {
                None
            };
            stages.push(GeneratorStage {
                index: i,
                primary,
                secondary,
            });
        }
        Ok(CascadeGenerator {
            noise_dim: config.noise_dim,
            tau: config.tau,
            layout: layout.clone(),
            stages,
        })
    }

    /// Primary parameters of every stage, in stage order.
    pub fn primary_params(&self) -> Vec<Matrix> {
        self.stages
            .iter()
            .flat_map(|s| s.primary.params.iter().cloned())
            .collect()
    }

    pub fn set_primary_params(&mut self, params: Vec<Matrix>) -> Result<()> {
        let total: usize = self.stages.iter().map(|s| s.primary.params.len()).sum();
        if params.len() != total {
            return Err(Error::Shape(format!("{} parameters for {total} slots", params.len())));
        }
        let mut it = params.into_iter();
        for s in &mut self.stages {
            for p in &mut s.primary.params {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Binds primary parameters into `g`, grouped per stage.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Vec<NodeId>> {
        self.stages.iter().map(|s| s.primary.bind(g, trainable)).collect()
    }

    /// Runs the cascade on noise `z` (rows × noise_dim). Secondary networks
    /// always enter as constants, so no gradient reaches them.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        params: &[Vec<NodeId>],
        z: NodeId,
        rng: &mut R,
    ) -> Result<CascadeOutput> {
        let (rows, zw) = g.shape(z);
        if zw != self.noise_dim {
            return Err(Error::Shape(format!("noise width {zw}, expected {}", self.noise_dim)));
        }
        if params.len() != self.stages.len() || self.layout.len() != self.stages.len() {
            return Err(Error::Shape("stage count does not match the layout".into()));
        }
        let total = self.layout.total_width;
        let mut prev: Option<NodeId> = None;
        let mut padded = Vec::with_capacity(self.stages.len());
        let mut features = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let phi = match prev {
                None => z,
                Some(p) => g.concat_cols(&[z, p]),
            };
            let raw = stage.primary.forward(g, &params[i], phi)?;
            let x_i = heads(g, raw, &self.layout.slots[i..=i], self.tau, rng);
            let cumulative = match prev {
                None => x_i,
                Some(p) => g.concat_cols(&[p, x_i]),
            };
            let pad = match &stage.secondary {
                Some(sec) => {
                    let sp = sec.bind(g, false);
                    let sraw = sec.forward(g, &sp, z)?;
                    let rest = heads(g, sraw, &self.layout.slots[i + 1..], self.tau, rng);
                    g.concat_cols(&[cumulative, rest])
                }
                None => cumulative,
            };
            assert_eq!(g.shape(cumulative), (rows, self.layout.prefix_width(i + 1)));
            assert_eq!(g.shape(pad), (rows, total));
            prev = Some(cumulative);
            padded.push(pad);
            features.push(x_i);
        }
        Ok(CascadeOutput { padded, features })
    }

    /// Full generated batch with all parameters constant.
    pub fn generate<R: Rng + ?Sized>(&self, z: &Matrix, rng: &mut R) -> Result<Matrix> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let zn = g.constant(z.clone());
        let out = self.forward(&mut g, &params, zn, rng)?;
        Ok(g.value(out.last()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> ColumnLayout {
        let slot = |offset, width, kind| ColumnSlot { offset, width, kind };
        ColumnLayout {
            slots: vec![
                slot(0, 3, ColumnKind::Numeric),
                slot(3, 4, ColumnKind::Categorical),
                slot(7, 2, ColumnKind::Categorical),
            ],
            total_width: 9,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            noise_dim: 6,
            generator_hidden: vec![8, 5],
            secondary_hidden: vec![4],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn width_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = CascadeGenerator::init(&layout(), &small_config(), &mut rng).unwrap();
        assert_eq!(gen.stages[0].primary.spec.input, 6);
        assert_eq!(gen.stages[1].primary.spec.input, 9);
        assert_eq!(gen.stages[2].primary.spec.input, 13);
        assert_eq!(gen.stages[0].secondary.as_ref().unwrap().spec.output, 6);
        assert_eq!(gen.stages[1].secondary.as_ref().unwrap().spec.output, 2);
        assert!(gen.stages[2].secondary.is_none());

        let mut g = Graph::new();
        let p = gen.bind(&mut g, true);
        let z = g.constant(Matrix::from_fn(5, 6, |r, c| ((r + c) as f64).sin()));
        let out = gen.forward(&mut g, &p, z, &mut rng).unwrap();
        for (i, &f) in out.features.iter().enumerate() {
            assert_eq!(g.shape(f), (5, layout().slots[i].width));
            assert_eq!(g.shape(out.padded[i]), (5, 9));
        }
        // The final padded output is exactly the concatenated features.
        let last = g.value(out.last()).clone();
        let mut col = 0;
        for &f in &out.features {
            let v = g.value(f);
            for c in 0..v.cols() {
                for r in 0..5 {
                    assert_eq!(last.get(r, col + c), v.get(r, c));
                }
            }
            col += v.cols();
        }
        // Scalar slot in (-1, 1), every simplex slice sums to 1.
        for r in 0..5 {
            let row = last.row(r);
            assert!(row[0].abs() < 1.0);
            for (a, b) in [(1, 3), (3, 7), (7, 9)] {
                let s: f64 = row[a..b].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row[a..b].iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn single_column_has_no_padding() {
        let l = ColumnLayout {
            slots: vec![ColumnSlot { offset: 0, width: 3, kind: ColumnKind::Categorical }],
            total_width: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = CascadeGenerator::init(&l, &small_config(), &mut rng).unwrap();
        let mut g = Graph::new();
        let p = gen.bind(&mut g, true);
        let z = g.constant(Matrix::filled(2, 6, 0.3));
        let out = gen.forward(&mut g, &p, z, &mut rng).unwrap();
        assert_eq!(out.padded[0], out.features[0]);
    }

    #[test]
    fn secondary_networks_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = CascadeGenerator::init(&layout(), &small_config(), &mut rng).unwrap();
        let mut g = Graph::new();
        let p = gen.bind(&mut g, true);
        let z = g.constant(Matrix::filled(3, 6, 0.1));
        let out = gen.forward(&mut g, &p, z, &mut rng).unwrap();
        let loss = g.sum_all(out.padded[0]);
        // Stage 1's padded output depends on its own primary net, not on
        // stages 2 and 3.
        let flat: Vec<NodeId> = p.iter().flatten().copied().collect();
        let grads = g.backward(loss, &flat).unwrap();
        let per = gen.stages[0].primary.params.len();
        assert!(grads[..per].iter().any(|m| m.data().iter().any(|&v| v != 0.0)));
        assert!(grads[per..].iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }
}
