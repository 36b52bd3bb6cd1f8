use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::encode::{argmax, ColumnEncoder, TableEncoder, SCALE_SIGMAS};
use crate::error::{Error, Result};
use crate::gbdt::{AuxLearner, Objective};
use crate::nn::{gradient_penalty, AdamState, Mlp};
use crate::tensor::{Graph, Matrix, NodeId};

use super::generator::CascadeGenerator;

/// Per-epoch means of the recorded losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub aux_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_loss).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| {
            r.d_loss.is_finite() && r.g_adv_loss.is_finite() && r.aux_loss.iter().all(|v| v.is_finite())
        })
    }

    /// CSV with header `epoch,d_loss,g_adv_loss,aux_loss_1..aux_loss_M`.
    pub fn to_csv(&self, stages: usize) -> String {
        let mut out = String::from("epoch,d_loss,g_adv_loss");
        for i in 1..=stages {
            let _ = write!(out, ",aux_loss_{i}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.epoch, r.d_loss, r.g_adv_loss);
            for v in &r.aux_loss {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Losses of one generator step, per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub adversarial: Vec<f64>,
    pub aux: Vec<f64>,
    pub total: f64,
}

pub fn noise_batch<R: Rng + ?Sized>(rng: &mut R, rows: usize, width: usize) -> Matrix {
    Matrix::from_fn(rows, width, |_, _| StandardNormal.sample(rng))
}

/// Converts generated rows to the auxiliary learners' raw space: argmax
/// codes for categoricals and soft-decoded values for numerics.
pub fn to_aux_space(encoder: &TableEncoder, rows: &Matrix) -> Matrix {
    let m = encoder.encoders.len();
    Matrix::from_fn(rows.rows(), m, |r, c| {
        let slot = &encoder.layout.slots[c];
        let s = &rows.row(r)[slot.offset..slot.offset + slot.width];
        match &encoder.encoders[c] {
            ColumnEncoder::Numeric(v) => v.decode(s[0], &s[1..], false),
            ColumnEncoder::Categorical(_) => argmax(s) as f64,
        }
    })
}

/// Auxiliary loss for stage `i`: the learner's prediction from the padded
/// stage output is a constant target for the stage's own feature.
pub fn aux_loss(
    g: &mut Graph,
    encoder: &TableEncoder,
    learner: &AuxLearner,
    padded: NodeId,
    feature: NodeId,
) -> Result<NodeId> {
    let i = learner.target;
    let raw = to_aux_space(encoder, g.value(padded));
    let n = raw.rows();
    if learner.input_width() + 1 != encoder.encoders.len() {
        return Err(Error::Shape("learner inputs do not match the encoder".into()));
    }
    match &encoder.encoders[i] {
        ColumnEncoder::Categorical(o) => {
            let q = learner.predict_batch(&raw)?;
            if q.cols() != o.width() || learner.objective != Objective::CrossEntropy {
                return Err(Error::Shape("categorical learner does not match the column".into()));
            }
            let q = g.constant(q);
            let p = g.add_scalar(feature, 1e-12);
            let logp = g.log(p);
            let prod = g.mul(q, logp);
            let s = g.sum_all(prod);
            Ok(g.scale(s, -1.0 / n as f64))
        }
        ColumnEncoder::Numeric(v) => {
            let k = v.k();
            if learner.objective != Objective::Mse {
                return Err(Error::Shape("numeric learner returned probabilities".into()));
            }
            let target = learner.predict_batch(&raw)?;
            let (mean, std) = encoder.column_stats[i];
            let std = if std > 0.0 { std } else { 1.0 };
            // Soft decode: x = s * 4 Σ p_k σ_k + Σ p_k μ_k.
            let scalar = g.slice_cols(feature, 0, 1);
            let probs = g.slice_cols(feature, 1, k);
            let sig = g.constant(Matrix::from_fn(k, 1, |j, _| SCALE_SIGMAS * v.stds[j]));
            let mu = g.constant(Matrix::from_fn(k, 1, |j, _| v.means[j]));
            let spread = g.matmul(probs, sig);
            let centre = g.matmul(probs, mu);
            let scaled = g.mul(scalar, spread);
            let x = g.add(scaled, centre);
            let t = g.constant(target.map(|y| (y - mean) / std));
            let xs = g.add_scalar(x, -mean);
            let xs = g.scale(xs, 1.0 / std);
            let d = g.sub(xs, t);
            let sq = g.square(d);
            Ok(g.mean_all(sq))
        }
    }
}

/// One discriminator update on a real batch; returns the loss value.
#[allow(clippy::too_many_arguments)]
pub fn d_train_step<R: Rng + ?Sized>(
    generator: &CascadeGenerator,
    disc: &mut Mlp,
    adam: &mut AdamState,
    real: &Matrix,
    lambda_gp: f64,
    real_noise_std: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = real.rows();
    let z = noise_batch(rng, n, generator.noise_dim);
    let fake = generator.generate(&z, rng)?;
    let noisy = if real_noise_std > 0.0 {
        let normal = Normal::new(0.0, real_noise_std).expect("positive std");
        Matrix::from_fn(n, real.cols(), |r, c| real.get(r, c) + normal.sample(rng))
    } else {
        real.clone()
    };
    let mut g = Graph::new();
    let params = disc.bind(&mut g, true);
    let loss = d_loss_graph(&mut g, disc, &params, &noisy, &fake, lambda_gp, rng)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss, &params)?;
    adam.step(&mut disc.params, &grads)?;
    Ok(value)
}

/// `mean D(fake) - mean D(real) + λ_GP · GP` with the penalty evaluated on
/// per-row interpolates `u·real + (1-u)·fake`.
pub fn d_loss_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    disc: &Mlp,
    params: &[NodeId],
    real: &Matrix,
    fake: &Matrix,
    lambda_gp: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let rn = g.constant(real.clone());
    let fk = g.constant(fake.clone());
    let d_real = disc.forward(g, params, rn)?;
    let d_fake = disc.forward(g, params, fk)?;
    let mr = g.mean_all(d_real);
    let mf = g.mean_all(d_fake);
    let mut loss = g.sub(mf, mr);
    if lambda_gp > 0.0 {
        let mut mix = real.clone();
        for r in 0..mix.rows() {
            let u: f64 = rng.gen();
            let f = fake.row(r);
            for (c, v) in mix.row_mut(r).iter_mut().enumerate() {
                *v = u * *v + (1.0 - u) * f[c];
            }
        }
        let x = g.variable(mix);
        let gp = gradient_penalty(g, disc, params, x)?;
        let gp = g.scale(gp, lambda_gp);
        loss = g.add(loss, gp);
    }
    Ok(loss)
}

/// Generator objective `Σ_i [-mean D(pad_i) + λ_i L_AL_i]` built on `g`.
pub struct GeneratorLoss {
    pub total: NodeId,
    pub adversarial: Vec<NodeId>,
    pub aux: Vec<NodeId>,
}

#[allow(clippy::too_many_arguments)]
pub fn g_loss_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    generator: &CascadeGenerator,
    gen_params: &[Vec<NodeId>],
    disc: &Mlp,
    encoder: &TableEncoder,
    learners: &[AuxLearner],
    coefficients: &[f64],
    z: &Matrix,
    rng: &mut R,
) -> Result<GeneratorLoss> {
    if learners.len() != generator.stages.len() || coefficients.len() != learners.len() {
        return Err(Error::Shape("one learner and coefficient per stage required".into()));
    }
    let zn = g.constant(z.clone());
    let out = generator.forward(g, gen_params, zn, rng)?;
    let dp = disc.bind(g, false);
    let mut adversarial = Vec::new();
    let mut aux = Vec::new();
    let mut total: Option<NodeId> = None;
    for i in 0..learners.len() {
        let d = disc.forward(g, &dp, out.padded[i])?;
        let md = g.mean_all(d);
        let adv = g.neg(md);
        let al = aux_loss(g, encoder, &learners[i], out.padded[i], out.features[i])?;
        let weighted = g.scale(al, coefficients[i]);
        let stage = g.add(adv, weighted);
        total = Some(match total {
            None => stage,
            Some(t) => g.add(t, stage),
        });
        adversarial.push(adv);
        aux.push(al);
    }
    Ok(GeneratorLoss {
        total: total.expect("at least one stage"),
        adversarial,
        aux,
    })
}

/// One joint update of every primary generator network.
#[allow(clippy::too_many_arguments)]
pub fn g_train_step<R: Rng + ?Sized>(
    generator: &mut CascadeGenerator,
    adam: &mut AdamState,
    disc: &Mlp,
    encoder: &TableEncoder,
    learners: &[AuxLearner],
    coefficients: &[f64],
    batch: usize,
    rng: &mut R,
) -> Result<StepLosses> {
    let z = noise_batch(rng, batch, generator.noise_dim);
    let mut g = Graph::new();
    let params = generator.bind(&mut g, true);
    let loss = g_loss_graph(&mut g, generator, &params, disc, encoder, learners, coefficients, &z, rng)?;
    let flat: Vec<NodeId> = params.iter().flatten().copied().collect();
    let grads = g.backward(loss.total, &flat)?;
    let mut current = generator.primary_params();
    adam.step(&mut current, &grads)?;
    generator.set_primary_params(current)?;
    Ok(StepLosses {
        adversarial: loss.adversarial.iter().map(|&n| g.value(n).item()).collect(),
        aux: loss.aux.iter().map(|&n| g.value(n).item()).collect(),
        total: g.value(loss.total).item(),
    })
}

/// Seeded shuffle split into full batches; the remainder is dropped.
pub fn batches<R: Rng + ?Sized>(rows: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    order.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}
