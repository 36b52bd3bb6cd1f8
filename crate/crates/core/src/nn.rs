//! Multilayer perceptrons, Adam and Gumbel-softmax on top of [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Matrix, NodeId};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
}

/// Hidden layers are `linear -> [layer norm] -> activation`; the output
/// layer is a bare linear map whose head activations are applied by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub output: usize,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config(format!("non-positive layer width in {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output));
        dims
    }

    fn params_per_hidden(&self) -> usize {
        if self.layer_norm {
            4
        } else {
            2
        }
    }
}

/// Network parameters in a flat, fixed order:
/// per hidden layer `W, b[, gain, beta]`, then output `W, b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<Matrix>,
}

impl Mlp {
    /// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases 0, layer-norm gain 1.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = (1.0 / fan_in as f64).sqrt();
            params.push(Matrix::from_fn(fan_in, fan_out, |_, _| {
                rng.gen_range(-bound..=bound)
            }));
            params.push(Matrix::zeros(1, fan_out));
            if i < last && spec.layer_norm {
                params.push(Matrix::filled(1, fan_out, 1.0));
                params.push(Matrix::zeros(1, fan_out));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Inserts the parameters into `g`, as variables when `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.variable(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let (_, width) = g.shape(x);
        if width != self.spec.input {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {width}",
                self.spec.input
            )));
        }
        let per = self.spec.params_per_hidden();
        let mut h = x;
        for layer in 0..self.spec.hidden.len() {
            let p = &params[layer * per..(layer + 1) * per];
            h = g.linear(h, p[0], p[1]);
            if self.spec.layer_norm {
                h = g.layer_norm(h, p[2], p[3], LAYER_NORM_EPS);
            }
            h = match self.spec.activation {
                Activation::LeakyRelu => g.leaky_relu(h, LEAKY_SLOPE),
                Activation::Relu => g.relu(h),
            };
        }
        let base = self.spec.hidden.len() * per;
        Ok(g.linear(h, params[base], params[base + 1]))
    }

    /// Forward pass with parameters bound as constants.
    pub fn evaluate(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xi)?;
        Ok(g.value(out).clone())
    }
}

/// The input gradient `∇_x net(x)` per row, as nodes that remain
/// differentiable with respect to the network parameters.
pub fn input_gradient(g: &mut Graph, net: &Mlp, params: &[NodeId], x: NodeId) -> Result<NodeId> {
    if net.spec.output != 1 {
        return Err(Error::Shape(format!(
            "input gradient needs a scalar-output network, got {} outputs",
            net.spec.output
        )));
    }
    let out = net.forward(g, params, x)?;
    let total = g.sum_all(out);
    Ok(g.grad(total, &[x])?[0])
}

/// Mean over rows of `(‖∇_x D(x)‖₂ − 1)²`.
pub fn gradient_penalty(g: &mut Graph, net: &Mlp, params: &[NodeId], x: NodeId) -> Result<NodeId> {
    let grad = input_gradient(g, net, params, x)?;
    let sq = g.square(grad);
    let ss = g.sum_cols(sq);
    // The offset keeps sqrt differentiable at a zero gradient.
    let ss = g.add_scalar(ss, 1e-24);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.square(dev);
    Ok(g.mean_all(dev2))
}

/// Standard Gumbel noise `-ln(-ln u)` with `u` drawn from the open unit interval.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.gen::<f64>().clamp(1e-300, 1.0 - 1e-16);
        -(-u.ln()).ln()
    })
}

/// Differentiable relaxed categorical sample per row: softmax((logits + g) / τ).
pub fn gumbel_softmax<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: NodeId,
    tau: f64,
    rng: &mut R,
) -> NodeId {
    let (r, c) = g.shape(logits);
    let noise = g.constant(gumbel_noise(rng, r, c));
    let perturbed = g.add(logits, noise);
    let scaled = g.scale(perturbed, 1.0 / tau);
    g.softmax_rows(scaled)
}

/// Gumbel-softmax of a single logit vector, outside any graph.
pub fn gumbel_softmax_vec<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    let noise = gumbel_noise(rng, 1, logits.len());
    softmax_tempered(logits, noise.data(), tau)
}

pub fn softmax_tempered(logits: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, n)| (l + n) / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Matrix]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            second: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (p, gr) in params.iter().zip(grads) {
            if p.shape() != gr.shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    gr.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, gr), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = gr.data()[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize) -> MlpSpec {
        MlpSpec {
            input,
            hidden: vec![8, 4],
            activation: Activation::LeakyRelu,
            layer_norm: true,
            output: 1,
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::init(
            MlpSpec {
                input: 100,
                hidden: vec![16],
                activation: Activation::Relu,
                layer_norm: false,
                output: 3,
            },
            &mut rng,
        )
        .unwrap();
        assert!(net.params[0].data().iter().all(|w| w.abs() <= 0.1));
        assert!(net.params[1].data().iter().all(|&b| b == 0.0));
        assert!(net.params[3].data().iter().all(|&b| b == 0.0));
        let again = Mlp::init(net.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn zero_width_rejected() {
        let mut s = spec(3);
        s.hidden = vec![0];
        assert!(Mlp::init(s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn forward_checks_input_width() {
        let net = Mlp::init(spec(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.evaluate(&Matrix::zeros(2, 4)).is_err());
        assert_eq!(net.evaluate(&Matrix::zeros(2, 3)).unwrap().shape(), (2, 1));
    }

    #[test]
    fn adam_first_step_matches_hand_calculation() {
        // m = 0.5 g, v = 0.01 g^2; bias corrected mhat = g, vhat = g^2.
        let cfg = AdamConfig::default();
        let g = 0.3;
        let mut p = vec![Matrix::scalar(1.0)];
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &[Matrix::scalar(g)]).unwrap();
        let expected = 1.0 - 2e-4 * g / (g.abs() + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_deterministic() {
        let init = vec![Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0])];
        let mut p = init.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.step(&mut p, &[Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(p, init);

        let run = || {
            let mut p = init.clone();
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for k in 0..5 {
                let gr = Matrix::from_vec(1, 3, vec![0.1 * k as f64, -0.2, 0.05]);
                st.step(&mut p, &[gr]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        assert!(st.step(&mut p, &[Matrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn gumbel_softmax_in_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y = gumbel_softmax_vec(&logits, 0.8, &mut rng);
            assert!(y.iter().all(|&v| v >= 0.0));
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(gumbel_softmax_vec(&[3.0], 0.8, &mut rng), vec![1.0]);
    }

    #[test]
    fn linear_critic_penalty_closed_form() {
        let w = Matrix::from_vec(3, 1, vec![0.3, -1.2, 0.4]);
        let net = Mlp {
            spec: MlpSpec {
                input: 3,
                hidden: vec![],
                activation: Activation::Relu,
                layer_norm: false,
                output: 1,
            },
            params: vec![w.clone(), Matrix::scalar(0.7)],
        };
        let mut g = Graph::new();
        let p = net.bind(&mut g, true);
        let x = g.variable(Matrix::from_fn(5, 3, |r, c| (r + c) as f64 * 0.1));
        let pen = gradient_penalty(&mut g, &net, &p, x).unwrap();
        let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((g.value(pen).item() - (norm - 1.0).powi(2)).abs() < 1e-12);
        let grads = g.backward(pen, &p).unwrap();
        for (i, wi) in w.data().iter().enumerate() {
            let want = 2.0 * (norm - 1.0) * wi / norm;
            assert!((grads[0].data()[i] - want).abs() < 1e-12);
        }
        assert_eq!(grads[1].item(), 0.0);
    }

    #[test]
    fn low_temperature_approaches_hard_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut agree = 0;
        for _ in 0..1000 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let noise = gumbel_noise(&mut rng, 1, 6);
            let y = softmax_tempered(&logits, noise.data(), 0.01);
            let perturbed: Vec<f64> = logits.iter().zip(noise.data()).map(|(l, g)| l + g).collect();
            let hard = argmax_of(&perturbed);
            if argmax_of(&y) == hard {
                agree += 1;
            }
        }
        assert!(agree >= 999, "{agree}");
    }

    fn argmax_of(v: &[f64]) -> usize {
        (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
    }
}
