//! Central finite-difference checks of graph gradients, shared by the
//! gradient tests and the acceptance harness.

use castgan::nn::{gradient_penalty, Activation, Mlp, MlpSpec};
use castgan::tensor::{Graph, Matrix, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Relative error with a floor on the scale so that gradients that are
/// zero on both sides compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Largest relative error between backprop and central differences over
/// every entry of every input. `build` maps input nodes to a scalar.
pub fn check(inputs: &[Matrix], build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let eval = |xs: &[Matrix]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out, &ids).expect("scalar output");
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = x.data()[i] + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x.data()[i] - STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_error(grads[k].data()[i], numeric));
        }
    }
    worst
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Weighted sum `Σ c ⊙ y` that turns any output into a generic scalar.
pub fn project(g: &mut Graph, y: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(&mut rng, r, c, -1.0, 1.0));
    let p = g.mul(y, w);
    g.sum_all(p)
}

/// Named per-operation checks; each returns its worst relative error.
pub fn layer_checks() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&mut rng, 4, 5, -2.0, 2.0);
    let pos = random(&mut rng, 4, 5, 0.5, 3.0);
    let w = random(&mut rng, 5, 3, -1.0, 1.0);
    let b = random(&mut rng, 1, 3, -1.0, 1.0);
    let gain = random(&mut rng, 1, 5, 0.5, 1.5);
    let beta = random(&mut rng, 1, 5, -0.5, 0.5);
    let mut out = Vec::new();
    out.push(("linear", check(&[x.clone(), w.clone(), b.clone()], &|g, v| {
        let y = g.linear(v[0], v[1], v[2]);
        project(g, y, 1)
    })));
    out.push(("matmul_transposed", check(&[w.clone(), x.clone()], &|g, v| {
        let y = g.matmul_t(v[0], v[1], true, true);
        project(g, y, 2)
    })));
    out.push(("leaky_relu", check(&[x.clone()], &|g, v| {
        let y = g.leaky_relu(v[0], 0.01);
        project(g, y, 3)
    })));
    out.push(("relu", check(&[x.clone()], &|g, v| {
        let y = g.relu(v[0]);
        project(g, y, 4)
    })));
    out.push(("tanh", check(&[x.clone()], &|g, v| {
        let y = g.tanh(v[0]);
        project(g, y, 5)
    })));
    out.push(("layer_norm", check(&[x.clone(), gain, beta], &|g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
        project(g, y, 6)
    })));
    out.push(("softmax_rows", check(&[x.clone()], &|g, v| {
        let y = g.softmax_rows(v[0]);
        project(g, y, 7)
    })));
    out.push(("gumbel_softmax", check(&[x.clone()], &|g, v| {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let y = castgan::nn::gumbel_softmax(g, v[0], 0.8, &mut r);
        project(g, y, 8)
    })));
    out.push(("exp_log_sqrt", check(&[pos.clone()], &|g, v| {
        let a = g.exp(v[0]);
        let l = g.log(v[0]);
        let s = g.sqrt(v[0]);
        let t = g.add(a, l);
        let y = g.mul(t, s);
        project(g, y, 9)
    })));
    out.push(("div_square", check(&[x.clone(), pos.clone()], &|g, v| {
        let q = g.div(v[0], v[1]);
        let y = g.square(q);
        project(g, y, 10)
    })));
    out.push(("reductions_broadcasts", check(&[x.clone()], &|g, v| {
        let rs = g.sum_rows(v[0]);
        let cs = g.sum_cols(v[0]);
        let a = g.broadcast_rows(rs, 4);
        let b = g.broadcast_cols(cs, 5);
        let y = g.mul(a, b);
        let m = g.mean_all(y);
        let p = project(g, y, 11);
        g.add(p, m)
    })));
    out.push(("slice_concat_pad", check(&[x.clone()], &|g, v| {
        let a = g.slice_cols(v[0], 1, 2);
        let b = g.slice_cols(v[0], 3, 2);
        let c = g.concat_cols(&[b, a, v[0]]);
        let p = g.pad_cols(a, 2, 6);
        let y = g.concat_cols(&[c, p]);
        project(g, y, 12)
    })));
    out
}

pub fn mlp(input: usize, hidden: Vec<usize>, activation: Activation, layer_norm: bool, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(MlpSpec { input, hidden, activation, layer_norm, output: 1 }, &mut rng).unwrap();
    // Non-trivial biases and layer-norm parameters.
    for p in &mut net.params {
        if p.rows() == 1 {
            for v in p.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    net
}

/// Parameter and input gradients of a two-hidden-layer MLP loss.
pub fn mlp_check(activation: Activation, layer_norm: bool, seed: u64) -> f64 {
    let net = mlp(6, vec![16, 12], activation, layer_norm, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = random(&mut rng, 5, 6, -1.5, 1.5);
    let mut inputs = net.params.clone();
    inputs.push(x);
    check(&inputs, &|g, v| {
        let (params, x) = v.split_at(v.len() - 1);
        let y = net.forward(g, params, x[0]).unwrap();
        let t = g.tanh(y);
        project(g, t, 13)
    })
}

/// Parameter gradients of the gradient penalty on a small critic.
pub fn penalty_check(activation: Activation, layer_norm: bool, seed: u64) -> f64 {
    let net = mlp(5, vec![12, 8], activation, layer_norm, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let x = random(&mut rng, 6, 5, -1.5, 1.5);
    check(&net.params, &|g, v| {
        let xi = g.variable(x.clone());
        gradient_penalty(g, &net, v, xi).unwrap()
    })
}
