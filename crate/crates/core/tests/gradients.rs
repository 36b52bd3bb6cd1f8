mod common;

use castgan::nn::Activation;
use common::gradcheck::{layer_checks, mlp_check, penalty_check};

#[test]
fn every_layer_matches_central_differences() {
    for (name, err) in layer_checks() {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn mlp_parameter_and_input_gradients_match_central_differences() {
    for (act, ln) in [(Activation::LeakyRelu, true), (Activation::Relu, true), (Activation::LeakyRelu, false)] {
        for seed in 0..3 {
            let err = mlp_check(act, ln, seed);
            assert!(err < 1e-4, "{act:?} layer_norm={ln} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn penalty_parameter_gradients_match_central_differences() {
    for (act, ln) in [(Activation::Relu, true), (Activation::LeakyRelu, true), (Activation::Relu, false)] {
        for seed in 0..3 {
            let err = penalty_check(act, ln, seed);
            assert!(err < 1e-3, "{act:?} layer_norm={ln} seed {seed}: {err:e}");
        }
    }
}
