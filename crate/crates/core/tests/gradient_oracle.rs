//! Central finite differences against reverse-mode gradients on tiny CPC models.

mod common;

use common::gradcheck::{batch, max_relative_error, small, tiny, B};
use cpc_core::cpc::CpcModel;
use cpc_core::encoders::{EncoderSpec, RecurrentCell};
use cpc_core::nn::{seeded_rng, Mode};
use cpc_core::params::flat_gradient;

#[test]
fn conv_encoder_gradients_match_finite_differences() {
    let (err, n) = max_relative_error(&tiny(small(EncoderSpec::conv1d(3))), 5);
    assert!(n <= 500, "{n} parameters");
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn fully_connected_encoder_gradients_match_finite_differences() {
    let (err, n) = max_relative_error(&tiny(small(EncoderSpec::fully_connected())), 6);
    assert!(n <= 500, "{n} parameters");
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn recurrent_encoder_gradients_match_finite_differences() {
    for cell in [RecurrentCell::Gru, RecurrentCell::Lstm] {
        let (err, n) = max_relative_error(&tiny(small(EncoderSpec::recurrent(cell))), 7);
        assert!(n <= 500, "{n} parameters");
        assert!(err < 1e-5, "{cell:?}: max relative error {err:e}");
    }
}

#[test]
fn unused_head_has_exactly_zero_gradient() {
    let arch = tiny(small(EncoderSpec::conv1d(3)));
    let model = CpcModel::<f64>::new(&arch, &mut seeded_rng(1, 1)).unwrap();
    let x = batch(1);
    let fwd = model.forward_steps(&x, B, 2, 1, Mode::Eval, None).unwrap();
    let g = fwd.backward().unwrap();
    for slot in model.heads[1].slots() {
        assert!(g.get(slot).is_none_or(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }
    assert!(g.get(model.heads[0].weight).unwrap().max_abs() > 0.0);
}

#[test]
fn doubling_the_loss_doubles_every_gradient() {
    let arch = tiny(small(EncoderSpec::conv1d(3)));
    let model = CpcModel::<f64>::new(&arch, &mut seeded_rng(2, 1)).unwrap();
    let x = batch(2);
    let mut fwd = model.forward(&x, B, 1, Mode::Eval, None).unwrap();
    let once = flat_gradient(&model.params, &fwd.backward().unwrap());
    let twice = flat_gradient(&model.params, &fwd.backward_scaled(2.0).unwrap());
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
}
