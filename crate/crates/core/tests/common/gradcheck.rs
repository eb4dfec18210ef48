//! Central finite differences against reverse-mode gradients on tiny CPC models.

use cpc_core::cpc::{CpcArchitecture, CpcModel};
use cpc_core::encoders::EncoderSpec;
use cpc_core::nn::{seeded_rng, Mode};
use cpc_core::params::{flat_gradient, ParamKind};
use cpc_core::Matrix;
use rand::Rng as _;

pub const B: usize = 3;
pub const T: usize = 8;
pub const K: usize = 2;
pub const C: usize = 2;
pub const H: f64 = 1e-6;

pub fn tiny(encoder: EncoderSpec) -> CpcArchitecture {
    CpcArchitecture {
        encoder,
        input_channels: C,
        context_dim: 4,
        gar_layers: 2,
        gar_dropout: 0.2,
        horizon: K,
        head_bias: true,
    }
}

pub fn batch(seed: u64) -> Matrix<f64> {
    let mut rng = seeded_rng(seed, 77);
    Matrix::from_fn(T * B, C, |_, _| rng.random_range(-1.5..1.5))
}

pub fn loss(model: &CpcModel<f64>, x: &Matrix<f64>, anchor: usize) -> f64 {
    model.forward(x, B, anchor, Mode::Eval, None).unwrap().loss()
}

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
pub fn max_relative_error(arch: &CpcArchitecture, seed: u64) -> (f64, usize) {
    let mut model = CpcModel::<f64>::new(arch, &mut seeded_rng(seed, 1)).unwrap();
    let x = batch(seed);
    let anchor = 3;
    let fwd = model.forward(&x, B, anchor, Mode::Eval, None).unwrap();
    let analytic = flat_gradient(&model.params, &fwd.backward().unwrap());
    drop(fwd);

    let mut numeric = Vec::with_capacity(analytic.len());
    for slot in 0..model.params.len() {
        if model.params.entry(slot).kind != ParamKind::Trainable {
            continue;
        }
        for i in 0..model.params.value(slot).len() {
            let orig = model.params.value(slot).as_slice()[i];
            model.params.value_mut(slot).as_mut_slice()[i] = orig + H;
            let up = loss(&model, &x, anchor);
            model.params.value_mut(slot).as_mut_slice()[i] = orig - H;
            let down = loss(&model, &x, anchor);
            model.params.value_mut(slot).as_mut_slice()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max);
    (worst, analytic.len())
}

pub fn small(mut spec: EncoderSpec) -> EncoderSpec {
    spec.layer_widths = vec![3, 3, 4];
    spec.hidden = 4;
    spec
}

