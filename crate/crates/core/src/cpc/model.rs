use serde::{Deserialize, Serialize};

use super::loss::StepLogits;
use crate::autograd::{Gradients, Var};
use crate::encoders::{Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::nn::{Graph, GruLayer, Linear, Mode};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::Rng;

/// Shapes of a CPC network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpcArchitecture {
    pub encoder: EncoderSpec,
    pub input_channels: usize,
    pub context_dim: usize,
    pub gar_layers: usize,
    pub gar_dropout: f64,
    /// Number of future steps `K`, one prediction head each.
    pub horizon: usize,
    pub head_bias: bool,
}

impl CpcArchitecture {
    pub fn new(encoder: EncoderSpec, input_channels: usize, horizon: usize) -> Self {
        Self { encoder, input_channels, context_dim: 256, gar_layers: 2, gar_dropout: 0.2, horizon, head_bias: true }
    }
}

/// Stacked GRU summarizing latents into a context; tensors are `gar.layer{i}.*`.
#[derive(Debug, Clone)]
pub struct Autoregressive {
    pub layers: Vec<GruLayer>,
    pub dropout: f64,
}

impl Autoregressive {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, input: usize, hidden: usize, layers: usize, dropout: f64, rng: &mut Rng) -> Self {
        let mut inp = input;
        let layers = (0..layers)
            .map(|i| {
                let l = GruLayer::new(store, &format!("gar.layer{i}"), inp, hidden, rng);
                inp = hidden;
                l
            })
            .collect();
        Self { layers, dropout }
    }

    /// Top-layer hidden state after the first `steps` time-major rows of `x`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Var {
        let mut input = x;
        let last = self.layers.len() - 1;
        let mut top = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let outs = layer.forward(g, input, steps, batch);
            if i == last {
                top = *outs.last().expect("at least one step");
            } else {
                let seq = g.tape.concat_rows(&outs);
                input = g.dropout(seq, self.dropout);
            }
        }
        top
    }

    pub fn slots(&self) -> Vec<usize> {
        self.layers.iter().flat_map(GruLayer::slots).collect()
    }
}

/// Encoder, context network and `K` prediction heads over one parameter store.
#[derive(Debug, Clone)]
pub struct CpcModel<S: Scalar> {
    pub arch: CpcArchitecture,
    pub params: ParamStore<S>,
    pub encoder: Encoder,
    pub gar: Autoregressive,
    pub heads: Vec<Linear>,
}

impl<S: Scalar> CpcModel<S> {
    /// Fresh weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(arch: &CpcArchitecture, rng: &mut Rng) -> Result<Self> {
        if arch.horizon == 0 || arch.gar_layers == 0 || arch.context_dim == 0 {
            return Err(Error::InvalidArgument("horizon, context size and layer count must be positive".into()));
        }
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &arch.encoder, arch.input_channels, rng)?;
        let latent = encoder.latent_dim();
        let gar = Autoregressive::new(&mut params, latent, arch.context_dim, arch.gar_layers, arch.gar_dropout, rng);
        let heads = (1..=arch.horizon)
            .map(|j| Linear::new(&mut params, &format!("head{j}"), arch.context_dim, latent, arch.head_bias, rng))
            .collect();
        Ok(Self { arch: arch.clone(), params, encoder, gar, heads })
    }

    /// Layout for `arch` populated from `params`; every tensor must be present with matching dims.
    pub fn from_params(arch: &CpcArchitecture, params: &ParamStore<S>) -> Result<Self> {
        let mut model = Self::new(arch, &mut crate::nn::seeded_rng(0, 0))?;
        for e in model.params.entries() {
            let slot = params
                .slot(&e.name)
                .ok_or_else(|| Error::Shape(format!("tensor {} missing for this architecture", e.name)))?;
            if params.entry(slot).dims != e.dims {
                return Err(Error::Shape(format!("{}: dims {:?} != {:?}", e.name, params.entry(slot).dims, e.dims)));
            }
        }
        model.params.copy_from(params, |_| true);
        Ok(model)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    /// Scores every future step `1..=K` from anchor `t`.
    pub fn forward<'a>(
        &'a self,
        batch: &Matrix<S>,
        batch_size: usize,
        anchor: usize,
        mode: Mode,
        rng: Option<&'a mut Rng>,
    ) -> Result<CpcForward<'a, S>> {
        self.forward_steps(batch, batch_size, anchor, self.arch.horizon, mode, rng)
    }

    /// As [`forward`](Self::forward) but only the first `steps` heads take part.
    pub fn forward_steps<'a>(
        &'a self,
        batch: &Matrix<S>,
        batch_size: usize,
        anchor: usize,
        steps: usize,
        mode: Mode,
        rng: Option<&'a mut Rng>,
    ) -> Result<CpcForward<'a, S>> {
        let b = batch_size;
        if b < 2 {
            return Err(Error::InvalidArgument("a batch needs at least two windows to provide negatives".into()));
        }
        if !batch.rows().is_multiple_of(b) || batch.cols() != self.arch.input_channels {
            return Err(Error::Shape(format!(
                "batch {:?} is not [T*{b} x {}]",
                batch.shape(),
                self.arch.input_channels
            )));
        }
        if steps == 0 || steps > self.heads.len() {
            return Err(Error::InvalidArgument(format!("{steps} steps requested, model has {} heads", self.heads.len())));
        }
        let t_len = batch.rows() / b;
        if t_len <= self.arch.horizon || anchor + self.arch.horizon >= t_len {
            return Err(Error::InvalidArgument(format!(
                "anchor {anchor} with horizon {} does not fit a {t_len}-step window",
                self.arch.horizon
            )));
        }
        if mode == Mode::Train && rng.is_none() {
            return Err(Error::InvalidArgument("train mode needs a random source".into()));
        }
        let mut g = Graph::new(&self.params, mode, rng);
        let x = g.tape.constant(batch.clone());
        let z = self.encoder.forward(&mut g, x, t_len, b);
        let context = self.gar.forward(&mut g, z, anchor + 1, b);
        let targets: Vec<usize> = (0..b).collect();
        let mut logits = Vec::with_capacity(steps);
        let mut losses = Vec::with_capacity(steps);
        for (j, head) in self.heads.iter().take(steps).enumerate() {
            let pred = head.forward(&mut g, context);
            let future = g.tape.slice_rows(z, (anchor + j + 1) * b, b);
            let scores = g.tape.matmul(pred, false, future, true);
            losses.push(g.tape.cross_entropy(scores, &targets));
            logits.push(scores);
        }
        let total = g.tape.sum_scalars(&losses);
        let loss = g.tape.scale(total, S::cast(1.0 / steps as f64));
        Ok(CpcForward { graph: g, logits, context, loss })
    }
}

/// A recorded forward pass.
pub struct CpcForward<'a, S: Scalar> {
    graph: Graph<'a, S>,
    logits: Vec<Var>,
    context: Var,
    loss: Var,
}

impl<S: Scalar> CpcForward<'_, S> {
    pub fn loss(&self) -> S {
        self.graph.tape.value(self.loss).get(0, 0)
    }

    pub fn step_logits(&self) -> StepLogits<S> {
        StepLogits(self.logits.iter().map(|&v| self.graph.tape.value(v).clone()).collect())
    }

    /// Context vectors `[B x context_dim]` at the anchor.
    pub fn contexts(&self) -> &Matrix<S> {
        self.graph.tape.value(self.context)
    }

    /// Reverse-mode gradients for every encoder, context and head tensor.
    pub fn backward(&self) -> Result<Gradients<S>> {
        self.graph.tape.backward(self.loss)
    }

    /// Gradients of `factor * loss`.
    pub fn backward_scaled(&mut self, factor: S) -> Result<Gradients<S>> {
        let scaled = self.graph.tape.scale(self.loss, factor);
        self.graph.tape.backward(scaled)
    }
}
