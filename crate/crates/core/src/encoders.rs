//! Window encoders mapping `[T x C]` inputs to `[T x D]` latent sequences.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Graph, GruLayer, Linear, LstmLayer, Mode};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    FullyConnected,
    Conv1d,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentCell {
    Lstm,
    Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    pub layer_widths: Vec<usize>,
    pub kernel_size: usize,
    pub cell: RecurrentCell,
    pub hidden: usize,
    pub dropout_p: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            family: EncoderFamily::Conv1d,
            layer_widths: vec![32, 64, 128],
            kernel_size: 3,
            cell: RecurrentCell::Gru,
            hidden: 128,
            dropout_p: 0.2,
        }
    }
}

impl EncoderSpec {
    pub fn conv1d(kernel_size: usize) -> Self {
        Self { kernel_size, ..Self::default() }
    }

    pub fn fully_connected() -> Self {
        Self { family: EncoderFamily::FullyConnected, ..Self::default() }
    }

    pub fn recurrent(cell: RecurrentCell) -> Self {
        Self { family: EncoderFamily::Recurrent, cell, ..Self::default() }
    }

    /// Short label used in reports, e.g. `conv_k3` or `rnn_gru`.
    pub fn label(&self) -> String {
        match self.family {
            EncoderFamily::FullyConnected => "fc".into(),
            EncoderFamily::Conv1d => format!("conv_k{}", self.kernel_size),
            EncoderFamily::Recurrent => match self.cell {
                RecurrentCell::Lstm => "rnn_lstm".into(),
                RecurrentCell::Gru => "rnn_gru".into(),
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self.family {
            EncoderFamily::Recurrent => self.hidden,
            _ => self.layer_widths.last().copied().unwrap_or(0),
        }
    }

    pub fn num_layers(&self) -> usize {
        match self.family {
            EncoderFamily::Recurrent => 1,
            _ => self.layer_widths.len(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..1.0).contains(&self.dropout_p) {
            v.push(format!("encoder dropout {} outside [0, 1)", self.dropout_p));
        }
        match self.family {
            EncoderFamily::Recurrent => {
                if self.hidden == 0 {
                    v.push("recurrent hidden size must be positive".into());
                }
            }
            _ => {
                if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
                    v.push("encoder layer widths must be non-empty and positive".into());
                }
                if self.family == EncoderFamily::Conv1d && self.kernel_size.is_multiple_of(2) {
                    v.push(format!("conv kernel size {} must be odd", self.kernel_size));
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceptiveField {
    Finite(usize),
    /// Output at step `t` sees every input up to and including `t`.
    UnboundedCausal,
}

/// Number of input timesteps one latent step can see.
pub fn receptive_field(spec: &EncoderSpec) -> ReceptiveField {
    match spec.family {
        EncoderFamily::FullyConnected => ReceptiveField::Finite(1),
        EncoderFamily::Conv1d => ReceptiveField::Finite(1 + spec.layer_widths.len() * (spec.kernel_size - 1)),
        EncoderFamily::Recurrent => ReceptiveField::UnboundedCausal,
    }
}

#[derive(Debug, Clone)]
enum Layers {
    Dense(Vec<Linear>),
    Conv(Vec<Conv1d>),
    Gru(GruLayer),
    Lstm(LstmLayer),
}

/// Parameter layout of an encoder inside a [`ParamStore`]; tensors are named
/// `enc.layer{i}.*`.
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    input_channels: usize,
    layers: Layers,
}

impl Encoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, spec: &EncoderSpec, input_channels: usize, rng: &mut Rng) -> Result<Self> {
        let problems = spec.validate();
        if !problems.is_empty() {
            return Err(Error::InvalidArgument(problems.join("; ")));
        }
        let layers = match spec.family {
            EncoderFamily::FullyConnected => {
                let mut inp = input_channels;
                let mut out = Vec::new();
                for (i, &w) in spec.layer_widths.iter().enumerate() {
                    out.push(Linear::new(store, &format!("enc.layer{i}"), inp, w, true, rng));
                    inp = w;
                }
                Layers::Dense(out)
            }
            EncoderFamily::Conv1d => {
                let mut inp = input_channels;
                let mut out = Vec::new();
                for (i, &w) in spec.layer_widths.iter().enumerate() {
                    out.push(Conv1d::new(store, &format!("enc.layer{i}"), inp, w, spec.kernel_size, rng));
                    inp = w;
                }
                Layers::Conv(out)
            }
            EncoderFamily::Recurrent => match spec.cell {
                RecurrentCell::Gru => Layers::Gru(GruLayer::new(store, "enc.layer0", input_channels, spec.hidden, rng)),
                RecurrentCell::Lstm => Layers::Lstm(LstmLayer::new(store, "enc.layer0", input_channels, spec.hidden, rng)),
            },
        };
        Ok(Self { spec: spec.clone(), input_channels, layers })
    }

    /// Re-derives the layout from an existing store, checking every shape.
    pub fn bind<S: Scalar>(store: &ParamStore<S>, spec: &EncoderSpec, input_channels: usize) -> Result<Self> {
        let mut scratch = ParamStore::<S>::new();
        let mut rng = crate::nn::seeded_rng(0, 0);
        let layout = Self::new(&mut scratch, spec, input_channels, &mut rng)?;
        let mut remap = Vec::with_capacity(scratch.len());
        for e in scratch.entries() {
            let slot = store
                .slot(&e.name)
                .ok_or_else(|| Error::Shape(format!("parameter {} missing for encoder spec", e.name)))?;
            if store.entry(slot).dims != e.dims {
                return Err(Error::Shape(format!(
                    "{}: expected dims {:?}, found {:?}",
                    e.name,
                    e.dims,
                    store.entry(slot).dims
                )));
            }
            remap.push(slot);
        }
        Ok(layout.remapped(&remap))
    }

    fn remapped(mut self, remap: &[usize]) -> Self {
        let m = |s: &mut usize| *s = remap[*s];
        match &mut self.layers {
            Layers::Dense(ls) => ls.iter_mut().for_each(|l| {
                m(&mut l.weight);
                l.bias.iter_mut().for_each(m);
            }),
            Layers::Conv(ls) => ls.iter_mut().for_each(|l| {
                m(&mut l.weight);
                m(&mut l.bias);
            }),
            Layers::Gru(l) => [&mut l.weight_ih, &mut l.weight_hh, &mut l.bias_ih, &mut l.bias_hh].into_iter().for_each(m),
            Layers::Lstm(l) => [&mut l.weight_ih, &mut l.weight_hh, &mut l.bias_ih, &mut l.bias_hh].into_iter().for_each(m),
        }
        self
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn num_layers(&self) -> usize {
        self.spec.num_layers()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    /// Feature width after the first `n` layers (`n = 0` is the raw input).
    pub fn width_after(&self, n: usize) -> usize {
        if n == 0 {
            return self.input_channels;
        }
        match self.spec.family {
            EncoderFamily::Recurrent => self.spec.hidden,
            _ => self.spec.layer_widths[n - 1],
        }
    }

    /// Parameter slots owned by layer `i`.
    pub fn layer_slots(&self, i: usize) -> Vec<usize> {
        match &self.layers {
            Layers::Dense(ls) => ls[i].slots(),
            Layers::Conv(ls) => ls[i].slots(),
            Layers::Gru(l) => l.slots(),
            Layers::Lstm(l) => l.slots(),
        }
    }

    pub fn slots(&self) -> Vec<usize> {
        (0..self.num_layers()).flat_map(|i| self.layer_slots(i)).collect()
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Var {
        self.forward_layers(g, x, steps, batch, 0..self.num_layers())
    }

    /// Applies layers in `range` to a time-major `[steps*batch x width]` input.
    pub fn forward_layers<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        x: Var,
        steps: usize,
        batch: usize,
        range: std::ops::Range<usize>,
    ) -> Var {
        let p = self.spec.dropout_p;
        let mut h = x;
        match &self.layers {
            Layers::Dense(ls) => {
                let last = ls.len() - 1;
                for i in range {
                    h = ls[i].forward(g, h);
                    if i < last {
                        h = g.tape.relu(h);
                        h = g.dropout(h, p);
                    }
                }
            }
            Layers::Conv(ls) => {
                for i in range {
                    h = ls[i].forward(g, h, steps, batch);
                    h = g.tape.relu(h);
                    h = g.dropout(h, p);
                }
            }
            Layers::Gru(l) => {
                if !range.is_empty() {
                    let outs = l.forward(g, h, steps, batch);
                    h = g.tape.concat_rows(&outs);
                    h = g.dropout(h, p);
                }
            }
            Layers::Lstm(l) => {
                if !range.is_empty() {
                    let outs = l.forward(g, h, steps, batch);
                    h = g.tape.concat_rows(&outs);
                    h = g.dropout(h, p);
                }
            }
        }
        h
    }
}

/// Latent sequence `[T x D]` for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<S> {
    pub values: Matrix<S>,
}

/// Encodes a single `[T x C]` window with the encoder tensors found in `params`.
pub fn encode<S: Scalar>(
    spec: &EncoderSpec,
    params: &ParamStore<S>,
    window: &Matrix<S>,
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<LatentSequence<S>> {
    if window.rows() == 0 {
        return Err(Error::Shape("window has no timesteps".into()));
    }
    let encoder = Encoder::bind(params, spec, window.cols())?;
    if mode == Mode::Train && rng.is_none() && spec.dropout_p > 0.0 {
        return Err(Error::InvalidArgument("train-mode encoding needs a random source".into()));
    }
    let mut g = Graph::new(params, mode, rng);
    // batch of one: time-major rows coincide with the window rows
    let x = g.tape.constant(window.clone());
    let z = encoder.forward(&mut g, x, window.rows(), 1);
    Ok(LatentSequence { values: g.tape.value(z).clone() })
}
