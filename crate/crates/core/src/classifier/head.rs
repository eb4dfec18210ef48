use crate::autograd::Var;
use crate::nn::{BatchNorm1d, Graph, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::Rng;

/// `input -> 256 -> 128 -> classes`, with batch norm, ReLU and dropout after
/// each hidden layer. Tensors are `clf.layer{i}.*` and `clf.bn{i}.*`.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm1d>,
    pub dropout: f64,
}

impl ClassifierHead {
    pub const HIDDEN: [usize; 2] = [256, 128];

    pub fn new<S: Scalar>(store: &mut ParamStore<S>, input: usize, num_classes: usize, dropout: f64, rng: &mut Rng) -> Self {
        let widths = [Self::HIDDEN[0], Self::HIDDEN[1], num_classes];
        let mut inp = input;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("clf.layer{i}"), inp, w, true, rng));
            if i + 1 < widths.len() {
                norms.push(BatchNorm1d::new(store, &format!("clf.bn{i}"), w));
            }
            inp = w;
        }
        Self { layers, norms, dropout }
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    /// Logits `[B x classes]` for features `[B x input]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if let Some(bn) = self.norms.get(i) {
                h = bn.forward(g, h);
                h = g.tape.relu(h);
                h = g.dropout(h, self.dropout);
            }
        }
        h
    }

    pub fn slots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().flat_map(Linear::slots).collect();
        for bn in &self.norms {
            s.extend([bn.gamma, bn.beta, bn.running_mean, bn.running_var]);
        }
        s
    }
}
