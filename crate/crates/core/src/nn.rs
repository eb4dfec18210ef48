//! Layers built on the tape. All sequences are time-major: row `t*batch + b`
//! holds timestep `t` of window `b`.

use rand::Rng as _;

use crate::autograd::{Tape, Var};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a tape plus the parameter bindings used on it.
pub struct Graph<'a, S: Scalar> {
    pub tape: Tape<S>,
    params: &'a ParamStore<S>,
    bound: Vec<Option<Var>>,
    trainable: Vec<bool>,
    pub mode: Mode,
    rng: Option<&'a mut Rng>,
    buffer_updates: Vec<(usize, Matrix<S>)>,
}

impl<'a, S: Scalar> Graph<'a, S> {
    /// Every trainable tensor in `params` receives gradients.
    pub fn new(params: &'a ParamStore<S>, mode: Mode, rng: Option<&'a mut Rng>) -> Self {
        let trainable = params.entries().iter().map(|e| e.kind == ParamKind::Trainable).collect();
        Self::with_trainable(params, trainable, mode, rng)
    }

    pub fn with_trainable(params: &'a ParamStore<S>, trainable: Vec<bool>, mode: Mode, rng: Option<&'a mut Rng>) -> Self {
        assert_eq!(trainable.len(), params.len());
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            trainable,
            mode,
            rng,
            buffer_updates: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamStore<S> {
        self.params
    }

    /// Binds a parameter slot to the tape (once per pass).
    pub fn p(&mut self, slot: usize) -> Var {
        if let Some(v) = self.bound[slot] {
            return v;
        }
        let value = self.params.value(slot).clone();
        let v = if self.trainable[slot] { self.tape.param(slot, value) } else { self.tape.constant(value) };
        self.bound[slot] = Some(v);
        v
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if self.mode == Mode::Eval || p <= 0.0 {
            return x;
        }
        let rng = self.rng.as_deref_mut().expect("train-mode dropout needs a random source");
        let (rows, cols) = self.tape.value(x).shape();
        let keep = S::cast(1.0 / (1.0 - p));
        let mask = Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { S::zero() } else { keep });
        self.tape.mask_mul(x, mask)
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(usize, Matrix<S>)> {
        std::mem::take(&mut self.buffer_updates)
    }
}

fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, input: usize, output: usize, bias: bool, rng: &mut Rng) -> Self {
        let b = bound(input);
        let weight = store.add_uniform(&format!("{prefix}.weight"), &[output, input], b, rng);
        let bias = bias.then(|| store.add_uniform(&format!("{prefix}.bias"), &[output], b, rng));
        Self { weight, bias, input, output }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let w = g.p(self.weight);
        let y = g.tape.matmul(x, false, w, true);
        match self.bias {
            Some(b) => {
                let bv = g.p(b);
                g.tape.add_row(y, bv)
            }
            None => y,
        }
    }

    pub fn slots(&self) -> Vec<usize> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stride-1 convolution over time with reflect padding (odd kernels only).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: usize,
    pub bias: usize,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, input: usize, output: usize, kernel: usize, rng: &mut Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let b = bound(input * kernel);
        let weight = store.add_uniform(&format!("{prefix}.weight"), &[output, input, kernel], b, rng);
        let bias = store.add_uniform(&format!("{prefix}.bias"), &[output], b, rng);
        Self { weight, bias, input, output, kernel }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Var {
        let cols = g.tape.im2col_reflect(x, steps, batch, self.kernel);
        let w = g.p(self.weight);
        let y = g.tape.matmul(cols, false, w, true);
        let b = g.p(self.bias);
        g.tape.add_row(y, b)
    }

    pub fn slots(&self) -> Vec<usize> {
        vec![self.weight, self.bias]
    }
}

/// Gated recurrent layer; gate blocks are ordered reset | update | new.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub weight_ih: usize,
    pub weight_hh: usize,
    pub bias_ih: usize,
    pub bias_hh: usize,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let b = bound(hidden);
        Self {
            weight_ih: store.add_uniform(&format!("{prefix}.weight_ih"), &[3 * hidden, input], b, rng),
            weight_hh: store.add_uniform(&format!("{prefix}.weight_hh"), &[3 * hidden, hidden], b, rng),
            bias_ih: store.add_uniform(&format!("{prefix}.bias_ih"), &[3 * hidden], b, rng),
            bias_hh: store.add_uniform(&format!("{prefix}.bias_hh"), &[3 * hidden], b, rng),
            input,
            hidden,
        }
    }

    /// Runs over `steps` time-major rows of `x`; returns each step's hidden state `[batch x hidden]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Vec<Var> {
        let h = self.hidden;
        let w_ih = g.p(self.weight_ih);
        let b_ih = g.p(self.bias_ih);
        let w_hh = g.p(self.weight_hh);
        let b_hh = g.p(self.bias_hh);
        let xs = g.tape.slice_rows(x, 0, steps * batch);
        let gi_all = g.tape.matmul(xs, false, w_ih, true);
        let gi_all = g.tape.add_row(gi_all, b_ih);
        let mut state = g.tape.constant(Matrix::zeros(batch, h));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = g.tape.slice_rows(gi_all, t * batch, batch);
            let gh = g.tape.matmul(state, false, w_hh, true);
            let gh = g.tape.add_row(gh, b_hh);
            let (i_r, i_z, i_n) = split3(g, gi, h);
            let (h_r, h_z, h_n) = split3(g, gh, h);
            let r = g.tape.add(i_r, h_r);
            let r = g.tape.sigmoid(r);
            let z = g.tape.add(i_z, h_z);
            let z = g.tape.sigmoid(z);
            let rn = g.tape.mul(r, h_n);
            let n = g.tape.add(i_n, rn);
            let n = g.tape.tanh(n);
            // h' = n + z * (h - n)
            let diff = g.tape.sub(state, n);
            let gated = g.tape.mul(z, diff);
            state = g.tape.add(n, gated);
            outputs.push(state);
        }
        outputs
    }

    pub fn slots(&self) -> Vec<usize> {
        vec![self.weight_ih, self.weight_hh, self.bias_ih, self.bias_hh]
    }
}

fn split3<S: Scalar>(g: &mut Graph<'_, S>, v: Var, h: usize) -> (Var, Var, Var) {
    (g.tape.slice_cols(v, 0, h), g.tape.slice_cols(v, h, h), g.tape.slice_cols(v, 2 * h, h))
}

/// Long short-term memory layer; gate blocks are ordered input | forget | cell | output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub weight_ih: usize,
    pub weight_hh: usize,
    pub bias_ih: usize,
    pub bias_hh: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let b = bound(hidden);
        Self {
            weight_ih: store.add_uniform(&format!("{prefix}.weight_ih"), &[4 * hidden, input], b, rng),
            weight_hh: store.add_uniform(&format!("{prefix}.weight_hh"), &[4 * hidden, hidden], b, rng),
            bias_ih: store.add_uniform(&format!("{prefix}.bias_ih"), &[4 * hidden], b, rng),
            bias_hh: store.add_uniform(&format!("{prefix}.bias_hh"), &[4 * hidden], b, rng),
            input,
            hidden,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Vec<Var> {
        let h = self.hidden;
        let w_ih = g.p(self.weight_ih);
        let b_ih = g.p(self.bias_ih);
        let w_hh = g.p(self.weight_hh);
        let b_hh = g.p(self.bias_hh);
        let xs = g.tape.slice_rows(x, 0, steps * batch);
        let gi_all = g.tape.matmul(xs, false, w_ih, true);
        let gi_all = g.tape.add_row(gi_all, b_ih);
        let mut hidden = g.tape.constant(Matrix::zeros(batch, h));
        let mut cell = g.tape.constant(Matrix::zeros(batch, h));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = g.tape.slice_rows(gi_all, t * batch, batch);
            let gh = g.tape.matmul(hidden, false, w_hh, true);
            let gh = g.tape.add_row(gh, b_hh);
            let gates = g.tape.add(gi, gh);
            let i = g.tape.slice_cols(gates, 0, h);
            let i = g.tape.sigmoid(i);
            let f = g.tape.slice_cols(gates, h, h);
            let f = g.tape.sigmoid(f);
            let c = g.tape.slice_cols(gates, 2 * h, h);
            let c = g.tape.tanh(c);
            let o = g.tape.slice_cols(gates, 3 * h, h);
            let o = g.tape.sigmoid(o);
            let keep = g.tape.mul(f, cell);
            let write = g.tape.mul(i, c);
            cell = g.tape.add(keep, write);
            let squashed = g.tape.tanh(cell);
            hidden = g.tape.mul(o, squashed);
            outputs.push(hidden);
        }
        outputs
    }

    pub fn slots(&self) -> Vec<usize> {
        vec![self.weight_ih, self.weight_hh, self.bias_ih, self.bias_hh]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.add_filled(&format!("{prefix}.gamma"), &[width], ParamKind::Trainable, 1.0),
            beta: store.add_filled(&format!("{prefix}.beta"), &[width], ParamKind::Trainable, 0.0),
            running_mean: store.add_filled(&format!("{prefix}.running_mean"), &[width], ParamKind::Buffer, 0.0),
            running_var: store.add_filled(&format!("{prefix}.running_var"), &[width], ParamKind::Buffer, 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Train mode normalizes with batch statistics and queues a running-average
    /// update; eval mode uses the stored running estimates.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let gamma = g.p(self.gamma);
        let beta = g.p(self.beta);
        let eps = S::cast(self.eps);
        if g.mode == Mode::Eval {
            let rm = g.params().value(self.running_mean).as_slice().to_vec();
            let rv = g.params().value(self.running_var).as_slice().to_vec();
            return g.tape.batch_norm(x, gamma, beta, eps, Some((&rm, &rv))).0;
        }
        let n = g.tape.value(x).rows();
        let (y, mean, var) = g.tape.batch_norm(x, gamma, beta, eps, None);
        let m = S::cast(self.momentum);
        let unbias = if n > 1 { S::cast(n as f64 / (n as f64 - 1.0)) } else { S::one() };
        let rm = g.params().value(self.running_mean);
        let rv = g.params().value(self.running_var);
        let new_mean = Matrix::from_fn(1, mean.len(), |_, c| (S::one() - m) * rm.get(0, c) + m * mean[c]);
        let new_var = Matrix::from_fn(1, var.len(), |_, c| (S::one() - m) * rv.get(0, c) + m * var[c] * unbias);
        g.buffer_updates.push((self.running_mean, new_mean));
        g.buffer_updates.push((self.running_var, new_var));
        y
    }

    pub fn trainable_slots(&self) -> Vec<usize> {
        vec![self.gamma, self.beta]
    }
}

/// Random source for a given seed and stream tag.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gru_matches_hand_computed_single_unit() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(1, 0);
        let layer = GruLayer::new(&mut store, "g", 1, 1, &mut rng);
        for (slot, vals) in [
            (layer.weight_ih, vec![0.5, -0.3, 0.8]),
            (layer.weight_hh, vec![0.1, 0.2, -0.4]),
            (layer.bias_ih, vec![0.05, -0.1, 0.2]),
            (layer.bias_hh, vec![0.0, 0.3, -0.2]),
        ] {
            store.value_mut(slot).as_mut_slice().copy_from_slice(&vals);
        }
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = 0.0f64;
        let xs = [1.0, -2.0];
        for &x in &xs {
            let r = sig(0.5 * x + 0.05 + 0.1 * h + 0.0);
            let z = sig(-0.3 * x - 0.1 + 0.2 * h + 0.3);
            let n = (0.8 * x + 0.2 + r * (-0.4 * h - 0.2)).tanh();
            h = (1.0 - z) * n + z * h;
        }
        let mut g = Graph::new(&store, Mode::Eval, None);
        let x = g.tape.constant(Matrix::from_vec(2, 1, xs.to_vec()));
        let out = layer.forward(&mut g, x, 2, 1);
        assert!((g.tape.value(out[1]).get(0, 0) - h).abs() < 1e-14);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store, Mode::Eval, None);
        let x = g.tape.constant(Matrix::filled(3, 3, 2.0));
        let y = g.dropout(x, 0.5);
        assert_eq!(x, y);
    }
}
