use serde::{Deserialize, Serialize};

use super::head::ClassifierHead;
use super::train::FinetuneConfig;
use super::FreezePolicy;
use crate::autograd::Var;
use crate::checkpoint::Checkpoint;
use crate::cpc::{Autoregressive, CpcArchitecture};
use crate::data::WindowDataset;
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Graph, Mode};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::{argmax, Scalar};
use crate::tensor::Matrix;
use crate::Rng;

const CHUNK: usize = 256;

/// Configuration stored alongside a trained classifier's tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub kind: String,
    pub architecture: CpcArchitecture,
    pub policy: FreezePolicy,
    pub num_classes: usize,
    pub finetune: FinetuneConfig,
    pub learning_rate: f64,
    pub best_epoch: Option<usize>,
}

impl ClassifierMeta {
    pub const KIND: &'static str = "classifier";
}

/// Backbone plus head over one parameter store. Tensors in the frozen prefix
/// never receive gradients and are evaluated without dropout.
#[derive(Debug, Clone)]
pub struct ClassifierModel<S: Scalar> {
    pub arch: CpcArchitecture,
    pub policy: FreezePolicy,
    pub params: ParamStore<S>,
    pub encoder: Encoder,
    pub gar: Autoregressive,
    pub head: ClassifierHead,
    frozen: Vec<bool>,
}

/// Output of the frozen prefix for every window of a dataset, window-major
/// `[N x steps x width]`. When the context network is frozen `steps` is 1 and
/// each entry is `c_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache<S> {
    pub steps: usize,
    pub width: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureCache<S> {
    pub fn len(&self) -> usize {
        self.data.len() / (self.steps * self.width).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[S] {
        let n = self.steps * self.width;
        &self.data[i * n..(i + 1) * n]
    }

    /// Time-major `[steps*B x width]` batch of the given entries.
    pub fn batch(&self, indices: &[usize]) -> Matrix<S> {
        let b = indices.len();
        let mut m = Matrix::zeros(self.steps * b, self.width);
        for (j, &i) in indices.iter().enumerate() {
            let e = self.entry(i);
            for t in 0..self.steps {
                m.row_mut(t * b + j).copy_from_slice(&e[t * self.width..(t + 1) * self.width]);
            }
        }
        m
    }
}

impl<S: Scalar> ClassifierModel<S> {
    /// Fresh layout drawn from `rng`, with the tensors that `policy` freezes
    /// copied from `backbone`.
    pub fn new(
        arch: &CpcArchitecture,
        policy: FreezePolicy,
        num_classes: usize,
        head_dropout: f64,
        backbone: &ParamStore<S>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("classifier needs at least one class".into()));
        }
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &arch.encoder, arch.input_channels, rng)?;
        let gar = Autoregressive::new(&mut params, encoder.latent_dim(), arch.context_dim, arch.gar_layers, arch.gar_dropout, rng);
        let head = ClassifierHead::new(&mut params, arch.context_dim, num_classes, head_dropout, rng);

        let mut frozen = vec![false; params.len()];
        let depth = policy.frozen_encoder_layers(encoder.num_layers());
        let mut frozen_slots: Vec<usize> = (0..depth).flat_map(|i| encoder.layer_slots(i)).collect();
        if policy.freezes_context() {
            frozen_slots.extend(gar.slots());
        }
        for slot in frozen_slots {
            let name = params.entry(slot).name.clone();
            let src = backbone
                .slot(&name)
                .ok_or_else(|| Error::Checkpoint(format!("backbone lacks {name}, needed by policy {policy}")))?;
            if backbone.entry(src).dims != params.entry(slot).dims {
                return Err(Error::Checkpoint(format!(
                    "{name}: backbone dims {:?} != {:?}",
                    backbone.entry(src).dims,
                    params.entry(slot).dims
                )));
            }
            *params.value_mut(slot) = backbone.value(src).clone();
            frozen[slot] = true;
        }
        Ok(Self { arch: arch.clone(), policy, params, encoder, gar, head, frozen })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn is_frozen(&self, slot: usize) -> bool {
        self.frozen[slot]
    }

    pub fn frozen_slots(&self) -> Vec<usize> {
        (0..self.frozen.len()).filter(|&s| self.frozen[s]).collect()
    }

    /// Which slots receive gradients during fine-tuning.
    pub fn trainable_mask(&self) -> Vec<bool> {
        (0..self.params.len())
            .map(|s| !self.frozen[s] && self.params.entry(s).kind == ParamKind::Trainable)
            .collect()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.trainable_mask()
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(s, _)| self.params.value(s).len())
            .sum()
    }

    fn frozen_depth(&self) -> usize {
        self.policy.frozen_encoder_layers(self.encoder.num_layers())
    }

    fn check_windows(&self, ds: &WindowDataset) -> Result<()> {
        if ds.channels != self.arch.input_channels {
            return Err(Error::Shape(format!(
                "windows have {} channels, model expects {}",
                ds.channels, self.arch.input_channels
            )));
        }
        if ds.steps == 0 {
            return Err(Error::Shape("windows have no timesteps".into()));
        }
        Ok(())
    }

    /// Runs the frozen prefix over a time-major batch in eval mode.
    fn prefix(&self, x: &Matrix<S>, steps: usize, batch: usize) -> Matrix<S> {
        let mut g = Graph::with_trainable(&self.params, vec![false; self.params.len()], Mode::Eval, None);
        let v = g.tape.constant(x.clone());
        let mut h = self.encoder.forward_layers(&mut g, v, steps, batch, 0..self.frozen_depth());
        if self.policy.freezes_context() {
            h = self.gar.forward(&mut g, h, steps, batch);
        }
        g.tape.value(h).clone()
    }

    /// Frozen-prefix outputs for every window of `ds`.
    pub fn feature_cache(&self, ds: &WindowDataset) -> Result<FeatureCache<S>> {
        self.check_windows(ds)?;
        let (steps, width) = if self.policy.freezes_context() {
            (1, self.arch.context_dim)
        } else {
            (ds.steps, self.encoder.width_after(self.frozen_depth()))
        };
        let mut data = vec![S::zero(); ds.len() * steps * width];
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let b = chunk.len();
            let out = self.prefix(&ds.batch::<S>(chunk), ds.steps, b);
            for (j, &i) in chunk.iter().enumerate() {
                let dst = &mut data[i * steps * width..(i + 1) * steps * width];
                for t in 0..steps {
                    dst[t * width..(t + 1) * width].copy_from_slice(out.row(t * b + j));
                }
            }
        }
        Ok(FeatureCache { steps, width, data })
    }

    /// Context `c_T` from a time-major batch of frozen-prefix outputs.
    pub fn context_from_prefix(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Var {
        if self.policy.freezes_context() {
            return x;
        }
        let z = self.encoder.forward_layers(g, x, steps, batch, self.frozen_depth()..self.encoder.num_layers());
        self.gar.forward(g, z, steps, batch)
    }

    /// Class logits from a time-major batch of frozen-prefix outputs.
    pub fn logits_from_prefix(&self, g: &mut Graph<'_, S>, x: Var, steps: usize, batch: usize) -> Var {
        let c = self.context_from_prefix(g, x, steps, batch);
        self.head.forward(g, c)
    }

    /// Eval-mode logits `[N x classes]` for cached features.
    pub fn cached_logits(&self, cache: &FeatureCache<S>) -> Matrix<S> {
        let n = cache.len();
        let mut out = Matrix::zeros(n, self.num_classes());
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(CHUNK) {
            let mut g = Graph::with_trainable(&self.params, vec![false; self.params.len()], Mode::Eval, None);
            let x = g.tape.constant(cache.batch(chunk));
            let logits = self.logits_from_prefix(&mut g, x, cache.steps, chunk.len());
            let v = g.tape.value(logits);
            for (j, &i) in chunk.iter().enumerate() {
                out.row_mut(i).copy_from_slice(v.row(j));
            }
        }
        out
    }

    pub fn logits(&self, ds: &WindowDataset) -> Result<Matrix<S>> {
        Ok(self.cached_logits(&self.feature_cache(ds)?))
    }

    pub fn to_checkpoint(&self, meta: &ClassifierMeta) -> Result<Checkpoint> {
        Checkpoint::new(meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ClassifierMeta)> {
        let meta: ClassifierMeta = ck.config()?;
        if meta.kind != ClassifierMeta::KIND {
            return Err(Error::Checkpoint(format!("expected a {} checkpoint, found {}", ClassifierMeta::KIND, meta.kind)));
        }
        let stored = ck.params::<S>();
        let mut model = Self::new(
            &meta.architecture,
            meta.policy,
            meta.num_classes,
            meta.finetune.head_dropout,
            &stored,
            &mut crate::nn::seeded_rng(0, 0),
        )?;
        for slot in 0..model.params.len() {
            let name = model.params.entry(slot).name.clone();
            let src = stored.slot(&name).ok_or_else(|| Error::Checkpoint(format!("classifier checkpoint lacks {name}")))?;
            if stored.entry(src).dims != model.params.entry(slot).dims {
                return Err(Error::Checkpoint(format!("{name}: stored dims differ from the architecture")));
            }
            *model.params.value_mut(slot) = stored.value(src).clone();
        }
        Ok((model, meta))
    }
}

/// `c_T` for one `[T x C]` window. Frozen layers always run in eval mode; the
/// trainable remainder runs in `mode`.
pub fn extract_features<S: Scalar>(
    model: &ClassifierModel<S>,
    window: &Matrix<S>,
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<Vec<S>> {
    if window.cols() != model.arch.input_channels || window.rows() == 0 {
        return Err(Error::Shape(format!(
            "window {:?} does not match {} input channels",
            window.shape(),
            model.arch.input_channels
        )));
    }
    if mode == Mode::Train && rng.is_none() {
        return Err(Error::InvalidArgument("train mode needs a random source".into()));
    }
    let steps = window.rows();
    let pre = model.prefix(window, steps, 1);
    let mut g = Graph::with_trainable(&model.params, vec![false; model.params.len()], mode, rng);
    let x = g.tape.constant(pre);
    let feature_steps = if model.policy.freezes_context() { 1 } else { steps };
    let c = model.context_from_prefix(&mut g, x, feature_steps, 1);
    Ok(g.tape.value(c).as_slice().to_vec())
}

/// Most likely class per window, in input order; ties go to the lower index.
pub fn predict<S: Scalar>(model: &ClassifierModel<S>, ds: &WindowDataset) -> Result<Vec<usize>> {
    let logits = model.logits(ds)?;
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}
