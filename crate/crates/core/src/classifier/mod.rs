//! Supervised activity recognition on top of a (partially) frozen CPC backbone.
//!
//! The classifier always consumes the context vector `c_T` produced by running
//! the context network over the whole window. A [`FreezePolicy`] decides how
//! much of the pre-trained backbone is kept fixed; everything after the frozen
//! prefix is re-initialized from the fine-tuning seed and trained together
//! with the MLP head.

mod head;
mod model;
mod train;

pub use head::ClassifierHead;
pub use model::{extract_features, predict, ClassifierMeta, ClassifierModel, FeatureCache};
pub use train::{train_classifier, train_classifier_with, train_end_to_end, FinetuneConfig, FinetuneEpoch, FinetuneOutcome, LearningRateRun};

use serde::{Deserialize, Serialize};

/// Which pre-trained tensors stay fixed during fine-tuning. The default keeps
/// the whole encoder and context network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    EncLe1,
    EncLe2,
    EncLe3,
    #[default]
    EncLe3PlusGar,
    None,
}

impl FreezePolicy {
    pub const ALL: [FreezePolicy; 5] = [Self::EncLe1, Self::EncLe2, Self::EncLe3, Self::EncLe3PlusGar, Self::None];

    pub fn label(self) -> &'static str {
        match self {
            Self::EncLe1 => "enc_le1",
            Self::EncLe2 => "enc_le2",
            Self::EncLe3 => "enc_le3",
            Self::EncLe3PlusGar => "enc_le3_plus_gar",
            Self::None => "none",
        }
    }

    /// How many leading encoder layers keep their pre-trained weights, for an
    /// encoder with `depth` layers. Recurrent encoders have a single layer.
    pub fn frozen_encoder_layers(self, depth: usize) -> usize {
        let n = match self {
            Self::EncLe1 => 1,
            Self::EncLe2 => 2,
            Self::EncLe3 | Self::EncLe3PlusGar => 3,
            Self::None => 0,
        };
        n.min(depth)
    }

    pub fn freezes_context(self) -> bool {
        self == Self::EncLe3PlusGar
    }
}

impl std::fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for FreezePolicy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown freeze policy {s:?}")))
    }
}
