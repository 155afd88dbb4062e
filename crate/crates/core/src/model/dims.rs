use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest label count whose configuration space (`2^num_labels` prior
/// components) the model will index.
pub const MAX_LABELS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub k_c: usize,
    pub k_s: usize,
    pub obs_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<[usize; 3]>,
    pub num_labels: usize,
}

impl ModelDims {
    pub fn k(&self) -> usize {
        self.k_c + self.k_s
    }

    /// Number of distinct binary label vectors, one prior component each.
    pub fn num_label_configs(&self) -> usize {
        1 << self.num_labels
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_c == 0 {
            return Err(Error::InvalidArgument("k_c must be at least 1".into()));
        }
        if self.obs_dim == 0 {
            return Err(Error::InvalidArgument("obs_dim must be positive".into()));
        }
        if self.num_labels == 0 || self.num_labels > MAX_LABELS {
            return Err(Error::InvalidArgument(format!(
                "num_labels must be in 1..={MAX_LABELS}"
            )));
        }
        if let Some([h, w, c]) = self.image_shape {
            if h * w * c != self.obs_dim {
                return Err(Error::InvalidArgument(
                    "image shape does not match obs_dim".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Index of a binary label vector in the configuration space (label `i` is
/// bit `i`).
pub fn label_config_index(y: &[u8]) -> usize {
    y.iter()
        .enumerate()
        .map(|(i, &b)| (b as usize & 1) << i)
        .sum()
}
