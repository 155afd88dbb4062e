use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::render::{ToyImageConfig, ToyImageRenderer};
use crate::error::{Error, Result};

/// One affine layer `u ↦ W u + b` of an invertible MLP mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// The ground-truth mixing function `f*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingFunction {
    /// `x = A z`, `A` is obs_dim × latent_dim with full column rank.
    Linear { matrix: Vec<Vec<f64>> },
    /// Layers are applied in order with the activation `a(u) = tanh(u) + slope·u`
    /// between them (not after the last). Every layer except the last is
    /// square; the last may be tall. Invertible whenever every weight has full
    /// column rank, since `a` is strictly increasing.
    Mlp { layers: Vec<MlpLayer>, slope: f64 },
    /// Renders latents to 64×64×3 images in `[0, 1]`.
    ToyImage(ToyImageConfig),
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    sv.iter().filter(|&&s| s > max * 1e-10 && s > 0.0).count()
}

impl MixingFunction {
    pub fn output_dim(&self) -> usize {
        match self {
            MixingFunction::Linear { matrix } => matrix.len(),
            MixingFunction::Mlp { layers, .. } => layers.last().map_or(0, |l| l.weight.len()),
            MixingFunction::ToyImage(cfg) => cfg.pixel_count(),
        }
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        match self {
            MixingFunction::ToyImage(cfg) => Some(cfg.shape()),
            _ => None,
        }
    }

    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            MixingFunction::Linear { matrix } => Some(to_matrix(matrix)),
            _ => None,
        }
    }

    pub fn validate(&self, k_core: usize, k_style: usize) -> Result<()> {
        let latent_dim = k_core + k_style;
        match self {
            MixingFunction::Linear { matrix } => {
                if matrix.is_empty() || matrix.iter().any(|r| r.len() != latent_dim) {
                    return Err(Error::InvalidSpec(format!(
                        "linear mixing must be obs_dim × {latent_dim}"
                    )));
                }
            }
            MixingFunction::Mlp { layers, slope } => {
                if layers.is_empty() {
                    return Err(Error::InvalidSpec(
                        "mlp mixing needs at least one layer".into(),
                    ));
                }
                if !(*slope > 0.0) {
                    return Err(Error::InvalidSpec(
                        "mlp activation slope must be positive".into(),
                    ));
                }
                let mut width = latent_dim;
                for (i, l) in layers.iter().enumerate() {
                    let rows = l.weight.len();
                    if l.weight.iter().any(|r| r.len() != width) || l.bias.len() != rows {
                        return Err(Error::InvalidSpec(format!(
                            "mlp layer {i} has inconsistent shape"
                        )));
                    }
                    if i + 1 < layers.len() && rows != width {
                        return Err(Error::InvalidSpec(format!("mlp layer {i} must be square")));
                    }
                    if rows < width {
                        return Err(Error::InvalidSpec(format!(
                            "mlp layer {i} reduces dimension"
                        )));
                    }
                    width = rows;
                }
            }
            MixingFunction::ToyImage(cfg) => cfg.validate(k_core, k_style)?,
        }
        Ok(())
    }

    /// Injectivity of `f*`: full column rank for linear maps and for every
    /// MLP layer; the toy renderer is injective by construction on its range.
    pub fn is_injective(&self) -> bool {
        match self {
            MixingFunction::Linear { matrix } => {
                let m = to_matrix(matrix);
                numerical_rank(&m) == m.ncols()
            }
            MixingFunction::Mlp { layers, .. } => layers.iter().all(|l| {
                let m = to_matrix(&l.weight);
                numerical_rank(&m) == m.ncols()
            }),
            MixingFunction::ToyImage(_) => true,
        }
    }

    /// `f*(z)`. The second value is true when a toy-image latent had to be
    /// clamped into the renderer's supported range.
    pub fn apply(&self, z: &[f64], k_core: usize) -> (Vec<f64>, bool) {
        match self {
            MixingFunction::Linear { matrix } => (
                matrix
                    .iter()
                    .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
                    .collect(),
                false,
            ),
            MixingFunction::Mlp { layers, slope } => {
                let mut u = z.to_vec();
                for (i, l) in layers.iter().enumerate() {
                    let mut next: Vec<f64> = l
                        .weight
                        .iter()
                        .zip(&l.bias)
                        .map(|(row, b)| row.iter().zip(&u).map(|(w, v)| w * v).sum::<f64>() + b)
                        .collect();
                    if i + 1 < layers.len() {
                        for v in next.iter_mut() {
                            *v = v.tanh() + slope * *v;
                        }
                    }
                    u = next;
                }
                (u, false)
            }
            MixingFunction::ToyImage(cfg) => {
                let out = ToyImageRenderer::new(cfg.clone()).render(&z[..k_core], &z[k_core..]);
                (out.pixels.iter().map(|&p| p as f64).collect(), out.clamped)
            }
        }
    }
}
