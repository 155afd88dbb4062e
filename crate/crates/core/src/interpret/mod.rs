//! Human-facing artifacts: latent traversals and the global/local
//! prediction weights of the linear classifier over the core block.

mod render;

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use render::{
    annotate, diff_strips, grid_image, render_report, save_png, Report, ReportInstance, REPORT_FILE,
};

use crate::error::{Error, Result};
use crate::evalkit::posterior_means;
use crate::model::{Batch, ClapModel, ForwardCtx};
use crate::synthgen::LabeledDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalConfig {
    /// Latent dims to sweep; `None` uses the active core columns.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Half-width of the sweep in units of the dim's posterior-mean standard
    /// deviation over the dataset.
    #[serde(default = "default_std_multiple")]
    pub std_multiple: f64,
}

fn default_steps() -> usize {
    7
}

fn default_std_multiple() -> f64 {
    2.0
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            dims: None,
            steps: default_steps(),
            std_multiple: default_std_multiple(),
        }
    }
}

/// Decoded frames for one swept latent dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub dim: usize,
    pub values: Vec<f64>,
    /// One decoded observation per value.
    pub frames: Vec<Vec<f64>>,
}

/// Standard deviation over `data` of every coordinate of the posterior mean.
pub fn latent_spread(model: &ClapModel, data: &LabeledDataset) -> Result<Vec<f64>> {
    let m = posterior_means(model, data)?;
    let n = m.nrows() as f64;
    Ok(m.columns()
        .into_iter()
        .map(|c| {
            let mean = c.sum() / n;
            (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

fn row_tensor(model: &ClapModel, x: &[f32]) -> Result<Tensor> {
    let d = model.dims().obs_dim;
    if x.len() != d {
        return Err(Error::Shape(format!(
            "observation has length {}, model expects {d}",
            x.len()
        )));
    }
    Ok(Tensor::from_slice(x, (1, d), model.device())?.to_dtype(model.dtype())?)
}

/// Posterior mean of `q(z | x)` for a single observation.
pub fn posterior_mean_of(model: &ClapModel, x: &[f32]) -> Result<Vec<f64>> {
    let q = model.encode_p(&row_tensor(model, x)?, &mut ForwardCtx::eval())?;
    Ok(q.mean.to_dtype(DType::F64)?.to_vec2::<f64>()?.remove(0))
}

/// Sweeps each selected dim of `μ̂(x)` over `center ± std_multiple · spread`
/// with the other coordinates (style included) held at the posterior mean.
/// For odd `steps` the middle frame is the plain reconstruction.
pub fn traverse(
    model: &ClapModel,
    x: &[f32],
    dims: &[usize],
    steps: usize,
    half_width: &[f64],
) -> Result<Vec<Strip>> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument(
            "no dims selected for traversal".into(),
        ));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be ≥ 1".into()));
    }
    let k = model.dims().k();
    if half_width.len() != dims.len() || half_width.iter().any(|h| !h.is_finite()) {
        return Err(Error::InvalidArgument(
            "need one finite half-width per dim".into(),
        ));
    }
    let mu = posterior_mean_of(model, x)?;
    let mut strips = Vec::new();
    for (&d, &hw) in dims.iter().zip(half_width) {
        if d >= k {
            return Err(Error::InvalidArgument(format!(
                "dim {d} out of range (k = {k})"
            )));
        }
        let values: Vec<f64> = (0..steps)
            .map(|i| {
                let t = if steps == 1 {
                    0.0
                } else {
                    2.0 * i as f64 / (steps - 1) as f64 - 1.0
                };
                mu[d] + t * hw
            })
            .collect();
        let mut z = Vec::with_capacity(steps * k);
        for &v in &values {
            let mut row = mu.clone();
            row[d] = v;
            z.extend(row);
        }
        let zt = Tensor::from_vec(z, (steps, k), model.device())?.to_dtype(model.dtype())?;
        let frames = model.decode(&zt)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        strips.push(Strip {
            dim: d,
            values,
            frames,
        });
    }
    Ok(strips)
}

/// [`traverse`] with the dims and range rule of `cfg`, taking spreads from
/// `data`.
pub fn traverse_with(
    model: &ClapModel,
    x: &[f32],
    cfg: &TraversalConfig,
    data: &LabeledDataset,
) -> Result<Vec<Strip>> {
    if cfg.steps < 2 {
        return Err(Error::InvalidArgument(
            "traversal needs at least 2 steps".into(),
        ));
    }
    if !(cfg.std_multiple.is_finite() && cfg.std_multiple >= 0.0) {
        return Err(Error::InvalidArgument(
            "std_multiple must be finite and ≥ 0".into(),
        ));
    }
    let dims = match &cfg.dims {
        Some(d) => d.clone(),
        None => crate::evalkit::active_core_columns(model, crate::evalkit::ACTIVE_TOL)?,
    };
    let spread = latent_spread(model, data)?;
    let hw: Vec<f64> = dims
        .iter()
        .map(|&d| cfg.std_multiple * spread.get(d).copied().unwrap_or(0.0))
        .collect();
    traverse(model, x, &dims, cfg.steps, &hw)
}

/// Classifier weight rows (label × core dim). Defined only for the linear
/// classifier.
pub fn global_weights(model: &ClapModel) -> Result<Vec<Vec<f64>>> {
    if !model.classifier.is_linear() {
        return Err(Error::Unsupported(
            "global weights are undefined for a nonlinear classifier head".into(),
        ));
    }
    Ok(model
        .classifier
        .c
        .as_tensor()
        .to_dtype(DType::F64)?
        .to_vec2::<f64>()?)
}

/// Per-label summands `μ̂_c(x) ⊙ ψ̂_l` and the bias, for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalWeights {
    pub summands: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LocalWeights {
    /// `Σ summands + bias` per label.
    pub fn logits(&self) -> Vec<f64> {
        self.summands
            .iter()
            .zip(&self.bias)
            .map(|(s, b)| s.iter().sum::<f64>() + b)
            .collect()
    }
}

/// Local weights from a given core posterior mean.
pub fn local_weights_at(model: &ClapModel, core_mean: &[f64]) -> Result<LocalWeights> {
    let w = global_weights(model)?;
    let k_c = model.dims().k_c;
    if core_mean.len() != k_c {
        return Err(Error::Shape(format!(
            "core mean has length {}, expected {k_c}",
            core_mean.len()
        )));
    }
    let bias = model
        .classifier
        .bias
        .as_tensor()
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?;
    let summands = w
        .iter()
        .map(|row| row.iter().zip(core_mean).map(|(a, b)| a * b).collect())
        .collect();
    Ok(LocalWeights { summands, bias })
}

pub fn local_weights(model: &ClapModel, x: &[f32]) -> Result<LocalWeights> {
    let mu = posterior_mean_of(model, x)?;
    local_weights_at(model, &mu[..model.dims().k_c])
}

/// Classifier logits at the posterior mean for each row of `data[idx]`.
pub fn classifier_logits(
    model: &ClapModel,
    data: &LabeledDataset,
    idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let b = Batch::from_dataset(data, idx, model.dtype(), model.device())?;
    let q = model.encode_p(&b.x, &mut ForwardCtx::eval())?;
    Ok(model
        .classifier
        .logits(&q.core_mean()?)?
        .to_dtype(DType::F64)?
        .to_vec2::<f64>()?)
}

/// `{label index → row}` map used in the report.
pub(crate) fn by_label(rows: &[Vec<f64>]) -> BTreeMap<String, Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| (i.to_string(), r.clone()))
        .collect()
}
