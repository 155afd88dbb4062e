use std::f64::consts::PI;

use candle_core::{DType, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use super::arch::DecoderNet;
use super::layers::{sigmoid, Linear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Likelihood {
    /// Per-coordinate Bernoulli on `[0, 1]` targets; the decoder emits logits.
    Bernoulli,
    /// Isotropic Gaussian with fixed standard deviation; the decoder emits means.
    Gaussian { sigma: f64 },
}

/// Shared decoder `f = f' ∘ B`. Both branches call the same instance.
pub struct Decoder {
    pub b: Var,
    pub net: Box<dyn DecoderNet>,
    pub likelihood: Likelihood,
}

impl Decoder {
    /// Raw decoder output: logits (Bernoulli) or means (Gaussian).
    pub fn forward_raw(&self, z: &Tensor) -> Result<Tensor> {
        let h = z.matmul(&self.b.as_tensor().t()?)?;
        self.net.forward(&h)
    }

    /// Likelihood parameters: probabilities in (0, 1) or Gaussian means.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let k = self.b.dims()[0];
        if z.rank() != 2 || z.dims()[1] != k {
            return Err(Error::Shape(format!(
                "decoder expects n × {k} latents, got {:?}",
                z.dims()
            )));
        }
        let finite = z
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "non-finite latent passed to the decoder".into(),
            ));
        }
        let raw = self.forward_raw(z)?;
        match self.likelihood {
            Likelihood::Bernoulli => sigmoid(&raw),
            Likelihood::Gaussian { .. } => Ok(raw),
        }
    }

    /// `log p_f(x | z)` per row.
    pub fn log_likelihood(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let raw = self.forward_raw(z)?;
        match self.likelihood {
            Likelihood::Bernoulli => {
                // x·l − softplus(l)
                let sp = super::layers::softplus(&raw)?;
                Ok((x.mul(&raw)? - sp)?.sum(D::Minus1)?)
            }
            Likelihood::Gaussian { sigma } => {
                let d = x.dims()[1] as f64;
                let sq = (x - raw)?.sqr()?.sum(D::Minus1)?;
                Ok(sq.affine(
                    -0.5 / (sigma * sigma),
                    -0.5 * d * (2.0 * PI * sigma * sigma).ln(),
                )?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    /// `ψ'` is identity plus bias: one logit per label, affine in `z_c`.
    Linear,
    /// `ψ'` is one hidden tanh layer of the given width after `C`.
    Hidden { width: usize },
}

/// `ψ = ψ' ∘ C` over the core block.
pub struct Classifier {
    pub c: Var,
    pub bias: Var,
    pub out: Option<Linear>,
}

impl Classifier {
    pub fn new(
        store: &mut ParamStore,
        k_c: usize,
        num_labels: usize,
        cfg: ClassifierConfig,
    ) -> Result<Self> {
        let rows = match cfg {
            ClassifierConfig::Linear => num_labels,
            ClassifierConfig::Hidden { width } if width > 0 => width,
            ClassifierConfig::Hidden { .. } => {
                return Err(Error::InvalidArgument(
                    "hidden width must be positive".into(),
                ))
            }
        };
        let c = store.var("clf/C", &[rows, k_c], Init::FanIn(k_c))?;
        let bias = store.var("clf/bias", &[rows], Init::Zeros)?;
        let out = match cfg {
            ClassifierConfig::Linear => None,
            ClassifierConfig::Hidden { width } => {
                Some(Linear::new(store, "clf/out", width, num_labels)?)
            }
        };
        Ok(Self { c, bias, out })
    }

    pub fn is_linear(&self) -> bool {
        self.out.is_none()
    }

    pub fn logits(&self, z_c: &Tensor) -> Result<Tensor> {
        let k_c = self.c.dims()[1];
        if z_c.rank() != 2 || z_c.dims()[1] != k_c {
            return Err(Error::Shape(format!(
                "classifier expects n × {k_c} core latents, got {:?}",
                z_c.dims()
            )));
        }
        let h = z_c
            .matmul(&self.c.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?;
        match &self.out {
            None => Ok(h),
            Some(out) => out.forward(&h.tanh()?),
        }
    }

    pub fn classify(&self, z_c: &Tensor) -> Result<Tensor> {
        sigmoid(&self.logits(z_c)?)
    }

    /// `Σ_l log p_ψ(y_l | z_c)` per row.
    pub fn log_likelihood(&self, y: &Tensor, z_c: &Tensor) -> Result<Tensor> {
        let l = self.logits(z_c)?;
        let sp = super::layers::softplus(&l)?;
        Ok((y.mul(&l)? - sp)?.sum(D::Minus1)?)
    }
}

fn log_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Gaussian-mixture prior `p_θp(z)` of the prediction branch: one component
/// per label configuration with its own core mean and diagonal core
/// variance; the style block `N(m_s, P⁻¹)` is shared by all components. The
/// style precision is `P = L Lᵀ` with `L` lower triangular, diagonal stored
/// as logs. Mixture weights are a buffer set from the label frequencies.
pub struct MixturePrior {
    pub core_mean: Var,
    pub core_logvar: Var,
    pub style_mean: Option<Var>,
    pub style_chol: Option<Var>,
    pub log_weights: Tensor,
    k_s: usize,
}

pub const MIXTURE_WEIGHTS_BUFFER: &str = "prior_p/log_weights";

impl MixturePrior {
    pub fn new(store: &mut ParamStore, m: usize, k_c: usize, k_s: usize) -> Result<Self> {
        let core_mean = store.var("prior_p/core_mean", &[m, k_c], Init::Normal(1.0))?;
        let core_logvar = store.var("prior_p/core_logvar", &[m, k_c], Init::Zeros)?;
        let (style_mean, style_chol) = if k_s > 0 {
            (
                Some(store.var("prior_p/style_mean", &[k_s], Init::Zeros)?),
                Some(store.var("prior_p/style_chol", &[k_s, k_s], Init::Zeros)?),
            )
        } else {
            (None, None)
        };
        let w = Tensor::from_vec(vec![-(m as f64).ln(); m], m, store.device())?;
        store.set_buffer(MIXTURE_WEIGHTS_BUFFER, w)?;
        let log_weights = store
            .buffer(MIXTURE_WEIGHTS_BUFFER)
            .expect("just set")
            .clone();
        Ok(Self {
            core_mean,
            core_logvar,
            style_mean,
            style_chol,
            log_weights,
            k_s,
        })
    }

    pub fn num_components(&self) -> usize {
        self.core_mean.dims()[0]
    }

    /// Lower-triangular factor `L` of the style precision.
    pub fn style_precision_factor(&self) -> Result<Option<Tensor>> {
        let Some(raw) = &self.style_chol else {
            return Ok(None);
        };
        let k = self.k_s;
        let raw = raw.as_tensor();
        let dev = raw.device();
        let strict: Vec<f64> = (0..k * k)
            .map(|i| ((i % k) < (i / k)) as u8 as f64)
            .collect();
        let diag: Vec<f64> = (0..k * k)
            .map(|i| ((i % k) == (i / k)) as u8 as f64)
            .collect();
        let strict = Tensor::from_vec(strict, (k, k), dev)?.to_dtype(raw.dtype())?;
        let diag = Tensor::from_vec(diag, (k, k), dev)?.to_dtype(raw.dtype())?;
        Ok(Some((raw.mul(&strict)? + raw.exp()?.mul(&diag)?)?))
    }

    /// `log p_θp(z)` per row for `z` of shape `n × k`.
    pub fn log_prob(&self, z: &Tensor) -> Result<Tensor> {
        let k_c = self.core_mean.dims()[1];
        let (n, m) = (z.dims()[0], self.num_components());
        let zc = z.narrow(1, 0, k_c)?.unsqueeze(1)?; // n,1,kc
        let mean = self.core_mean.as_tensor().unsqueeze(0)?; // 1,M,kc
        let logvar = self.core_logvar.as_tensor();
        let inv_var = logvar.neg()?.exp()?.unsqueeze(0)?;
        let quad = zc
            .broadcast_sub(&mean)?
            .sqr()?
            .broadcast_mul(&inv_var)?
            .sum(D::Minus1)?; // n,M
        let norm = (logvar.sum(D::Minus1)? + k_c as f64 * log_2pi())?.affine(-0.5, 0.0)?; // M
        let comp = quad
            .affine(-0.5, 0.0)?
            .broadcast_add(&norm)?
            .broadcast_add(&self.log_weights)?;
        debug_assert_eq!(comp.dims(), &[n, m]);
        let core = comp.log_sum_exp(D::Minus1)?;
        match (&self.style_mean, self.style_precision_factor()?) {
            (Some(ms), Some(l)) => {
                let d = z.narrow(1, k_c, self.k_s)?.broadcast_sub(ms.as_tensor())?;
                let u = d.matmul(&l)?;
                let logdet = self
                    .style_chol
                    .as_ref()
                    .expect("style")
                    .as_tensor()
                    .diagonal_sum()?;
                let style = u
                    .sqr()?
                    .sum(D::Minus1)?
                    .affine(-0.5, -0.5 * self.k_s as f64 * log_2pi())?
                    .broadcast_add(&logdet)?;
                Ok((core + style)?)
            }
            _ => Ok(core),
        }
    }
}

// candle has no diagonal-sum helper for 2-d tensors with grads, add one
trait DiagonalSum {
    fn diagonal_sum(&self) -> Result<Tensor>;
}

impl DiagonalSum for Tensor {
    fn diagonal_sum(&self) -> Result<Tensor> {
        let k = self.dims()[0];
        let eye: Vec<f64> = (0..k * k)
            .map(|i| ((i % k) == (i / k)) as u8 as f64)
            .collect();
        let eye = Tensor::from_vec(eye, (k, k), self.device())?.to_dtype(self.dtype())?;
        Ok(self.mul(&eye)?.sum_all()?)
    }
}

/// Label-conditional prior of the concept branch:
/// `p(z | y) = N(μ_y, diag(v_y)) ⊗ N(0, I)` over (core, style).
pub struct ConditionalPrior {
    pub core_mean: Var,
    pub core_logvar: Var,
}

impl ConditionalPrior {
    pub fn new(store: &mut ParamStore, m: usize, k_c: usize) -> Result<Self> {
        Ok(Self {
            core_mean: store.var("prior_cl/core_mean", &[m, k_c], Init::Normal(1.0))?,
            core_logvar: store.var("prior_cl/core_logvar", &[m, k_c], Init::Zeros)?,
        })
    }

    /// Core mean and variance rows for each label-configuration index.
    pub fn core_moments(&self, label_idx: &Tensor) -> Result<(Tensor, Tensor)> {
        let mean = self.core_mean.as_tensor().index_select(label_idx, 0)?;
        let var = self
            .core_logvar
            .as_tensor()
            .index_select(label_idx, 0)?
            .exp()?;
        Ok((mean, var))
    }
}
