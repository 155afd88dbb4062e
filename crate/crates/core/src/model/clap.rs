use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, ArchitectureRegistry, Backbone, ForwardCtx};
use super::components::{
    Classifier, ClassifierConfig, ConditionalPrior, Decoder, Likelihood, MixturePrior,
    MIXTURE_WEIGHTS_BUFFER,
};
use super::dims::{label_config_index, ModelDims};
use super::layers::{softplus, Linear};
use super::params::{Init, ParamStore};
use super::posterior::GaussianPosterior;
use crate::error::{Error, Result};
use crate::synthgen::LabeledDataset;

/// Floor added to softplus variances so they stay strictly positive.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub arch: ArchConfig,
    pub likelihood: Likelihood,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_classifier() -> ClassifierConfig {
    ClassifierConfig::Linear
}

/// A minibatch on the model's device. `y` holds the binary labels as floats;
/// `label_idx` the matching configuration indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub label_idx: Tensor,
}

impl Batch {
    pub fn from_rows(
        x: &[f32],
        y: &[u8],
        n: usize,
        num_labels: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if n == 0 || x.len() % n != 0 || y.len() != n * num_labels {
            return Err(Error::Shape(format!(
                "batch of {n} rows: x has {}, y has {} entries",
                x.len(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidLabel(format!(
                "label value {bad} is not binary"
            )));
        }
        let d = x.len() / n;
        let idx: Vec<u32> = y
            .chunks(num_labels)
            .map(|r| label_config_index(r) as u32)
            .collect();
        let yf: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        Ok(Self {
            x: Tensor::from_slice(x, (n, d), device)?.to_dtype(dtype)?,
            y: Tensor::from_vec(yf, (n, num_labels), device)?.to_dtype(dtype)?,
            label_idx: Tensor::from_vec(idx, n, device)?,
        })
    }

    /// Rows `idx` of `data`.
    pub fn from_dataset(
        data: &LabeledDataset,
        idx: &[usize],
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let d = data.x.ncols();
        let l = data.y.ncols();
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            if i >= data.len() {
                return Err(Error::InvalidArgument(format!("row {i} out of range")));
            }
            x.extend(data.x.row(i).iter());
            y.extend(data.y.row(i).iter());
        }
        Self::from_rows(&x, &y, idx.len(), l, dtype, device)
    }

    pub fn len(&self) -> usize {
        self.x.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All CLAP parameters and the forward maps among them.
///
/// The prediction encoder `q(z|x)` is `enc_p/backbone` followed by a core
/// head and a style head. The concept encoder `q(z|x,y)` reuses the style
/// head and its backbone verbatim; its core head sits on a separate backbone
/// and sees `[h, y]`. A single [`Decoder`] serves both branches.
pub struct ClapModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    backbone_p: Box<dyn Backbone>,
    core_head_p: Linear,
    style_head: Option<Linear>,
    backbone_cl: Box<dyn Backbone>,
    core_head_cl: Linear,
    pub decoder: Decoder,
    pub classifier: Classifier,
    pub prior_p: MixturePrior,
    pub prior_cl: ConditionalPrior,
}

impl ClapModel {
    pub fn new(config: ModelConfig, dtype: DType) -> Result<Self> {
        Self::with_registry(config, dtype, &ArchitectureRegistry::default())
    }

    pub fn with_registry(
        config: ModelConfig,
        dtype: DType,
        registry: &ArchitectureRegistry,
    ) -> Result<Self> {
        let dims = &config.dims;
        dims.validate()?;
        if let Likelihood::Gaussian { sigma } = config.likelihood {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidArgument(
                    "Gaussian likelihood needs sigma > 0".into(),
                ));
            }
        }
        let arch = registry.get(&config.arch.preset)?;
        let mut store = ParamStore::new(config.init_seed, dtype, Device::Cpu);
        let (k_c, k_s, k) = (dims.k_c, dims.k_s, dims.k());
        let m = dims.num_label_configs();

        let backbone_p = arch.backbone(&mut store, "enc_p/backbone", dims, &config.arch)?;
        let h = backbone_p.out_dim();
        let core_head_p = Linear::new(&mut store, "enc_p/core_head", h, 2 * k_c)?;
        let style_head = if k_s > 0 {
            Some(Linear::new(&mut store, "enc_p/style_head", h, 2 * k_s)?)
        } else {
            None
        };
        let backbone_cl = arch.backbone(&mut store, "enc_cl/backbone", dims, &config.arch)?;
        let core_head_cl = Linear::new(
            &mut store,
            "enc_cl/core_head",
            backbone_cl.out_dim() + dims.num_labels,
            2 * k_c,
        )?;

        let b = store.var("dec/B", &[k, k], Init::Normal(0.01))?;
        let net = arch.decoder(&mut store, "dec/net", dims, &config.arch)?;
        let decoder = Decoder {
            b,
            net,
            likelihood: config.likelihood,
        };
        let classifier = Classifier::new(&mut store, k_c, dims.num_labels, config.classifier)?;
        let prior_p = MixturePrior::new(&mut store, m, k_c, k_s)?;
        let prior_cl = ConditionalPrior::new(&mut store, m, k_c)?;
        Ok(Self {
            config,
            store,
            backbone_p,
            core_head_p,
            style_head,
            backbone_cl,
            core_head_cl,
            decoder,
            classifier,
            prior_p,
            prior_cl,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.config.dims
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Sets the mixture weights of the prediction prior from label
    /// configuration probabilities (length `2^num_labels`). Zero entries get a
    /// small floor so every component keeps a finite log weight.
    pub fn set_mixture_weights(&mut self, probs: &[f64]) -> Result<()> {
        let m = self.dims().num_label_configs();
        if probs.len() != m || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "need {m} nonnegative mixture weights"
            )));
        }
        let floor = 1e-6;
        let total: f64 = probs.iter().map(|p| p + floor).sum();
        let logw: Vec<f64> = probs.iter().map(|p| ((p + floor) / total).ln()).collect();
        self.store.set_buffer(
            MIXTURE_WEIGHTS_BUFFER,
            Tensor::from_vec(logw, m, self.device())?,
        )?;
        self.prior_p.log_weights = self
            .store
            .buffer(MIXTURE_WEIGHTS_BUFFER)
            .expect("set above")
            .clone();
        Ok(())
    }

    /// Empirical label-configuration frequencies of `data`.
    pub fn label_config_frequencies(&self, data: &LabeledDataset) -> Vec<f64> {
        let mut counts = vec![0.0; self.dims().num_label_configs()];
        for row in data.y.rows() {
            let r: Vec<u8> = row.to_vec();
            if let Some(c) = counts.get_mut(label_config_index(&r)) {
                *c += 1.0;
            }
        }
        let n = data.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }

    /// Re-reads buffers from the store after an external update.
    pub(crate) fn sync_buffers(&mut self) {
        if let Some(w) = self.store.buffer(MIXTURE_WEIGHTS_BUFFER) {
            self.prior_p.log_weights = w.clone();
        }
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        let d = self.dims().obs_dim;
        if x.rank() != 2 || x.dims()[1] != d {
            return Err(Error::Shape(format!(
                "expected n × {d} observations, got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: &Tensor, n: usize) -> Result<()> {
        let l = self.dims().num_labels;
        if y.dims() != [n, l] {
            return Err(Error::InvalidLabel(format!(
                "expected {n} × {l} labels, got {:?}",
                y.dims()
            )));
        }
        let vals = y.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if vals.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidLabel("labels must be binary".into()));
        }
        Ok(())
    }

    fn split_head(out: &Tensor, width: usize) -> Result<(Tensor, Tensor)> {
        let mean = out.narrow(1, 0, width)?;
        let var = softplus(&out.narrow(1, width, width)?)?.affine(1.0, VAR_FLOOR)?;
        Ok((mean, var))
    }

    fn style_moments(&self, h: &Tensor) -> Result<Option<(Tensor, Tensor)>> {
        match &self.style_head {
            Some(head) => Ok(Some(Self::split_head(&head.forward(h)?, self.dims().k_s)?)),
            None => Ok(None),
        }
    }

    fn assemble(
        &self,
        core: (Tensor, Tensor),
        style: &Option<(Tensor, Tensor)>,
    ) -> Result<GaussianPosterior> {
        let (mean, var) = match style {
            Some((sm, sv)) => (
                Tensor::cat(&[&core.0, sm], 1)?,
                Tensor::cat(&[&core.1, sv], 1)?,
            ),
            None => core,
        };
        GaussianPosterior::new(mean, var, self.dims().k_c)
    }

    fn core_cl(&self, x: &Tensor, y: &Tensor, ctx: &mut ForwardCtx) -> Result<(Tensor, Tensor)> {
        let h = self.backbone_cl.forward(x, ctx)?;
        let hy = Tensor::cat(&[&h, &y.to_dtype(h.dtype())?], 1)?;
        Self::split_head(&self.core_head_cl.forward(&hy)?, self.dims().k_c)
    }

    /// `q(z | x)`; never reads labels.
    pub fn encode_p(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<GaussianPosterior> {
        self.check_x(x)?;
        let h = self.backbone_p.forward(x, ctx)?;
        let core = Self::split_head(&self.core_head_p.forward(&h)?, self.dims().k_c)?;
        self.assemble(core, &self.style_moments(&h)?)
    }

    /// `q(z | x, y)`; the style block equals that of [`Self::encode_p`].
    pub fn encode_cl(
        &self,
        x: &Tensor,
        y: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<GaussianPosterior> {
        self.check_x(x)?;
        self.check_y(y, x.dims()[0])?;
        let h = self.backbone_p.forward(x, ctx)?;
        let style = self.style_moments(&h)?;
        self.assemble(self.core_cl(x, y, ctx)?, &style)
    }

    /// Both posteriors from one pass of the shared backbone, so the tied style
    /// block is literally the same tensor in both.
    pub fn encode_both(
        &self,
        x: &Tensor,
        y: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<(GaussianPosterior, GaussianPosterior)> {
        self.check_x(x)?;
        self.check_y(y, x.dims()[0])?;
        let h = self.backbone_p.forward(x, ctx)?;
        let style = self.style_moments(&h)?;
        let core_p = Self::split_head(&self.core_head_p.forward(&h)?, self.dims().k_c)?;
        let q_p = self.assemble(core_p, &style)?;
        let q_cl = self.assemble(self.core_cl(x, y, ctx)?, &style)?;
        Ok((q_p, q_cl))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.decode(z)
    }

    pub fn classify(&self, z_c: &Tensor) -> Result<Tensor> {
        self.classifier.classify(z_c)
    }

    /// Label probabilities at the posterior mean of `q(z | x)`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let q = self.encode_p(x, &mut ForwardCtx::eval())?;
        self.classify(&q.core_mean()?)
    }

    /// Core columns of `B` stacked over `C`, as `(B, C)` host matrices.
    pub fn bottleneck_matrices(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let b = self.decoder.b.as_tensor().to_dtype(DType::F64)?.to_vec2()?;
        let c = self
            .classifier
            .c
            .as_tensor()
            .to_dtype(DType::F64)?
            .to_vec2()?;
        Ok((b, c))
    }
}
