//! Architecture presets. Each preset supplies an encoder backbone and the
//! post-bottleneck decoder `f'`; presets are registered by name and chosen at
//! runtime from the model config.

use std::collections::BTreeMap;
use std::fmt;

use candle_core::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dims::ModelDims;
use super::layers::{leaky_relu, Linear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Per-forward-pass state. Dropout is active only in training mode and draws
/// its masks from `rng`.
pub struct ForwardCtx {
    pub train: bool,
    rng: Option<ChaCha8Rng>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: None,
        }
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            train: true,
            rng: Some(rng),
        }
    }

    /// Channel-wise (2D) dropout keep-mask of shape `(n, c, 1, 1)`, scaled by
    /// `1/(1-p)`. `None` when dropout is inactive.
    fn channel_mask(
        &mut self,
        n: usize,
        c: usize,
        p: f64,
        like: &Tensor,
    ) -> Result<Option<Tensor>> {
        if !self.train || p <= 0.0 {
            return Ok(None);
        }
        let rng = self.rng.as_mut().expect("training context carries an rng");
        let keep = 1.0 / (1.0 - p);
        let data: Vec<f64> = (0..n * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(Some(
            Tensor::from_vec(data, (n, c, 1, 1), like.device())?.to_dtype(like.dtype())?,
        ))
    }
}

pub trait Backbone: Send + Sync {
    fn out_dim(&self) -> usize;
    fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor>;
}

/// `f'`: maps the bottleneck output `B z` to likelihood parameters (logits
/// for Bernoulli, means for Gaussian), shape `n × obs_dim`.
pub trait DecoderNet: Send + Sync {
    fn forward(&self, h: &Tensor) -> Result<Tensor>;
    /// True when `f'` is affine, so decoded outputs are affine in `z`.
    fn is_affine(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub preset: String,
    /// Hidden widths for the `mlp` preset.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Channel dropout probability for the `table2` preset.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    0.1
}

impl ArchConfig {
    pub fn linear() -> Self {
        Self {
            preset: "linear".into(),
            hidden: vec![],
            dropout: 0.0,
        }
    }

    pub fn mlp(hidden: Vec<usize>) -> Self {
        Self {
            preset: "mlp".into(),
            hidden,
            dropout: 0.0,
        }
    }

    pub fn table2() -> Self {
        Self {
            preset: "table2".into(),
            hidden: vec![],
            dropout: 0.1,
        }
    }
}

pub trait Architecture: Send + Sync {
    fn name(&self) -> &'static str;
    fn backbone(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        cfg: &ArchConfig,
    ) -> Result<Box<dyn Backbone>>;
    fn decoder(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        cfg: &ArchConfig,
    ) -> Result<Box<dyn DecoderNet>>;
}

pub struct ArchitectureRegistry {
    entries: BTreeMap<&'static str, Box<dyn Architecture>>,
}

impl fmt::Debug for ArchitectureRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for ArchitectureRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Box::new(LinearArch));
        r.register(Box::new(MlpArch));
        r.register(Box::new(Table2Arch));
        r
    }
}

impl ArchitectureRegistry {
    pub fn register(&mut self, arch: Box<dyn Architecture>) {
        self.entries.insert(arch.name(), arch);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Architecture> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "architecture preset",
                name: name.into(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

// ---- linear -------------------------------------------------------------

struct LinearArch;

struct IdentityBackbone {
    dim: usize,
}

impl Backbone for IdentityBackbone {
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        Ok(x.clone())
    }
}

struct AffineDecoder {
    layer: Linear,
}

impl DecoderNet for AffineDecoder {
    fn forward(&self, h: &Tensor) -> Result<Tensor> {
        self.layer.forward(h)
    }
    fn is_affine(&self) -> bool {
        true
    }
}

impl Architecture for LinearArch {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backbone(
        &self,
        _: &mut ParamStore,
        _: &str,
        dims: &ModelDims,
        _: &ArchConfig,
    ) -> Result<Box<dyn Backbone>> {
        Ok(Box::new(IdentityBackbone { dim: dims.obs_dim }))
    }
    fn decoder(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        _: &ArchConfig,
    ) -> Result<Box<dyn DecoderNet>> {
        Ok(Box::new(AffineDecoder {
            layer: Linear::new(store, &format!("{path}/out"), dims.k(), dims.obs_dim)?,
        }))
    }
}

// ---- mlp ----------------------------------------------------------------

struct MlpArch;

const LEAKY_SLOPE: f64 = 0.01;

struct MlpStack {
    layers: Vec<Linear>,
    /// Activation after the last layer too (backbones) or not (decoders).
    activate_last: bool,
}

impl MlpStack {
    fn new(
        store: &mut ParamStore,
        path: &str,
        widths: &[usize],
        activate_last: bool,
    ) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{path}/fc{i}"), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            activate_last,
        })
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i < last || self.activate_last {
                h = leaky_relu(&h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}

impl Backbone for MlpStack {
    fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }
    fn forward(&self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        self.run(x)
    }
}

impl DecoderNet for MlpStack {
    fn forward(&self, h: &Tensor) -> Result<Tensor> {
        self.run(h)
    }
    fn is_affine(&self) -> bool {
        self.layers.len() == 1
    }
}

fn mlp_hidden(cfg: &ArchConfig) -> Result<Vec<usize>> {
    if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
        return Err(Error::InvalidArgument(
            "mlp preset needs nonzero hidden widths".into(),
        ));
    }
    Ok(cfg.hidden.clone())
}

impl Architecture for MlpArch {
    fn name(&self) -> &'static str {
        "mlp"
    }
    fn backbone(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        cfg: &ArchConfig,
    ) -> Result<Box<dyn Backbone>> {
        let mut widths = vec![dims.obs_dim];
        widths.extend(mlp_hidden(cfg)?);
        Ok(Box::new(MlpStack::new(store, path, &widths, true)?))
    }
    fn decoder(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        cfg: &ArchConfig,
    ) -> Result<Box<dyn DecoderNet>> {
        let mut widths = vec![dims.k()];
        widths.extend(mlp_hidden(cfg)?.into_iter().rev());
        widths.push(dims.obs_dim);
        Ok(Box::new(MlpStack::new(store, path, &widths, false)?))
    }
}

// ---- table2: convolutional image preset ---------------------------------
//
// Encoder backbone: 4 × [Conv(64, k3, s2, p1), LeakyReLU(0.01), Dropout2d(p)],
// flatten (64·4·4 = 1024), FC 1024 → 256.
// Decoder: FC k → 512, ReLU, FC 512 → 1024, ReLU, reshape 64×4×4,
// ConvT(64, k3, s2, p0), ReLU, ConvT(64, k3, s2, p1), ReLU,
// ConvT(64, k3, s2, p1), ReLU, ConvT(c, k4, s2, p2) → 64×64×c.

struct Table2Arch;

const CONV_CH: usize = 64;

struct Conv {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl Conv {
    fn new(
        store: &mut ParamStore,
        path: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        padding: usize,
        transposed: bool,
    ) -> Result<Self> {
        let shape = if transposed {
            [cin, cout, k, k]
        } else {
            [cout, cin, k, k]
        };
        Ok(Self {
            weight: store.var(&format!("{path}/weight"), &shape, Init::FanIn(cin * k * k))?,
            bias: store.var(&format!("{path}/bias"), &[cout], Init::Zeros)?,
            stride,
            padding,
            transposed,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if self.transposed {
            x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?
        } else {
            x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?
        };
        let c = self.bias.dims()[0];
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

struct ConvBackbone {
    shape: [usize; 3],
    convs: Vec<Conv>,
    fc: Linear,
    dropout: f64,
}

impl Backbone for ConvBackbone {
    fn out_dim(&self) -> usize {
        self.fc.out_dim()
    }
    fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [h, w, c] = self.shape;
        let n = x.dims()[0];
        let mut t = x
            .reshape((n, h, w, c))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        for conv in &self.convs {
            t = leaky_relu(&conv.forward(&t)?, LEAKY_SLOPE)?;
            if let Some(mask) = ctx.channel_mask(n, CONV_CH, self.dropout, &t)? {
                t = t.broadcast_mul(&mask)?;
            }
        }
        self.fc.forward(&t.flatten_from(1)?)
    }
}

struct ConvDecoder {
    shape: [usize; 3],
    fc1: Linear,
    fc2: Linear,
    deconvs: Vec<Conv>,
}

impl DecoderNet for ConvDecoder {
    fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let n = h.dims()[0];
        let t = self.fc1.forward(h)?.relu()?;
        let mut t = self.fc2.forward(&t)?.relu()?.reshape((n, CONV_CH, 4, 4))?;
        let last = self.deconvs.len() - 1;
        for (i, d) in self.deconvs.iter().enumerate() {
            t = d.forward(&t)?;
            if i < last {
                t = t.relu()?;
            }
        }
        let [hh, ww, c] = self.shape;
        Ok(t.permute((0, 2, 3, 1))?
            .contiguous()?
            .reshape((n, hh * ww * c))?)
    }
    fn is_affine(&self) -> bool {
        false
    }
}

fn table2_shape(dims: &ModelDims) -> Result<[usize; 3]> {
    match dims.image_shape {
        Some(s @ [64, 64, _]) => Ok(s),
        _ => Err(Error::InvalidArgument(
            "table2 preset needs 64×64×c images".into(),
        )),
    }
}

impl Architecture for Table2Arch {
    fn name(&self) -> &'static str {
        "table2"
    }
    fn backbone(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        cfg: &ArchConfig,
    ) -> Result<Box<dyn Backbone>> {
        let shape = table2_shape(dims)?;
        let mut cin = shape[2];
        let mut convs = Vec::new();
        for i in 0..4 {
            convs.push(Conv::new(
                store,
                &format!("{path}/conv{i}"),
                (cin, CONV_CH, 3),
                2,
                1,
                false,
            )?);
            cin = CONV_CH;
        }
        let fc = Linear::new(store, &format!("{path}/fc"), CONV_CH * 16, 256)?;
        Ok(Box::new(ConvBackbone {
            shape,
            convs,
            fc,
            dropout: cfg.dropout,
        }))
    }
    fn decoder(
        &self,
        store: &mut ParamStore,
        path: &str,
        dims: &ModelDims,
        _: &ArchConfig,
    ) -> Result<Box<dyn DecoderNet>> {
        let shape = table2_shape(dims)?;
        let fc1 = Linear::new(store, &format!("{path}/fc1"), dims.k(), 512)?;
        let fc2 = Linear::new(store, &format!("{path}/fc2"), 512, 1024)?;
        let deconvs = vec![
            Conv::new(
                store,
                &format!("{path}/deconv0"),
                (CONV_CH, CONV_CH, 3),
                2,
                0,
                true,
            )?,
            Conv::new(
                store,
                &format!("{path}/deconv1"),
                (CONV_CH, CONV_CH, 3),
                2,
                1,
                true,
            )?,
            Conv::new(
                store,
                &format!("{path}/deconv2"),
                (CONV_CH, CONV_CH, 3),
                2,
                1,
                true,
            )?,
            Conv::new(
                store,
                &format!("{path}/deconv3"),
                (CONV_CH, shape[2], 4),
                2,
                2,
                true,
            )?,
        ];
        Ok(Box::new(ConvDecoder {
            shape,
            fc1,
            fc2,
            deconvs,
        }))
    }
}
