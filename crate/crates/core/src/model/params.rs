use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Initialisation rule for a parameter. Random rules draw from a stream keyed
/// by `(init_seed, path)`, so a parameter's initial value depends only on its
/// canonical path and the seed, never on construction order.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Identity,
    /// Uniform on `±1/√fan_in`.
    FanIn(usize),
    Normal(f64),
}

/// All trainable parameters keyed by canonical path, plus non-trainable
/// buffers. Modules keep clones of the [`Var`]s they own; clones share storage
/// so updating a value through the store updates every user.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Tensor>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn var(&mut self, path: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(path) {
            return Err(Error::InvalidArgument(format!(
                "parameter {path} registered twice"
            )));
        }
        let n: usize = shape.iter().product();
        let mut r = rng::stream(self.seed, path);
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Identity => {
                if shape.len() != 2 || shape[0] != shape[1] {
                    return Err(Error::Shape(format!(
                        "identity init needs a square matrix for {path}"
                    )));
                }
                (0..n)
                    .map(|i| ((i / shape[1]) == (i % shape[1])) as u8 as f64)
                    .collect()
            }
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| r.random_range(-b..b)).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| std * r.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        self.vars.insert(path.to_string(), v.clone());
        Ok(v)
    }

    pub fn set_buffer(&mut self, path: &str, t: Tensor) -> Result<()> {
        let t = t.to_dtype(self.dtype)?;
        if let Some(old) = self.buffers.get(path) {
            if old.dims() != t.dims() {
                return Err(Error::Shape(format!(
                    "buffer {path} shape {:?} != {:?}",
                    t.dims(),
                    old.dims()
                )));
            }
        }
        self.buffers.insert(path.to_string(), t);
        Ok(())
    }

    pub fn buffer(&self, path: &str) -> Option<&Tensor> {
        self.buffers.get(path)
    }

    pub fn get(&self, path: &str) -> Option<&Var> {
        self.vars.get(path)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    /// Vars whose path starts with any of `prefixes`.
    pub fn vars_with_prefix(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(p, _)| prefixes.iter().any(|pre| p.starts_with(pre)))
            .map(|(p, v)| (p.clone(), v.clone()))
            .collect()
    }

    /// Replaces a parameter value in place (shape must match).
    pub fn assign(&self, path: &str, value: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(path)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {path}")))?;
        if v.dims() != value.dims() {
            return Err(Error::DimMismatch(format!(
                "{path}: expected {:?}, got {:?}",
                v.dims(),
                value.dims()
            )));
        }
        v.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// SHA-256 over the little-endian f32 bytes of every var and buffer in
    /// path order.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (p, v) in &self.vars {
            h.update(p.as_bytes());
            for x in v
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F32)?
                .to_vec1::<f32>()?
            {
                h.update(x.to_le_bytes());
            }
        }
        for (p, t) in &self.buffers {
            h.update(p.as_bytes());
            for x in t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Digest restricted to vars under `prefixes`.
    pub fn digest_prefix(&self, prefixes: &[&str]) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (p, v) in self.vars_with_prefix(prefixes) {
            h.update(p.as_bytes());
            for x in v
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F32)?
                .to_vec1::<f32>()?
            {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}
