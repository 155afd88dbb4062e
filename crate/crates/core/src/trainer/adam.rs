use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::OptimizerState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment descent over a fixed set of named parameters. Moments are
/// kept per path so the state can be checkpointed and restored exactly.
pub struct Adam {
    cfg: AdamConfig,
    params: Vec<(String, Var)>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (p, var) in &params {
            m.insert(p.clone(), var.as_tensor().zeros_like()?);
            v.insert(p.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            cfg,
            params,
            m,
            v,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_paths(&self) -> Vec<&str> {
        self.params.iter().map(|(p, _)| p.as_str()).collect()
    }

    /// One descent step of size `lr` along `grads` (gradients of the loss to
    /// minimize). Parameters absent from the graph keep their value.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (p, var) in &self.params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // moments must not hold the step's graph, or it chains across steps
            let g = g.detach();
            let m = self.m[p].affine(b1, 0.0)?.add(&g.affine(1.0 - b1, 0.0)?)?;
            let v = self.v[p]
                .affine(b2, 0.0)?
                .add(&g.sqr()?.affine(1.0 - b2, 0.0)?)?;
            let denom = v.affine(1.0 / c2, 0.0)?.sqrt()?.affine(1.0, self.cfg.eps)?;
            let upd = m.affine(lr / c1, 0.0)?.div(&denom)?;
            var.set(&var.as_tensor().sub(&upd)?)?;
            self.m.insert(p.clone(), m);
            self.v.insert(p.clone(), v);
        }
        Ok(())
    }

    pub fn state(&self) -> Result<OptimizerState> {
        let host = |t: &Tensor| -> Result<Vec<f32>> {
            Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
        };
        let mut st = OptimizerState {
            step: self.step,
            ..Default::default()
        };
        for (p, _) in &self.params {
            st.m.insert(p.clone(), host(&self.m[p])?);
            st.v.insert(p.clone(), host(&self.v[p])?);
        }
        Ok(st)
    }

    /// Restores moments for every parameter present in `state`.
    pub fn load_state(&mut self, state: &OptimizerState) -> Result<()> {
        self.step = state.step;
        for (p, var) in &self.params {
            let like = var.as_tensor();
            if let Some(vals) = state.m.get(p) {
                let t =
                    Tensor::from_slice(vals, like.dims(), like.device())?.to_dtype(like.dtype())?;
                self.m.insert(p.clone(), t);
            }
            if let Some(vals) = state.v.get(p) {
                let t =
                    Tensor::from_slice(vals, like.dims(), like.device())?.to_dtype(like.dtype())?;
                self.v.insert(p.clone(), t);
            }
        }
        Ok(())
    }
}
