use candle_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Diagonal Gaussian `q(z | ·)` for a batch: `mean` and `var` are `n × k`.
/// The first `k_c` coordinates are the core block.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub var: Tensor,
    pub k_c: usize,
}

impl GaussianPosterior {
    pub fn new(mean: Tensor, var: Tensor, k_c: usize) -> Result<Self> {
        if mean.dims() != var.dims() || mean.rank() != 2 {
            return Err(Error::Shape(format!(
                "posterior mean {:?} vs var {:?}",
                mean.dims(),
                var.dims()
            )));
        }
        if k_c > mean.dims()[1] {
            return Err(Error::Shape("k_c exceeds posterior width".into()));
        }
        Ok(Self { mean, var, k_c })
    }

    pub fn n(&self) -> usize {
        self.mean.dims()[0]
    }

    pub fn k(&self) -> usize {
        self.mean.dims()[1]
    }

    pub fn k_s(&self) -> usize {
        self.k() - self.k_c
    }

    pub fn core_mean(&self) -> Result<Tensor> {
        Ok(self.mean.narrow(1, 0, self.k_c)?)
    }

    pub fn core_var(&self) -> Result<Tensor> {
        Ok(self.var.narrow(1, 0, self.k_c)?)
    }

    pub fn style_mean(&self) -> Result<Tensor> {
        Ok(self.mean.narrow(1, self.k_c, self.k_s())?)
    }

    pub fn style_var(&self) -> Result<Tensor> {
        Ok(self.var.narrow(1, self.k_c, self.k_s())?)
    }

    /// `mean + √var ⊙ eps`; differentiable in both moments.
    pub fn reparameterize(&self, eps: &Tensor) -> Result<Tensor> {
        Ok((&self.mean + self.var.sqrt()?.mul(eps)?)?)
    }

    pub fn mean_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.mean.to_dtype(candle_core::DType::F64)?.to_vec2()?)
    }

    pub fn var_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.var.to_dtype(candle_core::DType::F64)?.to_vec2()?)
    }
}

/// Standard-normal tensor of the given shape drawn from `rng`.
pub fn standard_normal(rng: &mut impl Rng, shape: &[usize], like: &Tensor) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, like.device())?.to_dtype(like.dtype())?)
}

/// One reparameterised draw from `q`, deterministic in `seed`.
pub fn sample_posterior(q: &GaussianPosterior, seed: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, "posterior/sample");
    let eps = standard_normal(&mut r, q.mean.dims(), &q.mean)?;
    q.reparameterize(&eps)
}
