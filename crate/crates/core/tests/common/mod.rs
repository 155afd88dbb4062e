#![allow(dead_code)]

pub mod checks;

use candle_core::{DType, Tensor};
use clap_lab::model::{
    ArchConfig, ClapModel, ClassifierConfig, Likelihood, ModelConfig, ModelDims,
};

pub fn dims(k_c: usize, k_s: usize, obs_dim: usize, num_labels: usize) -> ModelDims {
    ModelDims {
        k_c,
        k_s,
        obs_dim,
        image_shape: None,
        num_labels,
    }
}

pub fn config(d: ModelDims, arch: ArchConfig, likelihood: Likelihood, seed: u64) -> ModelConfig {
    ModelConfig {
        dims: d,
        arch,
        likelihood,
        classifier: ClassifierConfig::Linear,
        init_seed: seed,
    }
}

pub fn linear_model(d: ModelDims, sigma: f64, dtype: DType, seed: u64) -> ClapModel {
    ClapModel::new(
        config(
            d,
            ArchConfig::linear(),
            Likelihood::Gaussian { sigma },
            seed,
        ),
        dtype,
    )
    .unwrap()
}

/// Overwrites parameter `path` with row-major `rows`.
pub fn set(model: &ClapModel, path: &str, rows: &[Vec<f64>]) {
    let shape = model
        .store
        .get(path)
        .unwrap_or_else(|| panic!("no parameter {path}"))
        .dims()
        .to_vec();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let t = Tensor::from_vec(flat, shape, model.device()).unwrap();
    model.store.assign(path, &t).unwrap();
}

pub fn set_vec(model: &ClapModel, path: &str, v: &[f64]) {
    let t = Tensor::from_vec(v.to_vec(), v.len(), model.device()).unwrap();
    model.store.assign(path, &t).unwrap();
}

pub fn get(model: &ClapModel, path: &str) -> Vec<f64> {
    model
        .store
        .get(path)
        .unwrap()
        .as_tensor()
        .flatten_all()
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1()
        .unwrap()
}

/// Inverse of softplus, for pinning posterior variances.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes `erfcc`, |rel err| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
