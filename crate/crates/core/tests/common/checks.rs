//! Checks shared by the module tests and the acceptance target.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use clap_lab::evalkit::{align_latents, posterior_means};
use clap_lab::interpret::{classifier_logits, local_weights_at, posterior_mean_of};
use clap_lab::model::{ArchConfig, Batch, ClapModel, ForwardCtx, Likelihood};
use clap_lab::objectives::{
    elbo_cl, elbo_p, kl_diag, kl_diag_gaussians, objective, LossTerms, ObjectiveConfig,
};
use clap_lab::synthgen::{
    exact_log_evidence, presets, sample_dataset, GenerativeSpec, LabeledDataset,
};
use clap_lab::trainer::{
    default_config, default_model_config, train, TrainConfig, FINAL_CHECKPOINT,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::*;

fn log_normal_diag(z: &[f64], m: &[f64], v: &[f64]) -> f64 {
    z.iter()
        .zip(m)
        .zip(v)
        .map(|((z, m), v)| {
            -0.5 * ((z - m).powi(2) / v + v.ln() + (2.0 * std::f64::consts::PI).ln())
        })
        .sum()
}

pub fn kl_matches_sampling_oracle() {
    let mq = [0.3, -1.2, 2.0];
    let vq = [0.5, 1.7, 0.2];
    let mp = [0.0, -0.5, 1.0];
    let vp = [1.0, 0.8, 2.5];
    let closed = kl_diag_gaussians(&mq, &vq, &mp, &vp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut acc = 0.0;
    let mut z = [0.0; 3];
    for _ in 0..n {
        for i in 0..3 {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[i] = mq[i] + vq[i].sqrt() * e;
        }
        acc += log_normal_diag(&z, &mq, &vq) - log_normal_diag(&z, &mp, &vp);
    }
    let mc = acc / n as f64;
    assert!(
        (closed - mc).abs() < 1e-2,
        "closed {closed} vs sampled {mc}"
    );

    let t = |v: &[f64]| Tensor::from_slice(v, (1, 3), &Device::Cpu).unwrap();
    let dev = kl_diag(&t(&mq), &t(&vq), &t(&mp), &t(&vp))
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()[0];
    assert!((dev - closed).abs() < 1e-12);
}

/// Model equal to the 1-d tractable generative process: `x = z + ε`,
/// `z | y ~ N(2y, 1)`, `ε ~ N(0, 1)`. The concept encoder is the exact
/// posterior `N((x + 2y)/2, 1/2)`.
pub fn exact_1d_model() -> ClapModel {
    let m = linear_model(dims(1, 0, 1, 1), 1.0, DType::F64, 0);
    set(&m, "dec/B", &[vec![1.0]]);
    set(&m, "dec/net/out/weight", &[vec![1.0]]);
    set_vec(&m, "dec/net/out/bias", &[0.0]);
    set(&m, "prior_cl/core_mean", &[vec![0.0], vec![2.0]]);
    set(&m, "prior_cl/core_logvar", &[vec![0.0], vec![0.0]]);
    let raw = softplus_inv(0.5 - clap_lab::model::VAR_FLOOR);
    set(
        &m,
        "enc_cl/core_head/weight",
        &[vec![0.5, 1.0], vec![0.0, 0.0]],
    );
    set_vec(&m, "enc_cl/core_head/bias", &[0.0, raw]);
    m
}

pub fn batch_of(
    spec: &GenerativeSpec,
    n: usize,
    seed: u64,
) -> (Batch, Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let data = sample_dataset(spec, n, seed).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let b = Batch::from_dataset(&data, &idx, DType::F64, &Device::Cpu).unwrap();
    let xs = data
        .x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let ys = data.y.rows().into_iter().map(|r| r.to_vec()).collect();
    (b, xs, ys)
}

/// Per-row MC mean and standard error of a per-sample ELBO.
pub fn mc_summary(samples: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let k = samples.len() as f64;
    (0..samples[0].len())
        .map(|i| {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / k;
            let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (mean, (var / k).sqrt())
        })
        .collect()
}

pub fn elbo_bounds_1d() {
    let spec = presets::tractable_1d();
    let mut m = exact_1d_model();
    set(&m, "prior_p/core_mean", &[vec![0.0], vec![2.0]]);
    set(&m, "prior_p/core_logvar", &[vec![0.0], vec![0.0]]);
    m.set_mixture_weights(&[0.5, 0.5]).unwrap();
    // p(y=1 | z) of the generative model: logit 2z − 2
    set(&m, "clf/C", &[vec![2.0]]);
    set_vec(&m, "clf/bias", &[-2.0]);
    set(&m, "enc_p/core_head/weight", &[vec![0.5], vec![0.0]]);
    set_vec(&m, "enc_p/core_head/bias", &[0.5, softplus_inv(0.6)]);
    let (batch, xs, ys) = batch_of(&spec, 32, 4);
    let cfg = ObjectiveConfig {
        beta_pred: 1.0,
        mc_samples: 1,
        ..ObjectiveConfig::default()
    };
    let samples: Vec<Vec<f64>> = (0..400)
        .map(|s| {
            elbo_p(&m, &batch, &cfg, s)
                .unwrap()
                .total
                .to_vec1::<f64>()
                .unwrap()
        })
        .collect();
    for (((x, y), (mean, se)), _) in xs.iter().zip(&ys).zip(mc_summary(&samples)).zip(0..) {
        let exact = exact_log_evidence(&spec, x, y).unwrap();
        assert!(
            mean <= exact + 3.0 * se,
            "elbo_p {mean} ± {se} exceeds evidence {exact}"
        );
        // the joint bound is also below log p(x, y) = log p(x | y) + log ½
        assert!(mean <= exact + 0.5f64.ln() + 3.0 * se);
    }
}

pub fn elbo_bounds_2d() {
    let spec = presets::tractable_2d();
    let mut m = linear_model(dims(1, 1, 2, 1), 0.5, DType::F64, 1);
    let a = [[1.0, 0.5], [-0.3, 1.0]];
    let (s_mean, s_sd) = (0.3, 0.8f64.sqrt());
    // standardise the style latent: f(z) = A_c z_c + A_s (s_sd ẑ_s + s_mean)
    set(&m, "dec/B", &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    set(
        &m,
        "dec/net/out/weight",
        &[vec![a[0][0], a[0][1] * s_sd], vec![a[1][0], a[1][1] * s_sd]],
    );
    set_vec(
        &m,
        "dec/net/out/bias",
        &[a[0][1] * s_mean, a[1][1] * s_mean],
    );
    set(&m, "prior_cl/core_mean", &[vec![-1.0], vec![1.0]]);
    set(
        &m,
        "prior_cl/core_logvar",
        &[vec![0.5f64.ln()], vec![2.0f64.ln()]],
    );
    set(&m, "prior_p/core_mean", &[vec![-1.0], vec![1.0]]);
    set(
        &m,
        "prior_p/core_logvar",
        &[vec![0.5f64.ln()], vec![2.0f64.ln()]],
    );
    m.set_mixture_weights(&[0.4, 0.6]).unwrap();
    // a reasonable, not exact, diagonal encoder
    set(
        &m,
        "enc_cl/core_head/weight",
        &[vec![0.6, -0.2, 0.3], vec![0.0, 0.0, 0.0]],
    );
    set_vec(&m, "enc_cl/core_head/bias", &[-0.2, softplus_inv(0.15)]);
    set(
        &m,
        "enc_p/core_head/weight",
        &[vec![0.6, -0.2], vec![0.0, 0.0]],
    );
    set_vec(&m, "enc_p/core_head/bias", &[0.1, softplus_inv(0.2)]);
    set(
        &m,
        "enc_p/style_head/weight",
        &[vec![0.3, 0.9], vec![0.0, 0.0]],
    );
    set_vec(&m, "enc_p/style_head/bias", &[-0.3, softplus_inv(0.1)]);
    let (batch, xs, ys) = batch_of(&spec, 32, 5);
    let cfg = ObjectiveConfig {
        beta_pred: 1.0,
        mc_samples: 1,
        ..ObjectiveConfig::default()
    };
    let sp: Vec<Vec<f64>> = (0..400)
        .map(|s| {
            elbo_p(&m, &batch, &cfg, s)
                .unwrap()
                .total
                .to_vec1::<f64>()
                .unwrap()
        })
        .collect();
    let scl: Vec<Vec<f64>> = (0..400)
        .map(|s| {
            elbo_cl(&m, &batch, &cfg, s)
                .unwrap()
                .total
                .to_vec1::<f64>()
                .unwrap()
        })
        .collect();
    for (((x, y), p), c) in xs
        .iter()
        .zip(&ys)
        .zip(mc_summary(&sp))
        .zip(mc_summary(&scl))
    {
        let exact = exact_log_evidence(&spec, x, y).unwrap();
        // ψ is not the generative label posterior here, so L_p is only
        // bounded by the marginal log p(x) = log Σ_y p(y) p(x | y)
        let marginal = [(0u8, 0.4f64), (1, 0.6)]
            .iter()
            .map(|&(l, w)| w.ln() + exact_log_evidence(&spec, x, &[l]).unwrap())
            .fold(f64::NEG_INFINITY, |a, b| {
                a.max(b) + (-(a - b).abs()).exp().ln_1p()
            });
        assert!(p.0 <= marginal + 3.0 * p.1, "elbo_p {p:?} vs {marginal}");
        assert!(c.0 <= exact + 3.0 * c.1, "elbo_cl {c:?} vs {exact}");
    }
}

pub fn gradients_match_central_differences() {
    let d = dims(2, 1, 4, 2);
    let m = ClapModel::new(
        config(
            d,
            ArchConfig::mlp(vec![5]),
            Likelihood::Gaussian { sigma: 0.5 },
            2,
        ),
        DType::F64,
    )
    .unwrap();
    // the N(0, 0.01) init of B parks the decoder pre-activations on the
    // leaky-ReLU kink, where central differences are meaningless
    set(
        &m,
        "dec/B",
        &[
            vec![1.0, 0.3, -0.2],
            vec![0.1, 0.9, 0.4],
            vec![-0.3, 0.2, 1.1],
        ],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let x: Vec<f32> = (0..n * 4)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let y: Vec<u8> = (0..n * 2).map(|i| ((i * 7 + 3) % 5 < 2) as u8).collect();
    let batch = Batch::from_rows(&x, &y, n, 2, DType::F64, &Device::Cpu).unwrap();
    let cfg = ObjectiveConfig {
        lambda_sparsity: 0.05,
        beta_pred: 3.0,
        mc_samples: 2,
        ..ObjectiveConfig::default()
    };
    let eval = |m: &ClapModel| -> f64 {
        objective(
            m,
            &batch,
            &cfg,
            cfg.lambda_sparsity,
            4,
            LossTerms::ALL,
            &mut ForwardCtx::eval(),
        )
        .unwrap()
        .objective
        .to_scalar::<f64>()
        .unwrap()
    };
    let out = objective(
        &m,
        &batch,
        &cfg,
        cfg.lambda_sparsity,
        4,
        LossTerms::ALL,
        &mut ForwardCtx::eval(),
    )
    .unwrap();
    let grads = out.objective.backward().unwrap();
    let eps = 1e-4;
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    let vars: Vec<(String, candle_core::Var)> = m
        .store
        .vars()
        .map(|(p, v)| (p.clone(), v.clone()))
        .collect();
    for (path, var) in &vars {
        let g = grads
            .get(var.as_tensor())
            .unwrap_or_else(|| panic!("no gradient for {path}"));
        let g = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = var
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let shape = var.dims().to_vec();
        for i in (0..base.len()).step_by((base.len() / 3).max(1)) {
            let at = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                m.store
                    .assign(
                        path,
                        &Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap(),
                    )
                    .unwrap();
                eval(&m)
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            m.store
                .assign(
                    path,
                    &Tensor::from_vec(base.clone(), shape.clone(), &Device::Cpu).unwrap(),
                )
                .unwrap();
            num.push(fd);
            ana.push(g[i]);
        }
    }
    let diff: f64 = num
        .iter()
        .zip(&ana)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm;
    assert!(
        rel < 1e-3,
        "relative gradient error {rel:e} over {} entries",
        num.len()
    );
}

pub fn gaussian(n: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, k), |_| StandardNormal.sample(&mut r))
}

/// Permuting, rescaling and shifting the estimated latents leaves the
/// alignment unchanged, and the matching follows the permutation.
pub fn alignment_invariance(seed: u64, scales: &[f64], shifts: &[f64]) {
    let z = gaussian(400, 3, seed);
    let noise = gaussian(400, 5, seed + 1);
    // true dims plus noise, then two nuisance dims
    let est = Array2::from_shape_fn((400, 5), |(i, j)| {
        if j < 3 {
            z[[i, j]] + 0.3 * noise[[i, j]]
        } else {
            noise[[i, j]]
        }
    });
    let base = align_latents(est.view(), z.view()).unwrap();
    let mut perm: Vec<usize> = (0..5).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let moved = Array2::from_shape_fn((400, 5), |(i, j)| scales[j] * est[[i, perm[j]]] + shifts[j]);
    let rep = align_latents(moved.view(), z.view()).unwrap();
    assert!(
        (rep.mcc - base.mcc).abs() < 1e-12,
        "mcc {} vs {}",
        rep.mcc,
        base.mcc
    );
    for (a, b) in rep.per_dim_corr.iter().zip(&base.per_dim_corr) {
        assert!((a - b).abs() < 1e-12);
    }
    for j in 0..5 {
        assert_eq!(rep.permutation[j], base.permutation[perm[j]]);
    }
}

/// Linear f64 model with three active core columns on the linear benchmark.
pub fn interpret_setup() -> (ClapModel, LabeledDataset) {
    let data = sample_dataset(&presets::linear_benchmark(0), 1000, 2).unwrap();
    let m = linear_model(dims(3, 2, 20, 3), 0.3, DType::F64, 1);
    let eye: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    set(&m, "dec/B", &eye);
    (m, data)
}

/// Local-weight summands plus bias reproduce the classifier logits.
pub fn local_weight_identity() {
    let (m, data) = interpret_setup();
    let idx: Vec<usize> = (0..data.len()).collect();
    let logits = classifier_logits(&m, &data, &idx).unwrap();
    let means = posterior_means(&m, &data).unwrap();
    let mut worst: f64 = 0.0;
    for i in idx {
        let core: Vec<f64> = means.row(i).iter().take(3).copied().collect();
        let lw = local_weights_at(&m, &core).unwrap();
        for (a, b) in lw.logits().iter().zip(&logits[i]) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max deviation {worst:e}");
}

/// Sweeping any style coordinate leaves the classifier output bit-identical.
pub fn style_traversal_invariance() {
    let (m, data) = interpret_setup();
    for row in [3, 17, 404] {
        let x: Vec<f32> = data.x.row(row).to_vec();
        let mu = posterior_mean_of(&m, &x).unwrap();
        let classify = |z: &[f64]| {
            let t = Tensor::from_vec(z[..3].to_vec(), (1, 3), m.device()).unwrap();
            m.classify(&t).unwrap().to_vec2::<f64>().unwrap()
        };
        let base = classify(&mu);
        for style_dim in 3..5 {
            for v in [-4.0, -1.0, 0.5, 3.0] {
                let mut z = mu.clone();
                z[style_dim] = v;
                assert_eq!(classify(&z), base);
            }
        }
    }
}

pub fn file_hash(p: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(p).unwrap()))
}

pub fn small_train_config(steps: u64, mode: &str) -> TrainConfig {
    let mut c = default_config("vector").unwrap();
    c.steps = steps;
    c.batch_size = 32;
    c.mode = mode.into();
    c.eval_every = 10;
    c.eval_rows = 64;
    c.seed = 3;
    c
}

/// Two runs with one seed write byte-identical checkpoints; another seed
/// does not.
pub fn checkpoint_determinism() {
    let d = sample_dataset(&presets::linear_benchmark(0), 300, 1).unwrap();
    let run = |seed: u64| {
        let mut m = ClapModel::new(
            default_model_config("vector", &d.manifest, 0).unwrap(),
            DType::F32,
        )
        .unwrap();
        let mut cfg = small_train_config(25, "clap");
        cfg.seed = seed;
        let dir = tempfile::tempdir().unwrap();
        train(&mut m, &d, &cfg, Some(dir.path())).unwrap();
        file_hash(&dir.path().join(FINAL_CHECKPOINT))
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a, run(4));
}
