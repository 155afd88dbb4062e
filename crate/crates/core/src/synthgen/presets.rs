//! Ready-made generative specs used by the CLI presets and the test suites.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mixing::MixingFunction;
use super::render::ToyImageConfig;
use super::spec::{GenerativeSpec, LabelEntry};
use crate::error::{Error, Result};
use crate::rng;

pub const NAMES: &[&str] = &[
    "linear-benchmark",
    "toy-image",
    "tractable-1d",
    "tractable-2d",
];

pub fn by_name(name: &str, seed: u64) -> Result<GenerativeSpec> {
    match name {
        "linear-benchmark" => Ok(linear_benchmark(seed)),
        "toy-image" => Ok(toy_image_benchmark()),
        "tractable-1d" => Ok(tractable_1d()),
        "tractable-2d" => Ok(tractable_2d()),
        other => Err(Error::UnknownName {
            kind: "spec preset",
            name: other.into(),
            known: NAMES.join(", "),
        }),
    }
}

/// All binary vectors of length `nl`, label `i` at bit `i`.
pub fn binary_label_space(nl: usize) -> Vec<Vec<u8>> {
    (0..1usize << nl)
        .map(|c| (0..nl).map(|i| ((c >> i) & 1) as u8).collect())
        .collect()
}

/// Label `i` toggles core coordinate `i` between two Gaussians: mean
/// `±mean_shift` and variance `var_off[i]` / `var_on[i]`.
fn per_label_core(nl: usize, mean_shift: f64, var_off: &[f64], var_on: &[f64]) -> Vec<LabelEntry> {
    binary_label_space(nl)
        .into_iter()
        .map(|y| {
            let core_mean = y
                .iter()
                .map(|&b| if b == 1 { mean_shift } else { -mean_shift })
                .collect();
            let core_var = y
                .iter()
                .enumerate()
                .map(|(i, &b)| if b == 1 { var_on[i] } else { var_off[i] })
                .collect();
            LabelEntry {
                y,
                prob: None,
                core_mean,
                core_var,
            }
        })
        .collect()
}

/// Three binary labels, three core and two correlated style latents, an
/// injective random 20×5 linear mixing and small isotropic noise. The
/// variance ratios between `y = (1,1,1)` and `y = (0,0,0)` are
/// `(4, 0.25, 4.5)`, which satisfies the strict heterogeneity condition.
pub fn linear_benchmark(seed: u64) -> GenerativeSpec {
    let mut r = rng::stream(seed, "presets/linear-benchmark");
    let (k, obs) = (5, 20);
    let scale = 1.0 / (k as f64).sqrt();
    let matrix = (0..obs)
        .map(|_| {
            (0..k)
                .map(|_| scale * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    GenerativeSpec {
        k_core_true: 3,
        k_style_true: 2,
        label_space: per_label_core(3, 1.5, &[0.3, 1.2, 0.2], &[1.2, 0.3, 0.9]),
        style_mean: vec![0.5, -0.5],
        style_cov: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        mixing: MixingFunction::Linear { matrix },
        noise_std: 0.01,
    }
}

/// Three labels rendered as object hue, size and roundness; style is the
/// background hue and horizontal offset.
pub fn toy_image_benchmark() -> GenerativeSpec {
    GenerativeSpec {
        k_core_true: 3,
        k_style_true: 2,
        label_space: per_label_core(3, 1.5, &[0.15, 0.4, 0.25], &[0.4, 0.15, 0.1]),
        style_mean: vec![0.0, 0.0],
        style_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        mixing: MixingFunction::ToyImage(ToyImageConfig::default()),
        noise_std: 0.0,
    }
}

/// One label, one core latent, identity mixing, unit noise:
/// `Z | y=0 ~ N(0,1)`, `Z | y=1 ~ N(2,1)`, `X = Z + ε`, `ε ~ N(0,1)`.
pub fn tractable_1d() -> GenerativeSpec {
    GenerativeSpec {
        k_core_true: 1,
        k_style_true: 0,
        label_space: vec![
            LabelEntry {
                y: vec![0],
                prob: None,
                core_mean: vec![0.0],
                core_var: vec![1.0],
            },
            LabelEntry {
                y: vec![1],
                prob: None,
                core_mean: vec![2.0],
                core_var: vec![1.0],
            },
        ],
        style_mean: vec![],
        style_cov: vec![],
        mixing: MixingFunction::Linear {
            matrix: vec![vec![1.0]],
        },
        noise_std: 1.0,
    }
}

/// One core and one style latent mixed linearly into two observed
/// coordinates.
pub fn tractable_2d() -> GenerativeSpec {
    GenerativeSpec {
        k_core_true: 1,
        k_style_true: 1,
        label_space: vec![
            LabelEntry {
                y: vec![0],
                prob: Some(0.4),
                core_mean: vec![-1.0],
                core_var: vec![0.5],
            },
            LabelEntry {
                y: vec![1],
                prob: Some(0.6),
                core_mean: vec![1.0],
                core_var: vec![2.0],
            },
        ],
        style_mean: vec![0.3],
        style_cov: vec![vec![0.8]],
        mixing: MixingFunction::Linear {
            matrix: vec![vec![1.0, 0.5], vec![-0.3, 1.0]],
        },
        noise_std: 0.5,
    }
}
