use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mixing::MixingFunction;
use crate::error::{Error, Result};

/// One element of the label space with its probability and the label-specific
/// core distribution `N(core_mean, diag(core_var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub y: Vec<u8>,
    /// Probability of this label vector. When every entry omits it the
    /// distribution is uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    pub core_mean: Vec<f64>,
    pub core_var: Vec<f64>,
}

/// Ground-truth parameters of the anti-causal model
/// `X = f*(Z) + ε`, `Z | Y=y ~ N((μ*_y, μ*), blockdiag(D*_y, G*))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub k_core_true: usize,
    pub k_style_true: usize,
    pub label_space: Vec<LabelEntry>,
    pub style_mean: Vec<f64>,
    pub style_cov: Vec<Vec<f64>>,
    pub mixing: MixingFunction,
    pub noise_std: f64,
}

impl GenerativeSpec {
    pub fn num_labels(&self) -> usize {
        self.label_space.first().map_or(0, |e| e.y.len())
    }

    pub fn latent_dim(&self) -> usize {
        self.k_core_true + self.k_style_true
    }

    pub fn obs_dim(&self) -> usize {
        self.mixing.output_dim()
    }

    /// Probabilities of the label-space entries, in order.
    pub fn label_probs(&self) -> Vec<f64> {
        if self.label_space.iter().all(|e| e.prob.is_none()) {
            let m = self.label_space.len() as f64;
            return vec![1.0 / m; self.label_space.len()];
        }
        self.label_space
            .iter()
            .map(|e| e.prob.unwrap_or(0.0))
            .collect()
    }

    pub fn style_cov_matrix(&self) -> DMatrix<f64> {
        let k = self.k_style_true;
        DMatrix::from_fn(k, k, |i, j| self.style_cov[i][j])
    }

    pub fn style_mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.style_mean)
    }

    /// Position of `y` in the label space.
    pub fn label_index(&self, y: &[u8]) -> Option<usize> {
        self.label_space.iter().position(|e| e.y == y)
    }

    /// Full latent mean and covariance given the label-space entry `idx`.
    pub fn latent_moments(&self, idx: usize) -> (DVector<f64>, DMatrix<f64>) {
        let e = &self.label_space[idx];
        let (kc, ks) = (self.k_core_true, self.k_style_true);
        let mut mean = DVector::zeros(kc + ks);
        let mut cov = DMatrix::zeros(kc + ks, kc + ks);
        for i in 0..kc {
            mean[i] = e.core_mean[i];
            cov[(i, i)] = e.core_var[i];
        }
        for i in 0..ks {
            mean[kc + i] = self.style_mean[i];
            for j in 0..ks {
                cov[(kc + i, kc + j)] = self.style_cov[i][j];
            }
        }
        (mean, cov)
    }

    /// Structural validation. Zero variances are accepted so degenerate
    /// fixtures can be sampled; [`GenerativeSpec::validate_strict`] enforces
    /// the strict positivity the model assumes.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.label_space.is_empty() {
            return bad("label space is empty".into());
        }
        if self.k_core_true == 0 {
            return bad("k_core_true must be positive".into());
        }
        let nl = self.num_labels();
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.label_space {
            if e.y.len() != nl {
                return bad("label vectors have different lengths".into());
            }
            if e.y.iter().any(|&v| v > 1) {
                return bad(format!("label vector {:?} is not binary", e.y));
            }
            if !seen.insert(e.y.clone()) {
                return bad(format!("duplicate label vector {:?}", e.y));
            }
            if e.core_mean.len() != self.k_core_true || e.core_var.len() != self.k_core_true {
                return bad(format!(
                    "core moments for {:?} must have length {}",
                    e.y, self.k_core_true
                ));
            }
            if e.core_var.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return bad(format!(
                    "core variances for {:?} must be finite and nonnegative",
                    e.y
                ));
            }
            if e.core_mean.iter().any(|v| !v.is_finite()) {
                return bad("core means must be finite".into());
            }
        }
        let has_prob = self.label_space.iter().filter(|e| e.prob.is_some()).count();
        if has_prob != 0 && has_prob != self.label_space.len() {
            return bad("either all or none of the label entries carry a probability".into());
        }
        let probs = self.label_probs();
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return bad("label probabilities must be nonnegative".into());
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("label probabilities sum to {total}, expected 1"));
        }
        let ks = self.k_style_true;
        if self.style_mean.len() != ks
            || self.style_cov.len() != ks
            || self.style_cov.iter().any(|r| r.len() != ks)
        {
            return bad(format!("style mean/covariance must have dimension {ks}"));
        }
        let g = self.style_cov_matrix();
        if (&g - g.transpose()).abs().max() > 1e-12 {
            return bad("style covariance is not symmetric".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise_std must be finite and nonnegative".into());
        }
        self.mixing.validate(self.k_core_true, self.k_style_true)?;
        Ok(())
    }

    /// [`validate`](Self::validate) plus strictly positive core variances and a
    /// positive-definite style covariance.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        if self
            .label_space
            .iter()
            .any(|e| e.core_var.iter().any(|&v| v <= 0.0))
        {
            return Err(Error::InvalidSpec(
                "core variances must be strictly positive".into(),
            ));
        }
        if self.k_style_true > 0 && self.style_cov_matrix().cholesky().is_none() {
            return Err(Error::InvalidSpec(
                "style covariance is not positive definite".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}
