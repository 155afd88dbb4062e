use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{linear_marginal, sample_dataset, GenerativeSpec, MixingFunction};

/// Monte Carlo accuracy of the Bayes classifier `argmax_y p(y) p*(x | y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesAccuracy {
    /// Fraction of rows whose full label vector is recovered.
    pub joint: f64,
    /// Per-label accuracy of the marginal rule `argmax_{y_l} p(y_l | x)`.
    pub per_label: Vec<f64>,
    /// Mean of `per_label`.
    pub mean_per_label: f64,
    pub n: usize,
}

struct Component {
    log_prior: f64,
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let u = self
            .chol_l
            .solve_lower_triangular(&d)
            .expect("nonsingular factor");
        self.log_prior + self.log_norm - 0.5 * u.norm_squared()
    }
}

/// Bayes-optimal accuracy on `n` fresh rows drawn from `spec` with `seed`.
/// Needs a linear mixing with a nonsingular observation marginal.
pub fn bayes_optimal_accuracy(spec: &GenerativeSpec, n: usize, seed: u64) -> Result<BayesAccuracy> {
    if !matches!(spec.mixing, MixingFunction::Linear { .. }) {
        return Err(Error::Unsupported(
            "Bayes accuracy needs a linear mixing function".into(),
        ));
    }
    let probs = spec.label_probs();
    let mut comps = Vec::new();
    for (idx, p) in probs.iter().enumerate() {
        let (mean, cov) = linear_marginal(spec, idx)
            .ok_or_else(|| Error::Unsupported("no linear marginal".into()))?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Unsupported("observation marginal is singular".into()))?;
        let l = chol.l();
        let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = mean.len() as f64;
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet);
        comps.push(Component {
            log_prior: p.max(f64::MIN_POSITIVE).ln(),
            mean,
            chol_l: l,
            log_norm,
        });
    }
    let data = sample_dataset(spec, n, seed)?;
    let nl = spec.num_labels();
    let labels: Vec<&Vec<u8>> = spec.label_space.iter().map(|e| &e.y).collect();
    let (mut joint_hits, mut label_hits) = (0usize, vec![0usize; nl]);
    for r in 0..data.len() {
        let x = DVector::from_iterator(data.x.ncols(), data.x.row(r).iter().map(|&v| v as f64));
        let lp: Vec<f64> = comps.iter().map(|c| c.log_density(&x)).collect();
        let y = data.y.row(r);
        let best = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
        joint_hits += labels[best].iter().zip(y.iter()).all(|(a, b)| a == b) as usize;
        let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in 0..nl {
            let (mut on, mut off) = (0.0, 0.0);
            for (i, v) in lp.iter().enumerate() {
                let w = (v - mx).exp();
                if labels[i][l] == 1 {
                    on += w;
                } else {
                    off += w;
                }
            }
            let pred = (on > off) as u8;
            label_hits[l] += (pred == y[l]) as usize;
        }
    }
    let nf = data.len() as f64;
    let per_label: Vec<f64> = label_hits.iter().map(|&h| h as f64 / nf).collect();
    let mean_per_label = per_label.iter().sum::<f64>() / nl.max(1) as f64;
    Ok(BayesAccuracy {
        joint: joint_hits as f64 / nf,
        per_label,
        mean_per_label,
        n: data.len(),
    })
}
