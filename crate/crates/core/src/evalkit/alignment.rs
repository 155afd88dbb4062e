use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::hungarian::assign_max_weight;
use crate::error::{Error, Result};

/// Matching of estimated latent dims to ground-truth dims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// For each estimated dim, the ground-truth dim it was matched to.
    pub permutation: Vec<Option<usize>>,
    /// For each estimated dim, the least-squares scale `s` in
    /// `ẑ_i ≈ s · z_{P(i)}` (centred), for matched dims.
    pub scales: Vec<Option<f64>>,
    /// Absolute Pearson correlation per ground-truth dim after matching.
    pub per_dim_corr: Vec<f64>,
    /// Mean of `per_dim_corr`.
    pub mcc: f64,
    /// Estimated dims used by the matching, ascending.
    pub matched_subset: Vec<usize>,
    /// Estimated dims with zero variance (their correlations are set to 0).
    pub zero_variance: Vec<usize>,
}

fn centred(col: ArrayView1<f64>) -> (Vec<f64>, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (c, ss)
}

/// Aligns `z_hat` (n × m) to `z_true` (n × k, `m ≥ k`) by maximum-weight
/// matching on absolute Pearson correlations.
pub fn align_latents(z_hat: ArrayView2<f64>, z_true: ArrayView2<f64>) -> Result<AlignmentReport> {
    let (n, m) = z_hat.dim();
    let (nt, k) = z_true.dim();
    if n != nt {
        return Err(Error::Shape(format!("z_hat has {n} rows, z_true {nt}")));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(
            "alignment needs at least 3 rows".into(),
        ));
    }
    if m < k || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ k* ≤ m, got k* = {k}, m = {m}"
        )));
    }
    let hats: Vec<(Vec<f64>, f64)> = (0..m).map(|i| centred(z_hat.column(i))).collect();
    let trues: Vec<(Vec<f64>, f64)> = (0..k).map(|j| centred(z_true.column(j))).collect();
    let zero_variance: Vec<usize> = (0..m).filter(|&i| !(hats[i].1 > 0.0)).collect();
    let cov = |i: usize, j: usize| {
        hats[i]
            .0
            .iter()
            .zip(&trues[j].0)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    // corr[j][i]: ground-truth dim j against estimated dim i.
    let mut corr = vec![vec![0.0; m]; k];
    let mut covs = vec![vec![0.0; m]; k];
    for j in 0..k {
        for i in 0..m {
            let c = cov(i, j);
            covs[j][i] = c;
            let d = (hats[i].1 * trues[j].1).sqrt();
            corr[j][i] = if d > 0.0 { (c / d).abs().min(1.0) } else { 0.0 };
        }
    }
    let assignment = assign_max_weight(&corr);
    let mut permutation = vec![None; m];
    let mut scales = vec![None; m];
    let mut per_dim_corr = vec![0.0; k];
    for (j, &i) in assignment.iter().enumerate() {
        permutation[i] = Some(j);
        per_dim_corr[j] = corr[j][i];
        scales[i] = if trues[j].1 > 0.0 {
            Some(covs[j][i] / trues[j].1)
        } else {
            None
        };
    }
    let mut matched_subset = assignment.clone();
    matched_subset.sort_unstable();
    let mcc = per_dim_corr.iter().sum::<f64>() / k as f64;
    Ok(AlignmentReport {
        permutation,
        scales,
        per_dim_corr,
        mcc,
        matched_subset,
        zero_variance,
    })
}
