//! Measurements of the model against the claims it is built to satisfy:
//! ground-truth alignment up to permutation and scaling, agreement of the two
//! encoders, recovery of the minimal support, and prediction optimality.

mod alignment;
mod bayes;
pub mod hungarian;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use alignment::{align_latents, AlignmentReport};
pub use bayes::{bayes_optimal_accuracy, BayesAccuracy};

use crate::error::{Error, Result};
use crate::model::{Batch, ClapModel, ForwardCtx};
use crate::objectives::column_norms;
use crate::synthgen::LabeledDataset;

/// Rows per forward pass when sweeping a dataset.
const CHUNK: usize = 1024;

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(CHUNK)
        .map(move |s| (s..(s + CHUNK).min(n)).collect())
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

/// Posterior means of `q(z | x)` for every row, `n × k`.
pub fn posterior_means(model: &ClapModel, data: &LabeledDataset) -> Result<Array2<f64>> {
    let k = model.dims().k();
    let mut out = Vec::with_capacity(data.len() * k);
    for idx in chunks(data.len()) {
        let b = Batch::from_dataset(data, &idx, model.dtype(), model.device())?;
        let q = model.encode_p(&b.x, &mut ForwardCtx::eval())?;
        out.extend(to_rows(&q.mean)?.into_iter().flatten());
    }
    Ok(Array2::from_shape_vec((data.len(), k), out).expect("row-major means"))
}

/// Core posterior means of both branches, each `n × k_c`.
pub fn core_means_both(
    model: &ClapModel,
    data: &LabeledDataset,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let k_c = model.dims().k_c;
    let (mut p, mut cl) = (Vec::new(), Vec::new());
    for idx in chunks(data.len()) {
        let b = Batch::from_dataset(data, &idx, model.dtype(), model.device())?;
        let (qp, qcl) = model.encode_both(&b.x, &b.y, &mut ForwardCtx::eval())?;
        p.extend(to_rows(&qp.core_mean()?)?.into_iter().flatten());
        cl.extend(to_rows(&qcl.core_mean()?)?.into_iter().flatten());
    }
    let n = data.len();
    Ok((
        Array2::from_shape_vec((n, k_c), p).expect("shape"),
        Array2::from_shape_vec((n, k_c), cl).expect("shape"),
    ))
}

/// Core indices whose stacked `(B; C)` column norm exceeds `tol ×` the
/// largest stacked core norm.
pub fn active_core_columns(model: &ClapModel, tol: f64) -> Result<Vec<usize>> {
    let (b, c) = model.bottleneck_matrices()?;
    active_core_columns_of(&b, &c, model.dims().k_c, tol)
}

pub fn active_core_columns_of(
    b: &[Vec<f64>],
    c: &[Vec<f64>],
    k_c: usize,
    tol: f64,
) -> Result<Vec<usize>> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument("tol must be ≥ 0".into()));
    }
    let norms = column_norms(b, c, k_c)?;
    let core = &norms[..k_c];
    let max = core.iter().cloned().fold(0.0, f64::max);
    Ok((0..k_c)
        .filter(|&i| core[i] > tol * max && core[i] > 0.0)
        .collect())
}

/// Default relative tolerance for active columns.
pub const ACTIVE_TOL: f64 = 1e-2;

/// Mean over `dims` of the RMS difference between the two branches' core
/// means, each divided by the standard deviation (over the dataset) of the
/// prediction branch's mean in that dim. A dim with zero spread is divided
/// by 1.
pub fn posterior_agreement_on(
    model: &ClapModel,
    data: &LabeledDataset,
    dims: &[usize],
) -> Result<f64> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no dims to compare".into()));
    }
    let (p, cl) = core_means_both(model, data)?;
    let n = p.nrows() as f64;
    let mut total = 0.0;
    for &d in dims {
        let a = p.column(d);
        let b = cl.column(d);
        let rms = (a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let mean = a.sum() / n;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        total += rms / if sd > 1e-12 { sd } else { 1.0 };
    }
    Ok(total / dims.len() as f64)
}

/// [`posterior_agreement_on`] over the active core columns (all core dims
/// when none is active).
pub fn posterior_agreement(model: &ClapModel, data: &LabeledDataset) -> Result<f64> {
    let mut dims = active_core_columns(model, ACTIVE_TOL)?;
    if dims.is_empty() {
        dims = (0..model.dims().k_c).collect();
    }
    posterior_agreement_on(model, data, &dims)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub accuracy_per_label: Vec<f64>,
    pub mean_accuracy: f64,
    /// Fraction of rows with every label correct.
    pub joint_accuracy: f64,
}

/// Accuracy of `classify(encode_p(x).core_mean)` thresholded at 0.5.
pub fn prediction_metrics(model: &ClapModel, data: &LabeledDataset) -> Result<PredictionMetrics> {
    let nl = model.dims().num_labels;
    if data.y.ncols() != nl {
        return Err(Error::Shape(format!(
            "dataset has {} labels, model {nl}",
            data.y.ncols()
        )));
    }
    let mut hits = vec![0usize; nl];
    let mut joint = 0usize;
    for idx in chunks(data.len()) {
        let b = Batch::from_dataset(data, &idx, model.dtype(), model.device())?;
        let probs = to_rows(&model.predict_proba(&b.x)?)?;
        for (row, &i) in probs.iter().zip(&idx) {
            let mut all = true;
            for (l, p) in row.iter().enumerate() {
                let ok = ((*p >= 0.5) as u8) == data.y[[i, l]];
                hits[l] += ok as usize;
                all &= ok;
            }
            joint += all as usize;
        }
    }
    let n = data.len().max(1) as f64;
    let accuracy_per_label: Vec<f64> = hits.iter().map(|&h| h as f64 / n).collect();
    let mean_accuracy = accuracy_per_label.iter().sum::<f64>() / nl as f64;
    Ok(PredictionMetrics {
        accuracy_per_label,
        mean_accuracy,
        joint_accuracy: joint as f64 / n,
    })
}

/// Evaluation report as written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<Option<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_dim_corr: Option<Vec<f64>>,
    pub posterior_agreement: f64,
    pub active_core_columns: Vec<usize>,
    pub accuracy_per_label: Vec<f64>,
    pub mean_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bayes_accuracy: Option<BayesAccuracy>,
}

/// Full report; alignment fields appear iff the dataset carries ground-truth
/// core latents.
pub fn evaluate(
    model: &ClapModel,
    data: &LabeledDataset,
    bayes: Option<BayesAccuracy>,
) -> Result<EvaluationReport> {
    let active = active_core_columns(model, ACTIVE_TOL)?;
    let pm = prediction_metrics(model, data)?;
    let agreement = posterior_agreement(model, data)?;
    let mut rep = EvaluationReport {
        mcc: None,
        permutation: None,
        scales: None,
        per_dim_corr: None,
        posterior_agreement: agreement,
        active_core_columns: active,
        accuracy_per_label: pm.accuracy_per_label,
        mean_accuracy: pm.mean_accuracy,
        bayes_accuracy: bayes,
    };
    if let Some(zt) = &data.z_core {
        if zt.ncols() <= model.dims().k_c {
            let means = posterior_means(model, data)?;
            let core = means.slice(ndarray::s![.., ..model.dims().k_c]).to_owned();
            let zt = zt.mapv(|v| v as f64);
            let al = align_latents(core.view(), zt.view())?;
            rep.mcc = Some(al.mcc);
            rep.permutation = Some(al.permutation);
            rep.scales = Some(al.scales);
            rep.per_dim_corr = Some(al.per_dim_corr);
        }
    }
    Ok(rep)
}
