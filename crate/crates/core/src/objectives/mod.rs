//! Every term of the CLAP objective: both ELBOs, the KL terms, the group
//! sparsity penalty and their weighted combination. All values are "to
//! maximize"; the trainer negates the total.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    standard_normal, Batch, ClapModel, ForwardCtx, GaussianPosterior, MixturePrior,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityMode {
    /// Group-norm surrogate enters the training objective.
    #[default]
    Surrogate,
    /// No penalty in training; the indicator count is reported at evaluation.
    IndicatorEvalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// `λ · (1 − step / total_steps)`.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda_sparsity: f64,
    pub beta_pred: f64,
    #[serde(default = "one")]
    pub mc_samples: usize,
    #[serde(default)]
    pub sparsity_mode: SparsityMode,
    #[serde(default)]
    pub lambda_schedule: LambdaSchedule,
}

fn one() -> usize {
    1
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_sparsity: 0.01,
            beta_pred: 1.0,
            mc_samples: 1,
            sparsity_mode: SparsityMode::Surrogate,
            lambda_schedule: LambdaSchedule::Constant,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sparsity >= 0.0 && self.lambda_sparsity.is_finite()) {
            return Err(Error::InvalidArgument(
                "lambda_sparsity must be finite and ≥ 0".into(),
            ));
        }
        if !(self.beta_pred > 0.0 && self.beta_pred.is_finite()) {
            return Err(Error::InvalidArgument("beta_pred must be > 0".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Training-time penalty weight at `step` of `total_steps`.
    pub fn lambda_at(&self, step: u64, total_steps: u64) -> f64 {
        if self.sparsity_mode == SparsityMode::IndicatorEvalOnly {
            return 0.0;
        }
        match self.lambda_schedule {
            LambdaSchedule::Constant => self.lambda_sparsity,
            LambdaSchedule::LinearDecay => {
                let frac = if total_steps == 0 {
                    0.0
                } else {
                    (step as f64 / total_steps as f64).min(1.0)
                };
                self.lambda_sparsity * (1.0 - frac)
            }
        }
    }
}

// ---- KL -------------------------------------------------------------------

/// Closed-form `KL(N(mq, vq) ‖ N(mp, vp))` for diagonal Gaussians, summed
/// over the last axis. Arguments broadcast against each other.
pub fn kl_diag(mq: &Tensor, vq: &Tensor, mp: &Tensor, vp: &Tensor) -> Result<Tensor> {
    let ratio = vq.broadcast_div(vp)?;
    let sq = mq.broadcast_sub(mp)?.sqr()?.broadcast_div(vp)?;
    let t = ((ratio.clone() + sq)? - ratio.log()?)?.affine(0.5, -0.5)?;
    Ok(t.sum(D::Minus1)?)
}

/// Host version of [`kl_diag`] with argument checks.
pub fn kl_diag_gaussians(mq: &[f64], vq: &[f64], mp: &[f64], vp: &[f64]) -> Result<f64> {
    let n = mq.len();
    if vq.len() != n || mp.len() != n || vp.len() != n {
        return Err(Error::Shape("KL arguments differ in length".into()));
    }
    if vq.iter().chain(vp).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "KL needs strictly positive variances".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            0.5 * (vq[i] / vp[i] + (mq[i] - mp[i]).powi(2) / vp[i] - 1.0 - (vq[i] / vp[i]).ln())
        })
        .sum())
}

/// `log N(z; mean, diag(var))` per row.
pub fn diag_gaussian_log_prob(z: &Tensor, mean: &Tensor, var: &Tensor) -> Result<Tensor> {
    let k = z.dims()[z.rank() - 1] as f64;
    let quad = z.broadcast_sub(mean)?.sqr()?.broadcast_div(var)?;
    let t = (quad + var.log()?)?.sum(D::Minus1)?;
    Ok(t.affine(-0.5, -0.5 * k * (2.0 * PI).ln())?)
}

/// Draws `mc_samples` reparameterised samples from `q`.
fn draws(q: &GaussianPosterior, seed: u64, tag: &str, samples: usize) -> Result<Vec<Tensor>> {
    let mut r = rng::stream(seed, tag);
    (0..samples)
        .map(|_| {
            let eps = standard_normal(&mut r, q.mean.dims(), &q.mean)?;
            q.reparameterize(&eps)
        })
        .collect()
}

/// Monte Carlo estimate of `E_q[log q(z) − log p_θp(z)]` per row.
pub fn kl_to_mixture(
    q: &GaussianPosterior,
    prior: &MixturePrior,
    seed: u64,
    mc_samples: usize,
) -> Result<Tensor> {
    if prior.num_components() == 0 {
        return Err(Error::InvalidArgument("mixture has no components".into()));
    }
    let zs = draws(q, seed, "objective/kl_mixture", mc_samples.max(1))?;
    mean_of(zs.iter().map(|z| kl_mixture_at(q, prior, z)))
}

fn kl_mixture_at(q: &GaussianPosterior, prior: &MixturePrior, z: &Tensor) -> Result<Tensor> {
    Ok((diag_gaussian_log_prob(z, &q.mean, &q.var)? - prior.log_prob(z)?)?)
}

fn mean_of(it: impl Iterator<Item = Result<Tensor>>) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    let mut n = 0usize;
    for t in it {
        let t = t?;
        acc = Some(match acc {
            None => t,
            Some(a) => (a + t)?,
        });
        n += 1;
    }
    let acc = acc.ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    Ok(acc.affine(1.0 / n as f64, 0.0)?)
}

// ---- ELBOs ----------------------------------------------------------------

/// Per-row terms of the prediction-branch ELBO. `pred` already carries the
/// `beta_pred` weight; `total = recon − kl + pred`.
#[derive(Debug, Clone)]
pub struct ElboP {
    pub recon: Tensor,
    pub kl: Tensor,
    pub pred: Tensor,
    pub total: Tensor,
}

/// Per-row terms of the concept-branch ELBO; `kl = kl_core + kl_style`.
#[derive(Debug, Clone)]
pub struct ElboCl {
    pub recon: Tensor,
    pub kl_core: Tensor,
    pub kl_style: Tensor,
    pub kl: Tensor,
    pub total: Tensor,
}

/// Prediction-branch ELBO from a given posterior. The mixture KL is estimated
/// with the same samples as the reconstruction.
pub fn elbo_p_from(
    model: &ClapModel,
    q: &GaussianPosterior,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<ElboP> {
    let zs = draws(q, seed, "objective/elbo_p", cfg.mc_samples.max(1))?;
    let k_c = q.k_c;
    let mut recon = Vec::new();
    let mut kl = Vec::new();
    let mut pred = Vec::new();
    for z in &zs {
        recon.push(model.decoder.log_likelihood(&batch.x, z));
        kl.push(kl_mixture_at(q, &model.prior_p, z));
        pred.push(
            model
                .classifier
                .log_likelihood(&batch.y, &z.narrow(1, 0, k_c)?),
        );
    }
    let recon = mean_of(recon.into_iter())?;
    let kl = mean_of(kl.into_iter())?;
    let pred = mean_of(pred.into_iter())?.affine(cfg.beta_pred, 0.0)?;
    let total = ((&recon - &kl)? + &pred)?;
    Ok(ElboP {
        recon,
        kl,
        pred,
        total,
    })
}

/// Concept-branch ELBO from a given posterior, with the label-conditional
/// core prior and a fixed standard-normal style prior.
pub fn elbo_cl_from(
    model: &ClapModel,
    q: &GaussianPosterior,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<ElboCl> {
    let zs = draws(q, seed, "objective/elbo_cl", cfg.mc_samples.max(1))?;
    let recon = mean_of(zs.iter().map(|z| model.decoder.log_likelihood(&batch.x, z)))?;
    let (pm, pv) = model.prior_cl.core_moments(&batch.label_idx)?;
    let kl_core = kl_diag(&q.core_mean()?, &q.core_var()?, &pm, &pv)?;
    let kl_style = if q.k_s() > 0 {
        let sm = q.style_mean()?;
        let zeros = sm.zeros_like()?;
        let ones = sm.ones_like()?;
        kl_diag(&sm, &q.style_var()?, &zeros, &ones)?
    } else {
        kl_core.zeros_like()?
    };
    let kl = (&kl_core + &kl_style)?;
    let total = (&recon - &kl)?;
    Ok(ElboCl {
        recon,
        kl_core,
        kl_style,
        kl,
        total,
    })
}

/// `L_p` per row, with the model in evaluation mode.
pub fn elbo_p(model: &ClapModel, batch: &Batch, cfg: &ObjectiveConfig, seed: u64) -> Result<ElboP> {
    let q = model.encode_p(&batch.x, &mut ForwardCtx::eval())?;
    elbo_p_from(model, &q, batch, cfg, seed)
}

/// `L_cl` per row, with the model in evaluation mode.
pub fn elbo_cl(
    model: &ClapModel,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<ElboCl> {
    let q = model.encode_cl(&batch.x, &batch.y, &mut ForwardCtx::eval())?;
    elbo_cl_from(model, &q, batch, cfg, seed)
}

// ---- sparsity ---------------------------------------------------------------

fn check_bc(b: &Tensor, c: &Tensor, k_c: usize) -> Result<()> {
    let (br, bc) = b.dims2()?;
    let (_, cc) = c.dims2()?;
    if br != bc || k_c > bc {
        return Err(Error::Shape(format!(
            "B must be k × k with k ≥ k_c, got {:?}",
            b.dims()
        )));
    }
    if cc != k_c {
        return Err(Error::Shape(format!(
            "C has {cc} columns but the core block has {k_c}"
        )));
    }
    Ok(())
}

/// Smallest squared norm at which the group norm is exactly `√s`; below it
/// the value is `s / GROUP_EPS`, keeping the gradient finite at zero.
const GROUP_EPS: f64 = 1e-12;

/// `Σ_{i<k_c} ‖(B_{:,i}; C_{:,i})‖₂` as a differentiable scalar.
pub fn sparsity_surrogate(b: &Tensor, c: &Tensor, k_c: usize) -> Result<Tensor> {
    check_bc(b, c, k_c)?;
    let stacked = Tensor::cat(&[&b.narrow(1, 0, k_c)?, &c.to_dtype(b.dtype())?], 0)?;
    let s = stacked.sqr()?.sum(0)?;
    let denom = s.maximum(GROUP_EPS * GROUP_EPS)?.sqrt()?;
    Ok(s.div(&denom)?.sum_all()?)
}

/// [`sparsity_surrogate`] on host matrices.
pub fn sparsity_surrogate_host(b: &[Vec<f64>], c: &[Vec<f64>], k_c: usize) -> Result<f64> {
    Ok(column_norms(b, c, k_c)?.iter().take(k_c).sum())
}

/// Stacked norms for core columns and `B`-only norms for style columns.
pub fn column_norms(b: &[Vec<f64>], c: &[Vec<f64>], k_c: usize) -> Result<Vec<f64>> {
    let k = b.len();
    if b.iter().any(|r| r.len() != k) || k_c > k {
        return Err(Error::Shape("B must be k × k with k ≥ k_c".into()));
    }
    if c.iter().any(|r| r.len() != k_c) {
        return Err(Error::Shape(format!("C rows must have {k_c} columns")));
    }
    Ok((0..k)
        .map(|j| {
            let mut s: f64 = b.iter().map(|r| r[j] * r[j]).sum();
            if j < k_c {
                s += c.iter().map(|r| r[j] * r[j]).sum::<f64>();
            }
            s.sqrt()
        })
        .collect())
}

/// Number of columns whose norm exceeds `tol` (core columns stacked with
/// `C`, style columns from `B` alone). `None` uses `1e-2 ×` the largest norm.
pub fn sparsity_count(
    b: &[Vec<f64>],
    c: &[Vec<f64>],
    k_c: usize,
    tol: Option<f64>,
) -> Result<usize> {
    let norms = column_norms(b, c, k_c)?;
    let tol = match tol {
        Some(t) if t >= 0.0 => t,
        Some(_) => return Err(Error::InvalidArgument("tol must be ≥ 0".into())),
        None => 1e-2 * norms.iter().cloned().fold(0.0, f64::max),
    };
    Ok(norms.iter().filter(|&&n| n > tol).count())
}

// ---- combined objective -----------------------------------------------------

/// Which summands of the full objective to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub concept_branch: bool,
    pub sparsity: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        concept_branch: true,
        sparsity: true,
    };
}

/// Batch-mean objective (to maximize) plus its named summands.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub objective: Tensor,
    pub breakdown: BTreeMap<String, f64>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `mean(L_p + L_cl) − λ ρ` with the given `λ`, terms and forward context.
pub fn objective(
    model: &ClapModel,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    lambda: f64,
    seed: u64,
    terms: LossTerms,
    ctx: &mut ForwardCtx,
) -> Result<LossOutput> {
    cfg.validate()?;
    let mut bd = BTreeMap::new();
    let (ep, ecl) = if terms.concept_branch {
        let (qp, qcl) = model.encode_both(&batch.x, &batch.y, ctx)?;
        (
            elbo_p_from(model, &qp, batch, cfg, seed)?,
            Some(elbo_cl_from(model, &qcl, batch, cfg, seed)?),
        )
    } else {
        let qp = model.encode_p(&batch.x, ctx)?;
        (elbo_p_from(model, &qp, batch, cfg, seed)?, None)
    };
    let lp = ep.total.mean_all()?;
    bd.insert("recon_p".into(), scalar(&ep.recon.mean_all()?)?);
    bd.insert("kl_p".into(), scalar(&ep.kl.mean_all()?)?);
    bd.insert("pred".into(), scalar(&ep.pred.mean_all()?)?);
    let mut obj = lp.clone();
    let (mut recon_cl, mut kl_cl) = (0.0, 0.0);
    if let Some(e) = &ecl {
        obj = (obj + e.total.mean_all()?)?;
        recon_cl = scalar(&e.recon.mean_all()?)?;
        kl_cl = scalar(&e.kl.mean_all()?)?;
    }
    bd.insert("recon_cl".into(), recon_cl);
    bd.insert("kl_cl".into(), kl_cl);
    let mut penalty = 0.0;
    if terms.sparsity && lambda > 0.0 {
        let rho = sparsity_surrogate(
            model.decoder.b.as_tensor(),
            model.classifier.c.as_tensor(),
            model.dims().k_c,
        )?;
        let weighted = rho.affine(lambda, 0.0)?;
        penalty = scalar(&weighted)?;
        obj = (obj - weighted)?;
    }
    bd.insert("sparsity".into(), penalty);
    let elbo_p = bd["recon_p"] - bd["kl_p"] + bd["pred"];
    let elbo_cl = recon_cl - kl_cl;
    bd.insert("elbo_p".into(), elbo_p);
    bd.insert("elbo_cl".into(), elbo_cl);
    bd.insert("total".into(), elbo_p + elbo_cl - penalty);
    Ok(LossOutput {
        objective: obj,
        breakdown: bd,
    })
}

/// Full CLAP objective in evaluation mode with constant `λ`.
pub fn clap_loss(
    model: &ClapModel,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<LossOutput> {
    let lambda = if cfg.sparsity_mode == SparsityMode::Surrogate {
        cfg.lambda_sparsity
    } else {
        0.0
    };
    objective(
        model,
        batch,
        cfg,
        lambda,
        seed,
        LossTerms::ALL,
        &mut ForwardCtx::eval(),
    )
}
