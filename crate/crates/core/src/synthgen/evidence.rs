//! Exact log-evidence `log p*(x | y)` for tractable specs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::mixing::MixingFunction;
use super::quadrature;
use super::spec::GenerativeSpec;
use crate::error::{Error, Result};

/// Absolute tolerance of the quadrature fallback (on the integrand scaled to
/// unit peak).
pub const QUADRATURE_ABS_TOL: f64 = 1e-6;
const PRIOR_HALF_WIDTH_SD: f64 = 12.0;

/// Log density of `N(mean, cov)` at `x`; `None` if `cov` is not positive
/// definite.
pub fn gaussian_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let ch = cov.clone().cholesky()?;
    let d = x - mean;
    let sol = ch.l().solve_lower_triangular(&d)?;
    let logdet: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Some(-0.5 * (sol.norm_squared() + logdet + x.len() as f64 * (2.0 * PI).ln()))
}

/// Marginal of `x | y` for linear mixing: `N(A m_y, A Σ_y Aᵀ + σ² I)`.
pub fn linear_marginal(
    spec: &GenerativeSpec,
    label_idx: usize,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let a = spec.mixing.linear_matrix()?;
    let (m, s) = spec.latent_moments(label_idx);
    let mean = &a * m;
    let cov =
        &a * s * a.transpose() + DMatrix::identity(a.nrows(), a.nrows()) * spec.noise_std.powi(2);
    Some((mean, cov))
}

fn check_inputs(spec: &GenerativeSpec, x: &[f64], y: &[u8]) -> Result<usize> {
    spec.validate()?;
    if x.len() != spec.obs_dim() {
        return Err(Error::Shape(format!(
            "x has length {}, spec observes {}",
            x.len(),
            spec.obs_dim()
        )));
    }
    spec.label_index(y)
        .ok_or_else(|| Error::InvalidLabel(format!("{y:?} is not in the label space")))
}

/// `log p*(x | y)`. Uses the Gaussian marginal when the mixing is linear and
/// the marginal covariance is nonsingular; otherwise integrates over the
/// latent space numerically, which is only offered for at most two observed
/// (hence latent) coordinates and positive noise.
pub fn exact_log_evidence(spec: &GenerativeSpec, x: &[f64], y: &[u8]) -> Result<f64> {
    let idx = check_inputs(spec, x, y)?;
    if let MixingFunction::Linear { .. } = spec.mixing {
        let (mean, cov) = linear_marginal(spec, idx).expect("linear");
        if let Some(v) = gaussian_log_pdf(&DVector::from_column_slice(x), &mean, &cov) {
            return Ok(v);
        }
    }
    log_evidence_quadrature(spec, x, y)
}

/// Numerical `log ∫ N(x; f*(z), σ² I) p*(z | y) dz` for at most two latent
/// and two observed coordinates.
pub fn log_evidence_quadrature(spec: &GenerativeSpec, x: &[f64], y: &[u8]) -> Result<f64> {
    let idx = check_inputs(spec, x, y)?;
    let k = spec.latent_dim();
    if spec.obs_dim() > 2 || k > 2 {
        return Err(Error::Unsupported(format!(
            "no evidence oracle for nonlinear mixing with obs_dim {} and latent dim {k}",
            spec.obs_dim()
        )));
    }
    if !(spec.noise_std > 0.0) {
        return Err(Error::Unsupported(
            "quadrature evidence needs positive noise".into(),
        ));
    }
    let (m, s) = spec.latent_moments(idx);
    if (0..k).any(|i| !(s[(i, i)] > 0.0)) {
        return Err(Error::Unsupported(
            "quadrature evidence needs positive latent variances".into(),
        ));
    }
    let sd: Vec<f64> = (0..k).map(|i| s[(i, i)].sqrt()).collect();
    let sigma2 = spec.noise_std.powi(2);
    let kc = spec.k_core_true;
    // latent covariance is diagonal whenever k ≤ 2 and k_core ≥ 1
    let log_integrand = |z: &[f64]| -> f64 {
        let (fx, _) = spec.mixing.apply(z, kc);
        let mut lp = 0.0;
        for (xi, fi) in x.iter().zip(&fx) {
            lp += -0.5 * ((xi - fi).powi(2) / sigma2 + (2.0 * PI * sigma2).ln());
        }
        for i in 0..k {
            lp += -0.5 * (((z[i] - m[i]) / sd[i]).powi(2) + (2.0 * PI * sd[i] * sd[i]).ln());
        }
        lp
    };
    let lo: Vec<f64> = (0..k).map(|i| m[i] - PRIOR_HALF_WIDTH_SD * sd[i]).collect();
    let hi: Vec<f64> = (0..k).map(|i| m[i] + PRIOR_HALF_WIDTH_SD * sd[i]).collect();

    // offset so the scaled integrand peaks near one
    const GRID: usize = 161;
    let mut offset = f64::NEG_INFINITY;
    let pt = |i: usize, g: usize| lo[i] + (hi[i] - lo[i]) * g as f64 / (GRID - 1) as f64;
    if k == 1 {
        for g in 0..GRID {
            offset = offset.max(log_integrand(&[pt(0, g)]));
        }
    } else {
        for g in 0..GRID {
            for h in 0..GRID {
                offset = offset.max(log_integrand(&[pt(0, g), pt(1, h)]));
            }
        }
    }

    let tol = QUADRATURE_ABS_TOL;
    let value = if k == 1 {
        quadrature::integrate(
            |z| (log_integrand(&[z]) - offset).exp(),
            lo[0],
            hi[0],
            tol,
            64,
        )
    } else {
        let inner_tol = tol / (hi[0] - lo[0]);
        quadrature::integrate(
            |z0| {
                quadrature::integrate(
                    |z1| (log_integrand(&[z0, z1]) - offset).exp(),
                    lo[1],
                    hi[1],
                    inner_tol,
                    32,
                )
            },
            lo[0],
            hi[0],
            tol,
            32,
        )
    };
    Ok(value.ln() + offset)
}
