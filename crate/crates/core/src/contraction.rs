//! Certification and estimation of the constants entering the bounds:
//! one-sided Lipschitz rate in `x`, Lipschitz constant in `u`, dispersion
//! bound, the cascade metric, and the Itô drift-correction constants.
//!
//! Exact values are available for affine drifts and constant dispersions.
//! Everything else is a sampled maximum, i.e. a lower estimate of a
//! supremum, and is labelled [`CertMethod::Sampled`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;
use crate::rng::{PathRng, RngLineage};
use crate::signal::{InputBox, InputNorm};
use crate::system::{Dispersion, EquilibriumMap, SystemSpec};

/// Pairs closer than this (in the weighted norm) are skipped.
pub const PAIR_DISTANCE_FLOOR: f64 = 1e-8;

/// Samples per chunk; chunk `k` always draws from stream `k`, so runs with
/// more samples extend runs with fewer.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertMethod {
    ExactAffine,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Contraction rate, `−osLip`.
    pub c_hat: f64,
    pub ell_hat: f64,
    pub sigma_x_sq_hat: f64,
    pub method: CertMethod,
    pub sample_count: u64,
    pub confidence_note: String,
}

fn lower_inverse(metric: &Metric) -> DMatrix<f64> {
    let n = metric.dim();
    metric
        .chol()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor of an SPD matrix is invertible")
}

/// Exact `osLip` of `x ↦ A·x` in `‖·‖_P`: the largest eigenvalue of
/// `½·L⁻¹(PA + AᵀP)L⁻ᵀ`.
pub fn oslip_affine(a: &DMatrix<f64>, metric: &Metric) -> Result<f64> {
    check_dim("A rows", a.nrows(), metric.dim())?;
    check_dim("A columns", a.ncols(), metric.dim())?;
    let p = metric.matrix();
    let sym = (p * a + a.transpose() * p) * 0.5;
    let linv = lower_inverse(metric);
    let mut m = &linv * sym * linv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `trace(ΣᵀPΣ) = ‖LᵀΣ‖_F²`.
pub fn trace_weighted(sigma: &DMatrix<f64>, metric: &Metric) -> f64 {
    let ls = metric.chol().transpose() * sigma;
    ls.iter().map(|v| v * v).sum()
}

/// Exact `Lip_{U→P}` of `u ↦ B·u`: the induced norm of `LᵀB` from the input
/// norm to `ℓ₂`.
pub fn input_lipschitz_affine(b: &DMatrix<f64>, metric: &Metric, norm: InputNorm) -> Result<f64> {
    check_dim("B rows", b.nrows(), metric.dim())?;
    let m = metric.chol().transpose() * b;
    let k = m.ncols();
    if k == 0 {
        return Ok(0.0);
    }
    Ok(match norm {
        InputNorm::L2 => {
            let g = m.transpose() * &m;
            SymmetricEigen::new(g)
                .eigenvalues
                .iter()
                .copied()
                .fold(0.0f64, f64::max)
                .sqrt()
        }
        InputNorm::L1 => (0..k).map(|j| m.column(j).norm()).fold(0.0, f64::max),
        InputNorm::Linf => {
            // max of a convex function over the unit ℓ∞ ball sits at a vertex
            if k > 20 {
                return Err(Error::Capacity(format!(
                    "exact ℓ∞→ℓ₂ norm enumerates 2^m sign vectors; m={k} is too large"
                )));
            }
            let mut best = 0.0f64;
            for mask in 0u32..(1u32 << (k - 1)) {
                let s = DVector::from_fn(k, |j, _| if j == k - 1 || mask & (1 << j) == 0 { 1.0 } else { -1.0 });
                best = best.max((&m * s).norm());
            }
            best
        }
    })
}

/// Exact certificate for `F = A·x + B·u` with constant `Σ`, using the ℓ₂
/// input norm.
pub fn certify_affine(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    metric: &Metric,
) -> Result<Certificate> {
    check_dim("dispersion rows", sigma.nrows(), metric.dim())?;
    Ok(Certificate {
        c_hat: -oslip_affine(a, metric)?,
        ell_hat: input_lipschitz_affine(b, metric, InputNorm::L2)?,
        sigma_x_sq_hat: trace_weighted(sigma, metric),
        method: CertMethod::ExactAffine,
        sample_count: 0,
        confidence_note: "exact: eigenvalue computations on affine drift and constant dispersion".into(),
    })
}

/// Certificate of a registered system: exact for affine drifts with
/// constant dispersion, sampled otherwise.
pub fn certify_system(
    sys: &SystemSpec,
    x_box: &InputBox,
    u_box: &InputBox,
    n_samples: usize,
    seed: u64,
) -> Result<Certificate> {
    if let (Some(aff), Dispersion::Constant(s)) = (sys.affine_parts(), sys.dispersion()) {
        return certify_affine(&aff.a, &aff.b, s, sys.metric());
    }
    let n = sys.state_dim();
    let drift = sys.drift_fn().clone();
    let f = move |x: &[f64], u: &[f64], o: &mut [f64]| drift(x, u, o);
    let osl = oslip_sampled(&f, n, x_box, u_box, sys.metric(), n_samples, seed)?;
    let ell = if sys.input_dim() == 0 {
        0.0
    } else {
        input_lipschitz_sampled(&f, n, sys.metric(), InputNorm::L2, x_box, u_box, n_samples, seed ^ 0x5a5a)?
    };
    let sig = dispersion_bound(sys.dispersion(), n, sys.metric(), x_box, u_box, n_samples, seed ^ 0xa5a5)?;
    Ok(Certificate {
        c_hat: -osl,
        ell_hat: ell,
        sigma_x_sq_hat: sig,
        method: CertMethod::Sampled,
        sample_count: n_samples as u64,
        confidence_note: format!(
            "estimate (lower bound of sup) from {n_samples} uniform samples on the declared boxes; not a certificate"
        ),
    })
}

/// Chunked sampling with max-reduction. `draw` sees a stream dedicated to
/// its chunk and returns `None` for degenerate samples.
fn sampled_max<F>(n_samples: usize, seed: u64, draw: F) -> (f64, usize)
where
    F: Fn(&mut PathRng) -> Option<f64> + Sync,
{
    let chunks = n_samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngLineage::new(seed, c as u64).stream();
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut best = f64::NEG_INFINITY;
            let mut used = 0usize;
            for _ in 0..count {
                if let Some(v) = draw(&mut rng) {
                    best = best.max(v);
                    used += 1;
                }
            }
            (best, used)
        })
        .reduce(|| (f64::NEG_INFINITY, 0), |a, b| (a.0.max(b.0), a.1 + b.1))
}

/// Sampled `osLip`: the maximum of `(F(y,u) − F(x,u))ᵀP(y − x) / ‖y − x‖²_P`
/// over uniform samples. A lower estimate of the true value.
pub fn oslip_sampled<F>(
    f: &F,
    n: usize,
    x_box: &InputBox,
    u_box: &InputBox,
    metric: &Metric,
    n_pairs: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    if n_pairs == 0 {
        return Err(Error::input("oslip_sampled needs at least one pair"));
    }
    check_dim("state box", x_box.dim(), n)?;
    check_dim("metric", metric.dim(), n)?;
    let (best, used) = sampled_max(n_pairs, seed, |rng| {
        let x = x_box.sample(rng);
        let y = x_box.sample(rng);
        let u = u_box.sample(rng);
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dn = metric.norm_sq_unchecked(&d);
        if dn < PAIR_DISTANCE_FLOOR * PAIR_DISTANCE_FLOOR {
            return None;
        }
        let mut fx = vec![0.0; n];
        let mut fy = vec![0.0; n];
        f(&x, &u, &mut fx);
        f(&y, &u, &mut fy);
        let df: Vec<f64> = fy.iter().zip(&fx).map(|(a, b)| a - b).collect();
        Some(metric.inner(&df, &d) / dn)
    });
    if used == 0 {
        return Err(Error::Estimation("all sampled pairs were degenerate (x = y)".into()));
    }
    Ok(best)
}

/// Sampled `Lip_{U→P}`: the maximum of `‖F(x,v) − F(x,u)‖_P / ‖v − u‖_U`.
#[allow(clippy::too_many_arguments)]
pub fn input_lipschitz_sampled<F>(
    f: &F,
    n: usize,
    metric: &Metric,
    norm: InputNorm,
    x_box: &InputBox,
    u_box: &InputBox,
    n_pairs: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    if n_pairs == 0 {
        return Err(Error::input("input_lipschitz_sampled needs at least one pair"));
    }
    check_dim("state box", x_box.dim(), n)?;
    let (best, used) = sampled_max(n_pairs, seed, |rng| {
        let x = x_box.sample(rng);
        let u = u_box.sample(rng);
        let v = u_box.sample(rng);
        let du = norm.dist(&v, &u);
        if du < PAIR_DISTANCE_FLOOR {
            return None;
        }
        let mut fu = vec![0.0; n];
        let mut fv = vec![0.0; n];
        f(&x, &u, &mut fu);
        f(&x, &v, &mut fv);
        let df: Vec<f64> = fv.iter().zip(&fu).map(|(a, b)| a - b).collect();
        Some(metric.norm_sq_unchecked(&df).sqrt() / du)
    });
    if used == 0 {
        return Err(Error::Estimation("all sampled input pairs were degenerate".into()));
    }
    Ok(best)
}

/// `σ_x² = sup trace(Σ(x,u)ᵀPΣ(x,u))`; exact for constant dispersion,
/// sampled otherwise.
pub fn dispersion_bound(
    disp: &Dispersion,
    n: usize,
    metric: &Metric,
    x_box: &InputBox,
    u_box: &InputBox,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    match disp {
        Dispersion::Constant(s) => {
            check_dim("dispersion rows", s.nrows(), metric.dim())?;
            Ok(trace_weighted(s, metric))
        }
        Dispersion::StateDependent { .. } => {
            if n_samples == 0 {
                return Err(Error::input("dispersion_bound needs at least one sample"));
            }
            let (best, _) = sampled_max(n_samples, seed, |rng| {
                let x = x_box.sample(rng);
                let u = u_box.sample(rng);
                Some(trace_weighted(&disp.eval(n, &x, &u), metric))
            });
            Ok(best.max(0.0))
        }
    }
}

/// Block-diagonal weight `diag((ℓ/c)·I_m, (c/ℓ)·P)` on `(ξ, x)` under which
/// the cascade `ξ̇ = −cξ, ẋ = F(x, θ + ξ)` contracts at rate `c/2`.
pub fn cascade_metric(metric: &Metric, c: f64, ell: f64, m: usize) -> Result<Metric> {
    if !metric.is_normalized() {
        return Err(Error::input(format!(
            "cascade metric needs ‖P‖₂ = 1, got {}",
            metric.spectral_norm()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::domain(format!("contraction rate must be positive, got {c}")));
    }
    if !(ell > 0.0) {
        return Err(Error::domain(
            "cascade metric is undefined for ℓ = 0 (division by ℓ); use the plain metric",
        ));
    }
    let n = metric.dim();
    let mut p = DMatrix::zeros(m + n, m + n);
    for i in 0..m {
        p[(i, i)] = ell / c;
    }
    p.view_mut((m, m), (n, n)).copy_from(&(metric.matrix() * (c / ell)));
    Metric::new(p)
}

/// Drift of the cascade `(ξ, x) ↦ (−c·ξ, F(x, θ + ξ))` for a fixed `θ`.
pub fn cascade_drift(sys: &SystemSpec, c: f64, theta: Vec<f64>) -> impl Fn(&[f64], &[f64], &mut [f64]) + Sync {
    let m = sys.input_dim();
    let n = sys.state_dim();
    let drift = sys.drift_fn().clone();
    move |z: &[f64], _u: &[f64], out: &mut [f64]| {
        let (xi, x) = z.split_at(m);
        let u: Vec<f64> = theta.iter().zip(xi).map(|(t, e)| t + e).collect();
        for i in 0..m {
            out[i] = -c * xi[i];
        }
        drift(x, &u, &mut out[m..m + n]);
    }
}

fn hessian_trace_vector(h: &[DMatrix<f64>]) -> Vec<f64> {
    h.iter().map(|hk| hk.trace()).collect()
}

/// `h_OU = (1/m)·sup_u ‖[tr Hess x*₁(u), …, tr Hess x*ₙ(u)]‖_P`, sampled
/// uniformly on `u_box`.
pub fn ito_correction_ou(
    eq_map: &EquilibriumMap,
    metric: &Metric,
    m: usize,
    u_box: &InputBox,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_dim("metric", metric.dim(), eq_map.state_dim())?;
    check_dim("input box", u_box.dim(), m)?;
    if !eq_map.has_hessians() {
        return Err(Error::Capability("h_OU needs Hessians of the equilibrium map".into()));
    }
    if n_samples == 0 {
        return Err(Error::input("ito_correction_ou needs at least one sample"));
    }
    let (best, _) = sampled_max(n_samples, seed, |rng| {
        let u = u_box.sample(rng);
        let h = eq_map.hessians(&u).ok()?;
        Some(metric.norm_sq_unchecked(&hessian_trace_vector(&h)).sqrt())
    });
    Ok(best.max(0.0) / m as f64)
}

/// `h_JD = sup_u ‖Σᵢ uᵢ(aᵢ − uᵢ)·∂²x*/∂uᵢ²‖_P` over the supplied grid,
/// which must lie strictly inside `(0, a)`.
pub fn ito_correction_jd(eq_map: &EquilibriumMap, metric: &Metric, a: &[f64], u_grid: &[Vec<f64>]) -> Result<f64> {
    check_dim("metric", metric.dim(), eq_map.state_dim())?;
    let n = eq_map.state_dim();
    let mut best = 0.0f64;
    for u in u_grid {
        check_dim("grid point", u.len(), a.len())?;
        if u.iter().zip(a).any(|(ui, ai)| !(*ui > 0.0 && *ui < *ai)) {
            return Err(Error::input(format!("grid point {u:?} lies outside (0, a)")));
        }
        let h = eq_map.hessians(u)?;
        let mut v = vec![0.0; n];
        for (k, hk) in h.iter().enumerate() {
            for i in 0..a.len() {
                v[k] += u[i] * (a[i] - u[i]) * hk[(i, i)];
            }
        }
        best = best.max(metric.norm_sq_unchecked(&v).sqrt());
    }
    Ok(best)
}

/// Tensor grid strictly inside `(0, a)`: points `j·aᵢ/(k+1)`, `j = 1..=k`.
pub fn jd_interior_grid(a: &[f64], per_dim: usize) -> Vec<Vec<f64>> {
    let step: Vec<f64> = a.iter().map(|ai| ai / (per_dim + 1) as f64).collect();
    let inner = InputBox {
        lo: step.clone(),
        hi: a.iter().zip(&step).map(|(ai, s)| ai - s).collect(),
    };
    EquilibriumMap::box_grid(&inner, per_dim)
}
