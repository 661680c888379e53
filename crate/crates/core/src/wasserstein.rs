//! Empirical Wasserstein distances, the Wasserstein ISS envelope under a
//! common-noise coupling, and Gibbs stationarity checks for gradient drifts.

use nalgebra::DMatrix;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{iss_envelope, Profile};
use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{self, CouplingMode};
use crate::metric::Metric;
use crate::montecarlo::{Ensemble, Verdict};
use crate::rng::PathRng;
use crate::signal::{InputNorm, InputSignal};
use crate::system::{Dispersion, SystemSpec};

/// Largest sample count accepted by the assignment solver.
pub const ASSIGNMENT_CAP: usize = 2048;

/// Uniformly weighted point cloud (`k × n` samples).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: DMatrix<f64>,
}

impl EmpiricalMeasure {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::input(format!("an empirical measure needs k >= 2 samples, got {}", samples.nrows())));
        }
        if samples.ncols() == 0 {
            return Err(Error::input("samples have dimension zero"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("samples must be finite"));
        }
        Ok(EmpiricalMeasure { samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::input("sample rows have different lengths"));
        }
        Self::new(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(xs.len(), 1, xs))
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.samples.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    /// Sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.len() as f64;
        self.samples.column_iter().map(|c| c.sum() / k).collect()
    }
}

/// Ground norm on the state space.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleNorm {
    L1,
    L2,
    Linf,
    Weighted(Metric),
}

impl SampleNorm {
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SampleNorm::L1 => InputNorm::L1.dist(a, b),
            SampleNorm::L2 => InputNorm::L2.dist(a, b),
            SampleNorm::Linf => InputNorm::Linf.dist(a, b),
            SampleNorm::Weighted(m) => m.dist_sq_unchecked(a, b).sqrt(),
        }
    }

    /// Scale factor `s` with `‖x‖ = s|x|` in one dimension.
    fn scalar_scale(&self) -> f64 {
        match self {
            SampleNorm::Weighted(m) => m.matrix()[(0, 0)].sqrt(),
            _ => 1.0,
        }
    }
}

fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("Wasserstein order must be >= 1 or infinite, got {p}")))
    }
}

fn power_mean(costs: impl Iterator<Item = f64>, k: usize, p: f64) -> f64 {
    if p.is_infinite() {
        costs.fold(0.0, f64::max)
    } else {
        (costs.map(|d| d.powf(p)).sum::<f64>() / k as f64).powf(1.0 / p)
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `W_p` between two equal-size scalar samples; `p = f64::INFINITY` gives the max gap.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::input("empty sample"));
    }
    check_dim("sample count", ys.len(), xs.len())?;
    check_order(p)?;
    let (a, b) = (sorted(xs), sorted(ys));
    Ok(power_mean(a.iter().zip(&b).map(|(x, y)| (x - y).abs()), a.len(), p))
}

/// Minimum-cost perfect assignment on a square cost matrix: `perm[i]` is the
/// column matched to row `i`. Shortest augmenting paths with potentials.
pub fn optimal_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    check_dim("cost matrix columns", cost.ncols(), n)?;
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("assignment costs must be finite"));
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let (mut delta, mut j1) = (inf, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Perfect matching using only edges with `cost ≤ thr` (Kuhn's algorithm).
fn threshold_matching(cost: &DMatrix<f64>, thr: f64) -> Option<Vec<usize>> {
    let n = cost.nrows();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| cost[(i, j)] <= thr).collect()).collect();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], match_col: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if match_col[j].is_none_or(|r| augment(r, adj, seen, match_col)) {
                    match_col[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let mut seen = vec![false; n];
    for i in 0..n {
        seen.iter_mut().for_each(|s| *s = false);
        if !augment(i, &adj, &mut seen, &mut match_col) {
            return None;
        }
    }
    let mut perm = vec![0; n];
    for (j, r) in match_col.iter().enumerate() {
        perm[r.expect("perfect matching")] = j;
    }
    Some(perm)
}

/// Assignment minimizing the largest matched cost.
pub fn bottleneck_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    check_dim("cost matrix columns", cost.ncols(), cost.nrows())?;
    let mut levels: Vec<f64> = cost.iter().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if threshold_matching(cost, levels[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(threshold_matching(cost, levels[lo]).expect("the full graph has a perfect matching"))
}

fn distance_matrix(mx: &EmpiricalMeasure, my: &EmpiricalMeasure, norm: &SampleNorm) -> DMatrix<f64> {
    let (xr, yr) = (mx.rows(), my.rows());
    DMatrix::from_fn(xr.len(), yr.len(), |i, j| norm.dist(&xr[i], &yr[j]))
}

fn check_pair(mx: &EmpiricalMeasure, my: &EmpiricalMeasure, norm: &SampleNorm) -> Result<()> {
    check_dim("sample count", my.len(), mx.len())?;
    check_dim("sample dimension", my.dim(), mx.dim())?;
    if let SampleNorm::Weighted(m) = norm {
        check_dim("norm metric", m.dim(), mx.dim())?;
    }
    if mx.len() > ASSIGNMENT_CAP {
        return Err(Error::Capacity(format!(
            "{} samples exceed the assignment cap of {ASSIGNMENT_CAP}; subsample the clouds",
            mx.len()
        )));
    }
    Ok(())
}

/// Optimal coupling of two clouds for cost `‖x − y‖^p` (bottleneck for `p = ∞`).
pub fn optimal_coupling(mx: &EmpiricalMeasure, my: &EmpiricalMeasure, p: f64, norm: &SampleNorm) -> Result<Vec<usize>> {
    check_order(p)?;
    check_pair(mx, my, norm)?;
    let d = distance_matrix(mx, my, norm);
    if p.is_infinite() {
        bottleneck_assignment(&d)
    } else {
        optimal_assignment(&d.map(|v| v.powf(p)))
    }
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite sample")
}

/// `Σᵢ ‖xᵢ − y_{σ(i)}‖ / k` in exact arithmetic, rounded once.
fn exact_mean_cost(xr: &[Vec<f64>], yr: &[Vec<f64>], perm: &[usize], norm: &SampleNorm) -> f64 {
    let mut total = BigRational::zero();
    for (i, &j) in perm.iter().enumerate() {
        let gaps = xr[i].iter().zip(&yr[j]).map(|(a, b)| (exact(*a) - exact(*b)).abs());
        total += match norm {
            SampleNorm::Linf => gaps.max().unwrap_or_else(BigRational::zero),
            _ => gaps.fold(BigRational::zero(), |acc, g| acc + g),
        };
    }
    (total / BigRational::from_integer(perm.len().into()))
        .to_f64()
        .expect("bounded cost")
}

/// Cost `(Σᵢ ‖xᵢ − y_{σ(i)}‖^p / k)^{1/p}` of the coupling `i ↦ perm[i]`.
///
/// For `p = 1` under the L1 and L∞ norms, and L2 on scalars, the sum is
/// evaluated exactly and rounded once. Couplings of equal cost, which are
/// common in these norms, then give bit-identical values.
pub fn coupling_cost(
    mx: &EmpiricalMeasure,
    my: &EmpiricalMeasure,
    perm: &[usize],
    p: f64,
    norm: &SampleNorm,
) -> Result<f64> {
    check_order(p)?;
    check_dim("sample count", my.len(), mx.len())?;
    check_dim("sample dimension", my.dim(), mx.dim())?;
    check_dim("coupling length", perm.len(), mx.len())?;
    let mut seen = vec![false; perm.len()];
    for &j in perm {
        if j >= perm.len() || std::mem::replace(&mut seen[j], true) {
            return Err(Error::input(format!("{perm:?} is not a permutation")));
        }
    }
    let (xr, yr) = (mx.rows(), my.rows());
    let separable = match norm {
        SampleNorm::L1 | SampleNorm::Linf => true,
        SampleNorm::L2 => mx.dim() == 1,
        SampleNorm::Weighted(_) => false,
    };
    if p == 1.0 && separable {
        return Ok(exact_mean_cost(&xr, &yr, perm, norm));
    }
    Ok(power_mean(
        perm.iter().enumerate().map(|(i, &j)| norm.dist(&xr[i], &yr[j])),
        perm.len(),
        p,
    ))
}

/// Exact `W_p` between equal-size clouds by optimal assignment.
pub fn wasserstein_assignment(mx: &EmpiricalMeasure, my: &EmpiricalMeasure, p: f64, norm: &SampleNorm) -> Result<f64> {
    let perm = optimal_coupling(mx, my, p, norm)?;
    coupling_cost(mx, my, &perm, p, norm)
}

/// `W_p` using the sorting formula in one dimension and the assignment
/// solver otherwise.
pub fn wasserstein(mx: &EmpiricalMeasure, my: &EmpiricalMeasure, p: f64, norm: &SampleNorm) -> Result<f64> {
    if mx.dim() == 1 && my.dim() == 1 {
        check_dim("sample count", my.len(), mx.len())?;
        let s = norm.scalar_scale();
        return Ok(s * wasserstein_1d(mx.samples.as_slice(), my.samples.as_slice(), p)?);
    }
    wasserstein_assignment(mx, my, p, norm)
}

/// `e^{−ct}W₀ + ℓ∫₀ᵗ e^{−c(t−τ)} gap(τ) dτ`.
pub fn wasserstein_envelope(w0: f64, c: f64, ell: f64, gap: &Profile, t: f64) -> Result<f64> {
    iss_envelope(w0, c, ell, gap, t, 1e-3)
}

/// Two systems started from two sample clouds and driven by one Brownian
/// motion per sample pair.
#[derive(Debug, Clone)]
pub struct WassersteinScenario {
    pub sys_x: SystemSpec,
    pub sys_y: SystemSpec,
    pub u_x: InputSignal,
    pub u_y: InputSignal,
    pub x_cloud: EmpiricalMeasure,
    pub y_cloud: EmpiricalMeasure,
    pub grid: TimeGrid,
    pub record_every: usize,
    pub p: f64,
    pub norm: SampleNorm,
    pub gap_norm: InputNorm,
}

/// Distance series with its envelope and verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WassersteinReport {
    pub times: Vec<f64>,
    pub w_empirical: Vec<f64>,
    pub envelope: Vec<f64>,
    pub slack: f64,
    pub verdict: Verdict,
}

/// `2/√k`.
pub fn finite_sample_slack(k: usize) -> f64 {
    2.0 / (k as f64).sqrt()
}

fn shared_dispersion(a: &SystemSpec, b: &SystemSpec) -> Result<()> {
    match (a.dispersion(), b.dispersion()) {
        (Dispersion::Constant(sa), Dispersion::Constant(sb)) if sa == sb => Ok(()),
        (Dispersion::Constant(_), Dispersion::Constant(_)) => Err(Error::Precondition(
            "both systems must share the same dispersion matrix".into(),
        )),
        _ => Err(Error::Precondition(
            "Wasserstein contraction requires a state-independent dispersion".into(),
        )),
    }
}

/// Simulates the coupled clouds and checks `W_p(t) ≤ envelope(t)·(1 + 2/√k)`
/// at every recorded time.
///
/// Sample `i` of the x-cloud is paired with its optimal partner in the
/// y-cloud, and each pair shares one noise stream.
pub fn verify_wasserstein_contraction(sc: &WassersteinScenario, master_seed: u64) -> Result<WassersteinReport> {
    shared_dispersion(&sc.sys_x, &sc.sys_y)?;
    let n = sc.sys_x.state_dim();
    check_dim("x-cloud dimension", sc.x_cloud.dim(), n)?;
    check_dim("y-cloud dimension", sc.y_cloud.dim(), n)?;
    check_dim("cloud sizes", sc.y_cloud.len(), sc.x_cloud.len())?;
    check_order(sc.p)?;
    let k = sc.x_cloud.len();
    let rec = sc.grid.coarsen(sc.record_every)?;
    let pairing = if n == 1 {
        let order = |m: &EmpiricalMeasure| {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&a, &b| m.samples[(a, 0)].total_cmp(&m.samples[(b, 0)]));
            idx
        };
        let (ox, oy) = (order(&sc.x_cloud), order(&sc.y_cloud));
        let mut perm = vec![0; k];
        for (a, b) in ox.iter().zip(&oy) {
            perm[*a] = *b;
        }
        perm
    } else {
        optimal_coupling(&sc.x_cloud, &sc.y_cloud, 2.0, &sc.norm)?
    };
    let (xr, yr) = (sc.x_cloud.rows(), sc.y_cloud.rows());
    let len = rec.len();
    let paths = Ensemble::new(k, master_seed).collect(2 * n * len, |i, rng: &mut PathRng, out| {
        let i = i as usize;
        integrate::pair_path(
            &sc.sys_x,
            &sc.sys_y,
            &xr[i],
            &yr[pairing[i]],
            &sc.u_x,
            &sc.u_y,
            CouplingMode::Common,
            &sc.grid,
            rng,
            sc.record_every,
            |r, x, y| {
                out[2 * n * r..2 * n * r + n].copy_from_slice(x);
                out[2 * n * r + n..2 * n * (r + 1)].copy_from_slice(y);
            },
        )
    })?;
    let w_empirical = (0..len)
        .into_par_iter()
        .map(|r| {
            let base = 2 * n * r;
            let mx = EmpiricalMeasure::new(DMatrix::from_fn(k, n, |i, j| paths[i][base + j]))?;
            let my = EmpiricalMeasure::new(DMatrix::from_fn(k, n, |i, j| paths[i][base + n + j]))?;
            wasserstein(&mx, &my, sc.p, &sc.norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    let w0 = wasserstein(&sc.x_cloud, &sc.y_cloud, sc.p, &sc.norm)?;
    let cst = sc.sys_x.constants();
    let gap = Profile::input_gap(&sc.u_x, &sc.u_y, sc.gap_norm, 1)?;
    let envelope = rec
        .times()
        .map(|t| wasserstein_envelope(w0, cst.c, cst.ell, &gap, t - rec.t0))
        .collect::<Result<Vec<f64>>>()?;
    let slack = finite_sample_slack(k);
    let mut holds = true;
    let (mut worst, mut worst_t) = (f64::INFINITY, rec.t0);
    for (r, (w, e)) in w_empirical.iter().zip(&envelope).enumerate() {
        let b = e * (1.0 + slack);
        if !(*w <= b) {
            holds = false;
        }
        let margin = (b - w) / b.max(1e-12);
        if margin < worst {
            worst = margin;
            worst_t = rec.t(r);
        }
    }
    Ok(WassersteinReport {
        times: rec.times().collect(),
        w_empirical,
        envelope,
        slack,
        verdict: Verdict {
            holds,
            worst_margin: worst,
            worst_t,
            slack_rule: format!("W_p <= envelope*(1 + 2/sqrt(k)), k={k}"),
            alpha: None,
        },
    })
}

/// Samples of one long Euler–Maruyama run, taken every `spacing` time units
/// after `burn_in`.
pub fn long_run_samples(
    sys: &SystemSpec,
    x0: &[f64],
    u: &InputSignal,
    grid: &TimeGrid,
    burn_in: f64,
    spacing: f64,
    rng: &mut PathRng,
) -> Result<Vec<Vec<f64>>> {
    if !(spacing >= grid.dt) || !(burn_in >= 0.0) {
        return Err(Error::input(format!("invalid burn-in {burn_in} or spacing {spacing}")));
    }
    let stride = (spacing / grid.dt).round() as usize;
    let skip = (burn_in / grid.dt).round() as usize;
    let mut out = vec![];
    integrate::em_path(sys, x0, u, grid, rng, 1, |k, x, _| {
        if k >= skip && (k - skip).is_multiple_of(stride) && k > 0 {
            out.push(x.to_vec());
        }
    })?;
    Ok(out)
}

/// Uniform grid `lo = x₀ < … < x_{points−1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo < hi) || points < 5 {
            return Err(Error::input(format!("invalid grid [{lo}, {hi}] with {points} points")));
        }
        Ok(Grid1d { lo, hi, points })
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + self.h() * i as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsReport {
    /// Largest KS distance over the coordinates.
    pub ks_stat: f64,
    /// `1.63/√k`.
    pub ks_critical: f64,
    /// Sup norm of the discrete stationary Fokker–Planck residual.
    pub residual: f64,
    pub samples: usize,
}

/// KS critical value at the 1% level.
pub fn ks_critical_1pct(k: usize) -> f64 {
    1.63 / (k as f64).sqrt()
}

/// `sup |F_k − F|` of a sample against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("empty sample"));
    }
    let s = sorted(samples);
    let k = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / k).max((i + 1) as f64 / k - f)
    }))
}

/// Gaussian CDF.
pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (2.0 * var).sqrt())
}

const EDGE_TOL: f64 = 1e-8;

/// Unnormalized Gibbs weights `e^{−2(f − min f)/σ²}` on the grid values.
fn gibbs_weights(fv: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let fmin = fv.iter().copied().fold(f64::INFINITY, f64::min);
    if !fmin.is_finite() {
        return Err(Error::domain("potential is not finite on the grid"));
    }
    Ok(fv.iter().map(|f| (-2.0 * (f - fmin) / (sigma * sigma)).exp()).collect())
}

fn trapz(ys: &[f64], h: f64) -> f64 {
    h * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[ys.len() - 1]))
}

/// Piecewise-linear CDF from density values on a grid.
fn grid_cdf(grid: &Grid1d, dens: &[f64]) -> impl Fn(f64) -> f64 {
    let grid = *grid;
    let h = grid.h();
    let mut cum = vec![0.0; dens.len()];
    for i in 1..dens.len() {
        cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
    }
    let total = cum[cum.len() - 1];
    move |x: f64| {
        if x <= grid.lo {
            return 0.0;
        }
        if x >= grid.hi {
            return 1.0;
        }
        let s = (x - grid.lo) / h;
        let i = (s.floor() as usize).min(cum.len() - 2);
        let w = s - i as f64;
        (cum[i] + w * (cum[i + 1] - cum[i])) / total
    }
}

fn check_normalizable(w: &[f64], z: f64) -> Result<()> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::domain("Gibbs density is not normalizable on the grid"));
    }
    let peak = w.iter().copied().fold(0.0, f64::max);
    if w[0] > EDGE_TOL * peak || w[w.len() - 1] > EDGE_TOL * peak {
        return Err(Error::domain("grid truncates the Gibbs density; widen the grid"));
    }
    Ok(())
}

/// Compares a scalar long-run sample with `μ* ∝ e^{−2f/σ²}` and evaluates
/// `max |∂ₓ(μ* f′) + (σ²/2)∂ₓₓμ*|` over interior grid nodes.
pub fn gibbs_check<F, G>(f: F, grad: G, sigma: f64, samples: &[f64], grid: &Grid1d) -> Result<GibbsReport>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("temperature needs sigma > 0, got {sigma}")));
    }
    let xs: Vec<f64> = (0..grid.points).map(|i| grid.x(i)).collect();
    let w = gibbs_weights(&xs.iter().map(|&x| f(x)).collect::<Vec<_>>(), sigma)?;
    let h = grid.h();
    let z = trapz(&w, h);
    check_normalizable(&w, z)?;
    let mu: Vec<f64> = w.iter().map(|v| v / z).collect();
    let flux: Vec<f64> = xs.iter().zip(&mu).map(|(&x, m)| m * grad(x)).collect();
    let d = 0.5 * sigma * sigma;
    let residual = (1..grid.points - 1)
        .map(|i| {
            ((flux[i + 1] - flux[i - 1]) / (2.0 * h) + d * (mu[i + 1] - 2.0 * mu[i] + mu[i - 1]) / (h * h)).abs()
        })
        .fold(0.0, f64::max);
    Ok(GibbsReport {
        ks_stat: ks_statistic(samples, grid_cdf(grid, &mu))?,
        ks_critical: ks_critical_1pct(samples.len()),
        residual,
        samples: samples.len(),
    })
}

/// Planar version of [`gibbs_check`] on a tensor grid: KS per coordinate
/// against the marginals of `μ*`, and the residual
/// `max |∇·(μ*∇f) + (σ²/2)Δμ*|`.
pub fn gibbs_check_2d<F, G>(
    f: F,
    grad: G,
    sigma: f64,
    samples: &EmpiricalMeasure,
    grid: (&Grid1d, &Grid1d),
) -> Result<GibbsReport>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    check_dim("sample dimension", samples.dim(), 2)?;
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("temperature needs sigma > 0, got {sigma}")));
    }
    let (gx, gy) = grid;
    let (nx, ny) = (gx.points, gy.points);
    let (hx, hy) = (gx.h(), gy.h());
    let fv: Vec<f64> = (0..nx * ny).map(|idx| f(&[gx.x(idx / ny), gy.x(idx % ny)])).collect();
    let w = gibbs_weights(&fv, sigma)?;
    let at = |i: usize, j: usize| i * ny + j;
    let row_int: Vec<f64> = (0..nx).map(|i| trapz(&w[at(i, 0)..at(i, 0) + ny], hy)).collect();
    let z = trapz(&row_int, hx);
    let col_int: Vec<f64> = (0..ny)
        .map(|j| trapz(&(0..nx).map(|i| w[at(i, j)]).collect::<Vec<_>>(), hx))
        .collect();
    check_normalizable(&row_int, z)?;
    check_normalizable(&col_int, z)?;
    let mu: Vec<f64> = w.iter().map(|v| v / z).collect();
    let mut fx = vec![0.0; nx * ny];
    let mut fy = vec![0.0; nx * ny];
    let mut g = [0.0; 2];
    for i in 0..nx {
        for j in 0..ny {
            grad(&[gx.x(i), gy.x(j)], &mut g);
            fx[at(i, j)] = mu[at(i, j)] * g[0];
            fy[at(i, j)] = mu[at(i, j)] * g[1];
        }
    }
    let d = 0.5 * sigma * sigma;
    let mut residual: f64 = 0.0;
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let div = (fx[at(i + 1, j)] - fx[at(i - 1, j)]) / (2.0 * hx) + (fy[at(i, j + 1)] - fy[at(i, j - 1)]) / (2.0 * hy);
            let lap = (mu[at(i + 1, j)] - 2.0 * mu[at(i, j)] + mu[at(i - 1, j)]) / (hx * hx)
                + (mu[at(i, j + 1)] - 2.0 * mu[at(i, j)] + mu[at(i, j - 1)]) / (hy * hy);
            residual = residual.max((div + d * lap).abs());
        }
    }
    let col0: Vec<f64> = samples.samples().column(0).iter().copied().collect();
    let col1: Vec<f64> = samples.samples().column(1).iter().copied().collect();
    let ks = ks_statistic(&col0, grid_cdf(gx, &row_int))?.max(ks_statistic(&col1, grid_cdf(gy, &col_int))?);
    Ok(GibbsReport {
        ks_stat: ks,
        ks_critical: ks_critical_1pct(samples.len()),
        residual,
        samples: samples.len(),
    })
}
