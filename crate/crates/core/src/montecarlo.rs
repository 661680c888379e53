//! Ensemble statistics and envelope verdicts.
//!
//! Paths are grouped into fixed blocks of [`BLOCK`] consecutive indices.
//! Each block accumulates with Welford's update in path order, and block
//! results are merged by a fixed pairwise tree. The reduction order depends
//! only on the path count, so results are bit-identical across thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{optimize_alpha, AlphaTarget, Envelope};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{self, CascadeInput, CouplingMode};
use crate::metric::Metric;
use crate::noise::OUParams;
use crate::rng::{PathRng, RngLineage};
use crate::signal::InputSignal;
use crate::system::{EquilibriumMap, SystemSpec};

/// Paths per accumulation block.
pub const BLOCK: usize = 64;
/// Standard errors of slack in every domination verdict.
pub const SLACK_SE: f64 = 3.0;
/// Tail window used to operationalize `limsup`.
pub const TAIL_FRACTION: f64 = 0.2;

/// Per-time mean of a squared error with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub grid: TimeGrid,
    pub mean_sq: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_paths: usize,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.mean_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_sq.is_empty()
    }
}

/// Outcome of a domination check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    /// `min_t (bound − mean)/max(bound, 1e-12)`.
    pub worst_margin: f64,
    pub worst_t: f64,
    pub slack_rule: String,
    /// `α` of the bound, when the bound depends on one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone)]
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn merge(a: Welford, b: Welford) -> Welford {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let (na, nb) = (a.n as f64, b.n as f64);
        let n = na + nb;
        let mut out = a;
        for i in 0..out.mean.len() {
            let d = b.mean[i] - out.mean[i];
            out.mean[i] += d * nb / n;
            out.m2[i] += b.m2[i] + d * d * na * nb / n;
        }
        out.n += b.n;
        out
    }
}

fn tree_reduce(mut parts: Vec<Welford>) -> Welford {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(Welford::merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one block")
}

/// Parallel path runner: `n_paths` paths, path `i` on stream `(master_seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_paths: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Ensemble {
    pub fn new(n_paths: usize, master_seed: u64) -> Self {
        Ensemble {
            n_paths,
            master_seed,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    fn install<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(job()),
            Some(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build()
                    .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
                Ok(pool.install(job))
            }
        }
    }

    /// Runs `path(i, rng, out)` for every path, where `out` receives `len`
    /// values, and returns their per-index mean and standard error.
    pub fn moments<F>(&self, grid: TimeGrid, path: F) -> Result<MomentSeries>
    where
        F: Fn(u64, &mut PathRng, &mut [f64]) -> Result<()> + Sync,
    {
        if self.n_paths < 2 {
            return Err(Error::input("an ensemble needs at least two paths"));
        }
        let len = grid.len();
        let n_blocks = self.n_paths.div_ceil(BLOCK);
        let seed = self.master_seed;
        let n_paths = self.n_paths;
        let blocks: Vec<Result<Welford>> = self.install(|| {
            (0..n_blocks)
                .into_par_iter()
                .map(|b| {
                    let mut acc = Welford::new(len);
                    let mut buf = vec![0.0; len];
                    for i in (b * BLOCK)..((b + 1) * BLOCK).min(n_paths) {
                        let mut rng = RngLineage::new(seed, i as u64).stream();
                        path(i as u64, &mut rng, &mut buf).map_err(|e| tag_path(e, i as u64))?;
                        acc.push(&buf);
                    }
                    Ok(acc)
                })
                .collect()
        })?;
        let acc = tree_reduce(blocks.into_iter().collect::<Result<Vec<_>>>()?);
        let n = acc.n as f64;
        Ok(MomentSeries {
            grid,
            std_err: acc.m2.iter().map(|s| (s / (n - 1.0) / n).max(0.0).sqrt()).collect(),
            mean_sq: acc.mean,
            n_paths: self.n_paths,
        })
    }

    /// Runs `path(i, rng, out)` for every path and returns the per-path
    /// outputs in path order.
    pub fn collect<F>(&self, len: usize, path: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(u64, &mut PathRng, &mut [f64]) -> Result<()> + Sync,
    {
        let seed = self.master_seed;
        self.install(|| {
            (0..self.n_paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = RngLineage::new(seed, i as u64).stream();
                    let mut out = vec![0.0; len];
                    path(i as u64, &mut rng, &mut out).map_err(|e| tag_path(e, i as u64))?;
                    Ok(out)
                })
                .collect()
        })?
    }
}

fn tag_path(e: Error, path: u64) -> Error {
    match e {
        Error::Divergence { step, detail, .. } => Error::Divergence {
            step,
            path: Some(path),
            detail,
        },
        other => other.context(format!("path {path}")),
    }
}

/// Deterministic initial condition or a finite mixture of point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialLaw {
    Point(Vec<f64>),
    Mixture(Vec<(f64, Vec<f64>)>),
}

/// Offset separating initial-condition draws from the path noise streams.
const INIT_STREAM_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(x) => x.len(),
            InitialLaw::Mixture(c) => c.first().map_or(0, |(_, x)| x.len()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialLaw::Point(x) if x.len() == dim => Ok(()),
            InitialLaw::Point(x) => Err(Error::input(format!("initial state has dim {}, expected {dim}", x.len()))),
            InitialLaw::Mixture(c) => {
                if c.is_empty() {
                    return Err(Error::input("empty initial mixture"));
                }
                let total: f64 = c.iter().map(|(w, _)| *w).sum();
                if c.iter().any(|(w, x)| !(*w >= 0.0) || x.len() != dim) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::input("mixture weights must be nonnegative and sum to 1 with matching dims"));
                }
                Ok(())
            }
        }
    }

    fn atoms(&self) -> Vec<(f64, &[f64])> {
        match self {
            InitialLaw::Point(x) => vec![(1.0, x.as_slice())],
            InitialLaw::Mixture(c) => c.iter().map(|(w, x)| (*w, x.as_slice())).collect(),
        }
    }

    /// Draw for path `path` of an ensemble seeded with `seed`; `slot`
    /// separates several laws within one scenario.
    pub fn draw(&self, seed: u64, path: u64, slot: u64) -> Vec<f64> {
        match self {
            InitialLaw::Point(x) => x.clone(),
            InitialLaw::Mixture(c) => {
                use rand::Rng;
                let mut rng = RngLineage::new(seed ^ INIT_STREAM_KEY.wrapping_mul(slot + 1), path).stream();
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (w, x) in c {
                    acc += w;
                    if r < acc {
                        return x.clone();
                    }
                }
                c.last().map(|(_, x)| x.clone()).unwrap_or_default()
            }
        }
    }

    /// `E‖X − Y‖²_P` for independent `X ~ self`, `Y ~ other`.
    pub fn mean_sq_dist(&self, other: &InitialLaw, metric: &Metric) -> f64 {
        let mut acc = 0.0;
        for (wa, a) in self.atoms() {
            for (wb, b) in other.atoms() {
                acc += wa * wb * metric.dist_sq_unchecked(a, b);
            }
        }
        acc
    }

    /// `E‖X − y‖²_P` for a fixed point `y`.
    pub fn mean_sq_dist_to(&self, y: &[f64], metric: &Metric) -> f64 {
        self.mean_sq_dist(&InitialLaw::Point(y.to_vec()), metric)
    }
}

/// Two systems (or one system against its noiseless ODE) under a coupling.
#[derive(Debug, Clone)]
pub struct PairScenario {
    pub sys_x: SystemSpec,
    pub sys_y: SystemSpec,
    pub x0: InitialLaw,
    pub y0: InitialLaw,
    pub u_x: InputSignal,
    pub u_y: InputSignal,
    pub mode: CouplingMode,
    pub grid: TimeGrid,
    pub record_every: usize,
    /// Compare against the RK4 solution `y(t)` of `ẏ = F(y, u_y)` instead of
    /// a second SDE path.
    pub versus_ode: bool,
}

/// `E‖x_t − y_t‖²_P` (metric of `sys_x`) over an ensemble.
pub fn pair_error_moment(sc: &PairScenario, ens: &Ensemble) -> Result<MomentSeries> {
    if ens.n_paths < 100 {
        return Err(Error::input(format!("pair_error_moment needs at least 100 paths, got {}", ens.n_paths)));
    }
    let n = sc.sys_x.state_dim();
    sc.x0.validate(n)?;
    sc.y0.validate(n)?;
    let rec = sc.grid.coarsen(sc.record_every)?;
    let metric = sc.sys_x.metric();
    let seed = ens.master_seed;
    if sc.versus_ode {
        let ode = |y0: &[f64]| -> Result<Vec<Vec<f64>>> {
            let mut out = vec![];
            integrate::ode_rk4_path(&integrate::closed_loop(&sc.sys_y, &sc.u_y), y0, &sc.grid, sc.record_every, |_, y| {
                out.push(y.to_vec())
            })?;
            Ok(out)
        };
        // deterministic y0 gives one ODE solution shared by all paths
        let shared = match &sc.y0 {
            InitialLaw::Point(y0) => Some(ode(y0)?),
            InitialLaw::Mixture(_) => None,
        };
        return ens.moments(rec, |i, rng, out| {
            let x0 = sc.x0.draw(seed, i, 0);
            let owned;
            let ys = match &shared {
                Some(s) => s,
                None => {
                    owned = ode(&sc.y0.draw(seed, i, 1))?;
                    &owned
                }
            };
            integrate::em_path(&sc.sys_x, &x0, &sc.u_x, &sc.grid, rng, sc.record_every, |k, x, _| {
                out[k] = metric.dist_sq_unchecked(x, &ys[k]);
            })
        });
    }
    ens.moments(rec, |i, rng, out| {
        let x0 = sc.x0.draw(seed, i, 0);
        let y0 = sc.y0.draw(seed, i, 1);
        integrate::pair_path(
            &sc.sys_x,
            &sc.sys_y,
            &x0,
            &y0,
            &sc.u_x,
            &sc.u_y,
            sc.mode,
            &sc.grid,
            rng,
            sc.record_every,
            |k, x, y| out[k] = metric.dist_sq_unchecked(x, y),
        )
    })
}

/// Input driving a tracking scenario.
#[derive(Debug, Clone)]
pub enum TrackingInput {
    /// `u_t = θ(t)`.
    Deterministic(InputSignal),
    /// OU or JD cascade; `v0` is `ξ₀` (OU) or `u₀` (JD).
    Cascade { input: CascadeInput, v0: InitialLaw },
}

impl TrackingInput {
    pub fn theta(&self) -> &InputSignal {
        match self {
            TrackingInput::Deterministic(th) => th,
            TrackingInput::Cascade { input, .. } => input.theta(),
        }
    }
}

/// Which equilibrium the state is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingTarget {
    /// `x*(θ(t))`.
    DeterministicCurve,
    /// `x*(u_t)` with the realized input.
    StochasticCurve,
}

#[derive(Debug, Clone)]
pub struct TrackingScenario {
    pub sys: SystemSpec,
    pub eq_map: EquilibriumMap,
    pub input: TrackingInput,
    pub target: TrackingTarget,
    pub x0: InitialLaw,
    pub grid: TimeGrid,
    pub record_every: usize,
}

/// `E‖x_t − x*(v_t)‖²_P` over an ensemble.
pub fn tracking_error_moment(sc: &TrackingScenario, ens: &Ensemble) -> Result<MomentSeries> {
    if ens.n_paths < 100 {
        return Err(Error::input(format!("tracking_error_moment needs at least 100 paths, got {}", ens.n_paths)));
    }
    sc.x0.validate(sc.sys.state_dim())?;
    let theta = sc.input.theta();
    let samples: Vec<Vec<f64>> = (0..100)
        .map(|j| theta.value(sc.grid.t0 + (sc.grid.end() - sc.grid.t0) * j as f64 / 99.0))
        .collect();
    sc.eq_map
        .check_residual(&sc.sys, samples.iter().map(|v| v.as_slice()), 1e-9)
        .map_err(|e| e.context("equilibrium map check"))?;
    let rec = sc.grid.coarsen(sc.record_every)?;
    let metric = sc.sys.metric();
    let seed = ens.master_seed;
    let target = sc.target;
    let err = |x: &[f64], v: &[f64]| metric.dist_sq_unchecked(x, &sc.eq_map.eval(v));
    match &sc.input {
        TrackingInput::Deterministic(th) => {
            // the curve x*(θ(t)) is shared by all paths
            let curve: Vec<Vec<f64>> = rec.times().map(|t| sc.eq_map.eval(&th.value(t))).collect();
            ens.moments(rec, |i, rng, out| {
                let x0 = sc.x0.draw(seed, i, 0);
                integrate::em_path(&sc.sys, &x0, th, &sc.grid, rng, sc.record_every, |k, x, _| {
                    out[k] = metric.dist_sq_unchecked(x, &curve[k]);
                })
            })
        }
        TrackingInput::Cascade { input, v0 } => {
            v0.validate(input.dim())?;
            let curve: Vec<Vec<f64>> = rec.times().map(|t| sc.eq_map.eval(&theta.value(t))).collect();
            ens.moments(rec, |i, rng, out| {
                let x0 = sc.x0.draw(seed, i, 0);
                let v = v0.draw(seed, i, 1);
                integrate::cascade_path(input, &sc.sys, &x0, &v, &sc.grid, rng, sc.record_every, |k, u, x| {
                    out[k] = match target {
                        TrackingTarget::DeterministicCurve => metric.dist_sq_unchecked(x, &curve[k]),
                        TrackingTarget::StochasticCurve => err(x, u),
                    };
                })
                .map(|_| ())
            })
        }
    }
}

/// `E‖x_t‖₂²` of an Euler–Maruyama ensemble.
pub fn state_moment(
    sys: &SystemSpec,
    x0: &[f64],
    u: &InputSignal,
    grid: &TimeGrid,
    record_every: usize,
    ens: &Ensemble,
) -> Result<MomentSeries> {
    let rec = grid.coarsen(record_every)?;
    ens.moments(rec, |_, rng, out| {
        integrate::em_path(sys, x0, u, grid, rng, record_every, |k, x, _| {
            out[k] = x.iter().map(|v| v * v).sum();
        })
    })
}

/// `E‖ξ_t‖₂²` of an OU ensemble stepped by the exact transition.
pub fn ou_exact_moment(
    p: &OUParams,
    x0: &[f64],
    grid: &TimeGrid,
    record_every: usize,
    ens: &Ensemble,
) -> Result<MomentSeries> {
    crate::error::check_dim("OU initial state", x0.len(), p.dim)?;
    let rec = grid.coarsen(record_every)?;
    let (decay, std) = p.transition(grid.dt);
    ens.moments(rec, |_, rng, out| {
        let mut xi = x0.to_vec();
        out[0] = xi.iter().map(|v| v * v).sum();
        for k in 0..grid.steps {
            for v in xi.iter_mut() {
                *v = decay * *v + std * rng.normal();
            }
            if (k + 1) % record_every == 0 {
                out[(k + 1) / record_every] = xi.iter().map(|v| v * v).sum();
            }
        }
        Ok(())
    })
}

/// Domination check of `series` by a precomputed bound series.
pub fn check_bound_series(series: &MomentSeries, bound: &[f64]) -> Result<Verdict> {
    if bound.len() != series.len() {
        return Err(Error::input(format!(
            "bound has {} points but the moment series has {}",
            bound.len(),
            series.len()
        )));
    }
    let mut holds = true;
    let (mut worst, mut worst_t) = (f64::INFINITY, series.grid.t0);
    for (k, ((m, se), b)) in series.mean_sq.iter().zip(&series.std_err).zip(bound).enumerate() {
        if !(*m <= b + SLACK_SE * se) {
            holds = false;
        }
        if *b == 0.0 && *m == 0.0 {
            continue;
        }
        let margin = (b - m) / b.max(1e-12);
        if margin < worst {
            worst = margin;
            worst_t = series.grid.t(k);
        }
    }
    Ok(Verdict {
        holds,
        worst_margin: worst,
        worst_t,
        slack_rule: format!("mean_sq <= bound + {SLACK_SE}*std_err at every grid point"),
        alpha: None,
    })
}

/// How the envelope's `α` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    Fixed(f64),
    /// The minimizer of the limsup (or of the terminal value when the limsup
    /// is unavailable).
    Optimized,
}

/// Resolves an [`AlphaPolicy`] for `env` on a horizon ending at `t_end`.
pub fn resolve_alpha(env: &Envelope, policy: AlphaPolicy, t_end: f64) -> Result<f64> {
    match policy {
        AlphaPolicy::Fixed(a) => Ok(a),
        AlphaPolicy::Optimized => match optimize_alpha(env, AlphaTarget::Limsup) {
            Ok((a, _)) => Ok(a),
            Err(_) => optimize_alpha(env, AlphaTarget::At(t_end)).map(|(a, _)| a),
        },
    }
}

/// Pointwise domination of `series` by `env` at the policy's `α`.
pub fn check_envelope(series: &MomentSeries, env: &Envelope, policy: AlphaPolicy) -> Result<Verdict> {
    let alpha = resolve_alpha(env, policy, series.grid.end())?;
    let bound = env.series(&series.grid, alpha)?;
    let mut v = check_bound_series(series, &bound)?;
    v.alpha = Some(alpha);
    Ok(v)
}

/// Tail-window domination: every point in the final `fraction` of the
/// horizon lies below `limsup(α) + 3·SE`.
pub fn check_limsup(series: &MomentSeries, env: &Envelope, alpha: f64, fraction: f64) -> Result<Verdict> {
    let lim = env.limsup(alpha)?;
    let start = tail_start(series, fraction)?;
    let mut holds = true;
    let (mut worst, mut worst_t) = (f64::INFINITY, series.grid.t(start));
    for k in start..series.len() {
        let (m, se) = (series.mean_sq[k], series.std_err[k]);
        if !(m <= lim + SLACK_SE * se) {
            holds = false;
        }
        let margin = (lim - m) / lim.max(1e-12);
        if margin < worst {
            worst = margin;
            worst_t = series.grid.t(k);
        }
    }
    Ok(Verdict {
        holds,
        worst_margin: worst,
        worst_t,
        slack_rule: format!(
            "mean_sq <= limsup + {SLACK_SE}*std_err over the final {:.0}% of the horizon",
            fraction * 100.0
        ),
        alpha: Some(alpha),
    })
}

fn tail_start(series: &MomentSeries, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!("tail fraction must lie in (0, 1], got {fraction}")));
    }
    let steps = series.len().saturating_sub(1);
    let tail = (fraction * steps as f64).floor() as usize;
    if tail < 10 {
        return Err(Error::input(format!(
            "tail window of {tail} steps is too short (need at least 10)"
        )));
    }
    Ok(series.len() - 1 - tail)
}

/// `(mean, max)` of `mean_sq` over the final `fraction` of the horizon.
pub fn tail_average(series: &MomentSeries, fraction: f64) -> Result<(f64, f64)> {
    let start = tail_start(series, fraction)?;
    let tail = &series.mean_sq[start..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, max))
}

/// Finite-horizon second-moment bound `(1 + ‖x₀‖²)e^{(1+L)t}` for systems
/// with Lipschitz/linear-growth constant `L`.
pub fn moment_growth_bound(x0_norm_sq: f64, lipschitz: f64, t: f64) -> f64 {
    (1.0 + x0_norm_sq) * ((1.0 + lipschitz) * t).exp()
}

/// Checks a state-moment series against [`moment_growth_bound`].
pub fn check_moment_growth(series: &MomentSeries, x0_norm_sq: f64, lipschitz: f64) -> Result<Verdict> {
    let bound: Vec<f64> = series
        .grid
        .times()
        .map(|t| moment_growth_bound(x0_norm_sq, lipschitz, t - series.grid.t0))
        .collect();
    check_bound_series(series, &bound)
}
