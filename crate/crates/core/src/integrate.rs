//! Path generation: Euler–Maruyama for single systems and coupled pairs,
//! cascades driven by OU or Jacobi-diffusion input noise, and classical RK4
//! for the deterministic comparisons.
//!
//! Inputs are sampled at the left endpoint of each step (Itô convention).
//! Every path function has a streaming form (`*_path`) that hands recorded
//! states to a visitor instead of materializing a [`Trajectory`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::noise::{self, JDParams, OUParams};
use crate::rng::{PathRng, RngLineage};
use crate::signal::InputSignal;
use crate::system::SystemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Recorded grid (the integration grid coarsened by the record stride).
    pub grid: TimeGrid,
    /// `len × n`, row `k` is the state at `grid.t(k)`.
    pub states: DMatrix<f64>,
    /// `len × m`, the input applied from `grid.t(k)` onwards.
    pub inputs: DMatrix<f64>,
    pub lineage: Option<RngLineage>,
    /// Steps on which the boundary clamp fired (JD input paths only).
    pub clamp_count: u64,
}

impl Trajectory {
    fn from_rows(grid: TimeGrid, n: usize, m: usize, xs: &[f64], us: &[f64], lineage: Option<RngLineage>) -> Self {
        let len = grid.len();
        Trajectory {
            grid,
            states: DMatrix::from_row_slice(len, n, xs),
            inputs: DMatrix::from_row_slice(len, m, us),
            lineage,
            clamp_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.row(k).iter().copied().collect()
    }

    pub fn input(&self, k: usize) -> Vec<f64> {
        self.inputs.row(k).iter().copied().collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.state(self.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    /// Separate Brownian motions: `2r` normals per step.
    #[default]
    Independent,
    /// One shared Brownian motion: the same `r` normals drive both systems.
    Common,
}

/// Input-noise model of a cascade.
#[derive(Debug, Clone)]
pub enum CascadeInput {
    /// `u_t = θ(t) + ξ_t` with `ξ` an OU process.
    Ou { params: OUParams, theta: InputSignal },
    /// `u_t` itself is a Jacobi diffusion reverting to `θ(t)`.
    Jd(JDParams),
}

impl CascadeInput {
    pub fn theta(&self) -> &InputSignal {
        match self {
            CascadeInput::Ou { theta, .. } => theta,
            CascadeInput::Jd(p) => &p.theta,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CascadeInput::Ou { params, .. } => params.dim,
            CascadeInput::Jd(p) => p.dim(),
        }
    }
}

/// Euler–Maruyama update with reusable buffers.
struct Stepper<'a> {
    sys: &'a SystemSpec,
    f: Vec<f64>,
    inc: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a SystemSpec) -> Self {
        let n = sys.state_dim();
        Stepper {
            sys,
            f: vec![0.0; n],
            inc: vec![0.0; n],
            scratch: vec![0.0; n * sys.noise_dim()],
        }
    }

    #[inline]
    fn step(&mut self, x: &mut [f64], u: &[f64], dt: f64, db: &[f64], k: usize) -> Result<()> {
        self.sys.drift_into(x, u, &mut self.f);
        self.inc.fill(0.0);
        self.sys.dispersion().apply_add(x, u, db, &mut self.scratch, &mut self.inc);
        for i in 0..x.len() {
            x[i] += self.f[i] * dt + self.inc[i];
            if !x[i].is_finite() {
                return Err(Error::Divergence {
                    step: k + 1,
                    path: None,
                    detail: format!("state component {i} became {}", x[i]),
                });
            }
        }
        Ok(())
    }
}

fn check_stride(grid: &TimeGrid, every: usize) -> Result<TimeGrid> {
    grid.coarsen(every)
}

fn warn_step_size(sys: &SystemSpec, dt: f64) {
    if let Some(l) = sys.lipschitz_budget() {
        if dt * l > 0.1 {
            log::warn!("dt·L = {:.3} exceeds 0.1; Euler–Maruyama may be inaccurate", dt * l);
        }
    }
}

fn check_system_inputs(sys: &SystemSpec, x0: &[f64], u: &InputSignal) -> Result<()> {
    check_dim("initial state", x0.len(), sys.state_dim())?;
    check_dim("input signal", u.dim(), sys.input_dim())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("initial state has non-finite entries"));
    }
    Ok(())
}

/// Streams one Euler–Maruyama path, calling `visit(k, x, u)` at every
/// `every`-th grid point (record index `k`).
#[allow(clippy::too_many_arguments)]
pub fn em_path<V>(
    sys: &SystemSpec,
    x0: &[f64],
    u: &InputSignal,
    grid: &TimeGrid,
    rng: &mut PathRng,
    every: usize,
    mut visit: V,
) -> Result<()>
where
    V: FnMut(usize, &[f64], &[f64]),
{
    check_system_inputs(sys, x0, u)?;
    check_stride(grid, every)?;
    let (m, r) = (sys.input_dim(), sys.noise_dim());
    let dt = grid.dt;
    let sq = dt.sqrt();
    let mut st = Stepper::new(sys);
    let mut x = x0.to_vec();
    let mut uk = vec![0.0; m];
    let mut db = vec![0.0; r];
    u.value_into(grid.t(0), &mut uk);
    visit(0, &x, &uk);
    for k in 0..grid.steps {
        rng.fill_normal(&mut db);
        db.iter_mut().for_each(|z| *z *= sq);
        st.step(&mut x, &uk, dt, &db, k)?;
        u.value_into(grid.t(k + 1), &mut uk);
        if (k + 1) % every == 0 {
            visit((k + 1) / every, &x, &uk);
        }
    }
    Ok(())
}

/// `x_{k+1} = x_k + F(x_k, u(t_k))·dt + Σ(x_k, u(t_k))·ΔB_k`, recording every step.
pub fn euler_maruyama(
    sys: &SystemSpec,
    x0: &[f64],
    u: &InputSignal,
    grid: &TimeGrid,
    lineage: RngLineage,
) -> Result<Trajectory> {
    euler_maruyama_every(sys, x0, u, grid, lineage, 1)
}

/// [`euler_maruyama`] keeping every `every`-th point.
pub fn euler_maruyama_every(
    sys: &SystemSpec,
    x0: &[f64],
    u: &InputSignal,
    grid: &TimeGrid,
    lineage: RngLineage,
    every: usize,
) -> Result<Trajectory> {
    warn_step_size(sys, grid.dt);
    let rec = check_stride(grid, every)?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut xs = Vec::with_capacity(rec.len() * n);
    let mut us = Vec::with_capacity(rec.len() * m);
    let mut rng = lineage.stream();
    em_path(sys, x0, u, grid, &mut rng, every, |_, x, uk| {
        xs.extend_from_slice(x);
        us.extend_from_slice(uk);
    })?;
    Ok(Trajectory::from_rows(rec, n, m, &xs, &us, Some(lineage)))
}

/// Streams a coupled pair, calling `visit(k, x, y)` at recorded points.
#[allow(clippy::too_many_arguments)]
pub fn pair_path<V>(
    sys_x: &SystemSpec,
    sys_y: &SystemSpec,
    x0: &[f64],
    y0: &[f64],
    u_x: &InputSignal,
    u_y: &InputSignal,
    mode: CouplingMode,
    grid: &TimeGrid,
    rng: &mut PathRng,
    every: usize,
    mut visit: V,
) -> Result<()>
where
    V: FnMut(usize, &[f64], &[f64]),
{
    check_system_inputs(sys_x, x0, u_x)?;
    check_system_inputs(sys_y, y0, u_y)?;
    check_dim("paired state", sys_y.state_dim(), sys_x.state_dim())?;
    check_stride(grid, every)?;
    let (rx, ry) = (sys_x.noise_dim(), sys_y.noise_dim());
    if mode == CouplingMode::Common && rx != ry {
        return Err(Error::input(format!(
            "common-noise coupling needs equal dispersion column counts, got {rx} and {ry}"
        )));
    }
    let dt = grid.dt;
    let sq = dt.sqrt();
    let mut sx = Stepper::new(sys_x);
    let mut sy = Stepper::new(sys_y);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    let mut ux = vec![0.0; sys_x.input_dim()];
    let mut uy = vec![0.0; sys_y.input_dim()];
    let mut db = vec![0.0; if mode == CouplingMode::Common { rx } else { rx + ry }];
    visit(0, &x, &y);
    for k in 0..grid.steps {
        let t = grid.t(k);
        u_x.value_into(t, &mut ux);
        u_y.value_into(t, &mut uy);
        rng.fill_normal(&mut db);
        db.iter_mut().for_each(|z| *z *= sq);
        match mode {
            CouplingMode::Common => {
                sx.step(&mut x, &ux, dt, &db, k)?;
                sy.step(&mut y, &uy, dt, &db, k)?;
            }
            CouplingMode::Independent => {
                sx.step(&mut x, &ux, dt, &db[..rx], k)?;
                sy.step(&mut y, &uy, dt, &db[rx..], k)?;
            }
        }
        if (k + 1) % every == 0 {
            visit((k + 1) / every, &x, &y);
        }
    }
    Ok(())
}

/// Simulates two systems under one coupling, recording every step.
#[allow(clippy::too_many_arguments)]
pub fn integrate_pair(
    sys_x: &SystemSpec,
    sys_y: &SystemSpec,
    x0: &[f64],
    y0: &[f64],
    u_x: &InputSignal,
    u_y: &InputSignal,
    mode: CouplingMode,
    grid: &TimeGrid,
    lineage: RngLineage,
) -> Result<(Trajectory, Trajectory)> {
    warn_step_size(sys_x, grid.dt);
    let (n, mx, my) = (sys_x.state_dim(), sys_x.input_dim(), sys_y.input_dim());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut rng = lineage.stream();
    pair_path(sys_x, sys_y, x0, y0, u_x, u_y, mode, grid, &mut rng, 1, |_, x, y| {
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
    })?;
    let rec_u = |sig: &InputSignal| -> Vec<f64> { grid.times().flat_map(|t| sig.value(t)).collect() };
    Ok((
        Trajectory::from_rows(*grid, n, mx, &xs, &rec_u(u_x), Some(lineage)),
        Trajectory::from_rows(*grid, n, my, &ys, &rec_u(u_y), Some(lineage)),
    ))
}

/// Up to 1001 evenly spaced times on `grid`, used for the boundary condition check.
fn feller_times(grid: &TimeGrid) -> Vec<f64> {
    let k = grid.steps.min(1000);
    if k == 0 {
        return vec![grid.t0];
    }
    let span = grid.end() - grid.t0;
    (0..=k).map(|j| grid.t0 + span * j as f64 / k as f64).collect()
}

/// Streams a cascade: the input process (state `v0` = `ξ₀` for OU, `u₀`
/// for JD) and the system driven by the realized input. Calls
/// `visit(k, u, x)` at recorded points and returns the clamp count.
#[allow(clippy::too_many_arguments)]
pub fn cascade_path<V>(
    input: &CascadeInput,
    sys: &SystemSpec,
    x0: &[f64],
    v0: &[f64],
    grid: &TimeGrid,
    rng: &mut PathRng,
    every: usize,
    mut visit: V,
) -> Result<u64>
where
    V: FnMut(usize, &[f64], &[f64]),
{
    let m = input.dim();
    check_dim("cascade input", sys.input_dim(), m)?;
    check_dim("initial state", x0.len(), sys.state_dim())?;
    check_dim("initial input-noise state", v0.len(), m)?;
    check_stride(grid, every)?;
    if let CascadeInput::Jd(p) = input {
        for (i, (v, a)) in v0.iter().zip(&p.a).enumerate() {
            if !(*v > 0.0 && v < a) {
                return Err(Error::input(format!("JD initial value u0[{i}] = {v} is outside (0, {a})")));
            }
        }
        let report = noise::feller_check(p, &feller_times(grid))?;
        if !report.holds && !p.unsafe_ok {
            return Err(Error::Configuration(format!(
                "Feller condition σ_u²/(2c)·a ≤ θ(t) ≤ (1 − σ_u²/(2c))·a with σ_u² < c fails on the grid \
                 (margin {:e}); set the unsafe flag to simulate anyway",
                report.margin
            )));
        }
    }
    let r = sys.noise_dim();
    let dt = grid.dt;
    let sq = dt.sqrt();
    let mut st = Stepper::new(sys);
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut v_next = vec![0.0; m];
    let mut theta = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut z = vec![0.0; m + r];
    let mut clamps = 0u64;
    let ou_tr = match input {
        CascadeInput::Ou { params, .. } => Some(params.transition(dt)),
        CascadeInput::Jd(_) => None,
    };
    let realize = |t: f64, v: &[f64], theta: &mut [f64], u: &mut [f64]| match input {
        CascadeInput::Ou { theta: th, .. } => {
            th.value_into(t, theta);
            for i in 0..v.len() {
                u[i] = theta[i] + v[i];
            }
        }
        CascadeInput::Jd(_) => u.copy_from_slice(v),
    };
    realize(grid.t(0), &v, &mut theta, &mut u);
    visit(0, &u, &x);
    for k in 0..grid.steps {
        let t = grid.t(k);
        rng.fill_normal(&mut z);
        let (zn, zx) = z.split_at_mut(m);
        zx.iter_mut().for_each(|w| *w *= sq);
        st.step(&mut x, &u, dt, zx, k)?;
        match input {
            CascadeInput::Ou { .. } => {
                let (decay, std) = ou_tr.unwrap_or((1.0, 0.0));
                for i in 0..m {
                    v[i] = decay * v[i] + std * zn[i];
                }
            }
            CascadeInput::Jd(p) => {
                p.theta.value_into(t, &mut theta);
                if noise::jd_step_into(&v, &theta, p, dt, zn, &mut v_next)? {
                    clamps += 1;
                }
                std::mem::swap(&mut v, &mut v_next);
            }
        }
        realize(grid.t(k + 1), &v, &mut theta, &mut u);
        if (k + 1) % every == 0 {
            visit((k + 1) / every, &u, &x);
        }
    }
    Ok(clamps)
}

/// Simulates a cascade, returning `(u_t, x_t)` trajectories. The input
/// trajectory stores `u_t` as its state and carries the clamp count.
pub fn integrate_cascade(
    input: &CascadeInput,
    sys: &SystemSpec,
    x0: &[f64],
    v0: &[f64],
    grid: &TimeGrid,
    lineage: RngLineage,
) -> Result<(Trajectory, Trajectory)> {
    integrate_cascade_every(input, sys, x0, v0, grid, lineage, 1)
}

/// [`integrate_cascade`] keeping every `every`-th point.
pub fn integrate_cascade_every(
    input: &CascadeInput,
    sys: &SystemSpec,
    x0: &[f64],
    v0: &[f64],
    grid: &TimeGrid,
    lineage: RngLineage,
    every: usize,
) -> Result<(Trajectory, Trajectory)> {
    warn_step_size(sys, grid.dt);
    let rec = check_stride(grid, every)?;
    let (n, m) = (sys.state_dim(), input.dim());
    let (mut us, mut xs) = (Vec::new(), Vec::new());
    let mut rng = lineage.stream();
    let clamps = cascade_path(input, sys, x0, v0, grid, &mut rng, every, |_, u, x| {
        us.extend_from_slice(u);
        xs.extend_from_slice(x);
    })?;
    let mut ut = Trajectory::from_rows(rec, m, 0, &us, &[], Some(lineage));
    ut.clamp_count = clamps;
    let xt = Trajectory::from_rows(rec, n, m, &xs, &us, Some(lineage));
    Ok((ut, xt))
}

/// Closed-loop vector field `(t, x) ↦ F(x, u(t))` of a system under a
/// deterministic input.
pub fn closed_loop<'a>(sys: &'a SystemSpec, u: &'a InputSignal) -> impl Fn(f64, &[f64], &mut [f64]) + 'a {
    move |t, x, out| {
        let mut uv = [0.0; 16];
        let m = u.dim();
        if m <= uv.len() {
            u.value_into(t, &mut uv[..m]);
            sys.drift_into(x, &uv[..m], out);
        } else {
            let uv = u.value(t);
            sys.drift_into(x, &uv, out);
        }
    }
}

/// Classical fourth-order Runge–Kutta for `ẋ = f(t, x)`.
pub fn ode_rk4<F>(f: F, x0: &[f64], grid: &TimeGrid) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    ode_rk4_every(f, x0, grid, 1)
}

/// [`ode_rk4`] keeping every `every`-th point.
pub fn ode_rk4_every<F>(f: F, x0: &[f64], grid: &TimeGrid, every: usize) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let rec = check_stride(grid, every)?;
    let n = x0.len();
    let mut xs = Vec::with_capacity(rec.len() * n);
    ode_rk4_path(&f, x0, grid, every, |_, x| xs.extend_from_slice(x))?;
    Ok(Trajectory::from_rows(rec, n, 0, &xs, &[], None))
}

/// Streaming RK4: calls `visit(k, x)` at recorded points.
pub fn ode_rk4_path<F, V>(f: &F, x0: &[f64], grid: &TimeGrid, every: usize, mut visit: V) -> Result<()>
where
    F: Fn(f64, &[f64], &mut [f64]),
    V: FnMut(usize, &[f64]),
{
    check_stride(grid, every)?;
    let n = x0.len();
    let h = grid.dt;
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    visit(0, &x);
    for k in 0..grid.steps {
        let t = grid.t(k);
        f(t, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !x[i].is_finite() {
                return Err(Error::Divergence {
                    step: k + 1,
                    path: None,
                    detail: format!("ODE state component {i} became {}", x[i]),
                });
            }
        }
        if (k + 1) % every == 0 {
            visit((k + 1) / every, &x);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Metric;
    use crate::noise::ou_second_moment;
    use crate::system::{Constants, Dispersion};
    use nalgebra::{dmatrix, DVector};
    use std::sync::Arc;

    fn scalar(c: f64, sigma: f64) -> SystemSpec {
        SystemSpec::linear_tracker(1, c, sigma).unwrap()
    }

    #[test]
    fn noiseless_decay() {
        let sys = scalar(1.0, 0.0);
        let grid = TimeGrid::over(1.0, 1e-4).unwrap();
        let tr = euler_maruyama(&sys, &[1.0], &InputSignal::zero(1), &grid, RngLineage::new(0, 0)).unwrap();
        assert!((tr.terminal()[0] - (-1f64).exp()).abs() < 1e-3);
        assert_eq!(tr.state(0), vec![1.0]);
    }

    #[test]
    fn zero_steps() {
        let sys = scalar(1.0, 0.5);
        let grid = TimeGrid::new(0.0, 0.1, 0).unwrap();
        let tr = euler_maruyama(&sys, &[0.7], &InputSignal::zero(1), &grid, RngLineage::new(0, 0)).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.state(0), vec![0.7]);
    }

    #[test]
    fn em_ou_second_moment() {
        let (c, sigma) = (1.0, 1.0);
        let sys = scalar(c, sigma);
        let grid = TimeGrid::over(1.0, 1e-3).unwrap();
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = RngLineage::new(3, i).stream();
                let mut last = 0.0;
                em_path(&sys, &[1.0], &InputSignal::zero(1), &grid, &mut rng, 1000, |_, x, _| last = x[0]).unwrap();
                last * last
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want = ou_second_moment(1.0, c, sigma, 1.0);
        assert!((mean - want).abs() < 3.0 * (var / n as f64).sqrt() + 2e-3, "{mean} vs {want}");
    }

    #[test]
    fn divergence_names_step() {
        let sys = SystemSpec::new(
            1,
            1,
            Arc::new(|x: &[f64], _: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]),
            Dispersion::zero(1),
            Metric::identity(1),
            Constants::new(1.0, 0.0, 0.0).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::over(10.0, 0.1).unwrap();
        let err = euler_maruyama(&sys, &[10.0], &InputSignal::zero(1), &grid, RngLineage::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step > 0 && step <= 100));
    }

    #[test]
    fn common_noise_identical_systems_coincide() {
        let sys = scalar(1.5, 0.8);
        let u = InputSignal::scalar_sine(0.0, 1.0, 1.0);
        let grid = TimeGrid::over(3.0, 1e-3).unwrap();
        let (a, b) = integrate_pair(&sys, &sys, &[0.3], &[0.3], &u, &u, CouplingMode::Common, &grid, RngLineage::new(1, 2))
            .unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn common_noise_difference_is_deterministic() {
        // F = −c(x−u) with additive Σ: the difference solves the noiseless ODE
        let c = 2.0;
        let sys = scalar(c, 0.5);
        let ux = InputSignal::scalar_sine(0.0, 1.0, 1.0);
        let uy = InputSignal::zero(1);
        let grid = TimeGrid::over(4.0, 1e-3).unwrap();
        let (x, y) =
            integrate_pair(&sys, &sys, &[1.0], &[-1.0], &ux, &uy, CouplingMode::Common, &grid, RngLineage::new(5, 0))
                .unwrap();
        let quiet = scalar(c, 0.0);
        let (xd, yd) =
            integrate_pair(&quiet, &quiet, &[1.0], &[-1.0], &ux, &uy, CouplingMode::Common, &grid, RngLineage::new(5, 0))
                .unwrap();
        for k in 0..x.len() {
            let d = x.states[(k, 0)] - y.states[(k, 0)];
            let dd = xd.states[(k, 0)] - yd.states[(k, 0)];
            assert!((d - dd).abs() < 1e-12, "step {k}");
        }
    }

    #[test]
    fn common_noise_pathwise_contraction() {
        let c = 1.0;
        let sys = SystemSpec::affine(
            dmatrix![-1.0, 0.5; -0.5, -1.0],
            dmatrix![1.0; 0.0],
            dmatrix![0.3, 0.0; 0.1, 0.2],
            Metric::identity(2),
        )
        .unwrap();
        assert!((sys.constants().c - c).abs() < 1e-12);
        let u = InputSignal::constant(vec![0.4]);
        let grid = TimeGrid::over(5.0, 1e-3).unwrap();
        let (x0, y0) = ([2.0, -1.0], [-1.0, 0.5]);
        let (x, y) = integrate_pair(&sys, &sys, &x0, &y0, &u, &u, CouplingMode::Common, &grid, RngLineage::new(8, 1)).unwrap();
        let d0 = ((x0[0] - y0[0]).powi(2) + (x0[1] - y0[1]).powi(2)).sqrt();
        for k in 0..x.len() {
            let t = grid.t(k);
            let d = ((x.states[(k, 0)] - y.states[(k, 0)]).powi(2) + (x.states[(k, 1)] - y.states[(k, 1)]).powi(2)).sqrt();
            assert!(d <= d0 * (-c * t).exp() * (1.0 + 10.0 * grid.dt * c), "t={t}");
        }
    }

    #[test]
    fn independent_mode_draws_two_blocks() {
        let sys = scalar(1.0, 1.0);
        let grid = TimeGrid::over(0.01, 1e-3).unwrap();
        let u = InputSignal::zero(1);
        let mut rng = RngLineage::new(4, 0).stream();
        pair_path(&sys, &sys, &[0.0], &[0.0], &u, &u, CouplingMode::Independent, &grid, &mut rng, 1, |_, _, _| {}).unwrap();
        let mut reference = RngLineage::new(4, 0).stream();
        for _ in 0..20 {
            reference.normal();
        }
        assert_eq!(rng.word_pos(), reference.word_pos());
    }

    #[test]
    fn common_mode_rejects_mismatched_noise() {
        let a = scalar(1.0, 1.0);
        let b = a.clone().with_dispersion(Dispersion::Constant(dmatrix![0.1, 0.2])).unwrap();
        let grid = TimeGrid::over(0.01, 1e-3).unwrap();
        let u = InputSignal::zero(1);
        assert!(integrate_pair(&a, &b, &[0.0], &[0.0], &u, &u, CouplingMode::Common, &grid, RngLineage::new(0, 0)).is_err());
    }

    #[test]
    fn quiet_ou_cascade_follows_theta() {
        let theta = InputSignal::scalar_sine(0.0, 1.0, 1.0);
        let input = CascadeInput::Ou {
            params: OUParams::new(1.0, 0.0, 1).unwrap(),
            theta: theta.clone(),
        };
        let sys = scalar(1.0, 0.0);
        let grid = TimeGrid::over(2.0, 1e-3).unwrap();
        let (u, _) = integrate_cascade(&input, &sys, &[0.0], &[0.0], &grid, RngLineage::new(0, 0)).unwrap();
        for k in 0..u.len() {
            assert!((u.states[(k, 0)] - theta.value(grid.t(k))[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn jd_cascade_stays_inside() {
        let p = JDParams::new(1.0, InputSignal::constant(vec![0.5]), 0.5f64.sqrt(), vec![1.0], &[0.0], false).unwrap();
        let sys = scalar(1.0, 0.2);
        let grid = TimeGrid::over(20.0, 1e-3).unwrap();
        let (u, _) = integrate_cascade(&CascadeInput::Jd(p), &sys, &[0.5], &[0.5], &grid, RngLineage::new(2, 0)).unwrap();
        assert!(u.states.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!((u.clamp_count as f64) < 1e-3 * grid.steps as f64);
    }

    #[test]
    fn jd_cascade_refuses_feller_violation_unless_unsafe() {
        let theta = InputSignal::piecewise_linear(vec![0.0, 1.0], vec![vec![0.5], vec![0.05]]).unwrap();
        // constructed at t=0 only, where the condition holds
        let p = JDParams::new(1.0, theta, 0.5f64.sqrt(), vec![1.0], &[0.0], false).unwrap();
        let sys = scalar(1.0, 0.0);
        let grid = TimeGrid::over(2.0, 1e-2).unwrap();
        let input = CascadeInput::Jd(p.clone());
        let err = integrate_cascade(&input, &sys, &[0.5], &[0.5], &grid, RngLineage::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        let input = CascadeInput::Jd(JDParams { unsafe_ok: true, ..p });
        assert!(integrate_cascade(&input, &sys, &[0.5], &[0.5], &grid, RngLineage::new(0, 0)).is_ok());
    }

    #[test]
    fn rk4_scalar_decay() {
        let grid = TimeGrid::over(1.0, 0.01).unwrap();
        let tr = ode_rk4(|_, x, o| o[0] = -x[0], &[1.0], &grid).unwrap();
        assert!((tr.terminal()[0] - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rk4_forced_matches_variation_of_constants() {
        // ẋ = −c(x − sin t), x(0)=0: x(t) = c∫₀ᵗ e^{−c(t−s)} sin s ds,
        // evaluated by fine composite Simpson
        let c = 2.0;
        let t_end = 3.0;
        let grid = TimeGrid::over(t_end, 1e-3).unwrap();
        let tr = ode_rk4(|t, x, o| o[0] = -c * (x[0] - t.sin()), &[0.0], &grid).unwrap();
        let nq = 200_000;
        let h = t_end / nq as f64;
        let g = |s: f64| c * (-c * (t_end - s)).exp() * s.sin();
        let mut acc = g(0.0) + g(t_end);
        for j in 1..nq {
            acc += if j % 2 == 1 { 4.0 } else { 2.0 } * g(j as f64 * h);
        }
        let want = acc * h / 3.0;
        assert!((tr.terminal()[0] - want).abs() < 1e-8);
    }

    #[test]
    fn rk4_linear_matches_eigendecomposition() {
        // symmetric A = QΛQᵀ, x(t) = Q e^{Λt} Qᵀ x0
        let a = dmatrix![-2.0, 0.5; 0.5, -1.0];
        let eig = a.clone().symmetric_eigen();
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let t = 2.0;
        let expo = DMatrix::from_diagonal(&eig.eigenvalues.map(|l: f64| (l * t).exp()));
        let want = &eig.eigenvectors * expo * eig.eigenvectors.transpose() * &x0;
        let grid = TimeGrid::over(t, 1e-3).unwrap();
        let tr = ode_rk4(
            |_, x, o| {
                o[0] = a[(0, 0)] * x[0] + a[(0, 1)] * x[1];
                o[1] = a[(1, 0)] * x[0] + a[(1, 1)] * x[1];
            },
            x0.as_slice(),
            &grid,
        )
        .unwrap();
        let got = tr.terminal();
        assert!((got[0] - want[0]).abs() < 1e-8 && (got[1] - want[1]).abs() < 1e-8);
    }

    #[test]
    fn stride_recording_matches_full() {
        let sys = scalar(1.0, 0.4);
        let u = InputSignal::zero(1);
        let grid = TimeGrid::over(1.0, 1e-3).unwrap();
        let full = euler_maruyama(&sys, &[1.0], &u, &grid, RngLineage::new(6, 6)).unwrap();
        let thin = euler_maruyama_every(&sys, &[1.0], &u, &grid, RngLineage::new(6, 6), 100).unwrap();
        assert_eq!(thin.len(), 11);
        for k in 0..thin.len() {
            assert_eq!(thin.states[(k, 0)], full.states[(100 * k, 0)]);
        }
        assert!(euler_maruyama_every(&sys, &[1.0], &u, &grid, RngLineage::new(6, 6), 7).is_err());
    }
}
