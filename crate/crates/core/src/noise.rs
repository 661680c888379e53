//! Noise processes: Brownian increments, Ornstein–Uhlenbeck input noise
//! (stepped by its exact Gaussian transition) and Jacobi diffusions on a box
//! (stepped by full-truncation Euler with a boundary micro-clamp).

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::RngLineage;
use crate::signal::InputSignal;

/// `steps × dim` matrix of i.i.d. `N(0, dt)` increments.
pub fn brownian_increments(dim: usize, grid: &TimeGrid, lineage: RngLineage) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::input("Brownian dimension must be at least 1"));
    }
    let mut rng = lineage.stream();
    let s = grid.dt.sqrt();
    // row-major draw order: all components of step k before step k+1
    let mut out = DMatrix::zeros(grid.steps, dim);
    for k in 0..grid.steps {
        for j in 0..dim {
            out[(k, j)] = s * rng.normal();
        }
    }
    Ok(out)
}

/// `dξ = −c·ξ dt + (σ/√m) dB` on `ℝᵐ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OUParams {
    pub c: f64,
    pub sigma: f64,
    pub dim: usize,
}

impl OUParams {
    pub fn new(c: f64, sigma: f64, dim: usize) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::input(format!("OU rate must be positive, got {c}")));
        }
        if !(sigma >= 0.0) || dim == 0 {
            return Err(Error::input(format!("invalid OU parameters sigma={sigma}, dim={dim}")));
        }
        Ok(OUParams { c, sigma, dim })
    }

    /// Stationary `E‖ξ‖₂² = σ²/(2c)`.
    pub fn stationary_second_moment(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.c)
    }

    /// `(e^{−c·dt}, per-component transition std)`.
    pub fn transition(&self, dt: f64) -> (f64, f64) {
        let m = self.dim as f64;
        if self.c == 0.0 {
            return (1.0, self.sigma * (dt / m).sqrt());
        }
        let decay = (-self.c * dt).exp();
        let var = self.sigma * self.sigma / (2.0 * self.c * m) * (-(-2.0 * self.c * dt).exp_m1());
        (decay, var.sqrt())
    }
}

/// Exact OU transition over `dt`:
/// `e^{−c·dt}·ξ + √(σ²/(2cm)·(1 − e^{−2c·dt}))·z`. With `c = 0` this is
/// Brownian scaling `σ·√(dt/m)·z`.
pub fn ou_exact_step(xi: &[f64], p: &OUParams, dt: f64, z: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::input(format!("time step must be positive, got {dt}")));
    }
    check_dim("OU state", xi.len(), p.dim)?;
    check_dim("OU normals", z.len(), p.dim)?;
    let (decay, std) = p.transition(dt);
    Ok(xi.iter().zip(z).map(|(x, zi)| decay * x + std * zi).collect())
}

/// Closed-form `E‖ξ_t‖₂² = e^{−2ct}‖ξ₀‖² + σ²/(2c)·(1 − e^{−2ct})`.
pub fn ou_second_moment(x0_norm_sq: f64, c: f64, sigma: f64, t: f64) -> f64 {
    let e = (-2.0 * c * t).exp();
    e * x0_norm_sq + sigma * sigma / (2.0 * c) * (-(-2.0 * c * t).exp_m1())
}

/// `du = −c(u − θ(t))dt + σ_u·diag(u ⊙ (a − u))^{1/2} dB` on `(0, a)`.
#[derive(Debug, Clone)]
pub struct JDParams {
    pub c: f64,
    pub theta: InputSignal,
    pub sigma_u: f64,
    pub a: Vec<f64>,
    /// Set when the boundary condition was not verified at construction.
    pub unsafe_ok: bool,
}

/// Relative width of the clamp band `[ε_b, a − ε_b]`.
pub const JD_CLAMP_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerReport {
    pub holds: bool,
    /// Smallest slack over components and sampled times; negative when violated.
    pub margin: f64,
}

impl JDParams {
    /// Validates parameters and checks the boundary-attainment condition at
    /// `t_samples`. A violated condition is an error unless `allow_unsafe`,
    /// in which case the params are marked unsafe.
    pub fn new(
        c: f64,
        theta: InputSignal,
        sigma_u: f64,
        a: Vec<f64>,
        t_samples: &[f64],
        allow_unsafe: bool,
    ) -> Result<Self> {
        if !(c > 0.0) || !(sigma_u >= 0.0) {
            return Err(Error::input(format!("invalid JD parameters c={c}, sigma_u={sigma_u}")));
        }
        check_dim("JD theta", theta.dim(), a.len())?;
        if a.iter().any(|ai| !(*ai > 0.0)) {
            return Err(Error::input(format!("JD upper bounds must be positive, got {a:?}")));
        }
        let mut p = JDParams {
            c,
            theta,
            sigma_u,
            a,
            unsafe_ok: false,
        };
        let report = feller_check(&p, t_samples)?;
        if !report.holds {
            if !allow_unsafe {
                return Err(Error::Configuration(format!(
                    "Feller condition σ_u²/(2c)·a ≤ θ(t) ≤ (1 − σ_u²/(2c))·a with σ_u² < c is violated \
                     (σ_u² = {}, c = {c}, margin = {:e}); boundary may be reached",
                    sigma_u * sigma_u,
                    report.margin
                )));
            }
            p.unsafe_ok = true;
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `‖a‖₂²`.
    pub fn a_norm_sq(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum()
    }
}

/// Evaluates `σ²/(2c)·a ≤ θ(t) ≤ (1 − σ²/(2c))·a` and `σ² < c` at each
/// sampled time. The margin is the smallest slack of the two-sided
/// inequality.
pub fn feller_check(p: &JDParams, t_samples: &[f64]) -> Result<FellerReport> {
    if t_samples.is_empty() {
        return Err(Error::input("feller_check needs at least one sample time"));
    }
    let s2 = p.sigma_u * p.sigma_u;
    let ratio = s2 / (2.0 * p.c);
    let mut margin = f64::INFINITY;
    let mut theta = vec![0.0; p.dim()];
    for &t in t_samples {
        p.theta.value_into(t, &mut theta);
        for (th, a) in theta.iter().zip(&p.a) {
            margin = margin.min(th - ratio * a).min((1.0 - ratio) * a - th);
        }
    }
    Ok(FellerReport {
        holds: margin >= 0.0 && s2 < p.c,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JdStepOutcome {
    pub state: Vec<f64>,
    /// Whether any component needed the boundary clamp.
    pub clamped: bool,
}

/// One full-truncation Euler step of the Jacobi diffusion followed by a
/// clamp to `[ε_b, a − ε_b]`, `ε_b = 1e-12·aᵢ`.
pub fn jd_step(u: &[f64], p: &JDParams, t: f64, dt: f64, z: &[f64]) -> Result<JdStepOutcome> {
    let m = p.dim();
    check_dim("JD state", u.len(), m)?;
    check_dim("JD normals", z.len(), m)?;
    let mut theta = vec![0.0; m];
    p.theta.value_into(t, &mut theta);
    let mut out = vec![0.0; m];
    let clamped = jd_step_into(u, &theta, p, dt, z, &mut out)?;
    Ok(JdStepOutcome { state: out, clamped })
}

/// Allocation-free core of [`jd_step`]; returns whether a clamp fired.
#[inline]
pub(crate) fn jd_step_into(u: &[f64], theta: &[f64], p: &JDParams, dt: f64, z: &[f64], out: &mut [f64]) -> Result<bool> {
    let sq = dt.sqrt();
    let mut clamped = false;
    for i in 0..u.len() {
        let a = p.a[i];
        let ui = u[i];
        if !(0.0..=a).contains(&ui) {
            return Err(Error::StateCorruption(format!(
                "JD component {i} = {ui} outside [0, {a}] on entry"
            )));
        }
        let vol = (ui * (a - ui)).max(0.0).sqrt();
        let prop = ui - p.c * (ui - theta[i]) * dt + p.sigma_u * vol * z[i] * sq;
        let eps = JD_CLAMP_REL * a;
        let v = if prop < eps {
            clamped = true;
            eps
        } else if prop > a - eps {
            clamped = true;
            a - eps
        } else {
            prop
        };
        out[i] = v;
    }
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_moments() {
        let grid = TimeGrid::new(0.0, 1.0, 100_000).unwrap();
        let db = brownian_increments(1, &grid, RngLineage::new(1, 0)).unwrap();
        let n = db.len() as f64;
        let mean = db.sum() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "{mean}");

        let grid = TimeGrid::new(0.0, 0.25, 100_000).unwrap();
        let db = brownian_increments(1, &grid, RngLineage::new(2, 0)).unwrap();
        let mean = db.sum() / n;
        let var = db.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.25).abs() < 0.25 * 0.05, "{var}");
    }

    #[test]
    fn brownian_is_deterministic() {
        let grid = TimeGrid::new(0.0, 0.1, 50).unwrap();
        let a = brownian_increments(3, &grid, RngLineage::new(9, 4)).unwrap();
        let b = brownian_increments(3, &grid, RngLineage::new(9, 4)).unwrap();
        assert_eq!(a, b);
        assert!(brownian_increments(0, &grid, RngLineage::new(9, 4)).is_err());
    }

    #[test]
    fn ou_noiseless_step_is_pure_decay() {
        let p = OUParams::new(2.0, 0.0, 2).unwrap();
        let out = ou_exact_step(&[1.0, -3.0], &p, 0.1, &[5.0, 5.0]).unwrap();
        let e = (-0.2f64).exp();
        assert_eq!(out, vec![e, -3.0 * e]);
    }

    #[test]
    fn ou_transition_plug_in_values() {
        let p = OUParams::new(1.0, 2f64.sqrt(), 1).unwrap();
        let (decay, std) = p.transition(2f64.ln());
        assert!((decay - 0.5).abs() < 1e-15);
        assert!((std - 0.75f64.sqrt()).abs() < 1e-15);
        // long horizon: variance tends to σ²/(2c)
        let p = OUParams::new(1.0, 1.0, 1).unwrap();
        let (_, std) = p.transition(50.0);
        assert!((std * std - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ou_transition_matches_fine_euler() {
        // Euler–Maruyama with dt=1e-4 over ln 2, fed the same Brownian path,
        // reproduces the exact transition's mean and variance.
        let p = OUParams::new(1.0, 2f64.sqrt(), 1).unwrap();
        let horizon = 2f64.ln();
        let steps = 6931;
        let h = horizon / steps as f64;
        let n = 4000;
        let mut rng = RngLineage::new(77, 0).stream();
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut x = 1.0;
            for _ in 0..steps {
                x += -p.c * x * h + p.sigma * h.sqrt() * rng.normal();
            }
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 4.0 * (0.75f64 / n as f64).sqrt(), "{mean}");
        assert!((var - 0.75).abs() < 0.75 * 0.08, "{var}");
    }

    #[test]
    fn ou_zero_rate_falls_back_to_brownian() {
        let p = OUParams { c: 0.0, sigma: 2.0, dim: 4 };
        let out = ou_exact_step(&[0.0; 4], &p, 0.25, &[1.0; 4]).unwrap();
        assert!(out.iter().all(|v| (v - 2.0 * (0.25f64 / 4.0).sqrt()).abs() < 1e-15));
    }

    #[test]
    fn ou_second_moment_limits() {
        assert_eq!(ou_second_moment(4.0, 1.0, 1.0, 0.0), 4.0);
        assert!((ou_second_moment(0.0, 1.0, 1.0, 100.0) - 0.5).abs() < 1e-15);
        let want = 4.0 * (-1f64).exp() + 0.5 * (1.0 - (-1f64).exp());
        assert!((ou_second_moment(4.0, 1.0, 1.0, 0.5) - want).abs() < 1e-15);
    }

    #[test]
    fn ou_second_moment_matches_exact_transition_ensemble() {
        let p = OUParams::new(1.0, 1.0, 1).unwrap();
        let n = 100_000;
        let mut vals = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = RngLineage::new(5, i as u64).stream();
            let z = [rng.normal()];
            vals.push(ou_exact_step(&[2.0], &p, 0.5, &z).unwrap()[0].powi(2));
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let want = ou_second_moment(4.0, 1.0, 1.0, 0.5);
        assert!((mean - want).abs() <= 3.0 * se, "{mean} vs {want} (se {se})");
    }

    fn jd(c: f64, sigma2: f64, a: f64, theta: f64) -> JDParams {
        JDParams::new(c, InputSignal::constant(vec![theta]), sigma2.sqrt(), vec![a], &[0.0], true).unwrap()
    }

    #[test]
    fn feller_examples() {
        let r = feller_check(&jd(1.0, 0.5, 1.0, 0.5), &[0.0, 1.0]).unwrap();
        assert!(r.holds);
        assert!((r.margin - 0.25).abs() < 1e-15);

        let r = feller_check(&jd(1.0, 0.0, 1.0, 0.3), &[0.0]).unwrap();
        assert!(r.holds);
        assert!((r.margin - 0.3).abs() < 1e-15);

        let r = feller_check(&jd(1.0, 1.2, 1.0, 0.5), &[0.0]).unwrap();
        assert!(!r.holds);
        assert!(r.margin < 0.0);
    }

    #[test]
    fn violated_feller_is_configuration_error_unless_unsafe() {
        let err = JDParams::new(1.0, InputSignal::constant(vec![0.5]), 1.2f64.sqrt(), vec![1.0], &[0.0], false);
        assert!(matches!(err, Err(Error::Configuration(_))));
        assert!(jd(1.0, 1.2, 1.0, 0.5).unsafe_ok);
    }

    #[test]
    fn noiseless_jd_converges_geometrically() {
        let p = jd(2.0, 0.0, 1.0, 0.3);
        let dt = 1e-3;
        let steps = (10.0 / p.c / dt) as usize;
        let mut u = vec![0.9];
        for k in 0..steps {
            u = jd_step(&u, &p, k as f64 * dt, dt, &[0.0]).unwrap().state;
        }
        assert!((u[0] - 0.3).abs() <= 1e-4 * 0.6);
    }

    #[test]
    fn clamp_keeps_state_inside() {
        let p = jd(1.0, 0.5, 1.0, 0.5);
        let edge = 1.0 - JD_CLAMP_REL;
        let out = jd_step(&[edge], &p, 0.0, 1e-3, &[1e9]).unwrap();
        assert!(out.state[0] < 1.0);
        assert!(out.clamped);
        let out = jd_step(&[JD_CLAMP_REL], &p, 0.0, 1e-3, &[-1e9]).unwrap();
        assert!(out.state[0] > 0.0);
        assert!(matches!(jd_step(&[1.5], &p, 0.0, 1e-3, &[0.0]), Err(Error::StateCorruption(_))));
    }

    #[test]
    fn jd_stationary_mean_matches_theta() {
        // constant θ: the stationary law is Beta with mean θ/a
        let p = jd(1.0, 0.5, 1.0, 0.3);
        let dt = 1e-2;
        let mut rng = RngLineage::new(12, 0).stream();
        let mut u = vec![0.3];
        let (burn, stride, samples) = (1000, 300, 2000);
        let mut acc = vec![];
        for k in 0..(burn + stride * samples) {
            let z = [rng.normal()];
            u = jd_step(&u, &p, 0.0, dt, &z).unwrap().state;
            if k >= burn && (k - burn) % stride == 0 {
                acc.push(u[0]);
            }
        }
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let var = acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 0.3).abs() <= 3.0 * (var / n).sqrt(), "{mean}");
    }
}
