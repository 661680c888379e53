//! Input-driven SDE specifications `dx = F(x,u)dt + Σ(x,u)dB` and
//! input-indexed equilibrium maps `x*(u)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contraction;
use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;
use crate::signal::InputBox;

/// Writes `F(x, u)` into the output slice.
pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes `Σ(x, u)` (column-major, `n × r`) into the output slice.
pub type DispersionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Dispersion {
    Constant(DMatrix<f64>),
    StateDependent { cols: usize, f: DispersionFn },
}

impl fmt::Debug for Dispersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dispersion::Constant(m) => write!(f, "Constant({}x{})", m.nrows(), m.ncols()),
            Dispersion::StateDependent { cols, .. } => write!(f, "StateDependent(r={cols})"),
        }
    }
}

impl Dispersion {
    pub fn zero(n: usize) -> Self {
        Dispersion::Constant(DMatrix::zeros(n, 1))
    }

    /// `(σ/√n)·Iₙ`, the scaling under which `trace(ΣᵀΣ) = σ²`.
    pub fn isotropic(n: usize, sigma: f64) -> Self {
        Dispersion::Constant(DMatrix::identity(n, n) * (sigma / (n as f64).sqrt()))
    }

    pub fn cols(&self) -> usize {
        match self {
            Dispersion::Constant(m) => m.ncols(),
            Dispersion::StateDependent { cols, .. } => *cols,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Dispersion::Constant(_))
    }

    pub fn eval(&self, n: usize, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        match self {
            Dispersion::Constant(m) => m.clone(),
            Dispersion::StateDependent { cols, f } => {
                let mut buf = vec![0.0; n * cols];
                f(x, u, &mut buf);
                DMatrix::from_column_slice(n, *cols, &buf)
            }
        }
    }

    /// `out += Σ(x,u)·db`; `scratch` must hold `n·r` values.
    #[inline]
    pub(crate) fn apply_add(&self, x: &[f64], u: &[f64], db: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let n = out.len();
        match self {
            Dispersion::Constant(m) => {
                for (j, dbj) in db.iter().enumerate() {
                    if *dbj == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        out[i] += m[(i, j)] * dbj;
                    }
                }
            }
            Dispersion::StateDependent { f, .. } => {
                f(x, u, scratch);
                for (j, dbj) in db.iter().enumerate() {
                    for i in 0..n {
                        out[i] += scratch[j * n + i] * dbj;
                    }
                }
            }
        }
    }
}

/// Certified (or asserted) constants entering every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Contraction rate `c > 0` in the weighted norm.
    pub c: f64,
    /// Input Lipschitz constant `ℓ ≥ 0`.
    pub ell: f64,
    /// Dispersion bound `σ_x² = sup trace(ΣᵀPΣ)`.
    pub sigma_x_sq: f64,
}

impl Constants {
    pub fn new(c: f64, ell: f64, sigma_x_sq: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Certification(format!("contraction rate must be positive, got {c}")));
        }
        if !(ell >= 0.0) || !(sigma_x_sq >= 0.0) {
            return Err(Error::input(format!(
                "constants must be nonnegative: ell={ell}, sigma_x_sq={sigma_x_sq}"
            )));
        }
        Ok(Constants { c, ell, sigma_x_sq })
    }
}

/// Drift `F(x,u) = A·x + B·u + f₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParts {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Clone)]
pub struct SystemSpec {
    n: usize,
    m: usize,
    drift: DriftFn,
    dispersion: Dispersion,
    metric: Metric,
    constants: Constants,
    affine: Option<AffineParts>,
    lipschitz_budget: Option<f64>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("dispersion", &self.dispersion)
            .field("constants", &self.constants)
            .field("affine", &self.affine.is_some())
            .finish()
    }
}

impl SystemSpec {
    /// General system with caller-asserted constants.
    pub fn new(
        n: usize,
        m: usize,
        drift: DriftFn,
        dispersion: Dispersion,
        metric: Metric,
        constants: Constants,
    ) -> Result<Self> {
        check_dim("metric", metric.dim(), n)?;
        if let Dispersion::Constant(s) = &dispersion {
            check_dim("dispersion rows", s.nrows(), n)?;
        }
        Constants::new(constants.c, constants.ell, constants.sigma_x_sq)?;
        Ok(SystemSpec {
            n,
            m,
            drift,
            dispersion,
            metric,
            constants,
            affine: None,
            lipschitz_budget: None,
        })
    }

    /// Affine drift `A·x + B·u` with constant dispersion `Σ`; constants are
    /// computed exactly in the metric `P`.
    pub fn affine(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>, metric: Metric) -> Result<Self> {
        let n = a.nrows();
        SystemSpec::affine_with_offset(a, b, DVector::zeros(n), sigma, metric)
    }

    pub fn affine_with_offset(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        offset: DVector<f64>,
        sigma: DMatrix<f64>,
        metric: Metric,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", a.ncols(), n)?;
        check_dim("B rows", b.nrows(), n)?;
        check_dim("offset", offset.len(), n)?;
        check_dim("dispersion rows", sigma.nrows(), n)?;
        check_dim("metric", metric.dim(), n)?;
        let m = b.ncols();
        let cert = contraction::certify_affine(&a, &b, &sigma, &metric)?;
        if !(cert.c_hat > 0.0) {
            return Err(Error::Certification(format!(
                "affine drift is not contracting in the given metric: osLip = {:e}",
                -cert.c_hat
            )));
        }
        let constants = Constants::new(cert.c_hat, cert.ell_hat, cert.sigma_x_sq_hat)?;
        let (a2, b2, f2) = (a.clone(), b.clone(), offset.clone());
        let drift: DriftFn = Arc::new(move |x: &[f64], u: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mut acc = f2[i];
                for (j, xj) in x.iter().enumerate() {
                    acc += a2[(i, j)] * xj;
                }
                for (j, uj) in u.iter().enumerate() {
                    acc += b2[(i, j)] * uj;
                }
                out[i] = acc;
            }
        });
        let budget = a.norm().max(f64::MIN_POSITIVE);
        Ok(SystemSpec {
            n,
            m,
            drift,
            dispersion: Dispersion::Constant(sigma),
            metric,
            constants,
            affine: Some(AffineParts { a, b, offset }),
            lipschitz_budget: Some(budget),
        })
    }

    /// `F(x,u) = −c(x − u)` on `ℝⁿ` with dispersion `(σ/√n)·Iₙ` and `P = I`,
    /// so that `(c, ℓ, σ_x²) = (c, c, σ²)` and `x*(u) = u`.
    pub fn linear_tracker(n: usize, c: f64, sigma: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Certification(format!("tracker rate must be positive, got {c}")));
        }
        let sig = match Dispersion::isotropic(n, sigma) {
            Dispersion::Constant(m) => m,
            _ => unreachable!(),
        };
        SystemSpec::affine(
            DMatrix::identity(n, n) * -c,
            DMatrix::identity(n, n) * c,
            sig,
            Metric::identity(n),
        )
    }

    /// Langevin dynamics `dx = −∇f(x)dt + σ·dB` for a `c`-strongly convex
    /// potential (the caller asserts `c`).
    pub fn gradient_flow<G>(n: usize, grad: G, sigma: f64, c: f64) -> Result<Self>
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let drift: DriftFn = Arc::new(move |x: &[f64], _u: &[f64], out: &mut [f64]| {
            grad(x, out);
            for o in out.iter_mut() {
                *o = -*o;
            }
        });
        let disp = Dispersion::Constant(DMatrix::identity(n, n) * sigma);
        SystemSpec::new(
            n,
            0,
            drift,
            disp,
            Metric::identity(n),
            Constants::new(c, 0.0, sigma * sigma * n as f64)?,
        )
    }

    pub fn with_dispersion(mut self, dispersion: Dispersion) -> Result<Self> {
        if let Dispersion::Constant(s) = &dispersion {
            check_dim("dispersion rows", s.nrows(), self.n)?;
            self.constants.sigma_x_sq = contraction::trace_weighted(s, &self.metric);
        }
        self.dispersion = dispersion;
        Ok(self)
    }

    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        self.constants = Constants::new(constants.c, constants.ell, constants.sigma_x_sq)?;
        Ok(self)
    }

    /// Registers the global Lipschitz/linear-growth constant `L` used for the
    /// step-size warning and the second-moment growth guard.
    pub fn with_lipschitz_budget(mut self, l: f64) -> Self {
        self.lipschitz_budget = Some(l);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn noise_dim(&self) -> usize {
        self.dispersion.cols()
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    pub fn dispersion(&self) -> &Dispersion {
        &self.dispersion
    }

    pub fn affine_parts(&self) -> Option<&AffineParts> {
        self.affine.as_ref()
    }

    pub fn lipschitz_budget(&self) -> Option<f64> {
        self.lipschitz_budget
    }

    pub fn drift_fn(&self) -> &DriftFn {
        &self.drift
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(x, u, out)
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.drift_into(x, u, &mut out);
        out
    }

    /// `x*(u) = −A⁻¹(B·u + f₀)` for affine systems.
    pub fn equilibrium_map(&self) -> Result<EquilibriumMap> {
        let aff = self
            .affine
            .as_ref()
            .ok_or_else(|| Error::Capability("closed-form equilibrium map needs an affine drift".into()))?;
        let inv = aff
            .a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Certification("drift matrix A is singular".into()))?;
        let gain = -&inv * &aff.b;
        let shift = -&inv * &aff.offset;
        Ok(EquilibriumMap::affine(gain, shift))
    }
}

pub type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// One `m × m` Hessian per output component of `x*`.
pub type HessiansFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Input-indexed equilibrium `x*(u)` with `F(x*(u), u) = 0`.
#[derive(Clone)]
pub struct EquilibriumMap {
    n: usize,
    m: usize,
    x_star: MapFn,
    jacobian: JacobianFn,
    hessians: Option<HessiansFn>,
}

impl fmt::Debug for EquilibriumMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquilibriumMap")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("hessians", &self.hessians.is_some())
            .finish()
    }
}

/// Default finite-difference step for Jacobians.
const JACOBIAN_STEP: f64 = 1e-6;
/// Default finite-difference step for Hessians (relative to `scale`).
pub const HESSIAN_STEP: f64 = 1e-4;

impl EquilibriumMap {
    /// `x*(u) = G·u + s`; all Hessians vanish.
    pub fn affine(gain: DMatrix<f64>, shift: DVector<f64>) -> Self {
        let (n, m) = gain.shape();
        let (g1, s1) = (gain.clone(), shift.clone());
        let g2 = gain;
        EquilibriumMap {
            n,
            m,
            x_star: Arc::new(move |u: &[f64]| (&g1 * DVector::from_column_slice(u) + &s1).as_slice().to_vec()),
            jacobian: Arc::new(move |_u: &[f64]| g2.clone()),
            hessians: Some(Arc::new(move |_u: &[f64]| vec![DMatrix::zeros(m, m); n])),
        }
    }

    /// `x*(u) = u` on `ℝⁿ`.
    pub fn identity(n: usize) -> Self {
        EquilibriumMap::affine(DMatrix::identity(n, n), DVector::zeros(n))
    }

    /// Map given by a closure; the Jacobian is taken by central differences
    /// and no Hessians are attached.
    pub fn from_fn<F>(n: usize, m: usize, x_star: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let f: MapFn = Arc::new(x_star);
        let f2 = f.clone();
        EquilibriumMap {
            n,
            m,
            x_star: f,
            jacobian: Arc::new(move |u: &[f64]| fd_jacobian(&*f2, n, u)),
            hessians: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Arc::new(jac);
        self
    }

    pub fn with_hessians<H>(mut self, hess: H) -> Self
    where
        H: Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessians = Some(Arc::new(hess));
        self
    }

    /// Attaches finite-difference Hessians with step `HESSIAN_STEP·scale`:
    /// five-point stencils on the diagonal, four-point cross stencils off it.
    /// Truncation bias is `O(h²)`.
    pub fn with_fd_hessians(mut self, scale: f64) -> Self {
        let f = self.x_star.clone();
        let (n, m) = (self.n, self.m);
        let h = HESSIAN_STEP * scale;
        self.hessians = Some(Arc::new(move |u: &[f64]| fd_hessians(&*f, n, m, u, h)));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        (self.x_star)(u)
    }

    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(u)
    }

    pub fn has_hessians(&self) -> bool {
        self.hessians.is_some()
    }

    pub fn hessians(&self, u: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let h = self
            .hessians
            .as_ref()
            .ok_or_else(|| Error::Capability("equilibrium map has no Hessians attached".into()))?;
        Ok(h(u))
    }

    /// `‖F(x*(u), u)‖₂`.
    pub fn residual(&self, sys: &SystemSpec, u: &[f64]) -> f64 {
        let x = self.eval(u);
        sys.drift(&x, u).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest residual over the sample inputs; errors above `tol`.
    pub fn check_residual<'a>(
        &self,
        sys: &SystemSpec,
        samples: impl IntoIterator<Item = &'a [f64]>,
        tol: f64,
    ) -> Result<f64> {
        check_dim("equilibrium map state", self.n, sys.state_dim())?;
        check_dim("equilibrium map input", self.m, sys.input_dim())?;
        let mut worst = 0.0f64;
        for u in samples {
            let r = self.residual(sys, u);
            if !(r <= tol) {
                return Err(Error::Certification(format!(
                    "equilibrium residual {r:e} at u={u:?} exceeds {tol:e}"
                )));
            }
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Evenly spaced samples of a box, `per_dim` points per axis (at most
    /// `per_dim^m` points).
    pub fn box_grid(bounds: &InputBox, per_dim: usize) -> Vec<Vec<f64>> {
        let m = bounds.dim();
        let mut out = vec![];
        let total = per_dim.pow(m as u32);
        for idx in 0..total {
            let mut k = idx;
            let mut u = vec![0.0; m];
            for i in 0..m {
                let j = k % per_dim;
                k /= per_dim;
                let w = if per_dim == 1 { 0.5 } else { j as f64 / (per_dim - 1) as f64 };
                u[i] = bounds.lo[i] + w * (bounds.hi[i] - bounds.lo[i]);
            }
            out.push(u);
        }
        out
    }
}

fn fd_jacobian(f: &(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync), n: usize, u: &[f64]) -> DMatrix<f64> {
    let m = u.len();
    let mut jac = DMatrix::zeros(n, m);
    let mut up = u.to_vec();
    for j in 0..m {
        let h = JACOBIAN_STEP * (1.0 + u[j].abs());
        up[j] = u[j] + h;
        let fp = f(&up);
        up[j] = u[j] - h;
        let fm = f(&up);
        up[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn fd_hessians(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync),
    n: usize,
    m: usize,
    u: &[f64],
    h: f64,
) -> Vec<DMatrix<f64>> {
    let mut out = vec![DMatrix::zeros(m, m); n];
    let at = |shifts: &[(usize, f64)]| {
        let mut v = u.to_vec();
        for &(i, s) in shifts {
            v[i] += s;
        }
        f(&v)
    };
    let f0 = f(u);
    for i in 0..m {
        let p2 = at(&[(i, 2.0 * h)]);
        let p1 = at(&[(i, h)]);
        let m1 = at(&[(i, -h)]);
        let m2 = at(&[(i, -2.0 * h)]);
        for k in 0..n {
            out[k][(i, i)] = (-p2[k] + 16.0 * p1[k] - 30.0 * f0[k] + 16.0 * m1[k] - m2[k]) / (12.0 * h * h);
        }
        for j in (i + 1)..m {
            let pp = at(&[(i, h), (j, h)]);
            let pm = at(&[(i, h), (j, -h)]);
            let mp = at(&[(i, -h), (j, h)]);
            let mm = at(&[(i, -h), (j, -h)]);
            for k in 0..n {
                let v = (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h);
                out[k][(i, j)] = v;
                out[k][(j, i)] = v;
            }
        }
    }
    out
}
