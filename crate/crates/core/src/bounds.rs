//! Closed-form mean-square error envelopes.
//!
//! Each envelope bounds `E‖·‖²_P` at time `t` for a Young-inequality split
//! `α ∈ (0,1)`. Convolution integrals `∫₀ᵗ e^{−k(t−τ)} g(τ) dτ` are evaluated
//! by composite Simpson; constant profiles use the exact antiderivative.
//!
//! The two OU/JD "stochastic input, deterministic curve" envelopes decay at
//! rate `cα` and carry a `σ_x²/c` noise floor, while the others decay at
//! `2cα` with `σ_x²/(2c)`. Both are implemented as stated.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::signal::{InputNorm, InputSignal};

/// Smallest distance kept from the ends of `(0, 1)` when optimizing `α`.
pub const ALPHA_EPS: f64 = 1e-4;
/// Relative change at which quadrature refinement stops.
const QUAD_RTOL: f64 = 1e-8;
const QUAD_MAX_DOUBLINGS: usize = 4;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A nonnegative scalar function of time, such as `‖θ̇(t)‖²` or
/// `‖uˣ(t) − uʸ(t)‖²`.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    Function(ScalarFn),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(v) => write!(f, "Constant({v})"),
            Profile::Function(_) => write!(f, "Function"),
        }
    }
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(0.0)
    }
}

impl Profile {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Profile::Function(Arc::new(f))
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Function(f) => f(t),
        }
    }

    /// `‖θ̇(t)‖²` in the given norm. Fails for signals without a derivative.
    pub fn derivative_sq(theta: &InputSignal, norm: InputNorm) -> Result<Self> {
        if theta.is_constant() {
            return Ok(Profile::Constant(0.0));
        }
        if theta.derivative(0.0).is_none() {
            return Err(Error::Capability("signal has no derivative".into()));
        }
        let th = theta.clone();
        Ok(Profile::function(move |t| {
            let d = th.derivative(t).unwrap_or_default();
            norm.apply(&d).powi(2)
        }))
    }

    /// `‖uˣ(t) − uʸ(t)‖` raised to `power` (1 for deterministic envelopes,
    /// 2 for mean-square ones).
    pub fn input_gap(ux: &InputSignal, uy: &InputSignal, norm: InputNorm, power: i32) -> Result<Self> {
        if ux.dim() != uy.dim() {
            return Err(Error::input(format!("input dimensions differ: {} vs {}", ux.dim(), uy.dim())));
        }
        if ux.is_constant() && uy.is_constant() {
            return Ok(Profile::Constant(norm.dist(&ux.value(0.0), &uy.value(0.0)).powi(power)));
        }
        let (a, b) = (ux.clone(), uy.clone());
        Ok(Profile::function(move |t| norm.dist(&a.value(t), &b.value(t)).powi(power)))
    }

    /// Operational limsup: the maximum over the final `fraction` of
    /// `[0, horizon]`, sampled at `samples + 1` points.
    pub fn tail_max(&self, horizon: f64, fraction: f64, samples: usize) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Function(f) => {
                let t0 = horizon * (1.0 - fraction);
                let k = samples.max(1);
                (0..=k)
                    .map(|j| f(t0 + (horizon - t0) * j as f64 / k as f64))
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// `(1 − e^{−kt})/k`, stable as `k → 0`.
#[inline]
fn one_minus_exp_over(k: f64, t: f64) -> f64 {
    if k * t == 0.0 {
        return t;
    }
    -(-k * t).exp_m1() / k
}

/// `∫₀ᵗ e^{−k(t−τ)} e^{−jτ} dτ`.
fn exp_exp_conv(k: f64, j: f64, t: f64) -> f64 {
    // = e^{−jt}·(1 − e^{−(k−j)t})/(k−j)
    (-j * t).exp() * one_minus_exp_over(k - j, t)
}

/// `∫₀ᵗ e^{−k(t−τ)} g(τ) dτ` by composite Simpson with `panels` panels.
fn conv_simpson(k: f64, g: &dyn Fn(f64) -> f64, t: f64, panels: usize) -> f64 {
    let h = t / panels as f64;
    let (d, dh) = ((-k * h).exp(), (-0.5 * k * h).exp());
    let mut acc = 0.0;
    let mut g_left = g(0.0);
    for j in 0..panels {
        let a = j as f64 * h;
        let g_mid = g(a + 0.5 * h);
        let g_right = g(a + h);
        acc = d * acc + h / 6.0 * (d * g_left + 4.0 * dh * g_mid + g_right);
        g_left = g_right;
    }
    acc
}

/// `∫₀ᵗ e^{−k(t−τ)} ∫₀^τ e^{−j(τ−r)} g(r) dr dτ` by nested Simpson.
fn double_conv_simpson(k: f64, j: f64, g: &dyn Fn(f64) -> f64, t: f64, panels: usize) -> f64 {
    let h = t / panels as f64;
    let (dk, dkh) = ((-k * h).exp(), (-0.5 * k * h).exp());
    let (dj, djq) = ((-0.5 * j * h).exp(), (-0.25 * j * h).exp());
    let (mut outer, mut inner) = (0.0, 0.0);
    let mut g_left = g(0.0);
    for p in 0..panels {
        let a = p as f64 * h;
        let (gq1, gm, gq3, gr) = (g(a + 0.25 * h), g(a + 0.5 * h), g(a + 0.75 * h), g(a + h));
        // inner integral at the panel midpoint and right end
        let inner_mid = dj * inner + h / 12.0 * (dj * g_left + 4.0 * djq * gq1 + gm);
        let inner_right = dj * inner_mid + h / 12.0 * (dj * gm + 4.0 * djq * gq3 + gr);
        outer = dk * outer + h / 6.0 * (dk * inner + 4.0 * dkh * inner_mid + inner_right);
        inner = inner_right;
        g_left = gr;
    }
    outer
}

fn refine<F: Fn(usize) -> f64>(base: usize, f: F) -> f64 {
    let mut n = base.max(2);
    let mut prev = f(n);
    for _ in 0..QUAD_MAX_DOUBLINGS {
        n *= 2;
        let next = f(n);
        let done = (next - prev).abs() <= QUAD_RTOL * next.abs().max(1e-300);
        prev = next;
        if done {
            break;
        }
    }
    prev
}

/// Simpson-with-refinement evaluation of a single convolution.
pub fn convolve(k: f64, profile: &Profile, t: f64, quad_dt: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    match profile {
        Profile::Constant(v) => v * one_minus_exp_over(k, t),
        Profile::Function(g) => {
            let base = (t / quad_dt).ceil() as usize;
            refine(base, |n| conv_simpson(k, g.as_ref(), t, n))
        }
    }
}

/// Nested convolution `∫₀ᵗ e^{−k(t−τ)} ∫₀^τ e^{−j(τ−r)} g(r) dr dτ`.
pub fn convolve_twice(k: f64, j: f64, profile: &Profile, t: f64, quad_dt: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    match profile {
        // inner = v(1 − e^{−jτ})/j
        Profile::Constant(v) => {
            if j == 0.0 {
                return v * (t - one_minus_exp_over(k, t)) / k.max(f64::MIN_POSITIVE);
            }
            v / j * (one_minus_exp_over(k, t) - exp_exp_conv(k, j, t))
        }
        Profile::Function(g) => {
            let base = (t / quad_dt).ceil() as usize;
            refine(base, |n| double_conv_simpson(k, j, g.as_ref(), t, n))
        }
    }
}

/// Every constant and profile entering the envelopes.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub c: f64,
    pub ell: f64,
    pub sigma_x_sq: f64,
    /// OU input-noise intensity `σ_ξ²`.
    pub sigma_xi_sq: f64,
    /// JD input-noise intensity `σ_u²`.
    pub sigma_u_sq: f64,
    /// `‖a‖₂²` of the JD box.
    pub a_norm_sq: f64,
    pub h_ou: f64,
    pub h_jd: f64,
    /// Initial mean-square error.
    pub e0: f64,
    /// `E‖ξ₀‖²` (OU) or `E‖u₀ − θ(0)‖²` (JD).
    pub exi0: f64,
    /// `‖θ̇(t)‖²`.
    pub theta_dot_sq: Profile,
    /// Limsup of `‖θ̇‖²`; defaults to the constant profile value.
    pub theta_dot_sq_limsup: Option<f64>,
    /// `‖uˣ(t) − uʸ(t)‖²_U`.
    pub input_gap_sq: Profile,
    pub input_gap_sq_limsup: Option<f64>,
    /// Base Simpson panel width for pointwise evaluation.
    pub quad_dt: f64,
}

impl BoundParams {
    pub fn new(c: f64, ell: f64, sigma_x_sq: f64) -> Self {
        BoundParams {
            c,
            ell,
            sigma_x_sq,
            sigma_xi_sq: 0.0,
            sigma_u_sq: 0.0,
            a_norm_sq: 0.0,
            h_ou: 0.0,
            h_jd: 0.0,
            e0: 0.0,
            exi0: 0.0,
            theta_dot_sq: Profile::Constant(0.0),
            theta_dot_sq_limsup: None,
            input_gap_sq: Profile::Constant(0.0),
            input_gap_sq_limsup: None,
            quad_dt: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::domain(format!("contraction rate must be positive, got {}", self.c)));
        }
        let named = [
            ("ell", self.ell),
            ("sigma_x_sq", self.sigma_x_sq),
            ("sigma_xi_sq", self.sigma_xi_sq),
            ("sigma_u_sq", self.sigma_u_sq),
            ("a_norm_sq", self.a_norm_sq),
            ("h_ou", self.h_ou),
            ("h_jd", self.h_jd),
            ("e0", self.e0),
            ("exi0", self.exi0),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.quad_dt > 0.0) {
            return Err(Error::domain("quad_dt must be positive"));
        }
        Ok(())
    }

    fn theta_dot_limsup(&self) -> Result<f64> {
        resolve_limsup(&self.theta_dot_sq, self.theta_dot_sq_limsup, "theta_dot_sq")
    }

    fn gap_limsup(&self) -> Result<f64> {
        resolve_limsup(&self.input_gap_sq, self.input_gap_sq_limsup, "input_gap_sq")
    }
}

fn resolve_limsup(p: &Profile, explicit: Option<f64>, name: &str) -> Result<f64> {
    match (explicit, p) {
        (Some(v), _) => Ok(v),
        (None, Profile::Constant(v)) => Ok(*v),
        (None, Profile::Function(_)) => Err(Error::domain(format!(
            "limsup of time-varying {name} is not set; supply a tail-window estimate"
        ))),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_t(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// Two trajectories under independent noise and different inputs.
pub fn niss_two_traj(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    niss(p, t, alpha, 1.0)
}

/// SDE trajectory against a deterministic ODE solution: half the noise floor.
pub fn niss_vs_ode(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    niss(p, t, alpha, 0.5)
}

fn niss(p: &BoundParams, t: f64, alpha: f64, noise_scale: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    check_t(t)?;
    let c = p.c;
    let k = 2.0 * c * alpha;
    let decay = (-k * t).exp();
    Ok(p.e0 * decay
        + noise_scale * p.sigma_x_sq / (c * alpha) * (-(-k * t).exp_m1())
        + p.ell.powi(2) / (2.0 * c * (1.0 - alpha)) * convolve(k, &p.input_gap_sq, t, p.quad_dt))
}

/// Deterministic input, deterministic equilibrium curve.
pub fn track_didc(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    check_t(t)?;
    let c = p.c;
    let k = 2.0 * c * alpha;
    Ok(p.e0 * (-k * t).exp()
        + p.sigma_x_sq / (2.0 * c * alpha) * (-(-k * t).exp_m1())
        + p.ell.powi(2) / (2.0 * c.powi(3) * (1.0 - alpha)) * convolve(k, &p.theta_dot_sq, t, p.quad_dt))
}

/// Shared shape of the two "stochastic input, deterministic curve"
/// envelopes; `floor` is `σ_ξ²/c` (OU) or `‖a‖²/4·σ_u²/c` (JD).
fn sidc(p: &BoundParams, t: f64, alpha: f64, floor: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    check_t(t)?;
    let c = p.c;
    let k = c * alpha;
    let decay = (-k * t).exp();
    let rise = -(-k * t).exp_m1();
    let l2c2 = p.ell.powi(2) / c.powi(2);
    Ok(p.e0 * decay
        + p.sigma_x_sq / (c * alpha) * rise
        + p.ell.powi(2) / (c.powi(3) * (1.0 - alpha)) * convolve(k, &p.theta_dot_sq, t, p.quad_dt)
        + l2c2 * p.exi0 * decay
        + l2c2 * floor / alpha * rise)
}

/// OU input noise, deterministic equilibrium curve.
pub fn track_ou_sidc(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    sidc(p, t, alpha, p.sigma_xi_sq / p.c)
}

/// JD input noise, deterministic equilibrium curve.
pub fn track_jd_sidc(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    sidc(p, t, alpha, p.a_norm_sq / 4.0 * p.sigma_u_sq / p.c)
}

/// OU input noise, stochastic equilibrium curve `x*(u_t)`.
pub fn track_ou_sisc(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    check_t(t)?;
    let c = p.c;
    let k = 2.0 * c * alpha;
    let e_k = (-k * t).exp();
    let e_2c = (-2.0 * c * t).exp();
    let rise = -(-k * t).exp_m1();
    let b = 1.0 - alpha;
    let l2 = p.ell.powi(2);
    let s = l2 / c.powi(2) * p.sigma_xi_sq / (2.0 * c);
    let hterm = p.h_ou.powi(2) / 2.0 * p.sigma_xi_sq.powi(2) / (4.0 * c * c);
    Ok(p.e0 * e_k
        + p.sigma_x_sq / (2.0 * c * alpha) * rise
        + 2.0 / b * l2 / c.powi(3) * convolve(k, &p.theta_dot_sq, t, p.quad_dt)
        + l2 / (2.0 * c * c * b * b) * p.exi0 * (e_k - e_2c)
        + (s + hterm / b) / alpha * rise
        + s / b * (1.0 / alpha - e_k / (alpha * b) + e_2c / b))
}

/// JD input noise, stochastic equilibrium curve `x*(u_t)`.
pub fn track_jd_sisc(p: &BoundParams, t: f64, alpha: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    check_t(t)?;
    let c = p.c;
    let k = 2.0 * c * alpha;
    let rise = -(-k * t).exp_m1();
    let b = 1.0 - alpha;
    let l2 = p.ell.powi(2);
    let a4 = p.a_norm_sq / 4.0;
    let hterm = p.h_jd.powi(2) / 2.0 * p.sigma_u_sq.powi(2) / (4.0 * c * c);
    let conv_decay = exp_exp_conv(k, c, t);
    let conv_rise = one_minus_exp_over(k, t) - conv_decay;
    Ok(p.e0 * (-k * t).exp()
        + p.sigma_x_sq / (2.0 * c * alpha) * rise
        + l2 / (c * c * b) * convolve_twice(k, c, &p.theta_dot_sq, t, p.quad_dt)
        + l2 / (c * b) * p.exi0 * conv_decay
        + (l2 / (c * c) * 3.0 * a4 * p.sigma_u_sq / (2.0 * c) + hterm / b) / alpha * rise
        + l2 / (c * b) * a4 * p.sigma_u_sq / c * conv_rise)
}

/// Which envelope an [`Envelope`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    NissTwoTraj,
    NissVsOde,
    TrackDidc,
    TrackOuSidc,
    TrackOuSisc,
    TrackJdSidc,
    TrackJdSisc,
}

impl EnvelopeKind {
    pub const ALL: [EnvelopeKind; 7] = [
        EnvelopeKind::NissTwoTraj,
        EnvelopeKind::NissVsOde,
        EnvelopeKind::TrackDidc,
        EnvelopeKind::TrackOuSidc,
        EnvelopeKind::TrackOuSisc,
        EnvelopeKind::TrackJdSidc,
        EnvelopeKind::TrackJdSisc,
    ];

    /// Exponential rate of the initial-condition term, as a multiple of `cα`.
    pub fn decay_multiple(&self) -> f64 {
        match self {
            EnvelopeKind::TrackOuSidc | EnvelopeKind::TrackJdSidc => 1.0,
            _ => 2.0,
        }
    }
}

/// A bound `t ↦ E‖error_t‖²_P` parameterized by `α`.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub params: BoundParams,
}

impl Envelope {
    pub fn new(kind: EnvelopeKind, params: BoundParams) -> Result<Self> {
        params.validate()?;
        Ok(Envelope { kind, params })
    }

    pub fn eval(&self, t: f64, alpha: f64) -> Result<f64> {
        let p = &self.params;
        match self.kind {
            EnvelopeKind::NissTwoTraj => niss_two_traj(p, t, alpha),
            EnvelopeKind::NissVsOde => niss_vs_ode(p, t, alpha),
            EnvelopeKind::TrackDidc => track_didc(p, t, alpha),
            EnvelopeKind::TrackOuSidc => track_ou_sidc(p, t, alpha),
            EnvelopeKind::TrackOuSisc => track_ou_sisc(p, t, alpha),
            EnvelopeKind::TrackJdSidc => track_jd_sidc(p, t, alpha),
            EnvelopeKind::TrackJdSisc => track_jd_sisc(p, t, alpha),
        }
    }

    /// Open interval of admissible `α` for `eval`.
    pub fn valid_alpha(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Admissible `α` for `limsup`; the JD stochastic-curve form needs `α ≥ 1/2`.
    pub fn limsup_alpha(&self) -> (f64, f64) {
        match self.kind {
            EnvelopeKind::TrackJdSisc => (0.5, 1.0),
            _ => (0.0, 1.0),
        }
    }

    /// Closed-form `limsup_{t→∞}` of the envelope.
    pub fn limsup(&self, alpha: f64) -> Result<f64> {
        let p = &self.params;
        p.validate()?;
        check_alpha(alpha)?;
        let (c, a, b) = (p.c, alpha, 1.0 - alpha);
        let l2 = p.ell.powi(2);
        let ab = a * b;
        Ok(match self.kind {
            EnvelopeKind::NissTwoTraj => p.sigma_x_sq / (c * a) + l2 / (4.0 * c * c * ab) * p.gap_limsup()?,
            EnvelopeKind::NissVsOde => p.sigma_x_sq / (2.0 * c * a) + l2 / (4.0 * c * c * ab) * p.gap_limsup()?,
            EnvelopeKind::TrackDidc => {
                p.sigma_x_sq / (2.0 * c * a) + l2 / (4.0 * c.powi(4) * ab) * p.theta_dot_limsup()?
            }
            EnvelopeKind::TrackOuSidc => {
                p.sigma_x_sq / (c * a)
                    + l2 / (c.powi(4) * ab) * p.theta_dot_limsup()?
                    + l2 / (c * c) * p.sigma_xi_sq / c / a
            }
            EnvelopeKind::TrackJdSidc => {
                p.sigma_x_sq / (c * a)
                    + l2 / (c.powi(4) * ab) * p.theta_dot_limsup()?
                    + l2 / (c * c) * p.a_norm_sq / 4.0 * p.sigma_u_sq / c / a
            }
            EnvelopeKind::TrackOuSisc => {
                p.sigma_x_sq / (2.0 * c * a)
                    + l2 / (c.powi(4) * ab) * p.theta_dot_limsup()?
                    + ((2.0 - a) * l2 / (c * c) * p.sigma_xi_sq / (2.0 * c)
                        + p.h_ou.powi(2) / 2.0 * p.sigma_xi_sq.powi(2) / (4.0 * c * c))
                        / ab
            }
            EnvelopeKind::TrackJdSisc => {
                if a < 0.5 {
                    return Err(Error::domain(format!(
                        "the limsup form of this envelope requires alpha >= 1/2, got {alpha}"
                    )));
                }
                p.sigma_x_sq / (2.0 * c * a)
                    + l2 / (2.0 * c.powi(4) * ab) * p.theta_dot_limsup()?
                    + ((4.0 - 3.0 * a) * l2 / (c * c) * p.a_norm_sq / 4.0 * p.sigma_u_sq / (2.0 * c)
                        + p.h_jd.powi(2) / 2.0 * p.sigma_u_sq.powi(2) / (4.0 * c * c))
                        / ab
            }
        })
    }

    /// Envelope at every point of `grid`. Convolutions advance by a
    /// one-panel Simpson recurrence on the grid itself.
    pub fn series(&self, grid: &TimeGrid, alpha: f64) -> Result<Vec<f64>> {
        self.params.validate()?;
        check_alpha(alpha)?;
        if grid.t0 != 0.0 {
            return Err(Error::input("envelope series need a grid starting at t = 0"));
        }
        let p = &self.params;
        let c = p.c;
        let k = self.kind.decay_multiple() * c * alpha;
        let (profile, j) = match self.kind {
            EnvelopeKind::NissTwoTraj | EnvelopeKind::NissVsOde => (&p.input_gap_sq, None),
            EnvelopeKind::TrackJdSisc => (&p.theta_dot_sq, Some(c)),
            _ => (&p.theta_dot_sq, None),
        };
        let convs = conv_series(k, j, profile, grid);
        // Re-evaluate with the profile term zeroed, then add the recurrence value.
        let mut quiet = self.clone();
        match self.kind {
            EnvelopeKind::NissTwoTraj | EnvelopeKind::NissVsOde => quiet.params.input_gap_sq = Profile::Constant(0.0),
            _ => quiet.params.theta_dot_sq = Profile::Constant(0.0),
        }
        let coef = self.profile_coefficient(alpha);
        grid.times()
            .zip(convs)
            .map(|(t, conv)| Ok(quiet.eval(t, alpha)? + coef * conv))
            .collect()
    }

    /// Coefficient multiplying the profile convolution in `eval`.
    fn profile_coefficient(&self, alpha: f64) -> f64 {
        let p = &self.params;
        let (c, b) = (p.c, 1.0 - alpha);
        let l2 = p.ell.powi(2);
        match self.kind {
            EnvelopeKind::NissTwoTraj | EnvelopeKind::NissVsOde => l2 / (2.0 * c * b),
            EnvelopeKind::TrackDidc => l2 / (2.0 * c.powi(3) * b),
            EnvelopeKind::TrackOuSidc | EnvelopeKind::TrackJdSidc => l2 / (c.powi(3) * b),
            EnvelopeKind::TrackOuSisc => 2.0 * l2 / (c.powi(3) * b),
            EnvelopeKind::TrackJdSisc => l2 / (c * c * b),
        }
    }
}

/// Convolution (single, or nested with inner rate `j`) at every grid point.
fn conv_series(k: f64, j: Option<f64>, profile: &Profile, grid: &TimeGrid) -> Vec<f64> {
    if let Profile::Constant(_) = profile {
        return grid
            .times()
            .map(|t| match j {
                None => convolve(k, profile, t, 1.0),
                Some(j) => convolve_twice(k, j, profile, t, 1.0),
            })
            .collect();
    }
    let g = |t: f64| profile.at(t);
    let h = grid.dt;
    let (dk, dkh) = ((-k * h).exp(), (-0.5 * k * h).exp());
    let mut out = Vec::with_capacity(grid.len());
    out.push(0.0);
    let (mut outer, mut inner) = (0.0, 0.0);
    let mut g_left = g(0.0);
    for p in 0..grid.steps {
        let a = grid.t(p);
        match j {
            None => {
                let (gm, gr) = (g(a + 0.5 * h), g(a + h));
                outer = dk * outer + h / 6.0 * (dk * g_left + 4.0 * dkh * gm + gr);
                g_left = gr;
            }
            Some(j) => {
                let (dj, djq) = ((-0.5 * j * h).exp(), (-0.25 * j * h).exp());
                let (gq1, gm, gq3, gr) = (g(a + 0.25 * h), g(a + 0.5 * h), g(a + 0.75 * h), g(a + h));
                let inner_mid = dj * inner + h / 12.0 * (dj * g_left + 4.0 * djq * gq1 + gm);
                let inner_right = dj * inner_mid + h / 12.0 * (dj * gm + 4.0 * djq * gq3 + gr);
                outer = dk * outer + h / 6.0 * (dk * inner + 4.0 * dkh * inner_mid + inner_right);
                inner = inner_right;
                g_left = gr;
            }
        }
        out.push(outer);
    }
    out
}

/// What `optimize_alpha` minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaTarget {
    At(f64),
    Limsup,
}

/// Minimizes `f` over `[lo, hi]`: a 1e-3 grid scan followed by
/// golden-section refinement around the best grid point. The returned
/// value never exceeds the grid minimum.
pub fn minimize_alpha<F>(f: F, lo: f64, hi: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(Error::Optimization(format!("empty alpha interval [{lo}, {hi}]")));
    }
    let eval = |a: f64| f(a).ok().filter(|v| v.is_finite());
    let n = ((hi - lo) / 1e-3).ceil().max(2.0) as usize;
    let step = (hi - lo) / n as f64;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..=n {
        if let Some(v) = eval(lo + step * i as f64) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let Some((i, v_grid)) = best else {
        return Err(Error::Optimization("envelope is not finite anywhere on the alpha grid".into()));
    };
    let mut a = lo + step * i.saturating_sub(1) as f64;
    let mut b = (lo + step * (i + 1) as f64).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let big = f64::INFINITY;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (eval(x1).unwrap_or(big), eval(x2).unwrap_or(big));
    for _ in 0..100 {
        if b - a < 1e-12 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = eval(x1).unwrap_or(big);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = eval(x2).unwrap_or(big);
        }
    }
    let (xg, fg) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fg <= v_grid {
        Ok((xg, fg))
    } else {
        Ok((lo + step * i as f64, v_grid))
    }
}

/// `α*` and the envelope value there, over `(ε, 1−ε)` (or `[1/2, 1−ε]`
/// for limsups that need it).
pub fn optimize_alpha(env: &Envelope, target: AlphaTarget) -> Result<(f64, f64)> {
    match target {
        AlphaTarget::At(t) => minimize_alpha(|a| env.eval(t, a), ALPHA_EPS, 1.0 - ALPHA_EPS),
        AlphaTarget::Limsup => {
            let lo = env.limsup_alpha().0.max(ALPHA_EPS);
            minimize_alpha(|a| env.limsup(a), lo, 1.0 - ALPHA_EPS)
        }
    }
}

/// Deterministic incremental ISS envelope
/// `d₀e^{−ct} + ℓ∫₀ᵗ e^{−c(t−τ)} gap(τ) dτ` (gap unsquared).
pub fn iss_envelope(d0: f64, c: f64, ell: f64, gap: &Profile, t: f64, quad_dt: f64) -> Result<f64> {
    if !(c > 0.0) || d0 < 0.0 || ell < 0.0 {
        return Err(Error::domain(format!("invalid ISS parameters d0={d0}, c={c}, ell={ell}")));
    }
    check_t(t)?;
    Ok(d0 * (-c * t).exp() + ell * convolve(c, gap, t, quad_dt))
}

/// Deterministic equilibrium-tracking envelope
/// `d₀e^{−ct} + (ℓ/c)∫₀ᵗ e^{−c(t−τ)}‖θ̇(τ)‖ dτ`.
pub fn tracking_envelope(d0: f64, c: f64, ell: f64, theta_dot: &Profile, t: f64, quad_dt: f64) -> Result<f64> {
    iss_envelope(d0, c, ell / c, theta_dot, t, quad_dt)
}

/// Deterministic tracking limsup `ℓ/c² · limsup‖θ̇‖`.
pub fn tracking_limsup(c: f64, ell: f64, theta_dot_limsup: f64) -> f64 {
    ell / (c * c) * theta_dot_limsup
}
