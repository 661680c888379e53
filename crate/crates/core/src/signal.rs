//! Deterministic input signals `t ↦ u(t) ∈ ℝᵐ`, compact input boxes and
//! input-space norms.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Norm used on the input space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputNorm {
    L1,
    #[default]
    L2,
    Linf,
}

impl InputNorm {
    pub fn apply(&self, v: &[f64]) -> f64 {
        match self {
            InputNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            InputNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            InputNorm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.apply(&d)
    }
}

/// Axis-aligned box `[lo, hi] ⊂ ℝᵐ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("box bounds", hi.len(), lo.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::input(format!("invalid box: lo={lo:?} hi={hi:?}")));
        }
        Ok(InputBox { lo, hi })
    }

    /// `[lo, hi]ᵈ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        InputBox::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
            .collect()
    }

    /// Largest Euclidean norm over the box (attained at a corner).
    pub fn max_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

type SignalFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(Vec<f64>),
    /// `offset + amplitude ⊙ sin(omega·t + phase)`
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        omega: Vec<f64>,
        phase: Vec<f64>,
    },
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Callable {
        value: SignalFn,
        derivative: Option<SignalFn>,
    },
}

/// A deterministic input `u(t)`.
#[derive(Clone)]
pub struct InputSignal {
    kind: Kind,
    dim: usize,
    bounds: Option<InputBox>,
    sup_norm: Option<f64>,
}

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Constant(v) => format!("Constant({v:?})"),
            Kind::Sinusoid { .. } => "Sinusoid".to_string(),
            Kind::PiecewiseLinear { knots, .. } => format!("PiecewiseLinear({} knots)", knots.len()),
            Kind::Callable { .. } => "Callable".to_string(),
        };
        f.debug_struct("InputSignal")
            .field("kind", &kind)
            .field("dim", &self.dim)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl InputSignal {
    pub fn constant(value: Vec<f64>) -> Self {
        let sup = l2(&value);
        InputSignal {
            dim: value.len(),
            kind: Kind::Constant(value),
            bounds: None,
            sup_norm: Some(sup),
        }
    }

    pub fn zero(dim: usize) -> Self {
        InputSignal::constant(vec![0.0; dim])
    }

    pub fn sinusoid(
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        omega: Vec<f64>,
        phase: Vec<f64>,
    ) -> Result<Self> {
        let m = offset.len();
        check_dim("sinusoid amplitude", amplitude.len(), m)?;
        check_dim("sinusoid omega", omega.len(), m)?;
        check_dim("sinusoid phase", phase.len(), m)?;
        let peak: Vec<f64> = offset.iter().zip(&amplitude).map(|(o, a)| o.abs() + a.abs()).collect();
        Ok(InputSignal {
            dim: m,
            sup_norm: Some(l2(&peak)),
            kind: Kind::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            },
            bounds: None,
        })
    }

    /// Scalar `offset + amplitude·sin(omega·t)`.
    pub fn scalar_sine(offset: f64, amplitude: f64, omega: f64) -> Self {
        InputSignal::sinusoid(vec![offset], vec![amplitude], vec![omega], vec![0.0])
            .expect("scalar dims agree")
    }

    /// Linear interpolation between `(knot, value)` pairs; held constant
    /// outside the knot range.
    pub fn piecewise_linear(knots: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::input("piecewise-linear signal needs matching, non-empty knots and values"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("piecewise-linear knots must be strictly increasing"));
        }
        let m = values[0].len();
        for v in &values {
            check_dim("piecewise-linear value", v.len(), m)?;
        }
        let sup = values.iter().map(|v| l2(v)).fold(0.0, f64::max);
        Ok(InputSignal {
            dim: m,
            kind: Kind::PiecewiseLinear { knots, values },
            bounds: None,
            sup_norm: Some(sup),
        })
    }

    /// Signal from closures writing `u(t)` (and optionally `u̇(t)`) into a buffer.
    pub fn callable<F>(dim: usize, value: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        InputSignal {
            dim,
            kind: Kind::Callable {
                value: Arc::new(value),
                derivative: None,
            },
            bounds: None,
            sup_norm: None,
        }
    }

    pub fn with_derivative<G>(mut self, derivative: G) -> Self
    where
        G: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        if let Kind::Callable { derivative: d, .. } = &mut self.kind {
            *d = Some(Arc::new(derivative));
        }
        self
    }

    /// Declares the compact set the signal is supposed to live in.
    pub fn with_box(mut self, bounds: InputBox) -> Result<Self> {
        check_dim("input box", bounds.dim(), self.dim)?;
        if self.sup_norm.is_none() {
            self.sup_norm = Some(bounds.max_norm());
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> Option<&InputBox> {
        self.bounds.as_ref()
    }

    /// Upper bound on `sup_t ‖u(t)‖₂` when known.
    pub fn sup_norm(&self) -> Option<f64> {
        self.sup_norm
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    #[inline]
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            Kind::Constant(v) => out.copy_from_slice(v),
            Kind::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => {
                for i in 0..self.dim {
                    out[i] = offset[i] + amplitude[i] * (omega[i] * t + phase[i]).sin();
                }
            }
            Kind::PiecewiseLinear { knots, values } => {
                let n = knots.len();
                if t <= knots[0] {
                    out.copy_from_slice(&values[0]);
                } else if t >= knots[n - 1] {
                    out.copy_from_slice(&values[n - 1]);
                } else {
                    let k = knots.partition_point(|&s| s <= t) - 1;
                    let w = (t - knots[k]) / (knots[k + 1] - knots[k]);
                    for i in 0..self.dim {
                        out[i] = values[k][i] + w * (values[k + 1][i] - values[k][i]);
                    }
                }
            }
            Kind::Callable { value, .. } => value(t, out),
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_into(t, &mut out);
        out
    }

    /// Whether `derivative` is defined everywhere (piecewise-linear signals
    /// only have one-sided slopes at their knots).
    pub fn is_differentiable(&self) -> bool {
        match &self.kind {
            Kind::Constant(_) | Kind::Sinusoid { .. } => true,
            Kind::PiecewiseLinear { .. } => false,
            Kind::Callable { derivative, .. } => derivative.is_some(),
        }
    }

    /// `u̇(t)`; for piecewise-linear signals the right-hand slope.
    pub fn derivative(&self, t: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        match &self.kind {
            Kind::Constant(_) => {}
            Kind::Sinusoid {
                amplitude,
                omega,
                phase,
                ..
            } => {
                for i in 0..self.dim {
                    out[i] = amplitude[i] * omega[i] * (omega[i] * t + phase[i]).cos();
                }
            }
            Kind::PiecewiseLinear { knots, values } => {
                let n = knots.len();
                if t >= knots[0] && t < knots[n - 1] {
                    let k = knots.partition_point(|&s| s <= t) - 1;
                    let h = knots[k + 1] - knots[k];
                    for i in 0..self.dim {
                        out[i] = (values[k + 1][i] - values[k][i]) / h;
                    }
                }
            }
            Kind::Callable { derivative, .. } => derivative.as_ref()?(t, &mut out),
        }
        Some(out)
    }

    /// `‖u̇(t)‖₂`, or `None` when no derivative is available.
    pub fn derivative_norm(&self, t: f64) -> Option<f64> {
        self.derivative(t).map(|d| l2(&d))
    }

    /// Checks `u(t)` against the declared box at the given times.
    pub fn check_in_box(&self, times: impl IntoIterator<Item = f64>) -> Result<()> {
        let Some(b) = &self.bounds else {
            return Ok(());
        };
        let mut buf = vec![0.0; self.dim];
        for t in times {
            self.value_into(t, &mut buf);
            if !b.contains(&buf) {
                return Err(Error::input(format!(
                    "input value {buf:?} at t={t} leaves declared box [{:?}, {:?}]",
                    b.lo, b.hi
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(s: &InputSignal, t: f64, h: f64) -> Vec<f64> {
        let a = s.value(t + h);
        let b = s.value(t - h);
        a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect()
    }

    #[test]
    fn sinusoid_derivative_matches_finite_differences() {
        let s = InputSignal::sinusoid(vec![0.5, 0.0], vec![0.2, 1.0], vec![1.0, 3.0], vec![0.1, 0.0]).unwrap();
        for k in 0..50 {
            let t = 0.37 * k as f64;
            let d = s.derivative(t).unwrap();
            let fd = central_diff(&s, t, 1e-5);
            for (a, b) in d.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn callable_with_derivative() {
        let s = InputSignal::callable(1, |t, o| o[0] = (2.0 * t).cos())
            .with_derivative(|t, o| o[0] = -2.0 * (2.0 * t).sin());
        assert!(s.is_differentiable());
        let fd = central_diff(&s, 0.7, 1e-5)[0];
        assert!((s.derivative(0.7).unwrap()[0] - fd).abs() < 1e-6);
        let bare = InputSignal::callable(1, |t, o| o[0] = t);
        assert!(bare.derivative(0.0).is_none());
    }

    #[test]
    fn piecewise_linear_interpolates_and_holds() {
        let s = InputSignal::piecewise_linear(vec![0.0, 1.0, 3.0], vec![vec![0.0], vec![2.0], vec![1.0]]).unwrap();
        assert_eq!(s.value(-1.0), vec![0.0]);
        assert_eq!(s.value(0.5), vec![1.0]);
        assert_eq!(s.value(2.0), vec![1.5]);
        assert_eq!(s.value(9.0), vec![1.0]);
        assert_eq!(s.derivative(0.5).unwrap(), vec![2.0]);
        assert_eq!(s.derivative(2.0).unwrap(), vec![-0.5]);
        assert!(!s.is_differentiable());
        assert_eq!(s.sup_norm(), Some(2.0));
    }

    #[test]
    fn box_membership() {
        let s = InputSignal::scalar_sine(0.5, 0.25, 1.0)
            .with_box(InputBox::new(vec![0.0], vec![1.0]).unwrap())
            .unwrap();
        s.check_in_box((0..1000).map(|k| k as f64 * 0.01)).unwrap();
        let wide = InputSignal::scalar_sine(0.5, 0.75, 1.0)
            .with_box(InputBox::new(vec![0.0], vec![1.0]).unwrap())
            .unwrap();
        assert!(wide.check_in_box((0..1000).map(|k| k as f64 * 0.01)).is_err());
    }

    #[test]
    fn norms() {
        let v = [3.0, -4.0];
        assert_eq!(InputNorm::L1.apply(&v), 7.0);
        assert_eq!(InputNorm::L2.apply(&v), 5.0);
        assert_eq!(InputNorm::Linf.apply(&v), 4.0);
    }
}
