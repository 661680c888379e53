//! Positive-definite weights and the weighted Euclidean norm `‖x‖²_P = xᵀPx`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Relative asymmetry below which `P` is silently symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Tolerance on `|‖P‖₂ − 1|` under which a metric counts as normalized.
pub const NORMALIZED_TOL: f64 = 1e-12;

/// A symmetric positive-definite weight `P` together with its lower Cholesky
/// factor `L` (`P = L·Lᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    p: DMatrix<f64>,
    chol: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl Metric {
    /// Validates and factorizes `p`. Small asymmetries (relative size at most
    /// [`SYMMETRY_TOL`]) are removed by averaging with the transpose.
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::input(format!(
                "metric must be a non-empty square matrix, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("metric has non-finite entries"));
        }
        let scale = p.amax();
        let asym = (&p - p.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::input(format!(
                "metric is not symmetric: max |P - Pᵀ| = {asym:e} exceeds {SYMMETRY_TOL:e} relative to max |P| = {scale:e}"
            )));
        }
        let sym = (&p + p.transpose()) * 0.5;

        let eig = SymmetricEigen::new(sym.clone());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        if let Some((idx, &bad)) = eigenvalues.iter().enumerate().find(|(_, &l)| l <= 0.0) {
            return Err(Error::Certification(format!(
                "metric is not positive definite: eigenvalue #{idx} (ascending) is {bad:e}"
            )));
        }
        let chol = Cholesky::new(sym.clone()).ok_or_else(|| {
            Error::Certification(format!(
                "Cholesky factorization failed; smallest eigenvalue {:e}",
                eigenvalues[0]
            ))
        })?;
        Ok(Metric {
            chol: chol.l(),
            p: sym,
            eigenvalues,
        })
    }

    pub fn identity(n: usize) -> Self {
        Metric {
            p: DMatrix::identity(n, n),
            chol: DMatrix::identity(n, n),
            eigenvalues: vec![1.0; n],
        }
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        Metric::new(DMatrix::from_diagonal(&DVector::from_column_slice(weights)))
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Lower-triangular `L` with `P = L·Lᵀ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Eigenvalues of `P` in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `‖P‖₂`, the largest eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        *self.eigenvalues.last().expect("metric has dim >= 1")
    }

    pub fn is_normalized(&self) -> bool {
        (self.spectral_norm() - 1.0).abs() <= NORMALIZED_TOL
    }

    /// `P / ‖P‖₂`. Returns an identical copy when already normalized, so the
    /// operation is idempotent bit for bit.
    pub fn normalized(&self) -> Metric {
        if self.is_normalized() {
            return self.clone();
        }
        let s = self.spectral_norm();
        Metric::new(&self.p / s).expect("positive rescaling of an SPD matrix is SPD")
    }

    /// `xᵀPx`, with a dimension check.
    pub fn norm_sq(&self, x: &[f64]) -> Result<f64> {
        check_dim("weighted_norm_sq", x.len(), self.dim())?;
        Ok(self.norm_sq_unchecked(x))
    }

    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        self.norm_sq(x).map(f64::sqrt)
    }

    /// `‖Lᵀx‖₂²`; callers guarantee `x.len() == dim`.
    #[inline]
    pub fn norm_sq_unchecked(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let mut y = 0.0;
            for (i, xi) in x.iter().enumerate().skip(j) {
                y += self.chol[(i, j)] * xi;
            }
            acc += y * y;
        }
        acc
    }

    /// Squared weighted distance `‖x − y‖²_P` without allocation.
    #[inline]
    pub fn dist_sq_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for i in j..n {
                s += self.chol[(i, j)] * (x[i] - y[i]);
            }
            acc += s * s;
        }
        acc
    }

    /// Bilinear form `xᵀPy`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += x[i] * self.p[(i, j)] * y[j];
            }
        }
        acc
    }
}

/// Validates a candidate weight matrix; see [`Metric::new`].
pub fn validate_metric(p: DMatrix<f64>) -> Result<Metric> {
    Metric::new(p)
}

pub fn weighted_norm_sq(x: &[f64], metric: &Metric) -> Result<f64> {
    metric.norm_sq(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn identity_and_diagonal_norms() {
        let m = Metric::identity(2);
        assert_eq!(weighted_norm_sq(&[1.0, 0.0], &m).unwrap(), 1.0);
        let d = Metric::diagonal(&[2.0, 3.0]).unwrap();
        assert_eq!(weighted_norm_sq(&[1.0, 1.0], &d).unwrap(), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let m = Metric::identity(3);
        assert!(matches!(m.norm_sq(&[1.0, 2.0]), Err(Error::Input(_))));
    }

    #[test]
    fn identity_metric_has_unit_factor() {
        let m = validate_metric(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(m.chol(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(m.spectral_norm(), 1.0);
    }

    #[test]
    fn diagonal_spectral_norm_and_normalization() {
        let m = validate_metric(dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(m.spectral_norm(), 4.0);
        let n = m.normalized();
        assert_eq!(n.matrix(), &dmatrix![1.0, 0.0; 0.0, 0.25]);
    }

    #[test]
    fn coupled_two_by_two_eigenvalues() {
        // det(P - λI) = (2-λ)² - 1 → λ ∈ {1, 3}
        let m = validate_metric(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        assert!((m.eigenvalues()[0] - 1.0).abs() < 1e-14);
        assert!((m.spectral_norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite_naming_eigenvalue() {
        let err = validate_metric(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap_err();
        match err {
            Error::Certification(msg) => assert!(msg.contains("eigenvalue"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tiny_asymmetry_is_symmetrized_large_is_rejected() {
        let m = validate_metric(dmatrix![2.0, 1.0 + 1e-14; 1.0, 2.0]).unwrap();
        assert_eq!(m.matrix()[(0, 1)], m.matrix()[(1, 0)]);
        assert!(matches!(
            validate_metric(dmatrix![2.0, 1.1; 1.0, 2.0]),
            Err(Error::Input(_))
        ));
    }

    /// Double-double dot product: independent extended-precision oracle.
    fn xpx_extended(x: &[f64], p: &DMatrix<f64>) -> f64 {
        fn two_sum(a: f64, b: f64) -> (f64, f64) {
            let s = a + b;
            let bb = s - a;
            (s, (a - (s - bb)) + (b - bb))
        }
        fn two_prod(a: f64, b: f64) -> (f64, f64) {
            let p = a * b;
            (p, a.mul_add(b, -p))
        }
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for i in 0..x.len() {
            for j in 0..x.len() {
                let (p1, e1) = two_prod(x[i], p[(i, j)]);
                let (p2, e2) = two_prod(p1, x[j]);
                let (s, e3) = two_sum(hi, p2);
                hi = s;
                lo += e3 + e2 + e1 * x[j];
            }
        }
        hi + lo
    }

    fn spd(n: usize, seed: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    proptest! {
        #[test]
        fn norm_matches_extended_precision(
            xs in prop::collection::vec(-10.0f64..10.0, 4),
            seed in prop::collection::vec(-2.0f64..2.0, 16),
        ) {
            let p = spd(4, &seed);
            let m = Metric::new(p.clone()).unwrap();
            let got = m.norm_sq(&xs).unwrap();
            let want = xpx_extended(&xs, &p);
            prop_assert!(got >= 0.0);
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-300,
                "got {got} want {want}");
        }

        #[test]
        fn norm_axioms(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
            k in -4.0f64..4.0,
            seed in prop::collection::vec(-2.0f64..2.0, 9),
        ) {
            let m = Metric::new(spd(3, &seed)).unwrap();
            let nx = m.norm(&x).unwrap();
            let ny = m.norm(&y).unwrap();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            prop_assert!(m.norm(&sum).unwrap() <= nx + ny + 1e-10);
            let scaled: Vec<f64> = x.iter().map(|a| k * a).collect();
            prop_assert!((m.norm(&scaled).unwrap() - k.abs() * nx).abs() <= 1e-10 * (1.0 + nx));
        }

        #[test]
        fn normalization_is_idempotent(seed in prop::collection::vec(-3.0f64..3.0, 9)) {
            let m = Metric::new(spd(3, &seed)).unwrap();
            let once = m.normalized();
            let twice = once.normalized();
            prop_assert_eq!(&once, &twice);
            prop_assert!((once.spectral_norm() - 1.0).abs() <= NORMALIZED_TOL);
        }
    }
}
