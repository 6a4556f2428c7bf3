//! Sigma-point decomposition and moment recovery of the unscented transform.
//!
//! Decomposition of `N(m, S)` with dimension `d` and `lambda = alpha^2 (d + kappa) - d`:
//!
//! ```text
//! X_0      = m
//! X_i      = m + col_i( sqrt((d + lambda) S) )      i = 1..d
//! X_{d+i}  = m - col_i( sqrt((d + lambda) S) )      i = 1..d
//! wm_0     = lambda / (d + lambda)
//! wc_0     = lambda / (d + lambda) + (1 - alpha^2 + beta)
//! wm_i = wc_i = 1 / (2 (d + lambda))                i = 1..2d
//! ```
//!
//! Recovery is the weighted mean and weighted outer-product sum of the points.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::GaussianState;

/// Scaling parameters. Defaults: `alpha = 1`, `kappa = 0`, `beta = 2`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    2.0
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams {
            alpha: default_alpha(),
            kappa: 0.0,
            beta: default_beta(),
        }
    }
}

impl UtParams {
    pub fn new(alpha: f64, kappa: f64, beta: f64) -> Result<Self> {
        let p = UtParams { alpha, kappa, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        Ok(())
    }

    pub fn lambda(&self, d: usize) -> f64 {
        let d = d as f64;
        self.alpha * self.alpha * (d + self.kappa) - d
    }

    /// Mean and covariance weights for a state of dimension `d`.
    pub fn weights(&self, d: usize) -> SigmaWeights {
        let lambda = self.lambda(d);
        let spread = d as f64 + lambda;
        let w0 = lambda / spread;
        let wi = 1.0 / (2.0 * spread);
        let mut wm = vec![wi; 2 * d + 1];
        let mut wc = wm.clone();
        wm[0] = w0;
        wc[0] = w0 + (1.0 - self.alpha * self.alpha + self.beta);
        SigmaWeights { wm, wc }
    }
}

/// Mean (`wm`) and covariance (`wc`) weights of a sigma set.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaWeights {
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaWeights {
    pub fn len(&self) -> usize {
        self.wm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wm.is_empty()
    }
}

/// `2d + 1` sigma points with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub weights: SigmaWeights,
}

impl SigmaPoints {
    pub fn wm(&self) -> &[f64] {
        &self.weights.wm
    }

    pub fn wc(&self) -> &[f64] {
        &self.weights.wc
    }

    /// Maps every point through `f`, keeping the weights.
    pub fn map(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> SigmaPoints {
        SigmaPoints {
            points: self.points.iter().map(f).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Decomposes a Gaussian into sigma points.
pub fn utd(g: &GaussianState, params: &UtParams) -> Result<SigmaPoints> {
    params.validate()?;
    let d = g.dim();
    let root = psd_sqrt(&g.cov)?;
    let scale = (d as f64 + params.lambda(d)).sqrt();
    let mut points = Vec::with_capacity(2 * d + 1);
    points.push(g.mean.clone());
    for i in 0..d {
        points.push(&g.mean + root.column(i) * scale);
    }
    for i in 0..d {
        points.push(&g.mean - root.column(i) * scale);
    }
    Ok(SigmaPoints {
        points,
        weights: params.weights(d),
    })
}

/// Recovers mean and (symmetrized) covariance from sigma points.
pub fn utr(s: &SigmaPoints) -> GaussianState {
    assert_eq!(
        s.points.len(),
        s.weights.len(),
        "point/weight count mismatch"
    );
    let d = s.points[0].len();
    let x0 = &s.points[0];
    // accumulate deviations from X_0 so that identical points give X_0 exactly
    let mut mean = x0.clone();
    for (x, w) in s.points.iter().zip(&s.weights.wm).skip(1) {
        mean.axpy(*w, &(x - x0), 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (x, w) in s.points.iter().zip(&s.weights.wc) {
        let e = x - &mean;
        cov.ger(*w, &e, &e, 1.0);
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianState { mean, cov }
}

/// Fixed-size variant of [`utr`] for points produced from a shared sigma set.
pub fn recover_moments<const N: usize>(
    points: &[SVector<f64, N>],
    weights: &SigmaWeights,
) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
    assert_eq!(points.len(), weights.len(), "point/weight count mismatch");
    let x0 = points[0];
    let mut mean = x0;
    for (x, w) in points.iter().zip(&weights.wm).skip(1) {
        mean += (x - x0) * *w;
    }
    let mut cov = SMatrix::<f64, N, N>::zeros();
    for (x, w) in points.iter().zip(&weights.wc) {
        let e = x - mean;
        cov += e * e.transpose() * *w;
    }
    (mean, (cov + cov.transpose()) * 0.5)
}

/// Diagonal loadings tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-9, 1e-6];

const SYMMETRY_TOL: f64 = 1e-9;

/// Lower-triangular `R` with `R R^T = m` for a symmetric positive semi-definite `m`.
///
/// Exactly rank-deficient inputs (including the zero matrix) are factored
/// directly with zero columns. Anything else that fails is retried with
/// `eps * I` added for each `eps` in [`JITTER_LADDER`].
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    let mut diag = match cholesky(m, true) {
        Ok(l) => return Ok(l),
        Err(d) => d,
    };
    for eps in JITTER_LADDER {
        let loaded = m + DMatrix::identity(m.nrows(), m.ncols()) * eps;
        match cholesky(&loaded, false) {
            Ok(l) => return Ok(l),
            Err(d) => diag = d,
        }
    }
    Err(Error::Numeric(format!(
        "cholesky failed after jitter up to {:e}: {diag}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Strictly positive-definite factor, used where the factor must be inverted.
pub(crate) fn pd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    let mut diag = match cholesky(m, false) {
        Ok(l) => return Ok(l),
        Err(d) => d,
    };
    for eps in JITTER_LADDER {
        let loaded = m + DMatrix::identity(m.nrows(), m.ncols()) * eps;
        match cholesky(&loaded, false) {
            Ok(l) => return Ok(l),
            Err(d) => diag = d,
        }
    }
    Err(Error::Numeric(format!(
        "matrix is singular or indefinite after jitter up to {:e}: {diag}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let scale = m.amax();
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Diagnostics from a failed factorization.
struct FactorFailure {
    column: usize,
    pivot: f64,
    max_diag: f64,
    min_diag: f64,
}

impl std::fmt::Display for FactorFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pivot {:.3e} at column {} (diagonal range [{:.3e}, {:.3e}], ratio {:.3e})",
            self.pivot,
            self.column,
            self.min_diag,
            self.max_diag,
            if self.max_diag > 0.0 {
                self.min_diag / self.max_diag
            } else {
                0.0
            }
        )
    }
}

/// Column Cholesky on the lower triangle. With `semidefinite`, pivots within
/// rounding of zero produce a zero column provided the rest of the column also
/// vanishes.
fn cholesky(m: &DMatrix<f64>, semidefinite: bool) -> Result<DMatrix<f64>, FactorFailure> {
    let n = m.nrows();
    let max_diag = m.diagonal().max();
    let min_diag = m.diagonal().min();
    let tol = 16.0 * n as f64 * f64::EPSILON * max_diag.max(0.0);
    let fail = |column, pivot| FactorFailure {
        column,
        pivot,
        max_diag,
        min_diag,
    };
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot > tol || (!semidefinite && pivot > 0.0) {
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if semidefinite && pivot >= -tol {
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol.max(f64::MIN_POSITIVE) {
                    return Err(fail(j, pivot));
                }
            }
        } else {
            return Err(fail(j, pivot));
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn gauss(mean: &[f64], cov: DMatrix<f64>) -> GaussianState {
        GaussianState::new(DVector::from_row_slice(mean), cov).unwrap()
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let g = gauss(&[1.0, -2.0, 3.0], DMatrix::zeros(3, 3));
        let s = utd(&g, &UtParams::default()).unwrap();
        assert_eq!(s.points.len(), 7);
        assert!(s.points.iter().all(|p| *p == g.mean));
        let back = utr(&s);
        assert_eq!(back.mean, g.mean);
        assert_eq!(back.cov, DMatrix::zeros(3, 3));
    }

    #[test]
    fn scalar_hand_example() {
        let g = gauss(&[0.0], dmatrix![4.0]);
        let s = utd(&g, &UtParams::new(1.0, 0.0, 2.0).unwrap()).unwrap();
        let pts: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 2.0, -2.0]);
        assert_eq!(s.wm(), &[0.0, 0.5, 0.5]);
        assert_eq!(s.wc(), &[2.0, 0.5, 0.5]);
        let back = utr(&s);
        assert_eq!(back.mean[0], 0.0);
        assert!((back.cov[(0, 0)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn weight_identities() {
        for (alpha, kappa, beta) in [(1.0, 0.0, 2.0), (0.5, 1.0, 2.0), (1e-3, 0.0, 2.0)] {
            let p = UtParams::new(alpha, kappa, beta).unwrap();
            for d in 1..=14 {
                let w = p.weights(d);
                assert_eq!(w.len(), 2 * d + 1);
                assert!((w.wm.iter().sum::<f64>() - 1.0).abs() < 1e-12 * w.wm[0].abs().max(1.0));
                assert!(w.wm[1..] == w.wc[1..]);
                let off = 1.0 - alpha * alpha + beta;
                assert!((w.wc[0] - w.wm[0] - off).abs() <= 1e-15 * w.wm[0].abs().max(1.0));
            }
        }
        let w = UtParams::default().weights(6);
        assert_eq!(w.wc[0] - w.wm[0], 2.0);
    }

    #[test]
    fn params_validation() {
        assert!(UtParams::new(0.0, 0.0, 2.0).is_err());
        assert!(UtParams::new(1.5, 0.0, 2.0).is_err());
        assert!(UtParams::new(1.0, -1.0, 2.0).is_err());
        assert!(UtParams::new(1.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert_eq!(psd_sqrt(&i).unwrap(), i);
        let r = psd_sqrt(&dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap();
        assert_eq!(r, dmatrix![2.0, 0.0; 0.0, 3.0]);
        let m = dmatrix![1.0, 0.0; 0.0, 0.0];
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * r.transpose() - &m).amax() < 1e-9);
    }

    #[test]
    fn near_singular_uses_jitter() {
        // rank deficient with rounding noise in the off-diagonal
        let m = dmatrix![1.0, 1.0 + 1e-13; 1.0 + 1e-13, 1.0];
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * r.transpose() - &m).amax() < 1e-9);
    }

    #[test]
    fn indefinite_is_numeric_error() {
        let m = dmatrix![1.0, 0.0; 0.0, -1.0];
        match psd_sqrt(&m) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("pivot")),
            other => panic!("expected numeric error, got {other:?}"),
        }
        assert!(matches!(
            psd_sqrt(&dmatrix![1.0, 0.5; 0.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fixed_and_dynamic_recovery_agree() {
        let g = gauss(
            &[1.0, 2.0, 3.0],
            dmatrix![2.0, 0.3, 0.1; 0.3, 1.0, -0.2; 0.1, -0.2, 0.5],
        );
        let s = utd(&g, &UtParams::new(0.7, 1.0, 2.0).unwrap()).unwrap();
        let fixed: Vec<SVector<f64, 3>> = s
            .points
            .iter()
            .map(|p| SVector::<f64, 3>::from_column_slice(p.as_slice()))
            .collect();
        let (m, c) = recover_moments(&fixed, &s.weights);
        let d = utr(&s);
        assert!((DVector::from_column_slice(m.as_slice()) - &d.mean).amax() < 1e-14);
        assert!((DMatrix::from_column_slice(3, 3, c.as_slice()) - &d.cov).amax() < 1e-14);
    }
}
