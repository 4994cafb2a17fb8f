//! Covariance-matrix description of multimode Gaussian states.
//!
//! Quadratures are interleaved per mode, `(X1, P1, X2, P2, ...)`, and all
//! second moments are in shot-noise units: the vacuum has variance 1 in
//! every quadrature.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

/// Smallest symplectic eigenvalue accepted as physical is `1 - PHYS_TOL`.
pub const PHYS_TOL: f64 = 1e-9;

/// Relative asymmetry above which a covariance matrix is rejected outright
/// instead of being symmetrized.
const ASYMMETRY_TOL: f64 = 1e-10;

/// Standard symplectic form with 2x2 blocks `[[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// Symplectic spectrum of a covariance matrix, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymplecticEigenvalues {
    values: Vec<f64>,
}

impl SymplecticEigenvalues {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_square_even(cov: &DMatrix<f64>) -> Result<usize> {
    let (r, c) = cov.shape();
    if r != c {
        return Err(Error::InvalidMatrix(format!("covariance is {r}x{c}, not square")));
    }
    if r == 0 || r % 2 != 0 {
        return Err(Error::InvalidMatrix(format!(
            "covariance dimension {r} is not a positive even number"
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("covariance has non-finite entries".into()));
    }
    Ok(r / 2)
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    let asym = max_abs(&(cov - cov.transpose()));
    if asym > ASYMMETRY_TOL * (1.0 + max_abs(cov)) {
        return Err(Error::InvalidMatrix(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn symmetrize(cov: &DMatrix<f64>) -> DMatrix<f64> {
    (cov + cov.transpose()) * 0.5
}

/// Symplectic eigenvalues of a symmetric positive-definite `2n x 2n` matrix.
///
/// With `cov = L L^T`, the matrix `K = L^T Omega L` is real antisymmetric and
/// similar to `Omega cov`, so the Hermitian matrix `iK` has spectrum `+-nu_k`.
pub fn symplectic_eigenvalues(cov: &DMatrix<f64>) -> Result<SymplecticEigenvalues> {
    let n = check_square_even(cov)?;
    check_symmetric(cov)?;
    let sym = symmetrize(cov);
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::InvalidMatrix("covariance is not positive definite".into()))?;
    let l = chol.l();
    let k = l.transpose() * symplectic_form(n) * &l;
    let ik: DMatrix<Complex<f64>> = k.map(|v| Complex::new(0.0, v));
    let mut spectrum: Vec<f64> = ik.symmetric_eigenvalues().iter().copied().collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
    let mut values: Vec<f64> = spectrum[..n].to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite spectrum"));
    Ok(SymplecticEigenvalues { values })
}

/// Partial transposition of `mode` at the covariance level: flips the sign
/// of that mode's P quadrature.
pub fn partial_transpose(cov: &DMatrix<f64>, mode: usize) -> DMatrix<f64> {
    let p = 2 * mode + 1;
    let mut out = cov.clone();
    for j in 0..out.nrows() {
        if j != p {
            out[(p, j)] = -out[(p, j)];
            out[(j, p)] = -out[(j, p)];
        }
    }
    out
}

fn check_two_mode(cov: &DMatrix<f64>) -> Result<()> {
    if cov.shape() != (4, 4) {
        return Err(Error::Dimension {
            expected: 4,
            got: cov.nrows(),
        });
    }
    Ok(())
}

/// Symplectic eigenvalues of the partially transposed two-mode matrix.
pub fn pt_symplectic_eigenvalues(cov: &DMatrix<f64>) -> Result<SymplecticEigenvalues> {
    check_two_mode(cov)?;
    symplectic_eigenvalues(&partial_transpose(cov, 1))
}

/// Gaussian logarithmic negativity in bits, `-log2` of the smallest
/// partial-transpose symplectic eigenvalue.
///
/// Not clamped at zero: a negative value quantifies how far a Gaussian fit
/// is from being entangled.
pub fn log_negativity(cov: &DMatrix<f64>) -> Result<f64> {
    Ok(-pt_symplectic_eigenvalues(cov)?.min().log2())
}

/// Trace norm of the partially transposed Gaussian density operator.
pub fn pt_trace_norm_of_cov(cov: &DMatrix<f64>) -> Result<f64> {
    Ok(pt_symplectic_eigenvalues(cov)?
        .values()
        .iter()
        .map(|nu| (1.0 / nu).max(1.0))
        .product())
}

/// Mean vector and covariance matrix of an `n`-mode Gaussian state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Builds a state and rejects it unless it satisfies the uncertainty
    /// relation.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let state = Self::unchecked(mean, cov)?;
        let nu = symplectic_eigenvalues(&state.cov)
            .map_err(|_| Error::Unphysical(f64::NAN))?
            .min();
        if nu < 1.0 - PHYS_TOL {
            return Err(Error::Unphysical(nu));
        }
        Ok(state)
    }

    /// Builds a state checking only shape and symmetry.
    pub fn unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = check_square_even(&cov)?;
        if mean.len() != 2 * n {
            return Err(Error::Dimension {
                expected: 2 * n,
                got: mean.len(),
            });
        }
        check_symmetric(&cov)?;
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        Self::new(DVector::zeros(dim), cov)
    }

    pub fn vacuum(n_modes: usize) -> Self {
        Self {
            mean: DVector::zeros(2 * n_modes),
            cov: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Single-mode zero-mean state with diagonal variances.
    pub fn single_mode(var_x: f64, var_p: f64) -> Result<Self> {
        Self::zero_mean(DMatrix::from_diagonal(&DVector::from_vec(vec![var_x, var_p])))
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn symplectic_eigenvalues(&self) -> Result<SymplecticEigenvalues> {
        symplectic_eigenvalues(&self.cov)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes() {
            return Err(Error::ModeIndex(format!(
                "mode {mode} out of range for a {}-mode state",
                self.n_modes()
            )));
        }
        Ok(())
    }

    fn expect_two_mode(&self) -> Result<()> {
        if self.n_modes() != 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: self.n_modes(),
            });
        }
        Ok(())
    }

    /// `mean -> S mean`, `cov -> S cov S^T`.
    pub fn transform(&self, s: &DMatrix<f64>) -> Result<Self> {
        if s.shape() != self.cov.shape() {
            return Err(Error::Dimension {
                expected: self.cov.nrows(),
                got: s.nrows(),
            });
        }
        Ok(Self {
            mean: s * &self.mean,
            cov: symmetrize(&(s * &self.cov * s.transpose())),
        })
    }

    /// Two-port beam splitter. `mode_b` is the transmitted signal and `mode_a`
    /// the second input port:
    /// `X_b' = sqrt(T) X_b - sqrt(1-T) X_a`, `X_a' = sqrt(T) X_a + sqrt(1-T) X_b`,
    /// and likewise for P.
    pub fn apply_beamsplitter(&self, mode_a: usize, mode_b: usize, transmittance: f64) -> Result<Self> {
        check_range("transmittance", transmittance, 0.0, 1.0, "must lie in [0, 1]")?;
        self.check_mode(mode_a)?;
        self.check_mode(mode_b)?;
        if mode_a == mode_b {
            return Err(Error::ModeIndex(format!(
                "beam splitter needs two distinct modes, got {mode_a} twice"
            )));
        }
        let t = transmittance.sqrt();
        let r = (1.0 - transmittance).sqrt();
        let dim = 2 * self.n_modes();
        let mut s = DMatrix::identity(dim, dim);
        for q in 0..2 {
            let a = 2 * mode_a + q;
            let b = 2 * mode_b + q;
            s[(b, b)] = t;
            s[(b, a)] = -r;
            s[(a, a)] = t;
            s[(a, b)] = r;
        }
        self.transform(&s)
    }

    /// Pure-loss channel with transmittance `eta` on one mode.
    pub fn apply_loss(&self, mode: usize, eta: f64) -> Result<Self> {
        check_range("eta", eta, 0.0, 1.0, "must lie in [0, 1]")?;
        self.check_mode(mode)?;
        let scale = eta.sqrt();
        let mut mean = self.mean.clone();
        let mut cov = self.cov.clone();
        let dim = cov.nrows();
        for q in [2 * mode, 2 * mode + 1] {
            mean[q] *= scale;
            for j in 0..dim {
                cov[(q, j)] *= scale;
                cov[(j, q)] *= scale;
            }
            cov[(q, q)] += 1.0 - eta;
        }
        Ok(Self { mean, cov })
    }

    /// Phase-space rotation `X' = cos t X + sin t P`, `P' = -sin t X + cos t P`
    /// on one mode.
    pub fn rotate_phase(&self, mode: usize, angle: f64) -> Result<Self> {
        self.check_mode(mode)?;
        let dim = 2 * self.n_modes();
        let (sin, cos) = angle.sin_cos();
        let mut s = DMatrix::identity(dim, dim);
        let (x, p) = (2 * mode, 2 * mode + 1);
        s[(x, x)] = cos;
        s[(x, p)] = sin;
        s[(p, x)] = -sin;
        s[(p, p)] = cos;
        self.transform(&s)
    }

    /// Reduced state on the modes in `keep`, in the order given.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::ModeIndex("keep set is empty".into()));
        }
        for (i, &m) in keep.iter().enumerate() {
            self.check_mode(m)?;
            if keep[..i].contains(&m) {
                return Err(Error::ModeIndex(format!("mode {m} listed twice")));
            }
        }
        let idx: Vec<usize> = keep.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Ok(Self { mean, cov })
    }

    /// Direct sum with an independent state appended after the last mode.
    pub fn tensor(&self, other: &GaussianState) -> Self {
        let d1 = self.mean.len();
        let d2 = other.mean.len();
        let mut mean = DVector::zeros(d1 + d2);
        mean.rows_mut(0, d1).copy_from(&self.mean);
        mean.rows_mut(d1, d2).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
        cov.view_mut((0, 0), (d1, d1)).copy_from(&self.cov);
        cov.view_mut((d1, d1), (d2, d2)).copy_from(&other.cov);
        Self { mean, cov }
    }

    pub fn log_negativity(&self) -> Result<f64> {
        self.expect_two_mode()?;
        log_negativity(&self.cov)
    }

    pub fn pt_trace_norm(&self) -> Result<f64> {
        self.expect_two_mode()?;
        pt_trace_norm_of_cov(&self.cov)
    }
}

/// True iff the smallest symplectic eigenvalue is at least `1 - PHYS_TOL`.
pub fn validate_physical(state: &GaussianState) -> bool {
    state
        .symplectic_eigenvalues()
        .map(|nu| nu.min() >= 1.0 - PHYS_TOL)
        .unwrap_or(false)
}

pub fn gaussian_log_negativity(state: &GaussianState) -> Result<f64> {
    state.log_negativity()
}

pub fn pt_trace_norm(state: &GaussianState) -> Result<f64> {
    state.pt_trace_norm()
}

/// Two-mode entangled state from an X-squeezed and a P-squeezed beam
/// interfered on a balanced beam splitter.
///
/// The output has `A = B = s I`, `C = diag(-d, d)` with
/// `s = (V_s + V_a) / 2` and `d = (V_a - V_s) / 2`, so that
/// `Var(X_A + X_B) = Var(P_A - P_B) = 2 V_s`.
pub fn make_kerr_entangled(v_squeezed: f64, v_antisqueezed: f64) -> Result<GaussianState> {
    if !(v_squeezed > 0.0 && v_squeezed <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "v_squeezed",
            value: v_squeezed,
            reason: "must lie in (0, 1]",
        });
    }
    if !(v_antisqueezed.is_finite() && v_antisqueezed >= 1.0) || v_squeezed * v_antisqueezed < 1.0 - PHYS_TOL {
        return Err(Error::InvalidParameter {
            name: "v_antisqueezed",
            value: v_antisqueezed,
            reason: "must satisfy V_a >= 1 and V_s * V_a >= 1",
        });
    }
    // The X-squeezed beam enters the signal port, the P-squeezed beam the
    // second port.
    let x_squeezed = GaussianState::single_mode(v_squeezed, v_antisqueezed)?;
    let p_squeezed = GaussianState::single_mode(v_antisqueezed, v_squeezed)?;
    x_squeezed.tensor(&p_squeezed).apply_beamsplitter(1, 0, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn vacuum_and_thermal_spectra() {
        let nu = symplectic_eigenvalues(&DMatrix::identity(4, 4)).unwrap();
        assert_abs_diff_eq!(nu.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nu.values()[1], 1.0, epsilon = 1e-12);
        let nu = symplectic_eigenvalues(&diag(&[3.0, 3.0])).unwrap();
        assert_abs_diff_eq!(nu.min(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_matrices() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.5;
        assert!(matches!(symplectic_eigenvalues(&m), Err(Error::InvalidMatrix(_))));
        assert!(matches!(
            symplectic_eigenvalues(&diag(&[1.0, -1.0])),
            Err(Error::InvalidMatrix(_))
        ));
        assert!(symplectic_eigenvalues(&DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn physicality_predicate() {
        assert!(validate_physical(&GaussianState::vacuum(2)));
        let bad = GaussianState::unchecked(DVector::zeros(2), diag(&[0.5, 0.5])).unwrap();
        assert!(!validate_physical(&bad));
        let squeezed = GaussianState::unchecked(DVector::zeros(2), diag(&[0.5, 2.0])).unwrap();
        assert!(validate_physical(&squeezed));
        assert!(matches!(
            GaussianState::zero_mean(diag(&[0.5, 0.5])),
            Err(Error::Unphysical(_))
        ));
    }

    #[test]
    fn construction_symmetrizes_within_tolerance() {
        let mut m = DMatrix::identity(2, 2) * 2.0;
        m[(0, 1)] = 1e-12;
        let s = GaussianState::zero_mean(m).unwrap();
        assert_eq!(s.cov()[(0, 1)], s.cov()[(1, 0)]);
        assert!(GaussianState::new(DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn vacuum_log_negativity_is_zero() {
        let v = GaussianState::vacuum(2);
        assert_abs_diff_eq!(v.log_negativity().unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.pt_trace_norm().unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            GaussianState::vacuum(3).log_negativity(),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn kerr_state_closed_form() {
        let vs = 0.5904;
        let va = 1.0 / vs;
        let st = make_kerr_entangled(vs, va).unwrap();
        let s = (vs + va) / 2.0;
        let d = (vs - va) / 2.0;
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[s, 0.0, d, 0.0, 0.0, s, 0.0, -d, d, 0.0, s, 0.0, 0.0, -d, 0.0, s],
        );
        assert_abs_diff_eq!(st.cov(), &expected, epsilon = 1e-12);
        // -log2(0.5904) = 0.760...
        assert_abs_diff_eq!(st.log_negativity().unwrap(), -vs.log2(), epsilon = 1e-12);
        assert_abs_diff_eq!(st.log_negativity().unwrap(), 0.76, epsilon = 1e-3);
        assert_abs_diff_eq!(
            st.pt_trace_norm().unwrap(),
            2f64.powf(st.log_negativity().unwrap()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kerr_vacuum_limit_and_errors() {
        let st = make_kerr_entangled(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(st.cov(), &DMatrix::identity(4, 4), epsilon = 1e-12);
        assert!(make_kerr_entangled(0.5, 1.5).is_err());
        assert!(make_kerr_entangled(0.0, 10.0).is_err());
        assert!(make_kerr_entangled(1.2, 10.0).is_err());
    }

    #[test]
    fn beamsplitter_edge_cases() {
        let st = make_kerr_entangled(0.5904, 125.0).unwrap();
        let same = st.apply_beamsplitter(0, 1, 1.0).unwrap();
        assert_abs_diff_eq!(same.cov(), st.cov(), epsilon = 1e-12);
        let vac = GaussianState::vacuum(2).apply_beamsplitter(0, 1, 0.3).unwrap();
        assert_abs_diff_eq!(vac.cov(), &DMatrix::identity(4, 4), epsilon = 1e-12);
        assert!(st.apply_beamsplitter(0, 0, 0.5).is_err());
        assert!(st.apply_beamsplitter(0, 1, 1.5).is_err());
        assert!(st.apply_beamsplitter(0, 2, 0.5).is_err());
    }

    #[test]
    fn beamsplitter_block_algebra() {
        let vs = 0.5904;
        let va = 1.0 / vs;
        let input = GaussianState::single_mode(vs, va)
            .unwrap()
            .tensor(&GaussianState::single_mode(va, vs).unwrap());
        // X-squeezed beam on the signal port (mode_b = 0).
        let out = input.apply_beamsplitter(1, 0, 0.5).unwrap();
        let s = (vs + va) / 2.0;
        assert_abs_diff_eq!(out.cov()[(0, 0)], s, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov()[(3, 3)], s, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov()[(0, 2)], (vs - va) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov()[(1, 3)], (va - vs) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov()[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_closed_form() {
        let vs = 0.5904;
        let va = 125.0;
        let st = make_kerr_entangled(vs, va).unwrap();
        assert_eq!(st.apply_loss(1, 1.0).unwrap().cov(), st.cov());
        let vac = GaussianState::vacuum(2).apply_loss(0, 0.37).unwrap();
        assert_abs_diff_eq!(vac.cov(), &DMatrix::identity(4, 4), epsilon = 1e-14);
        let lossy = st.apply_loss(1, 0.25).unwrap();
        let s = (vs + va) / 2.0;
        assert_abs_diff_eq!(lossy.cov()[(2, 2)], 0.25 * s + 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(lossy.cov()[(3, 3)], 0.25 * s + 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(lossy.cov()[(0, 2)], 0.5 * st.cov()[(0, 2)], epsilon = 1e-12);
        assert_abs_diff_eq!(lossy.cov()[(0, 0)], s, epsilon = 1e-12);
        assert!(st.apply_loss(1, -0.1).is_err());
    }

    #[test]
    fn partial_trace_blocks() {
        let vs = 0.5904;
        let va = 1.0 / vs;
        let st = make_kerr_entangled(vs, va).unwrap();
        assert_eq!(st.partial_trace(&[0, 1]).unwrap(), st);
        let a = GaussianState::vacuum(2).partial_trace(&[0]).unwrap();
        assert_eq!(a, GaussianState::vacuum(1));
        let b = st.partial_trace(&[1]).unwrap();
        let s = (vs + va) / 2.0;
        assert_abs_diff_eq!(b.cov(), &diag(&[s, s]), epsilon = 1e-12);
        assert!(st.partial_trace(&[]).is_err());
        assert!(st.partial_trace(&[2]).is_err());
        assert!(st.partial_trace(&[1, 1]).is_err());
    }
}
