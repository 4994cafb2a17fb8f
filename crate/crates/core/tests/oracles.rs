//! Independent oracles for the closed-form engine.

use approx::assert_abs_diff_eq;
use cvdistill_core::channel::{discrete_channel, pooled_cm, propagate, upper_bound_ln};
use cvdistill_core::distiller::{attach_tap, distilled_gln, herald, TapConfig};
use cvdistill_core::gaussian::{
    log_negativity, make_kerr_entangled, partial_transpose, symplectic_eigenvalues, symplectic_form, GaussianState,
};
use cvdistill_core::tail::{gaussian_tail, log_gaussian_tail};
use nalgebra::{DMatrix, DVector};

/// Moduli of the eigenvalues of `Omega cov` from a general (non-symmetric)
/// eigen solver, one per conjugate pair.
fn brute_force_symplectic(cov: &DMatrix<f64>) -> Vec<f64> {
    let n = cov.nrows() / 2;
    let m = symplectic_form(n) * cov;
    let mut moduli: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| a.partial_cmp(b).unwrap());
    moduli.iter().step_by(2).copied().collect()
}

/// Two-mode closed form `nu^2 = (D -+ sqrt(D^2 - 4 det)) / 2`,
/// `D = det A + det B + 2 det C`.
fn two_mode_closed_form(cov: &DMatrix<f64>) -> (f64, f64) {
    let block = |r: usize, c: usize| cov.view((r, c), (2, 2)).into_owned();
    let det2 = |m: DMatrix<f64>| m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let delta = det2(block(0, 0)) + det2(block(2, 2)) + 2.0 * det2(block(0, 2));
    let det = cov.determinant();
    let disc = (delta * delta - 4.0 * det).max(0.0).sqrt();
    (((delta - disc) / 2.0).sqrt(), ((delta + disc) / 2.0).sqrt())
}

fn sample_covs() -> Vec<DMatrix<f64>> {
    let vs = 2f64.powf(-0.76);
    let mut out = vec![
        make_kerr_entangled(0.5904, 125.0).unwrap().cov().clone(),
        make_kerr_entangled(vs, 1.0 / vs).unwrap().cov().clone(),
    ];
    let st = make_kerr_entangled(0.3, 9.0).unwrap();
    out.push(
        st.apply_loss(1, 0.4)
            .unwrap()
            .rotate_phase(0, 0.7)
            .unwrap()
            .cov()
            .clone(),
    );
    out.push(
        GaussianState::zero_mean(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 1.5, 4.0])))
            .unwrap()
            .apply_beamsplitter(0, 1, 0.3)
            .unwrap()
            .cov()
            .clone(),
    );
    out
}

#[test]
fn symplectic_spectrum_matches_general_eigensolver() {
    for cov in sample_covs() {
        let fast = symplectic_eigenvalues(&cov).unwrap();
        let slow = brute_force_symplectic(&cov);
        for (a, b) in fast.values().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        }
        let pt = partial_transpose(&cov, 1);
        let fast = symplectic_eigenvalues(&pt).unwrap();
        let (lo, hi) = two_mode_closed_form(&pt);
        assert!((fast.values()[0] - lo).abs() < 1e-9 * hi);
        assert!((fast.values()[1] - hi).abs() < 1e-9 * hi);
    }
}

#[test]
fn kerr_state_spectrum_frozen() {
    // sqrt(V_s V_a) per input mode, preserved by the beam splitter.
    let nu = symplectic_eigenvalues(make_kerr_entangled(0.5904, 125.0).unwrap().cov()).unwrap();
    for v in nu.values() {
        assert_abs_diff_eq!(*v, 8.590_692_637_965_812, epsilon = 1e-9);
    }
}

#[test]
fn beamsplitter_matches_explicit_transform() {
    let st = make_kerr_entangled(0.45, 6.0)
        .unwrap()
        .tensor(&GaussianState::single_mode(2.0, 0.5).unwrap());
    for t in [0.0, 0.07, 0.5, 0.93, 1.0] {
        let (c, s) = (f64::sqrt(t), f64::sqrt(1.0 - t));
        // mode_b = 1 (signal), mode_a = 2 (tap)
        let mut m = DMatrix::identity(6, 6);
        for q in 0..2 {
            m[(2 + q, 2 + q)] = c;
            m[(2 + q, 4 + q)] = -s;
            m[(4 + q, 4 + q)] = c;
            m[(4 + q, 2 + q)] = s;
        }
        let expected = &m * st.cov() * m.transpose();
        let out = st.apply_beamsplitter(2, 1, t).unwrap();
        assert_abs_diff_eq!(out.cov(), &expected, epsilon = 1e-12);
    }
}

// Independent tail oracle: Taylor series of erf for small arguments, Lentz
// continued fraction for erfc otherwise.
fn erfc_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_oracle(-x);
    }
    if x < 2.0 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        return 1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum;
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x+ 1/2/(x+ 1/(x+ 3/2/(x+ ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / f
}

#[test]
fn tail_against_independent_oracle() {
    for k in -80..=120 {
        let a = k as f64 / 10.0;
        let oracle = 0.5 * erfc_oracle(a / std::f64::consts::SQRT_2);
        let tol = if a.abs() <= 8.0 { 1e-13 } else { 1e-10 };
        let rel = ((gaussian_tail(a) - oracle) / oracle).abs();
        assert!(rel < tol, "alpha = {a}: {} vs {oracle} ({rel:e})", gaussian_tail(a));
        let lrel = (log_gaussian_tail(a) - oracle.ln()).abs();
        assert!(lrel < 1e-12 * oracle.ln().abs().max(1.0), "ln Q({a})");
    }
    assert!((gaussian_tail(3.90) - 4.81e-5).abs() < 5e-8);
}

// Frozen from an independent dense-matrix prototype of the same pipeline
// (general eigen routine, direct normal pdf/sf, no log-space weights).
const V_A: f64 = 122.834_482_813_199_63;

fn calibrated_mixture() -> cvdistill_core::MixtureState {
    let st = make_kerr_entangled(2f64.powf(-0.76), V_A).unwrap();
    propagate(&st, &discrete_channel()).unwrap()
}

#[test]
fn calibrated_discrete_pipeline_frozen() {
    let mix = calibrated_mixture();
    let (_, pooled) = pooled_cm(&mix);
    assert_abs_diff_eq!(log_negativity(&pooled).unwrap(), -1.63, epsilon = 1e-9);
    assert_abs_diff_eq!(upper_bound_ln(&mix).unwrap(), 0.530_900_819_064_114_3, epsilon = 1e-10);

    let mix3 = attach_tap(&mix, &TapConfig::default()).unwrap();
    let frozen = [
        (0.0, 0.5, -1.585_335_312_857_283_6, 0.5),
        (
            4.0,
            0.021_550_096_187_442_056,
            -0.815_584_243_465_798,
            0.937_953_636_535_798_7,
        ),
        (
            6.5,
            0.001_140_468_654_539_113_6,
            0.590_170_207_332_611_5,
            0.998_682_660_857_830_6,
        ),
        (
            9.0,
            2.141_664_931_375_904e-5,
            0.728_958_047_110_573_2,
            0.999_995_699_135_585_1,
        ),
    ];
    for (th, p, ln, w_full) in frozen {
        let ens = herald(&mix3, th).unwrap();
        assert!(((ens.success_probability - p) / p).abs() < 1e-9, "P at {th}");
        assert_abs_diff_eq!(distilled_gln(&ens).unwrap(), ln, epsilon = 1e-9);
        assert_abs_diff_eq!(ens.posterior_weights[1], w_full, epsilon = 1e-9);
    }
    let ens = herald(&mix3, 4.0).unwrap();
    let expected = DMatrix::from_row_slice(
        4,
        4,
        &[
            19.5632611,
            0.0,
            -16.54900319,
            0.0,
            0.0,
            61.71248957,
            0.0,
            57.11528786,
            -16.54900319,
            0.0,
            19.4027551,
            0.0,
            0.0,
            57.11528786,
            0.0,
            54.83514034,
        ],
    );
    assert_abs_diff_eq!(&ens.pooled_cov, &expected, epsilon = 1e-7);
}

#[test]
fn tap_variance_on_calibrated_full_transmission_component() {
    let vs = 2f64.powf(-0.76);
    let mix3 = attach_tap(&calibrated_mixture(), &TapConfig::default()).unwrap();
    let cov = mix3.components()[1].1.cov();
    assert_abs_diff_eq!(cov[(4, 4)], 0.93 + 0.07 * (vs + V_A) / 2.0, epsilon = 1e-12);
}
