use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use super::linalg::CMatrix;
use crate::config::SystemConfig;

/// Shape of the Gamma distribution of computing intensities.
pub const OMEGA_SHAPE: f64 = 2.0;
/// Scale of the Gamma distribution of computing intensities (cycles/bit).
pub const OMEGA_SCALE: f64 = 200.0;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("regularized channel Gram matrix is singular (alpha = {alpha})")]
    Singular { alpha: f64 },
    #[error("negative regularization {0}")]
    NegativeAlpha(f64),
    #[error("invalid error variance: {0}")]
    Variance(String),
}

/// One draw of the environment: ground truth, the estimates the base
/// station sees, and the beamformers derived from the estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// K×L, row k holds `h_kᴴ`, the conjugate-transposed channel of user k.
    pub h_true: CMatrix,
    /// K×L channel estimates.
    pub h_est: CMatrix,
    pub omega_true: Vec<f64>,
    pub omega_est: Vec<f64>,
    /// L×K, unit-norm columns.
    pub beamformer: CMatrix,
    /// Set when K > L.
    pub overloaded: bool,
}

impl NetworkState {
    pub fn num_users(&self) -> usize {
        self.h_true.rows()
    }

    pub fn num_antennas(&self) -> usize {
        self.h_true.cols()
    }

    pub fn channel(&self, use_true: bool) -> &CMatrix {
        if use_true {
            &self.h_true
        } else {
            &self.h_est
        }
    }

    pub fn omega(&self, use_true: bool) -> &[f64] {
        if use_true {
            &self.omega_true
        } else {
            &self.omega_est
        }
    }
}

/// Circularly symmetric complex Gaussian with the given variance.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws a network state.
///
/// Estimates follow the MMSE decomposition: `h_est ~ CN(0, 1 - σ_h²)` and an
/// independent error `~ CN(0, σ_h²)`, so the true channel is `CN(0, 1)`.
/// True intensities are `Gamma(2, 200)`; the estimate subtracts a
/// `N(0, σ_ω²)` error. Both are clamped to `omega_floor`.
pub fn generate_state<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> Result<NetworkState, StateError> {
    if !(config.sigma_h_sq >= 0.0 && config.sigma_h_sq < 1.0) {
        return Err(StateError::Variance(format!(
            "sigma_h_sq = {}",
            config.sigma_h_sq
        )));
    }
    if !(config.sigma_w_sq >= 0.0) {
        return Err(StateError::Variance(format!(
            "sigma_w_sq = {}",
            config.sigma_w_sq
        )));
    }
    let k = config.num_users;
    let l = config.num_antennas;
    let overloaded = config.overloaded();
    if overloaded {
        log::warn!("{k} users exceed {l} antennas; interference cannot be fully nulled");
    }

    let est_var = 1.0 - config.sigma_h_sq;
    let h_est = CMatrix::from_fn(k, l, |_, _| complex_gaussian(rng, est_var));
    let h_err = CMatrix::from_fn(k, l, |_, _| complex_gaussian(rng, config.sigma_h_sq));
    let h_true = CMatrix::from_fn(k, l, |r, c| h_est[(r, c)] + h_err[(r, c)]);

    let gamma = Gamma::new(OMEGA_SHAPE, OMEGA_SCALE).expect("valid gamma parameters");
    let sd_w = config.sigma_w_sq.sqrt();
    let mut omega_true = Vec::with_capacity(k);
    let mut omega_est = Vec::with_capacity(k);
    for _ in 0..k {
        let w: f64 = gamma.sample(rng).max(config.omega_floor);
        let eps: f64 = StandardNormal.sample(rng);
        omega_true.push(w);
        omega_est.push((w - sd_w * eps).max(config.omega_floor));
    }

    let beamformer = rzf_beamformer(&h_est, config.rzf_alpha)?;
    Ok(NetworkState {
        h_true,
        h_est,
        omega_true,
        omega_est,
        beamformer,
        overloaded,
    })
}

/// Regularized zero-forcing: the columns of `Ĥᴴ (Ĥ Ĥᴴ + αI)⁻¹`, each scaled
/// to unit norm. `h_est` is K×L; the result is L×K.
pub fn rzf_beamformer(h_est: &CMatrix, alpha: f64) -> Result<CMatrix, StateError> {
    if !(alpha >= 0.0) {
        return Err(StateError::NegativeAlpha(alpha));
    }
    let k = h_est.rows();
    let h_adj = h_est.adjoint();
    let mut gram = h_est.matmul(&h_adj);
    for i in 0..k {
        gram[(i, i)] += Complex64::new(alpha, 0.0);
    }
    let inv = gram
        .solve(&CMatrix::identity(k))
        .ok_or(StateError::Singular { alpha })?;
    let mut w = h_adj.matmul(&inv);
    for c in 0..k {
        let norm = w.column_norm(c);
        if norm == 0.0 {
            return Err(StateError::Singular { alpha });
        }
        for r in 0..w.rows() {
            w[(r, c)] /= norm;
        }
    }
    Ok(w)
}

/// Effective channels `h_kᴴ v_j` as a K×K matrix, i.e. the product `H V`.
pub fn effective_channel(h: &CMatrix, v: &CMatrix) -> CMatrix {
    h.matmul(v)
}

/// Channel gains `|h_kᴴ v_j|²`, row-major K×K.
pub fn channel_gains(h: &CMatrix, v: &CMatrix) -> Vec<f64> {
    effective_channel(h, v)
        .as_slice()
        .iter()
        .map(|z| z.norm_sqr())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    #[test]
    fn zero_error_variance_gives_exact_estimates() {
        let cfg = SystemConfig {
            sigma_h_sq: 0.0,
            ..SystemConfig::default()
        };
        let s = generate_state(&cfg, &mut rng_from(1, &[])).unwrap();
        assert_eq!(s.h_true, s.h_est);
    }

    #[test]
    fn same_seed_same_state() {
        let cfg = SystemConfig::default();
        let a = generate_state(&cfg, &mut rng_from(11, &[])).unwrap();
        let b = generate_state(&cfg, &mut rng_from(11, &[])).unwrap();
        assert_eq!(a, b);
        let c = generate_state(&cfg, &mut rng_from(12, &[])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn state_invariants_hold() {
        let cfg = SystemConfig::default();
        let mut rng = rng_from(5, &[]);
        for _ in 0..200 {
            let s = generate_state(&cfg, &mut rng).unwrap();
            for c in 0..cfg.num_users {
                assert!((s.beamformer.column_norm(c) - 1.0).abs() < 1e-9);
            }
            assert!(s
                .omega_true
                .iter()
                .chain(&s.omega_est)
                .all(|&w| w >= cfg.omega_floor));
        }
    }

    #[test]
    fn gamma_intensity_mean() {
        // Monte-Carlo check of shape * scale = 400.
        let mut rng = rng_from(21, &[]);
        let gamma = Gamma::new(OMEGA_SHAPE, OMEGA_SCALE).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| gamma.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 400.0).abs() < 5.0, "mean {mean}");
    }

    #[test]
    fn single_user_rzf_is_matched_filter() {
        let h = CMatrix::from_fn(1, 4, |_, c| Complex64::new(c as f64 + 1.0, 0.5 - c as f64));
        let v = rzf_beamformer(&h, 0.2).unwrap();
        let hn = (0..4).map(|c| h[(0, c)].norm_sqr()).sum::<f64>().sqrt();
        for a in 0..4 {
            assert!((v[(a, 0)] - h[(0, a)].conj() / hn).norm() < 1e-12);
        }
        assert!((v.column_norm(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_forcing_nulls_cross_gains() {
        // Orthogonal rows: scaled DFT rows.
        let n = 4;
        let h = CMatrix::from_fn(n, n, |r, c| {
            let ang = 2.0 * std::f64::consts::PI * (r * c) as f64 / n as f64;
            Complex64::from_polar(1.0 + r as f64, ang)
        });
        let v = rzf_beamformer(&h, 0.0).unwrap();
        let e = effective_channel(&h, &v);
        for k in 0..n {
            for j in 0..n {
                if k != j {
                    assert!(
                        e[(k, j)].norm() < 1e-9,
                        "cross gain {k},{j} = {}",
                        e[(k, j)].norm()
                    );
                }
            }
        }
    }

    #[test]
    fn rank_deficient_without_regularization_is_singular() {
        let h = CMatrix::from_fn(2, 2, |_, c| Complex64::new(1.0, c as f64));
        assert_eq!(
            rzf_beamformer(&h, 0.0).unwrap_err(),
            StateError::Singular { alpha: 0.0 }
        );
        assert!(rzf_beamformer(&h, 0.1).is_ok());
        assert!(rzf_beamformer(&h, -1.0).is_err());
    }

    #[test]
    fn overloaded_config_still_produces_state() {
        let cfg = SystemConfig {
            num_users: 6,
            ..SystemConfig::default()
        };
        let s = generate_state(&cfg, &mut rng_from(2, &[])).unwrap();
        assert!(s.overloaded);
        assert_eq!(s.beamformer.cols(), 6);
    }
}
