//! Beamformer and SINR checked against an independent nalgebra computation.

use nalgebra::{Complex, DMatrix};
use netmoe::config::SystemConfig;
use netmoe::netmodel::{comm_metrics, effective_channel, generate_state, rzf_beamformer, CMatrix};
use netmoe::seeding::rng_from;

fn to_na(m: &CMatrix) -> DMatrix<Complex<f64>> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

fn rel_close(a: Complex<f64>, b: Complex<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1.0)
}

fn oracle_rzf(h: &DMatrix<Complex<f64>>, alpha: f64) -> DMatrix<Complex<f64>> {
    let k = h.nrows();
    let gram = h * h.adjoint() + DMatrix::identity(k, k) * Complex::new(alpha, 0.0);
    let mut w = h.adjoint() * gram.try_inverse().expect("invertible");
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        col /= Complex::new(n, 0.0);
    }
    w
}

#[test]
fn rzf_matches_nalgebra() {
    for (l, k) in [(4, 4), (8, 4), (4, 6), (2, 1)] {
        let cfg = SystemConfig {
            num_antennas: l,
            num_users: k,
            ..SystemConfig::default()
        };
        for seed in 0..20 {
            let s = generate_state(&cfg, &mut rng_from(seed, &[99])).unwrap();
            let ours = rzf_beamformer(&s.h_est, cfg.rzf_alpha).unwrap();
            let want = oracle_rzf(&to_na(&s.h_est), cfg.rzf_alpha);
            assert_eq!((ours.rows(), ours.cols()), (l, k));
            for r in 0..l {
                for c in 0..k {
                    assert!(
                        rel_close(ours[(r, c)], want[(r, c)], 1e-9),
                        "L={l} K={k} seed={seed}"
                    );
                }
            }
            let eff = effective_channel(&s.h_true, &ours);
            let want_eff = to_na(&s.h_true) * &want;
            for r in 0..k {
                for c in 0..k {
                    assert!(rel_close(eff[(r, c)], want_eff[(r, c)], 1e-9));
                }
            }
        }
    }
}

#[test]
fn sinr_matches_direct_computation() {
    let cfg = SystemConfig::default();
    for seed in 0..20 {
        let s = generate_state(&cfg, &mut rng_from(seed, &[7])).unwrap();
        let p: Vec<f64> = (0..4).map(|i| 0.1 + 0.3 * i as f64).collect();
        let m = comm_metrics(&s, &p, &cfg);
        let h = to_na(&s.h_true);
        let v = to_na(&s.beamformer);
        let noise = cfg.noise_psd * cfg.bandwidth;
        for k in 0..4 {
            let hk = h.row(k);
            let gain = |j: usize| (hk * v.column(j))[(0, 0)].norm_sqr();
            let interference: f64 = (0..4).filter(|&j| j != k).map(|j| gain(j) * p[j]).sum();
            let sinr = gain(k) * p[k] / (interference + noise);
            let rate = cfg.bandwidth * (1.0 + sinr / cfg.sinr_gap).log2();
            assert!((m.sinr[k] - sinr).abs() <= 1e-9 * sinr, "seed {seed}");
            assert!((m.r_tx[k] - rate).abs() <= 1e-9 * rate);
            assert!((m.t_tx[k] - cfg.d_out / rate).abs() <= 1e-9 * m.t_tx[k]);
        }
    }
}

#[test]
fn alpha_zero_square_system_nulls_interference() {
    let cfg = SystemConfig {
        sigma_h_sq: 0.0,
        rzf_alpha: 0.0,
        ..SystemConfig::default()
    };
    let s = generate_state(&cfg, &mut rng_from(3, &[])).unwrap();
    let eff = effective_channel(&s.h_true, &s.beamformer);
    for r in 0..4 {
        for c in 0..4 {
            if r != c {
                assert!(eff[(r, c)].norm() < 1e-9);
            }
        }
    }
}
