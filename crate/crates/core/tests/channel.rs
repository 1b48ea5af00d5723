mod common;

use std::f64::consts::TAU;

use common::best_grid_gain;
use kbae_core::channel::{
    cascaded_gain, gen_channel, generate_phase_dataset, optimal_phase, optimal_phase_with, ChannelConfig, PhaseSign,
};
use kbae_core::{PhaseDomain, PhaseShiftMatrix};
use num_complex::Complex64;
use proptest::prelude::*;

/// `h_rdᵀ·diag(e^{jθ})·h_sr` written as an explicit matrix product.
fn matrix_gain(h_sr: &[Complex64], h_rd: &[Complex64], theta: &[f64]) -> Complex64 {
    let n = theta.len();
    let mut diag = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        diag[i][i] = Complex64::from_polar(1.0, theta[i]);
    }
    let phi_h: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| diag[i][j] * h_sr[j]).sum()).collect();
    (0..n).map(|i| h_rd[i] * phi_h[i]).sum()
}

#[test]
fn co_phasing_reaches_the_magnitude_bound() {
    let cfg = ChannelConfig::new(6, 42).with_paths(3);
    for i in 0..1000 {
        let ch = gen_channel(&cfg, i).unwrap();
        let theta = optimal_phase(&ch.h_sr, &ch.h_rd).unwrap();
        let gain = cascaded_gain(&ch.h_sr, &ch.h_rd, &theta).unwrap();
        let bound: f64 = ch.h_sr.iter().zip(&ch.h_rd).map(|(a, b)| a.norm() * b.norm()).sum();
        assert!(
            (gain.norm() - bound).abs() <= 1e-9,
            "sample {i}: {} vs {bound}",
            gain.norm()
        );
        let literal = optimal_phase_with(&ch.h_sr, &ch.h_rd, PhaseSign::Literal).unwrap();
        assert!(cascaded_gain(&ch.h_sr, &ch.h_rd, &literal).unwrap().norm() <= bound + 1e-9);
    }
}

#[test]
fn gain_matches_the_matrix_form() {
    let cfg = ChannelConfig::new(4, 9);
    for i in 0..50 {
        let ch = gen_channel(&cfg, i).unwrap();
        let theta = optimal_phase(&ch.h_sr, &ch.h_rd).unwrap();
        let a = cascaded_gain(&ch.h_sr, &ch.h_rd, &theta).unwrap();
        let b = matrix_gain(&ch.h_sr, &ch.h_rd, theta.values());
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn grid_search_never_beats_co_phasing() {
    for side in [1, 2] {
        let cfg = ChannelConfig::new(side, 5);
        for i in 0..25 {
            let ch = gen_channel(&cfg, i).unwrap();
            let theta = optimal_phase(&ch.h_sr, &ch.h_rd).unwrap();
            let opt = cascaded_gain(&ch.h_sr, &ch.h_rd, &theta).unwrap().norm();
            assert!(best_grid_gain(&ch.h_sr, &ch.h_rd) <= opt + 1e-12);
        }
    }
}

#[test]
fn generator_is_deterministic_and_indexed() {
    let cfg = ChannelConfig::new(4, 3);
    assert_eq!(gen_channel(&cfg, 7).unwrap(), gen_channel(&cfg, 7).unwrap());
    assert_ne!(gen_channel(&cfg, 7).unwrap(), gen_channel(&cfg, 8).unwrap());
    let a = generate_phase_dataset(&cfg, 5).unwrap();
    let b = generate_phase_dataset(&cfg, 8).unwrap();
    assert_eq!(a[..], b[..5]);
    assert!(a.iter().all(|m| m.domain() == PhaseDomain::Normalized));
}

proptest! {
    #[test]
    fn optimal_phases_lie_in_range(seed in any::<u64>(), index in 0u64..1000) {
        let cfg = ChannelConfig::new(3, seed);
        let ch = gen_channel(&cfg, index).unwrap();
        let theta = optimal_phase(&ch.h_sr, &ch.h_rd).unwrap();
        prop_assert!(theta.values().iter().all(|v| (0.0..TAU).contains(v)));
    }

    #[test]
    fn normalization_round_trips(values in prop::collection::vec(0.0..TAU, 9)) {
        let m = PhaseShiftMatrix::new(3, values, PhaseDomain::Raw).unwrap();
        let n = m.normalize().unwrap();
        prop_assert!(n.values().iter().all(|v| (0.0..1.0).contains(v)));
        let back = n.denormalize().unwrap();
        for (a, b) in m.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
