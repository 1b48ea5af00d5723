mod common;

use common::{random_tensor, rng};
use kbae_core::channel::{generate_phase_dataset, ChannelConfig};
use kbae_core::pipeline::{train_on, TrainConfig};
use kbae_core::tensor::{Adam, AdamConfig, Tape, Tensor4};
use kbae_core::{Dataset, Dims, Model, ModelConfig, PhaseDomain, PhaseShiftMatrix};

fn within(got: usize, reference: f64, tol: f64) -> bool {
    (got as f64 - reference).abs() <= tol * reference
}

#[test]
fn psfnet_counts_match_the_reference_table() {
    // (C, params, FLOPs) from the published complexity table at M = 32.
    for (c, params, flops) in [
        (64, 173_251.0, 9_703_000.0),
        (32, 43_619.0, 2_593_000.0),
        (16, 11_059.0, 733_184.0),
    ] {
        let m = Model::build(ModelConfig::psfnet(32, c, 256), 0).unwrap();
        let (p, f) = (m.param_count().unwrap(), m.flops().unwrap());
        assert!(within(p, params, 0.01), "C = {c}: {p} params vs {params}");
        assert!(within(f, flops, 0.01), "C = {c}: {f} FLOPs vs {flops}");
    }
}

#[test]
fn psfnet_h_counts_for_both_garb_placements() {
    for (c, ref_params, ref_flops) in [(8, 6_645.0, 983_232.0), (4, 4_915.0, 777_360.0)] {
        for garbs in [2, 1] {
            let mut cfg = ModelConfig::psfnet_h(32, c, 256);
            cfg.decoder_garbs = garbs;
            let m = Model::build(cfg, 0).unwrap();
            let (p, f) = (m.param_count().unwrap(), m.flops().unwrap());
            println!("PSFNet-H C={c} decoder GARBs={garbs}: {p} params ({ref_params}), {f} FLOPs ({ref_flops})");
            assert!(p > 0 && f > 0);
        }
    }
}

#[test]
fn every_network_maps_a_single_matrix_to_m_by_m() {
    let configs = [
        ModelConfig::psfnet(32, 64, 256),
        ModelConfig::psfnet(32, 16, 16),
        ModelConfig::psfnet(16, 4, 4),
        ModelConfig::psfnet_h(32, 8, 256),
        ModelConfig::psfnet_h(32, 4, 1024),
        ModelConfig::psfnet_h(16, 2, 2),
    ];
    for cfg in configs {
        let m = Model::build(cfg.clone(), 1).unwrap();
        let side = cfg.side;
        let mut tape = Tape::inference();
        let p = tape.params(&m.params);
        let x = tape.input(Tensor4::full(Dims::new(1, 1, side, side), 0.3));
        let z = m.encode_on(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(z).dims(), Dims::new(1, cfg.channels, 1, cfg.codeword_len));
        let y = m.decode_on(&mut tape, &p, z).unwrap();
        assert_eq!(tape.value(y).dims(), Dims::new(1, 1, side, side));
        assert_eq!(
            m.encoder.output().unwrap(),
            [cfg.channels, cfg.feature_side(), cfg.feature_side()]
        );
        assert_eq!(m.decoder.output().unwrap(), [1, side, side]);
    }
}

/// One reconstruction step: the gradients cover exactly `param_count`
/// scalars, Adam keeps state for exactly those, and it moves every entry
/// whose gradient is nonzero (entries behind inactive ReLU channels get an
/// exact zero and stay put).
#[test]
fn param_count_equals_scalars_moved_by_one_step() {
    for cfg in [ModelConfig::psfnet(16, 4, 16), ModelConfig::psfnet_h(16, 4, 16)] {
        let mut m = Model::build(cfg.clone(), 3).unwrap();
        let before = m.params.clone();
        let mut tape = Tape::new();
        let p = tape.params(&m.params);
        let x = tape.input(random_tensor(&mut rng(4), Dims::new(8, 1, 16, 16)));
        let z = m.encode_on(&mut tape, &p, x).unwrap();
        let y = m.decode_on(&mut tape, &p, z).unwrap();
        let l = tape.mse(y, x).unwrap();
        let grads = tape.backward(l).unwrap();

        let covered: usize = grads.params().map(|(_, g)| g.len()).sum();
        assert_eq!(covered, m.param_count().unwrap());
        let mut adam = Adam::new(AdamConfig::default(), m.params.iter().map(|(_, t)| t.len()));
        let ids: Vec<_> = m.params.ids().collect();
        let mut nonzero = 0;
        for id in ids {
            let g = grads.param(id).unwrap().data().to_vec();
            nonzero += g.iter().filter(|v| **v != 0.0).count();
            let name = m.params.name(id).to_string();
            adam.step(id.0, &name, m.params.get_mut(id).data_mut(), Some(&g), 0.002)
                .unwrap();
        }
        let moved: usize = before
            .iter()
            .zip(m.params.iter())
            .map(|((_, a), (_, b))| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
            .sum();
        assert_eq!(moved, nonzero);
        let state: usize = (0..m.params.len()).map(|i| adam.state(i).m.len()).sum();
        assert_eq!(state, m.param_count().unwrap());
        assert!((0..m.params.len()).all(|i| adam.state(i).t == 1));
    }
}

/// Training updates only what the loss reaches and never more scalars
/// than `param_count`.
#[test]
fn training_moves_at_most_param_count_scalars() {
    let cfg = ModelConfig::psfnet(16, 4, 16);
    let data = Dataset::new(16, generate_phase_dataset(&ChannelConfig::new(16, 2), 16).unwrap()).unwrap();
    let mut tc = TrainConfig::new(cfg.clone(), 3);
    tc.epochs = 1;
    tc.batch_size = 16;
    let before = Model::build(cfg, 3).unwrap();
    let (after, report) = train_on(&tc, &data, None).unwrap();
    assert_eq!(report.steps, 1);
    let moved: usize = before
        .params
        .iter()
        .zip(after.params.iter())
        .map(|((_, a), (_, b))| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
        .sum();
    assert!(moved > 0 && moved <= before.param_count().unwrap());
    assert_eq!(before.params.scalar_count(), before.param_count().unwrap());
}

#[test]
fn decode_clamps_only_at_export() {
    let m = Model::build(ModelConfig::psfnet(16, 2, 4), 0).unwrap();
    let loud = vec![50.0; 2 * 4];
    let raw = m.decode_values(&loud).unwrap();
    let clamped = m.decode(&loud).unwrap();
    assert_eq!(clamped.domain(), PhaseDomain::Normalized);
    assert!(clamped.values().iter().all(|v| (0.0..1.0).contains(v)));
    for (r, c) in raw.iter().zip(clamped.values()) {
        if (0.0..1.0 - 1.0 / (1u64 << 24) as f64).contains(r) {
            assert_eq!(r, c);
        }
    }
    assert!(m.encode(&PhaseShiftMatrix::zeros(8, PhaseDomain::Normalized)).is_err());
}
