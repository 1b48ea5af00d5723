use kbae_core::channel::{generate_phase_dataset, ChannelConfig};
use kbae_core::dataset::{split_counts, HEADER_LEN};
use kbae_core::{Dataset, Error, PhaseDomain, PhaseShiftMatrix};
use proptest::prelude::*;

#[test]
fn file_round_trip_keeps_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.kbps");
    let set = Dataset::new(8, generate_phase_dataset(&ChannelConfig::new(8, 4), 12).unwrap()).unwrap();
    set.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.len(), 12);
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        HEADER_LEN + 12 * 64 * 4
    );
    for (a, b) in set.samples.iter().zip(&back.samples) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
}

#[test]
fn splits_are_disjoint_and_sized() {
    assert_eq!(split_counts(1000, &[10.0, 1.0, 1.0]).unwrap(), vec![834, 83, 83]);
    assert_eq!(split_counts(4500, &[8.0, 1.0]).unwrap(), vec![4000, 500]);
    let set = Dataset::new(4, generate_phase_dataset(&ChannelConfig::new(4, 1), 30).unwrap()).unwrap();
    let parts = set.split(&[2.0, 1.0]).unwrap();
    assert_eq!(parts[0].len() + parts[1].len(), 30);
    assert_eq!(parts[0].samples[..], set.samples[..20]);
    assert_eq!(parts[1].samples[..], set.samples[20..]);
}

#[test]
fn damaged_files_report_offsets() {
    let set = Dataset::new(2, vec![PhaseShiftMatrix::zeros(2, PhaseDomain::Normalized)]).unwrap();
    let bytes = set.to_bytes();
    assert!(matches!(
        Dataset::from_bytes(&bytes[..bytes.len() - 2]),
        Err(Error::Format { .. })
    ));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(
        Dataset::from_bytes(&bad),
        Err(Error::Format { offset: 4, .. })
    ));
    assert!(Dataset::new(2, vec![PhaseShiftMatrix::zeros(2, PhaseDomain::Raw)]).is_err());
}

proptest! {
    #[test]
    fn bytes_round_trip(values in prop::collection::vec(0.0f64..1.0, 9)) {
        let m = PhaseShiftMatrix::new(3, values, PhaseDomain::Normalized).unwrap();
        let set = Dataset::new(3, vec![m]).unwrap();
        let back = Dataset::from_bytes(&set.to_bytes()).unwrap();
        let again = Dataset::from_bytes(&back.to_bytes()).unwrap();
        prop_assert_eq!(&back, &again);
        prop_assert!(back.samples[0].values().iter().all(|v| (0.0..1.0).contains(v)));
    }
}
