use std::io::BufReader;

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sr_gvf::features::encode_one_hot;
use sr_gvf::gridworld::GridMap;
use sr_gvf::gvf::{PredictorSlot, StepSize};
use sr_gvf::harness::ExperimentConfig;
use sr_gvf::replay::{synthetic_dataset, Dataset, SyntheticConfig};
use sr_gvf::signals::{read_specs, write_specs, SignalSampler};
use sr_gvf::srlearn::{Discount, SuccessorMatrix};

#[test]
fn bundled_map_round_trips_through_text() {
    let map = GridMap::dayan();
    let back = GridMap::load(&map.to_text()).unwrap();
    assert_eq!(back.content_hash(), map.content_hash());
    assert_eq!(back.state_count(), map.state_count());
    assert_eq!((back.start(), back.goal()), (map.start(), map.goal()));
}

#[test]
fn malformed_map_reports_position() {
    let err = GridMap::load("S..\n.?G\n\n>>v\n>>G\n").unwrap_err();
    assert!(matches!(err, sr_gvf::Error::Map { row: 1, col: 1, .. }), "{err}");
}

#[test]
fn learned_sr_snapshot_round_trips() {
    let map = GridMap::open(3, 3).unwrap();
    let n = map.state_count();
    let mut m = SuccessorMatrix::new(n, Discount::constant(0.9).unwrap(), 0.1).unwrap();
    for s in 0..n - 1 {
        m.update(&encode_one_hot(s, n).unwrap(), &encode_one_hot(s + 1, n).unwrap()).unwrap();
    }
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let back = SuccessorMatrix::read_csv(BufReader::new(&buf[..]), None).unwrap();
    assert_eq!(back.weights(), m.weights());
    assert_eq!(back.discount().nominal(), Some(0.9));
}

#[test]
fn predictor_slot_snapshot_round_trips() {
    let slot = PredictorSlot::new(3, 5, 17, StepSize::Constant(0.1), StepSize::Constant(0.2));
    let mut buf = Vec::new();
    slot.write_csv(&mut buf).unwrap();
    let back = PredictorSlot::read_csv(BufReader::new(&buf[..]), StepSize::Constant(0.1), StepSize::Constant(0.2)).unwrap();
    assert_eq!((back.signal_id, back.activation_time), (3, 17));
    assert_eq!(back.direct.weights(), slot.direct.weights());
}

#[test]
fn signal_specs_round_trip_as_jsonl() {
    let map = GridMap::dayan();
    let specs = SignalSampler::for_map(&map).sample_many(&mut ChaCha8Rng::seed_from_u64(9), 25);
    let mut buf = Vec::new();
    write_specs(&specs, &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 25);
    let back = read_specs(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, specs);
}

#[test]
fn dataset_csv_round_trips() {
    let ds = synthetic_dataset(&SyntheticConfig { steps: 300, ..SyntheticConfig::default() }).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = Dataset::ingest(&buf[..]).unwrap();
    assert_eq!(back.names(), ds.names());
    for name in ds.names() {
        for (a, b) in back.channel(name).unwrap().iter().zip(ds.channel(name).unwrap()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn dataset_rejects_bad_rows() {
    let text = "t,a\n0,1.0\n0.033,oops\n";
    let err = Dataset::ingest(text.as_bytes()).unwrap_err();
    assert!(matches!(err, sr_gvf::Error::Parse { row: 3, .. }), "{err}");
}

#[test]
fn config_file_round_trips_and_hash_is_stable() {
    let cfg = ExperimentConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_ne!(ExperimentConfig::smoke().hash(), cfg.hash());
}
