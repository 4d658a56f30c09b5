use std::fs;

use memtrack::store::{self, ReportFormat};
use memtrack::StoreError;
use memtrack_core::memnet::{Masks, NetworkParams};
use memtrack_core::metrics::{self, MetricsReport};
use memtrack_core::models::ScenarioConfig;
use memtrack_core::simulator::generate_dataset;
use memtrack_core::filter::{self, InitConfig};
use memtrack_core::models::ModelConfig;

fn small_config() -> ScenarioConfig {
    ScenarioConfig { steps: 12, cases: 10, train_cases: 8, seed: 42, ..Default::default() }
}

fn bits(p: &NetworkParams) -> Vec<u64> {
    p.norm
        .mean
        .iter()
        .chain(&p.norm.scale)
        .chain(p.tensors.iter().flat_map(|t| t.data()))
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mtds");
    let ds = generate_dataset(&small_config()).unwrap();
    store::write_dataset(&path, &ds).unwrap();
    let back = store::read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in ds.cases.iter().zip(&back.cases) {
        for (x, y) in a.frames.iter().zip(&b.frames) {
            let xb: Vec<u64> = x.points().iter().flatten().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.points().iter().flatten().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }
    // writing the re-read dataset reproduces the file byte for byte
    let again = dir.path().join("e.mtds");
    store::write_dataset(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn header_only_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mtds");
    let ds = generate_dataset(&small_config()).unwrap();
    store::write_dataset(&path, &ds).unwrap();
    // chop the body off: the header is still readable, the dataset is not
    let bytes = fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    fs::write(&path, &bytes[..24 + header_len]).unwrap();
    let h = store::read_dataset_header(&path).unwrap();
    assert_eq!(h.config, small_config());
    assert_eq!((h.cases, h.steps, h.version), (10, 12, store::DATASET_VERSION));
    assert!(matches!(store::read_dataset(&path), Err(StoreError::ChecksumMismatch(_))));
}

#[test]
fn corrupted_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mtds");
    store::write_dataset(&path, &generate_dataset(&small_config()).unwrap()).unwrap();
    let good = fs::read(&path).unwrap();

    fs::write(&path, &good[..good.len() - 9]).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(StoreError::ChecksumMismatch(_))), "truncated");

    fs::write(&path, &good[..10]).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(StoreError::ChecksumMismatch(_))), "truncated prefix");

    let mut flipped = good.clone();
    let i = good.len() - 100;
    flipped[i] ^= 0x10;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(StoreError::ChecksumMismatch(_))), "bit flip");

    let mut header_edit = good.clone();
    header_edit[30] ^= 0x01;
    fs::write(&path, &header_edit).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(StoreError::ChecksumMismatch(_))), "header edit");

    let mut version = good.clone();
    version[4..8].copy_from_slice(&(store::DATASET_VERSION + 1).to_le_bytes());
    fs::write(&path, &version).unwrap();
    let err = store::read_dataset(&path).unwrap_err();
    assert!(matches!(err, StoreError::VersionMismatch(_)), "{err}");
    assert!(err.to_string().contains("version"));

    let mut magic = good;
    magic[0] = b'X';
    fs::write(&path, &magic).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(StoreError::Malformed(_))));

    assert!(matches!(store::read_dataset(&dir.path().join("missing")), Err(StoreError::Io { .. })));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mtck");
    let p = NetworkParams::init(8, 3).perturbed(4, 0.3);
    store::write_checkpoint(&path, &p, "deadbeef").unwrap();
    let back = store::read_checkpoint(&path, Some(8)).unwrap();
    assert_eq!(bits(&back.params), bits(&p));
    assert_eq!(back.params, p);
    assert_eq!(back.config_digest, "deadbeef");
}

#[test]
fn checkpoint_memory_dim_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mtck");
    store::write_checkpoint(&path, &NetworkParams::init(8, 3), "0").unwrap();
    assert!(matches!(store::read_checkpoint(&path, Some(16)), Err(StoreError::VersionMismatch(_))));
    assert!(store::read_checkpoint(&path, None).is_ok());
}

#[test]
fn checkpoint_records_masks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mtck");
    let masks = Masks { mub: false, jeb: true, jub: false };
    store::write_checkpoint(&path, &NetworkParams::init(4, 1).with_masks(masks), "0").unwrap();
    assert_eq!(store::read_checkpoint(&path, None).unwrap().params.masks, masks);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mtck");
    store::write_checkpoint(&path, &NetworkParams::init(4, 1), "0").unwrap();
    let good = fs::read(&path).unwrap();
    fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(matches!(store::read_checkpoint(&path, None), Err(StoreError::ChecksumMismatch(_))));
    let mut flipped = good.clone();
    *flipped.last_mut().unwrap() ^= 0x80;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(store::read_checkpoint(&path, None), Err(StoreError::ChecksumMismatch(_))));
    let mut version = good;
    version[4] = 9;
    fs::write(&path, &version).unwrap();
    assert!(matches!(store::read_checkpoint(&path, None), Err(StoreError::VersionMismatch(_))));
    // a dataset is not a checkpoint
    let ds = dir.path().join("d.mtds");
    store::write_dataset(&ds, &generate_dataset(&small_config()).unwrap()).unwrap();
    assert!(matches!(store::read_checkpoint(&ds, None), Err(StoreError::Malformed(_))));
}

fn sample_report() -> MetricsReport {
    let ds = generate_dataset(&small_config()).unwrap();
    let model = ModelConfig::default().build().unwrap();
    let cases: Vec<_> = ds.test_cases().collect();
    let runs: Vec<_> =
        cases.iter().map(|c| filter::run_baseline(&c.frames, &model, &InitConfig::default()).unwrap()).collect();
    let truths: Vec<_> = cases.iter().map(|c| &c.truth).collect();
    metrics::evaluate_run(&truths, &runs).unwrap()
}

#[test]
fn report_csv_rows_and_precision() {
    let r = sample_report();
    let csv = store::report_csv(&r);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,step,rmse,iou,gwd"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * (12 - 1));
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(&first[..2], &["0", "1"]);
    assert_eq!(first[2].parse::<f64>().unwrap(), r.cases[0].position_error[0]);
    assert_eq!(first[3].parse::<f64>().unwrap(), r.cases[0].iou[0]);
    // 17 significant digits: one before the point, sixteen after
    assert_eq!(first[4].split('e').next().unwrap().len(), 18);
}

#[test]
fn empty_report_is_header_only() {
    let empty = MetricsReport {
        cases: vec![],
        mean_squared_error: 0.0,
        rmse: 0.0,
        mean_iou: 0.0,
        mean_gwd: 0.0,
        peak_position_error: 0.0,
        min_iou: 0.0,
        max_gwd: 0.0,
    };
    assert_eq!(store::report_csv(&empty), "case,step,rmse,iou,gwd\n");
}

#[test]
fn report_json_parses_back_exactly() {
    let r = sample_report();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    store::write_report(&r, &path, ReportFormat::Json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for (key, want) in [
        ("mean_squared_error", r.mean_squared_error),
        ("rmse", r.rmse),
        ("mean_iou", r.mean_iou),
        ("mean_gwd", r.mean_gwd),
        ("peak_position_error", r.peak_position_error),
        ("min_iou", r.min_iou),
        ("max_gwd", r.max_gwd),
    ] {
        assert_eq!(v[key].as_f64().unwrap().to_bits(), want.to_bits(), "{key}");
    }
    assert_eq!(v["cases"], 2);
    assert_eq!(v["steps"], 11);

    let both = store::comparison_json(&[("baseline", &r), ("memnet", &r)]);
    let v: serde_json::Value = serde_json::from_str(&both).unwrap();
    assert_eq!(v["memnet"]["rmse"].as_f64().unwrap(), r.rmse);
    let table = store::comparison_csv(&[("baseline", &r), ("memnet", &r)]);
    assert_eq!(table.lines().count(), 3);
}
