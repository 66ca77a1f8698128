use std::path::Path;

use msenc::config::{TrainSettings, TRAIN_PRESETS};
use serde_json::{Map, Value};

fn golden(name: &str) -> TrainSettings {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn presets_match_golden_files() {
    for name in ["phase1", "phase2"] {
        assert_eq!(TrainSettings::preset(name).unwrap(), golden(name), "{name}");
    }
}

#[test]
fn golden_files_load_as_configs() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/phase2.json");
    let s = TrainSettings::resolve(Some(&path), Map::new()).unwrap();
    assert_eq!(s, golden("phase2"));
    let cfg = s.train_config().unwrap();
    assert_eq!(cfg.batch_size, 192);
}

#[test]
fn desk_preset_scales_phase1() {
    let p1 = TrainSettings::preset("phase1").unwrap();
    let desk = TrainSettings::preset("phase1-desk").unwrap();
    assert_eq!(desk.batch_size, p1.batch_size);
    assert_eq!(desk.warmup_steps * 20, desk.total_steps);
    assert!((desk.min_lr * 20.0 / desk.peak_lr - 1.0).abs() < 1e-12);
    assert_eq!(desk.latent_dim, 32);
    assert_eq!(TRAIN_PRESETS.len(), 3);
}

#[test]
fn bad_values_are_rejected_on_validation() {
    let mut overrides = Map::new();
    overrides.insert("warmup_steps".into(), Value::from(6000));
    let s = TrainSettings::resolve(None, overrides).unwrap();
    assert!(s.train_config().is_err());
}
