use std::path::Path;

use skysentry::manager::Action;
use skysentry::runner::{run_with, FrameSource, PipelineConfig};

fn load(name: &str) -> PipelineConfig {
    PipelineConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

#[test]
fn default_flyby_stops_once_with_confident_fusion() {
    let cfg = load("default_oracle.json");
    let scenario = cfg.load_scenario().unwrap();
    let out = run_with(&cfg, &scenario, &FrameSource::Render, None).unwrap();
    let stops: Vec<_> = out.commands.iter().filter(|c| c.action == Action::Stop).collect();
    assert_eq!(stops.len(), 1, "{:?}", out.commands);
    assert_eq!(stops[0].posterior.map(|p| p[0] >= 0.9), Some(true));
    let m = &out.metrics;
    assert!(m.fused_accuracy.unwrap() >= 0.99, "{:?}", m.fused_accuracy);
    assert!(m.fused_accuracy.unwrap() > m.raw_accuracy.unwrap());
    for r in [m.near_rate, m.far_rate, m.precision, m.recall, m.average_precision] {
        assert!((0.0..=1.0).contains(&r.unwrap()));
    }
    assert_eq!(m.frames, scenario.frame_count());
}

#[test]
fn preset_reference_matches_shipped_file() {
    let mut by_file = load("default_oracle.json");
    by_file.seed = Some(9);
    let mut by_preset = by_file.clone();
    by_preset.scenario = "preset:default_flyby".into();
    let a = by_file.load_scenario().unwrap();
    let b = by_preset.load_scenario().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seed, 9);
}
