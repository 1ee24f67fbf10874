#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigcal::io::{write_measurement_csv, Units};
use rigcal::sim::{make_scene, simulate_measurements, GroundTruthScene, NoiseModel};
use rigcal::MeasurementSet;

pub fn rigcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes one CSV per measurement set plus `session.json` into `dir`.
pub fn write_session(dir: &Path, sets: &[MeasurementSet], units: Units) -> PathBuf {
    let mut refs = Vec::new();
    for m in sets {
        let name = format!("{}.csv", m.tool());
        write_measurement_csv(&dir.join(&name), m, units).unwrap();
        refs.push(serde_json::json!({ "tool": m.tool().as_str(), "path": name }));
    }
    let units = match units {
        Units::Meters => "m",
        Units::Millimeters => "mm",
    };
    let session = serde_json::json!({ "units": units, "measurements": refs });
    let path = dir.join("session.json");
    std::fs::write(&path, serde_json::to_string_pretty(&session).unwrap()).unwrap();
    path
}

pub fn noiseless_fixture(seed: u64, n_tools: usize) -> (GroundTruthScene, Vec<MeasurementSet>) {
    let scene = make_scene(seed, n_tools).unwrap();
    let sets = simulate_measurements(&scene, &NoiseModel::none()).unwrap();
    (scene, sets)
}
