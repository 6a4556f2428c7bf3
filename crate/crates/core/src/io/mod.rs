//! File formats: configuration, scans, measurements, ground truth, the
//! augmented cloud and JSON reports.

mod cloud;
mod config;
mod records;

pub use cloud::{
    cloud_to_bytes, cloud_to_string, parse_cloud, parse_cloud_bytes, read_augmented_cloud,
    write_augmented_cloud, AugmentedPoint, PixelGaussian, MAGIC, RECORD_BYTES,
};
pub use config::{
    config_to_string, load_config, parse_config, save_config, CalibrationConfig, CameraConfig,
    NoiseSpec,
};
pub use records::{
    measurements_to_string, parse_measurements, parse_scan, parse_truth, read_measurements,
    read_scan, read_truth, scan_to_string, truth_to_string, write_measurements, write_scan,
    TruthRecord,
};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline. Output is deterministic for
/// a given value.
pub fn report_to_string<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_to_string(report)).map_err(|e| Error::io(path, e))
}
