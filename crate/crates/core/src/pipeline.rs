//! End-to-end processing of one scan: ego-motion, correction and optional
//! projection into a configured camera.

use std::collections::HashMap;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::project_omega;
use crate::consistency::{nees_fixed, NeesRecord, NeesSummary};
use crate::correction::correct_scan;
use crate::ego_motion::{estimate_ego_motion, KinematicMeasurement};
use crate::error::{Error, Result};
use crate::geometry::LidarScan;
use crate::io::{AugmentedPoint, CalibrationConfig, PixelGaussian, TruthRecord};

/// The instant the scan is corrected to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefTime {
    /// Timestamp of the final packet.
    LastPacket,
    /// A camera exposure time.
    Image(f64),
    Seconds(f64),
}

impl RefTime {
    pub fn resolve(&self, scan: &LidarScan) -> Result<f64> {
        match *self {
            RefTime::LastPacket => scan
                .packets()
                .last()
                .map(|p| p.timestamp())
                .ok_or_else(|| Error::invalid("scan has no packets")),
            RefTime::Image(t) | RefTime::Seconds(t) if t.is_finite() => Ok(t),
            _ => Err(Error::invalid("non-finite reference time")),
        }
    }
}

impl FromStr for RefTime {
    type Err = Error;

    /// Accepts `last-packet`, `image:<seconds>` or `<seconds>`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::invalid(format!("invalid reference time `{s}`")))
        };
        match s {
            "last-packet" => Ok(RefTime::LastPacket),
            _ => match s.strip_prefix("image:") {
                Some(v) => num(v).map(RefTime::Image),
                None => num(s).map(RefTime::Seconds),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub t_ref: RefTime,
    pub point_covariance: bool,
    /// Camera id to project into, if any.
    pub camera: Option<u32>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            t_ref: RefTime::LastPacket,
            point_covariance: true,
            camera: None,
        }
    }
}

/// Result of [`process_scan`]. Records carry each point's packet timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedScan {
    pub t_ref: f64,
    pub points: Vec<AugmentedPoint>,
    /// Points dropped from projection because a sigma point fell behind the camera.
    pub dropped: usize,
}

pub fn process_scan(
    scan: &LidarScan,
    measurements: &[KinematicMeasurement],
    cfg: &CalibrationConfig,
    opts: &PipelineOptions,
) -> Result<ProcessedScan> {
    let camera = match opts.camera {
        Some(id) => Some(
            cfg.camera(id)
                .ok_or_else(|| Error::invalid(format!("no camera with id {id}")))?,
        ),
        None => None,
    };
    let t_ref = opts.t_ref.resolve(scan)?;
    let ego = estimate_ego_motion(
        &scan.timestamps(),
        measurements,
        t_ref,
        &cfg.noise.noise_config()?,
        &cfg.ut,
        &cfg.noise.ego_options(),
    )?;
    let corrected = correct_scan(scan, &ego, &cfg.veh_from_ld, &cfg.ut, opts.point_covariance)?;
    let packets = scan.packets();
    let mut points: Vec<AugmentedPoint> = corrected
        .points
        .iter()
        .map(|p| AugmentedPoint {
            packet_index: p.packet_index,
            point_index: p.point_index,
            timestamp: packets[p.packet_index].timestamp(),
            position: p.mean,
            position_cov: p.cov,
            pixel: None,
        })
        .collect();
    let mut dropped = 0;
    if let Some(cam) = camera {
        let projected = project_omega(&corrected.omega, &cam.cam_from_ld, &cam.intrinsics)?;
        dropped = projected.dropped;
        // Both outputs are packet-major and point-ordered; merge by index.
        let mut next = 0;
        for px in projected.points {
            while (points[next].packet_index, points[next].point_index)
                != (px.packet_index, px.point_index)
            {
                next += 1;
            }
            points[next].pixel = Some(PixelGaussian {
                camera: cam.id,
                mean: px.mean,
                cov: px.cov,
            });
        }
    }
    Ok(ProcessedScan {
        t_ref,
        points,
        dropped,
    })
}

/// Which part of an augmented record is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Corrected 3-D positions, 3 degrees of freedom.
    #[serde(rename = "3d")]
    Position,
    /// Pixel coordinates, 2 degrees of freedom.
    #[serde(rename = "2d")]
    Pixel,
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Position => 3,
            Space::Pixel => 2,
        }
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3d" => Ok(Space::Position),
            "2d" => Ok(Space::Pixel),
            _ => Err(Error::invalid(format!(
                "unknown space `{s}` (expected 3d or 2d)"
            ))),
        }
    }
}

/// NEES of an augmented cloud against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudScore {
    pub space: Space,
    pub matched: usize,
    /// Truth records without a matching estimate carrying the scored Gaussian.
    pub missing: usize,
    pub summary: NeesSummary,
}

/// Scores every truth record against the record with the same
/// `(packet, point)` index.
pub fn score_cloud(
    cloud: &[AugmentedPoint],
    truth: &[TruthRecord],
    space: Space,
) -> Result<CloudScore> {
    let index: HashMap<(usize, usize), &AugmentedPoint> = cloud
        .iter()
        .map(|p| ((p.packet_index, p.point_index), p))
        .collect();
    let mut records = Vec::new();
    let mut missing = 0;
    for t in truth {
        if t.value.len() != space.dim() {
            return Err(Error::invalid(
                "truth dimension does not match the scored space",
            ));
        }
        let p = index.get(&(t.packet_index, t.point_index));
        let eps = match (space, p) {
            (
                Space::Position,
                Some(AugmentedPoint {
                    position,
                    position_cov: Some(c),
                    ..
                }),
            ) => nees_fixed(position, c, &Vector3::from_column_slice(&t.value))?,
            (
                Space::Pixel,
                Some(AugmentedPoint {
                    pixel: Some(px), ..
                }),
            ) => nees_fixed(&px.mean, &px.cov, &Vector2::from_column_slice(&t.value))?,
            _ => {
                missing += 1;
                continue;
            }
        };
        records.push(NeesRecord::new(eps, space.dim())?);
    }
    if records.is_empty() {
        return Err(Error::invalid("no truth record matches a scored estimate"));
    }
    Ok(CloudScore {
        space,
        matched: records.len(),
        missing,
        summary: NeesSummary::from_records(&records)?,
    })
}
