//! TOML calibration and noise configuration.
//!
//! ```toml
//! veh_from_ld = { pose = [1.0, 0.0, 1.8, 0.0, 0.0, 0.0] }
//!
//! [noise]            # all optional
//! v_std = [0.05, 0.05, 0.05]     # m/s
//! w_std_deg = [2.0, 2.0, 2.0]    # deg/s
//! sigma_t = 0.0006               # s
//! linear_x_only = false
//! ref_variance = 1e-12
//!
//! [ut]               # optional, alpha = 1, kappa = 0, beta = 2
//!
//! [[camera]]
//! id = 0
//! name = "front"
//! cam_from_ld = { matrix = [[0, -1, 0, 0], [0, 0, -1, -0.3], [1, 0, 0, -0.3], [0, 0, 0, 1]] }
//! intrinsics = { fx = 1115.0, fy = 1115.0, cx = 960.0, cy = 604.0, k = [-0.02, 0.004, 0, 0], width = 1920, height = 1208 }
//! ```
//!
//! Transforms are given either as a `pose` `[x, y, z, roll, pitch, yaw]`
//! (radians) or as a full 4x4 `matrix`, which is validated as rigid.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::ego_motion::{EgoMotionOptions, NoiseConfig};
use crate::error::{Error, Result};
use crate::geometry::{pose_to_transform, HomTransform, Pose6D};
use crate::unscented::UtParams;

/// Noise settings as written in the file (standard deviations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub v_std: [f64; 3],
    pub w_std_deg: [f64; 3],
    pub sigma_t: f64,
    pub linear_x_only: bool,
    pub ref_variance: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            v_std: [0.05; 3],
            w_std_deg: [2.0; 3],
            sigma_t: 0.0006,
            linear_x_only: false,
            ref_variance: EgoMotionOptions::default().ref_variance,
        }
    }
}

impl NoiseSpec {
    pub fn noise_config(&self) -> Result<NoiseConfig> {
        NoiseConfig::from_std(
            self.v_std,
            self.w_std_deg.map(f64::to_radians),
            self.sigma_t,
        )
    }

    pub fn ego_options(&self) -> EgoMotionOptions {
        EgoMotionOptions {
            ref_variance: self.ref_variance,
            linear_x_only: self.linear_x_only,
        }
    }
}

/// One camera: intrinsics plus the lidar-to-camera transform.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraConfig {
    pub id: u32,
    pub name: Option<String>,
    pub intrinsics: CameraIntrinsics,
    pub cam_from_ld: HomTransform,
}

/// Validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub veh_from_ld: HomTransform,
    pub cameras: Vec<CameraConfig>,
    pub noise: NoiseSpec,
    pub ut: UtParams,
}

impl CalibrationConfig {
    pub fn camera(&self, id: u32) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<[[f64; 4]; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    cam_from_ld: TransformSpec,
    intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    veh_from_ld: TransformSpec,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    ut: UtParams,
    #[serde(default, rename = "camera")]
    cameras: Vec<CameraFile>,
}

fn config_err(path: &Path, field: impl Into<String>, message: impl ToString) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        field: field.into(),
        message: message.to_string(),
    }
}

fn transform(spec: &TransformSpec, path: &Path, field: &str) -> Result<HomTransform> {
    let t = match (spec.pose, spec.matrix) {
        (Some(p), None) => pose_to_transform(&Pose6D::from_slice(&p)),
        (None, Some(m)) => HomTransform::from_matrix(Matrix4::from_fn(|r, c| m[r][c])),
        _ => {
            return Err(config_err(
                path,
                field,
                "exactly one of `pose` or `matrix` is required",
            ))
        }
    };
    t.map_err(|e| config_err(path, field, e))
}

fn matrix_spec(t: &HomTransform) -> TransformSpec {
    let m = t.matrix();
    TransformSpec {
        pose: None,
        matrix: Some(std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))),
    }
}

/// Parses and validates a configuration document. `path` is used in errors.
pub fn parse_config(text: &str, path: &Path) -> Result<CalibrationConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = message
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "<document>".into());
        config_err(path, field, message)
    })?;
    let veh_from_ld = transform(&file.veh_from_ld, path, "veh_from_ld")?;
    file.noise
        .noise_config()
        .map_err(|e| config_err(path, "noise", e))?;
    if !(file.noise.ref_variance >= 0.0 && file.noise.ref_variance.is_finite()) {
        return Err(config_err(
            path,
            "noise.ref_variance",
            "must be finite and >= 0",
        ));
    }
    file.ut.validate().map_err(|e| config_err(path, "ut", e))?;
    let mut cameras = Vec::with_capacity(file.cameras.len());
    for (i, c) in file.cameras.iter().enumerate() {
        let field = format!("camera[{i}]");
        if cameras.iter().any(|k: &CameraConfig| k.id == c.id) {
            return Err(config_err(
                path,
                format!("{field}.id"),
                "duplicate camera id",
            ));
        }
        c.intrinsics
            .validate()
            .map_err(|e| config_err(path, format!("{field}.intrinsics"), e))?;
        cameras.push(CameraConfig {
            id: c.id,
            name: c.name.clone(),
            intrinsics: c.intrinsics,
            cam_from_ld: transform(&c.cam_from_ld, path, &format!("{field}.cam_from_ld"))?,
        });
    }
    Ok(CalibrationConfig {
        veh_from_ld,
        cameras,
        noise: file.noise,
        ut: file.ut,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<CalibrationConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, "<file>", e))?;
    parse_config(&text, path)
}

/// Serializes a configuration; transforms are written as matrices.
pub fn config_to_string(cfg: &CalibrationConfig) -> String {
    let file = ConfigFile {
        veh_from_ld: matrix_spec(&cfg.veh_from_ld),
        noise: cfg.noise.clone(),
        ut: cfg.ut,
        cameras: cfg
            .cameras
            .iter()
            .map(|c| CameraFile {
                id: c.id,
                name: c.name.clone(),
                cam_from_ld: matrix_spec(&c.cam_from_ld),
                intrinsics: c.intrinsics,
            })
            .collect(),
    };
    toml::to_string(&file).expect("configuration serializes")
}

pub fn save_config(cfg: &CalibrationConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, config_to_string(cfg)).map_err(|e| Error::io(path, e))
}
