//! Equidistant fisheye projection and uncertainty-carrying projection of the
//! corrected sigma set.
//!
//! ```text
//! a = x / z,  b = y / z,  r = sqrt(a^2 + b^2),  theta = atan(r)
//! theta_d = theta (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)
//! x' = (theta_d / r) a,  y' = (theta_d / r) b
//! u = fx (x' + e y') + cx,  v = fy y' + cy
//! ```

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::SigmaSetOmega;
use crate::error::{Error, Result};
use crate::geometry::HomTransform;
use crate::unscented::recover_moments;

/// Points closer to the camera plane than this (meters) are rejected.
pub const Z_MIN: f64 = 1e-6;

/// Below this normalized radius `theta_d / r` uses its series expansion.
pub const ON_AXIS_RADIUS: f64 = 1e-8;

/// Pinhole intrinsics plus four equidistant distortion coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub k: [f64; 4],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if !all.iter().chain(&self.k).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite intrinsics"));
        }
        Ok(())
    }

    /// Distorted incidence angle `theta_d(theta)`.
    pub fn distort(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.x < self.width as f64 && uv.y >= 0.0 && uv.y < self.height as f64
    }
}

/// Projects a camera-frame point (meters) to pixel coordinates.
pub fn project_point(p_cam: &Vector3<f64>, intr: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(p_cam.z > Z_MIN) {
        return Err(Error::BehindCamera { z: p_cam.z });
    }
    let a = p_cam.x / p_cam.z;
    let b = p_cam.y / p_cam.z;
    let r = a.hypot(b);
    let scale = if r < ON_AXIS_RADIUS {
        // theta_d / r = 1 + (k1 - 1/3) r^2 + O(r^4)
        1.0 + (intr.k[0] - 1.0 / 3.0) * r * r
    } else {
        intr.distort(r.atan()) / r
    };
    let xd = scale * a;
    let yd = scale * b;
    Ok(Vector2::new(
        intr.fx * (xd + intr.skew * yd) + intr.cx,
        intr.fy * yd + intr.cy,
    ))
}

/// Pixel Gaussian of one corrected point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub packet_index: usize,
    pub point_index: usize,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub in_frame: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProjectionOutput {
    pub points: Vec<ProjectedPoint>,
    /// Points with at least one sigma point behind the camera.
    pub dropped: usize,
}

/// Projects every point of `omega` through `cam_from_ld` and the fisheye model,
/// recovering pixel moments with each packet's weights.
pub fn project_omega(
    omega: &SigmaSetOmega,
    cam_from_ld: &HomTransform,
    intr: &CameraIntrinsics,
) -> Result<ProjectionOutput> {
    intr.validate()?;
    let per_packet: Vec<(Vec<ProjectedPoint>, usize)> = omega
        .packets
        .par_iter()
        .map(|pk| {
            let mut pixels = Vec::with_capacity(pk.num_sigma());
            let mut out = Vec::new();
            let mut dropped = 0;
            'points: for (j, sigma) in pk.iter_points().enumerate() {
                pixels.clear();
                for z in sigma {
                    match project_point(&cam_from_ld.apply(z), intr) {
                        Ok(uv) => pixels.push(uv),
                        Err(_) => {
                            dropped += 1;
                            continue 'points;
                        }
                    }
                }
                let (mean, cov) = recover_moments(&pixels, &pk.weights);
                out.push(ProjectedPoint {
                    packet_index: pk.packet_index,
                    point_index: j,
                    mean,
                    cov,
                    in_frame: intr.contains(&mean),
                });
            }
            (out, dropped)
        })
        .collect();
    let mut result = ProjectionOutput::default();
    for (p, d) in per_packet {
        result.points.extend(p);
        result.dropped += d;
    }
    Ok(result)
}

/// 0.95 quantile of the chi-square distribution with 2 degrees of freedom.
pub const CHI2_2DOF_95: f64 = 5.991_464_547_107_979;

/// 0.95 quantile of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3DOF_95: f64 = 7.814_727_903_251_178;

/// A 95% confidence ellipse: semi-axes in pixels, orientation of the major
/// axis in radians measured from +u.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub orientation: f64,
}

/// Confidence ellipse covering 95% of a 2-D Gaussian.
pub fn ellipse_95(cov: &Matrix2<f64>) -> Ellipse {
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = (mid + rad).max(0.0);
    let l2 = (mid - rad).max(0.0);
    let orientation = if rad == 0.0 {
        0.0
    } else {
        0.5 * (2.0 * b).atan2(a - c)
    };
    Ellipse {
        semi_major: (CHI2_2DOF_95 * l1).sqrt(),
        semi_minor: (CHI2_2DOF_95 * l2).sqrt(),
        orientation,
    }
}

/// A 95% confidence ellipsoid: semi-axes (descending) and the matching unit
/// axis directions as columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub semi_axes: Vector3<f64>,
    pub axes: Matrix3<f64>,
}

pub fn ellipsoid_95(cov: &Matrix3<f64>) -> Ellipsoid {
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut semi_axes = Vector3::zeros();
    let mut axes = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        semi_axes[k] = (CHI2_3DOF_95 * eig.eigenvalues[i].max(0.0)).sqrt();
        axes.set_column(k, &eig.eigenvectors.column(i));
    }
    Ellipsoid { semi_axes, axes }
}
