//! Poses, rigid transforms, Gaussian containers and the lidar scan data model.
//!
//! Rotation convention: roll about x, pitch about y, yaw about z, composed as
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Vehicle frames are x forward, y left,
//! z up.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid can land on exactly 2pi after rounding
    if r <= -PI {
        r += two_pi;
    }
    r
}

/// A 6-DOF pose: translation in meters, Euler angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose6D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6D {
    /// Builds a pose, wrapping the angles. Fails on non-finite input.
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        let p = Pose6D {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        };
        if !p.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose {p:?}")));
        }
        Ok(Pose6D {
            roll: wrap_angle(roll),
            pitch: wrap_angle(pitch),
            yaw: wrap_angle(yaw),
            ..p
        })
    }

    pub fn zero() -> Self {
        Pose6D::default()
    }

    /// `[x, y, z, roll, pitch, yaw]`
    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    /// Reads the first six entries of `v` without wrapping.
    pub fn from_slice(v: &[f64]) -> Self {
        Pose6D {
            x: v[0],
            y: v[1],
            z: v[2],
            roll: v[3],
            pitch: v[4],
            yaw: v[5],
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.as_array())
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_from_euler(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`rotation_from_euler`], returning `(roll, pitch, yaw)`.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

/// Builds the homogeneous transform of a pose.
pub fn pose_to_transform(p: &Pose6D) -> Result<HomTransform> {
    if !p.as_array().iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("non-finite pose {p:?}")));
    }
    Ok(HomTransform::from_parts(
        rotation_from_euler(p.roll, p.pitch, p.yaw),
        p.translation(),
    ))
}

/// A rigid 4x4 homogeneous transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomTransform(Matrix4<f64>);

const ORTHONORMAL_TOL: f64 = 1e-9;

impl HomTransform {
    pub fn identity() -> Self {
        HomTransform(Matrix4::identity())
    }

    /// Validates the bottom row and the rotation block.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::invalid("transform bottom row must be [0 0 0 1]"));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation block is not orthonormal (max |RtR - I| = {err:.3e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation block has determinant {det}, expected +1"
            )));
        }
        Ok(HomTransform(m))
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        HomTransform(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into()
    }

    /// Rigid inverse `[R^T, -R^T t]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        HomTransform::from_parts(rt, -(rt * self.translation()))
    }

    /// Converts back to a pose with angles in `(-pi, pi]`.
    pub fn to_pose(&self) -> Pose6D {
        let (roll, pitch, yaw) = euler_from_rotation(&self.rotation());
        let t = self.translation();
        Pose6D {
            x: t.x,
            y: t.y,
            z: t.z,
            roll,
            pitch,
            yaw,
        }
    }

    pub fn transform_point(&self, p: &LidarPoint) -> LidarPoint {
        LidarPoint::from_xyz(self.apply(&p.xyz()))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }
}

impl Mul for HomTransform {
    type Output = HomTransform;

    fn mul(self, rhs: HomTransform) -> HomTransform {
        HomTransform::from_parts(
            self.rotation() * rhs.rotation(),
            self.rotation() * rhs.translation() + self.translation(),
        )
    }
}

/// Free-function form of [`HomTransform::transform_point`].
pub fn transform_point(t: &HomTransform, p: &LidarPoint) -> LidarPoint {
    t.transform_point(p)
}

/// Mean and covariance of a multivariate Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl GaussianState {
    /// Checks dimensions, finiteness, symmetry and a non-negative diagonal.
    /// Full positive semi-definiteness is checked when the covariance is factored.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("zero-dimensional Gaussian"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "mean has dimension {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            if cov[(i, i)] < 0.0 {
                return Err(Error::invalid(format!(
                    "negative variance {} at index {i}",
                    cov[(i, i)]
                )));
            }
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GaussianState { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A homogeneous lidar point `[x, y, z, 1]` in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint(Vector4<f64>);

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        LidarPoint(Vector4::new(x, y, z, 1.0))
    }

    pub fn from_xyz(p: Vector3<f64>) -> Self {
        LidarPoint::new(p.x, p.y, p.z)
    }

    pub fn homogeneous(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn xyz(&self) -> Vector3<f64> {
        self.0.xyz()
    }
}

/// Points sharing one timestamp (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct LidarPacket {
    points: Vec<LidarPoint>,
    timestamp: f64,
}

impl LidarPacket {
    pub fn new(points: Vec<LidarPoint>, timestamp: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("lidar packet has no points"));
        }
        if !timestamp.is_finite() {
            return Err(Error::invalid("non-finite packet timestamp"));
        }
        if !points.iter().all(|p| p.0.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("lidar packet has non-finite points"));
        }
        Ok(LidarPacket { points, timestamp })
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// One lidar revolution: packets with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LidarScan {
    packets: Vec<LidarPacket>,
}

impl LidarScan {
    pub fn new(packets: Vec<LidarPacket>) -> Result<Self> {
        check_strictly_increasing(packets.iter().map(|p| p.timestamp), "packet")?;
        Ok(LidarScan { packets })
    }

    pub fn packets(&self) -> &[LidarPacket] {
        &self.packets
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.packets.iter().map(|p| p.timestamp).collect()
    }

    pub fn num_points(&self) -> usize {
        self.packets.iter().map(|p| p.points.len()).sum()
    }
}

pub(crate) fn check_strictly_increasing(
    ts: impl IntoIterator<Item = f64>,
    what: &str,
) -> Result<()> {
    let mut prev: Option<f64> = None;
    for (i, t) in ts.into_iter().enumerate() {
        if let Some(p) = prev {
            if t <= p {
                return Err(Error::invalid(format!(
                    "{what} timestamps not strictly increasing at index {i} ({t} after {p})"
                )));
            }
        }
        prev = Some(t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-1.5 * PI) - FRAC_PI_2).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn zero_pose_is_exact_identity() {
        let t = pose_to_transform(&Pose6D::zero()).unwrap();
        assert_eq!(*t.matrix(), Matrix4::identity());
    }

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let t =
            pose_to_transform(&Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2).unwrap()).unwrap();
        let p = t.transform_point(&LidarPoint::new(1.0, 0.0, 0.0));
        assert!((p.xyz() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(p.homogeneous()[3], 1.0);
    }

    #[test]
    fn translation_only() {
        let t = pose_to_transform(&Pose6D::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(t.rotation(), Matrix3::identity());
        assert_eq!(t.translation(), Vector3::new(1.0, 2.0, 3.0));
        let p = transform_point(
            &pose_to_transform(&Pose6D::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap()).unwrap(),
            &LidarPoint::new(0.0, 0.0, 0.0),
        );
        assert_eq!(p, LidarPoint::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn non_finite_pose_rejected() {
        assert!(Pose6D::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        let bad = Pose6D {
            yaw: f64::INFINITY,
            ..Pose6D::zero()
        };
        assert!(matches!(
            pose_to_transform(&bad),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn euler_round_trip() {
        let p = Pose6D::new(0.3, -1.0, 2.0, 0.2, -0.4, 2.9).unwrap();
        let q = pose_to_transform(&p).unwrap().to_pose();
        for (a, b) in p.as_array().iter().zip(q.as_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_matrix_validation() {
        let mut m = Matrix4::identity();
        m[(0, 1)] = 0.1;
        assert!(HomTransform::from_matrix(m).is_err());
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1e-3;
        assert!(HomTransform::from_matrix(m).is_err());
        let mut m = Matrix4::identity();
        m[(2, 2)] = -1.0;
        m[(1, 1)] = -1.0;
        m[(0, 0)] = -1.0;
        assert!(HomTransform::from_matrix(m).is_err());
        assert!(HomTransform::from_matrix(Matrix4::identity()).is_ok());
    }

    #[test]
    fn scan_requires_increasing_timestamps() {
        let pk = |t| LidarPacket::new(vec![LidarPoint::new(1.0, 0.0, 0.0)], t).unwrap();
        assert!(LidarScan::new(vec![pk(0.0), pk(0.1)]).is_ok());
        assert!(LidarScan::new(vec![pk(0.1), pk(0.1)]).is_err());
        assert!(LidarPacket::new(vec![], 0.0).is_err());
    }

    #[test]
    fn gaussian_validation() {
        let ok = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2));
        assert!(ok.is_ok());
        assert!(GaussianState::new(DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
        let mut c = DMatrix::identity(2, 2);
        c[(0, 1)] = 0.5;
        assert!(GaussianState::new(DVector::zeros(2), c).is_err());
    }
}
