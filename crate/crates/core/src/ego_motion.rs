//! Gaussian delta-pose estimation at every packet timestamp.
//!
//! The estimate for packet `i` is the pose of the vehicle frame at `t_i`
//! expressed in the vehicle frame at `t_ref`, so `pose_to_transform` of it maps
//! coordinates observed at `t_i` into coordinates at `t_ref`.
//!
//! Starting from `N(0, Sigma_ref)` at `t_ref`, two chains walk outwards: a
//! backward chain over packets with `t_i < t_ref` (nearest first) and a forward
//! chain over packets with `t_i >= t_ref`. Every step builds the 14-d augmented
//! state `[pose, v, w, t_from, t_to]`, decomposes it into sigma points, pushes
//! them through the kinematic model and recovers the next pose Gaussian.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{check_strictly_increasing, wrap_angle, GaussianState, Pose6D};
use crate::unscented::{utd, utr, UtParams};

/// Dimension of the augmented state.
pub const AUG_DIM: usize = 14;

/// Below this yaw rate (rad/s) the straight-line limit of CTRV is used.
pub const TURN_RATE_EPS: f64 = 1e-6;

/// Body-frame velocity reading. `v` in m/s (x forward), `w` in rad/s as
/// roll, pitch and yaw rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicMeasurement {
    pub timestamp: f64,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl KinematicMeasurement {
    pub fn new(timestamp: f64, v: Vector3<f64>, w: Vector3<f64>) -> Result<Self> {
        if !timestamp.is_finite() || !v.iter().chain(w.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite kinematic measurement"));
        }
        Ok(KinematicMeasurement { timestamp, v, w })
    }
}

/// Measurement noise and timestamp jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// (m/s)^2
    pub cov_v: Matrix3<f64>,
    /// (rad/s)^2
    pub cov_w: Matrix3<f64>,
    /// seconds
    pub sigma_t: f64,
}

impl NoiseConfig {
    /// Diagonal covariances from per-axis standard deviations.
    pub fn from_std(v_std: [f64; 3], w_std: [f64; 3], sigma_t: f64) -> Result<Self> {
        if v_std
            .iter()
            .chain(&w_std)
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::invalid(
                "standard deviations must be finite and >= 0",
            ));
        }
        let sq = |s: [f64; 3]| {
            Matrix3::from_diagonal(&Vector3::from(s).component_mul(&Vector3::from(s)))
        };
        let n = NoiseConfig {
            cov_v: sq(v_std),
            cov_w: sq(w_std),
            sigma_t,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn zero() -> Self {
        NoiseConfig {
            cov_v: Matrix3::zeros(),
            cov_w: Matrix3::zeros(),
            sigma_t: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t >= 0.0 && self.sigma_t.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_t must be finite and >= 0, got {}",
                self.sigma_t
            )));
        }
        for (name, c) in [("cov_v", &self.cov_v), ("cov_w", &self.cov_w)] {
            if !c.iter().all(|x| x.is_finite()) || (c - c.transpose()).amax() > 1e-12 * c.amax() {
                return Err(Error::invalid(format!(
                    "{name} must be finite and symmetric"
                )));
            }
            if c.symmetric_eigenvalues().min() < -1e-12 * c.amax() {
                return Err(Error::invalid(format!(
                    "{name} is not positive semi-definite"
                )));
            }
        }
        Ok(())
    }
}

/// Tuning of the estimation chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoMotionOptions {
    /// Diagonal entries of the covariance at `t_ref`.
    pub ref_variance: f64,
    /// Zero the y and z linear velocity components, mean and covariance.
    pub linear_x_only: bool,
}

impl Default for EgoMotionOptions {
    fn default() -> Self {
        EgoMotionOptions {
            ref_variance: 1e-12,
            linear_x_only: false,
        }
    }
}

/// `[pose(6), v(3), w(3), t_from, t_to]` with block-diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub mean: SVector<f64, AUG_DIM>,
    pub cov: SMatrix<f64, AUG_DIM, AUG_DIM>,
}

impl AugmentedState {
    /// Assembles the state for one step that carries `pose` (valid at
    /// `t_from`) to `t_to`.
    pub fn assemble(
        pose: &GaussianState,
        m: &KinematicMeasurement,
        noise: &NoiseConfig,
        t_from: f64,
        t_to: f64,
        linear_x_only: bool,
    ) -> Self {
        assert_eq!(pose.dim(), 6, "pose Gaussian must be 6-dimensional");
        let mut mean = SVector::<f64, AUG_DIM>::zeros();
        let mut cov = SMatrix::<f64, AUG_DIM, AUG_DIM>::zeros();
        mean.fixed_rows_mut::<6>(0).copy_from(&pose.mean);
        cov.fixed_view_mut::<6, 6>(0, 0).copy_from(&pose.cov);
        let mut v = m.v;
        let mut cov_v = noise.cov_v;
        if linear_x_only {
            v.y = 0.0;
            v.z = 0.0;
            let vx = cov_v[(0, 0)];
            cov_v = Matrix3::zeros();
            cov_v[(0, 0)] = vx;
        }
        mean.fixed_rows_mut::<3>(6).copy_from(&v);
        mean.fixed_rows_mut::<3>(9).copy_from(&m.w);
        mean[12] = t_from;
        mean[13] = t_to;
        cov.fixed_view_mut::<3, 3>(6, 6).copy_from(&cov_v);
        cov.fixed_view_mut::<3, 3>(9, 9).copy_from(&noise.cov_w);
        let jitter = noise.sigma_t * noise.sigma_t;
        cov[(12, 12)] = jitter;
        cov[(13, 13)] = jitter;
        AugmentedState { mean, cov }
    }

    pub fn to_gaussian(&self) -> GaussianState {
        GaussianState {
            mean: DVector::from_column_slice(self.mean.as_slice()),
            cov: DMatrix::from_column_slice(AUG_DIM, AUG_DIM, self.cov.as_slice()),
        }
    }
}

/// Kinematic model on an augmented state vector: integrates constant
/// body-frame velocities from `t_from` to `t_to` starting at the pose.
///
/// `(x, y, yaw)` follow the exact constant-turn-rate arc driven by
/// `(v_x, v_y, w_yaw)`; `z`, roll and pitch integrate their rates linearly.
/// `dt = t_to - t_from` may be negative.
pub fn kinematic_model(aug: &[f64]) -> [f64; 6] {
    assert!(aug.len() >= AUG_DIM, "augmented state must have 14 entries");
    let pose = Pose6D::from_slice(&aug[0..6]);
    let v = Vector3::new(aug[6], aug[7], aug[8]);
    let w = Vector3::new(aug[9], aug[10], aug[11]);
    propagate(&pose, &v, &w, aug[13] - aug[12]).as_array()
}

/// [`kinematic_model`] with explicit arguments. Angles are not wrapped.
pub fn propagate(pose: &Pose6D, v: &Vector3<f64>, w: &Vector3<f64>, dt: f64) -> Pose6D {
    let psi = pose.yaw;
    let omega = w.z;
    let (dx, dy) = if omega.abs() < TURN_RATE_EPS {
        let (s, c) = psi.sin_cos();
        ((v.x * c - v.y * s) * dt, (v.x * s + v.y * c) * dt)
    } else {
        // sin(a+b)-sin(a) = 2cos(a+b/2)sin(b/2), same for cos; avoids cancellation
        let half = 0.5 * omega * dt;
        let chord = 2.0 * half.sin() / omega;
        let (s, c) = (psi + half).sin_cos();
        ((v.x * c - v.y * s) * chord, (v.x * s + v.y * c) * chord)
    };
    Pose6D {
        x: pose.x + dx,
        y: pose.y + dy,
        z: pose.z + v.z * dt,
        roll: pose.roll + w.x * dt,
        pitch: pose.pitch + w.y * dt,
        yaw: psi + omega * dt,
    }
}

/// Gaussian delta pose of one packet relative to `t_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoPoseEstimate {
    pub packet_index: usize,
    pub pose: GaussianState,
}

impl EgoPoseEstimate {
    pub fn mean_pose(&self) -> Pose6D {
        Pose6D::from_slice(self.pose.mean.as_slice())
    }

    /// A deterministic estimate, mostly for tests and ground-truth replay.
    pub fn exact(packet_index: usize, pose: &Pose6D) -> Self {
        EgoPoseEstimate {
            packet_index,
            pose: GaussianState {
                mean: pose.to_vector(),
                cov: DMatrix::zeros(6, 6),
            },
        }
    }
}

/// Index of the measurement closest in time to `t`. Ties go to the earlier one.
pub fn nearest_measurement(measurements: &[KinematicMeasurement], t: f64) -> usize {
    let idx = measurements.partition_point(|m| m.timestamp < t);
    if idx == 0 {
        0
    } else if idx == measurements.len() {
        idx - 1
    } else if (measurements[idx].timestamp - t) < (t - measurements[idx - 1].timestamp) {
        idx
    } else {
        idx - 1
    }
}

/// Estimates one delta pose per packet timestamp.
pub fn estimate_ego_motion(
    scan_timestamps: &[f64],
    measurements: &[KinematicMeasurement],
    t_ref: f64,
    noise: &NoiseConfig,
    params: &UtParams,
    options: &EgoMotionOptions,
) -> Result<Vec<EgoPoseEstimate>> {
    if measurements.is_empty() {
        return Err(Error::invalid("no kinematic measurements"));
    }
    if !t_ref.is_finite() {
        return Err(Error::invalid("non-finite reference time"));
    }
    if !scan_timestamps.iter().all(|t| t.is_finite()) {
        return Err(Error::invalid("non-finite packet timestamp"));
    }
    check_strictly_increasing(scan_timestamps.iter().copied(), "packet")?;
    check_strictly_increasing(measurements.iter().map(|m| m.timestamp), "measurement")?;
    noise.validate()?;
    params.validate()?;
    if !(options.ref_variance >= 0.0 && options.ref_variance.is_finite()) {
        return Err(Error::invalid("reference variance must be finite and >= 0"));
    }

    let reference = GaussianState {
        mean: DVector::zeros(6),
        cov: DMatrix::identity(6, 6) * options.ref_variance,
    };
    let split = scan_timestamps.partition_point(|t| *t < t_ref);
    let mut out: Vec<Option<EgoPoseEstimate>> = vec![None; scan_timestamps.len()];

    let backward = (0..split).rev();
    let forward = split..scan_timestamps.len();
    for chain in [
        &mut backward.collect::<Vec<_>>(),
        &mut forward.collect::<Vec<_>>(),
    ] {
        let mut state = reference.clone();
        let mut t_star = t_ref;
        for &i in chain.iter() {
            let t_i = scan_timestamps[i];
            let m = &measurements[nearest_measurement(measurements, t_i)];
            let aug =
                AugmentedState::assemble(&state, m, noise, t_star, t_i, options.linear_x_only);
            let sigma = utd(&aug.to_gaussian(), params)?;
            let moved = sigma.map(|x| DVector::from_row_slice(&kinematic_model(x.as_slice())));
            let mut next = utr(&moved);
            for a in 3..6 {
                next.mean[a] = wrap_angle(next.mean[a]);
            }
            out[i] = Some(EgoPoseEstimate {
                packet_index: i,
                pose: next.clone(),
            });
            state = next;
            t_star = t_i;
        }
    }
    Ok(out
        .into_iter()
        .map(|e| e.expect("every packet visited"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn meas(t: f64, vx: f64, wz: f64) -> KinematicMeasurement {
        KinematicMeasurement::new(t, Vector3::new(vx, 0.0, 0.0), Vector3::new(0.0, 0.0, wz))
            .unwrap()
    }

    fn aug(v: [f64; 3], w: [f64; 3], dt: f64) -> [f64; 14] {
        [
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, v[0], v[1], v[2], w[0], w[1], w[2], 0.0, dt,
        ]
    }

    #[test]
    fn zero_velocity_keeps_pose() {
        let mut a = aug([0.0; 3], [0.0; 3], 0.7);
        a[0..6].copy_from_slice(&[1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
        assert_eq!(kinematic_model(&a), [1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn quarter_circle_arc() {
        let p = kinematic_model(&aug([1.0, 0.0, 0.0], [0.0, 0.0, FRAC_PI_2], 1.0));
        assert!((p[0] - 2.0 / PI).abs() < 1e-12);
        assert!((p[1] - 2.0 / PI).abs() < 1e-12);
        assert!((p[5] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn straight_line() {
        let p = kinematic_model(&aug([10.0, 0.0, 0.0], [0.0; 3], 0.1));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert_eq!(&p[1..], &[0.0; 5]);
    }

    #[test]
    fn turn_rate_switch_is_continuous() {
        let below = kinematic_model(&aug([10.0, 1.0, 0.0], [0.0, 0.0, 0.999_999e-6], 0.1));
        let above = kinematic_model(&aug([10.0, 1.0, 0.0], [0.0, 0.0, 1.000_001e-6], 0.1));
        for k in 0..6 {
            assert!((below[k] - above[k]).abs() < 1e-7, "component {k}");
        }
    }

    #[test]
    fn forward_then_backward_returns() {
        let start = Pose6D::new(1.0, -2.0, 0.0, 0.0, 0.0, 0.4).unwrap();
        let v = Vector3::new(8.0, 0.5, 0.0);
        let w = Vector3::new(0.0, 0.0, -0.9);
        let there = propagate(&start, &v, &w, 0.1);
        let back = propagate(&there, &v, &w, -0.1);
        for (a, b) in start.as_array().iter().zip(back.as_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_association() {
        let ms: Vec<_> = [0.0, 0.01, 0.02]
            .iter()
            .map(|t| meas(*t, 1.0, 0.0))
            .collect();
        assert_eq!(nearest_measurement(&ms, -1.0), 0);
        assert_eq!(nearest_measurement(&ms, 0.004), 0);
        assert_eq!(nearest_measurement(&ms, 0.006), 1);
        assert_eq!(nearest_measurement(&ms, 0.015), 1);
        assert_eq!(nearest_measurement(&ms, 5.0), 2);
    }

    #[test]
    fn input_validation() {
        let ms = vec![meas(0.0, 1.0, 0.0)];
        let n = NoiseConfig::zero();
        let p = UtParams::default();
        let o = EgoMotionOptions::default();
        assert!(matches!(
            estimate_ego_motion(&[0.0], &[], 0.0, &n, &p, &o),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            estimate_ego_motion(&[0.1, 0.0], &ms, 0.0, &n, &p, &o),
            Err(Error::InvalidArgument(_))
        ));
        let unsorted = vec![meas(0.1, 1.0, 0.0), meas(0.0, 1.0, 0.0)];
        assert!(estimate_ego_motion(&[0.0], &unsorted, 0.0, &n, &p, &o).is_err());
    }

    #[test]
    fn zero_motion_zero_noise() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let ms: Vec<_> = (0..12).map(|i| meas(i as f64 * 0.01, 0.0, 0.0)).collect();
        let noise = NoiseConfig::from_std([0.0; 3], [0.0; 3], 0.001).unwrap();
        let est = estimate_ego_motion(
            &ts,
            &ms,
            0.09,
            &noise,
            &UtParams::default(),
            &EgoMotionOptions::default(),
        )
        .unwrap();
        assert_eq!(est.len(), 10);
        for e in &est {
            assert!(e.pose.mean.amax() < 1e-9);
            // zero velocity: jitter contributes nothing, only the reference variance
            assert!((e.pose.cov.trace() - 6e-12).abs() < 1e-15);
        }
    }

    #[test]
    fn single_packet_at_reference() {
        let ms = vec![meas(0.0, 0.0, 0.0)];
        let noise = NoiseConfig::from_std([0.05, 0.0, 0.0], [0.03; 3], 0.0006).unwrap();
        let est = estimate_ego_motion(
            &[0.5],
            &ms,
            0.5,
            &noise,
            &UtParams::default(),
            &EgoMotionOptions::default(),
        )
        .unwrap();
        assert!(est[0].pose.mean.amax() < 1e-12);
        assert!((&est[0].pose.cov - DMatrix::<f64>::identity(6, 6) * 1e-12).amax() < 1e-15);
    }

    #[test]
    fn backward_straight_line() {
        let ms = vec![meas(0.0, 10.0, 0.0), meas(0.05, 10.0, 0.0)];
        let est = estimate_ego_motion(
            &[0.0, 0.05],
            &ms,
            0.05,
            &NoiseConfig::zero(),
            &UtParams::default(),
            &EgoMotionOptions::default(),
        )
        .unwrap();
        assert!((est[0].pose.mean[0] + 0.5).abs() < 1e-9);
        assert!(est[1].pose.mean[0].abs() < 1e-12);
    }

    #[test]
    fn masking_removes_lateral_velocity() {
        let m =
            KinematicMeasurement::new(0.0, Vector3::new(3.0, 2.0, 1.0), Vector3::zeros()).unwrap();
        let noise = NoiseConfig::from_std([0.1; 3], [0.1; 3], 0.0).unwrap();
        let pose = GaussianState {
            mean: DVector::zeros(6),
            cov: DMatrix::zeros(6, 6),
        };
        let a = AugmentedState::assemble(&pose, &m, &noise, 0.0, 0.1, true);
        assert_eq!(a.mean[6], 3.0);
        assert_eq!((a.mean[7], a.mean[8]), (0.0, 0.0));
        assert_eq!(a.cov[(6, 6)], 0.1 * 0.1);
        assert_eq!((a.cov[(7, 7)], a.cov[(8, 8)]), (0.0, 0.0));
        let b = AugmentedState::assemble(&pose, &m, &noise, 0.0, 0.1, false);
        assert_eq!(b.mean[7], 2.0);
        assert_eq!(b.mean[13] - b.mean[12], 0.1);
    }
}
