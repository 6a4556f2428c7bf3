//! Per-packet motion correction of lidar points through pose sigma points.
//!
//! For packet `i` the delta-pose Gaussian is decomposed once; every sigma pose
//! `X_k` gives a transform `T_k`, and each point of the packet is moved by the
//! conjugated transform `T_veh_ld^-1 * T_k * T_veh_ld`, i.e. into the vehicle
//! base frame, through the ego-motion, and back to the lidar frame. Corrected
//! points stay in the lidar frame at `t_ref`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::ego_motion::EgoPoseEstimate;
use crate::error::{Error, Result};
use crate::geometry::{pose_to_transform, HomTransform, LidarScan, Pose6D};
use crate::unscented::{recover_moments, utd, SigmaWeights, UtParams};

/// Gaussian corrected point in the lidar frame at `t_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedPoint {
    pub packet_index: usize,
    pub point_index: usize,
    pub mean: Vector3<f64>,
    /// `None` when per-point covariances were not requested.
    pub cov: Option<Matrix3<f64>>,
}

/// Corrected sigma points of one packet. Every point shares `weights`.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaPacket {
    pub packet_index: usize,
    pub timestamp: f64,
    pub weights: SigmaWeights,
    /// Point-major: the sigma points of point `j` occupy
    /// `sigma[j * n_sigma..(j + 1) * n_sigma]`. Homogeneous coordinate implied.
    sigma: Vec<Vector3<f64>>,
}

impl OmegaPacket {
    pub fn num_sigma(&self) -> usize {
        self.weights.len()
    }

    pub fn num_points(&self) -> usize {
        self.sigma.len() / self.num_sigma()
    }

    pub fn sigma_points(&self, point: usize) -> &[Vector3<f64>] {
        let n = self.num_sigma();
        &self.sigma[point * n..(point + 1) * n]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[Vector3<f64>]> {
        self.sigma.chunks_exact(self.num_sigma())
    }
}

/// The retained sigma set, packet-major.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SigmaSetOmega {
    pub packets: Vec<OmegaPacket>,
}

impl SigmaSetOmega {
    pub fn num_points(&self) -> usize {
        self.packets.iter().map(|p| p.num_points()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionOutput {
    pub points: Vec<CorrectedPoint>,
    pub omega: SigmaSetOmega,
}

/// Moves points of the lidar frame at pose time into the lidar frame at
/// `t_ref`, written as `z + D z + d` so that a zero pose is exactly the
/// identity.
#[derive(Clone, Copy, Debug)]
struct ConjugatedDelta {
    linear: Matrix3<f64>,
    offset: Vector3<f64>,
}

impl ConjugatedDelta {
    fn new(pose: &Pose6D, veh_from_ld: &HomTransform) -> Result<Self> {
        let motion = pose_to_transform(pose)?;
        let r = veh_from_ld.rotation();
        let rt = r.transpose();
        let rk_minus_i = motion.rotation() - Matrix3::identity();
        Ok(ConjugatedDelta {
            linear: rt * rk_minus_i * r,
            offset: rt * (rk_minus_i * veh_from_ld.translation() + motion.translation()),
        })
    }

    fn apply(&self, z: &Vector3<f64>) -> Vector3<f64> {
        z + (self.linear * z + self.offset)
    }
}

/// Corrects every packet of `scan` with its delta-pose estimate.
///
/// `veh_from_ld` maps lidar coordinates into the vehicle base frame.
pub fn correct_scan(
    scan: &LidarScan,
    ego: &[EgoPoseEstimate],
    veh_from_ld: &HomTransform,
    params: &UtParams,
    point_covariance: bool,
) -> Result<CorrectionOutput> {
    if scan.packets().len() != ego.len() {
        return Err(Error::invalid(format!(
            "{} packets but {} ego-motion estimates",
            scan.packets().len(),
            ego.len()
        )));
    }
    if let Some((i, e)) = ego.iter().enumerate().find(|(i, e)| e.packet_index != *i) {
        return Err(Error::invalid(format!(
            "ego-motion estimate {i} refers to packet {}",
            e.packet_index
        )));
    }
    if ego.iter().any(|e| e.pose.dim() != 6) {
        return Err(Error::invalid("ego-motion estimates must be 6-dimensional"));
    }

    let per_packet: Vec<(Vec<CorrectedPoint>, OmegaPacket)> = scan
        .packets()
        .par_iter()
        .zip(ego.par_iter())
        .enumerate()
        .map(|(i, (packet, est))| {
            let sigma = utd(&est.pose, params)?;
            let deltas = sigma
                .points
                .iter()
                .map(|x| ConjugatedDelta::new(&Pose6D::from_slice(x.as_slice()), veh_from_ld))
                .collect::<Result<Vec<_>>>()?;
            let n_sigma = deltas.len();
            let mut flat = Vec::with_capacity(packet.points().len() * n_sigma);
            let mut points = Vec::with_capacity(packet.points().len());
            for (j, z) in packet.points().iter().enumerate() {
                let z = z.xyz();
                let start = flat.len();
                flat.extend(deltas.iter().map(|d| d.apply(&z)));
                let (mean, cov) = recover_moments(&flat[start..], &sigma.weights);
                points.push(CorrectedPoint {
                    packet_index: i,
                    point_index: j,
                    mean,
                    cov: point_covariance.then_some(cov),
                });
            }
            Ok((
                points,
                OmegaPacket {
                    packet_index: i,
                    timestamp: packet.timestamp(),
                    weights: sigma.weights,
                    sigma: flat,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(scan.num_points());
    let mut omega = SigmaSetOmega::default();
    for (p, o) in per_packet {
        points.extend(p);
        omega.packets.push(o);
    }
    Ok(CorrectionOutput { points, omega })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GaussianState, LidarPacket, LidarPoint};
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::FRAC_PI_2;

    fn single_point_scan(p: LidarPoint) -> LidarScan {
        LidarScan::new(vec![LidarPacket::new(vec![p], 0.0).unwrap()]).unwrap()
    }

    fn run(pose: Pose6D, point: LidarPoint) -> CorrectedPoint {
        let out = correct_scan(
            &single_point_scan(point),
            &[EgoPoseEstimate::exact(0, &pose)],
            &HomTransform::identity(),
            &UtParams::default(),
            true,
        )
        .unwrap();
        out.points[0].clone()
    }

    #[test]
    fn pure_yaw() {
        let c = run(
            Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2).unwrap(),
            LidarPoint::new(1.0, 0.0, 0.0),
        );
        assert!((c.mean - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(c.cov.unwrap(), Matrix3::zeros());
    }

    #[test]
    fn pure_translation() {
        let c = run(
            Pose6D::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap(),
            LidarPoint::new(0.0, 0.0, 0.0),
        );
        assert_eq!(c.mean, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn count_mismatch() {
        let scan = single_point_scan(LidarPoint::new(1.0, 2.0, 3.0));
        let r = correct_scan(
            &scan,
            &[],
            &HomTransform::identity(),
            &UtParams::default(),
            false,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn conjugation_matches_matrix_product() {
        let ext =
            pose_to_transform(&Pose6D::new(0.4, -0.1, 1.8, 0.02, -0.03, 0.1).unwrap()).unwrap();
        let pose = Pose6D::new(-0.7, 0.2, 0.01, 0.01, 0.02, -0.3).unwrap();
        let delta = ConjugatedDelta::new(&pose, &ext).unwrap();
        let full = ext.inverse() * pose_to_transform(&pose).unwrap() * ext;
        let z = Vector3::new(12.0, -4.0, 0.5);
        assert!((delta.apply(&z) - full.apply(&z)).norm() < 1e-12);
    }

    #[test]
    fn translation_covariance_passes_through() {
        let mut cov = DMatrix::zeros(6, 6);
        cov[(0, 0)] = 0.04;
        cov[(1, 1)] = 0.01;
        cov[(0, 1)] = 0.005;
        cov[(1, 0)] = 0.005;
        cov[(2, 2)] = 0.0009;
        let est = EgoPoseEstimate {
            packet_index: 0,
            pose: GaussianState::new(
                DVector::from_row_slice(&[0.3, 0.1, 0.0, 0.0, 0.0, 0.0]),
                cov.clone(),
            )
            .unwrap(),
        };
        let ext = pose_to_transform(&Pose6D::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.3).unwrap()).unwrap();
        let out = correct_scan(
            &single_point_scan(LidarPoint::new(5.0, 1.0, -1.0)),
            &[est],
            &ext,
            &UtParams::default(),
            true,
        )
        .unwrap();
        // translation block rotated into the lidar frame
        let r = ext.rotation().transpose();
        let t: Matrix3<f64> = cov.fixed_view::<3, 3>(0, 0).into();
        let expected = r * t * r.transpose();
        assert!((out.points[0].cov.unwrap() - expected).amax() < 1e-9 * expected.amax());
    }

    #[test]
    fn packet_weights_shared() {
        let pts: Vec<_> = (0..5)
            .map(|i| LidarPoint::new(i as f64, 1.0, 0.0))
            .collect();
        let scan = LidarScan::new(vec![LidarPacket::new(pts, 0.0).unwrap()]).unwrap();
        let est = EgoPoseEstimate {
            packet_index: 0,
            pose: GaussianState::new(DVector::zeros(6), DMatrix::identity(6, 6) * 1e-4).unwrap(),
        };
        let out = correct_scan(
            &scan,
            &[est],
            &HomTransform::identity(),
            &UtParams::default(),
            false,
        )
        .unwrap();
        let pk = &out.omega.packets[0];
        assert_eq!(pk.num_points(), 5);
        assert_eq!(pk.num_sigma(), 13);
        assert_eq!(pk.weights, UtParams::default().weights(6));
        assert!(out.points.iter().all(|p| p.cov.is_none()));
    }
}
