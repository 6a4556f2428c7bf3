//! Monte Carlo scenario generator and end-to-end NEES evaluation.
//!
//! Each episode drives the vehicle along a constant-velocity, constant-turn-rate
//! path while a spinning lidar fires one return per packet. World points are
//! frozen where each return lands, so the ground truth at any reference time is
//! an exact rigid re-expression. The estimator only sees jittered timestamps
//! and noisy velocity readings (one per packet by default, or a fixed-rate
//! stream associated by nearest timestamp).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::camera::{project_omega, project_point, CameraIntrinsics};
use crate::consistency::{nees_fixed, NeesRecord, NeesSummary};
use crate::correction::{correct_scan, CorrectedPoint};
use crate::ego_motion::{
    estimate_ego_motion, propagate, EgoMotionOptions, EgoPoseEstimate, KinematicMeasurement,
    NoiseConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{
    pose_to_transform, HomTransform, LidarPacket, LidarPoint, LidarScan, Pose6D,
};
use crate::io::{CalibrationConfig, CameraConfig, NoiseSpec};
use crate::unscented::UtParams;

/// Simulation parameters. Angles are in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Forward speed range, m/s.
    pub v_range: (f64, f64),
    /// Yaw rate range, deg/s.
    pub w_range: (f64, f64),
    /// Duration of one revolution, s.
    pub scan_period: f64,
    pub packets_per_scan: usize,
    pub elevation_range: (f64, f64),
    /// Return range, m.
    pub range_range: (f64, f64),
    /// Azimuth of the first packet, deg.
    pub start_azimuth: f64,
    pub clockwise: bool,
    /// m/s, applied to every linear axis.
    pub noise_v_std: f64,
    /// deg/s, applied to every angular axis.
    pub noise_w_std: f64,
    /// s, applied to every timestamp.
    pub jitter_std: f64,
    /// Odometry rate, Hz. `None` gives one reading per packet interval.
    pub measurement_rate: Option<f64>,
    pub runs: usize,
    pub rng_seed: u64,
    pub ut: UtParams,
    pub ref_variance: f64,
    pub calibration: SimCalibration,
}

/// Sensor layout used by the simulator; calibration is perfect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimCalibration {
    /// Lidar pose in the vehicle base frame, `[x, y, z, roll, pitch, yaw]`.
    pub lidar_in_vehicle: [f64; 6],
    /// Camera pose in the lidar frame (camera z forward, x right, y down).
    pub camera_in_lidar: [f64; 6],
    pub intrinsics: CameraIntrinsics,
}

impl Default for SimCalibration {
    fn default() -> Self {
        SimCalibration {
            lidar_in_vehicle: [1.0, 0.0, 1.8, 0.0, 0.0, 0.0],
            // optical axis along lidar +x, 0.3 m ahead of and below the lidar
            camera_in_lidar: [0.3, 0.0, -0.3, -PI / 2.0, 0.0, -PI / 2.0],
            intrinsics: CameraIntrinsics {
                fx: 1115.0,
                fy: 1115.0,
                cx: 960.0,
                cy: 604.0,
                skew: 0.0,
                k: [-0.02, 0.004, 0.0, 0.0],
                width: 1920,
                height: 1208,
            },
        }
    }
}

impl SimCalibration {
    pub fn veh_from_ld(&self) -> Result<HomTransform> {
        pose_to_transform(&Pose6D::from_slice(&self.lidar_in_vehicle))
    }

    /// Maps lidar coordinates into the camera frame.
    pub fn cam_from_ld(&self) -> Result<HomTransform> {
        Ok(pose_to_transform(&Pose6D::from_slice(&self.camera_in_lidar))?.inverse())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v_range: (2.0, 10.0),
            w_range: (-60.0, 60.0),
            scan_period: 0.1,
            packets_per_scan: 76,
            elevation_range: (-15.0, 15.0),
            range_range: (1.0, 100.0),
            start_azimuth: 180.0,
            clockwise: true,
            noise_v_std: 0.1,
            noise_w_std: 5.0,
            jitter_std: 0.0003,
            measurement_rate: None,
            runs: 200,
            rng_seed: 42,
            ut: UtParams::default(),
            ref_variance: 1e-12,
            calibration: SimCalibration::default(),
        }
    }
}

impl SimConfig {
    /// All noise sources switched off.
    pub fn noiseless() -> Self {
        SimConfig {
            noise_v_std: 0.0,
            noise_w_std: 0.0,
            jitter_std: 0.0,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (a, b): (f64, f64)| {
            if a.is_finite() && b.is_finite() && a <= b {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be an ordered finite range"
                )))
            }
        };
        ordered("v_range", self.v_range)?;
        ordered("w_range", self.w_range)?;
        ordered("elevation_range", self.elevation_range)?;
        ordered("range_range", self.range_range)?;
        if self.range_range.0 <= 0.0 {
            return Err(Error::invalid("range_range must be positive"));
        }
        for (name, s) in [
            ("noise_v_std", self.noise_v_std),
            ("noise_w_std", self.noise_w_std),
            ("jitter_std", self.jitter_std),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.scan_period > 0.0) || self.packets_per_scan == 0 {
            return Err(Error::invalid(
                "scan_period and packets_per_scan must be positive",
            ));
        }
        if self
            .measurement_rate
            .is_some_and(|r| !(r > 0.0 && r.is_finite()))
        {
            return Err(Error::invalid("measurement_rate must be positive"));
        }
        if self.runs == 0 {
            return Err(Error::invalid("runs must be positive"));
        }
        self.ut.validate()?;
        self.calibration.intrinsics.validate()?;
        self.calibration.veh_from_ld()?;
        self.calibration.cam_from_ld()?;
        Ok(())
    }

    /// Noise model handed to the estimator; matches the simulated noise.
    pub fn estimator_noise(&self) -> Result<NoiseConfig> {
        let w = self.noise_w_std.to_radians();
        NoiseConfig::from_std([self.noise_v_std; 3], [w; 3], self.jitter_std)
    }

    /// Azimuth step between packets, degrees.
    pub fn azimuth_step(&self) -> f64 {
        360.0 / self.packets_per_scan as f64
    }

    /// Spacing of the odometry readings, s.
    pub fn measurement_period(&self) -> f64 {
        match self.measurement_rate {
            Some(rate) => 1.0 / rate,
            None => self.packet_interval(),
        }
    }

    /// Calibration file equivalent of this configuration, with the camera as id 0.
    pub fn calibration_config(&self) -> Result<CalibrationConfig> {
        Ok(CalibrationConfig {
            veh_from_ld: self.calibration.veh_from_ld()?,
            cameras: vec![CameraConfig {
                id: 0,
                name: Some("sim".into()),
                intrinsics: self.calibration.intrinsics,
                cam_from_ld: self.calibration.cam_from_ld()?,
            }],
            noise: NoiseSpec {
                v_std: [self.noise_v_std; 3],
                w_std_deg: [self.noise_w_std; 3],
                sigma_t: self.jitter_std,
                linear_x_only: false,
                ref_variance: self.ref_variance,
            },
            ut: self.ut,
        })
    }

    /// Reads a TOML document; omitted keys keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            field: "<file>".into(),
            message: e.to_string(),
        })?;
        let cfg: SimConfig = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            field: e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("<document>")
                .to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn packet_interval(&self) -> f64 {
        self.scan_period / self.packets_per_scan as f64
    }
}

/// Standard normal draw by inverse CDF of a uniform in (0, 1).
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // 53 random bits, centered in their cell so 0 and 1 never occur
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(u)
}

/// Per-episode stream derived from `(seed, episode)`.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Ground truth and simulated measurements of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Forward speed, m/s.
    pub v: f64,
    /// Yaw rate, rad/s.
    pub omega: f64,
    /// True firing time of every packet.
    pub true_packet_times: Vec<f64>,
    /// True image time (end of the revolution).
    pub true_image_time: f64,
    /// Fixed world points, one per packet.
    pub world_points: Vec<Vector3<f64>>,
    /// Scan as recorded: true lidar-frame returns, jittered timestamps.
    pub scan: LidarScan,
    pub measurements: Vec<KinematicMeasurement>,
    /// Recorded (jittered) image timestamp.
    pub image_timestamp: f64,
    /// Points in the lidar frame at the true last-packet time.
    pub truth_last: Vec<Vector3<f64>>,
    /// Points in the lidar frame at the true image time.
    pub truth_image: Vec<Vector3<f64>>,
    /// True pixels of `truth_image`, when inside the image.
    pub truth_pixels: Vec<Option<Vector2<f64>>>,
}

impl Episode {
    /// Recorded timestamp of the last packet.
    pub fn last_packet_timestamp(&self) -> f64 {
        *self.scan.timestamps().last().expect("non-empty scan")
    }

    /// Vehicle pose in the world (the vehicle frame at `t = 0`).
    pub fn vehicle_pose(&self, t: f64) -> Pose6D {
        propagate(
            &Pose6D::zero(),
            &Vector3::new(self.v, 0.0, 0.0),
            &Vector3::new(0.0, 0.0, self.omega),
            t,
        )
    }

    /// Exact delta poses of every packet relative to the vehicle frame at `t_ref`.
    pub fn true_delta_poses(&self, t_ref: f64) -> Result<Vec<Pose6D>> {
        let reference = pose_to_transform(&self.vehicle_pose(t_ref))?.inverse();
        self.true_packet_times
            .iter()
            .map(|t| Ok((reference * pose_to_transform(&self.vehicle_pose(*t))?).to_pose()))
            .collect()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws jitter for `nominal` until the jittered sequence stays strictly increasing.
fn jittered(rng: &mut impl RngCore, nominal: &[f64], std: f64) -> Vec<f64> {
    loop {
        let ts: Vec<f64> = nominal
            .iter()
            .map(|t| t + std * standard_normal(rng))
            .collect();
        if ts.windows(2).all(|w| w[1] > w[0]) {
            return ts;
        }
    }
}

/// Generates one episode.
pub fn generate_episode(cfg: &SimConfig, rng: &mut impl RngCore) -> Result<Episode> {
    cfg.validate()?;
    let rng = &mut RngAdapter(rng);
    let n = cfg.packets_per_scan;
    let dt = cfg.packet_interval();
    let v = uniform(rng, cfg.v_range);
    let omega = uniform(rng, cfg.w_range).to_radians();
    let veh_from_ld = cfg.calibration.veh_from_ld()?;
    let cam_from_ld = cfg.calibration.cam_from_ld()?;
    let intr = &cfg.calibration.intrinsics;

    let mut episode = Episode {
        v,
        omega,
        true_packet_times: (0..n).map(|i| i as f64 * dt).collect(),
        true_image_time: cfg.scan_period,
        world_points: Vec::with_capacity(n),
        scan: LidarScan::default(),
        measurements: Vec::new(),
        image_timestamp: 0.0,
        truth_last: Vec::with_capacity(n),
        truth_image: Vec::with_capacity(n),
        truth_pixels: Vec::with_capacity(n),
    };
    let trajectory = |t: f64| {
        propagate(
            &Pose6D::zero(),
            &Vector3::new(v, 0.0, 0.0),
            &Vector3::new(0.0, 0.0, omega),
            t,
        )
    };
    let lidar_at =
        |t: f64| -> Result<HomTransform> { Ok(pose_to_transform(&trajectory(t))? * veh_from_ld) };

    let direction = if cfg.clockwise { -1.0 } else { 1.0 };
    let mut returns = Vec::with_capacity(n);
    for (i, &t) in episode.true_packet_times.iter().enumerate() {
        let azimuth = (cfg.start_azimuth + direction * i as f64 * cfg.azimuth_step()).to_radians();
        let elevation = uniform(rng, cfg.elevation_range).to_radians();
        let range = uniform(rng, cfg.range_range);
        let local = Vector3::new(
            range * elevation.cos() * azimuth.cos(),
            range * elevation.cos() * azimuth.sin(),
            range * elevation.sin(),
        );
        returns.push(local);
        episode.world_points.push(lidar_at(t)?.apply(&local));
    }

    let recorded = jittered(rng, &episode.true_packet_times, cfg.jitter_std);
    let packets = returns
        .iter()
        .zip(&recorded)
        .map(|(p, t)| LidarPacket::new(vec![LidarPoint::from_xyz(*p)], *t))
        .collect::<Result<Vec<_>>>()?;
    episode.scan = LidarScan::new(packets)?;

    // odometry stream covering the scan with a margin on both sides
    let period = cfg.measurement_period();
    let first = -((2.0 * period) / period).ceil() as i64;
    let last = ((cfg.scan_period + 2.0 * period) / period).ceil() as i64;
    let nominal: Vec<f64> = (first..=last).map(|k| k as f64 * period).collect();
    let stamps = jittered(rng, &nominal, cfg.jitter_std);
    let w_std = cfg.noise_w_std.to_radians();
    for t in stamps {
        let mut draw = |mean: f64, std: f64| mean + std * standard_normal(rng);
        let lin = Vector3::new(
            draw(v, cfg.noise_v_std),
            draw(0.0, cfg.noise_v_std),
            draw(0.0, cfg.noise_v_std),
        );
        let ang = Vector3::new(draw(0.0, w_std), draw(0.0, w_std), draw(omega, w_std));
        episode
            .measurements
            .push(KinematicMeasurement::new(t, lin, ang)?);
    }
    episode.image_timestamp = episode.true_image_time + cfg.jitter_std * standard_normal(rng);

    let last_from_world = lidar_at(episode.true_packet_times[n - 1])?.inverse();
    let image_from_world = lidar_at(episode.true_image_time)?.inverse();
    for w in &episode.world_points {
        episode.truth_last.push(last_from_world.apply(w));
        let p = image_from_world.apply(w);
        episode.truth_image.push(p);
        let pixel = project_point(&cam_from_ld.apply(&p), intr)
            .ok()
            .filter(|uv| intr.contains(uv));
        episode.truth_pixels.push(pixel);
    }
    Ok(episode)
}

/// Lets `generate_episode` take `&mut impl RngCore` while using `Rng` helpers.
struct RngAdapter<'a, R: RngCore>(&'a mut R);

impl<R: RngCore> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Pipeline outputs of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub episode: usize,
    pub v: f64,
    pub omega: f64,
    pub nees_3d: Vec<NeesRecord>,
    pub nees_2d: Vec<NeesRecord>,
    pub max_error_3d: f64,
    pub max_error_2d: f64,
    pub mean_error_3d: f64,
    pub mean_uncorrected_error_3d: f64,
    pub dropped_2d: usize,
    /// Points visible in truth but missing from the projection.
    pub missing_2d: usize,
}

/// Overlay data for one episode: uncorrected, corrected and true clouds and pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureData {
    pub episode: usize,
    pub v: f64,
    pub omega_deg: f64,
    pub points: Vec<FigurePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub packet: usize,
    pub uncorrected: [f64; 3],
    pub corrected: [f64; 3],
    pub corrected_cov: [f64; 6],
    pub truth: [f64; 3],
    pub pixel_uncorrected: Option<[f64; 2]>,
    pub pixel_corrected: Option<[f64; 2]>,
    pub pixel_cov: Option<[f64; 3]>,
    pub pixel_truth: Option<[f64; 2]>,
}

struct EpisodeRun {
    result: EpisodeResult,
    figure: FigureData,
}

fn upper_triangle(c: &Matrix3<f64>) -> [f64; 6] {
    [
        c[(0, 0)],
        c[(0, 1)],
        c[(0, 2)],
        c[(1, 1)],
        c[(1, 2)],
        c[(2, 2)],
    ]
}

fn run_episode(cfg: &SimConfig, index: usize) -> Result<EpisodeRun> {
    let mut rng = episode_rng(cfg.rng_seed, index as u64);
    let ep = generate_episode(cfg, &mut rng)?;
    let noise = cfg.estimator_noise()?;
    let options = EgoMotionOptions {
        ref_variance: cfg.ref_variance,
        linear_x_only: false,
    };
    let veh_from_ld = cfg.calibration.veh_from_ld()?;
    let cam_from_ld = cfg.calibration.cam_from_ld()?;
    let intr = &cfg.calibration.intrinsics;
    let stamps = ep.scan.timestamps();

    // 3D branch: corrected to the last packet
    let ego = estimate_ego_motion(
        &stamps,
        &ep.measurements,
        ep.last_packet_timestamp(),
        &noise,
        &cfg.ut,
        &options,
    )?;
    let corrected = correct_scan(&ep.scan, &ego, &veh_from_ld, &cfg.ut, true)?;
    let mut nees_3d = Vec::with_capacity(corrected.points.len());
    let mut max_error_3d: f64 = 0.0;
    let mut sum_error = 0.0;
    let mut sum_raw_error = 0.0;
    for (p, (truth, packet)) in corrected
        .points
        .iter()
        .zip(ep.truth_last.iter().zip(ep.scan.packets()))
    {
        let err = (p.mean - truth).norm();
        max_error_3d = max_error_3d.max(err);
        sum_error += err;
        sum_raw_error += (packet.points()[0].xyz() - truth).norm();
        let cov = p.cov.expect("covariance requested");
        nees_3d.push(NeesRecord::new(nees_fixed(&p.mean, &cov, truth)?, 3)?);
    }

    // 2D branch: corrected to the image time, then projected
    let ego_image = estimate_ego_motion(
        &stamps,
        &ep.measurements,
        ep.image_timestamp,
        &noise,
        &cfg.ut,
        &options,
    )?;
    let at_image = correct_scan(&ep.scan, &ego_image, &veh_from_ld, &cfg.ut, false)?;
    let projected = project_omega(&at_image.omega, &cam_from_ld, intr)?;
    let mut by_packet = vec![None; ep.scan.packets().len()];
    for p in &projected.points {
        by_packet[p.packet_index] = Some(p);
    }
    let mut nees_2d = Vec::new();
    let mut max_error_2d: f64 = 0.0;
    let mut missing_2d = 0;
    for (truth, est) in ep.truth_pixels.iter().zip(&by_packet) {
        match (truth, est) {
            (Some(t), Some(e)) => {
                max_error_2d = max_error_2d.max((e.mean - t).norm());
                nees_2d.push(NeesRecord::new(nees_fixed(&e.mean, &e.cov, t)?, 2)?);
            }
            (Some(_), None) => missing_2d += 1,
            _ => {}
        }
    }

    let figure = figure_data(
        index,
        &ep,
        &corrected.points,
        &at_image.points,
        &by_packet,
        cfg,
    )?;
    let n = corrected.points.len() as f64;
    Ok(EpisodeRun {
        result: EpisodeResult {
            episode: index,
            v: ep.v,
            omega: ep.omega,
            nees_3d,
            nees_2d,
            max_error_3d,
            max_error_2d,
            mean_error_3d: sum_error / n,
            mean_uncorrected_error_3d: sum_raw_error / n,
            dropped_2d: projected.dropped,
            missing_2d,
        },
        figure,
    })
}

fn figure_data(
    index: usize,
    ep: &Episode,
    corrected: &[CorrectedPoint],
    at_image: &[CorrectedPoint],
    projected: &[Option<&crate::camera::ProjectedPoint>],
    cfg: &SimConfig,
) -> Result<FigureData> {
    let cam_from_ld = cfg.calibration.cam_from_ld()?;
    let intr = &cfg.calibration.intrinsics;
    let pixel = |p: &Vector3<f64>| {
        project_point(&cam_from_ld.apply(p), intr)
            .ok()
            .filter(|uv| intr.contains(uv))
            .map(|uv| [uv.x, uv.y])
    };
    let points = corrected
        .iter()
        .zip(at_image)
        .enumerate()
        .map(|(i, (c, _))| {
            let raw = ep.scan.packets()[i].points()[0].xyz();
            let proj = projected[i];
            FigurePoint {
                packet: i,
                uncorrected: raw.into(),
                corrected: c.mean.into(),
                corrected_cov: upper_triangle(&c.cov.unwrap_or_else(Matrix3::zeros)),
                truth: ep.truth_last[i].into(),
                pixel_uncorrected: pixel(&raw),
                pixel_corrected: proj.map(|p| [p.mean.x, p.mean.y]),
                pixel_cov: proj.map(|p| [p.cov[(0, 0)], p.cov[(0, 1)], p.cov[(1, 1)]]),
                pixel_truth: ep.truth_pixels[i].map(|uv| [uv.x, uv.y]),
            }
        })
        .collect();
    Ok(FigureData {
        episode: index,
        v: ep.v,
        omega_deg: ep.omega.to_degrees(),
        points,
    })
}

/// Pooled Monte Carlo outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub config: SimConfig,
    pub runs: usize,
    pub points_3d: usize,
    pub points_2d: usize,
    pub nees_3d: NeesSummary,
    pub nees_2d: Option<NeesSummary>,
    pub max_error_3d: f64,
    pub max_error_2d: f64,
    pub mean_error_3d: f64,
    pub mean_uncorrected_error_3d: f64,
    pub dropped_2d: usize,
    pub missing_2d: usize,
}

/// Report plus the overlay data of the first episode.
#[derive(Clone, Debug)]
pub struct MonteCarloOutput {
    pub report: ConsistencyReport,
    pub example: FigureData,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs `cfg.runs` independent episodes through the full pipeline.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<MonteCarloOutput> {
    cfg.validate()?;
    let runs: Vec<EpisodeRun> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| run_episode(cfg, i))
        .collect::<Result<_>>()?;

    let mut all_3d = Vec::new();
    let mut all_2d = Vec::new();
    let mut max_error_3d: f64 = 0.0;
    let mut max_error_2d: f64 = 0.0;
    let mut sum_error = 0.0;
    let mut sum_raw = 0.0;
    let mut dropped_2d = 0;
    let mut missing_2d = 0;
    for r in &runs {
        let r = &r.result;
        all_3d.extend_from_slice(&r.nees_3d);
        all_2d.extend_from_slice(&r.nees_2d);
        max_error_3d = max_error_3d.max(r.max_error_3d);
        max_error_2d = max_error_2d.max(r.max_error_2d);
        sum_error += r.mean_error_3d * r.nees_3d.len() as f64;
        sum_raw += r.mean_uncorrected_error_3d * r.nees_3d.len() as f64;
        dropped_2d += r.dropped_2d;
        missing_2d += r.missing_2d;
    }
    let report = ConsistencyReport {
        config: cfg.clone(),
        runs: cfg.runs,
        points_3d: all_3d.len(),
        points_2d: all_2d.len(),
        nees_3d: NeesSummary::from_records(&all_3d)?,
        nees_2d: if all_2d.is_empty() {
            None
        } else {
            Some(NeesSummary::from_records(&all_2d)?)
        },
        max_error_3d,
        max_error_2d,
        mean_error_3d: sum_error / all_3d.len() as f64,
        mean_uncorrected_error_3d: sum_raw / all_3d.len() as f64,
        dropped_2d,
        missing_2d,
    };
    let mut runs = runs;
    let example = runs[0].figure.clone();
    let episodes = runs.drain(..).map(|r| r.result).collect();
    Ok(MonteCarloOutput {
        report,
        example,
        episodes,
    })
}

/// Replays an episode with its exact delta poses (no estimation).
pub fn exact_correction(
    ep: &Episode,
    cfg: &SimConfig,
    t_ref_true: f64,
) -> Result<Vec<CorrectedPoint>> {
    let ego: Vec<EgoPoseEstimate> = ep
        .true_delta_poses(t_ref_true)?
        .iter()
        .enumerate()
        .map(|(i, p)| EgoPoseEstimate::exact(i, p))
        .collect();
    Ok(correct_scan(
        &ep.scan,
        &ego,
        &cfg.calibration.veh_from_ld()?,
        &cfg.ut,
        true,
    )?
    .points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_draws_are_standard() {
        let mut rng = episode_rng(7, 0);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn streams_differ_per_episode() {
        let a = episode_rng(1, 0).next_u64();
        let b = episode_rng(1, 1).next_u64();
        let c = episode_rng(1, 0).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn episode_shape() {
        let cfg = SimConfig::default();
        let ep = generate_episode(&cfg, &mut episode_rng(3, 0)).unwrap();
        assert_eq!(ep.scan.packets().len(), 76);
        assert_eq!(ep.truth_last.len(), 76);
        assert!((cfg.azimuth_step() - 4.7368).abs() < 1e-4);
        assert!((2.0..10.0).contains(&ep.v));
        assert!(ep.omega.abs() <= 60f64.to_radians());
        assert!(ep.measurements.len() >= 10);
        let ts = ep.scan.timestamps();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn static_vehicle_scan_equals_truth() {
        let cfg = SimConfig {
            v_range: (0.0, 0.0),
            w_range: (0.0, 0.0),
            ..SimConfig::default()
        };
        let ep = generate_episode(&cfg, &mut episode_rng(5, 0)).unwrap();
        for (pk, t) in ep.scan.packets().iter().zip(&ep.truth_last) {
            assert!((pk.points()[0].xyz() - t).norm() < 1e-12);
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = SimConfig {
            v_range: (3.0, 2.0),
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            jitter_std: -1.0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
