//! The augmented point cloud: corrected positions with optional covariance
//! and optional pixel Gaussians.
//!
//! Text form, one record per line, missing fields written as `-`:
//!
//! ```text
//! packet point timestamp x y z  cxx cxy cxz cyy cyz czz  camera u v  cuu cuv cvv
//! ```
//!
//! Binary form: the 8-byte magic `AUGPCL01`, a little-endian `u64` record
//! count, then fixed-width little-endian records (see [`RECORD_BYTES`]).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::records::{data_err, data_lines, parse_f64, parse_index};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AUGPCL01";

/// `u32 packet, u32 point, f64 timestamp, 3 f64 xyz, u8 flags, 6 f64 cov,
/// u32 camera, 2 f64 uv, 3 f64 pixel cov`.
pub const RECORD_BYTES: usize = 4 + 4 + 8 + 24 + 1 + 48 + 4 + 16 + 24;

const HAS_COV: u8 = 1;
const HAS_PIXEL: u8 = 2;

/// Relative tolerance for negative eigenvalues of stored covariances.
const PSD_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelGaussian {
    pub camera: u32,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedPoint {
    pub packet_index: usize,
    pub point_index: usize,
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub position_cov: Option<Matrix3<f64>>,
    pub pixel: Option<PixelGaussian>,
}

fn upper3(c: &Matrix3<f64>) -> [f64; 6] {
    [
        c[(0, 0)],
        c[(0, 1)],
        c[(0, 2)],
        c[(1, 1)],
        c[(1, 2)],
        c[(2, 2)],
    ]
}

fn from_upper3(u: &[f64]) -> Matrix3<f64> {
    Matrix3::new(u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5])
}

fn upper2(c: &Matrix2<f64>) -> [f64; 3] {
    [c[(0, 0)], c[(0, 1)], c[(1, 1)]]
}

fn from_upper2(u: &[f64]) -> Matrix2<f64> {
    Matrix2::new(u[0], u[1], u[1], u[2])
}

fn is_psd(m: &[f64], n: usize) -> bool {
    let m = DMatrix::from_column_slice(n, n, m);
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .all(|&l| l >= -PSD_TOL * scale)
}

fn check_record(p: &AugmentedPoint) -> std::result::Result<(), String> {
    let finite = p.timestamp.is_finite()
        && p.position.iter().all(|v| v.is_finite())
        && p.position_cov
            .is_none_or(|c| c.iter().all(|v| v.is_finite()))
        && p.pixel
            .is_none_or(|px| px.mean.iter().chain(px.cov.iter()).all(|v| v.is_finite()));
    if !finite {
        return Err("non-finite value".into());
    }
    if let Some(c) = &p.position_cov {
        if !is_psd(c.as_slice(), 3) {
            return Err("position covariance is not positive semidefinite".into());
        }
    }
    if let Some(px) = &p.pixel {
        if !is_psd(px.cov.as_slice(), 2) {
            return Err("pixel covariance is not positive semidefinite".into());
        }
    }
    Ok(())
}

pub fn cloud_to_string(points: &[AugmentedPoint]) -> String {
    let mut s = String::from(
        "# packet point timestamp x y z cxx cxy cxz cyy cyz czz camera u v cuu cuv cvv\n",
    );
    for p in points {
        write!(
            s,
            "{} {} {:?} {:?} {:?} {:?}",
            p.packet_index, p.point_index, p.timestamp, p.position.x, p.position.y, p.position.z
        )
        .unwrap();
        match &p.position_cov {
            Some(c) => upper3(c).iter().for_each(|v| write!(s, " {v:?}").unwrap()),
            None => s.push_str(" - - - - - -"),
        }
        match &p.pixel {
            Some(px) => {
                write!(s, " {} {:?} {:?}", px.camera, px.mean.x, px.mean.y).unwrap();
                upper2(&px.cov)
                    .iter()
                    .for_each(|v| write!(s, " {v:?}").unwrap());
            }
            None => s.push_str(" - - - - - -"),
        }
        s.push('\n');
    }
    s
}

fn optional_block<'a>(
    fields: &'a [&'a str],
    path: &Path,
    line: usize,
    what: &str,
) -> Result<Option<&'a [&'a str]>> {
    let dashes = fields.iter().filter(|f| **f == "-").count();
    match dashes {
        0 => Ok(Some(fields)),
        n if n == fields.len() => Ok(None),
        _ => Err(data_err(path, line, format!("partially missing {what}"))),
    }
}

/// Parses the text form. A header-only document is a valid empty cloud; a
/// document without any line is rejected as empty input.
pub fn parse_cloud(text: &str, path: &Path) -> Result<Vec<AugmentedPoint>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        if f.len() != 18 {
            return Err(data_err(
                path,
                line,
                format!("expected 18 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str| parse_f64(s, path, line, "value");
        let position_cov = match optional_block(&f[6..12], path, line, "covariance")? {
            Some(c) => Some(from_upper3(
                &c.iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
            )),
            None => None,
        };
        let pixel = match optional_block(&f[12..18], path, line, "pixel")? {
            Some(c) => {
                let camera = f[12]
                    .parse::<u32>()
                    .map_err(|_| data_err(path, line, format!("invalid camera id `{}`", f[12])))?;
                let v = c[1..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                Some(PixelGaussian {
                    camera,
                    mean: Vector2::new(v[0], v[1]),
                    cov: from_upper2(&v[2..]),
                })
            }
            None => None,
        };
        let p = AugmentedPoint {
            packet_index: parse_index(f[0], path, line, "packet index")?,
            point_index: parse_index(f[1], path, line, "point index")?,
            timestamp: num(f[2])?,
            position: Vector3::new(num(f[3])?, num(f[4])?, num(f[5])?),
            position_cov,
            pixel,
        };
        check_record(&p).map_err(|m| data_err(path, line, m))?;
        out.push(p);
    }
    Ok(out)
}

pub fn cloud_to_bytes(points: &[AugmentedPoint]) -> Vec<u8> {
    let mut b = Vec::with_capacity(16 + points.len() * RECORD_BYTES);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&(points.len() as u64).to_le_bytes());
    let f = |b: &mut Vec<u8>, v: f64| b.extend_from_slice(&v.to_le_bytes());
    for p in points {
        b.extend_from_slice(&(p.packet_index as u32).to_le_bytes());
        b.extend_from_slice(&(p.point_index as u32).to_le_bytes());
        f(&mut b, p.timestamp);
        p.position.iter().for_each(|v| f(&mut b, *v));
        let flags = p.position_cov.map_or(0, |_| HAS_COV) | p.pixel.map_or(0, |_| HAS_PIXEL);
        b.push(flags);
        let cov = p.position_cov.as_ref().map_or([0.0; 6], upper3);
        cov.iter().for_each(|v| f(&mut b, *v));
        let (camera, uv, pc) = match &p.pixel {
            Some(px) => (px.camera, [px.mean.x, px.mean.y], upper2(&px.cov)),
            None => (0, [0.0; 2], [0.0; 3]),
        };
        b.extend_from_slice(&camera.to_le_bytes());
        uv.iter().chain(&pc).for_each(|v| f(&mut b, *v));
    }
    b
}

pub fn parse_cloud_bytes(bytes: &[u8], path: &Path) -> Result<Vec<AugmentedPoint>> {
    // Binary records are addressed by 1-based record number in errors.
    let err = |rec: usize, m: &str| data_err(path, rec, m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(err(0, "missing AUGPCL01 header"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if n.checked_mul(RECORD_BYTES) != Some(bytes.len() - 16) {
        return Err(err(0, "record count does not match file size"));
    }
    let mut out = Vec::with_capacity(n);
    for (i, r) in bytes[16..].chunks_exact(RECORD_BYTES).enumerate() {
        let mut pos = 0;
        let mut take = |k: usize| {
            let s = &r[pos..pos + k];
            pos += k;
            s
        };
        let u32_ = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let f64_ = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
        let packet_index = u32_(take(4)) as usize;
        let point_index = u32_(take(4)) as usize;
        let timestamp = f64_(take(8));
        let position = Vector3::from_fn(|_, _| f64_(take(8)));
        let flags = take(1)[0];
        if flags & !(HAS_COV | HAS_PIXEL) != 0 {
            return Err(err(i + 1, "unknown flag bits"));
        }
        let cov: Vec<f64> = (0..6).map(|_| f64_(take(8))).collect();
        let camera = u32_(take(4));
        let px: Vec<f64> = (0..5).map(|_| f64_(take(8))).collect();
        let p = AugmentedPoint {
            packet_index,
            point_index,
            timestamp,
            position,
            position_cov: (flags & HAS_COV != 0).then(|| from_upper3(&cov)),
            pixel: (flags & HAS_PIXEL != 0).then(|| PixelGaussian {
                camera,
                mean: Vector2::new(px[0], px[1]),
                cov: from_upper2(&px[2..]),
            }),
        };
        check_record(&p).map_err(|m| err(i + 1, &m))?;
        out.push(p);
    }
    Ok(out)
}

/// Writes the binary form when `binary`, else the text form.
pub fn write_augmented_cloud(
    points: &[AugmentedPoint],
    path: impl AsRef<Path>,
    binary: bool,
) -> Result<()> {
    let path = path.as_ref();
    let res = if binary {
        std::fs::write(path, cloud_to_bytes(points))
    } else {
        std::fs::write(path, cloud_to_string(points))
    };
    res.map_err(|e| Error::io(path, e))
}

/// Reads either form, detected by the magic bytes.
pub fn read_augmented_cloud(path: impl AsRef<Path>) -> Result<Vec<AugmentedPoint>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return parse_cloud_bytes(&bytes, path);
    }
    let text = String::from_utf8(bytes).map_err(|_| data_err(path, 0, "not UTF-8 text"))?;
    parse_cloud(&text, path)
}
