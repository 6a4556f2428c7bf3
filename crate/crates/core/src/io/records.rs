//! Whitespace-separated text formats for scans, kinematic measurements and
//! ground truth. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! # scan: packet timestamp x y z
//! 0 0.0000 12.1 -3.0 0.4
//! # measurements: timestamp vx vy vz wx wy wz   (m/s, rad/s)
//! 0.0000 8.0 0.0 0.0 0.0 0.0 0.35
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::ego_motion::KinematicMeasurement;
use crate::error::{Error, Result};
use crate::geometry::{LidarPacket, LidarPoint, LidarScan};

pub(crate) fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-comment lines as `(1-based line number, fields)`.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

pub(crate) fn parse_f64(s: &str, path: &Path, line: usize, what: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(data_err(path, line, format!("invalid {what} `{s}`"))),
    }
}

pub(crate) fn parse_index(s: &str, path: &Path, line: usize, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| data_err(path, line, format!("invalid {what} `{s}`")))
}

fn expect_fields(fields: &[&str], n: usize, path: &Path, line: usize) -> Result<()> {
    if fields.len() != n {
        return Err(data_err(
            path,
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a scan. Packet indices start at 0 and increase by one; every line
/// of a packet repeats its timestamp; timestamps strictly increase.
pub fn parse_scan(text: &str, path: &Path) -> Result<LidarScan> {
    let mut packets = Vec::new();
    let mut current: Option<(usize, f64, Vec<LidarPoint>)> = None;
    for (line, f) in data_lines(text) {
        expect_fields(&f, 5, path, line)?;
        let packet = parse_index(f[0], path, line, "packet index")?;
        let t = parse_f64(f[1], path, line, "timestamp")?;
        let p = LidarPoint::new(
            parse_f64(f[2], path, line, "x")?,
            parse_f64(f[3], path, line, "y")?,
            parse_f64(f[4], path, line, "z")?,
        );
        match &mut current {
            Some((k, tk, pts)) if *k == packet => {
                if t != *tk {
                    return Err(data_err(
                        path,
                        line,
                        format!("timestamp {t} differs from packet {k}'s timestamp {tk}"),
                    ));
                }
                pts.push(p);
            }
            _ => {
                let expected = current.as_ref().map_or(0, |c| c.0 + 1);
                if packet != expected {
                    return Err(data_err(
                        path,
                        line,
                        format!("packet index {packet}, expected {expected}"),
                    ));
                }
                if let Some((_, tk, pts)) = current.take() {
                    if !(t > tk) {
                        return Err(data_err(
                            path,
                            line,
                            format!("packet timestamp {t} does not increase (previous {tk})"),
                        ));
                    }
                    packets.push(LidarPacket::new(pts, tk)?);
                }
                current = Some((packet, t, vec![p]));
            }
        }
    }
    let Some((_, tk, pts)) = current else {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
        });
    };
    packets.push(LidarPacket::new(pts, tk)?);
    LidarScan::new(packets)
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<LidarScan> {
    let path = path.as_ref();
    parse_scan(&read_text(path)?, path)
}

pub fn scan_to_string(scan: &LidarScan) -> String {
    let mut s = String::from("# packet timestamp x y z\n");
    for (k, pk) in scan.packets().iter().enumerate() {
        for p in pk.points() {
            let z = p.xyz();
            writeln!(s, "{k} {:?} {:?} {:?} {:?}", pk.timestamp(), z.x, z.y, z.z).unwrap();
        }
    }
    s
}

pub fn write_scan(scan: &LidarScan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scan_to_string(scan)).map_err(|e| Error::io(path, e))
}

pub fn parse_measurements(text: &str, path: &Path) -> Result<Vec<KinematicMeasurement>> {
    let mut out: Vec<KinematicMeasurement> = Vec::new();
    for (line, f) in data_lines(text) {
        expect_fields(&f, 7, path, line)?;
        let v: Vec<f64> = f
            .iter()
            .map(|s| parse_f64(s, path, line, "value"))
            .collect::<Result<_>>()?;
        if let Some(prev) = out.last() {
            if !(v[0] > prev.timestamp) {
                return Err(data_err(
                    path,
                    line,
                    format!(
                        "timestamp {} does not increase (previous {})",
                        v[0], prev.timestamp
                    ),
                ));
            }
        }
        out.push(KinematicMeasurement::new(
            v[0],
            Vector3::new(v[1], v[2], v[3]),
            Vector3::new(v[4], v[5], v[6]),
        )?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

pub fn read_measurements(path: impl AsRef<Path>) -> Result<Vec<KinematicMeasurement>> {
    let path = path.as_ref();
    parse_measurements(&read_text(path)?, path)
}

pub fn measurements_to_string(ms: &[KinematicMeasurement]) -> String {
    let mut s = String::from("# timestamp vx vy vz wx wy wz\n");
    for m in ms {
        writeln!(
            s,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            m.timestamp, m.v.x, m.v.y, m.v.z, m.w.x, m.w.y, m.w.z
        )
        .unwrap();
    }
    s
}

pub fn write_measurements(ms: &[KinematicMeasurement], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, measurements_to_string(ms)).map_err(|e| Error::io(path, e))
}

/// Ground-truth positions (`packet point x y z`) or pixels (`packet point u v`).
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRecord {
    pub packet_index: usize,
    pub point_index: usize,
    pub value: Vec<f64>,
}

/// Parses a truth file; every line must carry `2 + dim` fields.
pub fn parse_truth(text: &str, path: &Path, dim: usize) -> Result<Vec<TruthRecord>> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_fields(&f, 2 + dim, path, line)?;
        out.push(TruthRecord {
            packet_index: parse_index(f[0], path, line, "packet index")?,
            point_index: parse_index(f[1], path, line, "point index")?,
            value: f[2..]
                .iter()
                .map(|s| parse_f64(s, path, line, "value"))
                .collect::<Result<_>>()?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

pub fn read_truth(path: impl AsRef<Path>, dim: usize) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    parse_truth(&read_text(path)?, path, dim)
}

pub fn truth_to_string(records: &[TruthRecord]) -> String {
    let mut s = String::new();
    for r in records {
        write!(s, "{} {}", r.packet_index, r.point_index).unwrap();
        for v in &r.value {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}
