//! KITTI odometry file formats: pose text files and velodyne binary sweeps.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Upper 3×4 block of a homogeneous pose matrix, row-major, exactly as it
/// appears in a pose file. Kept separate from [`Pose`] so that text
/// round-trips do not pass through re-orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRow(pub [f64; 12]);

impl PoseRow {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.matrix();
        let t = pose.translation;
        let mut v = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                v[4 * i + j] = r[(i, j)];
            }
            v[4 * i + 3] = t[i];
        }
        PoseRow(v)
    }

    /// Projects the rotation block onto SO(3) and returns the pose.
    pub fn to_pose(&self) -> Pose {
        let v = &self.0;
        let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let rot = Rotation3::from_matrix_eps(&m, 1e-12, 100, Rotation3::identity());
        Pose::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            Vector3::new(v[3], v[7], v[11]),
        )
    }

    /// Parses one line of 12 whitespace-separated decimals.
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let mut v = [0.0; 12];
        let mut count = 0;
        for tok in line.split_whitespace() {
            if count == 12 {
                count += 1;
                break;
            }
            v[count] = tok.parse::<f64>().map_err(|_| Error::PoseFormat {
                line: line_no,
                reason: format!("invalid number {tok:?}"),
            })?;
            count += 1;
        }
        if count != 12 {
            let found = line.split_whitespace().count();
            return Err(Error::PoseFormat {
                line: line_no,
                reason: format!("expected 12 values, found {found}"),
            });
        }
        Ok(PoseRow(v))
    }

    /// Formats the row with 9 significant digits per value (`%.8e`).
    pub fn format(&self) -> String {
        let mut out = String::with_capacity(12 * 16);
        for (k, x) in self.0.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            push_sci(&mut out, *x);
        }
        out
    }
}

/// C-style `%.8e`: mantissa with 8 decimals, signed exponent with at least
/// two digits.
fn push_sci(out: &mut String, x: f64) {
    // normalize negative zero so identical poses print identically
    let x = if x == 0.0 { 0.0 } else { x };
    let s = format!("{x:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    let _ = write!(out, "{mantissa}e{sign}{:02}", exp.abs());
}

pub fn read_pose_rows<R: BufRead>(reader: R) -> Result<Vec<PoseRow>> {
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(PoseRow::parse(&line, k + 1)?);
    }
    Ok(rows)
}

pub fn write_pose_rows<W: Write>(mut writer: W, rows: &[PoseRow]) -> Result<()> {
    for row in rows {
        writeln!(writer, "{}", row.format())?;
    }
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    let rows = read_pose_rows(std::io::BufReader::new(file))?;
    Ok(rows.iter().map(PoseRow::to_pose).collect())
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        out.push_str(&PoseRow::from_pose(p).format());
        out.push('\n');
    }
    out
}

/// Decodes a velodyne sweep: little-endian `f32` records `(x, y, z, r)`.
pub fn decode_velodyne(bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::VelodyneLength(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|rec| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            [f(0), f(1), f(2), f(3)]
        })
        .collect())
}

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.points() {
        for v in [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.reflectance as f32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne `.bin` sweep, applying the ingestion filter.
pub fn read_velodyne(path: &Path, frame_id: u64) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let records = decode_velodyne(&bytes).map_err(|e| match e {
        Error::VelodyneLength(n) => Error::Data(format!(
            "{}: length {n} is not a multiple of 16 bytes",
            path.display()
        )),
        other => other,
    })?;
    let points = records.into_iter().map(|[x, y, z, r]| {
        Point::new(
            Vector3::new(x as f64, y as f64, z as f64),
            Vector3::zeros(),
            r as f64,
        )
    });
    Ok(PointCloud::ingest(points, frame_id))
}
