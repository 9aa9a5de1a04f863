//! Input discovery, scene files and atomic artifact writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use odom_core::se3::Pose;
use odom_core::synth::SceneSpec;
use serde::Deserialize;

use crate::error::CliError;

/// Writes `contents` to a temporary file beside `path`, then renames it into
/// place so readers never observe a partial artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| CliError::data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create output directory {}: {e}", dir.display())))
}

/// The `.bin` sweeps of a directory in file-name order.
pub fn list_sweeps(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read sweep directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::data(format!("cannot read sweep directory {}: {e}", dir.display())))?
            .path();
        if path.extension().is_some_and(|x| x == "bin") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no .bin sweeps in {}", dir.display())));
    }
    Ok(files)
}

/// Frame count and per-frame sensor motion of a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub frames: usize,
    /// `[tx, ty, tz, roll, pitch, yaw]`, meters and degrees.
    pub motion: [f64; 6],
}

impl SequenceSpec {
    pub fn step(&self) -> Pose {
        motion_pose(&self.motion)
    }
}

pub fn motion_pose(m: &[f64; 6]) -> Pose {
    Pose::from_euler(
        m[3].to_radians(),
        m[4].to_radians(),
        m[5].to_radians(),
        Vector3::new(m[0], m[1], m[2]),
    )
}

/// Parses `tx,ty,tz,roll,pitch,yaw`.
pub fn parse_motion(text: &str) -> Result<[f64; 6], CliError> {
    let values: Option<Vec<f64>> = text.split(',').map(|s| s.trim().parse().ok()).collect();
    values
        .and_then(|v| <[f64; 6]>::try_from(v).ok())
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| CliError::config(format!("motion: expected six numbers tx,ty,tz,roll,pitch,yaw, got `{text}`")))
}

#[derive(Debug, Clone)]
pub struct SceneFile {
    pub scene: SceneSpec,
    pub sequence: Option<SequenceSpec>,
}

/// Reads a TOML scene: the scene fields at top level plus an optional
/// `[sequence]` table.
pub fn read_scene(path: &Path) -> Result<SceneFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read scene spec {}: {e}", path.display())))?;
    let invalid = |msg: String| CliError::config(format!("{}: {msg}", path.display()));
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
    let sequence = match table.remove("sequence") {
        Some(v) => Some(v.try_into::<SequenceSpec>().map_err(|e| invalid(format!("sequence: {e}")))?),
        None => None,
    };
    let scene: SceneSpec = table.try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
    scene.validate().map_err(|e| invalid(e.to_string()))?;
    if let Some(seq) = &sequence {
        if seq.frames == 0 {
            return Err(invalid("sequence.frames: must be >= 1".into()));
        }
    }
    Ok(SceneFile { scene, sequence })
}
