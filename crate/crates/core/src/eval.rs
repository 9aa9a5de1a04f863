//! Segment-based odometry drift in the style of the KITTI benchmark.
//!
//! For every start frame and every segment length, the first frame whose
//! ground-truth path length reaches the segment length closes the segment.
//! The relative-pose error over the segment is divided by the nominal
//! length, averaged per length and then across lengths.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::se3::Pose;

pub const DEFAULT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Absolute poses (sensor-to-world), one per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Re-expresses every pose relative to the first, so the first becomes
    /// the identity.
    pub fn anchored(&self) -> Trajectory {
        let Some(first) = self.poses.first() else {
            return self.clone();
        };
        let inv = first.inverse();
        Trajectory::new(self.poses.iter().map(|p| inv.compose(p)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthDrift {
    pub length: f64,
    pub segments: usize,
    /// Percent.
    pub t_rel: f64,
    /// Degrees per 100 m.
    pub r_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftResult {
    pub t_rel: f64,
    pub r_rel: f64,
    /// Only lengths with at least one segment.
    pub per_length: Vec<LengthDrift>,
}

impl DriftResult {
    /// True when no segment fit inside the trajectory.
    pub fn is_empty(&self) -> bool {
        self.per_length.is_empty()
    }
}

/// Cumulative ground distance travelled, starting at 0.
pub fn path_length(traj: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    for (k, p) in traj.poses.iter().enumerate() {
        if k > 0 {
            acc += (p.translation - traj.poses[k - 1].translation).norm();
        }
        out.push(acc);
    }
    out
}

/// First frame `j > start` with `dist[j] − dist[start] ≥ length`.
pub fn segment_end(dist: &[f64], start: usize, length: f64) -> Option<usize> {
    let target = dist[start] + length;
    let from = start + 1;
    let offset = dist[from.min(dist.len())..].partition_point(|&d| d < target);
    let j = from + offset;
    (j < dist.len()).then_some(j)
}

pub fn segment_errors(est: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> Result<DriftResult> {
    segment_errors_strided(est, gt, lengths, 1)
}

pub fn segment_errors_strided(
    est: &Trajectory,
    gt: &Trajectory,
    lengths: &[f64],
    stride: usize,
) -> Result<DriftResult> {
    if est.len() != gt.len() {
        return Err(Error::Shape(format!(
            "estimated trajectory has {} poses, ground truth {}",
            est.len(),
            gt.len()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("eval.stride", "must be >= 1"));
    }
    let dist = path_length(gt);
    let mut per_length = Vec::new();
    for &length in lengths {
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        let mut segments = 0;
        for start in (0..gt.len()).step_by(stride) {
            let Some(end) = segment_end(&dist, start, length) else {
                continue;
            };
            let delta_gt = gt.poses[start].inverse().compose(&gt.poses[end]);
            let delta_est = est.poses[start].inverse().compose(&est.poses[end]);
            let err = delta_est.inverse().compose(&delta_gt);
            t_sum += err.translation.norm() / length;
            r_sum += err.rotation_angle() / length;
            segments += 1;
        }
        if segments > 0 {
            let n = segments as f64;
            per_length.push(LengthDrift {
                length,
                segments,
                t_rel: 100.0 * t_sum / n,
                r_rel: (r_sum / n).to_degrees() * 100.0,
            });
        }
    }
    let (t_rel, r_rel) = if per_length.is_empty() {
        (0.0, 0.0)
    } else {
        let n = per_length.len() as f64;
        (
            per_length.iter().map(|l| l.t_rel).sum::<f64>() / n,
            per_length.iter().map(|l| l.r_rel).sum::<f64>() / n,
        )
    };
    Ok(DriftResult {
        t_rel,
        r_rel,
        per_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn line(n: usize, step: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|k| Pose::from_translation(Vector3::new(k as f64 * step, 0.0, 0.0)))
                .collect(),
        )
    }

    #[test]
    fn path_length_examples() {
        assert_eq!(path_length(&line(1, 1.0)), vec![0.0]);
        assert_eq!(path_length(&line(3, 1.0)), vec![0.0, 1.0, 2.0]);
        let square = Trajectory::new(
            [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]
                .iter()
                .map(|&(x, y)| Pose::from_translation(Vector3::new(x, y, 0.0)))
                .collect(),
        );
        assert_eq!(path_length(&square), vec![0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn segment_end_is_minimal() {
        let dist = [0.0, 0.4, 1.0, 1.7, 2.0, 2.5, 4.0];
        for start in 0..dist.len() {
            for length in [0.3, 1.0, 1.5, 2.0, 3.9, 10.0] {
                let scan = (start + 1..dist.len()).find(|&j| dist[j] - dist[start] >= length);
                assert_eq!(segment_end(&dist, start, length), scan, "start {start} len {length}");
            }
        }
    }

    #[test]
    fn identical_trajectories_have_zero_drift() {
        let gt = line(300, 1.0);
        let r = segment_errors(&gt, &gt, &[100.0, 200.0]).unwrap();
        assert_eq!(r.t_rel, 0.0);
        assert_eq!(r.r_rel, 0.0);
        assert_eq!(r.per_length.len(), 2);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(segment_errors(&line(3, 1.0), &line(4, 1.0), &[1.0]).is_err());
    }

    #[test]
    fn too_short_gives_empty_result() {
        let r = segment_errors(&line(10, 1.0), &line(10, 1.0), &DEFAULT_LENGTHS).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn breakdown_average_matches_headline() {
        let gt = line(900, 1.0);
        let est = Trajectory::new(
            gt.poses
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let wobble = 0.002 * (k as f64 * 0.1).sin();
                    Pose::from_euler(0.0, 0.0, wobble, p.translation * 1.003)
                })
                .collect(),
        );
        let r = segment_errors(&est, &gt, &DEFAULT_LENGTHS).unwrap();
        let n = r.per_length.len() as f64;
        let t: f64 = r.per_length.iter().map(|l| l.t_rel).sum::<f64>() / n;
        let rr: f64 = r.per_length.iter().map(|l| l.r_rel).sum::<f64>() / n;
        assert!((t - r.t_rel).abs() < 1e-9);
        assert!((rr - r.r_rel).abs() < 1e-9);
        assert!(r.t_rel > 0.0 && r.r_rel > 0.0);
    }
}
