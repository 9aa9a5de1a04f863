//! Nearest-neighbor correspondences between the current sweep and the
//! motion-compensated previous sweep, with per-pair confidences.
//!
//! The mapping is target-centric: every target point `x_i ∈ P_t` is paired
//! with its nearest neighbor `x'_j` in `P'_t = pose · P_{t-1}`. Rigid motions
//! preserve distances, so the index is built once over the untransformed
//! source and queried with `pose⁻¹ · x_i`.

use nalgebra::Vector3;

use crate::cloud::{NnIndex, PointCloud};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Lower bound on a confidence; keeps `-γ log m` and the ICP weights finite.
pub const MIN_CONFIDENCE: f64 = 1e-3;
pub const DEFAULT_GAMMA: f64 = 1e-3;
pub const DEFAULT_MAX_DIST: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub src_index: usize,
    pub tgt_index: usize,
    pub euclid_dist: f64,
    /// `r(x_i) − r(x'_j)`
    pub range_diff: f64,
    pub cos_angle: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<CorrespondencePair>,
    /// `|P_t|`, the normalizer used by every loss term.
    pub target_len: usize,
}

/// A cloud together with its nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct IndexedCloud {
    pub cloud: PointCloud,
    pub index: NnIndex,
}

impl IndexedCloud {
    pub fn new(cloud: PointCloud) -> Result<Self> {
        let index = cloud.build_index()?;
        Ok(Self { cloud, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn confidence_summary(&self) -> Option<ConfidenceSummary> {
        if self.pairs.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for p in &self.pairs {
            min = min.min(p.confidence);
            max = max.max(p.confidence);
            sum += p.confidence;
        }
        Some(ConfidenceSummary {
            min,
            mean: sum / self.pairs.len() as f64,
            max,
        })
    }

    /// Sets every confidence to 1, as when confidence weighting is disabled.
    pub fn with_unit_confidence(mut self) -> Self {
        for p in &mut self.pairs {
            p.confidence = 1.0;
        }
        self
    }
}

fn make_pair(src_index: usize, tgt_index: usize, x: &Vector3<f64>, xp: &Vector3<f64>) -> CorrespondencePair {
    let rx = x.norm();
    let rxp = xp.norm();
    CorrespondencePair {
        src_index,
        tgt_index,
        euclid_dist: (xp - x).norm(),
        range_diff: rx - rxp,
        cos_angle: (x.dot(xp) / (rx * rxp)).clamp(-1.0, 1.0),
        confidence: 1.0,
    }
}

/// Pairs each target point with its nearest neighbor in `pose · source`,
/// discarding pairs farther apart than `max_dist`.
pub fn associate_posed(
    target: &PointCloud,
    source: &IndexedCloud,
    pose: &Pose,
    max_dist: f64,
) -> Result<CorrespondenceSet> {
    let inv = pose.inverse();
    let src_points = source.cloud.points();
    let mut pairs = Vec::with_capacity(target.len());
    for (i, p) in target.points().iter().enumerate() {
        let hit = source.index.nearest(&inv.apply(&p.position));
        let xp = pose.apply(&src_points[hit.index].position);
        let pair = make_pair(hit.index, i, &p.position, &xp);
        if pair.euclid_dist <= max_dist {
            pairs.push(pair);
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(CorrespondenceSet {
        pairs,
        target_len: target.len(),
    })
}

/// Pairs each target point with its nearest neighbor in an already
/// transformed source cloud.
pub fn associate(
    target: &PointCloud,
    transformed_src: &PointCloud,
    max_dist: f64,
) -> Result<CorrespondenceSet> {
    if target.is_empty() || transformed_src.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let source = IndexedCloud::new(transformed_src.clone())?;
    associate_posed(target, &source, &Pose::identity(), max_dist)
}

/// Per-pair range-alignment objective `m·d² − γ·ln m`.
pub fn confidence_objective(m: f64, range_diff: f64, gamma: f64) -> f64 {
    m * range_diff * range_diff - gamma * m.ln()
}

/// Minimizer of [`confidence_objective`] over `[MIN_CONFIDENCE, 1]`.
pub fn optimal_confidence(range_diff: f64, gamma: f64) -> f64 {
    let d2 = range_diff * range_diff;
    if d2 == 0.0 {
        return 1.0;
    }
    (gamma / d2).clamp(MIN_CONFIDENCE, 1.0)
}

pub fn solve_confidences(mut cs: CorrespondenceSet, gamma: f64) -> CorrespondenceSet {
    assert!(gamma > 0.0, "gamma must be positive");
    for p in &mut cs.pairs {
        p.confidence = optimal_confidence(p.range_diff, gamma);
    }
    cs
}

/// ICP weights `m / max(m) + ε`.
pub fn icp_weights(cs: &CorrespondenceSet, epsilon: f64) -> Result<Vec<f64>> {
    let max = cs
        .pairs
        .iter()
        .map(|p| p.confidence)
        .fold(f64::NEG_INFINITY, f64::max);
    if cs.pairs.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(cs.pairs.iter().map(|p| p.confidence / max + epsilon).collect())
}
