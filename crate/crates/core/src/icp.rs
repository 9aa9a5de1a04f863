//! Confidence-weighted point-to-plane ICP.
//!
//! Each iteration re-associates the target against the currently corrected
//! source, solves per-pair confidences, and minimizes
//! `Σ w_ij · (n_i · (x'_j − x_i))²` over a small-angle rotation and a
//! translation. The accumulated correction is the transformation residual
//! `(δR, δt)`; composing it with the prediction gives the rectified pose.

use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::correspond::{
    associate_posed, icp_weights, solve_confidences, CorrespondenceSet, IndexedCloud,
    DEFAULT_GAMMA, DEFAULT_MAX_DIST,
};
use crate::error::{Error, Result};
use crate::se3::Pose;

type Normal6 = SMatrix<f64, 6, 6>;
type Vector6 = SVector<f64, 6>;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub translation_tol: f64,
    pub rotation_tol: f64,
    pub epsilon: f64,
    pub max_dist: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            translation_tol: 1e-4,
            rotation_tol: 1e-4,
            epsilon: DEFAULT_EPSILON,
            max_dist: DEFAULT_MAX_DIST,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("icp.max_iterations", "must be >= 1"));
        }
        for (name, v) in [
            ("icp.translation_tol", self.translation_tol),
            ("icp.rotation_tol", self.rotation_tol),
            ("icp.max_dist", self.max_dist),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("icp.epsilon", "must be >= 0"));
        }
        Ok(())
    }
}

/// How correspondences are weighted inside ICP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// `m / max(m) + ε` with closed-form range confidences at this `gamma`.
    Confidence { gamma: f64 },
    /// Every usable pair counts equally.
    Uniform,
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Confidence {
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub delta: Pose,
    pub iterations_used: usize,
    /// Weighted objective at the last association, normalized by `|P_t|`.
    pub final_objective: f64,
    pub converged: bool,
    /// Objective at the start of every iteration.
    pub objective_history: Vec<f64>,
}

/// Signed distance of `transformed_src` from the tangent plane at
/// `target_point`; `None` for the zero-normal sentinel.
pub fn point_to_plane_residual(
    target_point: &Vector3<f64>,
    target_normal: &Vector3<f64>,
    transformed_src: &Vector3<f64>,
) -> Option<f64> {
    if *target_normal == Vector3::zeros() {
        return None;
    }
    Some(target_normal.dot(&(transformed_src - target_point)))
}

/// `R* = δR·R_pred`, `t* = δR·t_pred + δt`.
pub fn rectify(pred: &Pose, delta: &Pose) -> Pose {
    delta.compose(pred)
}

fn weighted_pairs(cs: CorrespondenceSet, cfg: &IcpConfig, weighting: Weighting) -> Result<(CorrespondenceSet, Vec<f64>)> {
    let cs = match weighting {
        Weighting::Confidence { gamma } => solve_confidences(cs, gamma),
        Weighting::Uniform => cs.with_unit_confidence(),
    };
    let weights = icp_weights(&cs, cfg.epsilon)?;
    Ok((cs, weights))
}

/// Runs ICP from `P'_t = pred · source` toward `target` and returns the
/// residual correction `δ` such that `δ ∘ pred` best aligns the clouds.
pub fn icp_refine(
    target: &PointCloud,
    source: &IndexedCloud,
    pred: &Pose,
    cfg: &IcpConfig,
    weighting: Weighting,
) -> Result<IcpResult> {
    let mut delta = Pose::identity();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let norm = target.len() as f64;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let current = delta.compose(pred);
        let cs = associate_posed(target, source, &current, cfg.max_dist)?;
        let (cs, weights) = weighted_pairs(cs, cfg, weighting)?;

        let mut a = Normal6::zeros();
        let mut b = Vector6::zeros();
        let mut objective = 0.0;
        let mut usable = 0;
        for (pair, w) in cs.pairs.iter().zip(&weights) {
            let tp = &target.points()[pair.tgt_index];
            let xp = current.apply(&source.cloud.points()[pair.src_index].position);
            let Some(r) = point_to_plane_residual(&tp.position, &tp.normal, &xp) else {
                continue;
            };
            usable += 1;
            let mut j = Vector6::zeros();
            j.fixed_rows_mut::<3>(0).copy_from(&xp.cross(&tp.normal));
            j.fixed_rows_mut::<3>(3).copy_from(&tp.normal);
            a += j * j.transpose() * *w;
            b += j * (*w * r);
            objective += w * r * r;
        }
        history.push(objective / norm);

        if usable < 6 {
            return Err(Error::DegenerateGeometry {
                reason: "fewer than 6 pairs with valid normals".into(),
                usable_pairs: usable,
                condition: f64::INFINITY,
            });
        }
        let eig = a.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::DegenerateGeometry {
                reason: "point-to-plane normal equations are ill-conditioned".into(),
                usable_pairs: usable,
                condition,
            });
        }
        let step = a
            .cholesky()
            .ok_or_else(|| Error::DegenerateGeometry {
                reason: "normal equations are not positive definite".into(),
                usable_pairs: usable,
                condition,
            })?
            .solve(&(-b));

        let omega = Vector3::new(step[0], step[1], step[2]);
        let shift = Vector3::new(step[3], step[4], step[5]);
        let update = Pose::new(UnitQuaternion::from_scaled_axis(omega), shift);
        delta = update.compose(&delta);

        if shift.norm() < cfg.translation_tol && omega.norm() < cfg.rotation_tol {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        delta,
        iterations_used: iterations,
        final_objective: *history.last().unwrap_or(&0.0),
        converged,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_examples() {
        let n = Vector3::z();
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(point_to_plane_residual(&x, &n, &(x + Vector3::new(0.4, -0.3, 0.0))), Some(0.0));
        let r = point_to_plane_residual(&x, &n, &(x + Vector3::new(0.0, 0.0, 0.2))).unwrap();
        assert!((r - 0.2).abs() < 1e-15);
        let n = Vector3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        let r = point_to_plane_residual(&x, &n, &(x + Vector3::new(0.1, 0.1, 5.0))).unwrap();
        let oracle = n.dot(&Vector3::new(0.1, 0.1, 5.0));
        assert!((r - oracle).abs() < 1e-15);
        assert!((r - 0.2 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(point_to_plane_residual(&x, &Vector3::zeros(), &x), None);
    }

    #[test]
    fn rectify_examples() {
        let pred = Pose::from_euler(0.1, 0.0, 0.4, Vector3::new(1.0, 2.0, 0.0));
        let r = rectify(&pred, &Pose::identity());
        assert!((r.matrix() - pred.matrix()).norm() < 1e-12 && r.translation == pred.translation);
        let delta = Pose::from_euler(0.0, 0.2, -0.1, Vector3::new(0.0, 1.0, 3.0));
        let r = rectify(&Pose::identity(), &delta);
        assert!((r.matrix() - delta.matrix()).norm() < 1e-12);
        assert!((r.translation - delta.translation).norm() < 1e-12);

        let pred = Pose::from_axis_angle(Vector3::z(), 30f64.to_radians(), Vector3::x());
        let delta = Pose::from_axis_angle(Vector3::z(), 60f64.to_radians(), Vector3::y());
        let r = rectify(&pred, &delta);
        let r_oracle = delta.matrix() * pred.matrix();
        let t_oracle = delta.matrix() * Vector3::x() + Vector3::y();
        assert!((r.matrix() - r_oracle).norm() < 1e-12);
        assert!((r.matrix() - Pose::rot_z(std::f64::consts::FRAC_PI_2).matrix()).norm() < 1e-12);
        assert!((r.translation - t_oracle).norm() < 1e-12);
        assert!((r.translation - Vector3::new(0.5, 3f64.sqrt() / 2.0 + 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(IcpConfig::default().validate().is_ok());
        let bad = IcpConfig { max_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IcpConfig { rotation_tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
