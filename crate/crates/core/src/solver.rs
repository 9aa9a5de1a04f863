//! Per-pair ego-motion estimation by direct minimization of the composite
//! self-supervised loss, and sequence chaining.
//!
//! Each outer iteration moves the previous sweep by the current pose, runs
//! confidence-weighted ICP to obtain the rectified pose, evaluates every
//! loss term and takes a backtracking descent step on the pose and the two
//! log-variance parameters. The pose step is the gradient preconditioned by
//! the Gauss-Newton curvature of the terms, taken in the tangent space of the
//! quaternion chart.

use std::io::Write;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::correspond::{associate_posed, solve_confidences, ConfidenceSummary, IndexedCloud};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::icp::{icp_refine, rectify, IcpConfig, Weighting};
use crate::losses::{
    composite_loss, euclidean_loss, range_alignment_loss, rigid_flow_loss, spherical_loss,
    transformation_residual_loss, LossComponents, LossReport, LossWeights, PairGeometry,
    PoseMatrix, PoseVector, UncertaintyParam,
};
use crate::se3::{retract, tangent_basis, Pose};

/// Surface-term weight used by the solver. Lower than the training-time
/// weight: re-sampled sweeps of a flat ground coincide ring-for-ring at zero
/// motion, which gives those pairs full confidence and lets a heavily
/// weighted surface term pull the estimate toward identity.
pub const SOLVER_W1: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Identity,
    ConstantVelocity,
}

/// The surface-alignment term occupying the `w1` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceTerm {
    Spherical,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    /// Initial multiplier on the preconditioned step; halved on every
    /// rejected trial.
    pub step_size: f64,
    pub convergence_tol: f64,
    pub max_backtracks: usize,
    /// Log-variance parameters are clamped to `[-bound, bound]`.
    pub log_variance_bound: f64,
    pub weights: LossWeights,
    pub icp: IcpConfig,
    pub init_mode: InitMode,
    pub use_confidence: bool,
    pub surface_term: SurfaceTerm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 30,
            step_size: 1.0,
            convergence_tol: 1e-6,
            max_backtracks: 12,
            log_variance_bound: 3.0,
            weights: LossWeights {
                w1: SOLVER_W1,
                ..LossWeights::default()
            },
            icp: IcpConfig::default(),
            init_mode: InitMode::Identity,
            use_confidence: true,
            surface_term: SurfaceTerm::Spherical,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 {
            return Err(Error::invalid("solver.max_outer_iterations", "must be >= 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("solver.step_size", "must be > 0"));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::invalid("solver.convergence_tol", "must be >= 0"));
        }
        if !(self.log_variance_bound.is_finite() && self.log_variance_bound >= 0.0) {
            return Err(Error::invalid("solver.log_variance_bound", "must be >= 0"));
        }
        self.weights.validate()?;
        self.icp.validate()
    }

    fn weighting(&self) -> Weighting {
        if self.use_confidence {
            Weighting::Confidence {
                gamma: self.weights.gamma,
            }
        } else {
            Weighting::Uniform
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EstimateFlags {
    /// No correspondences at the initial pose, or an unusable input sweep.
    pub association_failed: bool,
    /// ICP reported degenerate geometry; the pair was finished without the
    /// transformation-residual term.
    pub icp_degenerate: bool,
}

impl EstimateFlags {
    pub fn any(&self) -> bool {
        self.association_failed || self.icp_degenerate
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.association_failed {
            parts.push("association_failed");
        }
        if self.icp_degenerate {
            parts.push("icp_degenerate");
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub pose: Pose,
    pub report: LossReport,
    pub rectified: Pose,
    pub confidence_summary: Option<ConfidenceSummary>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub flags: EstimateFlags,
    pub s_alpha: f64,
    pub s_beta: f64,
}

impl PairEstimate {
    fn failed(init: &Pose) -> Self {
        PairEstimate {
            pose: *init,
            report: LossReport::default(),
            rectified: *init,
            confidence_summary: None,
            outer_iterations: 0,
            converged: false,
            flags: EstimateFlags {
                association_failed: true,
                icp_degenerate: false,
            },
            s_alpha: 0.0,
            s_beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct State {
    pose: Pose,
    s_alpha: f64,
    s_beta: f64,
}

struct Evaluation {
    report: LossReport,
    gradient: PoseVector,
    gauss_newton: PoseMatrix,
    d_alpha: f64,
    d_beta: f64,
    confidence: Option<ConfidenceSummary>,
}

struct PairProblem<'a> {
    curr: &'a PointCloud,
    source: IndexedCloud,
    cfg: &'a SolverConfig,
}

impl PairProblem<'_> {
    fn evaluate(&self, state: &State, rectified: &Pose, w3: f64) -> Result<Evaluation> {
        let cfg = self.cfg;
        let w = &cfg.weights;
        let cs = associate_posed(self.curr, &self.source, &state.pose, cfg.icp.max_dist)?;
        let cs = if cfg.use_confidence {
            solve_confidences(cs, w.gamma)
        } else {
            cs.with_unit_confidence()
        };
        let geom = PairGeometry {
            target: self.curr,
            source: &self.source.cloud,
            pose: &state.pose,
        };
        let surface = match cfg.surface_term {
            SurfaceTerm::Spherical => spherical_loss(&cs, geom, cfg.use_confidence)?,
            SurfaceTerm::Euclidean => euclidean_loss(&cs, geom)?,
        };
        let range = range_alignment_loss(&cs, geom, w.gamma)?;
        let (sa, sb) = (UncertaintyParam(state.s_alpha), UncertaintyParam(state.s_beta));
        let residual = transformation_residual_loss(&state.pose, rectified, sa, sb);
        let flow = rigid_flow_loss(self.curr, &state.pose, rectified, &w.flow_layer_weights, sa);

        let weights = LossWeights { w3, ..w.clone() };
        let report = composite_loss(
            &LossComponents {
                l_sr: surface.value,
                l_ra: range.value,
                l_tr: residual.term.value,
                l_fs: flow.term.value,
                pair_count: cs.len(),
            },
            &weights,
        );
        let gradient = surface.gradient * w.w1
            + range.gradient * w.w2
            + residual.term.gradient * w3
            + flow.term.gradient * w.w4;
        let gauss_newton = surface.gauss_newton * w.w1
            + range.gauss_newton * w.w2
            + residual.term.gauss_newton * w3
            + flow.term.gauss_newton * w.w4;
        Ok(Evaluation {
            report,
            gradient,
            gauss_newton,
            d_alpha: w3 * residual.d_alpha + w.w4 * flow.d_alpha,
            d_beta: w3 * residual.d_beta,
            confidence: cs.confidence_summary(),
        })
    }
}

/// Preconditioned descent direction in the tangent space `(ω, v)`.
fn descent_direction(pose: &Pose, eval: &Evaluation) -> SVector<f64, 6> {
    let basis = tangent_basis(pose);
    let g: SVector<f64, 6> = basis.transpose() * eval.gradient;
    let mut h: SMatrix<f64, 6, 6> = basis.transpose() * eval.gauss_newton * basis;
    let scale = h.diagonal().max().max(1e-12);
    for k in 0..6 {
        h[(k, k)] += 1e-9 * scale;
    }
    match h.cholesky() {
        Some(ch) => -ch.solve(&g),
        None => -g,
    }
}

/// Estimates the frame-to-frame transform `x_curr = T · x_prev`.
///
/// Both clouds should already be downsampled and carry normals; `curr`
/// normals drive the point-to-plane residual.
pub fn estimate_pair(prev: &PointCloud, curr: &PointCloud, init: &Pose, cfg: &SolverConfig) -> PairEstimate {
    if prev.is_empty() || curr.is_empty() {
        return PairEstimate::failed(init);
    }
    let Ok(source) = IndexedCloud::new(prev.clone()) else {
        return PairEstimate::failed(init);
    };
    let problem = PairProblem { curr, source, cfg };
    let w = &cfg.weights;
    let mut use_icp = w.w3 > 0.0 || w.w4 > 0.0;
    let mut flags = EstimateFlags::default();
    let bound = cfg.log_variance_bound;

    let mut state = State {
        pose: init.renormalized(),
        s_alpha: 0.0,
        s_beta: 0.0,
    };
    let mut best: Option<(f64, State, LossReport, Pose, Option<ConfidenceSummary>)> = None;
    let mut last_total: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_outer_iterations {
        iterations += 1;
        let mut rectified = state.pose;
        if use_icp {
            match icp_refine(curr, &problem.source, &state.pose, &cfg.icp, cfg.weighting()) {
                Ok(res) => rectified = rectify(&state.pose, &res.delta),
                Err(_) => {
                    flags.icp_degenerate = true;
                    use_icp = false;
                }
            }
        }
        let w3 = if flags.icp_degenerate { 0.0 } else { w.w3 };

        let eval = match problem.evaluate(&state, &rectified, w3) {
            Ok(e) => e,
            Err(_) if best.is_none() => return PairEstimate::failed(init),
            Err(_) => break,
        };
        let total = eval.report.total;
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, state, eval.report, rectified, eval.confidence));
        }
        if let Some(prev_total) = last_total {
            if (prev_total - total).abs() < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
        last_total = Some(total);

        let direction = descent_direction(&state.pose, &eval);
        let mut eta = cfg.step_size;
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let trial = State {
                pose: retract(&state.pose, &(direction * eta)),
                s_alpha: (state.s_alpha - eta * eval.d_alpha).clamp(-bound, bound),
                s_beta: (state.s_beta - eta * eval.d_beta).clamp(-bound, bound),
            };
            if let Ok(t) = problem.evaluate(&trial, &rectified, w3) {
                if t.report.total < total {
                    if best.as_ref().is_none_or(|b| t.report.total < b.0) {
                        best = Some((t.report.total, trial, t.report, rectified, t.confidence));
                    }
                    state = trial;
                    accepted = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !accepted {
            // no descent along the preconditioned direction: stationary
            converged = true;
            break;
        }
    }

    let (_, state, report, rectified, confidence) = best.expect("at least one evaluation");
    PairEstimate {
        pose: state.pose,
        report,
        rectified,
        confidence_summary: confidence,
        outer_iterations: iterations,
        converged,
        flags,
        s_alpha: state.s_alpha,
        s_beta: state.s_beta,
    }
}

#[derive(Debug, Clone)]
pub struct PairRecord {
    /// Index of the later frame of the pair.
    pub frame: usize,
    pub estimate: PairEstimate,
    /// Why the sweep feeding this pair could not be used, if it failed to load.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub trajectory: Trajectory,
    pub pairs: Vec<PairRecord>,
}

/// Chains [`estimate_pair`] over consecutive sweeps. Absolute poses are
/// sensor-to-world with the first frame as the world: `A_k = A_{k-1} · T_k⁻¹`.
///
/// A sweep that fails to load is replaced by an empty cloud; the links
/// touching it keep their initial pose and are flagged.
pub fn run_sequence<I, E>(sweeps: I, cfg: &SolverConfig) -> SequenceResult
where
    I: IntoIterator<Item = std::result::Result<PointCloud, E>>,
    E: std::fmt::Display,
{
    let mut poses = Vec::new();
    let mut pairs: Vec<PairRecord> = Vec::new();
    let mut prev: Option<PointCloud> = None;
    let mut last_motion = Pose::identity();

    for (k, item) in sweeps.into_iter().enumerate() {
        let (cloud, failure) = match item {
            Ok(c) => (c, None),
            Err(e) => (PointCloud::default(), Some(e.to_string())),
        };
        match prev.take() {
            None => poses.push(Pose::identity()),
            Some(p) => {
                let init = match cfg.init_mode {
                    InitMode::Identity => Pose::identity(),
                    InitMode::ConstantVelocity => last_motion,
                };
                let estimate = estimate_pair(&p, &cloud, &init, cfg);
                last_motion = estimate.pose;
                let last = *poses.last().expect("first pose pushed");
                poses.push(Pose::compose(&last, &estimate.pose.inverse()));
                pairs.push(PairRecord {
                    frame: k,
                    estimate,
                    failure,
                });
            }
        }
        prev = Some(cloud);
    }
    SequenceResult {
        trajectory: Trajectory::new(poses),
        pairs,
    }
}

#[derive(Debug, Serialize)]
struct PairRow {
    frame_pair_id: usize,
    l_sr: f64,
    l_ra: f64,
    l_tr: f64,
    l_fs: f64,
    total: f64,
    pair_count: usize,
    conf_min: f64,
    conf_mean: f64,
    conf_max: f64,
    outer_iterations: usize,
    converged: bool,
    flags: String,
}

/// Writes one diagnostics row per pair: loss components, confidence summary,
/// iteration count and flags.
pub fn write_pair_csv<W: Write>(writer: W, pairs: &[PairRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for rec in pairs {
        let e = &rec.estimate;
        let c = e.confidence_summary.unwrap_or(ConfidenceSummary {
            min: f64::NAN,
            mean: f64::NAN,
            max: f64::NAN,
        });
        let mut flags = e.flags.describe();
        if let Some(reason) = &rec.failure {
            if !flags.is_empty() {
                flags.push('|');
            }
            flags.push_str("load_failed: ");
            flags.push_str(reason);
        }
        csv.serialize(PairRow {
            frame_pair_id: rec.frame,
            l_sr: e.report.l_sr,
            l_ra: e.report.l_ra,
            l_tr: e.report.l_tr,
            l_fs: e.report.l_fs,
            total: e.report.total,
            pair_count: e.report.pair_count,
            conf_min: c.min,
            conf_mean: c.mean,
            conf_max: c.max,
            outer_iterations: e.outer_iterations,
            converged: e.converged,
            flags,
        })
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { step_size: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { max_outer_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_clouds_are_flagged() {
        let init = Pose::rot_z(0.1);
        let e = estimate_pair(&PointCloud::default(), &PointCloud::default(), &init, &SolverConfig::default());
        assert!(e.flags.association_failed && !e.converged);
        assert_eq!(e.pose, init);
    }
}
