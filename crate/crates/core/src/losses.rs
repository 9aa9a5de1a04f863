//! The self-supervised loss suite evaluated on a frame pair.
//!
//! Pose-dependent terms return a [`TermEval`]: the value, its gradient with
//! respect to the raw pose parameters `(w, x, y, z, tx, ty, tz)` and a
//! Gauss-Newton curvature estimate. Correspondences and confidences are held
//! fixed while differentiating.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::correspond::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::se3::{quat_params, rotation_quat_jacobian, Pose, POSE_PARAMS};

pub type PoseVector = SVector<f64, POSE_PARAMS>;
pub type PoseMatrix = SMatrix<f64, POSE_PARAMS, POSE_PARAMS>;
type PointJacobian = SMatrix<f64, 3, POSE_PARAMS>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Spherical reprojection (or Euclidean, when substituted).
    pub w1: f64,
    /// Range alignment.
    pub w2: f64,
    /// Transformation residual.
    pub w3: f64,
    /// Flow supervision.
    pub w4: f64,
    pub gamma: f64,
    pub flow_layer_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 100.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            gamma: crate::correspond::DEFAULT_GAMMA,
            flow_layer_weights: vec![1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if self.flow_layer_weights.is_empty()
            || self
                .flow_layer_weights
                .iter()
                .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid(
                "flow_layer_weights",
                "need at least one finite weight, all >= 0",
            ));
        }
        Ok(())
    }
}

/// Log-variance parameter `s` of the homoscedastic wrapper `u_s(l) = e^{-s}·l + s`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyParam(pub f64);

impl UncertaintyParam {
    pub fn apply(self, l: f64) -> f64 {
        (-self.0).exp() * l + self.0
    }

    /// `∂u/∂s` at `l`.
    pub fn ds(self, l: f64) -> f64 {
        1.0 - (-self.0).exp() * l
    }

    /// Multiplier `e^{-s}` applied to the wrapped loss.
    pub fn scale(self) -> f64 {
        (-self.0).exp()
    }
}

pub fn uncertainty(s: UncertaintyParam, l: f64) -> f64 {
    s.apply(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sr: f64,
    pub l_ra: f64,
    pub l_tr: f64,
    pub l_fs: f64,
    pub total: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermEval {
    pub value: f64,
    pub gradient: PoseVector,
    pub gauss_newton: PoseMatrix,
}

impl TermEval {
    fn zero() -> Self {
        Self {
            value: 0.0,
            gradient: PoseVector::zeros(),
            gauss_newton: PoseMatrix::zeros(),
        }
    }
}

/// A pose-dependent term that also depends on an uncertainty parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrappedEval {
    pub term: TermEval,
    pub d_alpha: f64,
    pub d_beta: f64,
}

/// The clouds and pose through which pair positions are recomputed:
/// `x_i` from `target`, `x'_j = pose · source_j`.
#[derive(Debug, Clone, Copy)]
pub struct PairGeometry<'a> {
    pub target: &'a PointCloud,
    pub source: &'a PointCloud,
    pub pose: &'a Pose,
}

struct Chart {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    d_rotation: [Matrix3<f64>; 4],
}

impl Chart {
    fn new(pose: &Pose) -> Self {
        let q: Vector4<f64> = quat_params(pose);
        Self {
            rotation: pose.matrix(),
            translation: pose.translation,
            d_rotation: rotation_quat_jacobian(&q),
        }
    }

    /// `x' = R s + t` and `∂x'/∂θ`.
    fn transform(&self, s: &Vector3<f64>) -> (Vector3<f64>, PointJacobian) {
        let mut jac = PointJacobian::zeros();
        for k in 0..4 {
            jac.set_column(k, &(self.d_rotation[k] * s));
        }
        jac.fixed_view_mut::<3, 3>(0, 4).copy_from(&Matrix3::identity());
        (self.rotation * s + self.translation, jac)
    }
}

fn require_pairs(cs: &CorrespondenceSet) -> Result<()> {
    if cs.is_empty() {
        Err(Error::NoCorrespondences)
    } else {
        Ok(())
    }
}

/// Angle between the origin-to-point rays of `a` and `b`, in radians.
pub fn angular_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Negative confidence-weighted mean cosine between matched rays, normalized
/// by `|P_t|`. With `use_confidence` off every confidence counts as 1.
pub fn spherical_loss(
    cs: &CorrespondenceSet,
    geom: PairGeometry<'_>,
    use_confidence: bool,
) -> Result<TermEval> {
    require_pairs(cs)?;
    let chart = Chart::new(geom.pose);
    let n = cs.target_len as f64;
    let mut out = TermEval::zero();
    for pair in &cs.pairs {
        let m = if use_confidence { pair.confidence } else { 1.0 };
        let x = geom.target.points()[pair.tgt_index].position;
        let (xp, jac) = chart.transform(&geom.source.points()[pair.src_index].position);
        let rp = xp.norm();
        let xh = x / x.norm();
        let xph = xp / rp;
        let c = xh.dot(&xph);
        out.value -= m * c;
        let dc = (xh - xph * c) / rp;
        out.gradient -= jac.transpose() * dc * m;
        // 1 − cos = ½‖x̂' − x̂‖²; curvature of the unit-ray residual
        let jr = (Matrix3::identity() - xph * xph.transpose()) / rp * jac;
        out.gauss_newton += jr.transpose() * jr * m;
    }
    out.value /= n;
    out.gradient /= n;
    out.gauss_newton /= n;
    Ok(out)
}

/// Confidence-weighted squared range residual with the `−γ log m` barrier.
pub fn range_alignment_loss(
    cs: &CorrespondenceSet,
    geom: PairGeometry<'_>,
    gamma: f64,
) -> Result<TermEval> {
    require_pairs(cs)?;
    let chart = Chart::new(geom.pose);
    let n = cs.target_len as f64;
    let mut out = TermEval::zero();
    for pair in &cs.pairs {
        let m = pair.confidence;
        let x = geom.target.points()[pair.tgt_index].position;
        let (xp, jac) = chart.transform(&geom.source.points()[pair.src_index].position);
        let rp = xp.norm();
        let d = x.norm() - rp;
        out.value += m * d * d - gamma * m.ln();
        // ∂d/∂θ = −x̂'ᵀ J
        let jd = jac.transpose() * (xp / rp);
        out.gradient -= jd * (2.0 * m * d);
        out.gauss_newton += jd * jd.transpose() * (2.0 * m);
    }
    out.value /= n;
    out.gradient /= n;
    out.gauss_newton /= n;
    Ok(out)
}

/// Mean squared Euclidean pair distance (ablation substitute for the
/// spherical term).
pub fn euclidean_loss(cs: &CorrespondenceSet, geom: PairGeometry<'_>) -> Result<TermEval> {
    require_pairs(cs)?;
    let chart = Chart::new(geom.pose);
    let n = cs.len() as f64;
    let mut out = TermEval::zero();
    for pair in &cs.pairs {
        let x = geom.target.points()[pair.tgt_index].position;
        let (xp, jac) = chart.transform(&geom.source.points()[pair.src_index].position);
        let e = xp - x;
        out.value += e.norm_squared();
        out.gradient += jac.transpose() * e * 2.0;
        out.gauss_newton += jac.transpose() * jac * 2.0;
    }
    out.value /= n;
    out.gradient /= n;
    out.gauss_newton /= n;
    Ok(out)
}

/// `u_α(‖t* − t‖²) + u_β(‖R* − R‖²_F)` with the rectified pose held as a
/// constant target.
pub fn transformation_residual_loss(
    pred: &Pose,
    rectified: &Pose,
    s_alpha: UncertaintyParam,
    s_beta: UncertaintyParam,
) -> WrappedEval {
    let chart = Chart::new(pred);
    let dt = pred.translation - rectified.translation;
    let dr = chart.rotation - rectified.matrix();
    let lt = dt.norm_squared();
    let lr = dr.norm_squared();
    let (ea, eb) = (s_alpha.scale(), s_beta.scale());

    let mut term = TermEval::zero();
    term.value = s_alpha.apply(lt) + s_beta.apply(lr);
    for k in 0..4 {
        term.gradient[k] = eb * 2.0 * dr.dot(&chart.d_rotation[k]);
        for l in 0..4 {
            term.gauss_newton[(k, l)] = eb * 2.0 * chart.d_rotation[k].dot(&chart.d_rotation[l]);
        }
    }
    for k in 0..3 {
        term.gradient[4 + k] = ea * 2.0 * dt[k];
        term.gauss_newton[(4 + k, 4 + k)] = ea * 2.0;
    }
    WrappedEval {
        term,
        d_alpha: s_alpha.ds(lt),
        d_beta: s_beta.ds(lr),
    }
}

/// Scene-flow target of each point under the rectified motion:
/// `F*(x) = (I − R*)ᵀ x + R*ᵀ t*`.
pub fn flow_target(points: &PointCloud, rectified: &Pose) -> Vec<Vector3<f64>> {
    let r = rectified.matrix();
    let rt = r.transpose();
    let shift = rt * rectified.translation;
    let a = (Matrix3::identity() - r).transpose();
    points
        .points()
        .iter()
        .map(|p| a * p.position + shift)
        .collect()
}

/// Layer-weighted flow error `Σ_h w_h · mean_i u_α(‖F_h − F*_h‖²)`.
pub fn flow_supervision_loss(
    predicted: &[Vec<Vector3<f64>>],
    targets: &[Vec<Vector3<f64>>],
    layer_weights: &[f64],
    s_alpha: UncertaintyParam,
) -> Result<f64> {
    if predicted.len() != layer_weights.len() || targets.len() != layer_weights.len() {
        return Err(Error::Shape(format!(
            "{} predicted layers, {} target layers, {} layer weights",
            predicted.len(),
            targets.len(),
            layer_weights.len()
        )));
    }
    let mut total = 0.0;
    for (h, ((pred, target), w)) in predicted.iter().zip(targets).zip(layer_weights).enumerate() {
        if pred.len() != target.len() {
            return Err(Error::Shape(format!(
                "layer {h}: {} predicted flows vs {} targets",
                pred.len(),
                target.len()
            )));
        }
        if pred.is_empty() {
            continue;
        }
        let sum: f64 = pred
            .iter()
            .zip(target)
            .map(|(f, g)| s_alpha.apply((f - g).norm_squared()))
            .sum();
        total += w * sum / pred.len() as f64;
    }
    Ok(total)
}

/// Flow supervision where the prediction is the rigid flow induced by `pred`
/// at the target points, `F(x) = x − Rᵀ(x − t)`, scored against the flow of
/// the rectified pose. Every layer sees the same points.
pub fn rigid_flow_loss(
    points: &PointCloud,
    pred: &Pose,
    rectified: &Pose,
    layer_weights: &[f64],
    s_alpha: UncertaintyParam,
) -> WrappedEval {
    let layer_sum: f64 = layer_weights.iter().sum();
    let mut term = TermEval::zero();
    if points.is_empty() || layer_sum == 0.0 {
        return WrappedEval {
            term,
            d_alpha: 0.0,
            d_beta: 0.0,
        };
    }
    let chart = Chart::new(pred);
    let rt = chart.rotation.transpose();
    let rect_rt = rectified.matrix().transpose();
    let mut sq_sum = 0.0;
    let mut jac = PointJacobian::zeros();
    for p in points.points() {
        let x = p.position;
        let local = x - pred.translation;
        let e = rect_rt * (x - rectified.translation) - rt * local;
        sq_sum += e.norm_squared();
        for k in 0..4 {
            jac.set_column(k, &(-(chart.d_rotation[k].transpose() * local)));
        }
        jac.fixed_view_mut::<3, 3>(0, 4).copy_from(&rt);
        term.gradient += jac.transpose() * e * 2.0;
        term.gauss_newton += jac.transpose() * jac * 2.0;
    }
    let n = points.len() as f64;
    let mean_sq = sq_sum / n;
    let scale = layer_sum * s_alpha.scale() / n;
    term.value = layer_sum * s_alpha.apply(mean_sq);
    term.gradient *= scale;
    term.gauss_newton *= scale;
    WrappedEval {
        term,
        d_alpha: layer_sum * s_alpha.ds(mean_sq),
        d_beta: 0.0,
    }
}

/// Component values of one frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l_sr: f64,
    pub l_ra: f64,
    pub l_tr: f64,
    pub l_fs: f64,
    pub pair_count: usize,
}

pub fn composite_loss(components: &LossComponents, weights: &LossWeights) -> LossReport {
    let c = components;
    LossReport {
        l_sr: c.l_sr,
        l_ra: c.l_ra,
        l_tr: c.l_tr,
        l_fs: c.l_fs,
        total: weights.w1 * c.l_sr + weights.w2 * c.l_ra + weights.w3 * c.l_tr + weights.w4 * c.l_fs,
        pair_count: c.pair_count,
    }
}
