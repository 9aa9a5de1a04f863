//! Analytic loss gradients against central finite differences over the raw
//! pose parameters, with correspondences and confidences held fixed.

use nalgebra::Vector3;
use odom_core::cloud::{Point, PointCloud};
use odom_core::correspond::{associate_posed, solve_confidences, CorrespondenceSet, IndexedCloud};
use odom_core::losses::{
    euclidean_loss, range_alignment_loss, rigid_flow_loss, spherical_loss,
    transformation_residual_loss, PairGeometry, PoseVector, TermEval, UncertaintyParam,
};
use odom_core::se3::{Pose, POSE_PARAMS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;
const MAX_REL_ERR: f64 = 1e-4;
const CASES: u64 = 24;

struct Case {
    target: PointCloud,
    source: PointCloud,
    pose: Pose,
    cs: CorrespondenceSet,
}

fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2));
    Pose::from_axis_angle(axis, rng.random_range(-max_angle..max_angle), t * max_shift)
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let source: Vec<Point> = (0..n)
        .map(|_| {
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3));
            let r = rng.random_range(2.0..30.0);
            Point::new(dir.normalize() * r, Vector3::zeros(), 1.0)
        })
        .collect();
    let source = PointCloud::from_points(source, 0);
    let truth = random_pose(&mut rng, 0.05, 1.0);
    let target: Vec<Point> = source
        .points()
        .iter()
        .map(|p| {
            let noise = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            Point::new(truth.apply(&p.position) + noise, Vector3::zeros(), 1.0)
        })
        .collect();
    let target = PointCloud::from_points(target, 1);
    // evaluate away from the optimum so gradients are not vanishing
    let pose = truth.compose(&random_pose(&mut rng, 0.02, 0.3));
    let indexed = IndexedCloud::new(source.clone()).unwrap();
    let cs = solve_confidences(associate_posed(&target, &indexed, &pose, 5.0).unwrap(), 1e-3);
    Case { target, source, pose, cs }
}

fn finite_difference(params: [f64; POSE_PARAMS], f: impl Fn(&Pose) -> f64) -> PoseVector {
    let mut g = PoseVector::zeros();
    for k in 0..POSE_PARAMS {
        let (mut plus, mut minus) = (params, params);
        plus[k] += FD_STEP;
        minus[k] -= FD_STEP;
        g[k] = (f(&Pose::from_params(&plus)) - f(&Pose::from_params(&minus))) / (2.0 * FD_STEP);
    }
    g
}

fn relative_error(analytic: &PoseVector, numeric: &PoseVector) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-8)
}

fn check_term(name: &str, eval: impl Fn(&Case, &Pose) -> TermEval) {
    let mut worst: f64 = 0.0;
    for seed in 0..CASES {
        let case = random_case(seed);
        let analytic = eval(&case, &case.pose).gradient;
        let numeric = finite_difference(case.pose.params(), |p| eval(&case, p).value);
        let err = relative_error(&analytic, &numeric);
        assert!(err < MAX_REL_ERR, "{name} seed {seed}: relative error {err:e}");
        worst = worst.max(err);
    }
    println!("{name}: worst relative error {worst:.2e} over {CASES} cases");
}

fn geometry<'a>(case: &'a Case, pose: &'a Pose) -> PairGeometry<'a> {
    PairGeometry { target: &case.target, source: &case.source, pose }
}

#[test]
fn spherical_gradient_with_confidence() {
    check_term("L_sr", |c, p| spherical_loss(&c.cs, geometry(c, p), true).unwrap());
}

#[test]
fn spherical_gradient_without_confidence() {
    check_term("L_sr (unit M)", |c, p| spherical_loss(&c.cs, geometry(c, p), false).unwrap());
}

#[test]
fn range_alignment_gradient() {
    check_term("L_ra", |c, p| range_alignment_loss(&c.cs, geometry(c, p), 1e-3).unwrap());
}

#[test]
fn euclidean_gradient() {
    check_term("L_eu", |c, p| euclidean_loss(&c.cs, geometry(c, p)).unwrap());
}

#[test]
fn transformation_residual_gradient() {
    let target = Pose::from_euler(0.02, -0.01, 0.05, Vector3::new(0.8, 0.1, 0.0));
    let (sa, sb) = (UncertaintyParam(0.3), UncertaintyParam(-0.7));
    check_term("L_tr", |_, p| transformation_residual_loss(p, &target, sa, sb).term);
}

#[test]
fn rigid_flow_gradient() {
    let target = Pose::from_euler(0.02, -0.01, 0.05, Vector3::new(0.8, 0.1, 0.0));
    check_term("L_fs", |c, p| rigid_flow_loss(&c.target, p, &target, &[1.0, 0.1], UncertaintyParam(0.4)).term);
}

#[test]
fn uncertainty_parameter_gradients() {
    let case = random_case(99);
    let target = Pose::from_euler(0.02, -0.01, 0.05, Vector3::new(0.8, 0.1, 0.0));
    let h = 1e-6;
    for s in [-2.0, -0.3, 0.0, 0.7, 2.5] {
        let tr = |a: f64, b: f64| {
            transformation_residual_loss(&case.pose, &target, UncertaintyParam(a), UncertaintyParam(b))
        };
        let base = tr(s, -s);
        let fd_a = (tr(s + h, -s).term.value - tr(s - h, -s).term.value) / (2.0 * h);
        let fd_b = (tr(s, -s + h).term.value - tr(s, -s - h).term.value) / (2.0 * h);
        assert!((base.d_alpha - fd_a).abs() < 1e-6 * fd_a.abs().max(1.0));
        assert!((base.d_beta - fd_b).abs() < 1e-6 * fd_b.abs().max(1.0));

        let fs = |a: f64| rigid_flow_loss(&case.target, &case.pose, &target, &[1.0], UncertaintyParam(a));
        let fd = (fs(s + h).term.value - fs(s - h).term.value) / (2.0 * h);
        assert!((fs(s).d_alpha - fd).abs() < 1e-6 * fd.abs().max(1.0));
    }
}
