//! Synthetic spinning-LiDAR sweeps over analytic scenes.
//!
//! Scenes are built from planes, spheres and yawed boxes. Rays are cast on a
//! ring × azimuth grid from the sensor pose (sensor-to-world), hits are
//! returned in the sensor frame with analytic normals oriented toward the
//! sensor. Noise and mover selection are driven by a seeded ChaCha stream so
//! every sweep is reproducible bit for bit.

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::se3::Pose;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Infinite plane through `point`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Box rotated by `yaw_deg` about the vertical axis through `center`.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayGrid {
    pub azimuth_steps: usize,
    pub rings: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
}

impl Default for RayGrid {
    fn default() -> Self {
        Self {
            azimuth_steps: 1024,
            rings: 64,
            elevation_min_deg: -25.0,
            elevation_max_deg: 3.0,
            max_range: 80.0,
        }
    }
}

impl RayGrid {
    /// Unit ray directions in ring-major, azimuth-minor order.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let mut dirs = Vec::with_capacity(self.rings * self.azimuth_steps);
        for ring in 0..self.rings {
            let el = if self.rings == 1 {
                self.elevation_min_deg
            } else {
                self.elevation_min_deg
                    + (self.elevation_max_deg - self.elevation_min_deg) * ring as f64
                        / (self.rings - 1) as f64
            }
            .to_radians();
            for k in 0..self.azimuth_steps {
                let az = std::f64::consts::TAU * k as f64 / self.azimuth_steps as f64;
                dirs.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        dirs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub rays: RayGrid,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub mover_fraction: f64,
    #[serde(default)]
    pub mover_offset: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("primitives", "scene needs at least one primitive"));
        }
        if !(0.0..1.0).contains(&self.mover_fraction) {
            return Err(Error::invalid(
                "mover_fraction",
                format!("must lie in [0, 1), got {}", self.mover_fraction),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        if self.mover_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mover_offset", "must be finite"));
        }
        let r = &self.rays;
        if !(r.max_range.is_finite() && r.max_range > 0.0) {
            return Err(Error::invalid("rays.max_range", "must be > 0"));
        }
        if r.rings == 0 || r.azimuth_steps == 0 {
            return Err(Error::invalid("rays", "rings and azimuth_steps must be >= 1"));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            let bad = |reason: &str| Err(Error::invalid(format!("primitives[{k}]"), reason));
            match p {
                Primitive::Plane { normal, .. } if Vector3::from(*normal).norm() < 1e-12 => {
                    return bad("plane normal must be nonzero")
                }
                Primitive::Sphere { radius, .. } if !(*radius > 0.0) => {
                    return bad("sphere radius must be > 0")
                }
                Primitive::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                    return bad("box half extents must be > 0")
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// A street-like block: ground, two facades, parked boxes and a few
    /// spheres. Constrains all six degrees of freedom.
    pub fn street(seed: u64) -> Self {
        let mut primitives = vec![
            Primitive::Plane { point: [0.0, 0.0, -1.73], normal: [0.0, 0.0, 1.0] },
            Primitive::Plane { point: [0.0, 11.0, 0.0], normal: [0.0, -1.0, 0.0] },
            Primitive::Plane { point: [0.0, -9.0, 0.0], normal: [0.0, 1.0, 0.0] },
        ];
        let boxes = [
            ([8.0, 5.0, -0.9], [2.2, 0.9, 0.8], 5.0),
            ([-6.0, -4.5, -0.9], [2.0, 1.0, 0.8], -10.0),
            ([15.0, -5.0, -0.2], [1.5, 1.5, 1.5], 30.0),
            ([-14.0, 6.0, 0.0], [2.5, 1.0, 1.7], 75.0),
            ([25.0, 3.0, 0.5], [1.0, 3.0, 2.2], 0.0),
            ([-25.0, -2.0, 0.5], [1.0, 2.5, 2.2], 15.0),
        ];
        for (center, half_extents, yaw_deg) in boxes {
            primitives.push(Primitive::Box { center, half_extents, yaw_deg });
        }
        for (center, radius) in [
            ([4.0, -6.0, -0.5], 1.2),
            ([-3.0, 7.0, 0.0], 1.5),
            ([12.0, 8.0, 1.0], 1.0),
        ] {
            primitives.push(Primitive::Sphere { center, radius });
        }
        Self {
            primitives,
            rays: RayGrid::default(),
            noise_sigma: 0.0,
            mover_fraction: 0.0,
            mover_offset: [1.0, 0.0, 0.0],
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    distance: f64,
    normal: Vector3<f64>,
}

fn intersect(prim: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    match prim {
        Primitive::Plane { point, normal } => {
            let n = Vector3::from(*normal).normalize();
            let denom = n.dot(dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = n.dot(&(Vector3::from(*point) - origin)) / denom;
            (t > HIT_EPS).then_some(Hit { distance: t, normal: n })
        }
        Primitive::Sphere { center, radius } => {
            let c = Vector3::from(*center);
            let oc = origin - c;
            let b = dir.dot(&oc);
            let disc = b * b - (oc.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let root = disc.sqrt();
            let t = if -b - root > HIT_EPS { -b - root } else { -b + root };
            if t <= HIT_EPS {
                return None;
            }
            let normal = (origin + dir * t - c) / *radius;
            Some(Hit { distance: t, normal })
        }
        Primitive::Box { center, half_extents, yaw_deg } => {
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians());
            let o = rot.inverse() * (origin - Vector3::from(*center));
            let d = rot.inverse() * dir;
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut near_axis = 0;
            let mut far_axis = 0;
            for a in 0..3 {
                let h = half_extents[a];
                if d[a].abs() < 1e-15 {
                    if o[a].abs() > h {
                        return None;
                    }
                    continue;
                }
                let (t1, t2) = ((-h - o[a]) / d[a], (h - o[a]) / d[a]);
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if lo > t_near {
                    t_near = lo;
                    near_axis = a;
                }
                if hi < t_far {
                    t_far = hi;
                    far_axis = a;
                }
            }
            if t_near > t_far || t_far <= HIT_EPS {
                return None;
            }
            let (t, axis) = if t_near > HIT_EPS { (t_near, near_axis) } else { (t_far, far_axis) };
            let mut local = Vector3::zeros();
            local[axis] = (o[axis] + d[axis] * t).signum();
            Some(Hit { distance: t, normal: rot * local })
        }
    }
}

/// First hit of a world-frame ray, with the normal facing the ray origin.
fn cast(scene: &SceneSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for prim in &scene.primitives {
        if let Some(hit) = intersect(prim, origin, dir) {
            if best.is_none_or(|b| hit.distance < b.distance) {
                best = Some(hit);
            }
        }
    }
    best.filter(|h| h.distance <= scene.rays.max_range).map(|mut h| {
        if h.normal.dot(dir) > 0.0 {
            h.normal = -h.normal;
        }
        h
    })
}

/// World-frame surface samples seen from `sensor_pose`.
fn world_hits(scene: &SceneSpec, sensor_pose: &Pose) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let origin = sensor_pose.translation;
    scene
        .rays
        .directions()
        .iter()
        .filter_map(|d| {
            let dir = sensor_pose.rotation * d;
            cast(scene, &origin, &dir).map(|h| (origin + dir * h.distance, h.normal))
        })
        .collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_noise(points: &mut [Point], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for p in points {
        p.position += Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    }
}

/// Displaces `⌊fraction·n⌋` seeded-random points by `offset` (already
/// expressed in the cloud's frame). Returns the sorted displaced indices.
fn displace_movers(points: &mut [Point], fraction: f64, offset: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = (fraction * points.len() as f64).floor() as usize;
    if count == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let mut movers = order[..count].to_vec();
    movers.sort_unstable();
    for &i in &movers {
        points[i].position += offset;
    }
    movers
}

fn to_sensor_frame(
    hits: &[(Vector3<f64>, Vector3<f64>)],
    sensor_pose: &Pose,
    max_range: f64,
) -> (Vec<Point>, Vec<usize>) {
    let world_to_sensor = sensor_pose.inverse();
    let mut points = Vec::with_capacity(hits.len());
    let mut kept = Vec::with_capacity(hits.len());
    for (k, (pos, normal)) in hits.iter().enumerate() {
        let p = world_to_sensor.apply(pos);
        let range = p.norm();
        if range > max_range || range < crate::cloud::MIN_RANGE {
            continue;
        }
        let mut n = world_to_sensor.rotation * normal;
        if n.dot(&p) > 0.0 {
            n = -n;
        }
        points.push(Point::new(p, n, 1.0));
        kept.push(k);
    }
    (points, kept)
}

/// Casts the ray grid from `sensor_pose` (sensor-to-world) and returns the
/// hits in the sensor frame. Noise uses stream 0 of the scene seed.
pub fn render_sweep(scene: &SceneSpec, sensor_pose: &Pose) -> PointCloud {
    render_frame(scene, sensor_pose, 0, false).0
}

fn render_frame(scene: &SceneSpec, sensor_pose: &Pose, frame: u64, movers: bool) -> (PointCloud, Vec<usize>) {
    let hits = world_hits(scene, sensor_pose);
    let (mut points, _) = to_sensor_frame(&hits, sensor_pose, scene.rays.max_range);
    let mut rng = rng_for(scene.seed, 2 * frame);
    add_noise(&mut points, scene.noise_sigma, &mut rng);
    let moved = if movers {
        let offset = sensor_pose.rotation.inverse() * Vector3::from(scene.mover_offset);
        let mut rng = rng_for(scene.seed, 2 * frame + 1);
        displace_movers(&mut points, scene.mover_fraction, &offset, &mut rng)
    } else {
        Vec::new()
    };
    (PointCloud::from_points(points, frame), moved)
}

/// Two sweeps of the same surface samples and the motion relating them.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    /// Sweep at the identity sensor pose.
    pub prev: PointCloud,
    /// The same world samples seen after `gt`, plus noise and movers.
    pub curr: PointCloud,
    /// Frame-to-frame transform: `x_curr = gt · x_prev` for static points.
    pub gt: Pose,
    /// For every point of `curr`, the index of the same sample in `prev`.
    pub source_index: Vec<usize>,
    /// Indices into `curr` displaced as movers.
    pub movers: Vec<usize>,
}

/// Renders a pair related by the frame-to-frame transform `motion`.
///
/// The first sweep is cast at the identity pose; the second re-observes the
/// same surface samples from the moved sensor (pose `motion⁻¹`), so every
/// static point corresponds exactly to a point of the first sweep. Samples
/// beyond `max_range` from the moved sensor are dropped. Movers are displaced
/// by `mover_offset` in the world (first sweep) frame.
pub fn render_pair(scene: &SceneSpec, motion: &Pose) -> SyntheticPair {
    let identity = Pose::identity();
    let hits = world_hits(scene, &identity);
    let (mut prev_points, prev_kept) = to_sensor_frame(&hits, &identity, scene.rays.max_range);
    let sensor2 = motion.inverse();
    let (mut curr_points, curr_kept) = to_sensor_frame(&hits, &sensor2, scene.rays.max_range);

    // map hit index -> prev index
    let mut prev_of_hit = vec![usize::MAX; hits.len()];
    for (i, &h) in prev_kept.iter().enumerate() {
        prev_of_hit[h] = i;
    }
    let mut source_index = Vec::with_capacity(curr_kept.len());
    let mut keep = Vec::with_capacity(curr_kept.len());
    for &h in &curr_kept {
        keep.push(prev_of_hit[h] != usize::MAX);
        if prev_of_hit[h] != usize::MAX {
            source_index.push(prev_of_hit[h]);
        }
    }
    let mut flags = keep.into_iter();
    curr_points.retain(|_| flags.next().unwrap());

    add_noise(&mut prev_points, scene.noise_sigma, &mut rng_for(scene.seed, 0));
    add_noise(&mut curr_points, scene.noise_sigma, &mut rng_for(scene.seed, 2));
    let offset = motion.rotation * Vector3::from(scene.mover_offset);
    let movers = displace_movers(
        &mut curr_points,
        scene.mover_fraction,
        &offset,
        &mut rng_for(scene.seed, 3),
    );
    SyntheticPair {
        prev: PointCloud::from_points(prev_points, 0),
        curr: PointCloud::from_points(curr_points, 1),
        gt: *motion,
        source_index,
        movers,
    }
}

/// Sensor poses of a platform moving by `step` (expressed in its own frame)
/// every frame, starting at the identity.
pub fn constant_motion_poses(frames: usize, step: &Pose) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(frames);
    let mut current = Pose::identity();
    for _ in 0..frames {
        poses.push(current);
        current = current.compose(step);
    }
    poses
}

/// Renders one ray-cast sweep per sensor pose. Frames after the first carry
/// independently selected movers.
pub fn render_sequence(scene: &SceneSpec, sensor_poses: &[Pose]) -> Vec<PointCloud> {
    sensor_poses
        .iter()
        .enumerate()
        .map(|(k, pose)| render_frame(scene, pose, k as u64, k > 0).0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> RayGrid {
        RayGrid {
            azimuth_steps: 180,
            rings: 16,
            ..RayGrid::default()
        }
    }

    #[test]
    fn ground_plane_hits() {
        let scene = SceneSpec {
            primitives: vec![Primitive::Plane { point: [0.0, 0.0, -2.0], normal: [0.0, 0.0, 1.0] }],
            rays: RayGrid {
                elevation_min_deg: -30.0,
                elevation_max_deg: -5.0,
                ..small_grid()
            },
            noise_sigma: 0.0,
            mover_fraction: 0.0,
            mover_offset: [0.0; 3],
            seed: 1,
        };
        let cloud = render_sweep(&scene, &Pose::identity());
        assert!(!cloud.is_empty());
        for p in cloud.points() {
            assert!((p.position.z + 2.0).abs() < 1e-9);
            assert!((p.normal - Vector3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_ranges_match_quadratic() {
        let center = Vector3::new(10.0, 1.0, 0.5);
        let radius = 2.0;
        let scene = SceneSpec {
            primitives: vec![Primitive::Sphere { center: center.into(), radius }],
            rays: small_grid(),
            noise_sigma: 0.0,
            mover_fraction: 0.0,
            mover_offset: [0.0; 3],
            seed: 0,
        };
        let cloud = render_sweep(&scene, &Pose::identity());
        assert!(cloud.len() > 10);
        for p in cloud.points() {
            let d = p.position.normalize();
            // |t d − c|² = r² → t = d·c − sqrt((d·c)² − |c|² + r²)
            let dc = d.dot(&center);
            let t = dc - (dc * dc - center.norm_squared() + radius * radius).sqrt();
            assert!((p.range() - t).abs() < 1e-9);
            let outward = (p.position - center) / radius;
            assert!((p.normal - outward).norm() < 1e-9);
        }
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let mut scene = SceneSpec::street(9);
        scene.rays = small_grid();
        scene.noise_sigma = 0.02;
        let a = render_sweep(&scene, &Pose::identity());
        let b = render_sweep(&scene, &Pose::identity());
        assert_eq!(a, b);
        scene.seed = 10;
        assert_ne!(a, render_sweep(&scene, &Pose::identity()));
    }

    #[test]
    fn ranges_bounded_by_max_range() {
        let mut scene = SceneSpec::street(0);
        scene.rays = RayGrid { max_range: 15.0, ..small_grid() };
        let cloud = render_sweep(&scene, &Pose::from_translation(Vector3::new(3.0, 1.0, 0.0)));
        assert!(cloud.points().iter().all(|p| p.range() <= 15.0));
    }

    #[test]
    fn box_faces_have_axis_normals() {
        let scene = SceneSpec {
            primitives: vec![Primitive::Box {
                center: [6.0, 0.0, 0.0],
                half_extents: [1.0, 2.0, 1.0],
                yaw_deg: 0.0,
            }],
            rays: small_grid(),
            noise_sigma: 0.0,
            mover_fraction: 0.0,
            mover_offset: [0.0; 3],
            seed: 0,
        };
        let cloud = render_sweep(&scene, &Pose::identity());
        assert!(!cloud.is_empty());
        for p in cloud.points() {
            // visible faces: the near x face and possibly top/bottom
            let on_front = (p.position.x - 5.0).abs() < 1e-9;
            let on_cap = (p.position.z.abs() - 1.0).abs() < 1e-9;
            assert!(on_front || on_cap, "{:?}", p.position);
            if on_front {
                assert!((p.normal + Vector3::x()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_pair_is_identical() {
        let mut scene = SceneSpec::street(4);
        scene.rays = small_grid();
        let pair = render_pair(&scene, &Pose::identity());
        assert_eq!(pair.prev.points(), pair.curr.points());
        assert!(pair.movers.is_empty());
    }

    #[test]
    fn pair_gt_and_mover_count() {
        let mut scene = SceneSpec::street(5);
        scene.rays = small_grid();
        scene.mover_fraction = 0.2;
        let motion = Pose::from_euler(0.0, 0.01, 0.02, Vector3::new(0.8, 0.1, 0.0));
        let pair = render_pair(&scene, &motion);
        assert_eq!(pair.gt, motion);
        let expected = (0.2 * pair.curr.len() as f64).floor() as usize;
        assert_eq!(pair.movers.len(), expected);
        assert_eq!(pair.source_index.len(), pair.curr.len());
    }

    #[test]
    fn static_points_correspond_under_gt() {
        let mut scene = SceneSpec::street(6);
        scene.rays = small_grid();
        scene.mover_fraction = 0.1;
        let motion = Pose::from_euler(0.01, -0.005, 0.03, Vector3::new(0.9, -0.2, 0.05));
        let pair = render_pair(&scene, &motion);
        let movers: std::collections::HashSet<usize> = pair.movers.iter().copied().collect();
        for (k, p) in pair.curr.points().iter().enumerate() {
            let src = pair.prev.points()[pair.source_index[k]];
            let predicted = pair.gt.apply(&src.position);
            if movers.contains(&k) {
                assert!((p.position - predicted).norm() > 0.99);
            } else {
                assert!((p.position - predicted).norm() < 1e-9);
                // normals stay orthogonal to the surface: rotated source normal up to sign
                let n = pair.gt.rotation * src.normal;
                assert!(n.cross(&p.normal).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut scene = SceneSpec::street(0);
        assert!(scene.validate().is_ok());
        scene.mover_fraction = 1.5;
        match scene.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "mover_fraction"),
            other => panic!("{other:?}"),
        }
        let mut scene = SceneSpec::street(0);
        scene.primitives.clear();
        assert!(scene.validate().is_err());
        let mut scene = SceneSpec::street(0);
        scene.rays.max_range = 0.0;
        assert!(scene.validate().is_err());
    }

    #[test]
    fn constant_motion_sequence() {
        let step = Pose::from_euler(0.0, 0.0, 0.01, Vector3::new(1.0, 0.0, 0.0));
        let poses = constant_motion_poses(4, &step);
        assert_eq!(poses.len(), 4);
        assert_eq!(poses[0], Pose::identity());
        let three = step.compose(&step).compose(&step);
        assert!((poses[3].translation - three.translation).norm() < 1e-12);
    }
}
