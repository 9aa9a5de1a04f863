//! Point clouds, voxel-grid averaging, cross-product normals and the
//! nearest-neighbor index.

pub mod kdtree;

use std::collections::BTreeMap;

use nalgebra::Vector3;

pub use kdtree::{Neighbor, NnIndex};

use crate::error::Result;
use crate::se3::Pose;

/// Points closer than this to the sensor are treated as self-returns.
pub const MIN_RANGE: f64 = 0.5;

/// Default voxel cell: 10 cm × 10 cm × 20 cm.
pub const DEFAULT_CELL: [f64; 3] = [0.1, 0.1, 0.2];

const NORMAL_ZERO_EPS: f64 = 1e-6;
const CROSS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    /// Unit normal, or exactly zero when unknown/degenerate.
    pub normal: Vector3<f64>,
    pub reflectance: f64,
}

impl Point {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>, reflectance: f64) -> Self {
        Self {
            position,
            normal,
            reflectance,
        }
    }

    pub fn range(&self) -> f64 {
        self.position.norm()
    }

    pub fn has_normal(&self) -> bool {
        self.normal != Vector3::zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    pub frame_id: u64,
}

impl PointCloud {
    /// Wraps points as-is, without the ingestion filter.
    pub fn from_points(points: Vec<Point>, frame_id: u64) -> Self {
        Self { points, frame_id }
    }

    /// Builds a cloud from sensor returns, dropping non-finite points and
    /// returns closer than [`MIN_RANGE`].
    pub fn ingest(points: impl IntoIterator<Item = Point>, frame_id: u64) -> Self {
        let points = points
            .into_iter()
            .filter(|p| {
                p.position.iter().all(|v| v.is_finite())
                    && p.reflectance.is_finite()
                    && p.range() >= MIN_RANGE
            })
            .map(|mut p| {
                if !p.normal.iter().all(|v| v.is_finite()) {
                    p.normal = Vector3::zeros();
                }
                p
            })
            .collect();
        Self { points, frame_id }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Rigidly moves every point (and rotates normals).
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| Point {
                position: pose.apply(&p.position),
                normal: pose.rotation * p.normal,
                reflectance: p.reflectance,
            })
            .collect();
        PointCloud {
            points,
            frame_id: self.frame_id,
        }
    }

    pub fn build_index(&self) -> Result<NnIndex> {
        NnIndex::build(self.positions())
    }
}

/// Integer cell coordinates; floor division anchored at the sensor origin.
pub type VoxelKey = (i64, i64, i64);

pub fn voxel_key(position: &Vector3<f64>, cell: &Vector3<f64>) -> VoxelKey {
    (
        (position.x / cell.x).floor() as i64,
        (position.y / cell.y).floor() as i64,
        (position.z / cell.z).floor() as i64,
    )
}

#[derive(Debug, Clone, Default)]
struct CellAccum {
    count: usize,
    position: Vector3<f64>,
    normal: Vector3<f64>,
    reflectance: f64,
}

/// Voxel grid keyed by cell, holding running sums of member points.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell: Vector3<f64>,
    cells: BTreeMap<VoxelKey, CellAccum>,
}

impl VoxelGrid {
    pub fn new(cell: Vector3<f64>) -> Self {
        assert!(
            cell.iter().all(|&c| c > 0.0 && c.is_finite()),
            "voxel cell sizes must be positive"
        );
        Self {
            cell,
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, p: &Point) {
        let acc = self.cells.entry(voxel_key(&p.position, &self.cell)).or_default();
        acc.count += 1;
        acc.position += p.position;
        acc.normal += p.normal;
        acc.reflectance += p.reflectance;
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    /// One averaged point per occupied cell, in ascending key order.
    pub fn averaged(&self, frame_id: u64) -> PointCloud {
        let points = self
            .cells
            .values()
            .map(|acc| {
                let n = acc.count as f64;
                let mean_normal = acc.normal / n;
                let norm = mean_normal.norm();
                Point {
                    position: acc.position / n,
                    normal: if norm < NORMAL_ZERO_EPS {
                        Vector3::zeros()
                    } else {
                        mean_normal / norm
                    },
                    reflectance: acc.reflectance / n,
                }
            })
            .collect();
        PointCloud::from_points(points, frame_id)
    }
}

/// Replaces every occupied voxel by the arithmetic mean of its points.
pub fn voxel_downsample(cloud: &PointCloud, cell: &Vector3<f64>) -> PointCloud {
    let mut grid = VoxelGrid::new(*cell);
    for p in cloud.points() {
        grid.insert(p);
    }
    grid.averaged(cloud.frame_id)
}

/// Neighbors used for normal estimation.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 4;

/// Estimates normals on the raw sweep (unless it already carries them), then
/// voxel-averages it. A non-positive cell skips downsampling.
pub fn prepare_sweep(cloud: &PointCloud, cell: &Vector3<f64>, k: usize) -> PointCloud {
    let with_normals = if cloud.points().iter().any(Point::has_normal) {
        cloud.clone()
    } else {
        estimate_normals(cloud, k)
    };
    if cell.iter().all(|&c| c > 0.0) {
        voxel_downsample(&with_normals, cell)
    } else {
        with_normals
    }
}

/// Cross-product normals over the `k` nearest neighbors of every point.
///
/// Neighbor offsets are sorted by azimuth, crossed pairwise around the cycle,
/// oriented toward the sensor and averaged. Points whose crosses all vanish
/// get the zero normal, as do all points of a cloud with fewer than `k + 1`
/// points.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> PointCloud {
    let mut out = cloud.clone();
    if cloud.len() < k + 1 || k < 2 {
        for p in &mut out.points {
            p.normal = Vector3::zeros();
        }
        return out;
    }
    let index = NnIndex::build(cloud.positions()).expect("nonempty cloud");
    for (i, p) in out.points.iter_mut().enumerate() {
        let mut offsets: Vec<Vector3<f64>> = index
            .knn(&p.position, k + 1)
            .into_iter()
            .filter(|n| n.index != i)
            .take(k)
            .map(|n| index.point(n.index) - p.position)
            .collect();
        offsets.sort_by(|a, b| a.y.atan2(a.x).total_cmp(&b.y.atan2(b.x)));
        p.normal = cross_normal(&offsets, &p.position);
    }
    out
}

fn cross_normal(offsets: &[Vector3<f64>], position: &Vector3<f64>) -> Vector3<f64> {
    let toward_sensor = -position;
    let mut sum = Vector3::zeros();
    for (a, b) in offsets.iter().zip(offsets.iter().cycle().skip(1)) {
        let c = a.cross(b);
        if c.norm() < CROSS_EPS {
            continue;
        }
        sum += if c.dot(&toward_sensor) < 0.0 { -c } else { c };
    }
    let norm = sum.norm();
    if norm < CROSS_EPS {
        Vector3::zeros()
    } else {
        sum / norm
    }
}
