//! Exact kd-tree over point positions.
//!
//! Results are ordered by `(distance, index)`, so equidistant candidates
//! resolve to the lowest point index.

use std::cmp::Ordering;

use nalgebra::Vector3;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A query hit: point index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Candidate {
    fn cmp(&self, other: &Candidate) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl NnIndex {
    pub fn build(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut index = NnIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[start + mid]][axis];
        // placeholder, patched once children exist
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Exact nearest neighbor of `query`.
    pub fn nearest(&self, query: &Vector3<f64>) -> Neighbor {
        let mut best = Candidate {
            d2: f64::INFINITY,
            index: usize::MAX,
        };
        self.nearest_in(0, query, &mut best);
        Neighbor {
            index: best.index,
            distance: best.d2.sqrt(),
        }
    }

    fn nearest_in(&self, node: usize, q: &Vector3<f64>, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if c.cmp(best) == Ordering::Less {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_in(near, q, best);
                // ties must still be visited so the lowest index wins
                if diff * diff <= best.d2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest neighbors sorted by `(distance, index)`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<Candidate> = Vec::with_capacity(k + 1);
        self.knn_in(0, query, k, &mut heap);
        heap.into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.d2.sqrt(),
            })
            .collect()
    }

    fn knn_in(&self, node: usize, q: &Vector3<f64>, k: usize, found: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if found.len() == k && c.cmp(&found[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = found
                        .binary_search_by(|probe| probe.cmp(&c))
                        .unwrap_or_else(|p| p);
                    found.insert(pos, c);
                    found.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_in(near, q, k, found);
                if found.len() < k || diff * diff <= found[k - 1].d2 {
                    self.knn_in(far, q, k, found);
                }
            }
        }
    }
}
