//! Exact kd-tree and the geodesically filtered signed KNN distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::math::{Aabb, Point3, Vec3};
use crate::puppet::{PosedCloud, TemplateCloud};
use crate::rig::{blend_weight_rows, WeightVector};

pub const DEFAULT_K: usize = 10;
pub const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
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

/// Exact kd-tree over a fixed point set. Results are ordered by squared
/// distance, ties by lower point index, identical to a linear scan.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Vec<Aabb>,
}

/// Candidate ordered by `(squared distance, index)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn box_dist2(b: &Aabb, p: &Point3) -> f64 {
    let mut d = 0.0;
    for i in 0..3 {
        let v = if p[i] < b.min[i] {
            b.min[i] - p[i]
        } else if p[i] > b.max[i] {
            p[i] - b.max[i]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("cannot index an empty point cloud".into()));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        let bounds = Aabb::from_points(self.order[start..end].iter().map(|&i| &self.points[i]));
        self.nodes.push(Node::Leaf { start, end });
        self.bounds.push(bounds);
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = bounds.extent().imax();
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest points as `(index, squared distance)`, nearest first.
    pub fn knn(&self, x: &Point3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, x, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.1, c.0)).collect()
    }

    fn search(&self, node: usize, x: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if heap.len() == k && box_dist2(&self.bounds[node], x) > heap.peek().expect("full").0 {
            return;
        }
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate((self.points[i] - x).norm_squared(), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (near, far) = if x[axis] < value { (left, right) } else { (right, left) };
                self.search(near, x, k, heap);
                self.search(far, x, k, heap);
            }
        }
    }
}

/// Linear-scan reference for [`KdTree::knn`].
pub fn brute_force_knn(points: &[Point3], x: &Point3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Candidate((p - x).norm_squared(), i))
        .collect();
    all.sort();
    all.into_iter().take(k).map(|c| (c.1, c.0)).collect()
}

/// One entry of a signed KNN query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Index into the posed cloud.
    pub index: usize,
    /// Index into the template cloud (source of the skinning weights).
    pub template: usize,
    /// Signed distance to the neighbour.
    pub distance: f64,
    pub position: Point3,
    pub normal: Vec3,
    pub canonical: Point3,
    /// Payload was replaced by the nearest neighbour's.
    pub replaced: bool,
}

/// K signed neighbours in Euclidean order.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }

    /// Mean of the signed distances.
    pub fn coarse_distance(&self) -> f64 {
        if self.neighbors.is_empty() {
            return f64::INFINITY;
        }
        self.neighbors.iter().map(|n| n.distance).sum::<f64>() / self.neighbors.len() as f64
    }

    /// Softmax-blended skinning weights of the neighbours.
    pub fn blend_weights(&self, template: &TemplateCloud, radius: f64) -> Result<WeightVector> {
        blend_weight_rows(
            &self.distances(),
            self.neighbors.iter().map(|n| template.weights(n.template)),
            template.bones(),
            radius,
        )
    }
}

/// Distance to `v` signed by the side of its tangent plane; points on the
/// plane count as outside.
pub fn signed_distance_to(x: &Point3, v: &Point3, n: &Vec3) -> f64 {
    let d = (x - v).norm();
    if (x - v).dot(n) < 0.0 {
        -d
    } else {
        d
    }
}

/// Signed KNN with geodesic filtering: neighbours whose canonical position
/// lies farther than `t_d` from the nearest neighbour's take over its
/// payload. The Euclidean ordering is kept.
pub fn gs_knn(
    x: &Point3,
    index: &KdTree,
    posed: &PosedCloud,
    template: &TemplateCloud,
    k: usize,
    t_d: f64,
) -> KnnResult {
    let found = index.knn(x, k);
    let entry = |i: usize| {
        let position = posed.positions()[i];
        let normal = posed.normals()[i];
        let src = posed.source(i);
        Neighbor {
            index: i,
            template: src,
            distance: signed_distance_to(x, &position, &normal),
            position,
            normal,
            canonical: *template.position(src),
            replaced: false,
        }
    };
    let mut neighbors: Vec<Neighbor> = found.iter().map(|&(i, _)| entry(i)).collect();
    if let Some(&nearest) = neighbors.first() {
        for n in neighbors.iter_mut().skip(1) {
            if (n.canonical - nearest.canonical).norm() > t_d {
                *n = Neighbor {
                    replaced: true,
                    ..nearest
                };
            }
        }
    }
    KnnResult { neighbors }
}
