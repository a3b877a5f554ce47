//! Axis-aligned bounding volume hierarchy over a mesh's triangles and the
//! branch-and-bound mesh/mesh distance query built on it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::{Point, TriMesh};

use super::kernel::{triangle_distance_sq, Triangle};

const LEAF_SIZE: usize = 4;

/// Relative slack on pruning so rounding in the box bound never discards a
/// pair whose computed triangle distance is marginally smaller.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(&other.min);
        out.grow(&other.max);
        out
    }

    fn of_triangle(t: &Triangle) -> Aabb {
        let mut b = Aabb::empty();
        t.iter().for_each(|p| b.grow(p));
        b
    }

    /// Squared gap between two boxes; zero when they overlap.
    pub fn distance_sq(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|k| {
                let gap = (self.min[k] - other.max[k]).max(other.min[k] - self.max[k]).max(0.0);
                gap * gap
            })
            .sum()
    }

    fn extent(&self) -> f64 {
        (0..3).map(|k| self.max[k] - self.min[k]).sum()
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, len: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    triangles: Vec<Triangle>,
}

impl Bvh {
    /// Builds the hierarchy with median splits along the widest centroid axis.
    pub fn build(mesh: &TriMesh) -> Self {
        let mut items: Vec<(Triangle, Aabb, Point)> = mesh
            .triangles()
            .map(|t| {
                let c = Point::from((t[0].coords + t[1].coords + t[2].coords) / 3.0);
                (t, Aabb::of_triangle(&t), c)
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * items.len() / LEAF_SIZE + 1);
        let len = items.len();
        build_node(&mut items, 0, len, &mut nodes);
        Self {
            nodes,
            triangles: items.into_iter().map(|(t, _, _)| t).collect(),
        }
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Exact minimum distance between the triangle sets of two hierarchies.
    pub fn distance(&self, other: &Bvh) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Bvh) -> f64 {
        let mut best = f64::INFINITY;
        let mut heap = BinaryHeap::new();
        heap.push(Candidate {
            lower_sq: self.nodes[0].bounds.distance_sq(&other.nodes[0].bounds),
            a: 0,
            b: 0,
        });
        while let Some(Candidate { lower_sq, a, b }) = heap.pop() {
            if lower_sq > best * (1.0 + PRUNE_SLACK) {
                break;
            }
            let (na, nb) = (&self.nodes[a], &other.nodes[b]);
            match (&na.kind, &nb.kind) {
                (NodeKind::Leaf { start: sa, len: la }, NodeKind::Leaf { start: sb, len: lb }) => {
                    for ta in &self.triangles[*sa..sa + la] {
                        for tb in &other.triangles[*sb..sb + lb] {
                            best = best.min(triangle_distance_sq(ta, tb));
                        }
                    }
                    if best == 0.0 {
                        return 0.0;
                    }
                }
                (NodeKind::Inner { left, right }, NodeKind::Leaf { .. }) => {
                    for child in [*left, *right] {
                        push(&mut heap, best, &self.nodes[child].bounds, &nb.bounds, child, b);
                    }
                }
                (NodeKind::Leaf { .. }, NodeKind::Inner { left, right }) => {
                    for child in [*left, *right] {
                        push(&mut heap, best, &na.bounds, &other.nodes[child].bounds, a, child);
                    }
                }
                (NodeKind::Inner { left: la, right: ra }, NodeKind::Inner { left: lb, right: rb }) => {
                    if na.bounds.extent() >= nb.bounds.extent() {
                        for child in [*la, *ra] {
                            push(&mut heap, best, &self.nodes[child].bounds, &nb.bounds, child, b);
                        }
                    } else {
                        for child in [*lb, *rb] {
                            push(&mut heap, best, &na.bounds, &other.nodes[child].bounds, a, child);
                        }
                    }
                }
            }
        }
        best
    }
}

fn push(heap: &mut BinaryHeap<Candidate>, best: f64, ba: &Aabb, bb: &Aabb, a: usize, b: usize) {
    let lower_sq = ba.distance_sq(bb);
    if lower_sq <= best * (1.0 + PRUNE_SLACK) {
        heap.push(Candidate { lower_sq, a, b });
    }
}

fn build_node(items: &mut [(Triangle, Aabb, Point)], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let slice = &mut items[start..end];
    let bounds = slice.iter().fold(Aabb::empty(), |acc, (_, b, _)| acc.merge(b));
    let index = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf {
            start,
            len: end - start,
        },
    });
    if slice.len() <= LEAF_SIZE {
        return index;
    }
    let mut centroid_bounds = Aabb::empty();
    slice.iter().for_each(|(_, _, c)| centroid_bounds.grow(c));
    let axis = (0..3)
        .max_by(|&x, &y| {
            let ex = centroid_bounds.max[x] - centroid_bounds.min[x];
            let ey = centroid_bounds.max[y] - centroid_bounds.min[y];
            ex.total_cmp(&ey)
        })
        .unwrap_or(0);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |l, r| l.2[axis].total_cmp(&r.2[axis]));
    let left = build_node(items, start, start + mid, nodes);
    let right = build_node(items, start + mid, end, nodes);
    nodes[index].kind = NodeKind::Inner { left, right };
    index
}

/// Min-heap entry keyed on the box lower bound.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    lower_sq: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lower_sq
            .total_cmp(&self.lower_sq)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}
