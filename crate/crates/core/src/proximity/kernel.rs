//! Exact Euclidean distance between two triangles.
//!
//! Disjoint triangles attain their minimum at a vertex/face or an edge/edge
//! pair. Intersecting triangles always have an edge of one crossing the
//! other, which the edge/triangle test reports as distance zero.

use nalgebra::Vector3;

use crate::mesh::Point;

pub type Triangle = [Point; 3];

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Squared distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance_sq(p1: &Point, q1: &Point, p2: &Point, q2: &Point) -> f64 {
    const EPS: f64 = 1e-300;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm_squared();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

fn orient(a: &Point, b: &Point, c: &Point, d: &Point) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}

/// Whether segment `pq` crosses triangle `abc` transversally (touching counts).
/// Segments lying in the triangle's plane report `false`; those contacts are
/// caught by the vertex/face and edge/edge distances.
pub fn segment_crosses_triangle(p: &Point, q: &Point, a: &Point, b: &Point, c: &Point) -> bool {
    let dp = orient(a, b, c, p);
    let dq = orient(a, b, c, q);
    if (dp > 0.0 && dq > 0.0) || (dp < 0.0 && dq < 0.0) || (dp == 0.0 && dq == 0.0) {
        return false;
    }
    let x = p + (q - p) * (dp / (dp - dq));
    let n: Vector3<f64> = (b - a).cross(&(c - a));
    let e0 = (b - a).cross(&(x - a)).dot(&n);
    let e1 = (c - b).cross(&(x - b)).dot(&n);
    let e2 = (a - c).cross(&(x - c)).dot(&n);
    e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0
}

fn boxes_touch(t1: &Triangle, t2: &Triangle) -> bool {
    (0..3).all(|k| {
        let (lo1, hi1) = t1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[k]), hi.max(p[k]))
        });
        let (lo2, hi2) = t2.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[k]), hi.max(p[k]))
        });
        lo1 <= hi2 && lo2 <= hi1
    })
}

pub fn triangles_intersect(t1: &Triangle, t2: &Triangle) -> bool {
    if !boxes_touch(t1, t2) {
        return false;
    }
    let crosses = |edges: &Triangle, face: &Triangle| {
        (0..3).any(|k| segment_crosses_triangle(&edges[k], &edges[(k + 1) % 3], &face[0], &face[1], &face[2]))
    };
    crosses(t1, t2) || crosses(t2, t1)
}

/// Squared minimum distance between two triangles; zero when they touch.
pub fn triangle_distance_sq(t1: &Triangle, t2: &Triangle) -> f64 {
    let mut best = f64::INFINITY;
    for p in t1 {
        best = best.min((p - closest_point_on_triangle(p, &t2[0], &t2[1], &t2[2])).norm_squared());
    }
    for p in t2 {
        best = best.min((p - closest_point_on_triangle(p, &t1[0], &t1[1], &t1[2])).norm_squared());
    }
    for i in 0..3 {
        for j in 0..3 {
            best = best.min(segment_segment_distance_sq(
                &t1[i],
                &t1[(i + 1) % 3],
                &t2[j],
                &t2[(j + 1) % 3],
            ));
        }
    }
    if best > 0.0 && triangles_intersect(t1, t2) {
        return 0.0;
    }
    best
}

pub fn triangle_distance(t1: &Triangle, t2: &Triangle) -> f64 {
    triangle_distance_sq(t1, t2).sqrt()
}
