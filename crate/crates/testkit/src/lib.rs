//! Test-only helpers: fixture paths, random meshes, and a brute-force
//! triangle-pair distance oracle written independently of the library's
//! geometry kernel.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use scopevoice_core::mesh::TriMesh;
use scopevoice_core::scene::{load_case, PatientCase};

pub mod corpus;

type P = Point3<f64>;
type V = Vector3<f64>;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn case_path(case_id: &str) -> PathBuf {
    fixtures_dir().join(case_id).join("case.json")
}

pub fn fixture(case_id: &str) -> PatientCase {
    load_case(&case_path(case_id)).unwrap_or_else(|e| panic!("fixture {case_id}: {e}"))
}

/// |a - b| / max(|a|, |b|, 1e-12)
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn point_segment_sq(p: &P, a: &P, b: &P) -> f64 {
    let ab = b - a;
    let len = ab.norm_squared();
    let t = if len == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm_squared()
}

/// Point to triangle: plane distance when the projection lands inside,
/// otherwise the nearest edge.
fn point_triangle_sq(p: &P, t: &[P; 3]) -> f64 {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let nn = n.norm_squared();
    let h = (p - t[0]).dot(&n) / nn;
    let q = p - n * h;
    let inside = (0..3).all(|k| {
        let a = t[k];
        let b = t[(k + 1) % 3];
        (b - a).cross(&(q - a)).dot(&n) >= 0.0
    });
    if inside {
        return (p - q).norm_squared();
    }
    (0..3)
        .map(|k| point_segment_sq(p, &t[k], &t[(k + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

/// Segment to segment: the four endpoint distances plus the interior
/// critical point of the two lines when it lies on both segments.
fn segment_segment_sq(a0: &P, a1: &P, b0: &P, b1: &P) -> f64 {
    let mut best = point_segment_sq(a0, b0, b1)
        .min(point_segment_sq(a1, b0, b1))
        .min(point_segment_sq(b0, a0, a1))
        .min(point_segment_sq(b1, a0, a1));
    let u: V = a1 - a0;
    let v: V = b1 - b0;
    let w: V = a0 - b0;
    let (uu, uv, vv, uw, vw) = (u.dot(&u), u.dot(&v), v.dot(&v), u.dot(&w), v.dot(&w));
    let den = uu * vv - uv * uv;
    if den > 1e-18 * uu * vv {
        let s = (uv * vw - vv * uw) / den;
        let t = (uu * vw - uv * uw) / den;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            best = best.min(((a0 + u * s) - (b0 + v * t)).norm_squared());
        }
    }
    best
}

/// Möller-Trumbore restricted to the segment `p..q`.
fn segment_hits_triangle(p: &P, q: &P, t: &[P; 3]) -> bool {
    let dir = q - p;
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let h = dir.cross(&e2);
    let a = e1.dot(&h);
    if a.abs() < 1e-300 {
        return false;
    }
    let f = 1.0 / a;
    let s = p - t[0];
    let u = f * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = s.cross(&e1);
    let v = f * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let tt = f * e2.dot(&qv);
    (0.0..=1.0).contains(&tt)
}

pub fn triangle_distance(a: &[P; 3], b: &[P; 3]) -> f64 {
    for k in 0..3 {
        if segment_hits_triangle(&a[k], &a[(k + 1) % 3], b) || segment_hits_triangle(&b[k], &b[(k + 1) % 3], a) {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for k in 0..3 {
        best = best.min(point_triangle_sq(&a[k], b)).min(point_triangle_sq(&b[k], a));
        for j in 0..3 {
            best = best.min(segment_segment_sq(&a[k], &a[(k + 1) % 3], &b[j], &b[(j + 1) % 3]));
        }
    }
    best.sqrt()
}

/// Every triangle against every triangle.
pub fn brute_force_distance(a: &TriMesh, b: &TriMesh) -> f64 {
    brute_force_distance_until(a, b, None).expect("no deadline")
}

fn bounding_sphere(t: &[P; 3]) -> (P, f64) {
    let c = P::from((t[0].coords + t[1].coords + t[2].coords) / 3.0);
    let r = t.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
    (c, r)
}

/// As [`brute_force_distance`], giving up (`None`) once `deadline` passes.
/// Every pair is visited; a pair whose bounding spheres are already farther
/// apart than the best distance so far skips the exact test.
pub fn brute_force_distance_until(a: &TriMesh, b: &TriMesh, deadline: Option<Instant>) -> Option<f64> {
    let tb: Vec<([P; 3], P, f64)> = b
        .triangles()
        .map(|t| {
            let (c, r) = bounding_sphere(&t);
            (t, c, r)
        })
        .collect();
    let mut best = f64::INFINITY;
    for (n, ta) in a.triangles().enumerate() {
        if n % 16 == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
            return None;
        }
        let (ca, ra) = bounding_sphere(&ta);
        for (t, cb, rb) in &tb {
            if (ca - cb).norm() - ra - rb >= best {
                continue;
            }
            best = best.min(triangle_distance(&ta, t));
            if best == 0.0 {
                return Some(0.0);
            }
        }
    }
    Some(best)
}

/// Oracle distance table in case segment order.
#[allow(clippy::needless_range_loop)]
pub fn oracle_matrix(case: &PatientCase) -> Vec<Vec<f64>> {
    let n = case.segments.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = brute_force_distance(&case.segments[i].mesh, &case.segments[j].mesh);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Random triangle soup of `n` triangles inside a cube of side `size`
/// around `center`.
pub fn random_soup<R: Rng>(rng: &mut R, n: usize, center: P, size: f64) -> TriMesh {
    let mut verts = Vec::with_capacity(3 * n);
    let mut faces = Vec::with_capacity(n);
    while faces.len() < n {
        let tri: Vec<P> = (0..3)
            .map(|_| {
                center
                    + V::new(
                        rng.random_range(-0.5..0.5) * size,
                        rng.random_range(-0.5..0.5) * size,
                        rng.random_range(-0.5..0.5) * size,
                    )
            })
            .collect();
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-6 {
            continue;
        }
        let base = verts.len() as u32;
        verts.extend(tri);
        faces.push([base, base + 1, base + 2]);
    }
    TriMesh::new(verts, faces).expect("non-degenerate soup")
}

/// Icosphere with every vertex pushed radially by up to `jitter` of the
/// radius.
pub fn lumpy_sphere<R: Rng>(rng: &mut R, center: P, radius: f64, level: u32, jitter: f64) -> TriMesh {
    let base = scopevoice_core::mesh::shapes::icosphere(center, radius, level);
    let verts = base
        .vertices()
        .iter()
        .map(|v| center + (v - center) * (1.0 + rng.random_range(-jitter..jitter)))
        .collect();
    TriMesh::new(verts, base.faces().to_vec()).expect("jittered sphere stays non-degenerate")
}

/// Tumor plus every segment whose oracle distance to it is within the case
/// margin.
pub fn oracle_infiltration(case: &PatientCase) -> BTreeSet<String> {
    let tumor = case.tumor().expect("case has a tumor");
    case.segments
        .iter()
        .filter(|s| s.id == tumor.id || brute_force_distance(&tumor.mesh, &s.mesh) <= case.resection_margin_mm)
        .map(|s| s.id.to_string())
        .collect()
}

/// The infiltration set plus what guideline rules remove with the tumor.
pub fn oracle_resection(case: &PatientCase) -> BTreeSet<String> {
    let mut set = oracle_infiltration(case);
    set.extend(case.resect_with_tumor().iter().map(|s| s.to_string()));
    set
}

/// One of the six surgical tasks: a sentence a surgeon might say and the
/// structures that must be the only ones visible afterwards.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub number: u8,
    pub name: &'static str,
    pub sentence: &'static str,
    pub expected: BTreeSet<String>,
}

fn ids(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Tasks 5 and 6 take their expectations from the oracle, so they apply to
/// any fixture case.
pub fn decision_tasks(case: &PatientCase) -> Vec<TaskSpec> {
    vec![
        TaskSpec {
            number: 5,
            name: "infiltrated structures",
            sentence: "Only show the structures infiltrated by the tumor",
            expected: oracle_infiltration(case),
        },
        TaskSpec {
            number: 6,
            name: "resection",
            sentence: "Only show what has to be resected with the tumor",
            expected: oracle_resection(case),
        },
    ]
}

/// All six tasks on case_a; the first four name their structures outright.
pub fn case_a_tasks(case: &PatientCase) -> Vec<TaskSpec> {
    let mut tasks = vec![
        TaskSpec {
            number: 1,
            name: "kocher maneuver",
            sentence: "Only enable the tumor, inferior vena cava, and portal vein",
            expected: ids(&["tumor", "vena_cava", "portal_vein"]),
        },
        TaskSpec {
            number: 2,
            name: "hepatoduodenal ligament",
            sentence: "Show only the portal vein, hepatic artery and gastroduodenal artery",
            expected: ids(&["portal_vein", "hepatic_artery", "gastroduodenal_artery"]),
        },
        TaskSpec {
            number: 3,
            name: "uncinate first",
            sentence: "Only show the tumor, portal vein and superior mesenteric artery",
            expected: ids(&["tumor", "portal_vein", "superior_mesenteric_artery"]),
        },
        TaskSpec {
            number: 4,
            name: "artery first",
            sentence:
                "Just show the hepatic artery, gastroduodenal artery, celiac trunk and superior mesenteric artery",
            expected: ids(&[
                "hepatic_artery",
                "gastroduodenal_artery",
                "celiac_trunk",
                "superior_mesenteric_artery",
            ]),
        },
    ];
    tasks.extend(decision_tasks(case));
    tasks
}

const FUZZ_NAMES: &[&str] = &[
    "set_visibility",
    "set_group_visibility",
    "exclusive_visibility",
    "reset_visibility",
    "control",
    "reset_chat",
    "set_visibilty",
    "delete_case",
    "exec",
    "Control",
    "_",
];

const FUZZ_ARGS: &[&str] = &[
    "tumor",
    "portal_vein",
    "artery",
    "vein",
    "on",
    "off",
    "toggle",
    "freeze",
    "scroll_up",
    "toggle_ct",
    "spleen",
    "liver",
    "1",
    "-1",
    "",
    "\"x\"",
    "on off",
];

const FUZZ_PUNCT: &[&str] = &["(", ")", ",", ";", "\n", "\"", "[", "]", " ", "'", "\\"];

/// A random model reply: sometimes well-formed calls, sometimes near-misses
/// with unknown names, bad arity or broken quoting, sometimes noise.
pub fn fuzz_reply<R: Rng>(rng: &mut R) -> String {
    let mut out = String::new();
    match rng.random_range(0..4) {
        0 => {
            for _ in 0..rng.random_range(1..=3) {
                let name = FUZZ_NAMES[rng.random_range(0..FUZZ_NAMES.len())];
                let args: Vec<&str> = (0..rng.random_range(0..=3))
                    .map(|_| FUZZ_ARGS[rng.random_range(0..FUZZ_ARGS.len())])
                    .collect();
                out.push_str(&format!("{name}({}); ", args.join(", ")));
            }
        }
        1 => {
            for _ in 0..rng.random_range(1..=20) {
                let piece = match rng.random_range(0..3) {
                    0 => FUZZ_NAMES[rng.random_range(0..FUZZ_NAMES.len())],
                    1 => FUZZ_ARGS[rng.random_range(0..FUZZ_ARGS.len())],
                    _ => FUZZ_PUNCT[rng.random_range(0..FUZZ_PUNCT.len())],
                };
                out.push_str(piece);
            }
        }
        2 => {
            let items: Vec<String> = (0..rng.random_range(0..=3))
                .map(|_| {
                    let name = FUZZ_NAMES[rng.random_range(0..FUZZ_NAMES.len())];
                    format!(
                        "\"{name}({})\"",
                        FUZZ_ARGS[rng.random_range(0..FUZZ_ARGS.len())].replace('"', "'")
                    )
                })
                .collect();
            out = format!("[{}]", items.join(","));
        }
        _ => {
            for _ in 0..rng.random_range(0..60) {
                out.push(char::from_u32(rng.random_range(0x20..0x2500)).unwrap_or('?'));
            }
        }
    }
    out
}
