//! The accelerated distance path against the brute-force triangle scan.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopevoice_core::mesh::shapes::icosphere;
use scopevoice_core::proximity::{distance_matrix, infiltrated, min_distance};
use scopevoice_core::scene::SegmentId;
use scopevoice_testkit::{
    brute_force_distance, brute_force_distance_until, fixture, lumpy_sphere, oracle_matrix, random_soup, relative_error,
};

fn assert_matches_oracle(case_id: &str) {
    let case = fixture(case_id);
    let fast = distance_matrix(&case);
    let slow = oracle_matrix(&case);
    for (i, row) in slow.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            let got = fast.at(i, j);
            assert!(
                relative_error(got, want) <= 1e-9,
                "{case_id} {}/{}: {got} vs oracle {want}",
                fast.ids()[i],
                fast.ids()[j]
            );
        }
    }
    assert_eq!(fast, fast.transpose());
}

#[test]
fn case_a_matrix_matches_oracle() {
    assert_matches_oracle("case_a");
}

#[test]
fn case_b_matrix_matches_oracle() {
    assert_matches_oracle("case_b");
}

#[test]
fn random_pairs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c0be);
    for k in 0..100 {
        let n = rng.random_range(1..=200);
        let a = if k % 2 == 0 {
            random_soup(&mut rng, n, Point3::origin(), 4.0)
        } else {
            lumpy_sphere(&mut rng, Point3::origin(), 2.0, (n % 2) as u32, 0.1)
        };
        let offset = Point3::new(
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
        );
        let m = rng.random_range(1..=200);
        let b = random_soup(&mut rng, m, offset, 3.0);
        let (fast, slow) = (min_distance(&a, &b), brute_force_distance(&a, &b));
        assert!(relative_error(fast, slow) <= 1e-9, "pair {k}: {fast} vs {slow}");
    }
}

#[test]
fn unit_spheres_three_apart() {
    let a = icosphere(Point3::origin(), 1.0, 3);
    let b = icosphere(Point3::new(3.0, 0.0, 0.0), 1.0, 3);
    let d = min_distance(&a, &b);
    assert!((d - 1.0).abs() <= 0.05, "{d}");
    assert_eq!(min_distance(&a, &a), 0.0);
}

#[test]
fn case_a_infiltration_set_from_oracle() {
    let case = fixture("case_a");
    let slow = oracle_matrix(&case);
    let t = case.segments.iter().position(|s| s.id.as_str() == "tumor").unwrap();
    let by_oracle: BTreeSet<SegmentId> = case
        .segments
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t && slow[t][*i] <= case.resection_margin_mm)
        .map(|(_, s)| s.id.clone())
        .collect();
    let expected: BTreeSet<SegmentId> = ["mesenteric_vein", "portal_vein"]
        .into_iter()
        .map(SegmentId::from)
        .collect();
    assert_eq!(by_oracle, expected);
    let m = distance_matrix(&case);
    assert_eq!(infiltrated(&case, &m, case.resection_margin_mm).unwrap(), expected);
    // just under the closest vessel nothing qualifies
    let closest = by_oracle
        .iter()
        .map(|id| m.get("tumor", id.as_str()).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(infiltrated(&case, &m, closest * 0.999).unwrap().is_empty());
    assert_eq!(
        infiltrated(&case, &m, f64::INFINITY).unwrap().len(),
        case.segments.len() - 1
    );
}

/// Sanity check rather than a benchmark: on two 20480-triangle spheres the
/// accelerated query must finish before the brute-force scan does. The scan
/// is given exactly the accelerated path's wall time and must not finish.
#[test]
fn accelerated_beats_brute_force_on_large_meshes() {
    let a = icosphere(Point3::origin(), 10.0, 5);
    let b = icosphere(Point3::new(25.0, 3.0, -2.0), 10.0, 5);
    assert_eq!(a.triangle_count(), 20480);
    let start = Instant::now();
    let fast = min_distance(&a, &b);
    let budget = start.elapsed();
    assert!(fast > 4.0 && fast < 6.0, "{fast}");
    let slow = brute_force_distance_until(&a, &b, Some(Instant::now() + budget));
    assert!(slow.is_none(), "brute force finished within {budget:?}");
}
