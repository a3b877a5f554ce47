//! Pairwise surface distances between case segments and the infiltration
//! predicate derived from them.

pub mod bvh;
pub mod kernel;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::TriMesh;
use crate::scene::{PatientCase, SegmentId};

pub use bvh::Bvh;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProximityError {
    #[error("case has no tumor segment")]
    NoTumorSegment,
    #[error("margin must be a positive length, got {0}")]
    InvalidMargin(f64),
    #[error("distance matrix does not belong to case {0}")]
    MatrixCaseMismatch(String),
}

/// Exact minimum distance in millimeters between two meshes; 0 when they
/// touch or intersect.
pub fn min_distance(a: &TriMesh, b: &TriMesh) -> f64 {
    Bvh::build(a).distance(&Bvh::build(b))
}

/// Symmetric segment-by-segment surface distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<SegmentId>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a dense row-major table, checking shape, symmetry, zero diagonal
    /// and non-negativity.
    pub fn from_rows(ids: Vec<SegmentId>, rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(format!("expected a {n}x{n} table"));
        }
        let d: Vec<f64> = rows.into_iter().flatten().collect();
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(format!("diagonal entry {} is not zero", ids[i]));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if v.is_nan() || v < 0.0 || v != d[j * n + i] {
                    return Err(format!("entry ({}, {}) breaks symmetry or sign", ids[i], ids[j]));
                }
            }
        }
        Ok(Self { ids, d })
    }

    pub fn ids(&self) -> &[SegmentId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x.as_str() == id)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.at(self.index_of(a)?, self.index_of(b)?))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.ids.len().max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Distances from one segment to every segment, keyed by id.
    pub fn row(&self, id: &str) -> Option<BTreeMap<SegmentId, f64>> {
        let i = self.index_of(id)?;
        Some(
            self.ids
                .iter()
                .enumerate()
                .map(|(j, other)| (other.clone(), self.at(i, j)))
                .collect(),
        )
    }

    pub fn transpose(&self) -> Self {
        let n = self.ids.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[j * n + i] = self.d[i * n + j];
            }
        }
        Self {
            ids: self.ids.clone(),
            d,
        }
    }

    pub fn matches_case(&self, case: &PatientCase) -> bool {
        self.ids.iter().eq(case.segment_ids())
    }
}

/// All-pairs minimum surface distances, in case segment order. Each pair runs
/// independently, so the result does not depend on scheduling.
pub fn distance_matrix(case: &PatientCase) -> DistanceMatrix {
    let bvhs: Vec<Bvh> = case.segments.par_iter().map(|s| Bvh::build(&s.mesh)).collect();
    let n = bvhs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| bvhs[i].distance(&bvhs[j])).collect();
    let mut d = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i * n + j] = v;
        d[j * n + i] = v;
    }
    DistanceMatrix {
        ids: case.segment_ids().cloned().collect(),
        d,
    }
}

/// Non-tumor segments whose surface lies within `margin_mm` of the tumor.
pub fn infiltrated(
    case: &PatientCase,
    matrix: &DistanceMatrix,
    margin_mm: f64,
) -> Result<BTreeSet<SegmentId>, ProximityError> {
    if margin_mm.is_nan() || margin_mm <= 0.0 {
        return Err(ProximityError::InvalidMargin(margin_mm));
    }
    if !matrix.matches_case(case) {
        return Err(ProximityError::MatrixCaseMismatch(case.case_id.clone()));
    }
    let tumor = case.tumor().ok_or(ProximityError::NoTumorSegment)?;
    let t = matrix
        .index_of(tumor.id.as_str())
        .ok_or(ProximityError::NoTumorSegment)?;
    Ok(matrix
        .ids
        .iter()
        .enumerate()
        .filter(|&(j, id)| *id != tumor.id && matrix.at(t, j) <= margin_mm)
        .map(|(_, id)| id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{shapes, Point};
    use crate::scene::test_support::vascular_case;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    #[test]
    fn self_distance_is_zero() {
        let m = shapes::icosphere(Point::origin(), 4.0, 2);
        assert_eq!(min_distance(&m, &m), 0.0);
    }

    #[test]
    fn unit_spheres_three_apart() {
        let a = shapes::icosphere(Point::origin(), 1.0, 3);
        let b = shapes::icosphere(Point::new(3.0, 0.0, 0.0), 1.0, 3);
        let d = min_distance(&a, &b);
        assert!((d - 1.0).abs() <= 0.05, "got {d}");
        assert!(d >= 1.0 - 1e-12, "inscribed facets can only increase the gap");
    }

    #[test]
    fn matrix_shape_and_symmetry() {
        let case = vascular_case();
        let m = distance_matrix(&case);
        assert_eq!(m.len(), 5);
        assert_eq!(m, m.transpose());
        for i in 0..5 {
            assert_eq!(m.at(i, i), 0.0);
        }
        // unit icospheres 10 mm apart along x; inscribed facets widen the 8 mm gap
        assert!(m.at(0, 1) >= 8.0 && m.at(0, 1) <= 8.0 + 2.0 * (1.0 - 0.79));
        assert!(DistanceMatrix::from_rows(m.ids().to_vec(), m.rows()).is_ok());
    }

    #[test]
    fn infiltration_thresholds() {
        let case = vascular_case();
        let m = distance_matrix(&case);
        // tumor is the last sphere; splenic_vein is its nearest neighbour
        let nearest = m.get("tumor", "splenic_vein").unwrap();
        assert!(infiltrated(&case, &m, nearest * (1.0 - 1e-9)).unwrap().is_empty());
        assert_eq!(
            infiltrated(&case, &m, nearest).unwrap(),
            BTreeSet::from([SegmentId::from("splenic_vein")])
        );
        assert_eq!(infiltrated(&case, &m, f64::INFINITY).unwrap().len(), 4);
        assert_eq!(infiltrated(&case, &m, 0.0), Err(ProximityError::InvalidMargin(0.0)));
    }

    #[test]
    fn infiltration_requires_tumor() {
        let case = crate::scene::test_support::tiny_case(&[
            ("a", crate::scene::Category::Vein, &[]),
            ("b", crate::scene::Category::Artery, &[]),
        ]);
        let m = distance_matrix(&case);
        assert_eq!(infiltrated(&case, &m, 2.0), Err(ProximityError::NoTumorSegment));
    }

    fn blob(center: (f64, f64, f64), radius: f64, level: u32) -> TriMesh {
        shapes::icosphere(Point::new(center.0, center.1, center.2), radius, level)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sandwich_bounds(c1 in (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64),
                           c2 in (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64),
                           r1 in 0.5..4.0f64, r2 in 0.5..4.0f64, shift in -2.0..2.0f64) {
            let a = blob(c1, r1, 1);
            let b = blob(c2, r2, 1).translated(Vector3::new(shift, 0.0, 0.0));
            let d = min_distance(&a, &b);
            let vmin = a.vertices().iter()
                .flat_map(|x| b.vertices().iter().map(move |y| (x - y).norm()))
                .fold(f64::INFINITY, f64::min);
            let (ca, cb) = (a.centroid(), b.centroid());
            let lower = ((ca - cb).norm() - a.radius_about(&ca) - b.radius_about(&cb)).max(0.0);
            prop_assert!(d <= vmin + 1e-12);
            prop_assert!(d + 1e-12 >= lower);
        }

        #[test]
        fn infiltration_is_monotone_in_margin(m1 in 0.01..30.0f64, extra in 0.0..30.0f64) {
            let case = vascular_case();
            let m = distance_matrix(&case);
            let small = infiltrated(&case, &m, m1).unwrap();
            let large = infiltrated(&case, &m, m1 + extra).unwrap();
            prop_assert!(small.is_subset(&large));
        }
    }
}
