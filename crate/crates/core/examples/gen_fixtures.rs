//! Writes the fixture cases: one JSON case file plus OBJ meshes per case.
//!
//!     cargo run -p scopevoice-core --example gen_fixtures -- fixtures
//!
//! Geometry is laid out by hand around the tumor so that the structures within
//! the infiltration margin are known in advance; the test suite re-derives them
//! with a brute-force distance scan.

use std::fs;
use std::path::Path;

use nalgebra::Point3;
use scopevoice_core::mesh::{shapes, TriMesh};
use serde_json::{json, Value};

enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
        level: u32,
    },
    Tube {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
}

struct Seg {
    id: &'static str,
    display: &'static str,
    synonyms: &'static [&'static str],
    category: &'static str,
    shape: Shape,
}

fn p(a: [f64; 3]) -> Point3<f64> {
    Point3::new(a[0], a[1], a[2])
}

fn mesh(shape: &Shape) -> TriMesh {
    match shape {
        Shape::Sphere { center, radius, level } => shapes::icosphere(p(*center), *radius, *level),
        Shape::Tube { start, end, radius } => shapes::tube(p(*start), p(*end), *radius, 16),
    }
}

fn write_case(root: &Path, case_id: &str, margin: f64, diagnosis: &str, guidelines: Value, segs: &[Seg]) {
    let dir = root.join(case_id);
    fs::create_dir_all(dir.join("meshes")).expect("create fixture dir");
    let mut segments = Vec::new();
    for s in segs {
        let rel = format!("meshes/{}.obj", s.id);
        fs::write(dir.join(&rel), mesh(&s.shape).to_obj()).expect("write mesh");
        segments.push(json!({
            "id": s.id,
            "display_name": s.display,
            "synonyms": s.synonyms,
            "category": s.category,
            "mesh_ref": rel,
        }));
    }
    let case = json!({
        "case_id": case_id,
        "resection_margin_mm": margin,
        "diagnosis": diagnosis,
        "guidelines": guidelines,
        "segments": segments,
    });
    let mut text = serde_json::to_string_pretty(&case).expect("serialize case");
    text.push('\n');
    fs::write(dir.join("case.json"), text).expect("write case");
}

fn tube(start: [f64; 3], end: [f64; 3], radius: f64) -> Shape {
    Shape::Tube { start, end, radius }
}

#[rustfmt::skip]
fn case_a(root: &Path) {
    // Tumor of the pancreatic head, radius 10 at the origin. Axis offsets put
    // the portal vein 1.0 mm and the mesenteric vein 0.6 mm from the sphere;
    // every other structure keeps at least 4 mm.
    let segs = [
        Seg { id: "celiac_trunk", display: "Celiac trunk", synonyms: &["turunkus", "truncus coeliacus"], category: "artery", shape: tube([0.0, -25.0, 30.0], [0.0, -25.0, 45.0], 3.5) },
        Seg { id: "gastroduodenal_artery", display: "Gastroduodenal artery", synonyms: &["gda", "gastroduodenalis"], category: "artery", shape: tube([12.0, 14.0, -10.0], [12.0, 14.0, 30.0], 2.0) },
        Seg { id: "superior_mesenteric_artery", display: "Superior mesenteric artery", synonyms: &["mesenteric artery", "superior mesenteric", "ams", "sma"], category: "artery", shape: tube([0.0, -25.0, -60.0], [0.0, -25.0, 28.0], 3.0) },
        Seg { id: "splenic_artery", display: "Splenic artery", synonyms: &[], category: "artery", shape: tube([-10.0, -10.0, 30.0], [-60.0, -10.0, 30.0], 2.5) },
        Seg { id: "gastric_artery", display: "Gastric artery", synonyms: &["gastrica sinistra", "left gastric artery"], category: "artery", shape: tube([0.0, -25.0, 47.0], [0.0, 10.0, 60.0], 1.5) },
        Seg { id: "hepatic_artery", display: "Hepatic artery", synonyms: &["liver artery"], category: "artery", shape: tube([20.0, 20.0, 35.0], [-10.0, 20.0, 35.0], 2.5) },
        Seg { id: "portal_vein", display: "Portal vein", synonyms: &["vena portae", "vena portea"], category: "vein", shape: tube([17.0, 0.0, -20.0], [17.0, 0.0, 40.0], 6.0) },
        Seg { id: "vena_cava", display: "Inferior vena cava", synonyms: &["vena cava", "cava", "ivc"], category: "vein", shape: tube([-26.0, 0.0, -60.0], [-26.0, 0.0, 60.0], 8.0) },
        Seg { id: "splenic_vein", display: "Splenic vein", synonyms: &[], category: "vein", shape: tube([-8.0, -8.0, 20.0], [-60.0, -8.0, 20.0], 4.0) },
        Seg { id: "mesenteric_vein", display: "Mesenteric vein", synonyms: &["vena mesenterica", "superior mesenteric vein", "smv"], category: "vein", shape: tube([0.0, -15.6, -60.0], [0.0, -15.6, 10.0], 5.0) },
        Seg { id: "tumor", display: "Tumor", synonyms: &["lesion", "cancer"], category: "tumor", shape: Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 10.0, level: 3 } },
        Seg { id: "variation", display: "Variation", synonyms: &["anatomical variation"], category: "variation", shape: Shape::Sphere { center: [25.0, -20.0, -20.0], radius: 3.0, level: 2 } },
    ];
    let guidelines = json!([
        {
            "rule_id": "infiltration_margin",
            "description": "Structures within 2.0 mm of the tumor surface are considered infiltrated by the tumor.",
            "kind": "infiltration_margin",
            "params": { "margin_mm": 2.0 }
        },
        {
            "rule_id": "gda_with_tumor",
            "description": "In a pancreatoduodenectomy the gastroduodenal artery is resected with the tumor.",
            "kind": "resect_with_tumor",
            "params": { "segments": ["gastroduodenal_artery"] }
        },
        {
            "rule_id": "arterial_anatomy",
            "description": "Confirm the hepatic arterial supply on CT before dissecting near the celiac trunk.",
            "kind": "informational",
            "params": {}
        }
    ]);
    write_case(
        root,
        "case_a",
        2.0,
        "Ductal adenocarcinoma of the pancreatic head with venous contact; planned pancreatoduodenectomy.",
        guidelines,
        &segs,
    );
}

#[rustfmt::skip]
fn case_b(root: &Path) {
    // Tumor of the pancreatic tail, radius 8. Splenic vein 1.5 mm and splenic
    // artery 2.5 mm away, inside the 3 mm margin; the spleen goes with the
    // tumor by guideline.
    let segs = [
        Seg { id: "splenic_vein", display: "Splenic vein", synonyms: &[], category: "vein", shape: tube([40.0, 13.5, 0.0], [-40.0, 13.5, 0.0], 4.0) },
        Seg { id: "splenic_artery", display: "Splenic artery", synonyms: &[], category: "artery", shape: tube([40.0, -13.0, 0.0], [-40.0, -13.0, 0.0], 2.5) },
        Seg { id: "portal_vein", display: "Portal vein", synonyms: &["vena portae"], category: "vein", shape: tube([48.0, 10.0, -30.0], [48.0, 10.0, 30.0], 6.0) },
        Seg { id: "superior_mesenteric_artery", display: "Superior mesenteric artery", synonyms: &["sma", "mesenteric artery"], category: "artery", shape: tube([20.0, 0.0, -60.0], [20.0, 0.0, -9.0], 3.0) },
        Seg { id: "mesenteric_vein", display: "Mesenteric vein", synonyms: &["smv"], category: "vein", shape: tube([30.0, 10.0, -60.0], [30.0, 10.0, -8.0], 4.5) },
        Seg { id: "hepatic_artery", display: "Hepatic artery", synonyms: &["liver artery"], category: "artery", shape: tube([40.0, -20.0, 25.0], [80.0, -20.0, 25.0], 2.5) },
        Seg { id: "vena_cava", display: "Inferior vena cava", synonyms: &["vena cava", "cava"], category: "vein", shape: tube([55.0, 30.0, -60.0], [55.0, 30.0, 60.0], 8.0) },
        Seg { id: "spleen", display: "Spleen", synonyms: &[], category: "organ", shape: Shape::Sphere { center: [-60.0, 0.0, 0.0], radius: 15.0, level: 3 } },
        Seg { id: "tumor", display: "Tumor", synonyms: &["lesion", "cancer"], category: "tumor", shape: Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 8.0, level: 4 } },
    ];
    let guidelines = json!([
        {
            "rule_id": "infiltration_margin",
            "description": "Vessels closer than 3.0 mm to the tumor are treated as infiltrated by the tumor.",
            "kind": "infiltration_margin",
            "params": { "margin_mm": 3.0 }
        },
        {
            "rule_id": "spleen_with_tumor",
            "description": "In a distal pancreatectomy the spleen is resected with the tumor.",
            "kind": "resect_with_tumor",
            "params": { "segments": ["spleen"] }
        }
    ]);
    write_case(
        root,
        "case_b",
        3.0,
        "Neuroendocrine tumor of the pancreatic tail abutting the splenic vessels; planned distal pancreatectomy with splenectomy.",
        guidelines,
        &segs,
    );
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    case_a(root);
    case_b(root);
    println!("wrote fixtures under {}", root.display());
}
