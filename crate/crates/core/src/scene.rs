//! Patient cases and the scene state every dispatched function acts upon.
//!
//! A [`PatientCase`] is loaded once from a JSON case file plus one OBJ mesh per
//! segment. [`SceneState`] is a plain value: each operation returns a new state
//! and leaves the input untouched.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mesh::{MeshError, TriMesh};
use crate::text;

/// Canonical segment identifier: a lowercase snake_case token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_canonical(id: &str) -> bool {
        let mut chars = id.chars();
        matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
            && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for SegmentId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Artery,
    Vein,
    Tumor,
    Organ,
    Variation,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Artery,
        Category::Vein,
        Category::Tumor,
        Category::Organ,
        Category::Variation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Artery => "artery",
            Category::Vein => "vein",
            Category::Tumor => "tumor",
            Category::Organ => "organ",
            Category::Variation => "variation",
        }
    }

    /// The plural a speaker uses for the whole group ("arteries").
    pub fn plural(self) -> &'static str {
        match self {
            Category::Artery => "arteries",
            Category::Vein => "veins",
            Category::Tumor => "tumors",
            Category::Organ => "organs",
            Category::Variation => "variations",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.plural() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct AnatomicalSegment {
    pub id: SegmentId,
    pub display_name: String,
    pub synonyms: Vec<String>,
    pub category: Category,
    pub mesh_ref: PathBuf,
    pub mesh: Arc<TriMesh>,
}

impl AnatomicalSegment {
    /// Every normalized phrase that names this segment: display name first,
    /// then synonyms, duplicates removed.
    pub fn phrases(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in std::iter::once(&self.display_name).chain(&self.synonyms) {
            let p = text::normalize(p);
            if !p.is_empty() && !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    InfiltrationMargin,
    ResectWithTumor,
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineRule {
    pub rule_id: String,
    pub description: String,
    pub kind: RuleKind,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl GuidelineRule {
    pub fn margin_mm(&self) -> Option<f64> {
        self.params.get("margin_mm").and_then(Value::as_f64)
    }

    /// Segment ids listed under `params.segments` (resect_with_tumor rules).
    pub fn segment_params(&self) -> Vec<SegmentId> {
        match self.params.get("segments") {
            Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).map(SegmentId::from).collect(),
            Some(Value::String(s)) => vec![SegmentId::from(s.as_str())],
            _ => Vec::new(),
        }
    }
}

/// Key under which the prompt lists the diagnosis next to the guideline rules.
pub const DIAGNOSIS_KEY: &str = "diagnosis";

#[derive(Debug, Clone)]
pub struct PatientCase {
    pub case_id: String,
    pub segments: Vec<AnatomicalSegment>,
    pub diagnosis: String,
    pub guidelines: Vec<GuidelineRule>,
    pub resection_margin_mm: f64,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("mesh for segment {segment} is degenerate: {reason}")]
    MeshDegenerate { segment: String, reason: String },
    #[error("phrase {phrase:?} names both {first} and {second}")]
    AliasCollision {
        phrase: String,
        first: String,
        second: String,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    case_id: String,
    resection_margin_mm: f64,
    diagnosis: String,
    #[serde(default)]
    guidelines: Vec<GuidelineRule>,
    segments: Vec<SegmentFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentFile {
    id: String,
    display_name: String,
    #[serde(default)]
    synonyms: Vec<String>,
    category: Category,
    mesh_ref: PathBuf,
}

/// Loads and validates a case file. Relative `mesh_ref`s resolve against the
/// directory holding the case file.
pub fn load_case(path: &Path) -> Result<PatientCase, CaseError> {
    let raw = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CaseError::MissingFile(path.to_path_buf()),
        _ => CaseError::SchemaViolation(format!("{}: {e}", path.display())),
    })?;
    let file: CaseFile = serde_json::from_str(&raw).map_err(|e| CaseError::SchemaViolation(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    if file.segments.is_empty() {
        return Err(CaseError::SchemaViolation(
            "segments: at least one segment is required".into(),
        ));
    }
    let mut segments = Vec::with_capacity(file.segments.len());
    for (i, s) in file.segments.into_iter().enumerate() {
        if !SegmentId::is_canonical(&s.id) {
            return Err(CaseError::SchemaViolation(format!(
                "segments[{i}].id: {:?} is not a lowercase snake_case token",
                s.id
            )));
        }
        let mesh_path = base.join(&s.mesh_ref);
        if !mesh_path.is_file() {
            return Err(CaseError::MissingFile(mesh_path));
        }
        let mesh = TriMesh::load_obj(&mesh_path).map_err(|e| match e {
            MeshError::Degenerate(reason) => CaseError::MeshDegenerate {
                segment: s.id.clone(),
                reason,
            },
            other => CaseError::SchemaViolation(format!("segments[{i}].mesh_ref ({}): {other}", s.id)),
        })?;
        segments.push(AnatomicalSegment {
            id: SegmentId::new(s.id),
            display_name: s.display_name,
            synonyms: s.synonyms,
            category: s.category,
            mesh_ref: s.mesh_ref,
            mesh: Arc::new(mesh),
        });
    }
    PatientCase::new(
        file.case_id,
        file.diagnosis,
        file.resection_margin_mm,
        file.guidelines,
        segments,
    )
}

impl PatientCase {
    /// Assembles a case from already-loaded parts, enforcing every case
    /// invariant.
    pub fn new(
        case_id: String,
        diagnosis: String,
        resection_margin_mm: f64,
        guidelines: Vec<GuidelineRule>,
        segments: Vec<AnatomicalSegment>,
    ) -> Result<Self, CaseError> {
        let schema = |m: String| Err(CaseError::SchemaViolation(m));
        if case_id.trim().is_empty() {
            return schema("case_id: must be non-empty".into());
        }
        if segments.is_empty() {
            return schema("segments: at least one segment is required".into());
        }
        if !(resection_margin_mm.is_finite() && resection_margin_mm > 0.0) {
            return schema(format!("resection_margin_mm: must be > 0, got {resection_margin_mm}"));
        }
        let mut ids = BTreeSet::new();
        for (i, s) in segments.iter().enumerate() {
            if !SegmentId::is_canonical(s.id.as_str()) {
                return schema(format!("segments[{i}].id: {:?} is not canonical", s.id.as_str()));
            }
            if !ids.insert(s.id.clone()) {
                return schema(format!("segments[{i}].id: duplicate id {}", s.id));
            }
        }
        let tumors = segments.iter().filter(|s| s.category == Category::Tumor).count();
        if tumors > 1 {
            return schema(format!("segments: at most one tumor segment allowed, found {tumors}"));
        }

        let mut owner: HashMap<String, &SegmentId> = HashMap::new();
        for s in &segments {
            for phrase in s.phrases() {
                if let Some(first) = owner.insert(phrase.clone(), &s.id) {
                    if first != &s.id {
                        return Err(CaseError::AliasCollision {
                            phrase,
                            first: first.to_string(),
                            second: s.id.to_string(),
                        });
                    }
                }
            }
        }

        let mut rule_ids = BTreeSet::new();
        for (i, g) in guidelines.iter().enumerate() {
            if g.rule_id.trim().is_empty() || !rule_ids.insert(g.rule_id.clone()) {
                return schema(format!("guidelines[{i}].rule_id: empty or duplicate {:?}", g.rule_id));
            }
            if g.rule_id == DIAGNOSIS_KEY {
                return schema(format!(
                    "guidelines[{i}].rule_id: {DIAGNOSIS_KEY:?} is reserved for the case diagnosis"
                ));
            }
            match g.kind {
                RuleKind::InfiltrationMargin => match g.margin_mm() {
                    Some(m) if m.is_finite() && m > 0.0 => {}
                    _ => {
                        return schema(format!(
                            "guidelines[{i}].params.margin_mm: infiltration_margin rules need a positive margin_mm"
                        ))
                    }
                },
                RuleKind::ResectWithTumor => {
                    for id in g.segment_params() {
                        if !ids.contains(&id) {
                            return schema(format!("guidelines[{i}].params.segments: unknown segment {id}"));
                        }
                    }
                }
                RuleKind::Informational => {}
            }
        }

        Ok(Self {
            case_id,
            segments,
            diagnosis,
            guidelines,
            resection_margin_mm,
        })
    }

    pub fn segment(&self, id: &str) -> Option<&AnatomicalSegment> {
        self.segments.iter().find(|s| s.id.as_str() == id)
    }

    pub fn segment_ids(&self) -> impl Iterator<Item = &SegmentId> {
        self.segments.iter().map(|s| &s.id)
    }

    pub fn tumor(&self) -> Option<&AnatomicalSegment> {
        self.segments.iter().find(|s| s.category == Category::Tumor)
    }

    pub fn in_category(&self, category: Category) -> impl Iterator<Item = &AnatomicalSegment> {
        self.segments.iter().filter(move |s| s.category == category)
    }

    /// Categories present in this case, in canonical order.
    pub fn categories(&self) -> Vec<Category> {
        Category::ALL
            .into_iter()
            .filter(|c| self.segments.iter().any(|s| s.category == *c))
            .collect()
    }

    /// Segments guideline rules designate for removal with the tumor.
    pub fn resect_with_tumor(&self) -> BTreeSet<SegmentId> {
        self.guidelines
            .iter()
            .filter(|g| g.kind == RuleKind::ResectWithTumor)
            .flat_map(GuidelineRule::segment_params)
            .collect()
    }

    /// Resolves a target word: a category name (singular or plural) or a
    /// segment id.
    pub fn resolve_target(&self, target: &str) -> Result<Target, SceneError> {
        if let Some(s) = self.segment(target) {
            return Ok(Target::Segment(s.id.clone()));
        }
        match target.parse::<Category>() {
            Ok(c) => Ok(Target::Category(c)),
            Err(_) => Err(SceneError::UnknownTarget(target.to_string())),
        }
    }

    /// Segments a target addresses, in case order.
    pub fn target_segments(&self, target: &Target) -> Result<Vec<SegmentId>, SceneError> {
        match target {
            Target::Segment(id) => match self.segment(id.as_str()) {
                Some(s) => Ok(vec![s.id.clone()]),
                None => Err(SceneError::UnknownTarget(id.to_string())),
            },
            Target::Category(c) => Ok(self.in_category(*c).map(|s| s.id.clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Segment(SegmentId),
    Category(Category),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Segment(id) => write!(f, "{id}"),
            Target::Category(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibilityMode {
    On,
    Off,
    Toggle,
}

impl VisibilityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VisibilityMode::On => "on",
            VisibilityMode::Off => "off",
            VisibilityMode::Toggle => "toggle",
        }
    }
}

impl FromStr for VisibilityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on" => Ok(VisibilityMode::On),
            "off" => Ok(VisibilityMode::Off),
            "toggle" => Ok(VisibilityMode::Toggle),
            other => Err(format!("unknown visibility mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Freeze,
    MarkerTracking,
    ResetPose,
    ScrollUp,
    ScrollDown,
    ScrollStop,
    CapturePhoto,
    CaptureHologram,
    ToggleCt,
    TogglePatientInfo,
}

impl ControlAction {
    pub const ALL: [ControlAction; 10] = [
        ControlAction::Freeze,
        ControlAction::MarkerTracking,
        ControlAction::ResetPose,
        ControlAction::ScrollUp,
        ControlAction::ScrollDown,
        ControlAction::ScrollStop,
        ControlAction::CapturePhoto,
        ControlAction::CaptureHologram,
        ControlAction::ToggleCt,
        ControlAction::TogglePatientInfo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlAction::Freeze => "freeze",
            ControlAction::MarkerTracking => "marker_tracking",
            ControlAction::ResetPose => "reset_pose",
            ControlAction::ScrollUp => "scroll_up",
            ControlAction::ScrollDown => "scroll_down",
            ControlAction::ScrollStop => "scroll_stop",
            ControlAction::CapturePhoto => "capture_photo",
            ControlAction::CaptureHologram => "capture_hologram",
            ControlAction::ToggleCt => "toggle_ct",
            ControlAction::TogglePatientInfo => "toggle_patient_info",
        }
    }
}

impl fmt::Display for ControlAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControlAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        ControlAction::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown control action {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtScroll {
    #[default]
    Idle,
    Up,
    Down,
}

/// Side effects of control actions that have no scene-state footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlEffect {
    Capture { with_holograms: bool },
    PoseReset,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneError {
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("CT scrolling requires the CT panel to be open")]
    ScrollWithoutCT,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneState {
    visible: BTreeMap<SegmentId, bool>,
    frozen: bool,
    marker_tracking: bool,
    ct_panel_open: bool,
    patient_panel_open: bool,
    ct_index: u32,
    ct_scroll: CtScroll,
}

impl SceneState {
    /// Everything hidden, tracking on, panels closed.
    pub fn initial(case: &PatientCase) -> Self {
        Self {
            visible: case.segment_ids().map(|id| (id.clone(), false)).collect(),
            frozen: false,
            marker_tracking: true,
            ct_panel_open: false,
            patient_panel_open: false,
            ct_index: 0,
            ct_scroll: CtScroll::Idle,
        }
    }

    pub fn visible(&self) -> &BTreeMap<SegmentId, bool> {
        &self.visible
    }

    pub fn is_visible(&self, id: &str) -> bool {
        self.visible.get(id).copied().unwrap_or(false)
    }

    pub fn visible_set(&self) -> BTreeSet<SegmentId> {
        self.visible
            .iter()
            .filter(|(_, v)| **v)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn marker_tracking(&self) -> bool {
        self.marker_tracking
    }

    pub fn ct_panel_open(&self) -> bool {
        self.ct_panel_open
    }

    pub fn patient_panel_open(&self) -> bool {
        self.patient_panel_open
    }

    pub fn ct_index(&self) -> u32 {
        self.ct_index
    }

    pub fn ct_scroll(&self) -> CtScroll {
        self.ct_scroll
    }

    /// Stable digest of the full state.
    pub fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    pub fn set_visibility(
        &self,
        case: &PatientCase,
        target: &Target,
        mode: VisibilityMode,
    ) -> Result<SceneState, SceneError> {
        let ids = case.target_segments(target)?;
        let mut next = self.clone();
        for id in ids {
            let slot = next
                .visible
                .get_mut(id.as_str())
                .ok_or_else(|| SceneError::UnknownTarget(id.to_string()))?;
            *slot = match mode {
                VisibilityMode::On => true,
                VisibilityMode::Off => false,
                VisibilityMode::Toggle => !*slot,
            };
        }
        Ok(next)
    }

    /// Forces one segment's flag. Used when replaying visibility effects.
    pub fn with_segment(&self, id: &str, visible: bool) -> Result<SceneState, SceneError> {
        let mut next = self.clone();
        match next.visible.get_mut(id) {
            Some(slot) => *slot = visible,
            None => return Err(SceneError::UnknownTarget(id.to_string())),
        }
        Ok(next)
    }

    pub fn control(&self, action: ControlAction) -> Result<(SceneState, Option<ControlEffect>), SceneError> {
        let mut next = self.clone();
        let mut effect = None;
        match action {
            ControlAction::Freeze => {
                next.frozen = true;
                next.marker_tracking = false;
            }
            ControlAction::MarkerTracking => {
                next.marker_tracking = true;
                next.frozen = false;
            }
            ControlAction::ResetPose => effect = Some(ControlEffect::PoseReset),
            ControlAction::ScrollUp | ControlAction::ScrollDown | ControlAction::ScrollStop => {
                if !self.ct_panel_open {
                    return Err(SceneError::ScrollWithoutCT);
                }
                next.ct_scroll = match action {
                    ControlAction::ScrollUp => CtScroll::Up,
                    ControlAction::ScrollDown => CtScroll::Down,
                    _ => CtScroll::Idle,
                };
            }
            ControlAction::CapturePhoto => effect = Some(ControlEffect::Capture { with_holograms: false }),
            ControlAction::CaptureHologram => effect = Some(ControlEffect::Capture { with_holograms: true }),
            ControlAction::ToggleCt => {
                next.ct_panel_open = !next.ct_panel_open;
                if !next.ct_panel_open {
                    next.ct_scroll = CtScroll::Idle;
                }
            }
            ControlAction::TogglePatientInfo => next.patient_panel_open = !next.patient_panel_open,
        }
        Ok((next, effect))
    }

    /// Advances automatic CT scrolling by one slice. Scrolling up moves toward
    /// slice 0 and stops there.
    pub fn tick(&self) -> SceneState {
        let mut next = self.clone();
        match self.ct_scroll {
            CtScroll::Idle => {}
            CtScroll::Up => next.ct_index = self.ct_index.saturating_sub(1),
            CtScroll::Down => next.ct_index = self.ct_index.saturating_add(1),
        }
        next
    }

    /// Sets the CT slice index directly. Used when replaying scroll effects.
    pub fn with_ct_index(&self, index: u32) -> SceneState {
        let mut next = self.clone();
        next.ct_index = index;
        next
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn initial_state_is_blank_and_tracking() {
        let case = vascular_case();
        let s = SceneState::initial(&case);
        assert_eq!(s.visible().len(), 5);
        assert!(s.visible().values().all(|v| !v));
        assert!(s.marker_tracking() && !s.frozen());
        assert!(!s.ct_panel_open() && !s.patient_panel_open());
        assert_eq!((s.ct_index(), s.ct_scroll()), (0, CtScroll::Idle));
        let keys: Vec<&SegmentId> = s.visible().keys().collect();
        let mut ids: Vec<&SegmentId> = case.segment_ids().collect();
        ids.sort();
        assert_eq!(keys, ids);
    }

    #[test]
    fn toggle_tumor_and_back() {
        let case = vascular_case();
        let s0 = SceneState::initial(&case);
        let tumor = Target::Segment("tumor".into());
        let s1 = s0.set_visibility(&case, &tumor, VisibilityMode::Toggle).unwrap();
        assert!(s1.is_visible("tumor"));
        let s2 = s1.set_visibility(&case, &tumor, VisibilityMode::Toggle).unwrap();
        assert_eq!(s2, s0);
    }

    #[test]
    fn category_target_hits_exactly_arteries() {
        let case = vascular_case();
        let s = SceneState::initial(&case)
            .set_visibility(&case, &Target::Category(Category::Artery), VisibilityMode::On)
            .unwrap();
        let expected: BTreeSet<SegmentId> = case.in_category(Category::Artery).map(|s| s.id.clone()).collect();
        assert_eq!(s.visible_set(), expected);
    }

    #[test]
    fn unknown_target_is_rejected() {
        let case = vascular_case();
        assert_eq!(
            case.resolve_target("spleen").unwrap_err(),
            SceneError::UnknownTarget("spleen".into())
        );
        assert!(SceneState::initial(&case)
            .set_visibility(&case, &Target::Segment("spleen".into()), VisibilityMode::On)
            .is_err());
    }

    #[test]
    fn freeze_then_tracking() {
        let case = vascular_case();
        let (s, _) = SceneState::initial(&case).control(ControlAction::Freeze).unwrap();
        assert!(s.frozen() && !s.marker_tracking());
        let (s, _) = s.control(ControlAction::MarkerTracking).unwrap();
        assert!(!s.frozen() && s.marker_tracking());
    }

    #[test]
    fn scrolling_needs_ct_panel() {
        let case = vascular_case();
        let s = SceneState::initial(&case);
        assert_eq!(
            s.control(ControlAction::ScrollUp).unwrap_err(),
            SceneError::ScrollWithoutCT
        );
        let (s, _) = s.control(ControlAction::ToggleCt).unwrap();
        let (s, _) = s.control(ControlAction::ScrollDown).unwrap();
        assert_eq!(s.ct_scroll(), CtScroll::Down);
        assert_eq!(s.tick().tick().ct_index(), 2);
        let (s, _) = s.control(ControlAction::ScrollStop).unwrap();
        assert_eq!(s.ct_scroll(), CtScroll::Idle);
        let (s, _) = s.control(ControlAction::ScrollUp).unwrap();
        assert_eq!(s.tick().ct_index(), 0, "scrolling up saturates at the first slice");
        let (closed, _) = s.control(ControlAction::ToggleCt).unwrap();
        assert_eq!(closed.ct_scroll(), CtScroll::Idle);
    }

    #[test]
    fn captures_and_pose_reset_are_effects_only() {
        let case = vascular_case();
        let s = SceneState::initial(&case)
            .set_visibility(&case, &Target::Segment("tumor".into()), VisibilityMode::On)
            .unwrap();
        let (after, eff) = s.control(ControlAction::CaptureHologram).unwrap();
        assert_eq!(after, s);
        assert_eq!(eff, Some(ControlEffect::Capture { with_holograms: true }));
        let (after, eff) = s.control(ControlAction::ResetPose).unwrap();
        assert_eq!(after, s);
        assert_eq!(eff, Some(ControlEffect::PoseReset));
    }

    #[test]
    fn frozen_and_tracking_never_both_true_in_three_steps() {
        let case = vascular_case();
        let s0 = SceneState::initial(&case);
        let mut frontier = vec![s0];
        for _ in 0..3 {
            let mut next = Vec::new();
            for s in &frontier {
                for a in ControlAction::ALL {
                    if let Ok((n, _)) = s.control(a) {
                        assert!(!(n.frozen() && n.marker_tracking()), "{a} broke exclusivity");
                        assert!(n.ct_scroll() == CtScroll::Idle || n.ct_panel_open());
                        next.push(n);
                    }
                }
            }
            frontier = next;
        }
        assert!(frontier.len() > 300);
    }

    #[test]
    fn alias_collisions_are_detected() {
        let seg = |id: &str, syn: &[&str], cat| AnatomicalSegment {
            id: id.into(),
            display_name: id.into(),
            synonyms: syn.iter().map(|s| s.to_string()).collect(),
            category: cat,
            mesh_ref: PathBuf::new(),
            mesh: Arc::new(crate::mesh::shapes::icosphere(nalgebra::Point3::origin(), 1.0, 0)),
        };
        let r = PatientCase::new(
            "c".into(),
            String::new(),
            2.0,
            vec![],
            vec![
                seg("tumor", &["Lesion"], Category::Tumor),
                seg("cyst", &["lesion "], Category::Organ),
            ],
        );
        assert!(matches!(r, Err(CaseError::AliasCollision { ref phrase, .. }) if phrase == "lesion"));
    }

    #[test]
    fn case_invariants() {
        let seg = |id: &str, cat| AnatomicalSegment {
            id: id.into(),
            display_name: id.into(),
            synonyms: vec![],
            category: cat,
            mesh_ref: PathBuf::new(),
            mesh: Arc::new(crate::mesh::shapes::icosphere(nalgebra::Point3::origin(), 1.0, 0)),
        };
        let mk = |segs, margin, rules| PatientCase::new("c".into(), String::new(), margin, rules, segs);
        assert!(matches!(mk(vec![], 2.0, vec![]), Err(CaseError::SchemaViolation(_))));
        assert!(matches!(
            mk(vec![seg("a", Category::Vein)], 0.0, vec![]),
            Err(CaseError::SchemaViolation(_))
        ));
        assert!(matches!(
            mk(vec![seg("a", Category::Tumor), seg("b", Category::Tumor)], 2.0, vec![]),
            Err(CaseError::SchemaViolation(_))
        ));
        assert!(matches!(
            mk(vec![seg("a", Category::Vein), seg("a", Category::Vein)], 2.0, vec![]),
            Err(CaseError::SchemaViolation(_))
        ));
        let bad_rule = GuidelineRule {
            rule_id: "m".into(),
            description: String::new(),
            kind: RuleKind::InfiltrationMargin,
            params: BTreeMap::new(),
        };
        assert!(matches!(
            mk(vec![seg("a", Category::Vein)], 2.0, vec![bad_rule]),
            Err(CaseError::SchemaViolation(_))
        ));
    }

    fn arb_op() -> impl Strategy<Value = (usize, VisibilityMode)> {
        (
            0usize..7,
            prop_oneof![
                Just(VisibilityMode::On),
                Just(VisibilityMode::Off),
                Just(VisibilityMode::Toggle)
            ],
        )
    }

    fn target_for(case: &PatientCase, i: usize) -> Target {
        match i {
            5 => Target::Category(Category::Artery),
            6 => Target::Category(Category::Vein),
            i => Target::Segment(case.segments[i].id.clone()),
        }
    }

    proptest! {
        #[test]
        fn visibility_ops_keep_key_set_and_toggle_is_involution(ops in proptest::collection::vec(arb_op(), 0..20), probe in 0usize..7) {
            let case = vascular_case();
            let mut s = SceneState::initial(&case);
            for (i, mode) in ops {
                s = s.set_visibility(&case, &target_for(&case, i), mode).unwrap();
                prop_assert_eq!(s.visible().len(), 5);
            }
            let t = target_for(&case, probe);
            let back = s
                .set_visibility(&case, &t, VisibilityMode::Toggle).unwrap()
                .set_visibility(&case, &t, VisibilityMode::Toggle).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn disjoint_visibility_ops_commute(a in 0usize..5, b in 0usize..5, ma in arb_op(), mb in arb_op(), seed in proptest::collection::vec(any::<bool>(), 5)) {
            prop_assume!(a != b);
            let case = vascular_case();
            let mut s = SceneState::initial(&case);
            for (i, on) in seed.into_iter().enumerate() {
                s = s.with_segment(case.segments[i].id.as_str(), on).unwrap();
            }
            let (ta, tb) = (target_for(&case, a), target_for(&case, b));
            let ab = s.set_visibility(&case, &ta, ma.1).unwrap().set_visibility(&case, &tb, mb.1).unwrap();
            let ba = s.set_visibility(&case, &tb, mb.1).unwrap().set_visibility(&case, &ta, ma.1).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
