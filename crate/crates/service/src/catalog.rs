//! Loaded cases, with the derived data every session on a case shares.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use scopevoice_core::dispatcher::Registry;
use scopevoice_core::grammar::{build_lexicon, GrammarError, Lexicon};
use scopevoice_core::prompt::{ExampleStore, PromptError};
use scopevoice_core::proximity::{distance_matrix, DistanceMatrix};
use scopevoice_core::scene::{load_case, CaseError, PatientCase, SegmentId};
use serde::Serialize;
use thiserror::Error;
use tracing::info;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("upload rejected: {0}")]
    Upload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A case plus its distance matrix, lexicon and example store.
pub struct LoadedCase {
    pub case: Arc<PatientCase>,
    pub matrix: Arc<DistanceMatrix>,
    pub lexicon: Arc<Lexicon>,
    pub registry: Arc<Registry>,
    pub examples: Arc<Mutex<ExampleStore>>,
    pub source: PathBuf,
}

impl LoadedCase {
    pub fn summary(&self) -> CaseSummary {
        let tumor = self.case.tumor().map(|t| t.id.clone());
        CaseSummary {
            case_id: self.case.case_id.clone(),
            diagnosis: self.case.diagnosis.clone(),
            resection_margin_mm: self.case.resection_margin_mm,
            segments: self
                .case
                .segments
                .iter()
                .map(|s| SegmentSummary {
                    id: s.id.clone(),
                    display_name: s.display_name.clone(),
                    category: s.category.to_string(),
                    triangles: s.mesh.triangle_count(),
                    distance_to_tumor_mm: tumor.as_ref().and_then(|t| self.matrix.get(t.as_str(), s.id.as_str())),
                })
                .collect(),
            lexicon_size: self.lexicon.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub id: SegmentId,
    pub display_name: String,
    pub category: String,
    pub triangles: usize,
    pub distance_to_tumor_mm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub diagnosis: String,
    pub resection_margin_mm: f64,
    pub segments: Vec<SegmentSummary>,
    pub lexicon_size: usize,
}

/// Case store. Reads are shared; an upload swaps in a new entry, so running
/// sessions keep the version they started with.
pub struct CaseCatalog {
    cases_dir: PathBuf,
    corrections_dir: Option<PathBuf>,
    examples: ExampleStore,
    registry: Arc<Registry>,
    loaded: RwLock<BTreeMap<String, Arc<LoadedCase>>>,
}

impl CaseCatalog {
    pub fn new(cases_dir: PathBuf, corrections_dir: Option<PathBuf>, examples: ExampleStore) -> Self {
        Self {
            cases_dir,
            corrections_dir,
            examples,
            registry: Arc::new(Registry::standard()),
            loaded: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn cases_dir(&self) -> &Path {
        &self.cases_dir
    }

    /// Case ids already loaded or present on disk.
    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .loaded
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        if let Ok(entries) = std::fs::read_dir(&self.cases_dir) {
            for e in entries.flatten() {
                if e.path().join("case.json").is_file() {
                    if let Some(name) = e.file_name().to_str() {
                        ids.push(name.to_string());
                    }
                }
            }
        }
        ids.sort();
        ids.dedup();
        ids
    }

    /// Returns the case, loading `<cases_dir>/<id>/case.json` on first use.
    pub fn get(&self, case_id: &str) -> Result<Arc<LoadedCase>, CatalogError> {
        if let Some(c) = self.loaded.read().unwrap_or_else(|e| e.into_inner()).get(case_id) {
            return Ok(c.clone());
        }
        if !is_safe_name(case_id) {
            return Err(CatalogError::UnknownCase(case_id.to_string()));
        }
        let path = self.cases_dir.join(case_id).join("case.json");
        if !path.is_file() {
            return Err(CatalogError::UnknownCase(case_id.to_string()));
        }
        let loaded = Arc::new(self.prepare(&path)?);
        if loaded.case.case_id != case_id {
            return Err(CatalogError::Upload(format!(
                "{} declares case_id {}",
                path.display(),
                loaded.case.case_id
            )));
        }
        let mut map = self.loaded.write().unwrap_or_else(|e| e.into_inner());
        Ok(map.entry(case_id.to_string()).or_insert(loaded).clone())
    }

    fn prepare(&self, path: &Path) -> Result<LoadedCase, CatalogError> {
        let case = load_case(path)?;
        let lexicon = build_lexicon(&case)?;
        let matrix = distance_matrix(&case);
        let mut examples = self.examples.clone();
        if let Some(dir) = &self.corrections_dir {
            examples = examples.with_log(dir, &case.case_id)?;
        }
        info!(case = %case.case_id, segments = case.segments.len(), "case loaded");
        Ok(LoadedCase {
            case: Arc::new(case),
            matrix: Arc::new(matrix),
            lexicon: Arc::new(lexicon),
            registry: self.registry.clone(),
            examples: Arc::new(Mutex::new(examples)),
            source: path.to_path_buf(),
        })
    }

    /// Stores an uploaded bundle: the case file plus mesh files keyed by
    /// their `mesh_ref`. The bundle is validated in a scratch directory and
    /// only then moved under `cases_dir`, replacing any earlier version.
    pub fn install(&self, case_json: &[u8], files: &[(String, Vec<u8>)]) -> Result<Arc<LoadedCase>, CatalogError> {
        let raw: serde_json::Value =
            serde_json::from_slice(case_json).map_err(|e| CatalogError::Upload(format!("case file: {e}")))?;
        let case_id = raw
            .get("case_id")
            .and_then(|v| v.as_str())
            .filter(|id| is_safe_name(id))
            .ok_or_else(|| CatalogError::Upload("case file needs a plain case_id".into()))?
            .to_string();
        std::fs::create_dir_all(&self.cases_dir)?;
        let scratch = tempfile::Builder::new()
            .prefix(".upload-")
            .tempdir_in(&self.cases_dir)?;
        for (name, bytes) in files {
            let rel = Path::new(name);
            if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(CatalogError::Upload(format!(
                    "file name {name:?} must be a relative path"
                )));
            }
            let dest = scratch.path().join(rel);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(dest, bytes)?;
        }
        std::fs::write(scratch.path().join("case.json"), case_json)?;
        // validate before anything on disk changes
        self.prepare(&scratch.path().join("case.json"))?;

        let target = self.cases_dir.join(&case_id);
        if target.exists() {
            std::fs::remove_dir_all(&target)?;
        }
        std::fs::rename(scratch.keep(), &target)?;
        let loaded = Arc::new(self.prepare(&target.join("case.json"))?);
        self.loaded
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(case_id, loaded.clone());
        Ok(loaded)
    }
}

fn is_safe_name(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}
