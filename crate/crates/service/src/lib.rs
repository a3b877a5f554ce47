//! Session service for the scopevoice engine: case catalog, per-session
//! engines for both voice interfaces, scenario replay, and the HTTP and
//! WebSocket surface used by the operator console.

pub mod catalog;
pub mod config;
pub mod engine;
pub mod http;
pub mod script;
pub mod sessions;

use std::sync::Arc;

use scopevoice_core::prompt::ExampleStore;

use crate::catalog::{CaseCatalog, CatalogError};
use crate::config::ServiceConfig;

/// Builds the case catalog described by `cfg`.
pub fn catalog_from_config(cfg: &ServiceConfig) -> Result<Arc<CaseCatalog>, CatalogError> {
    let examples = match &cfg.examples {
        Some(path) => ExampleStore::from_file(path)?,
        None => ExampleStore::shipped(),
    };
    Ok(Arc::new(CaseCatalog::new(
        cfg.cases_dir.clone(),
        cfg.corrections_dir.clone(),
        examples,
    )))
}
