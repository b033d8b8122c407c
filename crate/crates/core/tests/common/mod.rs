#![allow(dead_code)]

pub mod gen;

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use interfaze_core::canonical::to_canonical_bytes;
use interfaze_core::gateway::{CompletionRequest, Gateway, WireAttachment};
use interfaze_core::retrieval::{build_index_from_dir, IndexKind};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
}

/// Compares `actual` with the golden file, or rewrites it under
/// `UPDATE_GOLDEN`. Returns whether they matched.
pub fn check_golden(rel: &str, actual: &[u8]) -> bool {
    let path = golden_dir().join(rel);
    if updating() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return true;
    }
    match std::fs::read(&path) {
        Ok(expected) => expected == actual,
        Err(e) => panic!("golden file {} unreadable ({e}); rerun with UPDATE_GOLDEN=1", path.display()),
    }
}

/// Standing indexes of the end-to-end config, rebuilt from the corpus.
/// Committed dumps must equal fresh builds.
pub fn ensure_indexes() {
    let out = fixtures().join("e2e/indexes");
    std::fs::create_dir_all(&out).unwrap();
    for kind in [IndexKind::Code, IndexKind::Docs, IndexKind::Web] {
        let index = build_index_from_dir(kind, &fixtures().join("corpus").join(kind.as_str()), t0()).unwrap();
        let path = out.join(format!("{}.json", kind.as_str()));
        let fresh = index.dump();
        match std::fs::read(&path) {
            Ok(old) if old == fresh => {}
            Ok(_) if !updating() => panic!("{} is stale; rerun with UPDATE_GOLDEN=1", path.display()),
            _ => std::fs::write(&path, fresh).unwrap(),
        }
    }
}

pub fn e2e_gateway() -> Gateway {
    ensure_indexes();
    Gateway::from_path(&fixtures().join("e2e/gateway.json")).expect("e2e config loads")
}

#[derive(Deserialize)]
pub struct Scripted {
    pub name: String,
    pub query: String,
    pub files: Vec<String>,
}

pub fn body_for(query: &str, files: &[String]) -> Vec<u8> {
    let base = fixtures().join("e2e");
    let atts = files
        .iter()
        .map(|f| {
            let p = base.join(f);
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            WireAttachment::from_bytes(name, &std::fs::read(&p).unwrap())
        })
        .collect();
    let mut req = CompletionRequest::user(query, atts, Vec::new());
    req.model = Some("interfaze-beta".into());
    to_canonical_bytes(&req).unwrap()
}

/// The scripted end-to-end requests with their canonical bodies.
pub fn e2e_script() -> Vec<(String, Vec<u8>)> {
    let raw = std::fs::read(fixtures().join("e2e/script.json")).unwrap();
    let script: Vec<Scripted> = serde_json::from_slice(&raw).unwrap();
    script
        .into_iter()
        .map(|s| {
            let body = body_for(&s.query, &s.files);
            (s.name, body)
        })
        .collect()
}
