//! Replay bundle layout, writer, recorder and validator.
//!
//! ```text
//! <bundle>/manifest.json
//! <bundle>/detect/<image_id>.json
//! <bundle>/caption/<class_id>.json
//! <bundle>/align/<image_id>_<det_index>.json
//! ```
//!
//! Every file holds one record in canonical form (see [`crate::wire`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::contract::{align_key, caption_key, detect_key, AlignerBackend, Captioner, Detector};
use crate::error::{BackendError, Result};
use crate::wire::{
    parse_record, to_canonical, AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest,
    DetectorResponse, Manifest, RecordKind, SCHEMA_VERSION,
};

pub const MANIFEST: &str = "manifest.json";

/// Accumulates records in memory and writes the bundle in one step.
#[derive(Debug, Clone)]
pub struct BundleWriter {
    manifest: Manifest,
    files: BTreeMap<String, String>,
}

impl BundleWriter {
    pub fn new(dataset_id: impl Into<String>, prompt_set_fingerprint: Option<String>) -> Self {
        Self {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                dataset_id: dataset_id.into(),
                prompt_set_fingerprint,
            },
            files: BTreeMap::new(),
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn put<T: Serialize>(&mut self, key: String, record: &T) -> Result<()> {
        self.files.insert(key, to_canonical(record)?);
        Ok(())
    }

    pub fn add_detect(&mut self, r: &DetectorResponse) -> Result<()> {
        match &self.manifest.prompt_set_fingerprint {
            Some(fp) if *fp != r.prompt_set_fingerprint => {
                return Err(BackendError::Stale {
                    key: detect_key(r.image_id),
                    expected: fp.clone(),
                    found: r.prompt_set_fingerprint.clone(),
                })
            }
            Some(_) => {}
            None => self.manifest.prompt_set_fingerprint = Some(r.prompt_set_fingerprint.clone()),
        }
        self.put(detect_key(r.image_id), r)
    }

    pub fn add_caption(&mut self, r: &CaptionResponse) -> Result<()> {
        self.put(caption_key(r.class_id), r)
    }

    pub fn add_align(&mut self, r: &AlignResponse) -> Result<()> {
        self.put(align_key(r.image_id, r.det_index), r)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes into a sibling temp directory, then renames it over `dir`.
    /// An existing `dir` is replaced only if it is itself a bundle.
    pub fn write(&self, dir: &Path) -> Result<()> {
        if dir.exists() && !dir.join(MANIFEST).is_file() {
            let empty = fs::read_dir(dir)
                .map_err(|e| BackendError::io(dir, e))?
                .next()
                .is_none();
            if !empty {
                return Err(BackendError::io(
                    dir,
                    std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to replace a non-bundle directory"),
                ));
            }
        }
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| BackendError::io(parent, e))?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("bundle");
        let tmp = parent.join(format!(".{}.tmp-{}", name, std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| BackendError::io(&tmp, e))?;
        }
        for sub in ["detect", "caption", "align"] {
            fs::create_dir_all(tmp.join(sub)).map_err(|e| BackendError::io(tmp.join(sub), e))?;
        }
        let write = |rel: &str, text: &str| {
            let p = tmp.join(rel);
            fs::write(&p, text).map_err(|e| BackendError::io(p, e))
        };
        write(MANIFEST, &to_canonical(&self.manifest)?)?;
        for (rel, text) in &self.files {
            write(rel, text)?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| BackendError::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| BackendError::io(dir, e))
    }
}

/// Wraps a backend and records every successful response.
pub struct Recorder<'a, B> {
    inner: &'a B,
    writer: Mutex<BundleWriter>,
}

impl<'a, B> Recorder<'a, B> {
    pub fn new(inner: &'a B, writer: BundleWriter) -> Self {
        Self {
            inner,
            writer: Mutex::new(writer),
        }
    }

    pub fn into_writer(self) -> BundleWriter {
        self.writer.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn record(&self, f: impl FnOnce(&mut BundleWriter) -> Result<()>) -> Result<()> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut w)
    }
}

impl<B: Detector> Detector for Recorder<'_, B> {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorResponse> {
        let r = self.inner.detect(req)?;
        self.record(|w| w.add_detect(&r))?;
        Ok(r)
    }
}

impl<B: Captioner> Captioner for Recorder<'_, B> {
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        let r = self.inner.caption(req)?;
        self.record(|w| w.add_caption(&r))?;
        Ok(r)
    }
}

impl<B: AlignerBackend> AlignerBackend for Recorder<'_, B> {
    fn align(&self, req: &AlignRequest) -> Result<AlignResponse> {
        let r = self.inner.align(req)?;
        self.record(|w| w.add_align(&r))?;
        Ok(r)
    }
}

/// One problem found by [`validate_bundle`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleIssue {
    /// Bundle-relative path.
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BundleReport {
    pub detect: usize,
    pub caption: usize,
    pub align: usize,
    pub issues: Vec<BundleIssue>,
}

impl BundleReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

fn read(dir: &Path, rel: &str) -> Result<String> {
    let p = dir.join(rel);
    fs::read_to_string(&p).map_err(|e| BackendError::io(p, e))
}

/// Reads one record, checking schema, canonical bytes and its file key.
pub(crate) fn load_record<T: DeserializeOwned + Serialize>(
    dir: &Path,
    rel: &str,
    kind: RecordKind,
    key_of: impl Fn(&T) -> String,
) -> Result<T> {
    let text = read(dir, rel)?;
    let record: T = parse_record(kind, &text).map_err(|e| match e {
        BackendError::Protocol { field, reason } => BackendError::Protocol {
            field: format!("{}:{}", rel, field),
            reason,
        },
        other => other,
    })?;
    if key_of(&record) != rel {
        return Err(BackendError::protocol(rel, format!("content belongs at {}", key_of(&record))));
    }
    if to_canonical(&record)? != text {
        return Err(BackendError::protocol(rel, "not in canonical form"));
    }
    Ok(record)
}

pub(crate) fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = read(dir, MANIFEST)?;
    parse_record(RecordKind::Manifest, &text).map_err(|e| match e {
        BackendError::Protocol { field, reason } => BackendError::Protocol {
            field: format!("{}:{}", MANIFEST, field),
            reason,
        },
        other => other,
    })
}

/// Sorted `.json` files of one bundle subdirectory, or an empty list.
pub(crate) fn list(dir: &Path, sub: &str) -> Result<Vec<String>> {
    let d = dir.join(sub);
    if !d.is_dir() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(&d).map_err(|e| BackendError::io(&d, e))? {
        let entry = entry.map_err(|e| BackendError::io(&d, e))?;
        names.push(format!("{}/{}", sub, entry.file_name().to_string_lossy()));
    }
    names.sort();
    Ok(names)
}

fn detect_shape_issue(r: &DetectorResponse) -> Option<String> {
    if r.scores.len() != r.boxes.len() {
        return Some(format!("{} score rows for {} boxes", r.scores.len(), r.boxes.len()));
    }
    for (i, row) in r.scores.iter().enumerate() {
        if row.len() != r.phrase_counts.len() || row.iter().zip(&r.phrase_counts).any(|(p, &m)| p.len() != m) {
            return Some(format!("scores[{}] does not match phrase_counts", i));
        }
    }
    None
}

/// Checks a bundle directory against the v1 schema. Structural failures
/// (unreadable manifest) are errors; record-level problems are collected.
pub fn validate_bundle(dir: &Path) -> Result<BundleReport> {
    let manifest = load_manifest(dir)?;
    let mut report = BundleReport::default();
    let issue = |key: &str, reason: String| BundleIssue {
        key: key.to_string(),
        reason,
    };
    let mut issues = Vec::new();

    for rel in list(dir, "detect")? {
        match load_record::<DetectorResponse>(dir, &rel, RecordKind::DetectorResponse, |r| detect_key(r.image_id)) {
            Ok(r) => {
                report.detect += 1;
                if manifest.prompt_set_fingerprint.as_deref() != Some(r.prompt_set_fingerprint.as_str()) {
                    issues.push(issue(&rel, "prompt-set fingerprint differs from the manifest".into()));
                }
                if let Some(why) = detect_shape_issue(&r) {
                    issues.push(issue(&rel, why));
                }
            }
            Err(e) => issues.push(issue(&rel, e.to_string())),
        }
    }
    for rel in list(dir, "caption")? {
        match load_record::<CaptionResponse>(dir, &rel, RecordKind::CaptionResponse, |r| caption_key(r.class_id)) {
            Ok(r) => {
                report.caption += 1;
                if !r.description.to_lowercase().contains(&r.class_name.to_lowercase()) {
                    issues.push(issue(&rel, format!("description does not use the class word {:?}", r.class_name)));
                }
            }
            Err(e) => issues.push(issue(&rel, e.to_string())),
        }
    }
    for rel in list(dir, "align")? {
        match load_record::<AlignResponse>(dir, &rel, RecordKind::AlignResponse, |r| align_key(r.image_id, r.det_index)) {
            Ok(_) => report.align += 1,
            Err(e) => issues.push(issue(&rel, e.to_string())),
        }
    }
    for entry in fs::read_dir(dir).map_err(|e| BackendError::io(dir, e))? {
        let entry = entry.map_err(|e| BackendError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !["manifest.json", "detect", "caption", "align"].contains(&name.as_str()) {
            issues.push(issue(&name, "not part of the bundle layout".into()));
        }
    }
    report.issues = issues;
    Ok(report)
}

/// Resolves the bundle for a phrase mode: `<dir>/<mode>` when it holds a
/// manifest, else `<dir>` itself.
pub fn resolve_bundle_dir(dir: &Path, phrase_mode: &str) -> PathBuf {
    let sub = dir.join(phrase_mode);
    if sub.join(MANIFEST).is_file() {
        sub
    } else {
        dir.to_path_buf()
    }
}
