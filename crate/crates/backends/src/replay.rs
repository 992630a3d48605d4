//! Serves stored responses from a replay bundle. Read-only after `open`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::bundle::{list, load_manifest, load_record};
use crate::contract::{align_key, caption_key, detect_key, AlignerBackend, Captioner, Detector};
use crate::error::{BackendError, Result};
use crate::wire::{
    AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest, DetectorResponse, Manifest,
    RecordKind,
};

#[derive(Debug, Clone)]
pub struct ReplayBackend {
    root: PathBuf,
    manifest: Manifest,
    detect: HashMap<u64, DetectorResponse>,
    caption: HashMap<u32, CaptionResponse>,
    align: HashMap<(u64, usize), AlignResponse>,
}

impl ReplayBackend {
    /// Loads and schema-checks every record of the bundle at `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let mut detect = HashMap::new();
        for rel in list(dir, "detect")? {
            let r: DetectorResponse =
                load_record(dir, &rel, RecordKind::DetectorResponse, |r: &DetectorResponse| detect_key(r.image_id))?;
            detect.insert(r.image_id, r);
        }
        let mut caption = HashMap::new();
        for rel in list(dir, "caption")? {
            let r: CaptionResponse =
                load_record(dir, &rel, RecordKind::CaptionResponse, |r: &CaptionResponse| caption_key(r.class_id))?;
            caption.insert(r.class_id, r);
        }
        let mut align = HashMap::new();
        for rel in list(dir, "align")? {
            let r: AlignResponse = load_record(dir, &rel, RecordKind::AlignResponse, |r: &AlignResponse| {
                align_key(r.image_id, r.det_index)
            })?;
            align.insert((r.image_id, r.det_index), r);
        }
        log::debug!(
            "replay bundle {}: {} detect, {} caption, {} align records",
            dir.display(),
            detect.len(),
            caption.len(),
            align.len()
        );
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            detect,
            caption,
            align,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn has_align_records(&self) -> bool {
        !self.align.is_empty()
    }
}

impl Detector for ReplayBackend {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorResponse> {
        let key = detect_key(req.image_id);
        let stored = self.manifest.prompt_set_fingerprint.as_deref();
        if stored != Some(req.prompt_set_fingerprint.as_str()) {
            return Err(BackendError::Stale {
                key: "manifest.json".into(),
                expected: req.prompt_set_fingerprint.clone(),
                found: stored.unwrap_or("none").to_string(),
            });
        }
        self.detect.get(&req.image_id).cloned().ok_or(BackendError::NotFound { key })
    }
}

impl Captioner for ReplayBackend {
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        let key = caption_key(req.class_id);
        let r = self.caption.get(&req.class_id).ok_or_else(|| BackendError::NotFound { key: key.clone() })?;
        if r.class_name != req.class_name {
            return Err(BackendError::Stale {
                key,
                expected: req.class_name.clone(),
                found: r.class_name.clone(),
            });
        }
        Ok(r.clone())
    }
}

impl AlignerBackend for ReplayBackend {
    fn align(&self, req: &AlignRequest) -> Result<AlignResponse> {
        self.align
            .get(&(req.image_id, req.det_index))
            .cloned()
            .ok_or_else(|| BackendError::NotFound {
                key: align_key(req.image_id, req.det_index),
            })
    }
}
