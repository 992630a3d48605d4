//! The four backend contracts and their bridge into the engine.

use log::warn;
use phrasedet_core::{AlignFailure, AlignQuery, Aligner, BoundingBox, CoreError, ScoreTensor};

use crate::error::{BackendError, Result};
use crate::wire::{
    quantize_box, AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest, DetectorResponse,
    MaskRequest, MaskResponse, SCHEMA_VERSION,
};

/// Open-vocabulary detector returning per-phrase scores.
pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorResponse>;
}

/// Region captioner producing one description sentence.
pub trait Captioner: Send + Sync {
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse>;
}

/// Image-text matcher returning `A` in `[0, 1]`.
pub trait AlignerBackend: Send + Sync {
    fn align(&self, req: &AlignRequest) -> Result<AlignResponse>;
}

/// Box-prompted segmenter; only the captioning side consumes masks.
pub trait Masker: Send + Sync {
    fn mask(&self, req: &MaskRequest) -> Result<MaskResponse>;
}

/// Checks a detector response against its request and converts it into a
/// score tensor. Boxes are clipped to the image; boxes with no area left
/// are dropped.
pub fn response_to_tensor(req: &DetectorRequest, resp: &DetectorResponse) -> Result<ScoreTensor<f64>> {
    if resp.schema_version != SCHEMA_VERSION {
        return Err(BackendError::protocol("schema_version", "unsupported version"));
    }
    if resp.prompt_set_fingerprint != req.prompt_set_fingerprint {
        return Err(BackendError::Stale {
            key: format!("detect/{}.json", req.image_id),
            expected: req.prompt_set_fingerprint.clone(),
            found: resp.prompt_set_fingerprint.clone(),
        });
    }
    if resp.image_id != req.image_id {
        return Err(BackendError::protocol(
            "image_id",
            format!("response for image {} to a request for {}", resp.image_id, req.image_id),
        ));
    }
    let counts = req.phrase_counts();
    if resp.phrase_counts != counts {
        return Err(BackendError::protocol(
            "phrase_counts",
            format!("expected {:?}, got {:?}", counts, resp.phrase_counts),
        ));
    }
    if resp.scores.len() != resp.boxes.len() {
        return Err(BackendError::protocol(
            "scores",
            format!("{} score rows for {} boxes", resp.scores.len(), resp.boxes.len()),
        ));
    }
    let mut boxes = Vec::with_capacity(resp.boxes.len());
    let mut rows = Vec::with_capacity(resp.boxes.len());
    for (i, (b, row)) in resp.boxes.iter().zip(&resp.scores).enumerate() {
        if row.len() != counts.len() || row.iter().zip(&counts).any(|(p, &m)| p.len() != m) {
            return Err(BackendError::protocol(format!("scores[{}]", i), "does not cover the request's phrase set"));
        }
        let bb = BoundingBox::new(b[0], b[1], b[2], b[3])
            .map_err(|e| BackendError::protocol(format!("boxes[{}]", i), e.to_string()))?;
        match bb.clip(req.width, req.height) {
            Some(c) => {
                boxes.push(c);
                rows.push(row.clone());
            }
            None => warn!("image {}: candidate {} lies outside the image, dropped", req.image_id, i),
        }
    }
    ScoreTensor::from_nested(req.image_id, boxes, &rows, &counts).map_err(|e| match e {
        CoreError::ScoreOutOfRange { location, .. } => BackendError::protocol(location, "score outside [0, 1]"),
        other => BackendError::Core(other),
    })
}

/// Checks an aligner response against its request.
pub fn check_align_response(req: &AlignRequest, resp: &AlignResponse) -> Result<f64> {
    let key = align_key(req.image_id, req.det_index);
    if resp.image_id != req.image_id || resp.det_index != req.det_index {
        return Err(BackendError::protocol("det_index", format!("response does not answer {}", key)));
    }
    let tol = 0.5 * 10f64.powi(-(crate::wire::PIXEL_DECIMALS as i32)) + 1e-9;
    let want = quantize_box(req.bbox);
    let box_ok = want.iter().zip(&resp.bbox).all(|(a, b)| (a - b).abs() <= tol);
    if resp.class_id != req.class_id || !box_ok || resp.description != req.description {
        return Err(BackendError::Stale {
            key,
            expected: format!("class {} box {:?}", req.class_id, want),
            found: format!("class {} box {:?}", resp.class_id, resp.bbox),
        });
    }
    if !(resp.score.is_finite() && (0.0..=1.0).contains(&resp.score)) {
        return Err(BackendError::protocol("score", format!("{} outside [0, 1]", resp.score)));
    }
    Ok(resp.score)
}

pub fn detect_key(image_id: u64) -> String {
    format!("detect/{}.json", image_id)
}

pub fn caption_key(class_id: u32) -> String {
    format!("caption/{}.json", class_id)
}

pub fn align_key(image_id: u64, det_index: usize) -> String {
    format!("align/{}_{}.json", image_id, det_index)
}

pub fn align_request(query: &AlignQuery<'_, f64>) -> AlignRequest {
    AlignRequest {
        schema_version: SCHEMA_VERSION,
        image_id: query.image_id,
        image_ref: query.image_ref.to_string(),
        det_index: query.det_index,
        class_id: query.class_id,
        bbox: query.region.to_xyxy(),
        description: query.description.to_string(),
    }
}

/// Exposes an [`AlignerBackend`] as the engine's [`Aligner`].
///
/// Missing records reject the single query; staleness and schema errors are
/// fatal; transport failures make the aligner unavailable.
pub struct BackendAligner<'a> {
    backend: &'a dyn AlignerBackend,
}

impl<'a> BackendAligner<'a> {
    pub fn new(backend: &'a dyn AlignerBackend) -> Self {
        Self { backend }
    }
}

impl Aligner<f64> for BackendAligner<'_> {
    fn align(&self, query: &AlignQuery<'_, f64>) -> std::result::Result<f64, AlignFailure> {
        let req = align_request(query);
        let outcome = self
            .backend
            .align(&req)
            .and_then(|resp| check_align_response(&req, &resp));
        outcome.map_err(|e| match e {
            BackendError::NotFound { .. } => AlignFailure::Rejected(e.to_string()),
            BackendError::Unavailable { .. } | BackendError::Io { .. } => AlignFailure::Unavailable(e.to_string()),
            BackendError::Stale { .. } | BackendError::Protocol { .. } | BackendError::Core(_) => {
                AlignFailure::Fatal(e.to_string())
            }
        })
    }
}
