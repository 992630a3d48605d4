//! Deterministic stand-in for all four models, driven by a synthetic scene.
//!
//! Each planted object belongs to a class with a set of attribute phrases.
//! A prompt scores against a class by its best matching cue (an attribute or
//! the class name, matched as a contiguous word run), diluted by
//! `sqrt(cue_words / prompt_words)` so long prompts ground less sharply.
//! Distractors optionally mimic a class at reduced strength. Gaussian noise is
//! seeded per (scene seed, image, candidate, class, phrase hash).

use phrasedet_core::BoundingBox;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contract::{AlignerBackend, Captioner, Detector, Masker};
use crate::error::{BackendError, Result};
use crate::wire::{
    quantize, quantize_box, AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest,
    DetectorResponse, MaskRequest, MaskResponse, PIXEL_DECIMALS, SCHEMA_VERSION, SCORE_DECIMALS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClass {
    pub class_id: u32,
    pub class_name: String,
    /// What the mock captioner answers; contains the class name.
    pub description: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub class_id: u32,
    /// Pixel `xyxy`.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub bbox: [f64; 4],
    #[serde(default)]
    pub mimic_class: Option<u32>,
    /// Fraction of the mimicked class's match, in `[0, 1)`.
    #[serde(default)]
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub image_id: u64,
    pub file_name: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<PlantedObject>,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
}

/// One support exemplar, in the support-set file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSupport {
    pub class_id: u32,
    pub class_name: String,
    pub image: String,
    pub bbox_xyxy: [f64; 4],
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    /// Match of an exact attribute phrase.
    pub phrase_strength: f64,
    /// Match of the bare class name; below `phrase_strength`.
    pub name_strength: f64,
    pub sigma: f64,
    /// Alignment score for a region covering a planted object of the class.
    pub align_hit: f64,
    pub align_miss: f64,
}

impl Default for ScoringModel {
    fn default() -> Self {
        Self {
            phrase_strength: 0.9,
            name_strength: 0.5,
            sigma: 0.0,
            align_hit: 1.0,
            align_miss: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub dataset_id: String,
    pub seed: u64,
    pub scoring: ScoringModel,
    pub classes: Vec<SceneClass>,
    pub images: Vec<SceneImage>,
    pub support: Vec<SceneSupport>,
}

fn words(text: &str) -> Vec<String> {
    text.split(|ch: char| !(ch.is_alphanumeric() || ch == '-'))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// 64-bit FNV-1a of the lowercased phrase.
pub fn phrase_hash(text: &str) -> u64 {
    text.to_lowercase()
        .bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn noise_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |acc, &p| splitmix(acc ^ p))
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scoring;
        let bad = |field: &str, reason: &str| Err(BackendError::protocol(format!("scene.{}", field), reason));
        if !(0.0 < s.name_strength && s.name_strength <= 1.0 && 0.0 < s.phrase_strength && s.phrase_strength <= 1.0) {
            return bad("scoring", "strengths must lie in (0, 1]");
        }
        if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
            return bad("scoring.sigma", "must be finite and non-negative");
        }
        if !((0.0..=1.0).contains(&s.align_hit) && (0.0..=1.0).contains(&s.align_miss)) {
            return bad("scoring", "alignment scores must lie in [0, 1]");
        }
        for c in &self.classes {
            if c.attributes.is_empty() {
                return bad("classes", "every class needs attributes");
            }
            if !c.description.to_lowercase().contains(&c.class_name.to_lowercase()) {
                return bad("classes", "descriptions must contain the class name");
            }
        }
        let known = |id: u32| self.classes.iter().any(|c| c.class_id == id);
        for img in &self.images {
            if img.objects.iter().any(|o| !known(o.class_id)) {
                return bad("images", "object of unknown class");
            }
            for d in &img.distractors {
                if !(0.0..1.0).contains(&d.strength) || d.mimic_class.is_some_and(|c| !known(c)) {
                    return bad("images", "distractor strength outside [0, 1) or unknown mimic class");
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, class_id: u32) -> Option<&SceneClass> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    pub fn image(&self, image_id: u64) -> Option<&SceneImage> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    /// Noise-free match of a prompt against a class.
    pub fn cue_match(&self, prompt: &str, class_id: u32) -> f64 {
        let Some(class) = self.class(class_id) else {
            return 0.0;
        };
        let text = words(prompt);
        if text.is_empty() {
            return 0.0;
        }
        let cues = class
            .attributes
            .iter()
            .map(|a| (a.as_str(), self.scoring.phrase_strength))
            .chain(std::iter::once((class.class_name.as_str(), self.scoring.name_strength)));
        cues.filter_map(|(cue, weight)| {
            let cue = words(cue);
            contains_run(&text, &cue).then(|| weight * (cue.len() as f64 / text.len() as f64).sqrt())
        })
        .fold(0.0, f64::max)
    }
}

/// Serves detect, caption, align and mask requests from a scene.
#[derive(Debug, Clone)]
pub struct MockBackend {
    scene: SyntheticScene,
}

impl MockBackend {
    pub fn new(scene: SyntheticScene) -> Result<Self> {
        scene.validate()?;
        Ok(Self { scene })
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }
}

impl Detector for MockBackend {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorResponse> {
        let scene = &self.scene;
        let image = scene.image(req.image_id).ok_or_else(|| BackendError::NotFound {
            key: crate::contract::detect_key(req.image_id),
        })?;
        let candidates: Vec<([f64; 4], Option<u32>, f64)> = image
            .objects
            .iter()
            .map(|o| (o.bbox, Some(o.class_id), 1.0))
            .chain(image.distractors.iter().map(|d| (d.bbox, d.mimic_class, d.strength)))
            .collect();
        let counts = req.phrase_counts();
        let noise = (scene.scoring.sigma > 0.0).then(|| Normal::new(0.0, scene.scoring.sigma).expect("validated sigma"));
        let mut scores = Vec::with_capacity(candidates.len());
        for (i, (_, class, strength)) in candidates.iter().enumerate() {
            let mut row: Vec<Vec<f64>> = counts.iter().map(|&m| Vec::with_capacity(m)).collect();
            let mut c = 0usize;
            let mut last = None;
            for p in &req.prompts {
                if last.is_some_and(|l| l != p.class_id) {
                    c += 1;
                }
                last = Some(p.class_id);
                let base = class.map_or(0.0, |k| strength * scene.cue_match(&p.text, k).min(1.0));
                let jitter = noise.as_ref().map_or(0.0, |n| {
                    let seed = noise_seed(&[scene.seed, req.image_id, i as u64, p.class_id as u64, phrase_hash(&p.text)]);
                    n.sample(&mut ChaCha8Rng::seed_from_u64(seed))
                });
                row[c].push(quantize((base + jitter).clamp(0.0, 1.0), SCORE_DECIMALS));
            }
            scores.push(row);
        }
        Ok(DetectorResponse {
            schema_version: SCHEMA_VERSION,
            image_id: req.image_id,
            prompt_set_fingerprint: req.prompt_set_fingerprint.clone(),
            phrase_counts: counts,
            boxes: candidates.iter().map(|(b, _, _)| quantize_box(*b)).collect(),
            scores,
        })
    }
}

impl Captioner for MockBackend {
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        let class = self.scene.class(req.class_id).ok_or_else(|| BackendError::NotFound {
            key: crate::contract::caption_key(req.class_id),
        })?;
        if class.class_name != req.class_name {
            return Err(BackendError::Stale {
                key: crate::contract::caption_key(req.class_id),
                expected: req.class_name.clone(),
                found: class.class_name.clone(),
            });
        }
        Ok(CaptionResponse {
            schema_version: SCHEMA_VERSION,
            class_id: class.class_id,
            class_name: class.class_name.clone(),
            instruction: req.instruction.clone(),
            description: class.description.clone(),
        })
    }
}

impl AlignerBackend for MockBackend {
    fn align(&self, req: &AlignRequest) -> Result<AlignResponse> {
        let image = self.scene.image(req.image_id).ok_or_else(|| BackendError::NotFound {
            key: crate::contract::align_key(req.image_id, req.det_index),
        })?;
        let region = BoundingBox::new(req.bbox[0], req.bbox[1], req.bbox[2], req.bbox[3])
            .map_err(|e| BackendError::protocol("box", e.to_string()))?;
        let hit = image.objects.iter().any(|o| {
            o.class_id == req.class_id
                && BoundingBox::new(o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]).is_ok_and(|b| b.iou(&region) >= 0.5)
        });
        let s = &self.scene.scoring;
        Ok(AlignResponse {
            schema_version: SCHEMA_VERSION,
            image_id: req.image_id,
            det_index: req.det_index,
            class_id: req.class_id,
            bbox: quantize_box(req.bbox),
            description: req.description.clone(),
            score: quantize(if hit { s.align_hit } else { s.align_miss }, SCORE_DECIMALS),
        })
    }
}

impl Masker for MockBackend {
    fn mask(&self, req: &MaskRequest) -> Result<MaskResponse> {
        let b = req.bbox.map(|v| crate::wire::fixed(v, PIXEL_DECIMALS));
        Ok(MaskResponse {
            schema_version: SCHEMA_VERSION,
            mask_ref: format!("mock-mask:{}:{}", req.image_ref, b.join(",")),
            width: req.width,
            height: req.height,
        })
    }
}
