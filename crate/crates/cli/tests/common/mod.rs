//! Hand-built scenes served by a scripted backend.
#![allow(dead_code)]

use std::collections::BTreeMap;

use phrasedet_backends::wire::{
    AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest, DetectorResponse, SCHEMA_VERSION,
};
use phrasedet_backends::{AlignerBackend, BackendError, Captioner, Detector};
use phrasedet_cli::dataset::{parse_support, Dataset};
use phrasedet_core::eval::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use phrasedet_core::BoundingBox;

/// One candidate box with a class score shared by all of its phrases.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub bbox: [f64; 4],
    pub class_scores: Vec<f64>,
}

/// Detector returning scripted candidates, captioner echoing a fixed
/// sentence, aligner scoring 1 on ground truth (IoU >= 0.5) and 0 elsewhere.
pub struct Scripted {
    pub candidates: BTreeMap<u64, Vec<Candidate>>,
    pub truth: CocoDataset,
    pub descriptions: BTreeMap<u32, String>,
}

impl Detector for Scripted {
    fn detect(&self, req: &DetectorRequest) -> phrasedet_backends::Result<DetectorResponse> {
        let cands = self.candidates.get(&req.image_id).ok_or_else(|| BackendError::NotFound {
            key: format!("detect/{}.json", req.image_id),
        })?;
        let counts = req.phrase_counts();
        Ok(DetectorResponse {
            schema_version: SCHEMA_VERSION,
            image_id: req.image_id,
            prompt_set_fingerprint: req.prompt_set_fingerprint.clone(),
            boxes: cands.iter().map(|c| c.bbox).collect(),
            scores: cands
                .iter()
                .map(|c| counts.iter().zip(&c.class_scores).map(|(&m, &s)| vec![s; m]).collect())
                .collect(),
            phrase_counts: counts,
        })
    }
}

impl Captioner for Scripted {
    fn caption(&self, req: &CaptionRequest) -> phrasedet_backends::Result<CaptionResponse> {
        Ok(CaptionResponse {
            schema_version: SCHEMA_VERSION,
            class_id: req.class_id,
            class_name: req.class_name.clone(),
            instruction: req.instruction.clone(),
            description: self.descriptions[&req.class_id].clone(),
        })
    }
}

impl AlignerBackend for Scripted {
    fn align(&self, req: &AlignRequest) -> phrasedet_backends::Result<AlignResponse> {
        let region = BoundingBox::new(req.bbox[0], req.bbox[1], req.bbox[2], req.bbox[3]).unwrap();
        let hit = self.truth.annotations.iter().any(|a| {
            let [x, y, w, h] = a.bbox;
            a.image_id == req.image_id
                && a.category_id == req.class_id
                && BoundingBox::new(x, y, x + w, y + h).unwrap().iou(&region) >= 0.5
        });
        Ok(AlignResponse {
            schema_version: SCHEMA_VERSION,
            image_id: req.image_id,
            det_index: req.det_index,
            class_id: req.class_id,
            bbox: req.bbox,
            description: req.description.clone(),
            score: if hit { 1.0 } else { 0.0 },
        })
    }
}

/// One class ("crack"), `n` 100x100 images, each with a 20x20 ground-truth
/// box at (10,10) and a 20x20 false-positive candidate at (60,60).
/// `scores(i)` gives (tp, fp) class scores for image `i` (1-based).
pub fn small_box_scene(n: u64, scores: impl Fn(u64) -> (f64, f64)) -> (Scripted, Dataset) {
    let images: Vec<CocoImage> = (1..=n)
        .map(|id| CocoImage {
            id,
            file_name: format!("{:04}.png", id),
            width: 100.0,
            height: 100.0,
        })
        .collect();
    let annotations = (1..=n)
        .map(|id| CocoAnnotation {
            id,
            image_id: id,
            category_id: 1,
            bbox: [10.0, 10.0, 20.0, 20.0],
            area: Some(400.0),
            iscrowd: 0,
        })
        .collect();
    let truth = CocoDataset {
        images,
        annotations,
        categories: vec![CocoCategory {
            id: 1,
            name: "crack".into(),
        }],
    };
    let candidates = (1..=n)
        .map(|id| {
            let (tp, fp) = scores(id);
            (
                id,
                vec![
                    Candidate {
                        bbox: [10.0, 10.0, 30.0, 30.0],
                        class_scores: vec![tp],
                    },
                    Candidate {
                        bbox: [60.0, 60.0, 80.0, 80.0],
                        class_scores: vec![fp],
                    },
                ],
            )
        })
        .collect();
    let gt = truth.clone().into_ground_truth().unwrap();
    let support = parse_support(
        r#"[{"class_id": 1, "class_name": "crack", "image": "support.png", "bbox_xyxy": [0, 0, 20, 20], "domain": "steel surface"}]"#,
        gt.catalog(),
    )
    .unwrap();
    let backend = Scripted {
        candidates,
        truth,
        descriptions: BTreeMap::from([(1, "crack defect with thin dark line".to_string())]),
    };
    let data = Dataset {
        ground_truth: gt,
        support,
        images_dir: None,
    };
    (backend, data)
}
