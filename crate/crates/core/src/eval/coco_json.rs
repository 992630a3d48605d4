use serde::{Deserialize, Serialize};

use super::{EvalDetection, GroundTruthSet, GtAnnotation, ImageInfo};
use crate::error::{CoreError, Result};
use crate::model::ClassCatalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

/// Instance-annotation file layout; unknown top-level keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl CocoDataset {
    /// Missing or non-positive `area` falls back to the box area.
    pub fn into_ground_truth(self) -> Result<GroundTruthSet> {
        let catalog = ClassCatalog::new(self.categories.into_iter().map(|c| (c.id, c.name)))?;
        let images = self
            .images
            .into_iter()
            .map(|i| ImageInfo {
                id: i.id,
                file_name: i.file_name,
                width: i.width,
                height: i.height,
            })
            .collect();
        let annotations = self
            .annotations
            .into_iter()
            .map(|a| GtAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox,
                area: match a.area {
                    Some(v) if v > 0.0 => v,
                    _ => a.bbox[2] * a.bbox[3],
                },
                iscrowd: a.iscrowd != 0,
            })
            .collect();
        GroundTruthSet::new(images, annotations, catalog)
    }
}

pub fn dataset_from_json(text: &str) -> Result<GroundTruthSet> {
    let ds: CocoDataset = serde_json::from_str(text).map_err(|e| CoreError::Json(e.to_string()))?;
    ds.into_ground_truth()
}

pub fn detections_from_json(text: &str) -> Result<Vec<EvalDetection>> {
    let rows: Vec<CocoResult> = serde_json::from_str(text).map_err(|e| CoreError::Json(e.to_string()))?;
    Ok(rows
        .into_iter()
        .map(|r| EvalDetection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: r.bbox,
            score: r.score,
        })
        .collect())
}

pub fn detections_to_json(dets: &[EvalDetection]) -> Result<String> {
    let rows: Vec<CocoResult> = dets
        .iter()
        .map(|d| CocoResult {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox,
            score: d.score,
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| CoreError::Json(e.to_string()))
}
