//! Test split and support set loading.

use std::path::{Path, PathBuf};

use phrasedet_core::eval::{CocoDataset, ImageInfo};
use phrasedet_core::{BoundingBox, ClassCatalog, GroundTruthSet, SupportSet, SupportTriple};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// One line of the support-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportRecord {
    pub class_id: u32,
    pub class_name: String,
    pub image: String,
    pub bbox_xyxy: [f64; 4],
    pub domain: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub ground_truth: GroundTruthSet,
    pub support: SupportSet,
    pub images_dir: Option<PathBuf>,
}

impl Dataset {
    /// Image reference handed to backends.
    pub fn image_ref(&self, file_name: &str) -> String {
        match &self.images_dir {
            Some(dir) => dir.join(file_name).to_string_lossy().into_owned(),
            None => file_name.to_string(),
        }
    }

    pub fn catalog(&self) -> &ClassCatalog {
        self.ground_truth.catalog()
    }

    pub fn images(&self) -> &[ImageInfo] {
        self.ground_truth.images()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthSet> {
    let coco: CocoDataset =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
    coco.into_ground_truth()
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
}

pub fn parse_support(text: &str, catalog: &ClassCatalog) -> Result<SupportSet> {
    let records: Vec<SupportRecord> = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let triples = records
        .into_iter()
        .map(|r| {
            let [x1, y1, x2, y2] = r.bbox_xyxy;
            let bbox = BoundingBox::new(x1, y1, x2, y2)?;
            SupportTriple::new(r.image, bbox, r.class_name, r.class_id, r.domain)
        })
        .collect::<phrasedet_core::Result<Vec<_>>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    SupportSet::new(triples, catalog).map_err(|e| CliError::Config(e.to_string()))
}

/// Loads ground truth and support; every image must carry its size so
/// boxes can be clipped.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ground_truth = load_ground_truth(&cfg.annotations)?;
    if let Some(img) = ground_truth.images().iter().find(|i| !(i.width > 0.0 && i.height > 0.0)) {
        return Err(CliError::Config(format!(
            "{}: image {} has no positive width/height",
            cfg.annotations.display(),
            img.id
        )));
    }
    let support = parse_support(&read(&cfg.support)?, ground_truth.catalog())
        .map_err(|e| CliError::Config(format!("{}: {}", cfg.support.display(), e)))?;
    Ok(Dataset {
        ground_truth,
        support,
        images_dir: cfg.images_dir.clone(),
    })
}
