//! Seeded generator of synthetic scenes for the mock backend.

use phrasedet_core::eval::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Result};
use crate::mock::{Distractor, PlantedObject, SceneClass, SceneImage, SceneSupport, ScoringModel, SyntheticScene};

const CLASS_NAMES: [&str; 8] = [
    "crazing",
    "inclusion",
    "patches",
    "pitted surface",
    "rolled-in scale",
    "scratches",
    "dent",
    "stain",
];
const ADJECTIVES: [&str; 8] = ["dark", "pale", "rough", "smooth", "thin", "wide", "granular", "glossy"];
const NOUNS: [&str; 6] = ["streak", "patch", "speck", "ridge", "blotch", "groove"];
const ATTRIBUTES_PER_CLASS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub dataset_id: String,
    pub seed: u64,
    pub num_images: usize,
    /// At most 8.
    pub num_classes: usize,
    pub objects_per_class: usize,
    pub distractors_per_image: usize,
    /// Share of distractors that mimic some class.
    pub mimic_fraction: f64,
    /// Mimic strength is drawn from `[lo, hi)`.
    pub distractor_strength: [f64; 2],
    /// Share of planted objects with area below 32².
    pub small_fraction: f64,
    pub width: f64,
    pub height: f64,
    pub domain: String,
    pub scoring: ScoringModel,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            dataset_id: "synthetic".into(),
            seed: 0,
            num_images: 10,
            num_classes: 4,
            objects_per_class: 1,
            distractors_per_image: 6,
            mimic_fraction: 0.5,
            distractor_strength: [0.3, 0.7],
            small_fraction: 0.3,
            width: 320.0,
            height: 240.0,
            domain: "steel surface".into(),
            scoring: ScoringModel::default(),
        }
    }
}

/// The attribute phrases of class `k` (0-based); unique across classes.
fn attributes(k: usize) -> Vec<String> {
    (0..ATTRIBUTES_PER_CLASS)
        .map(|j| {
            let idx = k * ATTRIBUTES_PER_CLASS + j;
            format!("{} {}", ADJECTIVES[idx % ADJECTIVES.len()], NOUNS[idx / ADJECTIVES.len()])
        })
        .collect()
}

/// Segments back into `["<name> defect", a1, a2, a3]`.
fn description(name: &str, attrs: &[String]) -> String {
    format!("{} defect with {}, {}; {}.", name, attrs[0], attrs[1], attrs[2])
}

fn random_box(rng: &mut ChaCha8Rng, small: bool, width: f64, height: f64) -> [f64; 4] {
    let (lo, hi): (f64, f64) = if small { (8.0, 30.0) } else { (40.0, 110.0) };
    let w = rng.random_range(lo..hi).min(width - 2.0);
    let h = if small {
        // keep small boxes below 32² regardless of the aspect ratio
        rng.random_range(lo..hi).min(1000.0 / w).min(height - 2.0)
    } else {
        rng.random_range(lo..hi).min(height - 2.0)
    };
    let x = rng.random_range(0.0..(width - w));
    let y = rng.random_range(0.0..(height - h));
    let r = |v: f64| (v * 100.0).round() / 100.0;
    [r(x), r(y), r(x + w), r(y + h)]
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.num_classes == 0 || spec.num_classes > CLASS_NAMES.len() {
        return Err(BackendError::protocol("num_classes", format!("must be in 1..={}", CLASS_NAMES.len())));
    }
    if spec.width < 64.0 || spec.height < 64.0 {
        return Err(BackendError::protocol("width", "images must be at least 64x64"));
    }
    let [lo, hi] = spec.distractor_strength;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(BackendError::protocol("distractor_strength", "need 0 <= lo < hi <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes: Vec<SceneClass> = (0..spec.num_classes)
        .map(|k| {
            let attrs = attributes(k);
            SceneClass {
                class_id: k as u32 + 1,
                class_name: CLASS_NAMES[k].to_string(),
                description: description(CLASS_NAMES[k], &attrs),
                attributes: attrs,
            }
        })
        .collect();
    let images = (0..spec.num_images)
        .map(|n| {
            let mut objects = Vec::new();
            for c in &classes {
                for _ in 0..spec.objects_per_class {
                    let small = rng.random_bool(spec.small_fraction.clamp(0.0, 1.0));
                    objects.push(PlantedObject {
                        class_id: c.class_id,
                        bbox: random_box(&mut rng, small, spec.width, spec.height),
                    });
                }
            }
            let distractors = (0..spec.distractors_per_image)
                .map(|_| {
                    let small = rng.random_bool(spec.small_fraction.clamp(0.0, 1.0));
                    let bbox = random_box(&mut rng, small, spec.width, spec.height);
                    let mimic = rng.random_bool(spec.mimic_fraction.clamp(0.0, 1.0));
                    let class = rng.random_range(1..=spec.num_classes as u32);
                    let strength = rng.random_range(lo..hi).min(0.99);
                    Distractor {
                        bbox,
                        mimic_class: mimic.then_some(class),
                        strength: if mimic { (strength * 100.0).round() / 100.0 } else { 0.0 },
                    }
                })
                .collect();
            SceneImage {
                image_id: n as u64 + 1,
                file_name: format!("{:04}.png", n + 1),
                width: spec.width,
                height: spec.height,
                objects,
                distractors,
            }
        })
        .collect();
    let support = classes
        .iter()
        .map(|c| SceneSupport {
            class_id: c.class_id,
            class_name: c.class_name.clone(),
            image: format!("support/{}.png", c.class_id),
            bbox_xyxy: random_box(&mut rng, false, spec.width, spec.height),
            domain: spec.domain.clone(),
        })
        .collect();
    let scene = SyntheticScene {
        dataset_id: spec.dataset_id.clone(),
        seed: spec.seed,
        scoring: spec.scoring.clone(),
        classes,
        images,
        support,
    };
    scene.validate()?;
    Ok(scene)
}

impl SyntheticScene {
    /// Planted objects as COCO ground truth; distractors are not annotated.
    pub fn ground_truth(&self) -> CocoDataset {
        let mut annotations = Vec::new();
        for img in &self.images {
            for o in &img.objects {
                let [x1, y1, x2, y2] = o.bbox;
                annotations.push(CocoAnnotation {
                    id: annotations.len() as u64 + 1,
                    image_id: img.image_id,
                    category_id: o.class_id,
                    bbox: [x1, y1, x2 - x1, y2 - y1],
                    area: Some((x2 - x1) * (y2 - y1)),
                    iscrowd: 0,
                });
            }
        }
        CocoDataset {
            images: self
                .images
                .iter()
                .map(|i| CocoImage {
                    id: i.image_id,
                    file_name: i.file_name.clone(),
                    width: i.width,
                    height: i.height,
                })
                .collect(),
            annotations,
            categories: self
                .classes
                .iter()
                .map(|c| CocoCategory {
                    id: c.class_id,
                    name: c.class_name.clone(),
                })
                .collect(),
        }
    }
}
