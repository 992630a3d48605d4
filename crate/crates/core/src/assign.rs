//! Category assignment, global top-K selection and selective calibration.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{validation, CoreError, Result};
use crate::geometry::BoundingBox;
use crate::model::{Detection, PhraseLibrary, ScoreTensor};
use crate::scalar::Scalar;

/// Per-box per-class scores `O[i][c]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScoreMatrix<T> {
    image_id: u64,
    num_boxes: usize,
    num_classes: usize,
    values: Vec<T>,
}

impl<T: Scalar> CategoryScoreMatrix<T> {
    pub fn from_rows(image_id: u64, rows: &[Vec<T>]) -> Result<Self> {
        let num_classes = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != num_classes) {
            return Err(CoreError::Shape("ragged category score rows".into()));
        }
        Ok(Self {
            image_id,
            num_boxes: rows.len(),
            num_classes,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }
    pub fn num_boxes(&self) -> usize {
        self.num_boxes
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, i: usize, c: usize) -> T {
        self.values[i * self.num_classes + c]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Mean-pools the phrase scores of every class: `O[i][c] = mean_m s[i][c][m]`.
///
/// Scores are summed in ascending order, so the result is bit-identical under
/// any permutation of the phrases.
pub fn assign_categories<T: Scalar>(tensor: &ScoreTensor<T>) -> Result<CategoryScoreMatrix<T>> {
    let n = tensor.num_boxes();
    let c = tensor.num_classes();
    if let Some(k) = tensor.phrase_counts().iter().position(|&m| m == 0) {
        return Err(CoreError::Shape(format!("class index {} has no phrases", k)));
    }
    let mut values = Vec::with_capacity(n * c);
    let mut sorted = Vec::new();
    for i in 0..n {
        for class in 0..c {
            let scores = tensor.phrase_scores(i, class);
            sorted.clear();
            sorted.extend_from_slice(scores);
            // scores are sanitized to [0, 1], so partial_cmp never fails
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            let sum = sorted.iter().fold(T::zero(), |acc, &s| acc + s);
            let mean = sum / T::from_usize(scores.len()).unwrap();
            values.push(mean.min(T::one()));
        }
    }
    Ok(CategoryScoreMatrix {
        image_id: tensor.image_id(),
        num_boxes: n,
        num_classes: c,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    /// Abort the run.
    #[default]
    Strict,
    /// Skip and carry on.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SelectionConfig<T> {
    pub top_k: usize,
    pub lambda: T,
    /// Boxes strictly below this area (pixels²) are calibrated.
    pub small_area_threshold: T,
    pub calibration_enabled: bool,
    /// Context added around the crop handed to the aligner.
    pub crop_padding: T,
    /// Re-rank by the calibrated score after fusion.
    pub resort_after_calibration: bool,
    /// Class-wise NMS IoU threshold; `None` disables suppression.
    pub nms_iou: Option<T>,
    pub align_failure: FailureMode,
}

impl<T: Scalar> Default for SelectionConfig<T> {
    fn default() -> Self {
        Self {
            top_k: 300,
            lambda: T::lit(0.02),
            small_area_threshold: T::lit(32.0 * 32.0),
            calibration_enabled: true,
            crop_padding: T::zero(),
            resort_after_calibration: true,
            nms_iou: None,
            align_failure: FailureMode::Strict,
        }
    }
}

impl<T: Scalar> SelectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(validation("top_k must be at least 1"));
        }
        if !(self.lambda >= T::zero() && self.lambda <= T::one()) {
            return Err(validation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.small_area_threshold <= T::zero() || !self.small_area_threshold.is_finite() {
            return Err(validation("small-area threshold must be positive"));
        }
        if self.crop_padding < T::zero() || !self.crop_padding.is_finite() {
            return Err(validation("crop padding must be non-negative"));
        }
        if let Some(t) = self.nms_iou {
            if !(t > T::zero() && t <= T::one()) {
                return Err(validation(format!("nms IoU {} outside (0, 1]", t)));
            }
        }
        Ok(())
    }
}

/// Total order for ranked pairs: score descending, then box index, then class
/// index. Scores are finite so `partial_cmp` never fails.
fn rank_order<T: Scalar>(a: (T, usize, usize), b: (T, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Keeps the `K` highest-scoring box-category pairs across the flattened
/// `N x C` matrix. A box may be retained under several classes.
pub fn select_top_k<T: Scalar>(
    scores: &CategoryScoreMatrix<T>,
    boxes: &[BoundingBox<T>],
    cfg: &SelectionConfig<T>,
) -> Result<Vec<Detection<T>>> {
    if boxes.len() != scores.num_boxes() {
        return Err(CoreError::Shape(format!(
            "{} boxes for a score matrix with {} rows",
            boxes.len(),
            scores.num_boxes()
        )));
    }
    let mut pairs: Vec<(T, usize, usize)> = Vec::with_capacity(scores.num_boxes() * scores.num_classes());
    for i in 0..scores.num_boxes() {
        for (c, &s) in scores.row(i).iter().enumerate() {
            pairs.push((s, i, c));
        }
    }
    let k = cfg.top_k.min(pairs.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(|a, b| rank_order(*a, *b));
    Ok(pairs
        .into_iter()
        .map(|(s, i, c)| Detection::uncalibrated(boxes[i], c as u32 + 1, i, s))
        .collect())
}

/// Greedy class-wise non-maximum suppression over an already ranked list.
pub fn class_wise_nms<T: Scalar>(dets: Vec<Detection<T>>, iou_threshold: T) -> Vec<Detection<T>> {
    let mut kept: Vec<Detection<T>> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Where a calibration query comes from.
#[derive(Debug, Clone, Copy)]
pub struct ImageContext<'a, T> {
    pub image_id: u64,
    pub image_ref: &'a str,
    pub width: T,
    pub height: T,
}

/// One region-description query.
#[derive(Debug, Clone)]
pub struct AlignQuery<'a, T> {
    pub image_id: u64,
    pub image_ref: &'a str,
    /// Position in the pre-calibration ranking of this image.
    pub det_index: usize,
    pub class_id: u32,
    pub region: BoundingBox<T>,
    pub description: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignFailure {
    /// The aligner cannot serve any query (transport down, model missing).
    Unavailable(String),
    /// This query failed; others may still succeed.
    Rejected(String),
    /// Inconsistent data that must stop the run regardless of mode.
    Fatal(String),
}

/// Image-text alignment expert returning a score in `[0, 1]`.
pub trait Aligner<T>: Sync {
    fn align(&self, query: &AlignQuery<'_, T>) -> std::result::Result<T, AlignFailure>;
}

impl<T, F> Aligner<T> for F
where
    F: Fn(&AlignQuery<'_, T>) -> std::result::Result<T, AlignFailure> + Sync,
{
    fn align(&self, query: &AlignQuery<'_, T>) -> std::result::Result<T, AlignFailure> {
        self(query)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CalibrationStats {
    pub queried: usize,
    pub applied: usize,
    pub failed: usize,
    pub skipped_all: bool,
}

/// Fuses aligner evidence into the scores of small detections:
/// `S = (1 - lambda) * O + lambda * A` when `area < small_area_threshold`.
/// Larger detections pass through untouched. Output is re-ranked by the
/// calibrated score (stable, so ties keep the pre-calibration order) unless
/// `resort_after_calibration` is off.
pub fn calibrate<T: Scalar>(
    dets: Vec<Detection<T>>,
    ctx: &ImageContext<'_, T>,
    library: &PhraseLibrary,
    aligner: &dyn Aligner<T>,
    cfg: &SelectionConfig<T>,
) -> Result<(Vec<Detection<T>>, CalibrationStats)> {
    let mut stats = CalibrationStats::default();
    if !cfg.calibration_enabled {
        return Ok((dets, stats));
    }
    let original = dets.clone();
    let mut out = dets;
    for (det_index, det) in out.iter_mut().enumerate() {
        if det.bbox.area() >= cfg.small_area_threshold {
            continue;
        }
        let description = library.description(det.class_id).ok_or(CoreError::UnknownId {
            kind: "class",
            id: det.class_id as u64,
        })?;
        let region = if cfg.crop_padding > T::zero() {
            det.bbox
                .expand(cfg.crop_padding)?
                .clip(ctx.width, ctx.height)
                .unwrap_or(det.bbox)
        } else {
            det.bbox
        };
        let query = AlignQuery {
            image_id: ctx.image_id,
            image_ref: ctx.image_ref,
            det_index,
            class_id: det.class_id,
            region,
            description,
        };
        stats.queried += 1;
        match aligner.align(&query) {
            Ok(a) => {
                let a = crate::model::sanitize_score(a, || {
                    format!("alignment for image {} detection {}", ctx.image_id, det_index)
                })?;
                *det = det.with_alignment(a, cfg.lambda);
                stats.applied += 1;
            }
            Err(AlignFailure::Rejected(reason)) => {
                log::warn!(
                    "alignment failed for image {} detection {}: {}; keeping raw score",
                    ctx.image_id,
                    det_index,
                    reason
                );
                stats.failed += 1;
            }
            Err(AlignFailure::Unavailable(reason)) => match cfg.align_failure {
                FailureMode::Strict => return Err(CoreError::Alignment(reason)),
                FailureMode::Lenient => {
                    log::warn!(
                        "aligner unavailable for image {} ({}); skipping calibration",
                        ctx.image_id,
                        reason
                    );
                    stats.skipped_all = true;
                    stats.applied = 0;
                    return Ok((original, stats));
                }
            },
            Err(AlignFailure::Fatal(reason)) => return Err(CoreError::Alignment(reason)),
        }
    }
    if cfg.resort_after_calibration {
        out.sort_by(|a, b| {
            b.calibrated_score
                .partial_cmp(&a.calibrated_score)
                .unwrap_or(Ordering::Equal)
        });
    }
    Ok((out, stats))
}

/// Both readings of detector/aligner fusion for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoeCheck<T> {
    /// `(1 - lambda) * raw + lambda * align`.
    pub linear_fusion: T,
    /// `-ln(raw)`.
    pub objectness_energy: T,
    /// `-ln(align)`.
    pub alignment_energy: T,
    /// `exp(-E_obj - E_vl)`, i.e. the product of the two experts.
    pub energy_product: T,
}

/// Evaluates the linear fusion alongside its product-of-experts energy form.
/// Both scores must lie in `(0, 1]`.
pub fn poe_energy_check<T: Scalar>(raw: T, align: T, lambda: T) -> Result<PoeCheck<T>> {
    for (name, v) in [("raw", raw), ("alignment", align)] {
        if !(v > T::zero() && v <= T::one()) {
            return Err(CoreError::Domain(format!(
                "{} score {} must lie in (0, 1] for the energy to be defined",
                name, v
            )));
        }
    }
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(CoreError::Domain(format!("lambda {} outside [0, 1]", lambda)));
    }
    let objectness_energy = -raw.ln();
    let alignment_energy = -align.ln();
    Ok(PoeCheck {
        linear_fusion: (T::one() - lambda) * raw + lambda * align,
        objectness_energy,
        alignment_energy,
        energy_product: (-objectness_energy - alignment_energy).exp(),
    })
}
