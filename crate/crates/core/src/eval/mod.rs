//! COCO-protocol bounding-box evaluation.
//!
//! Semantics follow the reference `cocoeval` implementation: greedy matching
//! in score order per image and class, crowd regions that absorb any number of
//! detections, 101-point interpolated precision, `maxDets = [1, 10, 100]` and
//! the small/medium/large area ranges with inclusive bounds.

mod coco_json;
mod table;

pub use coco_json::{
    dataset_from_json, detections_from_json, detections_to_json, CocoAnnotation, CocoCategory,
    CocoDataset, CocoImage, CocoResult,
};
pub use table::{comparison_table, method_table, TableRow};

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{validation, CoreError, Result};
use crate::model::ClassCatalog;

/// `[lo, hi]` in pixels², inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange { lo: 0.0, hi: 1e10 };
    pub const SMALL: AreaRange = AreaRange { lo: 0.0, hi: 1024.0 };
    pub const MEDIUM: AreaRange = AreaRange {
        lo: 1024.0,
        hi: 9216.0,
    };
    pub const LARGE: AreaRange = AreaRange { lo: 9216.0, hi: 1e10 };

    pub fn excludes(&self, area: f64) -> bool {
        area < self.lo || area > self.hi
    }
}

/// `n` evenly spaced points over `[start, stop]`, computed as `start + i * step`
/// with the last point pinned to `stop` (matching the reference thresholds
/// bit for bit).
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    /// Ascending; the last one caps detections per image for matching.
    pub max_dets: Vec<usize>,
    /// `[all, small, medium, large]`.
    pub area_ranges: [AreaRange; 4],
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: linspace(0.5, 0.95, 10),
            recall_thresholds: linspace(0.0, 1.0, 101),
            max_dets: vec![1, 10, 100],
            area_ranges: [
                AreaRange::ALL,
                AreaRange::SMALL,
                AreaRange::MEDIUM,
                AreaRange::LARGE,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: f64,
    pub height: f64,
}

/// Ground-truth box in COCO `xywh` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: bool,
}

/// A scored detection in COCO `xywh` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl EvalDetection {
    pub fn area(&self) -> f64 {
        self.bbox[2] * self.bbox[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    images: Vec<ImageInfo>,
    annotations: Vec<GtAnnotation>,
    catalog: ClassCatalog,
}

impl GroundTruthSet {
    /// Images are kept in ascending id order; annotations keep input order.
    pub fn new(mut images: Vec<ImageInfo>, annotations: Vec<GtAnnotation>, catalog: ClassCatalog) -> Result<Self> {
        images.sort_by_key(|i| i.id);
        if images.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(validation("duplicate image id in ground truth"));
        }
        for a in &annotations {
            if images.binary_search_by_key(&a.image_id, |i| i.id).is_err() {
                return Err(CoreError::UnknownId {
                    kind: "image",
                    id: a.image_id,
                });
            }
            if !catalog.contains(a.category_id) {
                return Err(CoreError::UnknownId {
                    kind: "category",
                    id: a.category_id as u64,
                });
            }
            let [x, y, w, h] = a.bbox;
            if !(x.is_finite() && y.is_finite() && w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return Err(validation(format!("annotation {} has an invalid box {:?}", a.id, a.bbox)));
            }
            if !(a.area > 0.0 && a.area.is_finite()) {
                return Err(validation(format!("annotation {} has non-positive area", a.id)));
            }
        }
        Ok(Self {
            images,
            annotations,
            catalog,
        })
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images
            .binary_search_by_key(&id, |i| i.id)
            .ok()
            .map(|k| &self.images[k])
    }

    pub fn annotations(&self) -> &[GtAnnotation] {
        &self.annotations
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Matched to a crowd/out-of-range region, or unmatched and out of range.
    Ignored,
}

/// IoU of COCO `xywh` boxes; against a crowd region the union is the
/// detection area alone.
pub fn coco_iou(dt: &[f64; 4], gt: &[f64; 4], crowd: bool) -> f64 {
    let w = (dt[0] + dt[2]).min(gt[0] + gt[2]) - dt[0].max(gt[0]);
    if w <= 0.0 {
        return 0.0;
    }
    let h = (dt[1] + dt[3]).min(gt[1] + gt[3]) - dt[1].max(gt[1]);
    if h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let dt_area = dt[2] * dt[3];
    let union = if crowd {
        dt_area
    } else {
        dt_area + gt[2] * gt[3] - inter
    };
    inter / union
}

/// Ground truth of one image and class, reordered so non-ignored entries
/// come first, with the IoU matrix against detections in score order.
struct CellGeometry {
    gt_ignore: Vec<bool>,
    gt_crowd: Vec<bool>,
    /// `ious[d][g]`
    ious: Vec<Vec<f64>>,
    dt_area: Vec<f64>,
}

impl CellGeometry {
    fn new(dets: &[&EvalDetection], gts: &[&GtAnnotation], area: AreaRange) -> Self {
        let ignore: Vec<bool> = gts.iter().map(|g| g.iscrowd || area.excludes(g.area)).collect();
        let mut order: Vec<usize> = (0..gts.len()).collect();
        order.sort_by_key(|&g| ignore[g]);
        let gt_ignore = order.iter().map(|&g| ignore[g]).collect();
        let gt_crowd: Vec<bool> = order.iter().map(|&g| gts[g].iscrowd).collect();
        let ious = dets
            .iter()
            .map(|d| order.iter().map(|&g| coco_iou(&d.bbox, &gts[g].bbox, gts[g].iscrowd)).collect())
            .collect();
        Self {
            gt_ignore,
            gt_crowd,
            ious,
            dt_area: dets.iter().map(|d| d.area()).collect(),
        }
    }

    fn non_ignored_gt(&self) -> usize {
        self.gt_ignore.iter().filter(|&&i| !i).count()
    }

    fn match_at(&self, iou_threshold: f64, area: AreaRange) -> Vec<MatchLabel> {
        let mut gt_taken = vec![false; self.gt_ignore.len()];
        let mut labels = Vec::with_capacity(self.ious.len());
        for (d, row) in self.ious.iter().enumerate() {
            let mut best = iou_threshold.min(1.0 - 1e-10);
            let mut matched: Option<usize> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_taken[g] && !self.gt_crowd[g] {
                    continue;
                }
                // non-ignored ground truth sorts first; once a real match is
                // held, ignored regions cannot replace it
                if matches!(matched, Some(m) if !self.gt_ignore[m]) && self.gt_ignore[g] {
                    break;
                }
                if iou < best {
                    continue;
                }
                best = iou;
                matched = Some(g);
            }
            labels.push(match matched {
                Some(g) => {
                    gt_taken[g] = true;
                    if self.gt_ignore[g] {
                        MatchLabel::Ignored
                    } else {
                        MatchLabel::TruePositive
                    }
                }
                None if area.excludes(self.dt_area[d]) => MatchLabel::Ignored,
                None => MatchLabel::FalsePositive,
            });
        }
        labels
    }
}

/// Greedy matching of one image's detections of one class against its ground
/// truth. `dets` must already be sorted by score, descending.
pub fn match_detections(
    dets: &[EvalDetection],
    gts: &[GtAnnotation],
    iou_threshold: f64,
    area: AreaRange,
) -> Vec<MatchLabel> {
    let dets: Vec<&EvalDetection> = dets.iter().collect();
    let gts: Vec<&GtAnnotation> = gts.iter().collect();
    CellGeometry::new(&dets, &gts, area).match_at(iou_threshold, area)
}

/// Interpolated precision sampled at `recall_thresholds`, plus final recall.
fn sampled_precision(labels: &[MatchLabel], n_gt: usize, recall_thresholds: &[f64]) -> (Vec<f64>, f64) {
    let n_gt = n_gt as f64;
    let mut recall = Vec::with_capacity(labels.len());
    let mut precision = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    for label in labels {
        match label {
            MatchLabel::TruePositive => tp += 1.0,
            MatchLabel::FalsePositive => fp += 1.0,
            MatchLabel::Ignored => {}
        }
        recall.push(tp / n_gt);
        precision.push(if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sampled = vec![0.0; recall_thresholds.len()];
    let mut cursor = 0;
    for (slot, &thr) in sampled.iter_mut().zip(recall_thresholds) {
        while cursor < recall.len() && recall[cursor] < thr {
            cursor += 1;
        }
        if cursor == recall.len() {
            break;
        }
        *slot = precision[cursor];
    }
    (sampled, recall.last().copied().unwrap_or(0.0))
}

/// Interpolated average precision over `recall_points` evenly spaced recall
/// levels in `[0, 1]`. `labels` are in score order. Returns `-1` when there
/// is no ground truth.
pub fn average_precision(labels: &[MatchLabel], n_gt: usize, recall_points: usize) -> f64 {
    if n_gt == 0 {
        return -1.0;
    }
    let thresholds = linspace(0.0, 1.0, recall_points.max(2));
    let (q, _) = sampled_precision(labels, n_gt, &thresholds);
    q.iter().sum::<f64>() / q.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub class_name: String,
    pub num_gt: usize,
    /// `-1` when the class has no ground truth.
    pub ap: f64,
    pub ap50: f64,
}

/// What produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub method: String,
    pub phrase_mode: String,
    pub calibration: bool,
    pub lambda: f64,
    pub top_k: usize,
    /// Hash of the canonical run configuration.
    pub config_fingerprint: String,
}

/// Aggregate and per-class metrics in `[0, 1]`; `-1` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
    pub per_class: Vec<ClassMetrics>,
    pub num_images: usize,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<RunProvenance>,
}

impl EvalReport {
    /// The twelve standard summary numbers in reference order.
    pub fn stats(&self) -> [f64; 12] {
        [
            self.map,
            self.ap50,
            self.ap75,
            self.ap_small,
            self.ap_medium,
            self.ap_large,
            self.ar1,
            self.ar10,
            self.ar100,
            self.ar_small,
            self.ar_medium,
            self.ar_large,
        ]
    }
}

/// Accumulated precision `[t][r][k][a][m]` and recall `[t][k][a][m]`, `-1`
/// where a cell had no ground truth.
struct Accumulated {
    t: usize,
    r: usize,
    k: usize,
    a: usize,
    m: usize,
    precision: Vec<f64>,
    recall: Vec<f64>,
}

impl Accumulated {
    fn p_idx(&self, t: usize, r: usize, k: usize, a: usize, m: usize) -> usize {
        (((t * self.r + r) * self.k + k) * self.a + a) * self.m + m
    }

    fn r_idx(&self, t: usize, k: usize, a: usize, m: usize) -> usize {
        ((t * self.k + k) * self.a + a) * self.m + m
    }

    fn mean_valid(vals: impl Iterator<Item = f64>) -> f64 {
        let (sum, n) = vals.filter(|&v| v > -1.0).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            -1.0
        } else {
            sum / n as f64
        }
    }

    fn ap(&self, t: Option<usize>, ks: &[usize], a: usize, m: usize) -> f64 {
        let ts: Vec<usize> = t.map_or_else(|| (0..self.t).collect(), |t| vec![t]);
        Self::mean_valid(ts.iter().flat_map(|&t| {
            (0..self.r).flat_map(move |r| ks.iter().map(move |&k| self.precision[self.p_idx(t, r, k, a, m)]))
        }))
    }

    fn ar(&self, a: usize, m: usize) -> f64 {
        Self::mean_valid((0..self.t).flat_map(|t| (0..self.k).map(move |k| self.recall[self.r_idx(t, k, a, m)])))
    }
}

/// Per (image, class, area) outcome with detections truncated to the largest
/// `max_dets`.
struct CellEval {
    scores: Vec<f64>,
    /// `labels[t][d]`
    labels: Vec<Vec<MatchLabel>>,
    non_ignored_gt: usize,
}

fn check_detection(d: &EvalDetection, gts: &GroundTruthSet) -> Result<()> {
    if gts.image(d.image_id).is_none() {
        return Err(CoreError::UnknownId {
            kind: "image",
            id: d.image_id,
        });
    }
    if !gts.catalog().contains(d.category_id) {
        return Err(CoreError::UnknownId {
            kind: "category",
            id: d.category_id as u64,
        });
    }
    if !d.score.is_finite() || d.bbox.iter().any(|v| !v.is_finite()) || d.bbox[2] < 0.0 || d.bbox[3] < 0.0 {
        return Err(validation(format!(
            "detection on image {} has a malformed box or score",
            d.image_id
        )));
    }
    Ok(())
}

fn by_score_desc(a: &&EvalDetection, b: &&EvalDetection) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal)
}

/// Evaluates `dets` against `gts` with the default COCO parameters.
pub fn evaluate(dets: &[EvalDetection], gts: &GroundTruthSet) -> Result<EvalReport> {
    evaluate_with(dets, gts, &EvalParams::default())
}

pub fn evaluate_with(dets: &[EvalDetection], gts: &GroundTruthSet, params: &EvalParams) -> Result<EvalReport> {
    if params.max_dets.is_empty() || params.iou_thresholds.is_empty() || params.recall_thresholds.is_empty() {
        return Err(validation("evaluation parameters need thresholds and detection caps"));
    }
    for d in dets {
        check_detection(d, gts)?;
    }
    let mut gt_cells: HashMap<(u64, u32), Vec<&GtAnnotation>> = HashMap::new();
    for g in gts.annotations() {
        gt_cells.entry((g.image_id, g.category_id)).or_default().push(g);
    }
    let mut dt_cells: HashMap<(u64, u32), Vec<&EvalDetection>> = HashMap::new();
    for d in dets {
        dt_cells.entry((d.image_id, d.category_id)).or_default().push(d);
    }
    let max_det = *params.max_dets.iter().max().unwrap();
    for cell in dt_cells.values_mut() {
        cell.sort_by(by_score_desc);
        cell.truncate(max_det);
    }

    let classes: Vec<u32> = gts.catalog().iter().map(|c| c.class_id).collect();
    let images = gts.images();
    let n_areas = params.area_ranges.len();
    let empty_gt: Vec<&GtAnnotation> = Vec::new();
    let empty_dt: Vec<&EvalDetection> = Vec::new();

    // cells[k][a][image]
    let mut cells: Vec<Vec<Vec<Option<CellEval>>>> = Vec::with_capacity(classes.len());
    for &class_id in &classes {
        let mut per_area = Vec::with_capacity(n_areas);
        for area in params.area_ranges {
            let per_image = images
                .iter()
                .map(|img| {
                    let g = gt_cells.get(&(img.id, class_id)).unwrap_or(&empty_gt);
                    let d = dt_cells.get(&(img.id, class_id)).unwrap_or(&empty_dt);
                    if g.is_empty() && d.is_empty() {
                        return None;
                    }
                    let geom = CellGeometry::new(d, g, area);
                    Some(CellEval {
                        scores: d.iter().map(|d| d.score).collect(),
                        labels: params.iou_thresholds.iter().map(|&t| geom.match_at(t, area)).collect(),
                        non_ignored_gt: geom.non_ignored_gt(),
                    })
                })
                .collect::<Vec<_>>();
            per_area.push(per_image);
        }
        cells.push(per_area);
    }

    let (t_n, r_n, k_n, m_n) = (
        params.iou_thresholds.len(),
        params.recall_thresholds.len(),
        classes.len(),
        params.max_dets.len(),
    );
    let mut acc = Accumulated {
        t: t_n,
        r: r_n,
        k: k_n,
        a: n_areas,
        m: m_n,
        precision: vec![-1.0; t_n * r_n * k_n * n_areas * m_n],
        recall: vec![-1.0; t_n * k_n * n_areas * m_n],
    };
    for (k, per_area) in cells.iter().enumerate() {
        for (a, per_image) in per_area.iter().enumerate() {
            let present: Vec<&CellEval> = per_image.iter().flatten().collect();
            if present.is_empty() {
                continue;
            }
            let n_gt: usize = present.iter().map(|c| c.non_ignored_gt).sum();
            if n_gt == 0 {
                continue;
            }
            for (m, &cap) in params.max_dets.iter().enumerate() {
                let mut scores = Vec::new();
                let mut labels: Vec<Vec<MatchLabel>> = vec![Vec::new(); t_n];
                for cell in &present {
                    let nd = cell.scores.len().min(cap);
                    scores.extend_from_slice(&cell.scores[..nd]);
                    for (t, l) in labels.iter_mut().enumerate() {
                        l.extend_from_slice(&cell.labels[t][..nd]);
                    }
                }
                let mut order: Vec<usize> = (0..scores.len()).collect();
                order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));
                for (t, l) in labels.iter().enumerate() {
                    let ranked: Vec<MatchLabel> = order.iter().map(|&i| l[i]).collect();
                    let (q, final_recall) = sampled_precision(&ranked, n_gt, &params.recall_thresholds);
                    let ri = acc.r_idx(t, k, a, m);
                    acc.recall[ri] = final_recall;
                    for (r, v) in q.into_iter().enumerate() {
                        let pi = acc.p_idx(t, r, k, a, m);
                        acc.precision[pi] = v;
                    }
                }
            }
        }
    }

    let all_k: Vec<usize> = (0..k_n).collect();
    let last_m = m_n - 1;
    let m_for = |cap: usize| params.max_dets.iter().position(|&c| c == cap).unwrap_or(last_m);
    let t_for = |thr: f64| params.iou_thresholds.iter().position(|&t| t == thr);
    let ap_at = |thr: f64, ks: &[usize], a: usize| match t_for(thr) {
        Some(t) => acc.ap(Some(t), ks, a, last_m),
        None => -1.0,
    };

    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gts.annotations().iter().filter(|g| !g.iscrowd) {
        *gt_counts.entry(g.category_id).or_default() += 1;
    }
    let per_class = gts
        .catalog()
        .iter()
        .enumerate()
        .map(|(k, c)| ClassMetrics {
            class_id: c.class_id,
            class_name: c.class_name.clone(),
            num_gt: gt_counts.get(&c.class_id).copied().unwrap_or(0),
            ap: acc.ap(None, &[k], 0, last_m),
            ap50: ap_at(0.5, &[k], 0),
        })
        .collect();

    Ok(EvalReport {
        map: acc.ap(None, &all_k, 0, last_m),
        ap50: ap_at(0.5, &all_k, 0),
        ap75: ap_at(0.75, &all_k, 0),
        ap_small: acc.ap(None, &all_k, 1, last_m),
        ap_medium: acc.ap(None, &all_k, 2, last_m),
        ap_large: acc.ap(None, &all_k, 3, last_m),
        ar1: acc.ar(0, m_for(1)),
        ar10: acc.ar(0, m_for(10)),
        ar100: acc.ar(0, m_for(100)),
        ar_small: acc.ar(1, last_m),
        ar_medium: acc.ar(2, last_m),
        ar_large: acc.ar(3, last_m),
        per_class,
        num_images: images.len(),
        num_detections: dets.len(),
        num_ground_truth: gts.annotations().len(),
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use MatchLabel::*;

    fn gt(id: u64, bbox: [f64; 4], crowd: bool) -> GtAnnotation {
        GtAnnotation {
            id,
            image_id: 1,
            category_id: 1,
            bbox,
            area: bbox[2] * bbox[3],
            iscrowd: crowd,
        }
    }

    fn dt(bbox: [f64; 4], score: f64) -> EvalDetection {
        EvalDetection {
            image_id: 1,
            category_id: 1,
            bbox,
            score,
        }
    }

    #[test]
    fn thresholds_match_reference_grid() {
        let iou = linspace(0.5, 0.95, 10);
        assert_eq!(iou[0], 0.5);
        assert_eq!(iou[5], 0.75);
        assert_eq!(iou[8], 0.8999999999999999);
        assert_eq!(iou[9], 0.95);
        let rec = linspace(0.0, 1.0, 101);
        assert_eq!(rec[57], 0.5700000000000001);
        assert_eq!(rec[100], 1.0);
    }

    #[test]
    fn single_match_is_tp() {
        // IoU 0.9: [0,0,10,10] vs [0,0,10,9]
        let labels = match_detections(&[dt([0., 0., 10., 9.], 0.9)], &[gt(1, [0., 0., 10., 10.], false)], 0.5, AreaRange::ALL);
        assert_eq!(labels, vec![TruePositive]);
    }

    #[test]
    fn one_gt_matches_once() {
        let g = [gt(1, [0., 0., 10., 10.], false)];
        let d = [dt([0., 0., 10., 10.], 0.9), dt([0., 0., 10., 9.], 0.8)];
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::ALL), vec![TruePositive, FalsePositive]);
    }

    #[test]
    fn below_threshold_is_fp() {
        // intersection 45, union 100 -> 0.45
        let g = [gt(1, [0., 0., 10., 10.], false)];
        let d = [dt([0., 0., 10., 4.5], 0.9)];
        assert!((coco_iou(&d[0].bbox, &g[0].bbox, false) - 0.45).abs() < 1e-12);
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::ALL), vec![FalsePositive]);
    }

    #[test]
    fn crowd_absorbs_many_and_is_ignored() {
        let g = [gt(1, [0., 0., 100., 100.], true)];
        let d = [dt([0., 0., 10., 10.], 0.9), dt([50., 50., 10., 10.], 0.8)];
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::ALL), vec![Ignored, Ignored]);
    }

    #[test]
    fn real_match_preferred_over_crowd() {
        let g = [gt(1, [0., 0., 100., 100.], true), gt(2, [0., 0., 10., 10.], false)];
        let d = [dt([0., 0., 10., 10.], 0.9)];
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::ALL), vec![TruePositive]);
    }

    #[test]
    fn out_of_range_unmatched_detection_is_ignored() {
        let g = [gt(1, [0., 0., 10., 10.], false)];
        let d = [dt([200., 200., 50., 50.], 0.9)];
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::SMALL), vec![Ignored]);
        assert_eq!(match_detections(&d, &g, 0.5, AreaRange::ALL), vec![FalsePositive]);
    }

    #[test]
    fn ap_hand_case() {
        let ap = average_precision(&[TruePositive, FalsePositive, TruePositive], 2, 101);
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
        assert!((ap - 0.8350).abs() < 1e-4);
    }

    #[test]
    fn ap_edge_cases() {
        assert_eq!(average_precision(&[TruePositive, TruePositive], 2, 101), 1.0);
        assert_eq!(average_precision(&[FalsePositive, FalsePositive], 3, 101), 0.0);
        assert_eq!(average_precision(&[], 3, 101), 0.0);
        assert_eq!(average_precision(&[FalsePositive], 0, 101), -1.0);
    }

    fn catalog(n: u32) -> ClassCatalog {
        ClassCatalog::new((1..=n).map(|c| (c, format!("c{}", c)))).unwrap()
    }

    fn image(id: u64) -> ImageInfo {
        ImageInfo {
            id,
            file_name: format!("{}.png", id),
            width: 100.0,
            height: 100.0,
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let anns = vec![gt(1, [0., 0., 10., 10.], false), gt(2, [40., 40., 30., 30.], false)];
        let gts = GroundTruthSet::new(vec![image(1)], anns.clone(), catalog(2)).unwrap();
        let dets: Vec<EvalDetection> = anns.iter().map(|a| dt(a.bbox, 1.0)).collect();
        let r = evaluate(&dets, &gts).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap50, 1.0);
        assert_eq!(r.ar100, 1.0);
        assert_eq!(r.ap_small, 1.0);
        // class 2 has no ground truth
        assert_eq!(r.per_class[1].ap, -1.0);
        assert_eq!(r.per_class[0].ap, 1.0);
    }

    #[test]
    fn empty_detections_score_zero() {
        let anns = vec![gt(1, [0., 0., 10., 10.], false), gt(2, [40., 40., 50., 50.], false)];
        let gts = GroundTruthSet::new(vec![image(1)], anns, catalog(1)).unwrap();
        let r = evaluate(&[], &gts).unwrap();
        assert_eq!((r.map, r.ap50, r.ar1, r.ar10, r.ar100), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.ap_small, 0.0);
        assert_eq!(r.ap_medium, 0.0);
        assert_eq!(r.ap_large, -1.0);
    }

    #[test]
    fn unknown_ids_rejected() {
        let gts = GroundTruthSet::new(vec![image(1)], vec![gt(1, [0., 0., 10., 10.], false)], catalog(1)).unwrap();
        let mut d = dt([0., 0., 1., 1.], 0.5);
        d.image_id = 9;
        assert!(matches!(evaluate(&[d.clone()], &gts), Err(CoreError::UnknownId { kind: "image", .. })));
        d.image_id = 1;
        d.category_id = 3;
        assert!(matches!(evaluate(&[d], &gts), Err(CoreError::UnknownId { kind: "category", .. })));
    }
}
