//! Shared domain types. Everything here is an immutable value after
//! construction; constructors enforce the invariants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{validation, CoreError, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;

/// Scores from a backend may stray this far outside `[0, 1]` before being
/// rejected; anything within is clamped.
pub const SCORE_SLACK: f64 = 1e-6;

/// Clamps float noise into `[0, 1]`, rejecting genuinely malformed scores.
pub fn sanitize_score<T: Scalar>(value: T, location: impl FnOnce() -> String) -> Result<T> {
    let slack = T::lit(SCORE_SLACK);
    if !value.is_finite() || value < -slack || value > T::one() + slack {
        return Err(CoreError::ScoreOutOfRange {
            value: value.as_f64(),
            location: location(),
        });
    }
    Ok(value.max(T::zero()).min(T::one()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: u32,
    pub class_name: String,
}

/// Ordered category set with ids `1..=C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassCatalog {
    classes: Vec<ClassEntry>,
}

impl ClassCatalog {
    /// Accepts entries in any order; ids must form `1..=C` and names must be
    /// unique and non-empty.
    pub fn new(entries: impl IntoIterator<Item = (u32, String)>) -> Result<Self> {
        let mut classes: Vec<ClassEntry> = entries
            .into_iter()
            .map(|(class_id, class_name)| ClassEntry {
                class_id,
                class_name,
            })
            .collect();
        if classes.is_empty() {
            return Err(validation("class catalog is empty"));
        }
        classes.sort_by_key(|c| c.class_id);
        let mut names = BTreeSet::new();
        for (idx, entry) in classes.iter().enumerate() {
            if entry.class_id as usize != idx + 1 {
                return Err(validation(format!(
                    "class ids must be contiguous 1..={}, found {} at position {}",
                    classes.len(),
                    entry.class_id,
                    idx + 1
                )));
            }
            if entry.class_name.trim().is_empty() {
                return Err(validation(format!("class {} has an empty name", entry.class_id)));
            }
            if !names.insert(entry.class_name.as_str()) {
                return Err(validation(format!("duplicate class name {:?}", entry.class_name)));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassEntry> {
        self.classes.iter()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        class_id >= 1 && class_id as usize <= self.classes.len()
    }

    pub fn name(&self, class_id: u32) -> Option<&str> {
        if self.contains(class_id) {
            Some(&self.classes[class_id as usize - 1].class_name)
        } else {
            None
        }
    }

    /// Zero-based column for a class id.
    pub fn index_of(&self, class_id: u32) -> Option<usize> {
        self.contains(class_id).then(|| class_id as usize - 1)
    }
}

impl<'de> Deserialize<'de> for ClassCatalog {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            classes: Vec<ClassEntry>,
        }
        let raw = Raw::deserialize(de)?;
        ClassCatalog::new(raw.classes.into_iter().map(|c| (c.class_id, c.class_name)))
            .map_err(serde::de::Error::custom)
    }
}

/// One annotated exemplar per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportTriple {
    pub image_ref: String,
    pub bbox: BoundingBox<f64>,
    pub class_name: String,
    pub class_id: u32,
    pub domain_tag: String,
}

impl SupportTriple {
    pub fn new(
        image_ref: impl Into<String>,
        bbox: BoundingBox<f64>,
        class_name: impl Into<String>,
        class_id: u32,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        let triple = Self {
            image_ref: image_ref.into(),
            bbox,
            class_name: class_name.into(),
            class_id,
            domain_tag: domain_tag.into(),
        };
        if triple.class_name.trim().is_empty() {
            return Err(validation(format!("support for class {} has an empty name", class_id)));
        }
        Ok(triple)
    }
}

/// Exactly one [`SupportTriple`] per catalog class, ordered by class id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportSet {
    triples: Vec<SupportTriple>,
}

impl SupportSet {
    pub fn new(mut triples: Vec<SupportTriple>, catalog: &ClassCatalog) -> Result<Self> {
        triples.sort_by_key(|t| t.class_id);
        for pair in triples.windows(2) {
            if pair[0].class_id == pair[1].class_id {
                return Err(validation(format!(
                    "more than one support triple for class {}",
                    pair[0].class_id
                )));
            }
        }
        for t in &triples {
            match catalog.name(t.class_id) {
                None => {
                    return Err(CoreError::UnknownId {
                        kind: "class",
                        id: t.class_id as u64,
                    })
                }
                Some(name) if name != t.class_name => {
                    return Err(validation(format!(
                        "support triple names class {} {:?} but the catalog says {:?}",
                        t.class_id, t.class_name, name
                    )))
                }
                Some(_) => {}
            }
        }
        if triples.len() != catalog.len() {
            let missing: Vec<u32> = catalog
                .iter()
                .map(|c| c.class_id)
                .filter(|id| !triples.iter().any(|t| t.class_id == *id))
                .collect();
            return Err(validation(format!("no support triple for classes {:?}", missing)));
        }
        Ok(Self { triples })
    }

    pub fn iter(&self) -> impl Iterator<Item = &SupportTriple> {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn get(&self, class_id: u32) -> Option<&SupportTriple> {
        self.triples.iter().find(|t| t.class_id == class_id)
    }
}

/// Description and extracted phrases for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPhrases {
    pub class_id: u32,
    pub class_name: String,
    pub description: String,
    pub phrases: Vec<String>,
}

impl ClassPhrases {
    pub fn new(
        class_id: u32,
        class_name: impl Into<String>,
        description: impl Into<String>,
        phrases: Vec<String>,
    ) -> Result<Self> {
        let entry = Self {
            class_id,
            class_name: class_name.into(),
            description: description.into(),
            phrases,
        };
        entry.check()?;
        Ok(entry)
    }

    fn check(&self) -> Result<()> {
        if self.class_name.trim().is_empty() {
            return Err(validation(format!("class {} has an empty name", self.class_id)));
        }
        if self.phrases.is_empty() {
            return Err(validation(format!("class {} has no phrases", self.class_id)));
        }
        for p in &self.phrases {
            if p.is_empty() || p.trim() != p {
                return Err(validation(format!(
                    "class {} phrase {:?} is empty or carries surrounding whitespace",
                    self.class_id, p
                )));
            }
        }
        Ok(())
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases.len()
    }
}

/// Per-class phrase lists, ordered by class id. Persisted as a JSON array of
/// [`ClassPhrases`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct PhraseLibrary {
    entries: Vec<ClassPhrases>,
}

impl PhraseLibrary {
    pub fn new(mut entries: Vec<ClassPhrases>) -> Result<Self> {
        entries.sort_by_key(|e| e.class_id);
        for pair in entries.windows(2) {
            if pair[0].class_id == pair[1].class_id {
                return Err(validation(format!(
                    "phrase library lists class {} twice",
                    pair[0].class_id
                )));
            }
        }
        for e in &entries {
            e.check()?;
        }
        Ok(Self { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassPhrases> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: u32) -> Option<&ClassPhrases> {
        self.entries
            .binary_search_by_key(&class_id, |e| e.class_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn description(&self, class_id: u32) -> Option<&str> {
        self.get(class_id).map(|e| e.description.as_str())
    }
}

impl<'de> Deserialize<'de> for PhraseLibrary {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<ClassPhrases>::deserialize(de)?;
        PhraseLibrary::new(entries).map_err(serde::de::Error::custom)
    }
}

/// Ragged phrase-box-category relevance scores for one image.
///
/// Stored flat: row `i` holds `sum(M_c)` scores, class `c` occupying
/// `offsets[c]..offsets[c + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor<T> {
    image_id: u64,
    boxes: Vec<BoundingBox<T>>,
    phrase_counts: Vec<usize>,
    offsets: Vec<usize>,
    scores: Vec<T>,
}

impl<T: Scalar> ScoreTensor<T> {
    /// Builds from nested `scores[i][c][m]`, checking the shape against
    /// `phrase_counts` and sanitizing every score.
    pub fn from_nested(
        image_id: u64,
        boxes: Vec<BoundingBox<T>>,
        nested: &[Vec<Vec<T>>],
        phrase_counts: &[usize],
    ) -> Result<Self> {
        if nested.len() != boxes.len() {
            return Err(CoreError::Shape(format!(
                "image {}: {} boxes but {} score rows",
                image_id,
                boxes.len(),
                nested.len()
            )));
        }
        let row_len: usize = phrase_counts.iter().sum();
        let mut flat = Vec::with_capacity(row_len * boxes.len());
        for (i, row) in nested.iter().enumerate() {
            if row.len() != phrase_counts.len() {
                return Err(CoreError::Shape(format!(
                    "image {} box {}: {} classes, expected {}",
                    image_id,
                    i,
                    row.len(),
                    phrase_counts.len()
                )));
            }
            for (c, (phrases, &m)) in row.iter().zip(phrase_counts).enumerate() {
                if phrases.len() != m {
                    return Err(CoreError::Shape(format!(
                        "image {} box {} class index {}: {} phrase scores, expected {}",
                        image_id,
                        i,
                        c,
                        phrases.len(),
                        m
                    )));
                }
                flat.extend_from_slice(phrases);
            }
        }
        Self::from_flat(image_id, boxes, flat, phrase_counts)
    }

    pub fn from_flat(
        image_id: u64,
        boxes: Vec<BoundingBox<T>>,
        mut scores: Vec<T>,
        phrase_counts: &[usize],
    ) -> Result<Self> {
        if let Some(c) = phrase_counts.iter().position(|&m| m == 0) {
            return Err(CoreError::Shape(format!(
                "class index {} has no phrases (M_c must be >= 1)",
                c
            )));
        }
        let mut offsets = Vec::with_capacity(phrase_counts.len() + 1);
        offsets.push(0);
        for &m in phrase_counts {
            offsets.push(offsets.last().unwrap() + m);
        }
        let row_len = *offsets.last().unwrap();
        if scores.len() != row_len * boxes.len() {
            return Err(CoreError::Shape(format!(
                "image {}: {} scores for {} boxes x {} phrases",
                image_id,
                scores.len(),
                boxes.len(),
                row_len
            )));
        }
        for (k, s) in scores.iter_mut().enumerate() {
            *s = sanitize_score(*s, || {
                format!("image {} box {} phrase slot {}", image_id, k / row_len.max(1), k % row_len.max(1))
            })?;
        }
        Ok(Self {
            image_id,
            boxes,
            phrase_counts: phrase_counts.to_vec(),
            offsets,
            scores,
        })
    }

    pub fn empty(image_id: u64, phrase_counts: &[usize]) -> Result<Self> {
        Self::from_flat(image_id, Vec::new(), Vec::new(), phrase_counts)
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn boxes(&self) -> &[BoundingBox<T>] {
        &self.boxes
    }

    pub fn num_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.phrase_counts.len()
    }

    pub fn phrase_counts(&self) -> &[usize] {
        &self.phrase_counts
    }

    /// Scores of box `i` against every phrase of class index `c`.
    pub fn phrase_scores(&self, i: usize, c: usize) -> &[T] {
        let row = i * self.offsets[self.offsets.len() - 1];
        &self.scores[row + self.offsets[c]..row + self.offsets[c + 1]]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<T>>> {
        (0..self.num_boxes())
            .map(|i| {
                (0..self.num_classes())
                    .map(|c| self.phrase_scores(i, c).to_vec())
                    .collect()
            })
            .collect()
    }
}

/// A retained box-category pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Detection<T> {
    pub bbox: BoundingBox<T>,
    pub class_id: u32,
    /// Candidate index in the originating score tensor.
    pub box_index: usize,
    pub raw_score: T,
    pub calibrated_score: T,
    pub calibration_applied: bool,
    pub alignment_score: Option<T>,
}

impl<T: Scalar> Detection<T> {
    pub fn uncalibrated(bbox: BoundingBox<T>, class_id: u32, box_index: usize, raw_score: T) -> Self {
        Self {
            bbox,
            class_id,
            box_index,
            raw_score,
            calibrated_score: raw_score,
            calibration_applied: false,
            alignment_score: None,
        }
    }

    /// Fuses `alignment` into the score with weight `lambda`.
    pub fn with_alignment(mut self, alignment: T, lambda: T) -> Self {
        self.calibrated_score = (T::one() - lambda) * self.raw_score + lambda * alignment;
        self.alignment_score = Some(alignment);
        self.calibration_applied = true;
        self
    }

    /// Checks the calibration invariants within `tol`.
    pub fn check(&self, lambda: T, tol: T) -> Result<()> {
        if self.calibration_applied {
            let a = self.alignment_score.ok_or_else(|| {
                validation("calibrated detection is missing its alignment score")
            })?;
            let expected = (T::one() - lambda) * self.raw_score + lambda * a;
            if (expected - self.calibrated_score).abs() > tol {
                return Err(validation(format!(
                    "calibrated score {} differs from fused value {}",
                    self.calibrated_score, expected
                )));
            }
        } else if self.calibrated_score != self.raw_score {
            return Err(validation("uncalibrated detection must keep its raw score"));
        }
        Ok(())
    }
}
