//! Version 1 wire schema shared by replay bundles and the HTTP endpoints.
//!
//! Canonical form: compact JSON, keys sorted, one trailing newline. Numbers
//! are formatted by the key they sit under: scores (`score`, `scores`) with
//! 6 decimals, pixels (`box`, `boxes`, `width`, `height`) with 2 decimals,
//! identifiers and counts as integers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use phrasedet_core::{BoundingBox, PromptSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const SCORE_DECIMALS: usize = 6;
pub const PIXEL_DECIMALS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset_id: String,
    /// Absent for caption-only bundles written before prompts exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_set_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePrompt {
    pub class_id: u32,
    pub phrase_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRequest {
    pub schema_version: u32,
    pub image_id: u64,
    pub image_ref: String,
    pub width: f64,
    pub height: f64,
    pub prompt_set_fingerprint: String,
    pub prompts: Vec<WirePrompt>,
}

impl DetectorRequest {
    pub fn new(image_id: u64, image_ref: impl Into<String>, width: f64, height: f64, prompts: &PromptSet) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            image_id,
            image_ref: image_ref.into(),
            width,
            height,
            prompt_set_fingerprint: prompt_set_fingerprint(prompts)?,
            prompts: prompts
                .entries()
                .iter()
                .map(|p| WirePrompt {
                    class_id: p.class_id,
                    phrase_index: p.phrase_index,
                    text: p.text.clone(),
                })
                .collect(),
        })
    }

    /// Phrases per class in class order, derived from `prompts`.
    pub fn phrase_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = Vec::new();
        let mut last = None;
        for p in &self.prompts {
            if last == Some(p.class_id) {
                *counts.last_mut().unwrap() += 1;
            } else {
                counts.push(1);
                last = Some(p.class_id);
            }
        }
        counts
    }
}

/// Candidate boxes (absolute pixel `xyxy`) with `scores[i][c][m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorResponse {
    pub schema_version: u32,
    pub image_id: u64,
    pub prompt_set_fingerprint: String,
    pub phrase_counts: Vec<usize>,
    pub boxes: Vec<[f64; 4]>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRequest {
    pub schema_version: u32,
    pub class_id: u32,
    pub class_name: String,
    pub domain: String,
    pub image_ref: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionResponse {
    pub schema_version: u32,
    pub class_id: u32,
    pub class_name: String,
    /// Rendered instruction, kept for audit.
    pub instruction: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignRequest {
    pub schema_version: u32,
    pub image_id: u64,
    pub image_ref: String,
    /// Position in the image's pre-calibration ranking.
    pub det_index: usize,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignResponse {
    pub schema_version: u32,
    pub image_id: u64,
    pub det_index: usize,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub description: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    pub schema_version: u32,
    pub image_ref: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskResponse {
    pub schema_version: u32,
    pub mask_ref: String,
    pub width: f64,
    pub height: f64,
}

/// Which record a JSON document claims to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Manifest,
    DetectorRequest,
    DetectorResponse,
    CaptionRequest,
    CaptionResponse,
    AlignRequest,
    AlignResponse,
    MaskRequest,
    MaskResponse,
}

#[derive(Debug, Clone, Copy)]
enum Field {
    Version,
    Id,
    Index,
    Text,
    OptFingerprint,
    Fingerprint,
    Extent,
    Score,
    Box,
    Boxes,
    Counts,
    Prompts,
    Scores,
}

impl RecordKind {
    fn fields(self) -> &'static [(&'static str, Field)] {
        use Field::*;
        match self {
            RecordKind::Manifest => &[
                ("schema_version", Version),
                ("dataset_id", Text),
                ("prompt_set_fingerprint", OptFingerprint),
            ],
            RecordKind::DetectorRequest => &[
                ("schema_version", Version),
                ("image_id", Id),
                ("image_ref", Text),
                ("width", Extent),
                ("height", Extent),
                ("prompt_set_fingerprint", Fingerprint),
                ("prompts", Prompts),
            ],
            RecordKind::DetectorResponse => &[
                ("schema_version", Version),
                ("image_id", Id),
                ("prompt_set_fingerprint", Fingerprint),
                ("phrase_counts", Counts),
                ("boxes", Boxes),
                ("scores", Scores),
            ],
            RecordKind::CaptionRequest => &[
                ("schema_version", Version),
                ("class_id", Id),
                ("class_name", Text),
                ("domain", Text),
                ("image_ref", Text),
                ("box", Box),
                ("instruction", Text),
            ],
            RecordKind::CaptionResponse => &[
                ("schema_version", Version),
                ("class_id", Id),
                ("class_name", Text),
                ("instruction", Text),
                ("description", Text),
            ],
            RecordKind::AlignRequest => &[
                ("schema_version", Version),
                ("image_id", Id),
                ("image_ref", Text),
                ("det_index", Index),
                ("class_id", Id),
                ("box", Box),
                ("description", Text),
            ],
            RecordKind::AlignResponse => &[
                ("schema_version", Version),
                ("image_id", Id),
                ("det_index", Index),
                ("class_id", Id),
                ("box", Box),
                ("description", Text),
                ("score", Score),
            ],
            RecordKind::MaskRequest => &[
                ("schema_version", Version),
                ("image_ref", Text),
                ("box", Box),
                ("width", Extent),
                ("height", Extent),
            ],
            RecordKind::MaskResponse => &[
                ("schema_version", Version),
                ("mask_ref", Text),
                ("width", Extent),
                ("height", Extent),
            ],
        }
    }
}

fn violation(field: &str, reason: impl Into<String>) -> BackendError {
    BackendError::protocol(field, reason)
}

fn finite(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| violation(path, "expected a finite number"))
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| violation(path, "expected a non-negative integer"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| violation(path, "expected an array"))
}

fn check_box(v: &Value, path: &str) -> Result<()> {
    let a = array(v, path)?;
    if a.len() != 4 {
        return Err(violation(path, "expected [x1, y1, x2, y2]"));
    }
    let c: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(k, x)| finite(x, &format!("{}[{}]", path, k)))
        .collect::<Result<_>>()?;
    if !(c[2] > c[0] && c[3] > c[1]) {
        return Err(violation(path, "box needs x2 > x1 and y2 > y1"));
    }
    Ok(())
}

fn check_score(v: &Value, path: &str) -> Result<()> {
    let s = finite(v, path)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(violation(path, format!("score {} outside [0, 1]", s)));
    }
    Ok(())
}

fn check_field(kind: Field, v: &Value, path: &str) -> Result<()> {
    match kind {
        Field::Version => {
            if uint(v, path)? != SCHEMA_VERSION as u64 {
                return Err(violation(path, format!("unsupported schema version (this reader speaks {})", SCHEMA_VERSION)));
            }
        }
        Field::Id | Field::Index => {
            uint(v, path)?;
        }
        Field::Text => {
            let s = v.as_str().ok_or_else(|| violation(path, "expected a string"))?;
            if s.trim().is_empty() {
                return Err(violation(path, "empty text"));
            }
        }
        Field::OptFingerprint if v.is_null() => {}
        Field::Fingerprint | Field::OptFingerprint => {
            let s = v.as_str().ok_or_else(|| violation(path, "expected a string"))?;
            if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err(violation(path, "expected 64 lowercase hex digits"));
            }
        }
        Field::Extent => {
            if finite(v, path)? <= 0.0 {
                return Err(violation(path, "expected a positive extent"));
            }
        }
        Field::Score => check_score(v, path)?,
        Field::Box => check_box(v, path)?,
        Field::Boxes => {
            for (i, b) in array(v, path)?.iter().enumerate() {
                check_box(b, &format!("{}[{}]", path, i))?;
            }
        }
        Field::Counts => {
            for (c, n) in array(v, path)?.iter().enumerate() {
                let p = format!("{}[{}]", path, c);
                if uint(n, &p)? == 0 {
                    return Err(violation(&p, "every class needs at least one phrase"));
                }
            }
        }
        Field::Prompts => {
            for (k, p) in array(v, path)?.iter().enumerate() {
                let base = format!("{}[{}]", path, k);
                let obj = p.as_object().ok_or_else(|| violation(&base, "expected an object"))?;
                for (key, f) in [("class_id", Field::Id), ("phrase_index", Field::Id), ("text", Field::Text)] {
                    let fp = format!("{}.{}", base, key);
                    check_field(f, obj.get(key).ok_or_else(|| violation(&fp, "missing"))?, &fp)?;
                }
                if let Some(extra) = obj.keys().find(|k| !["class_id", "phrase_index", "text"].contains(&k.as_str())) {
                    return Err(violation(&format!("{}.{}", base, extra), "unknown field"));
                }
            }
        }
        Field::Scores => {
            for (i, row) in array(v, path)?.iter().enumerate() {
                let ri = format!("{}[{}]", path, i);
                for (c, phrases) in array(row, &ri)?.iter().enumerate() {
                    let rc = format!("{}[{}]", ri, c);
                    for (m, s) in array(phrases, &rc)?.iter().enumerate() {
                        check_score(s, &format!("{}[{}]", rc, m))?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Field-level check of a JSON document against the v1 schema. Reports the
/// first offending field path.
pub fn check_schema(kind: RecordKind, value: &Value) -> Result<()> {
    let obj = value.as_object().ok_or_else(|| violation("$", "expected an object"))?;
    let fields = kind.fields();
    for (name, f) in fields {
        match obj.get(*name) {
            Some(v) => check_field(*f, v, name)?,
            None if matches!(f, Field::OptFingerprint) => {}
            None => return Err(violation(name, "missing")),
        }
    }
    if let Some(extra) = obj.keys().find(|k| !fields.iter().any(|(n, _)| n == k)) {
        return Err(violation(extra, "unknown field"));
    }
    Ok(())
}

/// Parses `text` as a record of `kind`, schema-checked.
pub fn parse_record<T: DeserializeOwned>(kind: RecordKind, text: &str) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| violation("$", e.to_string()))?;
    parse_value(kind, value)
}

pub fn parse_value<T: DeserializeOwned>(kind: RecordKind, value: Value) -> Result<T> {
    check_schema(kind, &value)?;
    serde_json::from_value(value).map_err(|e| violation("$", e.to_string()))
}

#[derive(Clone, Copy)]
enum NumKind {
    Int,
    Fixed(usize),
}

fn num_kind(key: &str) -> Option<NumKind> {
    match key {
        "score" | "scores" => Some(NumKind::Fixed(SCORE_DECIMALS)),
        "box" | "boxes" | "width" | "height" => Some(NumKind::Fixed(PIXEL_DECIMALS)),
        "schema_version" | "image_id" | "class_id" | "det_index" | "phrase_index" | "phrase_counts" => {
            Some(NumKind::Int)
        }
        _ => None,
    }
}

/// `{:.d}` without a negative zero.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, v);
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Rounds as the canonical writer would.
pub fn quantize(v: f64, decimals: usize) -> f64 {
    fixed(v, decimals).parse().unwrap_or(v)
}

fn write_canonical(v: &Value, kind: Option<NumKind>, key: &str, out: &mut String) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match kind {
            Some(NumKind::Int) => {
                let i = n
                    .as_u64()
                    .ok_or_else(|| violation(key, "expected a non-negative integer"))?;
                let _ = write!(out, "{}", i);
            }
            Some(NumKind::Fixed(d)) => {
                let f = n.as_f64().filter(|f| f.is_finite()).ok_or_else(|| violation(key, "non-finite number"))?;
                out.push_str(&fixed(f, d));
            }
            None => return Err(violation(key, "number under a key with no canonical format")),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serialization")),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_canonical(item, kind, key, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (k, (name, item)) in sorted.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(name).expect("string serialization"));
                out.push(':');
                write_canonical(item, num_kind(name), name, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

/// Canonical bytes of a JSON value (see module docs).
pub fn canonical_value(value: &Value) -> Result<String> {
    let mut out = String::new();
    write_canonical(value, None, "$", &mut out)?;
    out.push('\n');
    Ok(out)
}

pub fn to_canonical<T: Serialize>(record: &T) -> Result<String> {
    let value = serde_json::to_value(record).map_err(|e| violation("$", e.to_string()))?;
    canonical_value(&value)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical prompt-set JSON
/// `{"phrase_counts":[..],"prompts":[{"class_id","phrase_index","text"}..]}`.
pub fn prompt_set_fingerprint(prompts: &PromptSet) -> Result<String> {
    let value = serde_json::json!({
        "phrase_counts": prompts.phrase_counts(),
        "prompts": prompts
            .entries()
            .iter()
            .map(|p| serde_json::json!({"class_id": p.class_id, "phrase_index": p.phrase_index, "text": p.text}))
            .collect::<Vec<_>>(),
    });
    Ok(sha256_hex(canonical_value(&value)?.as_bytes()))
}

pub fn box_to_wire(b: &BoundingBox<f64>) -> [f64; 4] {
    b.to_xyxy()
}

/// Box rounded to wire precision.
pub fn quantize_box(b: [f64; 4]) -> [f64; 4] {
    b.map(|v| quantize(v, PIXEL_DECIMALS))
}
