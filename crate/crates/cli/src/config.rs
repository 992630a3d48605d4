//! Run configuration: file formats, path resolution, overrides, validation
//! and the provenance fingerprint.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phrasedet_backends::wire::sha256_hex;
use phrasedet_backends::HttpConfig;
use phrasedet_core::{FailureMode, InstructionTemplate, PhraseMode, PhraseRules, SelectionConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable replacing the whole backend spec.
pub const ENV_BACKEND: &str = "PHRASEDET_BACKEND";
/// Environment variable replacing the URL of an `http:` backend.
pub const ENV_HTTP_URL: &str = "PHRASEDET_HTTP_URL";

/// Where model outputs come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    /// Synthetic scene; `None` means `scene.json` next to the annotations.
    Mock(Option<PathBuf>),
    /// Recorded bundle directory, or a directory of per-mode bundles.
    Replay(PathBuf),
    Http(String),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock(None)
    }
}

impl FromStr for BackendSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "mock" {
            return Ok(BackendSpec::Mock(None));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Http(s.to_string()));
        }
        let bad = || CliError::Config(format!("backend {:?}: expected mock, mock:<scene>, replay:<dir> or http:<url>", s));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match kind {
            "mock" => Ok(BackendSpec::Mock(Some(PathBuf::from(rest)))),
            "replay" => Ok(BackendSpec::Replay(PathBuf::from(rest))),
            "http" => Ok(BackendSpec::Http(rest.to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(None) => f.write_str("mock"),
            BackendSpec::Mock(Some(p)) => write!(f, "mock:{}", p.display()),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendSpec::Http(u) => write!(f, "http:{}", u),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// COCO instance annotations of the test split.
    pub annotations: PathBuf,
    /// JSON array of `{class_id, class_name, image, bbox_xyxy, domain}`.
    pub support: PathBuf,
    /// Prefix for image references sent to backends; file names are sent
    /// as-is when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_dir: Option<PathBuf>,
    pub backend: BackendSpec,
    pub phrase_mode: PhraseMode,
    pub calibration: bool,
    pub top_k: usize,
    pub lambda: f64,
    pub small_area_threshold: f64,
    pub crop_padding: f64,
    pub resort_after_calibration: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nms_iou: Option<f64>,
    /// Applies to both detection and alignment outages.
    pub failure_mode: FailureMode,
    pub phrase_rules: PhraseRules,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Overrides the mock scene seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Row label in reports; derived from mode and calibration when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub http_timeout_secs: f64,
    pub http_retries: u32,
    pub http_backoff_ms: u64,
    pub http_max_in_flight: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub overlays: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sel = SelectionConfig::<f64>::default();
        let http = HttpConfig::default();
        Self {
            annotations: PathBuf::from("annotations.json"),
            support: PathBuf::from("support.json"),
            images_dir: None,
            backend: BackendSpec::default(),
            phrase_mode: PhraseMode::SupportText,
            calibration: true,
            top_k: sel.top_k,
            lambda: sel.lambda,
            small_area_threshold: sel.small_area_threshold,
            crop_padding: sel.crop_padding,
            resort_after_calibration: sel.resort_after_calibration,
            nms_iou: None,
            failure_mode: FailureMode::Strict,
            phrase_rules: PhraseRules::default(),
            instruction: None,
            seed: None,
            method: None,
            http_timeout_secs: http.timeout_secs,
            http_retries: http.retries,
            http_backoff_ms: http.backoff_ms,
            http_max_in_flight: http.max_in_flight,
            output_dir: PathBuf::from("out"),
            workers: 4,
            overlays: false,
        }
    }
}

/// Fields that never change output bytes and stay out of the fingerprint.
const NOT_FINGERPRINTED: [&str; 3] = ["output_dir", "workers", "overlays"];

impl RunConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). Relative paths are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute-from-`base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.annotations);
        fix(&mut self.support);
        fix(&mut self.output_dir);
        if let Some(p) = self.images_dir.as_mut() {
            fix(p);
        }
        match &mut self.backend {
            BackendSpec::Mock(Some(p)) | BackendSpec::Replay(p) => fix(p),
            BackendSpec::Mock(None) | BackendSpec::Http(_) => {}
        }
    }

    /// `PHRASEDET_BACKEND` replaces the backend; `PHRASEDET_HTTP_URL` then
    /// replaces the URL of an HTTP backend.
    pub fn apply_env(&mut self, backend: Option<&str>, http_url: Option<&str>) -> Result<()> {
        if let Some(b) = backend.filter(|b| !b.trim().is_empty()) {
            self.backend = b.parse()?;
        }
        if let (Some(url), BackendSpec::Http(_)) = (http_url.filter(|u| !u.trim().is_empty()), &self.backend) {
            self.backend = BackendSpec::Http(url.trim().to_string());
        }
        Ok(())
    }

    pub fn selection(&self) -> SelectionConfig<f64> {
        SelectionConfig {
            top_k: self.top_k,
            lambda: self.lambda,
            small_area_threshold: self.small_area_threshold,
            calibration_enabled: self.calibration,
            crop_padding: self.crop_padding,
            resort_after_calibration: self.resort_after_calibration,
            nms_iou: self.nms_iou,
            align_failure: self.failure_mode,
        }
    }

    pub fn http(&self, base_url: &str) -> HttpConfig {
        HttpConfig {
            base_url: base_url.to_string(),
            timeout_secs: self.http_timeout_secs,
            retries: self.http_retries,
            backoff_ms: self.http_backoff_ms,
            max_in_flight: self.http_max_in_flight,
        }
    }

    pub fn instruction_template(&self) -> Result<InstructionTemplate> {
        match &self.instruction {
            None => Ok(InstructionTemplate::default()),
            Some(t) => InstructionTemplate::new(t.clone()).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    pub fn method_label(&self) -> String {
        if let Some(m) = &self.method {
            return m.clone();
        }
        let calib = if self.calibration { "+calibration" } else { "" };
        format!("{}{}", self.phrase_mode, calib)
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.selection().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.phrase_rules.max_words == 0 {
            return bad("phrase_rules.max_words must be at least 1".into());
        }
        if !(self.http_timeout_secs.is_finite() && self.http_timeout_secs > 0.0) {
            return bad(format!("http_timeout_secs {} must be positive", self.http_timeout_secs));
        }
        if self.http_max_in_flight == 0 {
            return bad("http_max_in_flight must be at least 1".into());
        }
        if self.annotations.as_os_str().is_empty() || self.support.as_os_str().is_empty() {
            return bad("annotations and support paths are required".into());
        }
        if let BackendSpec::Http(url) = &self.backend {
            if !url.starts_with("http://") {
                return bad(format!("http backend URL {:?} must start with http://", url));
            }
        }
        self.instruction_template()?;
        Ok(())
    }

    /// sha256 of the key-sorted compact JSON of every output-affecting field.
    pub fn fingerprint(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(map) = v.as_object_mut() {
            for k in NOT_FINGERPRINTED {
                map.remove(k);
            }
        }
        // serde_json maps are key-sorted and floats print shortest round-trip
        let text = serde_json::to_string(&v).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Parses `strict` / `lenient`.
pub fn parse_failure_mode(s: &str) -> Result<FailureMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Config(format!("failure mode {:?}: expected strict or lenient", s)))
}
