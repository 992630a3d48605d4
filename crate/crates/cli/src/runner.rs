//! Backend selection and the `run` / `ablate` entry points.

use std::fs;
use std::path::{Path, PathBuf};

use phrasedet_backends::{resolve_bundle_dir, HttpBackend, MockBackend, ModelBackend, ReplayBackend, SyntheticScene};
use phrasedet_core::eval::{comparison_table, method_table, TableRow};
use phrasedet_core::{EvalReport, PhraseMode};
use serde::Serialize;

use crate::config::{BackendSpec, RunConfig};
use crate::dataset::{load_dataset, Dataset};
use crate::dump::dump_detections;
use crate::error::{CliError, Result};
use crate::pipeline::{execute, RunOutput};

/// Training column value: every configuration here is training-free.
pub const TRAINING_FREE: &str = "×";

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
}

/// `scene.json` beside the annotations unless the backend names a file.
pub fn scene_path(cfg: &RunConfig) -> Option<PathBuf> {
    match &cfg.backend {
        BackendSpec::Mock(Some(p)) => Some(p.clone()),
        BackendSpec::Mock(None) => Some(cfg.annotations.parent().unwrap_or(Path::new("")).join("scene.json")),
        _ => None,
    }
}

/// Opens the backend named by the config. Replay resolves the per-mode
/// sub-bundle, and calibration demands recorded alignment scores.
pub fn open_backend(cfg: &RunConfig) -> Result<Box<dyn ModelBackend>> {
    match &cfg.backend {
        BackendSpec::Mock(_) => {
            let path = scene_path(cfg).expect("mock backend has a scene path");
            let mut scene = load_scene(&path)?;
            if let Some(seed) = cfg.seed {
                scene.seed = seed;
            }
            let mock = MockBackend::new(scene).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
            Ok(Box::new(mock))
        }
        BackendSpec::Replay(dir) => {
            let dir = resolve_bundle_dir(dir, cfg.phrase_mode.as_str());
            let replay = ReplayBackend::open(&dir).map_err(|e| CliError::backend("replay", dir.display().to_string(), e))?;
            if cfg.calibration && !replay.has_align_records() {
                return Err(CliError::Config(format!(
                    "calibration is on but bundle {} holds no alignment records",
                    dir.display()
                )));
            }
            Ok(Box::new(replay))
        }
        BackendSpec::Http(url) => {
            let http = HttpBackend::new(cfg.http(url)).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(http))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn report_json(report: &EvalReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Core(phrasedet_core::CoreError::Json(e.to_string())))?;
    text.push('\n');
    Ok(text)
}

/// Writes `detections.json`, `report.json`, `report.txt`, `library.json`
/// and, when enabled, `overlays/`.
pub fn write_outputs(out: &RunOutput, data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    dump_detections(out, data, dir, out.config.overlays)?;
    write_file(&dir.join("report.json"), &report_json(&out.report)?)?;
    let table = method_table(&[TableRow {
        method: out.method.clone(),
        training: TRAINING_FREE.into(),
        report: &out.report,
    }]);
    write_file(&dir.join("report.txt"), &table)?;
    let mut lib = serde_json::to_string_pretty(&out.library).map_err(|e| CliError::Config(e.to_string()))?;
    lib.push('\n');
    write_file(&dir.join("library.json"), &lib)
}

/// Loads inputs, runs one configuration and writes its outputs.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let backend = open_backend(cfg)?;
    let out = execute(cfg, &data, backend.as_ref())?;
    write_outputs(&out, &data, &cfg.output_dir)?;
    Ok(out)
}

/// One row of the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSpec {
    pub name: &'static str,
    pub label: &'static str,
    pub phrase_mode: PhraseMode,
    pub calibration: bool,
}

pub const ABLATIONS: [AblationSpec; 4] = [
    AblationSpec {
        name: "baseline",
        label: "class-name prompts",
        phrase_mode: PhraseMode::ClassName,
        calibration: false,
    },
    AblationSpec {
        name: "reduced",
        label: "support-text phrases",
        phrase_mode: PhraseMode::SupportText,
        calibration: false,
    },
    AblationSpec {
        name: "full",
        label: "support-text phrases + calibration",
        phrase_mode: PhraseMode::SupportText,
        calibration: true,
    },
    AblationSpec {
        name: "full-sentence",
        label: "full-sentence prompt",
        phrase_mode: PhraseMode::FullSentence,
        calibration: false,
    },
];

impl AblationSpec {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            phrase_mode: self.phrase_mode,
            calibration: self.calibration,
            method: Some(self.label.to_string()),
            output_dir: base.output_dir.join(self.name),
            ..base.clone()
        }
    }
}

#[derive(Debug, Serialize)]
struct AblationEntry<'a> {
    name: &'a str,
    method: &'a str,
    report: &'a EvalReport,
}

pub fn ablation_table(outputs: &[RunOutput]) -> String {
    let rows: Vec<TableRow<'_>> = outputs
        .iter()
        .map(|o| TableRow {
            method: o.method.clone(),
            training: TRAINING_FREE.into(),
            report: &o.report,
        })
        .collect();
    comparison_table(&rows)
}

/// Runs the four ablation configurations over shared inputs. Each writes
/// its own outputs under `<output_dir>/<name>/`; the combined table goes to
/// `ablation.txt` and the reports to `ablation.json`.
pub fn run_ablation_suite(cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let mut outputs = Vec::with_capacity(ABLATIONS.len());
    for spec in ABLATIONS {
        let sub = spec.apply(cfg);
        log::info!("ablation {}: {}", spec.name, sub.method_label());
        let backend = open_backend(&sub)?;
        let out = execute(&sub, &data, backend.as_ref())?;
        write_outputs(&out, &data, &sub.output_dir)?;
        outputs.push(out);
    }
    write_file(&cfg.output_dir.join("ablation.txt"), &ablation_table(&outputs))?;
    let entries: Vec<AblationEntry<'_>> = ABLATIONS
        .iter()
        .zip(&outputs)
        .map(|(s, o)| AblationEntry {
            name: s.name,
            method: &o.method,
            report: &o.report,
        })
        .collect();
    let mut json = serde_json::to_string_pretty(&entries).map_err(|e| CliError::Config(e.to_string()))?;
    json.push('\n');
    write_file(&cfg.output_dir.join("ablation.json"), &json)?;
    Ok(outputs)
}
