//! Synthetic scene generation plus recorded replay bundles for every phrase
//! mode.

use std::fs;
use std::path::{Path, PathBuf};

use phrasedet_backends::{generate_scene, BundleWriter, MockBackend, Recorder, SceneSpec, SyntheticScene};
use phrasedet_core::PhraseMode;
use serde::Serialize;

use crate::config::{BackendSpec, RunConfig};
use crate::dataset::load_dataset;
use crate::error::{CliError, Result};
use crate::pipeline::execute;

pub const SCENE_FILE: &str = "scene.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const SUPPORT_FILE: &str = "support.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const BUNDLE_DIR: &str = "bundle";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes scene, annotations, support set and a ready-to-run `config.toml`
/// into `dir`. Returns the config path.
pub fn write_scene_files(scene: &SyntheticScene, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join(SCENE_FILE), scene)?;
    write_json(&dir.join(ANNOTATIONS_FILE), &scene.ground_truth())?;
    write_json(&dir.join(SUPPORT_FILE), &scene.support)?;
    // relative paths; resolved against the config's directory on load
    let cfg = RunConfig {
        annotations: ANNOTATIONS_FILE.into(),
        support: SUPPORT_FILE.into(),
        backend: BackendSpec::Mock(Some(SCENE_FILE.into())),
        ..RunConfig::default()
    };
    let text = toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Runs the mock through a recorder once per phrase mode, calibration on,
/// and writes `bundle/<mode>/`.
pub fn record_bundles(scene: &SyntheticScene, dir: &Path, base: &RunConfig) -> Result<()> {
    let mock = MockBackend::new(scene.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    for mode in PhraseMode::ALL {
        let cfg = RunConfig {
            annotations: dir.join(ANNOTATIONS_FILE),
            support: dir.join(SUPPORT_FILE),
            backend: BackendSpec::Mock(Some(dir.join(SCENE_FILE))),
            phrase_mode: mode,
            calibration: true,
            ..base.clone()
        };
        let data = load_dataset(&cfg)?;
        let recorder = Recorder::new(&mock, BundleWriter::new(scene.dataset_id.clone(), None));
        execute(&cfg, &data, &recorder)?;
        let out = dir.join(BUNDLE_DIR).join(mode.as_str());
        recorder
            .into_writer()
            .write(&out)
            .map_err(|e| CliError::backend("record", out.display().to_string(), e))?;
    }
    Ok(())
}

/// Full `mock-scene` verb: scene files plus bundles.
pub fn mock_scene(spec: &SceneSpec, dir: &Path) -> Result<PathBuf> {
    let scene = generate_scene(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = write_scene_files(&scene, dir)?;
    record_bundles(&scene, dir, &RunConfig::default())?;
    Ok(cfg)
}
