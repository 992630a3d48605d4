use std::fs;
use std::path::Path;

use phrasedet_backends::wire::{to_canonical, AlignRequest, CaptionRequest, DetectorRequest, SCHEMA_VERSION};
use phrasedet_backends::{
    generate_scene, response_to_tensor, validate_bundle, AlignerBackend, BackendError, BundleWriter, Captioner,
    Detector, MockBackend, Recorder, ReplayBackend, SceneSpec,
};
use phrasedet_core::{build_prompt_set, ClassCatalog, ClassPhrases, PhraseLibrary, PromptSet};

fn setup() -> (MockBackend, PromptSet) {
    let scene = generate_scene(&SceneSpec {
        num_images: 8,
        scoring: phrasedet_backends::mock::ScoringModel {
            sigma: 0.2,
            ..Default::default()
        },
        ..SceneSpec::default()
    })
    .unwrap();
    let lib = PhraseLibrary::new(
        scene
            .classes
            .iter()
            .map(|c| ClassPhrases::new(c.class_id, c.class_name.clone(), c.description.clone(), c.attributes.clone()).unwrap())
            .collect(),
    )
    .unwrap();
    let cat = ClassCatalog::new(scene.classes.iter().map(|c| (c.class_id, c.class_name.clone()))).unwrap();
    let prompts = build_prompt_set(&lib, &cat).unwrap();
    (MockBackend::new(scene).unwrap(), prompts)
}

fn request(mock: &MockBackend, prompts: &PromptSet, image_id: u64) -> DetectorRequest {
    let img = mock.scene().image(image_id).unwrap();
    DetectorRequest::new(image_id, img.file_name.clone(), img.width, img.height, prompts).unwrap()
}

fn caption_request(mock: &MockBackend, class_id: u32) -> CaptionRequest {
    let c = mock.scene().class(class_id).unwrap();
    CaptionRequest {
        schema_version: SCHEMA_VERSION,
        class_id,
        class_name: c.class_name.clone(),
        domain: "steel surface".into(),
        image_ref: format!("support/{}.png", class_id),
        bbox: [0.0, 0.0, 50.0, 50.0],
        instruction: "describe".into(),
    }
}

fn record_bundle(dir: &Path) -> (MockBackend, PromptSet) {
    let (mock, prompts) = setup();
    let rec = Recorder::new(&mock, BundleWriter::new("synthetic", None));
    for id in 1..=8 {
        rec.detect(&request(&mock, &prompts, id)).unwrap();
    }
    for c in 1..=4 {
        rec.caption(&caption_request(&mock, c)).unwrap();
    }
    let img = mock.scene().image(7).unwrap();
    let obj = &img.objects[0];
    rec.align(&AlignRequest {
        schema_version: SCHEMA_VERSION,
        image_id: 7,
        image_ref: img.file_name.clone(),
        det_index: 0,
        class_id: obj.class_id,
        bbox: obj.bbox,
        description: "d".into(),
    })
    .unwrap();
    rec.into_writer().write(dir).unwrap();
    (mock, prompts)
}

#[test]
fn replay_returns_recorded_responses_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bundle");
    let (mock, prompts) = record_bundle(&dir);
    let replay = ReplayBackend::open(&dir).unwrap();
    for id in 1..=8 {
        let req = request(&mock, &prompts, id);
        let a = mock.detect(&req).unwrap();
        let b = replay.detect(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(response_to_tensor(&req, &a).unwrap(), response_to_tensor(&req, &b).unwrap());
    }
    assert_eq!(
        replay.caption(&caption_request(&mock, 2)).unwrap(),
        mock.caption(&caption_request(&mock, 2)).unwrap()
    );
}

#[test]
fn replay_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bundle");
    let (mock, prompts) = record_bundle(&dir);
    let replay = ReplayBackend::open(&dir).unwrap();

    let mut req = request(&mock, &prompts, 3);
    req.image_id = 99;
    match replay.detect(&req) {
        Err(BackendError::NotFound { key }) => assert_eq!(key, "detect/99.json"),
        other => panic!("{:?}", other),
    }

    let other_lib = PhraseLibrary::new(
        mock.scene()
            .classes
            .iter()
            .map(|c| ClassPhrases::new(c.class_id, c.class_name.clone(), "x", vec![c.class_name.clone()]).unwrap())
            .collect(),
    )
    .unwrap();
    let cat = ClassCatalog::new(mock.scene().classes.iter().map(|c| (c.class_id, c.class_name.clone()))).unwrap();
    let stale = request(&mock, &build_prompt_set(&other_lib, &cat).unwrap(), 3);
    assert!(matches!(replay.detect(&stale), Err(BackendError::Stale { .. })));

    let missing = AlignRequest {
        schema_version: SCHEMA_VERSION,
        image_id: 7,
        image_ref: "x".into(),
        det_index: 5,
        class_id: 1,
        bbox: [0.0, 0.0, 1.0, 1.0],
        description: "d".into(),
    };
    assert!(matches!(replay.align(&missing), Err(BackendError::NotFound { key }) if key == "align/7_5.json"));
}

#[test]
fn bundle_files_are_canonical_and_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bundle");
    record_bundle(&dir);
    let report = validate_bundle(&dir).unwrap();
    assert!(report.is_valid(), "{:?}", report.issues);
    assert_eq!((report.detect, report.caption, report.align), (8, 4, 1));

    // parse and re-serialize every record: bytes must not change
    let replay = ReplayBackend::open(&dir).unwrap();
    for sub in ["detect", "caption", "align"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            let text = fs::read_to_string(&path).unwrap();
            let value: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(phrasedet_backends::wire::canonical_value(&value).unwrap(), text);
        }
    }
    assert_eq!(to_canonical(replay.manifest()).unwrap(), fs::read_to_string(dir.join("manifest.json")).unwrap());
}

#[test]
fn validator_flags_broken_records() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bundle");
    record_bundle(&dir);

    let cap = dir.join("caption/1.json");
    let text = fs::read_to_string(&cap).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["description"] = "a thing with no class word".into();
    fs::write(&cap, phrasedet_backends::wire::canonical_value(&v).unwrap()).unwrap();

    let det = dir.join("detect/2.json");
    let pretty = serde_json::to_string_pretty(&serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&det).unwrap()).unwrap()).unwrap();
    fs::write(&det, pretty).unwrap();

    fs::copy(dir.join("detect/3.json"), dir.join("detect/4.json")).unwrap();
    fs::write(dir.join("notes.txt"), "x").unwrap();

    let report = validate_bundle(&dir).unwrap();
    let keys: Vec<&str> = report.issues.iter().map(|i| i.key.as_str()).collect();
    assert!(keys.contains(&"caption/1.json"));
    assert!(keys.contains(&"detect/2.json"));
    assert!(keys.contains(&"detect/4.json"));
    assert!(keys.contains(&"notes.txt"));
    assert_eq!(report.issues.len(), 4, "{:?}", report.issues);
    assert!(ReplayBackend::open(&dir).is_err());
}

#[test]
fn writer_refuses_to_clobber_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("keep.txt"), "precious").unwrap();
    let err = BundleWriter::new("x", None).write(&dir).unwrap_err();
    assert!(matches!(err, BackendError::Io { .. }));
    assert_eq!(fs::read_to_string(dir.join("keep.txt")).unwrap(), "precious");
    // an existing bundle is replaced
    let b = tmp.path().join("b");
    BundleWriter::new("x", None).write(&b).unwrap();
    BundleWriter::new("y", None).write(&b).unwrap();
    assert!(fs::read_to_string(b.join("manifest.json")).unwrap().contains("\"y\""));
}
