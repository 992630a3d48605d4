//! Projection, detection, assignment, calibration and evaluation for one
//! configuration.

use phrasedet_backends::contract::{caption_key, detect_key};
use phrasedet_backends::wire::{
    prompt_set_fingerprint, quantize, quantize_box, CaptionRequest, DetectorRequest, PIXEL_DECIMALS, SCHEMA_VERSION,
};
use phrasedet_backends::{response_to_tensor, BackendAligner, BackendError, Captioner, ModelBackend};
use phrasedet_core::eval::RunProvenance;
use phrasedet_core::prompt::library_entry;
use phrasedet_core::{
    assign_categories, build_prompt_set, calibrate, class_wise_nms, evaluate, select_top_k, CalibrationStats,
    CoreError, Detection, EvalDetection, EvalReport, FailureMode, ImageContext, PhraseLibrary, PhraseMode, PromptSet,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};

/// What happened to one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub image_id: u64,
    /// Ranked, calibrated detections.
    pub detections: Vec<Detection<f64>>,
    pub calibration: CalibrationStats,
    /// Set when a lenient run skipped the image.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub method: String,
    pub library: PhraseLibrary,
    pub prompts: PromptSet,
    pub images: Vec<ImageOutcome>,
    /// Evaluator input, also the content of the results file.
    pub results: Vec<EvalDetection>,
    pub report: EvalReport,
}

/// Whether support captions are needed: class-name prompts without
/// calibration never read a description.
pub fn needs_captions(cfg: &RunConfig) -> bool {
    cfg.phrase_mode != PhraseMode::ClassName || cfg.calibration
}

/// Captions every support exemplar and segments the descriptions according
/// to the phrase mode.
pub fn build_library(cfg: &RunConfig, data: &Dataset, captioner: &dyn Captioner) -> Result<PhraseLibrary> {
    let template = cfg.instruction_template()?;
    let mut entries = Vec::with_capacity(data.support.len());
    for t in data.support.iter() {
        let name = t.class_name.trim();
        let description = if needs_captions(cfg) {
            let req = CaptionRequest {
                schema_version: SCHEMA_VERSION,
                class_id: t.class_id,
                class_name: name.to_string(),
                domain: t.domain_tag.clone(),
                image_ref: data.image_ref(&t.image_ref),
                bbox: quantize_box(t.bbox.to_xyxy()),
                instruction: template.render(&t.domain_tag, name).map_err(|e| CliError::Config(e.to_string()))?,
            };
            let key = caption_key(t.class_id);
            let resp = captioner
                .caption(&req)
                .map_err(|e| CliError::backend("caption", key.clone(), e))?;
            if resp.class_id != req.class_id || resp.class_name != req.class_name {
                return Err(CliError::backend(
                    "caption",
                    key.clone(),
                    BackendError::Stale {
                        key,
                        expected: format!("{}:{}", req.class_id, req.class_name),
                        found: format!("{}:{}", resp.class_id, resp.class_name),
                    },
                ));
            }
            if !resp.description.to_lowercase().contains(&name.to_lowercase()) {
                log::warn!("caption for class {} does not mention {:?}", t.class_id, name);
            }
            resp.description
        } else {
            name.to_string()
        };
        entries.push(library_entry(t.class_id, name, &description, cfg.phrase_mode, &cfg.phrase_rules)?);
    }
    Ok(PhraseLibrary::new(entries)?)
}

/// Detection errors a lenient run may skip; anything else means the data
/// itself is inconsistent.
fn skippable(e: &BackendError) -> bool {
    matches!(
        e,
        BackendError::NotFound { .. } | BackendError::Unavailable { .. } | BackendError::Io { .. }
    )
}

fn process_image(
    cfg: &RunConfig,
    data: &Dataset,
    backend: &dyn ModelBackend,
    library: &PhraseLibrary,
    prompts: &PromptSet,
    image: &phrasedet_core::eval::ImageInfo,
) -> Result<ImageOutcome> {
    let sel = cfg.selection();
    let image_ref = data.image_ref(&image.file_name);
    let req = DetectorRequest::new(image.id, image_ref.clone(), image.width, image.height, prompts)
        .map_err(|e| CliError::backend("detect", detect_key(image.id), e))?;
    let tensor = match backend.detect(&req).and_then(|resp| response_to_tensor(&req, &resp)) {
        Ok(t) => t,
        Err(e) if cfg.failure_mode == FailureMode::Lenient && skippable(&e) => {
            log::warn!("image {}: detection skipped: {}", image.id, e);
            return Ok(ImageOutcome {
                image_id: image.id,
                detections: Vec::new(),
                calibration: CalibrationStats::default(),
                failure: Some(e.to_string()),
            });
        }
        Err(e) => return Err(CliError::backend("detect", detect_key(image.id), e)),
    };

    let scores = assign_categories(&tensor)?;
    let mut dets = select_top_k(&scores, tensor.boxes(), &sel)?;
    if let Some(thr) = sel.nms_iou {
        dets = class_wise_nms(dets, thr);
    }
    let ctx = ImageContext {
        image_id: image.id,
        image_ref: &image_ref,
        width: image.width,
        height: image.height,
    };
    let aligner = BackendAligner::new(backend);
    let (dets, calibration) = calibrate(dets, &ctx, library, &aligner, &sel).map_err(|e| match e {
        CoreError::Alignment(message) => CliError::Align {
            image_id: image.id,
            message,
        },
        other => CliError::Core(other),
    })?;
    for d in &dets {
        d.check(sel.lambda, phrasedet_core::SCORE_SLACK)?;
    }
    Ok(ImageOutcome {
        image_id: image.id,
        detections: dets,
        calibration,
        failure: None,
    })
}

/// Results-file rows; boxes in `xywh` at wire precision.
pub fn to_results(images: &[ImageOutcome]) -> Vec<EvalDetection> {
    images
        .iter()
        .flat_map(|o| {
            o.detections.iter().map(move |d| {
                let [x, y, w, h] = d.bbox.to_xywh();
                EvalDetection {
                    image_id: o.image_id,
                    category_id: d.class_id,
                    bbox: [x, y, w, h].map(|v| quantize(v, PIXEL_DECIMALS)),
                    score: d.calibrated_score,
                }
            })
        })
        .collect()
}

/// Runs one configuration against an already opened backend. Output is
/// ordered by image id and independent of `workers`.
pub fn execute(cfg: &RunConfig, data: &Dataset, backend: &dyn ModelBackend) -> Result<RunOutput> {
    cfg.validate()?;
    let library = build_library(cfg, data, backend)?;
    let prompts = build_prompt_set(&library, data.catalog())?;
    log::info!(
        "{}: {} prompts over {} classes, prompt set {}",
        cfg.method_label(),
        prompts.len(),
        prompts.num_classes(),
        prompt_set_fingerprint(&prompts).unwrap_or_default()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {}", e)))?;
    let outcomes: Vec<Result<ImageOutcome>> = pool.install(|| {
        data.images()
            .par_iter()
            .map(|img| process_image(cfg, data, backend, &library, &prompts, img))
            .collect()
    });
    // first failure in image order, so the diagnostic is deterministic too
    let images = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let results = to_results(&images);
    let mut report = evaluate(&results, &data.ground_truth)?;
    let method = cfg.method_label();
    report.provenance = Some(RunProvenance {
        method: method.clone(),
        phrase_mode: cfg.phrase_mode.to_string(),
        calibration: cfg.calibration,
        lambda: cfg.lambda,
        top_k: cfg.top_k,
        config_fingerprint: cfg.fingerprint()?,
    });
    let failed = images.iter().filter(|o| o.failure.is_some()).count();
    if failed > 0 {
        log::warn!("{} of {} images failed and count as empty", failed, images.len());
    }
    Ok(RunOutput {
        config: cfg.clone(),
        method,
        library,
        prompts,
        images,
        results,
        report,
    })
}
