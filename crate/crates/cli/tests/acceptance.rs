//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the test harness so the lines always show.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use phrasedet_backends::{generate_scene, mock::ScoringModel, SceneSpec};
use phrasedet_cli::mockgen::write_scene_files;
use phrasedet_cli::{execute, run_pipeline, RunConfig};
use phrasedet_core::eval::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, CocoResult};
use phrasedet_core::{
    assign_categories, average_precision, calibrate, evaluate, poe_energy_check, select_top_k, AlignQuery,
    BoundingBox, ClassPhrases, EvalDetection, ImageContext, MatchLabel, PhraseLibrary, PhraseMode, ScoreTensor,
    SelectionConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- evaluator

#[derive(Deserialize)]
struct OracleInstance {
    seed: u64,
    ground_truth: CocoDataset,
    detections: Vec<CocoResult>,
    stats: Vec<f64>,
}

#[derive(Deserialize)]
struct OracleFixture {
    instances: Vec<OracleInstance>,
}

/// mAP, AP50, AP_small, AR@1, AR@10, AR@100 against the reference values
/// frozen in the core crate's fixture.
fn coco_oracle() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/coco_oracle.json");
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let fixture: OracleFixture = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    check(fixture.instances.len() >= 50, || format!("only {} instances", fixture.instances.len()))?;
    let names = ["mAP", "AP50", "AP_small", "AR@1", "AR@10", "AR@100"];
    let idx = [0, 1, 3, 6, 7, 8];
    let mut worst = 0.0f64;
    for inst in &fixture.instances {
        let gts = inst.ground_truth.clone().into_ground_truth().map_err(|e| e.to_string())?;
        let dets: Vec<EvalDetection> = inst
            .detections
            .iter()
            .map(|r| EvalDetection {
                image_id: r.image_id,
                category_id: r.category_id,
                bbox: r.bbox,
                score: r.score,
            })
            .collect();
        let stats = evaluate(&dets, &gts).map_err(|e| e.to_string())?.stats();
        for (name, &k) in names.iter().zip(&idx) {
            let d = (stats[k] - inst.stats[k]).abs();
            worst = worst.max(d);
            check(d <= 1e-6, || {
                format!("seed {} {}: got {} want {}", inst.seed, name, stats[k], inst.stats[k])
            })?;
        }
    }
    Ok(format!("{} instances, max deviation {:.1e}", fixture.instances.len(), worst))
}

/// Labels [TP, FP, TP] with two ground truths, both directly and through the
/// full evaluator on the matching geometry.
fn ap_hand_case() -> Outcome {
    use MatchLabel::{FalsePositive as F, TruePositive as T};
    let hand = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    let direct = average_precision(&[T, F, T], 2, 101);
    check((direct - 0.8350).abs() <= 1e-4, || format!("AP {} not within 1e-4 of 0.8350", direct))?;
    check((direct - hand).abs() <= 1e-12, || format!("AP {} differs from hand value {}", direct, hand))?;

    let gt = CocoDataset {
        images: vec![CocoImage {
            id: 1,
            file_name: "a.png".into(),
            width: 200.0,
            height: 200.0,
        }],
        annotations: vec![
            CocoAnnotation {
                id: 1,
                image_id: 1,
                category_id: 1,
                bbox: [0.0, 0.0, 50.0, 50.0],
                area: None,
                iscrowd: 0,
            },
            CocoAnnotation {
                id: 2,
                image_id: 1,
                category_id: 1,
                bbox: [100.0, 100.0, 50.0, 50.0],
                area: None,
                iscrowd: 0,
            },
        ],
        categories: vec![CocoCategory {
            id: 1,
            name: "crack".into(),
        }],
    }
    .into_ground_truth()
    .map_err(|e| e.to_string())?;
    let det = |bbox, score| EvalDetection {
        image_id: 1,
        category_id: 1,
        bbox,
        score,
    };
    let dets = [
        det([0.0, 0.0, 50.0, 50.0], 0.9),
        det([60.0, 0.0, 30.0, 30.0], 0.8),
        det([100.0, 100.0, 50.0, 50.0], 0.7),
    ];
    let report = evaluate(&dets, &gt).map_err(|e| e.to_string())?;
    check((report.ap50 - hand).abs() <= 1e-12, || format!("evaluator AP50 {} vs {}", report.ap50, hand))?;
    Ok(format!("AP = {:.6}", direct))
}

// ------------------------------------------------------ assignment/calibration

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox<f64> {
    let x = rng.random_range(0.0..300.0);
    let y = rng.random_range(0.0..300.0);
    // mixes boxes on both sides of the 32² gate
    let w = rng.random_range(2.0..90.0);
    let h = rng.random_range(2.0..90.0);
    BoundingBox::new(x, y, x + w, y + h).unwrap()
}

fn library(classes: usize) -> PhraseLibrary {
    PhraseLibrary::new(
        (1..=classes as u32)
            .map(|c| ClassPhrases::new(c, format!("c{}", c), format!("c{} desc", c), vec![format!("p{}", c)]).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Mean pooling permutation invariance, |S - O| <= lambda, untouched large
/// boxes and the lambda = 0 identity on 1000 random cases.
fn assignment_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let ctx = ImageContext {
        image_id: 1,
        image_ref: "img",
        width: 400.0,
        height: 400.0,
    };
    let cases = 1000;
    for case in 0..cases {
        let n = rng.random_range(0..15usize);
        let counts: Vec<usize> = (0..rng.random_range(1..5usize)).map(|_| rng.random_range(1..6)).collect();
        let boxes: Vec<BoundingBox<f64>> = (0..n).map(|_| random_box(&mut rng)).collect();
        let rows: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| counts.iter().map(|&m| (0..m).map(|_| rng.random::<f64>()).collect()).collect())
            .collect();
        let tensor = ScoreTensor::from_nested(1, boxes.clone(), &rows, &counts).map_err(|e| e.to_string())?;
        let o = assign_categories(&tensor).map_err(|e| e.to_string())?;

        let shuffled: Vec<Vec<Vec<f64>>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|p| {
                        let mut p = p.clone();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            })
            .collect();
        let o2 = assign_categories(&ScoreTensor::from_nested(1, boxes.clone(), &shuffled, &counts).unwrap()).unwrap();
        for i in 0..n {
            for c in 0..counts.len() {
                check(o.get(i, c).to_bits() == o2.get(i, c).to_bits(), || {
                    format!("case {}: pooling not permutation invariant at ({}, {})", case, i, c)
                })?;
            }
        }

        let lambda = rng.random_range(0.0..0.2);
        let cfg = SelectionConfig {
            top_k: rng.random_range(1..40),
            lambda,
            ..SelectionConfig::default()
        };
        let raw = select_top_k(&o, tensor.boxes(), &cfg).map_err(|e| e.to_string())?;
        let lib = library(counts.len());
        let align_scores: Vec<f64> = (0..raw.len()).map(|_| rng.random()).collect();
        let aligner = |q: &AlignQuery<'_, f64>| Ok(align_scores[q.det_index]);
        let (cal, _) = calibrate(raw.clone(), &ctx, &lib, &aligner, &cfg).map_err(|e| e.to_string())?;
        check(cal.len() == raw.len(), || format!("case {}: calibration changed the count", case))?;
        for d in &cal {
            let orig = raw
                .iter()
                .find(|r| r.box_index == d.box_index && r.class_id == d.class_id)
                .ok_or(format!("case {}: detection invented by calibration", case))?;
            check((d.calibrated_score - d.raw_score).abs() <= lambda + 1e-12, || {
                format!("case {}: |S - O| = {} > lambda {}", case, (d.calibrated_score - d.raw_score).abs(), lambda)
            })?;
            if d.bbox.area() >= cfg.small_area_threshold {
                check(d == orig && d.calibrated_score.to_bits() == orig.raw_score.to_bits(), || {
                    format!("case {}: large box {} modified", case, d.box_index)
                })?;
            }
        }

        let zero = SelectionConfig { lambda: 0.0, ..cfg };
        let (same, _) = calibrate(raw.clone(), &ctx, &lib, &aligner, &zero).map_err(|e| e.to_string())?;
        for (a, b) in same.iter().zip(&raw) {
            check(a.calibrated_score.to_bits() == b.raw_score.to_bits() && a.box_index == b.box_index, || {
                format!("case {}: lambda = 0 is not the identity", case)
            })?;
        }
    }
    Ok(format!("{} cases", cases))
}

/// Global top-K against a full brute-force sort, scores on a coarse grid so
/// ties are frequent.
fn top_k_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ties = 0usize;
    let cases = 500;
    for case in 0..cases {
        let n = rng.random_range(0..=20usize);
        let c = rng.random_range(1..=20usize);
        let boxes: Vec<BoundingBox<f64>> = (0..n).map(|_| random_box(&mut rng)).collect();
        let rows: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..c).map(|_| vec![rng.random_range(0..=8u32) as f64 / 8.0]).collect())
            .collect();
        let tensor = ScoreTensor::from_nested(1, boxes, &rows, &vec![1; c]).unwrap();
        let o = assign_categories(&tensor).unwrap();
        let k = rng.random_range(1..=n * c + 2);
        let cfg = SelectionConfig {
            top_k: k,
            ..SelectionConfig::default()
        };
        let got: Vec<(usize, u32)> = select_top_k(&o, tensor.boxes(), &cfg)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|d| (d.box_index, d.class_id))
            .collect();
        let mut all: Vec<(f64, usize, usize)> = (0..n).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| (o.get(i, j), i, j)).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        if all.len() > k && k > 0 && all[k - 1].0 == all[k].0 {
            ties += 1;
        }
        let want: Vec<(usize, u32)> = all.iter().take(k).map(|&(_, i, j)| (i, j as u32 + 1)).collect();
        check(got == want, || format!("case {} (n={}, c={}, k={}): {:?} vs {:?}", case, n, c, k, got, want))?;
    }
    Ok(format!("{} cases, {} with a tie at the cut", cases, ties))
}

// ---------------------------------------------------------------- end to end

fn scene_config(dir: &Path, spec: &SceneSpec) -> Result<RunConfig, String> {
    let scene = generate_scene(spec).map_err(|e| e.to_string())?;
    let path = write_scene_files(&scene, dir).map_err(|e| e.to_string())?;
    RunConfig::from_file(&path).map_err(|e| e.to_string())
}

/// Noise-free scene with one object per class scores a perfect 1.0.
fn mock_perfect() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = scene_config(tmp.path(), &SceneSpec::default())?;
    let out = run_pipeline(&RunConfig {
        output_dir: tmp.path().join("out"),
        ..cfg
    })
    .map_err(|e| e.to_string())?;
    check(out.report.map == 1.0, || format!("mAP {}", out.report.map))?;
    Ok(format!("mAP = {}", out.report.map))
}

/// Shared noisy scene: 20 images, 24 distractors each, sigma 0.3.
fn noisy_spec() -> SceneSpec {
    SceneSpec {
        seed: 7,
        num_images: 20,
        distractors_per_image: 24,
        scoring: ScoringModel {
            sigma: 0.3,
            ..ScoringModel::default()
        },
        ..SceneSpec::default()
    }
}

/// Support-text phrases recall more within 10 detections than bare class
/// names on the noisy scene.
fn mock_phrase_recall() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = scene_config(tmp.path(), &noisy_spec())?;
    let data = phrasedet_cli::load_dataset(&cfg).map_err(|e| e.to_string())?;
    let backend = phrasedet_cli::open_backend(&cfg).map_err(|e| e.to_string())?;
    let run = |mode| {
        let c = RunConfig {
            phrase_mode: mode,
            calibration: false,
            ..cfg.clone()
        };
        execute(&c, &data, backend.as_ref()).map(|o| o.report.ar10)
    };
    let phrases = run(PhraseMode::SupportText).map_err(|e| e.to_string())?;
    let names = run(PhraseMode::ClassName).map_err(|e| e.to_string())?;
    check(phrases > names, || format!("AR@10 support-text {} <= class-name {}", phrases, names))?;
    Ok(format!("AR@10 support-text {:.4} > class-name {:.4}", phrases, names))
}

/// One small FP outranks one small TP before calibration; oracle alignment
/// inverts them. Hand values: off = (91 + 10 * 10/11) / 101, on = 1.
fn calibration_directional() -> Outcome {
    let (backend, data) = common::small_box_scene(10, |id| if id == 1 { (0.50, 0.51) } else { (0.9, 0.1) });
    let run = |calibration| {
        let cfg = RunConfig {
            calibration,
            workers: 2,
            ..RunConfig::default()
        };
        execute(&cfg, &data, &backend).map(|o| o.report.ap_small)
    };
    let off = run(false).map_err(|e| e.to_string())?;
    let on = run(true).map_err(|e| e.to_string())?;
    let want_off = (91.0 + 10.0 * 10.0 / 11.0) / 101.0;
    check((off - want_off).abs() <= 1e-9, || format!("AP_small off {} vs hand {}", off, want_off))?;
    check((on - 1.0).abs() <= 1e-9, || format!("AP_small on {} vs hand 1", on))?;
    check(on > off, || format!("AP_small on {} not above off {}", on, off))?;
    Ok(format!("AP_small {:.6} -> {:.6}", off, on))
}

/// Two CLI runs with the same config (different worker counts and output
/// directories) write byte-identical detections and reports.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    scene_config(tmp.path(), &noisy_spec())?;
    let config = tmp.path().join("config.toml");
    let run = |out: &str, workers: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let dir = tmp.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_phrasedet"))
            .args(["run", "--config"])
            .arg(&config)
            .args(["--workers", workers, "--output-dir"])
            .arg(&dir)
            .env_remove("PHRASEDET_BACKEND")
            .env_remove("PHRASEDET_HTTP_URL")
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let read = |f: &str| std::fs::read(dir.join(f)).map_err(|e| e.to_string());
        Ok((read("detections.json")?, read("report.json")?))
    };
    let a = run("a", "1")?;
    let b = run("b", "4")?;
    check(a.0 == b.0, || "detections.json differs".into())?;
    check(a.1 == b.1, || "report.json differs".into())?;
    Ok(format!("{} + {} bytes identical", a.0.len(), a.1.len()))
}

/// Whenever one detection dominates another in both raw and alignment
/// score, linear fusion and the expert product order them the same way.
fn poe_monotone() -> Outcome {
    let grid: Vec<(f64, f64)> = (1..=10)
        .flat_map(|i| (1..=10).map(move |j| (i as f64 / 10.0, j as f64 / 10.0)))
        .collect();
    let mut pairs = 0usize;
    for &(ra, aa) in &grid {
        for &(rb, ab) in &grid {
            if !(ra >= rb && aa >= ab && (ra > rb || aa > ab)) {
                continue;
            }
            let x = poe_energy_check(ra, aa, 0.02).map_err(|e| e.to_string())?;
            let y = poe_energy_check(rb, ab, 0.02).map_err(|e| e.to_string())?;
            let lin = x.linear_fusion.partial_cmp(&y.linear_fusion);
            let prod = x.energy_product.partial_cmp(&y.energy_product);
            check(lin == prod && lin == Some(std::cmp::Ordering::Greater), || {
                format!("({}, {}) vs ({}, {}): {:?} vs {:?}", ra, aa, rb, ab, lin, prod)
            })?;
            pairs += 1;
        }
    }
    Ok(format!("{} grid points, {} dominated pairs", grid.len(), pairs))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("coco evaluator oracle equivalence", coco_oracle),
        ("AP hand case [TP, FP, TP], n_gt = 2", ap_hand_case),
        ("pooling/calibration suite, 1000 cases", assignment_suite),
        ("top-K brute-force equivalence with ties", top_k_oracle),
        ("mock end to end, sigma 0: mAP = 1", mock_perfect),
        ("mock end to end, sigma 0.3: phrase AR@10 > class-name", mock_phrase_recall),
        ("calibration raises AP_small on constructed set", calibration_directional),
        ("determinism of detections and report bytes", determinism),
        ("product-of-experts ordering agreement", poe_monotone),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {} ({}; {:.2}s)", name, detail, secs),
            Err(why) => {
                failed += 1;
                println!("FAIL  {} ({}; {:.2}s)", name, why, secs);
            }
        }
    }
    println!("acceptance: {} criteria, {} failed", criteria.len(), failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
