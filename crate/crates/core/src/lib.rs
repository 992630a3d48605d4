//! Training-free few-shot detection by phrase prompting.
//!
//! A support example per class is captioned into a short description, the
//! description is segmented into attribute phrases, and an open-vocabulary
//! detector is queried with every phrase. Phrase scores are averaged into a
//! class score, the global top-K box/class pairs are kept, and small boxes can
//! be re-scored with a region/text alignment score. Results are scored with
//! the COCO protocol.
//!
//! The data path is generic over [`Scalar`] (`f32` or `f64`); evaluation is
//! always `f64`.

pub mod assign;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod prompt;
pub mod scalar;

pub use assign::{
    assign_categories, calibrate, class_wise_nms, poe_energy_check, select_top_k, AlignFailure, AlignQuery,
    Aligner, CalibrationStats, CategoryScoreMatrix, FailureMode, ImageContext, PoeCheck, SelectionConfig,
};
pub use error::{CoreError, Result};
pub use eval::{average_precision, evaluate, match_detections, EvalDetection, EvalReport, GroundTruthSet, MatchLabel};
pub use geometry::{box_area, iou, BoundingBox};
pub use model::{
    ClassCatalog, ClassEntry, ClassPhrases, Detection, PhraseLibrary, ScoreTensor, SupportSet, SupportTriple,
    SCORE_SLACK,
};
pub use prompt::{
    build_prompt_set, extract_phrases, render_instruction, InstructionTemplate, PhraseMode, PhraseRules, PromptEntry,
    PromptSet,
};
pub use scalar::Scalar;

pub type BoundingBox64 = BoundingBox<f64>;
pub type BoundingBox32 = BoundingBox<f32>;
pub type ScoreTensor64 = ScoreTensor<f64>;
pub type ScoreTensor32 = ScoreTensor<f32>;
pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
pub type CategoryScoreMatrix64 = CategoryScoreMatrix<f64>;
pub type CategoryScoreMatrix32 = CategoryScoreMatrix<f32>;
pub type SelectionConfig64 = SelectionConfig<f64>;
pub type SelectionConfig32 = SelectionConfig<f32>;
