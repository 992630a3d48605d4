//! Model backends behind the detection engine.
//!
//! Four contracts (detector, captioner, aligner, masker) with three
//! interchangeable implementations: a deterministic [`mock::MockBackend`]
//! over a synthetic scene, a [`replay::ReplayBackend`] over a stored bundle,
//! and an [`http::HttpBackend`] client. All exchange v1 wire records
//! ([`wire`]).

pub mod bundle;
pub mod contract;
pub mod error;
pub mod http;
pub mod mock;
pub mod replay;
pub mod scene;
pub mod wire;

pub use bundle::{resolve_bundle_dir, validate_bundle, BundleIssue, BundleReport, BundleWriter, Recorder};
pub use contract::{response_to_tensor, AlignerBackend, BackendAligner, Captioner, Detector, Masker};
pub use error::{BackendError, Result};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, SyntheticScene};
pub use replay::ReplayBackend;
pub use scene::{generate_scene, SceneSpec};

/// Everything the engine needs from one backend.
pub trait ModelBackend: Detector + Captioner + AlignerBackend {}

impl<T: Detector + Captioner + AlignerBackend> ModelBackend for T {}
