//! Command-line surface. `main.rs` only forwards to [`main_with`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use phrasedet_backends::bundle::MANIFEST;
use phrasedet_backends::{validate_bundle, SceneSpec};
use phrasedet_core::eval::{detections_from_json, method_table, RunProvenance, TableRow};
use phrasedet_core::{evaluate, PhraseMode};

use crate::config::{parse_failure_mode, RunConfig, ENV_BACKEND, ENV_HTTP_URL};
use crate::dataset::load_ground_truth;
use crate::error::{CliError, Result};
use crate::mockgen::mock_scene;
use crate::runner::{ablation_table, report_json, run_ablation_suite, run_pipeline, TRAINING_FREE};

#[derive(Debug, Parser)]
#[command(name = "phrasedet", version, about = "Training-free few-shot detection by phrase prompting")]
pub struct Cli {
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration end to end.
    Run(RunArgs),
    /// Run the four-configuration ablation suite.
    Ablate(RunArgs),
    /// Evaluate an existing results file.
    Eval(EvalArgs),
    /// Generate a synthetic scene and replay bundles.
    MockScene(MockSceneArgs),
    /// Check replay bundles against the v1 wire schema.
    Validate(ValidateArgs),
}

/// Flags mirror `RunConfig` fields and override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub support: Option<PathBuf>,
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// mock | mock:<scene.json> | replay:<dir> | http:<url>
    #[arg(long, env = ENV_BACKEND)]
    pub backend: Option<String>,
    /// Replaces the URL of an http backend.
    #[arg(long, env = ENV_HTTP_URL)]
    pub http_url: Option<String>,
    /// class-name | support-text | full-sentence
    #[arg(long)]
    pub phrase_mode: Option<PhraseMode>,
    #[arg(long)]
    pub calibration: Option<bool>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub small_area_threshold: Option<f64>,
    #[arg(long)]
    pub crop_padding: Option<f64>,
    #[arg(long)]
    pub resort_after_calibration: Option<bool>,
    /// Enables class-wise NMS at this IoU.
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// strict | lenient
    #[arg(long)]
    pub failure_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub overlays: bool,
}

impl RunArgs {
    /// File (if any), then environment-backed flags, then explicit flags.
    pub fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env(self.backend.as_deref(), self.http_url.as_deref())?;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(
            annotations,
            support,
            phrase_mode,
            calibration,
            top_k,
            lambda,
            small_area_threshold,
            crop_padding,
            resort_after_calibration,
            output_dir,
            workers
        );
        if self.images_dir.is_some() {
            cfg.images_dir = self.images_dir;
        }
        if self.nms_iou.is_some() {
            cfg.nms_iou = self.nms_iou;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.method.is_some() {
            cfg.method = self.method;
        }
        if let Some(m) = self.failure_mode {
            cfg.failure_mode = parse_failure_mode(&m)?;
        }
        cfg.overlays |= self.overlays;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// COCO instance annotations.
    #[arg(long)]
    pub annotations: PathBuf,
    /// COCO results file.
    #[arg(long)]
    pub detections: PathBuf,
    /// Writes `report.json` and `report.txt` here.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub method: String,
}

#[derive(Debug, Clone, Args)]
pub struct MockSceneArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON or TOML scene spec; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    /// Phrase score noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub small_fraction: Option<f64>,
}

impl MockSceneArgs {
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let mut spec = match &self.spec {
            None => SceneSpec::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {}", p.display(), e)))?;
                let parsed = if p.extension().is_some_and(|e| e == "toml") {
                    toml::from_str(&text).map_err(|e| e.to_string())
                } else {
                    serde_json::from_str(&text).map_err(|e| e.to_string())
                };
                parsed.map_err(|e| CliError::Config(format!("{}: {}", p.display(), e)))?
            }
        };
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.images {
            spec.num_images = v;
        }
        if let Some(v) = self.classes {
            spec.num_classes = v;
        }
        if let Some(v) = self.distractors {
            spec.distractors_per_image = v;
        }
        if let Some(v) = self.sigma {
            spec.scoring.sigma = v;
        }
        if let Some(v) = self.small_fraction {
            spec.small_fraction = v;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// A bundle, or a directory of per-mode bundles.
    pub dir: PathBuf,
}

fn eval_command(args: EvalArgs) -> Result<String> {
    let gt = load_ground_truth(&args.annotations)?;
    let text = std::fs::read_to_string(&args.detections)
        .map_err(|e| CliError::Config(format!("{}: {}", args.detections.display(), e)))?;
    let dets = detections_from_json(&text).map_err(|e| CliError::Config(format!("{}: {}", args.detections.display(), e)))?;
    let mut report = evaluate(&dets, &gt).map_err(|e| CliError::Config(e.to_string()))?;
    report.provenance = Some(RunProvenance {
        method: args.method.clone(),
        phrase_mode: String::new(),
        calibration: false,
        lambda: 0.0,
        top_k: 0,
        config_fingerprint: String::new(),
    });
    let table = method_table(&[TableRow {
        method: args.method.clone(),
        training: TRAINING_FREE.into(),
        report: &report,
    }]);
    if let Some(dir) = &args.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let p = dir.join("report.json");
        std::fs::write(&p, report_json(&report)?).map_err(|e| CliError::io(&p, e))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, &table).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(table)
}

/// Bundle directories under `dir`: itself if it has a manifest, else every
/// child that does.
pub fn bundle_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.join(MANIFEST).is_file() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no bundle found", dir.display())));
    }
    Ok(out)
}

/// Returns the summary text and whether every bundle is valid.
fn validate_command(args: ValidateArgs) -> Result<(String, bool)> {
    let mut text = String::new();
    let mut ok = true;
    for dir in bundle_dirs(&args.dir)? {
        let r = validate_bundle(&dir).map_err(|e| CliError::backend("validate", dir.display().to_string(), e))?;
        text.push_str(&format!(
            "{}: {} detect, {} caption, {} align, {} issues\n",
            dir.display(),
            r.detect,
            r.caption,
            r.align,
            r.issues.len()
        ));
        for i in &r.issues {
            text.push_str(&format!("  {}: {}\n", i.key, i.reason));
        }
        ok &= r.is_valid();
    }
    Ok((text, ok))
}

/// Runs a parsed command; returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => args.into_config().and_then(|cfg| {
            let out = run_pipeline(&cfg)?;
            print!("{}", method_table(&[TableRow {
                method: out.method.clone(),
                training: TRAINING_FREE.into(),
                report: &out.report,
            }]));
            Ok(0)
        }),
        Command::Ablate(args) => args.into_config().and_then(|cfg| {
            let outs = run_ablation_suite(&cfg)?;
            print!("{}", ablation_table(&outs));
            Ok(0)
        }),
        Command::Eval(args) => eval_command(args).map(|t| {
            print!("{}", t);
            0
        }),
        Command::MockScene(args) => args.scene_spec().and_then(|spec| {
            let cfg = mock_scene(&spec, &args.out)?;
            println!("wrote {}", cfg.display());
            Ok(0)
        }),
        Command::Validate(args) => validate_command(args).map(|(t, ok)| {
            print!("{}", t);
            if ok {
                0
            } else {
                1
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first), initialises logging and runs.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    dispatch(cli)
}
