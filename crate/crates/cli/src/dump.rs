//! Results files and per-image SVG overlays.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use phrasedet_core::eval::{detections_to_json, ImageInfo};
use phrasedet_core::EvalDetection;

use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::pipeline::RunOutput;

/// Highest-ranked detections drawn per overlay.
pub const OVERLAY_LIMIT: usize = 20;

/// COCO results JSON (compact, one trailing newline).
pub fn results_json(results: &[EvalDetection]) -> Result<String> {
    let mut text = detections_to_json(results)?;
    text.push('\n');
    Ok(text)
}

/// Writes `detections.json` and, if asked, `overlays/<image_id>.svg`.
pub fn dump_detections(out: &RunOutput, data: &Dataset, dir: &Path, overlays: bool) -> Result<()> {
    let path = dir.join("detections.json");
    fs::write(&path, results_json(&out.results)?).map_err(|e| CliError::io(&path, e))?;
    if !overlays {
        return Ok(());
    }
    let odir = dir.join("overlays");
    fs::create_dir_all(&odir).map_err(|e| CliError::io(&odir, e))?;
    for image in data.images() {
        let dets: Vec<&EvalDetection> = out
            .results
            .iter()
            .filter(|d| d.image_id == image.id)
            .take(OVERLAY_LIMIT)
            .collect();
        let svg = overlay_svg(image, data, &dets);
        let p = odir.join(format!("{}.svg", image.id));
        fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Ground truth dashed green, detections red with `class score` labels.
pub fn overlay_svg(image: &ImageInfo, data: &Dataset, dets: &[&EvalDetection]) -> String {
    let (w, h) = (image.width, image.height);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    if data.images_dir.is_some() {
        let _ = writeln!(
            s,
            r#"<image xlink:href="{}" x="0" y="0" width="{w}" height="{h}"/>"#,
            escape(&data.image_ref(&image.file_name))
        );
    } else {
        let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#202020"/>"##);
    }
    for gt in data.ground_truth.annotations().iter().filter(|a| a.image_id == image.id) {
        let [x, y, bw, bh] = gt.bbox;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{bw}" height="{bh}" fill="none" stroke="lime" stroke-dasharray="4 2"/>"#
        );
    }
    let catalog = data.catalog();
    for d in dets {
        let [x, y, bw, bh] = d.bbox;
        let name = catalog.name(d.category_id).unwrap_or("?");
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{bw}" height="{bh}" fill="none" stroke="red"/><text x="{x}" y="{}" fill="red" font-size="10">{} {:.2}</text>"#,
            (y - 2.0).max(10.0),
            escape(name),
            d.score
        );
    }
    s.push_str("</svg>\n");
    s
}
