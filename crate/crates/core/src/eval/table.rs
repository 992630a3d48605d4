use std::fmt::Write;

use super::EvalReport;

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow<'a> {
    pub method: String,
    /// Shown in the training column, e.g. "×" for training-free.
    pub training: String,
    pub report: &'a EvalReport,
}

fn pct(v: f64) -> String {
    if v < 0.0 {
        "n/a".to_string()
    } else {
        format!("{:.1}", v * 100.0)
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let mut first = true;
        for (cell, w) in cells.iter().zip(&widths) {
            if !first {
                out.push_str(" | ");
            }
            let pad = w - cell.chars().count();
            if first {
                let _ = write!(out, "{}{}", cell, " ".repeat(pad));
            } else {
                let _ = write!(out, "{}{}", " ".repeat(pad), cell);
            }
            first = false;
        }
        out.push('\n');
    };
    line(&mut out, &header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for row in rows {
        line(&mut out, row);
    }
    out
}

/// `Method | Training | mAP` with mAP in percent, one decimal.
pub fn method_table(rows: &[TableRow<'_>]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.method.clone(), r.training.clone(), pct(r.report.map)])
        .collect();
    render(&["Method", "Training", "mAP"], &body)
}

/// Side-by-side comparison of the headline metrics, in percent.
pub fn comparison_table(rows: &[TableRow<'_>]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = r.report;
            vec![
                r.method.clone(),
                pct(m.map),
                pct(m.ap50),
                pct(m.ap_small),
                pct(m.ar1),
                pct(m.ar10),
                pct(m.ar100),
            ]
        })
        .collect();
    render(&["Method", "mAP", "AP50", "AP_s", "AR@1", "AR@10", "AR@100"], &body)
}
