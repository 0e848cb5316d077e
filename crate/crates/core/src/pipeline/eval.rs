//! Directory-level evaluation of predicted frames against ground truth.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, CdcConfig, EvalReport};
use crate::pipeline::clip::read_frames;

pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cdc: &CdcConfig) -> Result<EvalReport> {
    let (pred_ids, pred) = read_frames(pred_dir, None)?;
    let (gt_ids, gt) = read_frames(gt_dir, None)?;
    if pred_ids.len() != gt_ids.len() {
        return Err(Error::invalid(format!(
            "{} has {} frames but {} has {}",
            pred_dir.display(),
            pred_ids.len(),
            gt_dir.display(),
            gt_ids.len()
        )));
    }
    if let Some((p, g)) = pred_ids.iter().zip(&gt_ids).find(|(p, g)| p != g) {
        return Err(Error::invalid(format!("frame sets differ: {p} vs {g}")));
    }
    evaluate(&pred_ids, &pred, &gt, cdc)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}
