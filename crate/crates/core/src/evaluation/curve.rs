//! Train-split versus test-split metric trajectories over checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingSuite;
use super::generate::{run_generation, GenerationOptions};
use super::plan::{build_plan, Split};
use super::report::{score, EvaluationReport};
use crate::backend::Backend;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub checkpoint: String,
    pub split: Split,
    pub text_image: f64,
    pub image_contrastive: f64,
    pub image_selfsup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveOptions {
    pub images_per_prompt: usize,
    pub seed: u64,
    pub generation: GenerationOptions,
}

pub fn checkpoint_label(ckpt: &Checkpoint) -> String {
    format!("{}@{}", ckpt.subject_id, ckpt.state.step)
}

/// Score one checkpoint on one split.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    split: Split,
    manifest: &DatasetManifest,
    backend: &Backend,
    suite: &EmbeddingSuite,
    options: &CurveOptions,
) -> Result<EvaluationReport> {
    let plan = build_plan(manifest, split, options.images_per_prompt, options.seed)?.restrict(std::slice::from_ref(&ckpt.subject_id));
    let map: BTreeMap<String, Checkpoint> = [(ckpt.subject_id.clone(), ckpt.clone())].into_iter().collect();
    let generated = run_generation(&plan, &map, backend, &options.generation)?;
    score(&generated, &plan, manifest, suite, &checkpoint_label(ckpt))
}

pub fn overfit_curve(
    checkpoints: &[Checkpoint],
    manifest: &DatasetManifest,
    backend: &Backend,
    suite: &EmbeddingSuite,
    options: &CurveOptions,
) -> Result<CurveReport> {
    if checkpoints.len() < 2 {
        return Err(Error::Spec("an overfit curve needs at least two checkpoints".into()));
    }
    let mut ordered: Vec<&Checkpoint> = checkpoints.iter().collect();
    ordered.sort_by_key(|c| c.state.step);
    let mut rows = Vec::with_capacity(2 * ordered.len());
    for ckpt in ordered {
        for split in [Split::Train, Split::Test] {
            let r = evaluate_checkpoint(ckpt, split, manifest, backend, suite, options)?;
            rows.push(CurveRow {
                step: ckpt.state.step,
                checkpoint: checkpoint_label(ckpt),
                split,
                text_image: r.aggregate.text_image,
                image_contrastive: r.aggregate.image_contrastive,
                image_selfsup: r.aggregate.image_selfsup,
            });
        }
    }
    Ok(CurveReport { rows })
}

impl CurveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,checkpoint,split,text_image,image_contrastive,image_selfsup\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.checkpoint, r.split, r.text_image, r.image_contrastive, r.image_selfsup
            );
        }
        out
    }

    /// Three stacked panels (one per metric), train and test series each.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const PANEL: f64 = 160.0;
        const PAD: f64 = 40.0;
        let metrics: [(&str, fn(&CurveRow) -> f64); 3] = [
            ("text-image", |r| r.text_image),
            ("image (contrastive)", |r| r.image_contrastive),
            ("image (self-supervised)", |r| r.image_selfsup),
        ];
        let max_step = self.rows.iter().map(|r| r.step).max().unwrap_or(1).max(1) as f64;
        let height = PAD + 3.0 * (PANEL + PAD);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (i, (name, get)) in metrics.iter().enumerate() {
            let top = PAD + i as f64 * (PANEL + PAD);
            let values: Vec<f64> = self.rows.iter().map(get).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
            let x = |s: usize| PAD + (W - 2.0 * PAD) * s as f64 / max_step;
            let y = |v: f64| top + PANEL * (1.0 - (v - lo) / (hi - lo));
            let _ = writeln!(
                svg,
                r#"<rect x="{PAD}" y="{top}" width="{}" height="{PANEL}" fill="none" stroke="black"/>"#,
                W - 2.0 * PAD
            );
            let _ = writeln!(svg, r#"<text x="{PAD}" y="{}">{name} [{lo:.3}, {hi:.3}]</text>"#, top - 6.0);
            for (split, color) in [(Split::Train, "#c0392b"), (Split::Test, "#2471a3")] {
                let pts: Vec<String> = self
                    .rows
                    .iter()
                    .filter(|r| r.split == split)
                    .map(|r| format!("{:.2},{:.2}", x(r.step), y(get(r))))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    pts.join(" ")
                );
                let ly = top + 14.0 + if split == Split::Train { 0.0 } else { 14.0 };
                let _ = writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{split}</text>"#, W - PAD - 40.0);
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}
