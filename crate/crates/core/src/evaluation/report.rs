//! Scoring generated images and aggregate reports.

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embedding::{cosine, EmbeddingSuite};
use super::generate::GeneratedSet;
use super::plan::{EvaluationPlan, Split};
use crate::dataset::imageio::load_rgb;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub subject_id: String,
    pub image_id: String,
    pub caption_index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub text_image: f64,
    pub image_contrastive: f64,
    pub image_selfsup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub text_image: f64,
    pub image_contrastive: f64,
    pub image_selfsup: f64,
    pub count: usize,
}

impl MetricMeans {
    /// Unweighted means over `rows`.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a ScoreRow>) -> Self {
        let mut m = MetricMeans::default();
        for r in rows {
            m.text_image += r.text_image;
            m.image_contrastive += r.image_contrastive;
            m.image_selfsup += r.image_selfsup;
            m.count += 1;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.text_image /= n;
            m.image_contrastive /= n;
            m.image_selfsup /= n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub checkpoint: String,
    pub tasks: usize,
    pub aggregate: MetricMeans,
    pub per_subject: BTreeMap<String, MetricMeans>,
    pub rows: Vec<ScoreRow>,
}

impl EvaluationReport {
    pub fn from_rows(split: Split, checkpoint: &str, mut rows: Vec<ScoreRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.subject_id, &a.image_id, a.caption_index, a.replicate).cmp(&(
                &b.subject_id,
                &b.image_id,
                b.caption_index,
                b.replicate,
            ))
        });
        let mut per_subject = BTreeMap::new();
        let mut subjects: Vec<&str> = rows.iter().map(|r| r.subject_id.as_str()).collect();
        subjects.dedup();
        for s in subjects {
            per_subject.insert(s.to_string(), MetricMeans::from_rows(rows.iter().filter(|r| r.subject_id == s)));
        }
        Self {
            split,
            checkpoint: checkpoint.to_string(),
            tasks: rows.len(),
            aggregate: MetricMeans::from_rows(&rows),
            per_subject,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("evaluation report: {e}")))
    }

    /// Plain-text per-subject table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "split {} checkpoint {} ({} images)\n{:<16} {:>10} {:>10} {:>10}\n",
            self.split, self.checkpoint, self.tasks, "subject", "text-img", "img-con", "img-ssl"
        );
        let line = |name: &str, m: &MetricMeans| {
            format!(
                "{:<16} {:>10.4} {:>10.4} {:>10.4}\n",
                name, m.text_image, m.image_contrastive, m.image_selfsup
            )
        };
        for (s, m) in &self.per_subject {
            out.push_str(&line(s, m));
        }
        out.push_str(&line("all", &self.aggregate));
        out
    }
}

/// Score every task of `plan`: the text metric against the caption with the
/// supercategory filled in, the image metrics against the task's reference.
pub fn score(
    generated: &GeneratedSet,
    plan: &EvaluationPlan,
    manifest: &DatasetManifest,
    suite: &EmbeddingSuite,
    checkpoint: &str,
) -> Result<EvaluationReport> {
    let mut references: BTreeMap<&str, (Array1<f64>, Array1<f64>)> = BTreeMap::new();
    for task in &plan.tasks {
        if !references.contains_key(task.reference.as_str()) {
            let img = load_rgb(&manifest.resolve(&task.reference))?;
            let pair = (suite.text_image.embed_image(&img)?, suite.self_supervised.embed_image(&img)?);
            references.insert(&task.reference, pair);
        }
    }
    let rows = plan
        .tasks
        .par_iter()
        .map(|task| {
            let img = generated
                .images
                .get(&task.key)
                .ok_or_else(|| Error::MissingOutput(format!("no generated image for {:?}", task.key)))?;
            let (ref_c, ref_s) = &references[task.reference.as_str()];
            let gen_c = suite.text_image.embed_image(img)?;
            let gen_s = suite.self_supervised.embed_image(img)?;
            let text = suite.text_image.embed_text(&task.text_prompt)?;
            Ok(ScoreRow {
                subject_id: task.key.subject_id.clone(),
                image_id: task.key.image_id.clone(),
                caption_index: task.key.caption_index,
                replicate: task.key.replicate,
                seed: task.seed,
                text_image: cosine(&text, &gen_c),
                image_contrastive: cosine(&gen_c, ref_c),
                image_selfsup: cosine(&gen_s, ref_s),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_rows(plan.split, checkpoint, rows))
}
