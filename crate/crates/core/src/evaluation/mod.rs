//! Separate-test-set evaluation: plans, generation, embedding-based
//! scoring, reports and the train/test overfit curve.

pub mod curve;
pub mod embedding;
pub mod generate;
pub mod plan;
pub mod report;

pub use curve::{checkpoint_label, evaluate_checkpoint, overfit_curve, CurveOptions, CurveReport, CurveRow};
pub use embedding::{cosine, EmbeddingModel, EmbeddingSuite, ModelFamily, StubContrastive, StubSelfSupervised};
pub use generate::{generate_image, run_generation, GeneratedSet, GenerationOptions};
pub use plan::{build_plan, EvalTask, EvaluationPlan, Split, TaskKey, DEFAULT_IMAGES_PER_PROMPT};
pub use report::{score, EvaluationReport, MetricMeans, ScoreRow};
