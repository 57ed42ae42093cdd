//! Command-line surface: `run_command` parses argv, dispatches, and reports
//! the artifacts it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backend::{Backend, BackendConfig};
use crate::dataset::imageio::{encode_png_rgb, write_bytes};
use crate::dataset::{load_manifest, synth_toy_dataset, validate_manifest, Profile, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_plan, checkpoint_label, evaluate_checkpoint, generate_image, overfit_curve, run_generation, score,
    CurveOptions, EmbeddingSuite, GenerationOptions, Split, DEFAULT_IMAGES_PER_PROMPT,
};
use crate::losses::{WeightKind, WeightSchedule, ALL_KINDS};
use crate::trainer::{train_to_dir, Checkpoint, Method, Trainer, TrainingConfig, FINAL_CHECKPOINT};

pub const CACHE_ENV: &str = "PERSONALIZE_CACHE_DIR";
const DEFAULT_CACHE: &str = "persona-cache";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts_written: Vec<PathBuf>,
    pub summary: Vec<String>,
}

#[derive(Debug, Parser)]
#[command(name = "persona", version, about = "Disentangled subject personalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset manifest against a profile.
    ValidateData(ValidateArgs),
    /// Write a procedural toy dataset.
    SynthData(SynthArgs),
    /// Learn subject and attractor tokens for one subject.
    Train(TrainArgs),
    /// Sample images from a checkpoint.
    Generate(GenerateArgs),
    /// Generate and score a split against its references.
    Evaluate(EvaluateArgs),
    /// Train-vs-test metric curve over checkpoints.
    Curve(CurveArgs),
    /// Train and evaluate once per contrastive weighting schedule.
    AblateSchedule(AblateArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "full")]
    profile: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    profile: String,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    images_per_subject: Option<usize>,
    #[arg(long)]
    train_images: Option<usize>,
    #[arg(long)]
    captions: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long, default_value = "neti+")]
    method: String,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// `ws,wb,wi,wcmax`
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "cosine")]
    schedule: String,
    /// Shape parameter of the exponential and sigmoid schedules.
    #[arg(long)]
    schedule_k: Option<f64>,
    /// `subject,background,joint` pool probabilities.
    #[arg(long)]
    pool_mix: Option<String>,
    #[arg(long)]
    no_masked_routing: bool,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    checkpoint_interval: usize,
    /// JSON training config; flags given explicitly on the command line are
    /// ignored in favour of the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    backend_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prompt with `{}` or `<v*>` marking the subject.
    #[arg(long)]
    prompt: String,
    /// Training image whose attractor resolves `<A*>`.
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_IMAGES_PER_PROMPT)]
    images_per_prompt: usize,
    #[arg(long, default_value_t = 25)]
    sampler_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// One checkpoint per evaluated subject, comma separated.
    #[arg(long, alias = "checkpoint", value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = DEFAULT_IMAGES_PER_PROMPT)]
    images_per_prompt: usize,
    #[arg(long, default_value_t = 25)]
    sampler_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, alias = "checkpoint", value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IMAGES_PER_PROMPT)]
    images_per_prompt: usize,
    #[arg(long, default_value_t = 25)]
    sampler_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Schedules to compare; all six by default.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    #[arg(long, default_value_t = DEFAULT_IMAGES_PER_PROMPT)]
    images_per_prompt: usize,
    #[arg(long, default_value_t = 25)]
    sampler_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(explicit: &Option<PathBuf>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE))
            .join(command),
    }
}

fn parse_floats<const N: usize>(flag: &str, text: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("--{flag} expects {N} comma-separated numbers, got `{text}`")))?;
    values
        .try_into()
        .map_err(|_| Error::Usage(format!("--{flag} expects {N} comma-separated numbers, got `{text}`")))
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_bytes(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn resolve_training_config(flags: &TrainFlags) -> Result<TrainingConfig> {
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return TrainingConfig::from_json(&text);
    }
    let method: Method = flags.method.parse()?;
    let mut c = TrainingConfig::new(method, flags.steps, flags.seed);
    c.learning_rate = flags.lr;
    c.batch_size = flags.batch;
    if let Some(w) = &flags.weights {
        let [ws, wb, wi, wc] = parse_floats::<4>("weights", w)?;
        c.weights.w_s = ws;
        c.weights.w_b = wb;
        c.weights.w_i = wi;
        c.weights.w_c_max = wc;
    }
    if let Some(tau) = flags.tau {
        c.weights.tau = tau;
    }
    let kind: WeightKind = flags.schedule.parse()?;
    c.schedule = WeightSchedule::new(kind, flags.steps.max(1));
    if let Some(k) = flags.schedule_k {
        c.schedule.k = k;
    }
    if let Some(mix) = &flags.pool_mix {
        c.pool_mix = parse_floats::<3>("pool-mix", mix)?;
    }
    if flags.no_masked_routing {
        c.masked_routing = false;
    }
    if let Some(wd) = flags.weight_decay {
        c.weight_decay = wd;
    }
    c.checkpoint_interval = flags.checkpoint_interval;
    method.configure(&mut c);
    c.validate()?;
    Ok(c)
}

fn load_checkpoints(paths: &[PathBuf]) -> Result<Vec<Checkpoint>> {
    paths.iter().map(|p| Checkpoint::load(p)).collect()
}

fn backend_for(checkpoints: &[Checkpoint]) -> Result<Backend> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Usage("at least one checkpoint is required".into()))?;
    if checkpoints.iter().any(|c| c.backend != first.backend) {
        return Err(Error::Spec("checkpoints were trained against different backends".into()));
    }
    Backend::new(first.backend.clone())
}

fn cmd_validate(a: ValidateArgs) -> Result<CommandResult> {
    let profile: Profile = a.profile.parse()?;
    let manifest = load_manifest(&a.manifest)?;
    let report = validate_manifest(&manifest, profile);
    let mut res = CommandResult::default();
    if let Some(dir) = &a.out {
        let mut out = Outputs::new(dir.clone())?;
        out.json("validation.json", &report)?;
        res.artifacts_written = out.written;
    }
    res.summary.push(format!(
        "{} violation(s) under profile {}",
        report.violations.len(),
        a.profile
    ));
    for v in &report.violations {
        res.summary.push(format!("  {v}"));
    }
    if !report.is_valid() {
        res.exit_code = Error::Data(String::new()).exit_code();
    }
    Ok(res)
}

fn cmd_synth(a: SynthArgs) -> Result<CommandResult> {
    let profile: Profile = a.profile.parse()?;
    let mut spec = match profile {
        Profile::Full => SynthSpec::full_profile(a.seed),
        Profile::Toy => SynthSpec {
            seed: a.seed,
            ..Default::default()
        },
    };
    if let Some(n) = a.subjects {
        spec.n_subjects = n;
    }
    if let Some(n) = a.images_per_subject {
        spec.images_per_subject = n;
    }
    if let Some(n) = a.train_images {
        spec.train_fraction = n as f64 / spec.images_per_subject.max(1) as f64;
    }
    if let Some(n) = a.captions {
        spec.captions_per_test_image = n;
    }
    if let Some(n) = a.size {
        spec.image_size = n;
    }
    let dir = out_dir(&a.out, "synth-data");
    let data = synth_toy_dataset(&spec)?;
    let manifest = data.write(&dir)?;
    let mut written: Vec<PathBuf> = manifest.referenced_paths().iter().map(|p| dir.join(p)).collect();
    written.push(dir.join("manifest.json"));
    written.push(dir.join("compositions.json"));
    written.sort();
    Ok(CommandResult {
        exit_code: 0,
        summary: vec![format!(
            "wrote {} subjects, {} images to {}",
            manifest.subjects.len(),
            manifest.image_count(),
            dir.display()
        )],
        artifacts_written: written,
    })
}

fn run_training(flags: &TrainFlags, config: TrainingConfig, resume: Option<&Path>, dir: &Path) -> Result<(Vec<PathBuf>, String)> {
    let manifest = load_manifest(&flags.manifest)?;
    let (backend, config, resume_state) = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.subject_id != flags.subject {
                return Err(Error::Usage(format!(
                    "checkpoint is for subject `{}`, not `{}`",
                    ckpt.subject_id, flags.subject
                )));
            }
            (Backend::new(ckpt.backend)?, ckpt.config, Some(ckpt.state))
        }
        None => (Backend::new(BackendConfig::toy(flags.backend_seed))?, config, None),
    };
    let trainer = Trainer::from_manifest(&backend, &manifest, &flags.subject, config)?;
    let mut out = Outputs::new(dir.to_path_buf())?;
    let mut cfg_text = trainer.config.to_json();
    cfg_text.push('\n');
    out.write("config.json", cfg_text.as_bytes())?;
    let run = train_to_dir(&trainer, resume_state, dir)?;
    let mut written = out.written;
    written.push(dir.join(crate::trainer::BACKEND_FILE));
    written.push(dir.join(crate::trainer::TRACE_FILE));
    written.extend(run.checkpoints);
    let last = run.trace.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
    Ok((written, format!("trained to step {} (last total loss {last:.6})", run.final_state.step)))
}

fn cmd_train(a: TrainArgs) -> Result<CommandResult> {
    let config = resolve_training_config(&a.flags)?;
    let dir = out_dir(&a.out, "train");
    let (written, line) = run_training(&a.flags, config, a.resume.as_deref(), &dir)?;
    Ok(CommandResult {
        exit_code: 0,
        artifacts_written: written,
        summary: vec![line],
    })
}

fn subject_prompt(prompt: &str) -> Result<String> {
    if prompt.contains(crate::dataset::caption::PLACEHOLDER) {
        crate::dataset::fill_caption(prompt, crate::embedders::SUBJECT_MARKER)
    } else {
        Ok(prompt.to_string())
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<CommandResult> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let backend = Backend::new(ckpt.backend.clone())?;
    let prompt = subject_prompt(&a.prompt)?;
    let options = GenerationOptions {
        sampler_steps: a.sampler_steps,
    };
    let mut out = Outputs::new(out_dir(&a.out, "generate"))?;
    let base = crate::evaluation::embedding::hash_seed(&[&a.seed.to_string(), &prompt]);
    for r in 0..a.images_per_prompt {
        let img = generate_image(&backend, &ckpt.state, &prompt, a.image_id.as_deref(), base.wrapping_add(r as u64), &options)?;
        out.write(&format!("image_{r:02}.png"), &encode_png_rgb(&img))?;
    }
    Ok(CommandResult {
        exit_code: 0,
        summary: vec![format!("generated {} image(s) for `{prompt}`", a.images_per_prompt)],
        artifacts_written: out.written,
    })
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<CommandResult> {
    let split: Split = a.split.parse()?;
    let manifest = load_manifest(&a.manifest)?;
    let ckpts = load_checkpoints(&a.checkpoints)?;
    let backend = backend_for(&ckpts)?;
    let mut by_subject = BTreeMap::new();
    for c in &ckpts {
        if by_subject.insert(c.subject_id.clone(), c.clone()).is_some() {
            return Err(Error::Usage(format!("two checkpoints for subject `{}`", c.subject_id)));
        }
    }
    let subjects: Vec<String> = by_subject.keys().cloned().collect();
    let plan = build_plan(&manifest, split, a.images_per_prompt, a.seed)?.restrict(&subjects);
    let options = GenerationOptions {
        sampler_steps: a.sampler_steps,
    };
    let generated = run_generation(&plan, &by_subject, &backend, &options)?;
    let label = ckpts.iter().map(checkpoint_label).collect::<Vec<_>>().join(",");
    let report = score(&generated, &plan, &manifest, &EmbeddingSuite::stub(0), &label)?;
    let mut out = Outputs::new(out_dir(&a.out, "evaluate"))?;
    let images = generated.write(&out.dir.join("images"))?;
    out.written.extend(images);
    out.write("report.json", format!("{}\n", report.to_json()).as_bytes())?;
    out.write("report.txt", report.table().as_bytes())?;
    Ok(CommandResult {
        exit_code: 0,
        summary: report.table().lines().map(str::to_string).collect(),
        artifacts_written: out.written,
    })
}

fn cmd_curve(a: CurveArgs) -> Result<CommandResult> {
    let manifest = load_manifest(&a.manifest)?;
    let ckpts = load_checkpoints(&a.checkpoints)?;
    let backend = backend_for(&ckpts)?;
    let options = CurveOptions {
        images_per_prompt: a.images_per_prompt,
        seed: a.seed,
        generation: GenerationOptions {
            sampler_steps: a.sampler_steps,
        },
    };
    let curve = overfit_curve(&ckpts, &manifest, &backend, &EmbeddingSuite::stub(0), &options)?;
    let mut out = Outputs::new(out_dir(&a.out, "curve"))?;
    out.write("curve.json", format!("{}\n", curve.to_json()).as_bytes())?;
    out.write("curve.csv", curve.to_csv().as_bytes())?;
    out.write("curve.svg", curve.to_svg().as_bytes())?;
    Ok(CommandResult {
        exit_code: 0,
        summary: curve.to_csv().lines().map(str::to_string).collect(),
        artifacts_written: out.written,
    })
}

#[derive(Debug, Serialize)]
struct AblationRow {
    schedule: WeightKind,
    text_image: f64,
    image_contrastive: f64,
    image_selfsup: f64,
    final_total_loss: f64,
}

fn cmd_ablate(a: AblateArgs) -> Result<CommandResult> {
    let kinds: Vec<WeightKind> = match &a.kinds {
        Some(list) => list.iter().map(|k| k.parse()).collect::<Result<_>>()?,
        None => ALL_KINDS.to_vec(),
    };
    let base = resolve_training_config(&a.flags)?;
    let dir = out_dir(&a.out, "ablate-schedule");
    let manifest = load_manifest(&a.flags.manifest)?;
    let mut out = Outputs::new(dir.clone())?;
    let mut rows = Vec::new();
    for kind in kinds {
        let mut config = base.clone();
        let k = config.schedule.k;
        config.schedule = WeightSchedule::new(kind, config.total_steps.max(1));
        if a.flags.schedule_k.is_some() {
            config.schedule.k = k;
        }
        let run_dir = dir.join(kind.name());
        let (written, _) = run_training(&a.flags, config, None, &run_dir)?;
        out.written.extend(written);
        let ckpt = Checkpoint::load(&run_dir.join("checkpoints").join(FINAL_CHECKPOINT))?;
        let backend = Backend::new(ckpt.backend.clone())?;
        let options = CurveOptions {
            images_per_prompt: a.images_per_prompt,
            seed: a.flags.seed,
            generation: GenerationOptions {
                sampler_steps: a.sampler_steps,
            },
        };
        let report = evaluate_checkpoint(&ckpt, Split::Test, &manifest, &backend, &EmbeddingSuite::stub(0), &options)?;
        out.write(&format!("{}/report.json", kind.name()), format!("{}\n", report.to_json()).as_bytes())?;
        let trace = crate::losses::parse_trace(
            &std::fs::read_to_string(run_dir.join(crate::trainer::TRACE_FILE)).map_err(|e| Error::io(&run_dir, e))?,
        )?;
        rows.push(AblationRow {
            schedule: kind,
            text_image: report.aggregate.text_image,
            image_contrastive: report.aggregate.image_contrastive,
            image_selfsup: report.aggregate.image_selfsup,
            final_total_loss: trace.last().map(|r| r.loss.total).unwrap_or(0.0),
        });
    }
    let mut table = format!("{:<12} {:>10} {:>10} {:>10}\n", "schedule", "text-img", "img-con", "img-ssl");
    let mut csv = String::from("schedule,text_image,image_contrastive,image_selfsup,final_total_loss\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<12} {:>10.4} {:>10.4} {:>10.4}",
            r.schedule.name(),
            r.text_image,
            r.image_contrastive,
            r.image_selfsup
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.schedule.name(),
            r.text_image,
            r.image_contrastive,
            r.image_selfsup,
            r.final_total_loss
        );
    }
    out.json("ablation.json", &rows)?;
    out.write("ablation.csv", csv.as_bytes())?;
    out.write("ablation.txt", table.as_bytes())?;
    Ok(CommandResult {
        exit_code: 0,
        summary: table.lines().map(str::to_string).collect(),
        artifacts_written: out.written,
    })
}

fn dispatch(cli: Cli) -> Result<CommandResult> {
    match cli.command {
        Command::ValidateData(a) => cmd_validate(a),
        Command::SynthData(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Curve(a) => cmd_curve(a),
        Command::AblateSchedule(a) => cmd_ablate(a),
    }
}

/// Run one command. `argv` excludes the program name.
pub fn run_command<I, S>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("persona")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            return CommandResult {
                exit_code: code,
                artifacts_written: Vec::new(),
                summary: e.to_string().lines().map(str::to_string).collect(),
            };
        }
    };
    match dispatch(cli) {
        Ok(r) => r,
        Err(e) => CommandResult {
            exit_code: e.exit_code(),
            artifacts_written: Vec::new(),
            summary: vec![format!("error: {e}")],
        },
    }
}
