use persona::backend::{Backend, BackendConfig};
use persona::dataset::{synth_toy_dataset, SynthSpec};
use persona::evaluation::{build_plan, run_generation, score, EmbeddingSuite, GeneratedSet, GenerationOptions, Split};
use persona::losses::parse_trace;
use persona::trainer::{train_to_dir, Checkpoint, Method, Trainer, TrainingConfig, FINAL_CHECKPOINT, TRACE_FILE};

#[test]
fn train_generate_score_round_trip() {
    let data_dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_subjects: 2,
        images_per_subject: 4,
        train_fraction: 0.5,
        captions_per_test_image: 2,
        ..Default::default()
    };
    let manifest = synth_toy_dataset(&spec).unwrap().write(data_dir.path()).unwrap();
    let backend = Backend::new(BackendConfig::toy(1)).unwrap();

    let mut checkpoints = std::collections::BTreeMap::new();
    for subject in &manifest.subjects {
        let mut cfg = TrainingConfig::new(Method::NetiPlus, 4, 2);
        cfg.batch_size = 3;
        cfg.learning_rate = 1e-2;
        let tr = Trainer::from_manifest(&backend, &manifest, &subject.subject_id, cfg).unwrap();
        let out = tempfile::tempdir().unwrap();
        let run = train_to_dir(&tr, None, out.path()).unwrap();
        let trace = parse_trace(&std::fs::read_to_string(out.path().join(TRACE_FILE)).unwrap()).unwrap();
        assert_eq!(trace, run.trace);
        assert!(trace.iter().all(|r| r.loss.total.is_finite()));
        let ckpt = Checkpoint::load(&out.path().join("checkpoints").join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(ckpt.state, run.final_state);
        checkpoints.insert(subject.subject_id.clone(), ckpt);
    }

    let plan = build_plan(&manifest, Split::Test, 1, 0).unwrap();
    assert_eq!(plan.len(), 2 * 2 * 2);
    let opts = GenerationOptions { sampler_steps: 4 };
    let generated = run_generation(&plan, &checkpoints, &backend, &opts).unwrap();
    let gen_dir = tempfile::tempdir().unwrap();
    generated.write(gen_dir.path()).unwrap();
    let reloaded = GeneratedSet::load(&plan, gen_dir.path()).unwrap();
    assert_eq!(reloaded, generated);

    let suite = EmbeddingSuite::stub(0);
    let report = score(&generated, &plan, &manifest, &suite, "both").unwrap();
    assert_eq!(report.rows.len(), plan.len());
    for r in &report.rows {
        for v in [r.text_image, r.image_contrastive, r.image_selfsup] {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
    let mut shuffled = plan.clone();
    shuffled.tasks.reverse();
    let again = score(&generated, &shuffled, &manifest, &suite, "both").unwrap();
    assert_eq!(again.aggregate, report.aggregate);
    let mean: f64 = report.rows.iter().map(|r| r.image_selfsup).sum::<f64>() / report.rows.len() as f64;
    assert!((mean - report.aggregate.image_selfsup).abs() < 1e-9);
}

#[test]
fn generation_rejects_foreign_backend() {
    let data_dir = tempfile::tempdir().unwrap();
    let manifest = synth_toy_dataset(&SynthSpec {
        n_subjects: 1,
        images_per_subject: 3,
        ..Default::default()
    })
    .unwrap()
    .write(data_dir.path())
    .unwrap();
    let trained_on = Backend::new(BackendConfig::toy(1)).unwrap();
    let other = Backend::new(BackendConfig::toy(2)).unwrap();
    let tr = Trainer::from_manifest(&trained_on, &manifest, "subject_00", TrainingConfig::new(Method::Ti, 1, 0)).unwrap();
    let ckpt = tr.checkpoint(&tr.init_state().unwrap());
    let plan = build_plan(&manifest, Split::Test, 1, 0).unwrap();
    let map = [("subject_00".to_string(), ckpt)].into_iter().collect();
    assert!(run_generation(&plan, &map, &other, &GenerationOptions::default()).is_err());
}
