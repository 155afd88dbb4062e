mod common;

use std::path::Path;

use candle_core::DType;
use clap_lab::model::{load_checkpoint, ArchConfig, ClapModel, Likelihood, ModelDims};
use clap_lab::synthgen::{presets, sample_dataset, LabeledDataset};
use clap_lab::trainer::{
    default_config, default_model_config, resume, train, LrSchedule, ModeRegistry, TrainConfig,
    CHECKPOINT_DIR, FINAL_CHECKPOINT, METRICS_FILE,
};
use clap_lab::Error;
use common::checks::{checkpoint_determinism, file_hash, small_train_config};
use serde_json::Value;

fn data(n: usize) -> LabeledDataset {
    sample_dataset(&presets::linear_benchmark(0), n, 1).unwrap()
}

fn small_cfg(steps: u64, mode: &str) -> TrainConfig {
    small_train_config(steps, mode)
}

fn model_for(d: &LabeledDataset) -> ClapModel {
    ClapModel::new(
        default_model_config("vector", &d.manifest, 0).unwrap(),
        DType::F32,
    )
    .unwrap()
}

fn metrics(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join(METRICS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    checkpoint_determinism();
}

/// Optimizer state must not keep earlier steps' graphs alive. A chained
/// graph is dropped recursively, so a 256 KiB stack overflows long before
/// a few thousand steps if it does.
#[test]
fn long_runs_do_not_accumulate_graph_state() {
    let h = std::thread::Builder::new()
        .stack_size(256 * 1024)
        .spawn(|| {
            let d = data(300);
            let mut cfg = small_cfg(3000, "clap");
            cfg.eval_every = 3000;
            let mut m = model_for(&d);
            train(&mut m, &d, &cfg, None).unwrap().history.len()
        })
        .unwrap();
    assert_eq!(h.join().unwrap(), 3000);
}

#[test]
fn resuming_reproduces_the_uninterrupted_run() {
    let d = data(300);
    let straight = tempfile::tempdir().unwrap();
    let mut cfg = small_cfg(30, "clap");
    cfg.checkpoint_every = 15;
    let mut m = model_for(&d);
    let full = train(&mut m, &d, &cfg, Some(straight.path())).unwrap();

    let mid = straight
        .path()
        .join(CHECKPOINT_DIR)
        .join("step_0000015.tar");
    let resumed = tempfile::tempdir().unwrap();
    let (m2, rest) = resume(&mid, &d, None, Some(resumed.path())).unwrap();
    assert_eq!(m2.store.digest().unwrap(), m.store.digest().unwrap());
    assert_eq!(rest.history[..], full.history[15..]);
    assert_eq!(
        file_hash(&resumed.path().join(FINAL_CHECKPOINT)),
        file_hash(&straight.path().join(FINAL_CHECKPOINT))
    );
}

#[test]
fn prediction_only_mode_leaves_concept_branch_untouched() {
    let d = data(300);
    let mut m = model_for(&d);
    let cl = ["enc_cl/", "prior_cl/"];
    let before = m.store.digest_prefix(&cl).unwrap();
    let before_p = m.store.digest_prefix(&["enc_p/", "dec/"]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train(&mut m, &d, &small_cfg(20, "p_only"), Some(dir.path())).unwrap();
    assert_eq!(m.store.digest_prefix(&cl).unwrap(), before);
    assert_ne!(
        m.store.digest_prefix(&["enc_p/", "dec/"]).unwrap(),
        before_p
    );
    for rec in metrics(dir.path()) {
        assert!(rec.get("elbo_cl").is_none());
        assert_eq!(rec["sparsity"], 0.0);
    }
}

#[test]
fn single_label_mode_reads_only_its_column() {
    let d = data(300);
    let mut perturbed = d.clone();
    for mut row in perturbed.y.rows_mut() {
        row[0] ^= 1;
        row[2] ^= 1;
    }
    let mut cfg = small_cfg(20, "single_label");
    cfg.label_index = Some(1);
    let run = |data: &LabeledDataset| {
        let seen = data.with_label_columns(&[1]).unwrap();
        let mut m = ClapModel::new(
            default_model_config("vector", &seen.manifest, 0).unwrap(),
            DType::F32,
        )
        .unwrap();
        train(&mut m, data, &cfg, None).unwrap();
        m.store.digest().unwrap()
    };
    assert_eq!(run(&d), run(&perturbed));
}

#[test]
fn metrics_records_carry_objective_terms() {
    let d = data(200);
    let mut m = model_for(&d);
    let dir = tempfile::tempdir().unwrap();
    train(&mut m, &d, &small_cfg(25, "clap"), Some(dir.path())).unwrap();
    let recs = metrics(dir.path());
    assert_eq!(
        recs.iter()
            .map(|r| r["step"].as_u64().unwrap())
            .collect::<Vec<_>>(),
        vec![10, 20, 25]
    );
    for r in &recs {
        for k in [
            "elbo_p",
            "elbo_cl",
            "kl_p",
            "kl_cl",
            "sparsity",
            "total",
            "pred_acc_train",
            "active_columns",
        ] {
            assert!(r.get(k).is_some(), "missing {k}");
        }
        assert!(r["timing"]["wall_time_s"].is_number());
    }
}

#[test]
fn no_sparsity_mode_drops_the_penalty() {
    let d = data(200);
    let mut m = model_for(&d);
    let out = train(&mut m, &d, &small_cfg(10, "no_sparsity"), None).unwrap();
    assert!(out
        .records
        .iter()
        .all(|r| r["sparsity"] == 0.0 && r.get("elbo_cl").is_some()));
}

#[test]
fn non_finite_data_triggers_the_divergence_guard() {
    let mut d = data(50);
    d.x.fill(f32::NAN);
    let mut m = model_for(&d);
    let dir = tempfile::tempdir().unwrap();
    match train(&mut m, &d, &small_cfg(5, "clap"), Some(dir.path())) {
        Err(Error::Diverged { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_step)),
    }
    assert_eq!(metrics(dir.path())[0]["event"], "diverged");
}

#[test]
fn configs_and_modes_are_validated() {
    let mut c = small_cfg(10, "clap");
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let c = small_cfg(10, "sideways");
    assert!(matches!(c.mode(), Err(Error::UnknownName { .. })));
    let reg = ModeRegistry::default();
    assert!(reg.get("single_label", None).is_err());
    assert!(reg.get("clap", Some(1)).is_err());
    assert_eq!(
        reg.names(),
        vec!["clap", "no_sparsity", "p_only", "single_label"]
    );
    assert!(default_config("audio").is_err());
}

#[test]
fn kind_defaults_follow_the_published_table() {
    let img = default_config("image").unwrap();
    assert_eq!((img.batch_size, img.learning_rate), (132, 5e-4));
    let toy = default_config("toy-image").unwrap();
    assert_eq!(
        (toy.objective.beta_pred, toy.objective.lambda_sparsity),
        (50.0, 0.05)
    );
    let d = data(10);
    let mc = default_model_config("vector", &d.manifest, 0).unwrap();
    assert_eq!((mc.dims.k_c, mc.dims.k_s), (5, 4));
    let mut manifest = d.manifest.clone();
    manifest.image_shape = Some([64, 64, 3]);
    manifest.obs_dim = 64 * 64 * 3;
    let mc = default_model_config("image", &manifest, 0).unwrap();
    assert_eq!(
        mc.dims,
        ModelDims {
            k_c: 10,
            k_s: 20,
            obs_dim: 12288,
            image_shape: Some([64, 64, 3]),
            num_labels: 3
        }
    );
    assert_eq!(mc.arch, ArchConfig::table2());
    let toy = default_model_config("toy-image", &manifest, 0).unwrap();
    assert_eq!((toy.dims.k_c, toy.dims.k_s), (5, 4));
    assert_eq!((toy.arch, toy.likelihood), (ArchConfig::linear(), Likelihood::Bernoulli));
}

#[test]
fn cosine_schedule_decays_to_zero() {
    let s = LrSchedule::Cosine;
    assert_eq!(s.rate(1.0, 1, 100), 1.0);
    assert!((s.rate(1.0, 51, 100) - 0.5).abs() < 1e-12);
    assert!(s.rate(1.0, 100, 100) < 1e-3);
    assert_eq!(LrSchedule::Constant.rate(0.3, 77, 100), 0.3);
}

#[test]
fn checkpoint_carries_training_config() {
    let d = data(100);
    let mut m = model_for(&d);
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(5, "clap");
    train(&mut m, &d, &cfg, Some(dir.path())).unwrap();
    let (_, meta, opt) = load_checkpoint(&dir.path().join(FINAL_CHECKPOINT), DType::F32).unwrap();
    let stored: TrainConfig = serde_json::from_value(meta.extra["train_config"].clone()).unwrap();
    assert_eq!(stored, cfg);
    assert_eq!(opt.unwrap().step, 5);
}
