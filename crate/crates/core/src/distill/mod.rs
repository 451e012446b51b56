//! Time-based distillation: each frame's model is trained on that frame's rows
//! only, with earlier frames' models supplying soft targets.

mod chain;
mod config;
mod soft;

pub use chain::{
    evaluate, gather_teachers, record_model, run_schedule, teacher_set, train_frame, train_learner, FrameOutcome,
    FrameReport, ScheduleOutcome, TeacherEntry, TeacherLabels, TeacherRegistry, TrainedModel,
};
pub use config::{LatkdConfig, LearnerSettings, TeacherSource};
pub use soft::{materialize_soft_labels, CacheStats, SoftLabelCache, SoftLabelMatrix};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DesignMatrix;
    use crate::error::LatkdError;
    use crate::gbt::GbtConfig;
    use crate::mlp::{EarlyStopping, MlpTrainConfig};
    use crate::model::LearnerKind;
    use crate::registry::{RunDir, RunManifest};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use serde_json::json;

    fn frame(seed: u64, n: usize, shift: f64) -> DesignMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 3));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = u8::from(i % 5 == 0);
            for j in 0..3 {
                let centre = if label == 1 && j == 0 { 1.5 + shift } else { 0.0 };
                x[[i, j]] = centre + rng.gen_range(-1.0..1.0);
            }
            y.push(label);
        }
        DesignMatrix::labeled(x, y).unwrap()
    }

    fn small_config(learner: LearnerKind) -> LatkdConfig {
        LatkdConfig {
            learner,
            teacher_source: if learner == LearnerKind::Ensemble {
                TeacherSource::EnsembleChain
            } else {
                TeacherSource::SameLearner
            },
            seed: 11,
            learners: LearnerSettings {
                mlp_hidden: vec![8, 8],
                mlp: MlpTrainConfig {
                    batch_size: 16,
                    max_epochs: 5,
                    early_stopping: Some(EarlyStopping::default()),
                    ..MlpTrainConfig::default()
                },
                gbt: GbtConfig {
                    n_estimators: 8,
                    ..GbtConfig::default()
                },
                ..LearnerSettings::default()
            },
            ..LatkdConfig::default()
        }
    }

    fn registry_with(frames: &[usize]) -> TeacherRegistry {
        TeacherRegistry {
            chain: "c".into(),
            entries: frames
                .iter()
                .map(|&i| TeacherEntry {
                    frame_index: i,
                    model_hash: format!("h{i}"),
                    training_window: String::new(),
                    config_hash: String::new(),
                    created_at: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn teacher_set_bounds() {
        let reg = registry_with(&[0, 1, 2]);
        assert!(teacher_set(&reg, 0, 0).unwrap().is_empty());
        let got: Vec<usize> = teacher_set(&reg, 3, 1).unwrap().iter().map(|e| e.frame_index).collect();
        assert_eq!(got, vec![1, 2]);
        assert!(teacher_set(&reg, 3, 3).unwrap().is_empty());
        for k in 0..=3 {
            assert_eq!(teacher_set(&reg, 3, k).unwrap().len(), 3 - k);
        }
        assert!(teacher_set(&reg, 1, 2).is_err());
    }

    #[test]
    fn teacher_set_reports_gaps() {
        let reg = registry_with(&[0, 2]);
        match teacher_set(&reg, 4, 0) {
            Err(LatkdError::RegistryGap { missing, .. }) => assert_eq!(missing, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_frames_equal_baseline() {
        for learner in [LearnerKind::Mlp, LearnerKind::Gbt, LearnerKind::Ensemble] {
            let dir = tempfile::tempdir().unwrap();
            let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
            let mut cache = SoftLabelCache::new(run.cache_dir());
            let frames: Vec<DesignMatrix> = (0..3).map(|i| frame(i, 120, i as f64 * 0.3)).collect();
            let mut cfg = small_config(learner);
            cfg.truncation_start = 2;

            let out0 = train_frame(&mut run, &mut cache, "latkd", 0, &frames[0], &cfg, None).unwrap();
            let base0 = train_learner(&frames[0], &TeacherLabels::default(), &cfg).unwrap();
            assert_eq!(out0.model_hash, base0.model.content_hash().unwrap());

            train_frame(&mut run, &mut cache, "latkd", 1, &frames[1], &cfg, None).unwrap();
            let out2 = train_frame(&mut run, &mut cache, "latkd", 2, &frames[2], &cfg, None).unwrap();
            assert_eq!(out2.teachers, 0);
            let base2 = train_learner(&frames[2], &TeacherLabels::default(), &cfg).unwrap();
            assert_eq!(out2.model_hash, base2.model.content_hash().unwrap());
        }
    }

    #[test]
    fn teachers_change_the_loss_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::new(run.cache_dir());
        let frames: Vec<DesignMatrix> = (0..3).map(|i| frame(10 + i, 120, 0.0)).collect();
        let cfg = small_config(LearnerKind::Mlp);
        for t in 0..2 {
            train_frame(&mut run, &mut cache, "c", t, &frames[t], &cfg, None).unwrap();
        }
        let with = train_frame(&mut run, &mut cache, "c", 2, &frames[2], &cfg, None).unwrap();
        assert_eq!(with.teachers, 2);
        let without = train_learner(&frames[2], &TeacherLabels::default(), &cfg).unwrap();
        assert_ne!(with.loss_trace, without.loss_trace);
    }

    #[test]
    fn schedule_consumes_only_the_current_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::new(run.cache_dir());
        let frames: Vec<DesignMatrix> = [100, 140, 180].iter().enumerate().map(|(i, &n)| frame(i as u64, n, 0.0)).collect();
        let cfg = small_config(LearnerKind::Gbt);
        let out = run_schedule(&mut run, &mut cache, "c", &frames, Some(&frames[0]), &cfg).unwrap();
        assert_eq!(out.registry.len(), 3);
        let rows: Vec<usize> = out.frames.iter().map(|f| f.rows_consumed).collect();
        assert_eq!(rows, vec![100, 140, 180]);
        assert!(out.frames.iter().all(|f| f.metrics.contains_key("test_auprc")));
        // Frame 1 scored frame 0's model, frame 2 scored both.
        assert_eq!(cache.stats().evaluations, 3);
    }

    #[test]
    fn single_frame_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::disabled();
        let out = run_schedule(&mut run, &mut cache, "c", &[frame(1, 80, 0.0)], None, &small_config(LearnerKind::Gbt)).unwrap();
        assert_eq!(out.registry.len(), 1);
        assert_eq!(cache.stats().evaluations, 0);
    }

    fn hashes(m: &RunManifest) -> String {
        m.content_hash().unwrap()
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let frames: Vec<DesignMatrix> = (0..3).map(|i| frame(20 + i, 100, 0.2 * i as f64)).collect();
        let cfg = small_config(LearnerKind::Ensemble);

        let full = tempfile::tempdir().unwrap();
        let full_hash = {
            let mut run = RunDir::open(full.path(), "r", json!({})).unwrap();
            let mut cache = SoftLabelCache::new(run.cache_dir());
            run_schedule(&mut run, &mut cache, "c", &frames, None, &cfg).unwrap();
            hashes(run.manifest())
        };

        let resumed = tempfile::tempdir().unwrap();
        {
            let mut run = RunDir::open(resumed.path(), "r", json!({})).unwrap();
            let mut cache = SoftLabelCache::new(run.cache_dir());
            run_schedule(&mut run, &mut cache, "c", &frames[..2], None, &cfg).unwrap();
        }
        let mut run = RunDir::open(resumed.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::new(run.cache_dir());
        let out = run_schedule(&mut run, &mut cache, "c", &frames, None, &cfg).unwrap();
        assert_eq!(out.frames.iter().filter(|f| f.resumed).count(), 2);
        assert_eq!(hashes(run.manifest()), full_hash);
    }

    #[test]
    fn ensemble_same_learner_uses_members() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::disabled();
        let frames: Vec<DesignMatrix> = (0..2).map(|i| frame(30 + i, 100, 0.0)).collect();
        let mut cfg = small_config(LearnerKind::Ensemble);
        cfg.teacher_source = TeacherSource::SameLearner;
        run_schedule(&mut run, &mut cache, "c", &frames, None, &cfg).unwrap();
        // One scoring per member of the single teacher ensemble.
        assert_eq!(cache.stats().evaluations, 2);
    }

    #[test]
    fn ensemble_chain_requires_ensemble_learner() {
        let mut cfg = small_config(LearnerKind::Mlp);
        cfg.teacher_source = TeacherSource::EnsembleChain;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn wrong_teacher_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::disabled();
        let f = frame(1, 80, 0.0);
        train_frame(&mut run, &mut cache, "c", 0, &f, &small_config(LearnerKind::Gbt), None).unwrap();
        let err = train_frame(&mut run, &mut cache, "c", 1, &f, &small_config(LearnerKind::Mlp), None).unwrap_err();
        assert!(matches!(err, LatkdError::InvalidConfig(_)));
    }

    #[test]
    fn single_class_frame_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let mut cache = SoftLabelCache::disabled();
        let f = DesignMatrix::labeled(Array2::zeros((4, 3)), vec![0; 4]).unwrap();
        let err = run_schedule(&mut run, &mut cache, "c", &[f], None, &small_config(LearnerKind::Mlp)).unwrap_err();
        assert!(matches!(err, LatkdError::Frame { frame: 0, .. }));
        assert_eq!(err.kind(), "single_class");
    }
}
