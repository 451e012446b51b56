//! Recurring-pattern study: does the teacher chain remember a fraud pattern
//! that vanished from the recent frames?

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{run_schedule, train_learner, LatkdConfig, SoftLabelCache, TeacherLabels};
use crate::driftgen::{generate, DriftScenario};
use crate::error::{LatkdError, Result};
use crate::eval::{average_precision, recall_at, top_k_threshold};
use crate::model::{positive_scores, Model};
use crate::registry::RunDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceOutcome {
    pub scenario_seed: u64,
    pub training_seed: u64,
    /// Frame whose models are compared (the one before the pattern returns).
    pub trained_frame: usize,
    pub baseline_auprc: f64,
    pub latkd_auprc: f64,
    /// Recall on the returning cluster's rows at a top-k alert budget, with k
    /// the number of positives in the test sample.
    pub baseline_recall: f64,
    pub latkd_recall: f64,
}

/// Trains a window-only model and a distilled model on the frame just before
/// the scenario's recurrence, and scores both on a fresh sample of the
/// recurrence frame.
pub fn recurrence_study(
    scenario: &DriftScenario,
    config: &LatkdConfig,
    test_rows: usize,
    workdir: &Path,
) -> Result<RecurrenceOutcome> {
    let recurrence = scenario
        .recurrence
        .as_ref()
        .ok_or_else(|| LatkdError::InvalidConfig("scenario has no recurrence".into()))?;
    let r = recurrence.frame_index;
    if r == 0 {
        return Err(LatkdError::InvalidConfig("recurrence frame must be after frame 0".into()));
    }
    let stream = generate(scenario)?;
    let history = &stream.frames[..r];
    let (test, assignment) = scenario.sample_frame(r, test_rows, 1)?;
    let labels = test.hard_labels()?;
    let cluster_rows: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == recurrence.cluster)
        .map(|(i, _)| i)
        .collect();
    let k = labels.iter().filter(|&&l| l == 1).count();

    let mut run = RunDir::open(workdir, "recurrence-study", serde_json::to_value(config)?)?;
    let mut cache = SoftLabelCache::new(run.cache_dir().join("softlabels"));
    let schedule = run_schedule(&mut run, &mut cache, "latkd", history, None, config)?;
    let latkd_hash = &schedule.frames[r - 1].model_hash;
    let latkd = Model::load(run.store(), latkd_hash)?;
    let baseline = train_learner(&history[r - 1], &TeacherLabels::default(), config)?.model;

    let measure = |model: &Model| -> Result<(f64, f64)> {
        let scores = positive_scores(model, test.features.view())?;
        let ap = average_precision(&scores, &labels)?;
        let threshold = top_k_threshold(&scores, k).ok_or(LatkdError::NoPositives)?;
        let recall = recall_at(&scores, &cluster_rows, threshold).ok_or_else(|| {
            LatkdError::InfeasibleScenario(format!("no `{}` rows in the test sample", recurrence.cluster))
        })?;
        Ok((ap, recall))
    };
    let (baseline_auprc, baseline_recall) = measure(&baseline)?;
    let (latkd_auprc, latkd_recall) = measure(&latkd)?;
    Ok(RecurrenceOutcome {
        scenario_seed: scenario.seed,
        training_seed: config.seed,
        trained_frame: r - 1,
        baseline_auprc,
        latkd_auprc,
        baseline_recall,
        latkd_recall,
    })
}
