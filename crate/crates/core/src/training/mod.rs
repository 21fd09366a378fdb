//! Training loop, evaluation metrics and threshold tuning.

mod metrics;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{accuracy, category_stats, evaluate_multi, CategoryStats, EvalReport, MultiMetrics};

use crate::data::{Batch, Category, LabelSet, Story, Task};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::models::{predict_multi, EmbeddingInput, EpochRecord, Mode, Model, ModelConfig, Target, TrainedModel};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};

fn target(story: &Story, task: Task) -> Target {
    match task {
        Task::Single(c) => Target::Class(story.class(c)),
        Task::Multi => Target::Flags(story.labels.flags()),
    }
}

/// Losses observed during one pass over the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean example loss of each mini-batch, in visiting order (before its update).
    pub batch_losses: Vec<f64>,
    /// Mean example loss over the epoch.
    pub mean_loss: f64,
    /// Pre-clipping global gradient norm of each mini-batch.
    pub grad_norms: Vec<f64>,
}

/// Mini-batch Adam over one model, one epoch at a time.
pub struct Trainer {
    model: Model,
    adam: AdamState,
    adam_config: AdamConfig,
    batch: Batch,
    targets: Vec<Target>,
    epoch: usize,
}

impl Trainer {
    /// Builds vocabularies from `train` and initializes the model.
    pub fn new(config: ModelConfig, train: &[Story]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let model = Model::from_training_texts(config, train.iter().map(|s| s.text.as_str()))?;
        Trainer::from_model(model, train)
    }

    /// Continues from an existing model (its vocabularies are kept).
    pub fn from_model(model: Model, train: &[Story]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let texts: Vec<&str> = train.iter().map(|s| s.text.as_str()).collect();
        let batch = model.encode_texts(&texts);
        if let Some(i) = batch.lengths.iter().position(|&l| l == 0) {
            return Err(Error::InvalidInput(format!("story {} has no tokens", train[i].id)));
        }
        let targets = train.iter().map(|s| target(s, model.config.task)).collect();
        let adam_config = AdamConfig {
            lr: model.config.learning_rate,
            ..AdamConfig::default()
        };
        Ok(Trainer {
            adam: AdamState::new(&model.params),
            adam_config,
            model,
            batch,
            targets,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Sum of per-example gradients (and losses) for the examples at `indices`.
    fn accumulate(&self, indices: &[usize], first_position: usize) -> Result<(Gradients, f64)> {
        let model = &self.model;
        let mut total = Gradients::new(model.params.len());
        let mut loss_sum = 0.0;
        for (offset, &i) in indices.iter().enumerate() {
            let mut g = Graph::new(&model.params);
            let seed = model.dropout_seed(self.epoch, first_position + offset);
            let f = model.forward(&mut g, self.batch.example(i), EmbeddingInput::Lookup, Mode::Train { seed })?;
            let loss = model.loss(&mut g, f.logits, &self.targets[i])?;
            loss_sum += g.value(loss).data()[0];
            let back = g.backward(loss)?;
            total.merge(back.into_param_grads(&g));
        }
        Ok((total, loss_sum))
    }

    /// One shuffled pass over the training split.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.epoch += 1;
        let n = self.targets.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);

        let bs = self.model.config.batch_size;
        let mut batch_losses = Vec::with_capacity(n.div_ceil(bs));
        let mut grad_norms = Vec::with_capacity(n.div_ceil(bs));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let (mut grads, loss_sum) = self.accumulate(chunk, b * bs)?;
            let k = chunk.len() as f64;
            grads.scale(1.0 / k);
            grad_norms.push(clip_global_norm(&mut grads, self.model.config.clip_norm)?);
            adam_step(&mut self.model.params, &grads, &mut self.adam, &self.adam_config)?;
            if !self.model.params.all_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {} batch {}", self.epoch, b + 1)));
            }
            batch_losses.push(loss_sum / k);
            total += loss_sum;
        }
        Ok(EpochStats {
            epoch: self.epoch,
            batch_losses,
            mean_loss: total / n as f64,
            grad_norms,
        })
    }
}

/// Trains with per-epoch dev evaluation, keeping the best-dev parameters and stopping
/// after `patience` epochs without improvement.
pub fn train(config: ModelConfig, train_split: &[Story], dev: &[Story]) -> Result<TrainedModel> {
    train_with_progress(config, train_split, dev, |_| {})
}

pub fn train_with_progress(
    config: ModelConfig,
    train_split: &[Story],
    dev: &[Story],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    if dev.is_empty() {
        return Err(Error::InvalidInput("dev split is empty".into()));
    }
    let max_epochs = config.max_epochs;
    let patience = config.patience;
    let mut trainer = Trainer::new(config, train_split)?;
    let mut best_params = trainer.model().params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    for _ in 0..max_epochs {
        let stats = trainer.run_epoch()?;
        let dev_metric = evaluate(trainer.model(), dev)?.primary();
        let record = EpochRecord {
            epoch: stats.epoch,
            train_loss: stats.mean_loss,
            dev_metric,
        };
        log::info!(
            "epoch {} train loss {:.6} dev {:.6}",
            record.epoch,
            record.train_loss,
            record.dev_metric
        );
        on_epoch(&record);
        history.push(record);
        if dev_metric > best_metric {
            best_metric = dev_metric;
            best_epoch = Some(stats.epoch);
            best_params.copy_from(&trainer.model().params)?;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                break;
            }
        }
    }
    let mut model = trainer.into_model();
    model.params.copy_from(&best_params)?;
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
        best_dev_metric: best_metric,
    })
}

fn encode(model: &Model, stories: &[Story]) -> Result<Batch> {
    if stories.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let texts: Vec<&str> = stories.iter().map(|s| s.text.as_str()).collect();
    Ok(model.encode_texts(&texts))
}

/// Argmax class per story of a single-label model (ties go to class 0).
pub fn predict_single(model: &Model, stories: &[Story]) -> Result<Vec<usize>> {
    let probs = model.probabilities_single(&encode(model, stories)?)?;
    Ok(probs.iter().map(|p| usize::from(p[1] > p[0])).collect())
}

/// Sigmoid activations per story of a multi-label model.
pub fn multi_activations(model: &Model, stories: &[Story]) -> Result<Vec<[f64; 3]>> {
    model.activations_multi(&encode(model, stories)?)
}

/// Accuracy of a single-label model.
pub fn evaluate_single(model: &Model, stories: &[Story]) -> Result<f64> {
    let Task::Single(c) = model.config.task else {
        return Err(Error::InvalidConfig("evaluate_single needs a single-label model".into()));
    };
    let gold: Vec<usize> = stories.iter().map(|s| s.class(c)).collect();
    accuracy(&predict_single(model, stories)?, &gold)
}

/// Full report for either task; multi-label predictions use the model's threshold.
pub fn evaluate(model: &Model, stories: &[Story]) -> Result<EvalReport> {
    match model.config.task {
        Task::Single(c) => {
            let pred = predict_single(model, stories)?;
            let gold: Vec<usize> = stories.iter().map(|s| s.class(c)).collect();
            Ok(EvalReport {
                task: model.config.task,
                examples: stories.len(),
                accuracy: Some(accuracy(&pred, &gold)?),
                exact_match: None,
                hamming_score: None,
                threshold: None,
                per_category: vec![category_stats(
                    c,
                    pred.iter().map(|&p| p == 1),
                    gold.iter().map(|&g| g == 1),
                )],
            })
        }
        Task::Multi => {
            let acts = multi_activations(model, stories)?;
            Ok(multi_report(&acts, stories, model.config.threshold)?)
        }
    }
}

/// Multi-label report from precomputed activations at threshold `t`.
pub fn multi_report(activations: &[[f64; 3]], stories: &[Story], t: f64) -> Result<EvalReport> {
    let pred: Vec<LabelSet> = activations.iter().map(|a| LabelSet::from_flags(predict_multi(a, t))).collect();
    let gold: Vec<LabelSet> = stories.iter().map(|s| s.labels).collect();
    let m = evaluate_multi(&pred, &gold)?;
    let per_category = Category::ALL
        .iter()
        .map(|&c| category_stats(c, pred.iter().map(|p| p.contains(c)), gold.iter().map(|g| g.contains(c))))
        .collect();
    Ok(EvalReport {
        task: Task::Multi,
        examples: stories.len(),
        accuracy: None,
        exact_match: Some(m.exact_match),
        hamming_score: Some(m.hamming_score),
        threshold: Some(t),
        per_category,
    })
}

/// Threshold grid `0.30, 0.35, …, 0.70`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=8).map(|i| f64::from(30 + 5 * i) / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub hamming_score: f64,
    /// `(t, dev Hamming score)` for every grid value.
    pub grid: Vec<(f64, f64)>,
}

/// Grid value maximizing the Hamming score of the given activations; ties go to the smallest `t`.
pub fn choose_threshold(activations: &[[f64; 3]], stories: &[Story], grid: &[f64]) -> Result<ThresholdChoice> {
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidConfig("threshold grid must be non-empty and inside (0, 1)".into()));
    }
    let gold: Vec<LabelSet> = stories.iter().map(|s| s.labels).collect();
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scored = Vec::with_capacity(sorted.len());
    for &t in &sorted {
        let pred: Vec<LabelSet> = activations.iter().map(|a| LabelSet::from_flags(predict_multi(a, t))).collect();
        scored.push((t, evaluate_multi(&pred, &gold)?.hamming_score));
    }
    let (threshold, hamming_score) = scored
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(ThresholdChoice {
        threshold,
        hamming_score,
        grid: scored,
    })
}

/// Dev-set threshold tuning of a multi-label model.
pub fn tune_threshold(model: &Model, dev: &[Story], grid: &[f64]) -> Result<ThresholdChoice> {
    let acts = multi_activations(model, dev)?;
    choose_threshold(&acts, dev, grid)
}

/// Writes `epoch,train_loss,dev_metric` rows.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,dev_metric\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.dev_metric));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
