//! Multi-task maximum-likelihood training.

pub mod align;
pub mod checkpoint;
pub mod config;
pub mod optim;

use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{Gradients, Graph, Model, ModelConfig};

pub use align::{align_gold, TrainingExample};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use config::{AlignPolicy, OptimizerKind, TrainingConfig};
pub use optim::{clip_global_norm, Optimizer};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-token negative log-likelihood of the mixture.
    pub task1_nll: f64,
    /// Mean per-token negative log-likelihood of the type-substituted target.
    pub task2_nll: f64,
    pub lr: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub vocab: Vocabulary,
    pub history: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
    pub skipped_pairs: usize,
}

/// Aligns every pair; pairs dropped by the policy are counted.
pub fn prepare_examples(
    dataset: &Dataset,
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    policy: AlignPolicy,
) -> Result<(Vec<TrainingExample>, usize)> {
    let mut examples = Vec::with_capacity(dataset.len());
    let mut skipped = 0;
    for pair in &dataset.pairs {
        match align_gold(pair, kb, vocab, policy)? {
            Some(ex) => examples.push(ex),
            None => skipped += 1,
        }
    }
    Ok((examples, skipped))
}

struct ExampleGrad {
    grads: Gradients,
    task1: f64,
    task2: f64,
    tokens: usize,
}

fn example_gradient(model: &Model, ex: &TrainingExample, config: &TrainingConfig) -> Result<ExampleGrad> {
    let mut g = Graph::new(&model.store);
    let loss = model.sequence_loss(&mut g, &ex.prepared.token_ids, &ex.prepared.features, &ex.labels)?;
    let mut terms = vec![(loss.task1, 1.0)];
    let w2 = config.effective_task2_weight();
    if let (Some(t2), true) = (loss.task2, w2 > 0.0) {
        terms.push((t2, w2));
    }
    if let (Some(gate), true) = (loss.gate, config.gate_supervision) {
        terms.push((gate, 1.0));
    }
    let total = g.total(&terms);
    let mut grads = Gradients::zeros_like(&model.store);
    g.backward(total, &mut grads);
    Ok(ExampleGrad {
        grads,
        task1: g.scalar(loss.task1),
        task2: loss.task2.map(|t| g.scalar(t)).filter(|_| w2 > 0.0).unwrap_or(0.0),
        tokens: loss.steps,
    })
}

/// Per-example gradients of a batch, computed on worker threads and
/// returned in batch order so the sum does not depend on scheduling.
fn batch_gradients(model: &Model, batch: &[&TrainingExample], config: &TrainingConfig) -> Result<Vec<ExampleGrad>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(batch.len()).max(1);
    if workers == 1 {
        return batch.iter().map(|ex| example_gradient(model, ex, config)).collect();
    }
    let mut slots: Vec<Option<Result<ExampleGrad>>> = (0..batch.len()).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..batch.len())
                        .step_by(workers)
                        .map(|i| (i, example_gradient(model, batch[i], config)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("gradient worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every example computed")).collect()
}

/// Builds the vocabulary from `dataset` and trains.
pub fn train(dataset: &Dataset, kb: &KnowledgeBase, config: &TrainingConfig) -> Result<TrainOutcome> {
    let vocab = Vocabulary::build(dataset, kb, config.min_count)?;
    train_with_vocab(dataset, kb, vocab, config, |_| Ok(()))
}

/// Trains a fresh model; `on_epoch` sees each epoch's metrics as soon as
/// the epoch ends.
pub fn train_with_vocab(
    dataset: &Dataset,
    kb: &KnowledgeBase,
    vocab: Vocabulary,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    vocab.check_covers(kb)?;
    let (examples, skipped_pairs) = prepare_examples(dataset, kb, &vocab, config.align_policy)?;
    if examples.is_empty() {
        return Err(Error::Input("every training pair was skipped during alignment".into()));
    }
    if skipped_pairs > 0 {
        log::warn!("{skipped_pairs} pairs skipped during alignment");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model_config = ModelConfig {
        d_emb: config.d_emb,
        d_h: config.d_h,
        variant: config.variant,
        init_scale: config.init_scale,
    };
    let mut model = Model::new(model_config, vocab.common_len(), &mut rng);
    let mut optimizer = Optimizer::new(config.optimizer, &model.store);
    let mut history = Vec::with_capacity(config.total_epochs());
    let mut steps = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..config.total_epochs() {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut sum1, mut sum2, mut tokens, mut norm_sum, mut n_steps) = (0.0, 0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let per_example = batch_gradients(&model, &batch, config)?;
            let mut grads = Gradients::zeros_like(&model.store);
            for eg in &per_example {
                grads.add_scaled(&eg.grads, 1.0 / batch.len() as f64);
                sum1 += eg.task1;
                sum2 += eg.task2;
                tokens += eg.tokens;
            }
            if !sum1.is_finite() || !sum2.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient in epoch {} step {} (lr {lr}, task1 sum {sum1}, task2 sum {sum2})",
                    epoch + 1,
                    n_steps + 1
                )));
            }
            let norm = clip_global_norm(&mut grads, config.grad_clip);
            steps.push(StepRecord {
                epoch,
                lr,
                grad_norm: norm,
                clipped_norm: grads.global_norm(),
            });
            optimizer.step(&mut model.store, &grads, lr);
            norm_sum += norm;
            n_steps += 1;
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            task1_nll: sum1 / tokens as f64,
            task2_nll: sum2 / tokens as f64,
            lr,
            grad_norm: norm_sum / n_steps as f64,
        };
        log::info!(
            "epoch {} lr {} task1 {:.4} task2 {:.4} grad {:.3}",
            metrics.epoch,
            metrics.lr,
            metrics.task1_nll,
            metrics.task2_nll,
            metrics.grad_norm
        );
        on_epoch(&metrics)?;
        history.push(metrics);
    }
    Ok(TrainOutcome {
        model,
        vocab,
        history,
        steps,
        skipped_pairs,
    })
}
