use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{SdncModel, TrainingExample};
use crate::augment::{apply_rotation, rotation_seed, sample_orthogonal, speaker_shuffle};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, AdamConfig, Graph};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainFirstSpeaker,
    FinetuneVad,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PretrainFirstSpeaker => "pretrain_first_speaker",
            Stage::FinetuneVad => "finetune_vad",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub shuffle: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shuffle: true,
            rotate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Cosine decay of the learning rate over the steps of one `train`
    /// call, down to `lr * MIN_DECAY`.
    pub lr_decay: bool,
    pub clip_norm: f64,
    /// Meetings per optimizer step.
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            warmup_steps: 200,
            lr_decay: true,
            clip_norm: 1.0,
            batch_size: 1,
            augment: AugmentConfig::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at global optimizer step `step`, which is step
    /// `local` of `total` in the current call.
    fn lr_at(&self, step: usize, local: usize, total: usize) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decay = if self.lr_decay && total > 1 {
            let c = 0.5 * (1.0 + (std::f64::consts::PI * local as f64 / (total - 1) as f64).cos());
            MIN_DECAY + (1.0 - MIN_DECAY) * c
        } else {
            1.0
        };
        self.lr * warm * decay
    }
}

const MIN_DECAY: f64 = 0.05;

/// Mean training loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub stage: Stage,
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn write_loss_csv(points: &[LossPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("stage,epoch,mean_loss\n");
    for p in points {
        s.push_str(&format!("{},{},{:.6}\n", p.stage, p.epoch, p.mean_loss));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn augmented(ex: &TrainingExample, cfg: &TrainConfig, epoch: u64, index: u64) -> Result<TrainingExample> {
    let mut seq = ex.seq.clone();
    if cfg.augment.shuffle {
        let seed = rng::derive_seed(cfg.seed, &[tag::SHUFFLE, epoch, index]);
        seq = speaker_shuffle(&seq, &ex.segment_speakers, seed)?;
    }
    if cfg.augment.rotate {
        let q = sample_orthogonal(seq.dim, rotation_seed(cfg.seed, epoch, index));
        seq = apply_rotation(&seq, &q)?;
    }
    Ok(TrainingExample { seq, ..ex.clone() })
}

/// Trains `model` in place for `cfg.epochs` epochs and returns the per-epoch
/// mean loss. Adam state, including the warmup position, carries over
/// between calls.
pub fn train(
    model: &mut SdncModel,
    examples: &[TrainingExample],
    stage: Stage,
    cfg: &TrainConfig,
) -> Result<Vec<LossPoint>> {
    cfg.validate()?;
    let k = model.config.max_clusters;
    for ex in examples {
        if ex.target.num_clusters() > k {
            return Err(Error::TooManyClusters {
                label: ex.target.num_clusters(),
                max: k,
            });
        }
        ex.plan.check_max(k)?;
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let stage_tag = stage as u64;
    let mut curve = Vec::with_capacity(cfg.epochs);
    if examples.is_empty() {
        return Ok(curve);
    }
    let total_steps = cfg.epochs * examples.len().div_ceil(cfg.batch_size);
    let mut local_step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::ORDER, stage_tag, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.params.zero_grads();
            for &i in batch {
                let epoch_key = stage_tag << 32 | epoch as u64;
                let ex = augmented(&examples[i], cfg, epoch_key, i as u64)?;
                let mut dropout_rng = rng::stream(cfg.seed, &[tag::DROPOUT, epoch_key, i as u64]);
                let use_dropout = (model.config.dropout > 0.0).then_some(&mut dropout_rng);
                let mut g = Graph::new();
                let loss = model.loss_graph(&mut g, &model.params, &ex.seq, &ex.plan, &ex.target, use_dropout)?;
                total += g.value(loss).to_scalar();
                let grads = g.backward(loss, model.params.len())?;
                model.params.accumulate(&grads);
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            model.params.clip_grad_norm(cfg.clip_norm);
            let adam = AdamConfig {
                lr: cfg.lr_at(model.params.adam_steps_taken() as usize, local_step, total_steps),
                ..Default::default()
            };
            model.params.adam_step(&adam)?;
            local_step += 1;
        }
        let point = LossPoint {
            stage,
            epoch: epoch + 1,
            mean_loss: total / examples.len() as f64,
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            let header = serde_json::json!({
                "model": model.config,
                "stage": stage,
                "epoch": point.epoch,
                "mean_loss": point.mean_loss,
            });
            let path = dir.join(format!("{stage}-epoch{:03}.ckpt", point.epoch));
            checkpoint::save(&model.params, &header.to_string(), path)?;
        }
        curve.push(point);
    }
    Ok(curve)
}
