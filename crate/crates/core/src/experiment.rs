//! Synthetic corpora, SDNC training runs and system evaluation shared by the
//! command line tool and the acceptance suite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{homogeneous_ids, reference_spans, DerResult};
use crate::pipeline::{cascade_with_labels, parallel_with_labels, run_cascaded, run_parallel, run_parallel_sc, score_meeting, Mode, PipelineConfig, PipelineOutput, SystemReport};
use crate::sdnc::{finetune_example, pretrain_example, slot_accuracy, train, LossPoint, SdncConfig, SdncModel, Stage, TrainConfig, TrainingExample};
use crate::segmentation::WindowingConfig;
use crate::synth::{gen_meeting, gen_windowed, Segmentation, SynthConfig};
use crate::types::{EmbeddingSequence, Meeting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub synth: SynthConfig,
    pub windowing: WindowingConfig,
    /// Training meetings take generator indices `0..train_meetings`.
    pub train_meetings: usize,
    /// Test meetings follow the training ones.
    pub test_meetings: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            synth: SynthConfig::default(),
            windowing: WindowingConfig::default(),
            train_meetings: 200,
            test_meetings: 40,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.windowing.validate()
    }

    pub fn train_indices(&self) -> std::ops::Range<u64> {
        0..self.train_meetings as u64
    }

    pub fn test_indices(&self) -> std::ops::Range<u64> {
        let s = self.train_meetings as u64;
        s..s + self.test_meetings as u64
    }
}

/// A meeting with its VAD window embeddings.
#[derive(Debug, Clone)]
pub struct MeetingData {
    pub meeting: Meeting,
    pub seq: EmbeddingSequence,
}

pub fn meeting_data(cfg: &CorpusConfig, index: u64) -> Result<MeetingData> {
    let meeting = gen_meeting(&cfg.synth, index)?;
    let seq = gen_windowed(&meeting, &cfg.synth, &cfg.windowing, Segmentation::Vad)?.seq;
    Ok(MeetingData { meeting, seq })
}

pub fn test_set(cfg: &CorpusConfig) -> Result<Vec<MeetingData>> {
    cfg.validate()?;
    cfg.test_indices().map(|i| meeting_data(cfg, i)).collect()
}

/// Pretraining and fine-tuning examples of the training meetings.
pub fn training_sets(cfg: &CorpusConfig) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>)> {
    cfg.validate()?;
    let mut pre = Vec::with_capacity(cfg.train_meetings);
    let mut fine = Vec::with_capacity(cfg.train_meetings);
    for i in cfg.train_indices() {
        let m = gen_meeting(&cfg.synth, i)?;
        pre.push(pretrain_example(&gen_windowed(&m, &cfg.synth, &cfg.windowing, Segmentation::FirstSpeaker)?)?);
        let seq = gen_windowed(&m, &cfg.synth, &cfg.windowing, Segmentation::Vad)?.seq;
        fine.push(finetune_example(&m, &seq)?);
    }
    Ok((pre, fine))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingRun {
    pub model: SdncConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub init_seed: u64,
}

impl Default for TrainingRun {
    fn default() -> Self {
        TrainingRun {
            model: SdncConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            init_seed: 0,
        }
    }
}

/// First Speaker pretraining followed by VAD fine-tuning.
pub fn train_two_stage(corpus: &CorpusConfig, run: &TrainingRun) -> Result<(SdncModel, Vec<LossPoint>)> {
    let (pre, fine) = training_sets(corpus)?;
    let mut model = SdncModel::new(run.model.clone(), run.init_seed)?;
    let mut curve = train(&mut model, &pre, Stage::PretrainFirstSpeaker, &run.pretrain)?;
    curve.extend(train(&mut model, &fine, Stage::FinetuneVad, &run.finetune)?);
    Ok((model, curve))
}

/// Slot label accuracy over all slots of the given meetings, with the
/// reference speaker counts as the decode plan.
pub fn slot_accuracy_on(model: &SdncModel, data: &[MeetingData]) -> Result<f64> {
    let (mut hit, mut total) = (0.0, 0usize);
    for d in data {
        let ex = finetune_example(&d.meeting, &d.seq)?;
        let out = model.predict(&ex.seq, &ex.plan)?;
        hit += slot_accuracy(&out.labels, &ex.target.labels)? * ex.target.len() as f64;
        total += ex.target.len();
    }
    if total == 0 {
        return Err(Error::Validation("no slots to score".into()));
    }
    Ok(hit / total as f64)
}

/// Runs one system on one meeting.
pub fn run_system(d: &MeetingData, model: Option<&SdncModel>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    match cfg.mode {
        Mode::CascadedSc => run_cascaded(&d.meeting, &d.seq, cfg),
        Mode::ParallelSc => run_parallel_sc(&d.meeting, &d.seq, cfg),
        Mode::ParallelSdnc => {
            let model = model.ok_or_else(|| Error::Config("parallel_sdnc needs a trained model".into()))?;
            run_parallel(&d.meeting, &d.seq, model, cfg)
        }
    }
}

/// Runs the chosen system with reference labels in place of the clusterer.
/// `parallel_sc` shares the parallel assembly and is treated as
/// `parallel_sdnc`.
pub fn run_oracle(d: &MeetingData, corpus: &CorpusConfig, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    match cfg.mode {
        Mode::CascadedSc => {
            let owners = gen_windowed(&d.meeting, &corpus.synth, &corpus.windowing, Segmentation::Vad)?.owners;
            let mut names: Vec<&String> = Vec::new();
            let labels: Vec<usize> = owners
                .iter()
                .map(|o| match names.iter().position(|n| *n == o) {
                    Some(i) => i + 1,
                    None => {
                        names.push(o);
                        names.len()
                    }
                })
                .collect();
            cascade_with_labels(&d.meeting, &d.seq, &labels, cfg)
        }
        Mode::ParallelSdnc | Mode::ParallelSc => {
            let target = finetune_example(&d.meeting, &d.seq)?.target;
            parallel_with_labels(&d.meeting, target, cfg)
        }
    }
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    let chunk = items.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

/// Outputs and scores of one system over a meeting set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub outputs: Vec<PipelineOutput>,
    pub report: SystemReport,
    /// DER-H pooled over all meetings.
    pub pooled_der_h: DerResult,
    /// DER pooled over all meetings.
    pub pooled_der: DerResult,
}

pub fn evaluate(
    data: &[MeetingData],
    model: Option<&SdncModel>,
    cfg: &PipelineConfig,
    config_hash: &str,
    jobs: usize,
) -> Result<Evaluation> {
    let results = par_map(data, jobs, |d| {
        let out = run_system(d, model, cfg)?;
        let scores = score_meeting(&d.meeting, &out, &cfg.der)?;
        let h = homogeneous_ids(&d.meeting);
        let der_h = crate::metrics::der(&reference_spans(&d.meeting, Some(&h)), &out.hyp_spans_h, &cfg.der)?;
        let der = crate::metrics::der(&reference_spans(&d.meeting, None), &out.hyp_spans, &cfg.der)?;
        Ok((out, scores, der_h, der))
    })?;
    let mut outputs = Vec::with_capacity(results.len());
    let mut meetings = BTreeMap::new();
    let mut pooled_der_h = DerResult::default();
    let mut pooled_der = DerResult::default();
    for (out, scores, der_h, der) in results {
        pooled_der_h.add(&der_h);
        pooled_der.add(&der);
        meetings.insert(out.meeting_id.clone(), scores);
        outputs.push(out);
    }
    Ok(Evaluation {
        outputs,
        report: SystemReport {
            system: cfg.mode.as_str().to_string(),
            config_hash: config_hash.to_string(),
            meetings,
        },
        pooled_der_h,
        pooled_der,
    })
}
