use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{cross_mask, plan_ranges, DecodePlan, SdncConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{sinusoidal_positions, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{AttentionMask, Graph, ModelParams, ParamId, Tensor, Var};
use crate::rng::{self, tag};
use crate::types::{EmbeddingSequence, LabelSequence};

/// Number of learned segment-ordinal buckets on the encoder input.
const SEGMENT_BUCKETS: usize = 16;
/// Window offsets from the segment start and end are clipped to this many
/// buckets.
const OFFSET_BUCKETS: usize = 8;
const POSITION_SCALE: f64 = 0.1;
const EMBED_STD: f64 = 0.1;
const OUTPUT_INIT_SCALE: f64 = 0.01;
const POINTER_MIX_INIT: f64 = 4.0;

/// Encoder features, one row per input window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub features: Tensor,
    pub segment_ids: Vec<usize>,
}

impl EncoderOutput {
    fn segment_ranges(&self) -> Vec<Range<usize>> {
        contiguous_ranges(&self.segment_ids)
    }
}

fn contiguous_ranges(ids: &[usize]) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for (j, id) in ids.iter().enumerate() {
        match out.last_mut() {
            Some(r) if ids[r.start] == *id => r.end = j + 1,
            _ => out.push(j..j + 1),
        }
    }
    out
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNorm,
    null_k: ParamId,
    null_v: ParamId,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Linear,
    segment_emb: ParamId,
    start_emb: ParamId,
    end_emb: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_ln: LayerNorm,
    rank_emb: ParamId,
    count_emb: ParamId,
    label_emb: ParamId,
    decoder: Vec<DecoderLayer>,
    dec_ln: LayerNorm,
    output: Linear,
    pointer: Pointer,
}

/// Attention from each slot to the earlier slots whose result is the
/// distribution of their labels. The null key stands for the next unused
/// label.
#[derive(Debug, Clone)]
struct Pointer {
    query: Linear,
    key: Linear,
    null_k: ParamId,
    mix: ParamId,
}

/// Decoder-side description of the output slots.
struct SlotInfo {
    segment: Vec<usize>,
    rank: Vec<usize>,
}

impl SlotInfo {
    fn from_plan(plan: &DecodePlan) -> Self {
        let (segment, rank) = plan.slots().into_iter().unzip();
        SlotInfo { segment, rank }
    }

    fn prefix(&self, len: usize) -> SlotInfo {
        SlotInfo {
            segment: self.segment[..len].to_vec(),
            rank: self.rank[..len].to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.segment.len()
    }
}

/// Encoder-decoder model with its parameters.
#[derive(Debug, Clone)]
pub struct SdncModel {
    pub config: SdncConfig,
    pub params: ModelParams,
    layout: Layout,
}

fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let (r, c) = (g.value(x).rows(), g.value(x).cols());
    let keep = 1.0 / (1.0 - p);
    let data = (0..r * c).map(|_| if rng.random_bool(p) { 0.0 } else { keep }).collect();
    let m = g.constant(Tensor::from_vec(r, c, data)?);
    g.mul(x, m)
}

impl SdncModel {
    pub fn new(config: SdncConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, &[tag::INIT]);
        let mut p = ModelParams::new();
        let (d, h, f, k) = (config.dim_model, config.num_heads, config.ffn_dim, config.max_clusters);

        let input = Linear::new(&mut p, "enc.input", config.input_dim, d, &mut r)?;
        let segment_emb = p.add_normal("enc.segment_emb", SEGMENT_BUCKETS, d, EMBED_STD, &mut r)?;
        let start_emb = p.add_normal("enc.start_emb", OFFSET_BUCKETS, d, EMBED_STD, &mut r)?;
        let end_emb = p.add_normal("enc.end_emb", OFFSET_BUCKETS, d, EMBED_STD, &mut r)?;
        let mut encoder = Vec::with_capacity(config.enc_layers);
        for l in 0..config.enc_layers {
            let n = format!("enc.{l}");
            encoder.push(EncoderLayer {
                ln1: LayerNorm::new(&mut p, &format!("{n}.ln1"), d)?,
                attn: MultiHeadAttention::new(&mut p, &format!("{n}.attn"), d, h, &mut r)?,
                ln2: LayerNorm::new(&mut p, &format!("{n}.ln2"), d)?,
                ffn: FeedForward::new(&mut p, &format!("{n}.ffn"), d, f, &mut r)?,
            });
        }
        let enc_ln = LayerNorm::new(&mut p, "enc.ln", d)?;

        let rank_emb = p.add_normal("dec.rank_emb", k, d, EMBED_STD, &mut r)?;
        let count_emb = p.add_normal("dec.count_emb", k + 1, d, EMBED_STD, &mut r)?;
        // Row 0 stands for a label that has not been decided yet.
        let label_emb = p.add_normal("dec.label_emb", k + 1, d, EMBED_STD, &mut r)?;
        let mut decoder = Vec::with_capacity(config.dec_layers);
        for l in 0..config.dec_layers {
            let n = format!("dec.{l}");
            decoder.push(DecoderLayer {
                ln_self: LayerNorm::new(&mut p, &format!("{n}.ln_self"), d)?,
                null_k: p.add_normal(&format!("{n}.null_k"), 1, d, EMBED_STD, &mut r)?,
                null_v: p.add_normal(&format!("{n}.null_v"), 1, d, EMBED_STD, &mut r)?,
                self_attn: MultiHeadAttention::new_tied(&mut p, &format!("{n}.self"), d, h, &mut r)?,
                ln_cross: LayerNorm::new(&mut p, &format!("{n}.ln_cross"), d)?,
                cross_attn: MultiHeadAttention::new(&mut p, &format!("{n}.cross"), d, h, &mut r)?,
                ln_ffn: LayerNorm::new(&mut p, &format!("{n}.ln_ffn"), d)?,
                ffn: FeedForward::new(&mut p, &format!("{n}.ffn"), d, f, &mut r)?,
            });
        }
        let dec_ln = LayerNorm::new(&mut p, "dec.ln", d)?;
        let output = Linear::new(&mut p, "dec.output", d, k, &mut r)?;
        let w = p.value(output.w).scale(OUTPUT_INIT_SCALE);
        *p.value_mut(output.w) = w;
        let pointer = Pointer {
            query: Linear::new(&mut p, "dec.ptr.query", d, d, &mut r)?,
            key: Linear::new(&mut p, "dec.ptr.key", d, d, &mut r)?,
            null_k: p.add_normal("dec.ptr.null_k", 1, d, EMBED_STD, &mut r)?,
            mix: p.add("dec.ptr.mix", Tensor::identity(k).scale(POINTER_MIX_INIT))?,
        };

        Ok(SdncModel {
            config,
            params: p,
            layout: Layout {
                input,
                segment_emb,
                start_emb,
                end_emb,
                encoder,
                enc_ln,
                rank_emb,
                count_emb,
                label_emb,
                decoder,
                dec_ln,
                output,
                pointer,
            },
        })
    }

    /// Writes the parameters with a JSON header holding the model config.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let header = serde_json::json!({ "model": self.config });
        crate::nn::checkpoint::save(&self.params, &header.to_string(), path)
    }

    /// Restores a model from any checkpoint whose header carries a `model`
    /// config, including the per-epoch training checkpoints.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = crate::nn::checkpoint::read_header(path)?;
        let parse_err = |message: String| Error::Parse {
            context: path.display().to_string(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(&header).map_err(|e| parse_err(e.to_string()))?;
        let config: SdncConfig = serde_json::from_value(value.get("model").cloned().unwrap_or_default())
            .map_err(|e| parse_err(format!("checkpoint header: {e}")))?;
        let mut model = SdncModel::new(config, 0)?;
        crate::nn::checkpoint::load_into(&mut model.params, path)?;
        Ok(model)
    }

    /// Builds the encoder on `g`. `rng` enables dropout.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        seq: &EmbeddingSequence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if seq.is_empty() {
            return Err(Error::Validation("cannot encode an empty sequence".into()));
        }
        if seq.dim != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                got: seq.dim,
            });
        }
        let n = seq.len();
        let lay = &self.layout;
        let x = Tensor::from_rows(&seq.windows.iter().map(|w| w.vector.clone()).collect::<Vec<_>>())?;
        let x = g.constant(x);
        let mut h = lay.input.forward(g, params, x)?;

        let pos = sinusoidal_positions(n, self.config.dim_model).scale(POSITION_SCALE);
        let pos = g.constant(pos);
        h = g.add(h, pos)?;
        let ranges: Vec<Range<usize>> = seq.segment_ranges().into_iter().map(|(_, r)| r).collect();
        let mut seg_idx = Vec::with_capacity(n);
        let mut start_idx = Vec::with_capacity(n);
        let mut end_idx = Vec::with_capacity(n);
        for (ordinal, r) in ranges.iter().enumerate() {
            for j in r.clone() {
                seg_idx.push(ordinal % SEGMENT_BUCKETS);
                start_idx.push((j - r.start).min(OFFSET_BUCKETS - 1));
                end_idx.push((r.end - 1 - j).min(OFFSET_BUCKETS - 1));
            }
        }
        for (table, idx) in [(lay.segment_emb, &seg_idx), (lay.start_emb, &start_idx), (lay.end_emb, &end_idx)] {
            let t = g.param(params, table);
            let e = g.gather_rows(t, idx)?;
            h = g.add(h, e)?;
        }

        let full = AttentionMask::full(n, n);
        let p = self.config.dropout;
        for layer in &lay.encoder {
            let a = layer.ln1.forward(g, params, h)?;
            let a = layer.attn.forward(g, params, a, a, a, &full)?;
            let a = dropout(g, a, p, rng.as_deref_mut())?;
            h = g.add(h, a)?;
            let f = layer.ln2.forward(g, params, h)?;
            let f = layer.ffn.forward(g, params, f)?;
            let f = dropout(g, f, p, rng.as_deref_mut())?;
            h = g.add(h, f)?;
        }
        lay.enc_ln.forward(g, params, h)
    }

    /// Builds the decoder on `g` and returns `slots x max_clusters` logits.
    ///
    /// `labels[s]` is the label already assigned to slot `s` (1-based), or 0
    /// when undecided. Slot `t` sees the labels of slots `s < t` only.
    #[allow(clippy::too_many_arguments)]
    fn decode_graph(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        enc: Var,
        segment_ranges: &[Range<usize>],
        slots: &SlotInfo,
        labels: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let t_len = slots.len();
        let k = self.config.max_clusters;
        let lay = &self.layout;
        if let Some(&bad) = labels.iter().find(|&&l| l > k) {
            return Err(Error::TooManyClusters { label: bad, max: k });
        }
        let n = g.value(enc).rows();
        let cross = cross_mask(segment_ranges, &slots.segment, n)?;
        let causal = AttentionMask::from_fn(t_len, t_len + 1, |t, c| c == 0 || c - 1 < t)?;

        let mut counts = Vec::with_capacity(t_len);
        let mut max_seen = 0;
        for &l in labels {
            counts.push(max_seen.min(k));
            max_seen = max_seen.max(l);
        }
        let pos = sinusoidal_positions(t_len, self.config.dim_model).scale(POSITION_SCALE);
        let mut h = g.constant(pos);
        for (table, idx) in [(lay.rank_emb, &slots.rank), (lay.count_emb, &counts)] {
            let t = g.param(params, table);
            let e = g.gather_rows(t, idx)?;
            h = g.add(h, e)?;
        }
        let label_table = g.param(params, lay.label_emb);
        let label_rows = g.gather_rows(label_table, labels)?;

        let p = self.config.dropout;
        for layer in &lay.decoder {
            let c = layer.ln_cross.forward(g, params, h)?;
            let c = layer.cross_attn.forward(g, params, c, enc, enc, &cross)?;
            let c = dropout(g, c, p, rng.as_deref_mut())?;
            h = g.add(h, c)?;

            let a = layer.ln_self.forward(g, params, h)?;
            let null_k = g.param(params, layer.null_k);
            let null_v = g.param(params, layer.null_v);
            let keys = g.concat_rows(&[null_k, a])?;
            let labeled = g.add(a, label_rows)?;
            let values = g.concat_rows(&[null_v, labeled])?;
            let s = layer.self_attn.forward(g, params, a, keys, values, &causal)?;
            let s = dropout(g, s, p, rng.as_deref_mut())?;
            h = g.add(h, s)?;

            let f = layer.ln_ffn.forward(g, params, h)?;
            let f = layer.ffn.forward(g, params, f)?;
            let f = dropout(g, f, p, rng.as_deref_mut())?;
            h = g.add(h, f)?;
        }
        let h = lay.dec_ln.forward(g, params, h)?;
        let logits = lay.output.forward(g, params, h)?;
        let pointed = self.pointer_graph(g, params, h, labels, &counts, &causal)?;
        g.add(logits, pointed)
    }

    fn pointer_graph(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        h: Var,
        labels: &[usize],
        counts: &[usize],
        causal: &AttentionMask,
    ) -> Result<Var> {
        let (t_len, k, d) = (labels.len(), self.config.max_clusters, self.config.dim_model);
        let ptr = &self.layout.pointer;
        let q = ptr.query.forward(g, params, h)?;
        let keys = ptr.key.forward(g, params, h)?;
        let null_k = g.param(params, ptr.null_k);
        let keys = g.concat_rows(&[null_k, keys])?;
        let scores = g.matmul_nt(q, keys)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let probs = g.masked_softmax(scores, causal)?;

        let mut old = Tensor::zeros(t_len + 1, k);
        for (s, &l) in labels.iter().enumerate() {
            if l > 0 {
                old[(s + 1, l - 1)] = 1.0;
            }
        }
        let mut fresh = Tensor::zeros(t_len, k);
        for (t, &c) in counts.iter().enumerate() {
            if c < k {
                fresh[(t, c)] = 1.0;
            }
        }
        let old = g.constant(old);
        let from_old = g.matmul(probs, old)?;
        let null_p = g.slice_cols(probs, 0, 1)?;
        let ones = g.constant(Tensor::filled(1, k, 1.0));
        let null_p = g.matmul(null_p, ones)?;
        let fresh = g.constant(fresh);
        let from_new = g.mul(null_p, fresh)?;
        let dist = g.add(from_old, from_new)?;
        let mix = g.param(params, ptr.mix);
        g.matmul(dist, mix)
    }

    /// Teacher-forced loss of one example recorded on `g`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        seq: &EmbeddingSequence,
        plan: &DecodePlan,
        target: &LabelSequence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let ranges: Vec<Range<usize>> = seq.segment_ranges().into_iter().map(|(_, r)| r).collect();
        plan_ranges(&ranges, plan)?;
        check_target(plan, target)?;
        let enc = self.encode_graph(g, params, seq, rng.as_deref_mut())?;
        let slots = SlotInfo::from_plan(plan);
        let logits = self.decode_graph(g, params, enc, &ranges, &slots, &target.labels, rng)?;
        let ids: Vec<usize> = target.labels.iter().map(|l| l - 1).collect();
        g.cross_entropy(logits, &ids, self.config.label_smoothing)
    }

    /// Encoder features in evaluation mode.
    pub fn encode(&self, seq: &EmbeddingSequence) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let e = self.encode_graph(&mut g, &self.params, seq, None)?;
        Ok(EncoderOutput {
            features: g.value(e).clone(),
            segment_ids: seq.windows.iter().map(|w| w.segment_id).collect(),
        })
    }

    /// Per-slot logits and mean cross-entropy with the target as decoder
    /// input.
    pub fn decode_teacher_forced(
        &self,
        enc: &EncoderOutput,
        plan: &DecodePlan,
        target: &LabelSequence,
    ) -> Result<(Tensor, f64)> {
        let ranges = enc.segment_ranges();
        plan_ranges(&ranges, plan)?;
        check_target(plan, target)?;
        let mut g = Graph::new();
        let e = g.constant(enc.features.clone());
        let slots = SlotInfo::from_plan(plan);
        let logits = self.decode_graph(&mut g, &self.params, e, &ranges, &slots, &target.labels, None)?;
        let ids: Vec<usize> = target.labels.iter().map(|l| l - 1).collect();
        let loss = g.cross_entropy(logits, &ids, self.config.label_smoothing)?;
        Ok((g.value(logits).clone(), g.value(loss).to_scalar()))
    }

    /// Greedy decoding of `plan.output_len()` labels. Within a segment the
    /// labels are forced distinct, and each label is at most one more than
    /// the largest label emitted so far.
    pub fn decode_greedy(&self, enc: &EncoderOutput, plan: &DecodePlan) -> Result<LabelSequence> {
        let k = self.config.max_clusters;
        plan.check_max(k)?;
        let ranges = enc.segment_ranges();
        plan_ranges(&ranges, plan)?;
        let slots = SlotInfo::from_plan(plan);
        let mut labels: Vec<usize> = Vec::with_capacity(slots.len());
        let mut max_seen = 0;
        for t in 0..slots.len() {
            let mut g = Graph::new();
            let e = g.constant(enc.features.clone());
            let mut input = labels.clone();
            input.push(0);
            let logits = self.decode_graph(&mut g, &self.params, e, &ranges, &slots.prefix(t + 1), &input, None)?;
            let row = g.value(logits).row(t);
            let seg = slots.segment[t];
            let used: Vec<usize> = (0..t).filter(|&s| slots.segment[s] == seg).map(|s| labels[s]).collect();
            let limit = (max_seen + 1).min(k);
            let best = (1..=limit)
                .filter(|l| !used.contains(l))
                .max_by(|a, b| row[a - 1].total_cmp(&row[b - 1]).then(b.cmp(a)))
                .ok_or(Error::TooManyClusters {
                    label: plan.counts[seg],
                    max: k,
                })?;
            max_seen = max_seen.max(best);
            labels.push(best);
        }
        let seg_ids = slots.segment.iter().map(|&i| enc.segment_ids[ranges[i].start]).collect();
        super::canonical_sequence(&labels, seg_ids)
    }

    /// Encodes and greedily decodes one meeting.
    pub fn predict(&self, seq: &EmbeddingSequence, plan: &DecodePlan) -> Result<LabelSequence> {
        let enc = self.encode(seq)?;
        self.decode_greedy(&enc, plan)
    }
}

fn check_target(plan: &DecodePlan, target: &LabelSequence) -> Result<()> {
    if target.len() != plan.output_len() {
        return Err(Error::Shape(format!(
            "target has {} labels, plan needs {}",
            target.len(),
            plan.output_len()
        )));
    }
    Ok(())
}


#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::types::{TimeInterval, WindowEmbedding};

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let cfg = SdncConfig {
            input_dim: 3,
            dim_model: 8,
            num_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 8,
            max_clusters: 3,
            ..Default::default()
        };
        let m = SdncModel::new(cfg, 5).unwrap();
        let mut r = rng::stream(9, &[]);
        let sizes = [2usize, 3, 2];
        let mut windows = Vec::new();
        let mut t = 0.0;
        for (i, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                windows.push(WindowEmbedding {
                    segment_id: i + 1,
                    interval: TimeInterval { start: t, end: t + 1.0 },
                    vector: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                });
                t += 1.0;
            }
        }
        let seq = EmbeddingSequence::new("m".into(), windows, 3).unwrap();
        let plan = DecodePlan::new(vec![1, 2, 1]).unwrap();
        let target = LabelSequence::new(vec![1, 2, 1, 3], vec![1, 2, 2, 3]).unwrap();
        let report = grad_check(
            |g, p| m.loss_graph(g, p, &seq, &plan, &target, None),
            &m.params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{} {}", report.worst_param, report.worst_error);
    }
}
