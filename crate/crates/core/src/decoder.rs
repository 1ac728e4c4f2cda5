//! Dynamic-attention recurrent decoder.
//!
//! At every step the previous hidden state scores the three attended
//! feature vectors `(l_A, l_B, l_diff)`, a softmax over the scores mixes
//! them into a context vector, and a GRU consumes `[embed(prev); context]`.
//! The same core backs the caption decoder and the scene-graph head; they
//! differ only in parameters, targets and decoding.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{prefixed, Embedding, Gru, GruStep, Linear, Params};
use crate::tensor::{axpy, dot, log_softmax, matvec_acc, matvec_t_acc, outer_acc, softmax, Tensor};

/// The three attended feature streams, in (A, B, diff) order.
pub type Streams<'a> = [&'a [f64]; 3];

/// Scores are clamped here so an infinite score still yields a finite softmax.
pub const SCORE_LIMIT: f64 = 1e30;

/// Non-negative weights over the three streams summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicAttentionWeights(pub [f64; 3]);

impl DynamicAttentionWeights {
    pub fn from_scores(scores: [f64; 3]) -> Self {
        let clamped = scores.map(|s| s.clamp(-SCORE_LIMIT, SCORE_LIMIT));
        let w = softmax(&clamped);
        DynamicAttentionWeights([w[0], w[1], w[2]])
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * w.ln())
            .sum::<f64>()
    }

    pub fn is_simplex(&self) -> bool {
        self.0.iter().all(|&w| w >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub step: usize,
}

impl DecoderState {
    pub fn initial(hidden: usize) -> Self {
        DecoderState {
            hidden: vec![0.0; hidden],
            step: 0,
        }
    }
}

/// Additive attention: `score_i = v . tanh(W_f l_i + W_h h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicAttention {
    pub feature: Linear,
    pub hidden: Tensor,
    pub v: Tensor,
}

/// `W_f l_i + b` for the three streams; constant across decoding steps.
#[derive(Debug, Clone)]
pub struct StreamProjection([Vec<f64>; 3]);

#[derive(Debug, Clone)]
pub struct AttentionStep {
    pub context: Vec<f64>,
    pub weights: DynamicAttentionWeights,
    activations: [Vec<f64>; 3],
}

impl DynamicAttention {
    pub fn new<R: Rng>(features: usize, hidden: usize, dim: usize, rng: &mut R) -> Self {
        DynamicAttention {
            feature: Linear::new(features, dim, rng),
            hidden: Tensor::uniform(&[dim, hidden], hidden, rng),
            v: Tensor::uniform(&[dim], dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn project(&self, streams: Streams<'_>) -> Result<StreamProjection> {
        for s in streams {
            if s.len() != self.feature.inputs() {
                return Err(Error::shape(format!(
                    "feature vector of length {}, attention expects {}",
                    s.len(),
                    self.feature.inputs()
                )));
            }
        }
        Ok(StreamProjection(streams.map(|s| self.feature.forward(s))))
    }

    pub fn attend(&self, proj: &StreamProjection, streams: Streams<'_>, hidden: &[f64]) -> Result<AttentionStep> {
        let m = self.dim();
        if hidden.len() != self.hidden.shape[1] {
            return Err(Error::shape(format!(
                "hidden state of length {}, attention expects {}",
                hidden.len(),
                self.hidden.shape[1]
            )));
        }
        let mut hproj = vec![0.0; m];
        matvec_acc(&self.hidden.data, m, hidden.len(), hidden, &mut hproj);
        let activations: [Vec<f64>; 3] = std::array::from_fn(|i| {
            proj.0[i]
                .iter()
                .zip(&hproj)
                .map(|(a, b)| (a + b).tanh())
                .collect()
        });
        let scores: [f64; 3] = std::array::from_fn(|i| dot(&self.v.data, &activations[i]));
        let weights = DynamicAttentionWeights::from_scores(scores);
        let mut context = vec![0.0; streams[0].len()];
        for (w, s) in weights.0.iter().zip(streams) {
            axpy(*w, s, &mut context);
        }
        Ok(AttentionStep {
            context,
            weights,
            activations,
        })
    }

    /// Backward through one [`DynamicAttention::attend`]. `dweights` is the
    /// direct gradient on the simplex weights. Accumulates into `dproj`,
    /// `dstreams` and `dhidden`.
    #[allow(clippy::too_many_arguments)]
    fn attend_backward(
        &self,
        streams: Streams<'_>,
        hidden: &[f64],
        step: &AttentionStep,
        dcontext: &[f64],
        dweights: [f64; 3],
        grad: &mut DynamicAttention,
        dproj: &mut [Vec<f64>; 3],
        dstreams: &mut [Vec<f64>; 3],
        dhidden: &mut [f64],
    ) {
        let w = step.weights.0;
        let mut dw = dweights;
        for i in 0..3 {
            dw[i] += dot(dcontext, streams[i]);
            axpy(w[i], dcontext, &mut dstreams[i]);
        }
        let mean: f64 = (0..3).map(|i| w[i] * dw[i]).sum();
        let dscore: [f64; 3] = std::array::from_fn(|i| w[i] * (dw[i] - mean));
        let m = self.dim();
        let mut dpre_sum = vec![0.0; m];
        for i in 0..3 {
            axpy(dscore[i], &step.activations[i], &mut grad.v.data);
            for k in 0..m {
                let t = step.activations[i][k];
                let d = dscore[i] * self.v.data[k] * (1.0 - t * t);
                dproj[i][k] += d;
                dpre_sum[k] += d;
            }
        }
        outer_acc(&mut grad.hidden.data, &dpre_sum, hidden);
        matvec_t_acc(&self.hidden.data, m, hidden.len(), &dpre_sum, dhidden);
    }

    fn project_backward(
        &self,
        streams: Streams<'_>,
        dproj: &[Vec<f64>; 3],
        grad: &mut DynamicAttention,
        dstreams: &mut [Vec<f64>; 3],
    ) {
        for i in 0..3 {
            self.feature.backward(streams[i], &dproj[i], &mut grad.feature, Some(&mut dstreams[i]));
        }
    }
}

impl Params for DynamicAttention {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("feature", self.feature.params());
        v.push(("hidden".into(), &self.hidden));
        v.push(("v".into(), &self.v));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.feature.params_mut();
        v.push(&mut self.hidden);
        v.push(&mut self.v);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderDims {
    pub vocab: usize,
    pub embed: usize,
    pub features: usize,
    pub hidden: usize,
    pub attention: usize,
}

/// GRU decoder with dynamic attention over the feature streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentiveDecoder {
    pub embedding: Embedding,
    pub attention: DynamicAttention,
    pub gru: Gru,
    pub output: Linear,
}

/// Everything one teacher-forced step keeps for the backward pass.
#[derive(Debug, Clone)]
struct StepTrace {
    h_prev: Vec<f64>,
    input: Vec<f64>,
    token: u32,
    attention: AttentionStep,
    gru: GruStep,
    h_next: Vec<f64>,
    probs: Vec<f64>,
    target: u32,
}

/// Result of a teacher-forced pass over one target sequence.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    steps: Vec<StepTrace>,
    /// Mean cross-entropy over non-PAD targets.
    pub loss: f64,
    /// Mean entropy of the stream weights over the decoded steps.
    pub entropy: f64,
    pub logits: Vec<Vec<f64>>,
    pub weights: Vec<DynamicAttentionWeights>,
}

impl AttentiveDecoder {
    pub fn new<R: Rng>(dims: DecoderDims, rng: &mut R) -> Self {
        AttentiveDecoder {
            embedding: Embedding::new(dims.vocab, dims.embed, rng),
            attention: DynamicAttention::new(dims.features, dims.hidden, dims.attention, rng),
            gru: Gru::new(dims.embed + dims.features, dims.hidden, rng),
            output: Linear::new(dims.hidden, dims.vocab, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.output.outputs()
    }

    pub fn hidden_size(&self) -> usize {
        self.gru.hidden()
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState::initial(self.hidden_size())
    }

    /// Stream weights and context for the current state.
    pub fn dynamic_attention(&self, streams: Streams<'_>, state: &DecoderState) -> Result<(Vec<f64>, DynamicAttentionWeights)> {
        let proj = self.attention.project(streams)?;
        let step = self.attention.attend(&proj, streams, &state.hidden)?;
        Ok((step.context, step.weights))
    }

    fn input(&self, context: &[f64], prev: u32) -> Result<Vec<f64>> {
        if prev as usize >= self.embedding.rows() {
            return Err(Error::InvalidToken {
                id: prev,
                size: self.embedding.rows(),
            });
        }
        if context.len() + self.embedding.dim() != self.gru.inputs() {
            return Err(Error::shape(format!(
                "context of length {}, decoder expects {}",
                context.len(),
                self.gru.inputs() - self.embedding.dim()
            )));
        }
        let mut x = self.embedding.row(prev).to_vec();
        x.extend_from_slice(context);
        Ok(x)
    }

    /// One recurrent step: logits over the vocabulary and the next state.
    pub fn decode_step(&self, context: &[f64], prev: u32, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        let x = self.input(context, prev)?;
        let (h, _) = self.gru.forward(&x, &state.hidden);
        let logits = self.output.forward(&h);
        Ok((
            logits,
            DecoderState {
                hidden: h,
                step: state.step + 1,
            },
        ))
    }

    /// Teacher-forced pass: step `t` reads `inputs[t]` and is scored on
    /// `targets[t]`. Steps after the last non-PAD target are not run.
    pub fn teacher_forced(&self, streams: Streams<'_>, inputs: &[u32], targets: &[u32]) -> Result<TeacherForced> {
        if inputs.len() != targets.len() {
            return Err(Error::shape("inputs and targets differ in length"));
        }
        let last = targets.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        let proj = self.attention.project(streams)?;
        let mut h = vec![0.0; self.hidden_size()];
        let mut steps = Vec::with_capacity(last);
        let (mut loss, mut count, mut entropy) = (0.0, 0usize, 0.0);
        let mut logits_out = Vec::with_capacity(last);
        let mut weights = Vec::with_capacity(last);
        for t in 0..last {
            let attention = self.attention.attend(&proj, streams, &h)?;
            let input = self.input(&attention.context, inputs[t])?;
            let (h_next, gru) = self.gru.forward(&input, &h);
            let logits = self.output.forward(&h_next);
            let target = targets[t];
            if target != PAD {
                let lp = log_softmax(&logits);
                loss -= lp[target as usize];
                count += 1;
            }
            entropy += attention.weights.entropy();
            weights.push(attention.weights);
            let probs = softmax(&logits);
            logits_out.push(logits);
            steps.push(StepTrace {
                h_prev: std::mem::replace(&mut h, h_next.clone()),
                input,
                token: inputs[t],
                attention,
                gru,
                h_next,
                probs,
                target,
            });
        }
        Ok(TeacherForced {
            loss: if count > 0 { loss / count as f64 } else { 0.0 },
            entropy: if last > 0 { entropy / last as f64 } else { 0.0 },
            steps,
            logits: logits_out,
            weights,
        })
    }

    /// Backward of `dloss * loss + dentropy * entropy` from a teacher-forced
    /// pass. Returns the gradients on the three streams.
    pub fn backward(
        &self,
        streams: Streams<'_>,
        tf: &TeacherForced,
        dloss: f64,
        dentropy: f64,
        grad: &mut AttentiveDecoder,
    ) -> [Vec<f64>; 3] {
        let c = streams[0].len();
        let e = self.embedding.dim();
        let n_targets = tf.steps.iter().filter(|s| s.target != PAD).count();
        let n_steps = tf.steps.len();
        let mut dstreams: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; c]);
        let mut dproj: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; self.attention.dim()]);
        let mut dh = vec![0.0; self.hidden_size()];
        for st in tf.steps.iter().rev() {
            if st.target != PAD && n_targets > 0 {
                let scale = dloss / n_targets as f64;
                let mut dlogits: Vec<f64> = st.probs.iter().map(|p| p * scale).collect();
                dlogits[st.target as usize] -= scale;
                self.output.backward(&st.h_next, &dlogits, &mut grad.output, Some(&mut dh));
            }
            let mut dx = vec![0.0; st.input.len()];
            let mut dh_prev = self.gru.backward(&st.input, &st.h_prev, &st.gru, &dh, &mut grad.gru, &mut dx);
            self.embedding.backward(st.token, &dx[..e], &mut grad.embedding);
            let dweights = if n_steps > 0 && dentropy != 0.0 {
                let scale = dentropy / n_steps as f64;
                st.attention.weights.0.map(|w| -scale * (w.max(f64::MIN_POSITIVE).ln() + 1.0))
            } else {
                [0.0; 3]
            };
            self.attention.attend_backward(
                streams,
                &st.h_prev,
                &st.attention,
                &dx[e..],
                dweights,
                &mut grad.attention,
                &mut dproj,
                &mut dstreams,
                &mut dh_prev,
            );
            dh = dh_prev;
        }
        self.attention.project_backward(streams, &dproj, &mut grad.attention, &mut dstreams);
        dstreams
    }
}

impl Params for AttentiveDecoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("embedding", self.embedding.params());
        v.extend(prefixed("attention", self.attention.params()));
        v.extend(prefixed("gru", self.gru.params()));
        v.extend(prefixed("output", self.output.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.embedding.params_mut();
        v.extend(self.attention.params_mut());
        v.extend(self.gru.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

/// Mean over non-PAD positions of `-log softmax(logits[t])[reference[t]]`.
pub fn caption_loss(logits: &[Vec<f64>], reference: &[u32], pad: u32) -> Result<f64> {
    if logits.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} reference tokens",
            logits.len(),
            reference.len()
        )));
    }
    let (mut total, mut n) = (0.0, 0usize);
    for (row, &r) in logits.iter().zip(reference) {
        if r == pad {
            continue;
        }
        total -= log_softmax(row)[r as usize];
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Anything that scores the next token given a decoding state.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Log-probabilities of every next token and the successor state.
    fn step(&self, state: &Self::State, prev: u32) -> (Vec<f64>, Self::State);
}

/// Textual form: `greedy` or `beam(K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SearchStrategy {
    Greedy,
    Beam(usize),
}

impl fmt::Display for SearchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchStrategy::Greedy => write!(f, "greedy"),
            SearchStrategy::Beam(k) => write!(f, "beam({k})"),
        }
    }
}

impl FromStr for SearchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "greedy" {
            return Ok(SearchStrategy::Greedy);
        }
        s.strip_prefix("beam(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.trim().parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(SearchStrategy::Beam)
            .ok_or_else(|| Error::config(format!("unknown search strategy `{s}`")))
    }
}

impl TryFrom<String> for SearchStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SearchStrategy> for String {
    fn from(s: SearchStrategy) -> String {
        s.to_string()
    }
}

pub fn greedy<S: StepScorer>(scorer: &S, max_len: usize) -> Vec<u32> {
    let mut state = scorer.start();
    let mut prev = BOS;
    let mut out = Vec::with_capacity(max_len);
    for _ in 0..max_len {
        let (lp, next) = scorer.step(&state, prev);
        let tok = crate::tensor::argmax(&lp) as u32;
        out.push(tok);
        if tok == EOS {
            break;
        }
        prev = tok;
        state = next;
    }
    out
}

fn rank(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Beam search keeping the `width` best prefixes; sequences end at EOS or at
/// `max_len` tokens. The best completed sequence wins, ties going to the
/// lexicographically smallest id sequence.
pub fn beam<S: StepScorer>(scorer: &S, width: usize, max_len: usize) -> Vec<u32> {
    let width = width.max(1);
    let mut beams: Vec<(Vec<u32>, f64, S::State)> = vec![(Vec::new(), 0.0, scorer.start())];
    let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
    for t in 0..max_len {
        let mut cands: Vec<(Vec<u32>, f64, usize)> = Vec::new();
        let mut states = Vec::with_capacity(beams.len());
        for (bi, (seq, score, state)) in beams.iter().enumerate() {
            let prev = seq.last().copied().unwrap_or(BOS);
            let (lp, next) = scorer.step(state, prev);
            states.push(next);
            for (tok, l) in lp.iter().enumerate() {
                let mut s = seq.clone();
                s.push(tok as u32);
                cands.push((s, score + l, bi));
            }
        }
        cands.sort_by(|a, b| rank(&(a.0.clone(), a.1), &(b.0.clone(), b.1)));
        let mut next_beams = Vec::with_capacity(width);
        for (seq, score, bi) in cands.into_iter().take(width) {
            if seq.last() == Some(&EOS) || t + 1 == max_len {
                done.push((seq, score));
            } else {
                next_beams.push((seq, score, states[bi].clone()));
            }
        }
        beams = next_beams;
        let best_done = done.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
        if beams.is_empty() || beams.iter().all(|b| b.1 < best_done) {
            break;
        }
    }
    done.sort_by(rank);
    done.into_iter().next().map(|d| d.0).unwrap_or_default()
}

pub fn search<S: StepScorer>(scorer: &S, strategy: SearchStrategy, max_len: usize) -> Vec<u32> {
    match strategy {
        SearchStrategy::Greedy => greedy(scorer, max_len),
        SearchStrategy::Beam(k) => beam(scorer, k, max_len),
    }
}

/// Caption decoding over a fixed bundle.
pub struct CaptionScorer<'a> {
    decoder: &'a AttentiveDecoder,
    streams: Streams<'a>,
    proj: StreamProjection,
}

impl<'a> CaptionScorer<'a> {
    pub fn new(decoder: &'a AttentiveDecoder, streams: Streams<'a>) -> Result<Self> {
        Ok(CaptionScorer {
            proj: decoder.attention.project(streams)?,
            decoder,
            streams,
        })
    }
}

impl StepScorer for CaptionScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.decoder.initial_state()
    }

    fn step(&self, state: &DecoderState, prev: u32) -> (Vec<f64>, DecoderState) {
        let att = self
            .decoder
            .attention
            .attend(&self.proj, self.streams, &state.hidden)
            .expect("dimensions checked at construction");
        let (logits, next) = self
            .decoder
            .decode_step(&att.context, prev, state)
            .expect("search only feeds valid ids");
        (log_softmax(&logits), next)
    }
}

/// Decodes a caption; `max_len` counts generated tokens including EOS.
pub fn generate(decoder: &AttentiveDecoder, streams: Streams<'_>, strategy: SearchStrategy, max_len: usize) -> Result<Vec<u32>> {
    let scorer = CaptionScorer::new(decoder, streams)?;
    Ok(search(&scorer, strategy, max_len.max(1)))
}
