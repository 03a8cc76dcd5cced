//! Forward and backward passes of the full network.
//!
//! Backpropagation stops at interval boundaries: the hidden states carried
//! into an interval are constants, so a submission's loss reaches the GRUs
//! and the static block only through the items of the one interval that
//! produced its influence state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::layers::{
    add_into, affine, conv1d_backward, conv1d_forward, global_max_forward, gru_step, gru_step_backward,
    leaky_relu, leaky_relu_grad, lstm_step, lstm_step_backward, maxpool_backward, maxpool_forward,
    outer_add, relu_backward_inplace, relu_inplace, sigmoid, transpose_matvec_add, ConvShape, GruStep,
    GruWeights, LstmStep, LstmWeights,
};
use super::params::{ConvIds, GruIds, Layout, ModelParams, TecConvIds};
use crate::error::{Error, Result};
use crate::text::{EmbeddingMatrix, PAD_ID};

/// Outputs for one submission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Potential chatter intensity.
    pub b_tilde: f64,
    /// Activity scaling factor in (0, 1).
    pub r: f64,
    /// Base intensity `r · b_tilde`.
    pub b: f64,
    pub y_hat: f64,
}

/// Cumulative influence after an interval plus the carried GRU states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceState {
    pub g: Vec<f64>,
    pub h_news: Vec<f64>,
    pub h_submission: Vec<f64>,
    pub k: i64,
}

impl InfluenceState {
    pub fn zeros(cfg: &ModelConfig, k: i64) -> Self {
        Self {
            g: vec![0.0; cfg.influence_dim()],
            h_news: vec![0.0; cfg.gru_hidden],
            h_submission: vec![0.0; cfg.gru_hidden],
            k,
        }
    }

    /// `G^n_k` followed by `G^s_k`.
    pub fn from_hidden(h_news: Vec<f64>, h_submission: Vec<f64>, k: i64) -> Self {
        let mut g = h_news.clone();
        g.extend_from_slice(&h_submission);
        Self {
            g,
            h_news,
            h_submission,
            k,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|v| v.is_finite())
    }
}

/// One submission as seen by the network.
#[derive(Debug, Clone, Copy)]
pub struct SubmissionInput<'a> {
    pub tokens: &'a [u32],
    pub subreddit: usize,
    /// `ln(1 + comments in the subreddit's previous interval)`.
    pub rate: f64,
    pub bins: &'a [u32],
}

/// How the time-evolving block treats its kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    /// Kernels scaled by `LeakyReLU(W_G·G + W_V·U + q)`.
    Calibrated,
    /// Gain fixed to one: a plain static convolution stack over `W_S`.
    Unit,
}

#[derive(Debug, Clone)]
struct StageCache {
    input: Vec<f64>,
    shape: ConvShape,
    pre: Vec<f64>,
    arg: Vec<usize>,
}

#[derive(Debug, Clone)]
struct StackCache {
    branches: Vec<Vec<StageCache>>,
    out: Vec<f64>,
    out_len: usize,
    channels: usize,
    input_len: usize,
}

#[derive(Debug, Clone)]
pub struct StaticCache {
    tokens: Vec<u32>,
    stack: StackCache,
    arg: Vec<usize>,
}

#[derive(Debug, Clone)]
struct TailCache {
    input: Vec<f64>,
    shape: ConvShape,
    pre: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GainCache {
    pre: Vec<f64>,
    gain: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TecCache {
    tokens: Vec<u32>,
    g: Vec<f64>,
    u: Vec<f64>,
    mode: GainMode,
    branch_gains: Vec<Vec<GainCache>>,
    tail_gains: Vec<GainCache>,
    stack: StackCache,
    tail: Vec<TailCache>,
    final_len: usize,
    arg: usize,
    pooled: f64,
}

#[derive(Debug, Clone)]
pub struct SubmissionCache {
    tec: Option<TecCache>,
    subreddit: usize,
    rate: f64,
    r: f64,
    b_tilde: f64,
    lstm: Vec<LstmStep>,
    head_in: Vec<f64>,
    head_pre: f64,
    zero_shot: bool,
}

#[derive(Debug, Clone)]
pub struct IntervalTrace {
    news: Vec<StaticCache>,
    news_steps: Vec<GruStep>,
    submissions: Vec<(StaticCache, usize)>,
    submission_steps: Vec<GruStep>,
}

impl IntervalTrace {
    pub fn empty() -> Self {
        Self {
            news: Vec::new(),
            news_steps: Vec::new(),
            submissions: Vec::new(),
            submission_steps: Vec::new(),
        }
    }

    pub fn item_count(&self) -> usize {
        self.news.len() + self.submissions.len()
    }

    /// Replaces each half (news, submissions) with `newer`'s when `newer`
    /// stepped that GRU. The result is the computation that produced the
    /// current influence state.
    pub fn advance(&mut self, newer: IntervalTrace) {
        if !newer.news_steps.is_empty() {
            self.news = newer.news;
            self.news_steps = newer.news_steps;
        }
        if !newer.submission_steps.is_empty() {
            self.submissions = newer.submissions;
            self.submission_steps = newer.submission_steps;
        }
    }
}

/// The network with its parameters.
#[derive(Debug, Clone)]
pub struct ChatterNet {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub layout: Layout,
}

fn gru_weights<'a>(p: &'a ModelParams, ids: &GruIds) -> GruWeights<'a> {
    GruWeights {
        w_x: p.get(ids.w_x),
        w_h: p.get(ids.w_h),
        b_x: p.get(ids.b_x),
        b_h: p.get(ids.b_h),
        hidden: ids.hidden,
    }
}

impl ChatterNet {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (params, layout) = ModelParams::init(&config, rng);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_compatible(&config)?;
        let layout = ModelParams::layout(&config);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Copies pretrained word vectors into the embedding table; the PAD row
    /// stays zero.
    pub fn set_word_embeddings(&mut self, m: &EmbeddingMatrix) -> Result<()> {
        if m.rows != self.config.vocab_size || m.cols != self.config.word_dim {
            return Err(Error::Shape(format!(
                "embedding matrix is {}×{}, model expects {}×{}",
                m.rows, m.cols, self.config.vocab_size, self.config.word_dim
            )));
        }
        let dst = self.params.get_mut(self.layout.word_embedding);
        dst.copy_from_slice(&m.data);
        dst[..m.cols].iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let d = self.config.word_dim;
        let table = self.params.get(self.layout.word_embedding);
        let mut x = vec![0.0; tokens.len() * d];
        for (t, &id) in tokens.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(Error::Shape(format!(
                    "token id {id} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            x[t * d..(t + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
        }
        Ok(x)
    }

    fn embed_backward(&self, tokens: &[u32], dx: &[f64], grads: &mut ModelParams) {
        let d = self.config.word_dim;
        let table = grads.get_mut(self.layout.word_embedding);
        for (t, &id) in tokens.iter().enumerate() {
            if id == PAD_ID {
                continue;
            }
            let id = id as usize;
            add_into(&mut table[id * d..(id + 1) * d], &dx[t * d..(t + 1) * d]);
        }
    }

    fn subreddit_vector(&self, subreddit: usize) -> Result<Vec<f64>> {
        let d = self.config.subreddit_dim;
        if subreddit >= self.config.subreddit_count {
            return Err(Error::Shape(format!(
                "subreddit index {subreddit} outside table of {}",
                self.config.subreddit_count
            )));
        }
        Ok(self.params.get(self.layout.subreddit_embedding)[subreddit * d..(subreddit + 1) * d].to_vec())
    }

    fn subreddit_backward(&self, subreddit: usize, du: &[f64], grads: &mut ModelParams) {
        let d = self.config.subreddit_dim;
        add_into(
            &mut grads.get_mut(self.layout.subreddit_embedding)[subreddit * d..(subreddit + 1) * d],
            du,
        );
    }

    /// Branched conv → ReLU → max-pool stages, concatenated channel-wise.
    fn stack_forward(&self, x: &[f64], len: usize, kernels: &[Vec<(&[f64], &ConvIds)>]) -> StackCache {
        let window = self.config.pool_window;
        let mut branches = Vec::with_capacity(kernels.len());
        let mut outputs = Vec::with_capacity(kernels.len());
        let mut out_len = len;
        for stages in kernels {
            let mut cur = x.to_vec();
            let mut cur_len = len;
            let mut caches = Vec::with_capacity(stages.len());
            for (w, ids) in stages {
                let shape = ConvShape {
                    len: cur_len,
                    cin: ids.in_channels,
                    cout: ids.out_channels,
                    kernel: ids.kernel,
                    pad: (ids.kernel - 1) / 2,
                };
                let pre = conv1d_forward(&cur, w, self.params.get(ids.bias), shape);
                let mut act = pre.clone();
                relu_inplace(&mut act);
                let (pooled, arg, pooled_len) = maxpool_forward(&act, cur_len, ids.out_channels, window);
                caches.push(StageCache {
                    input: cur,
                    shape,
                    pre,
                    arg,
                });
                cur = pooled;
                cur_len = pooled_len;
            }
            out_len = cur_len;
            outputs.push((cur, stages.last().map_or(0, |(_, ids)| ids.out_channels)));
            branches.push(caches);
        }
        let channels: usize = outputs.iter().map(|(_, c)| c).sum();
        let mut out = vec![0.0; out_len * channels];
        let mut offset = 0;
        for (o, c) in &outputs {
            for t in 0..out_len {
                out[t * channels + offset..t * channels + offset + c].copy_from_slice(&o[t * c..(t + 1) * c]);
            }
            offset += c;
        }
        StackCache {
            branches,
            out,
            out_len,
            channels,
            input_len: len,
        }
    }

    /// Returns the input gradient and, per branch and stage, the gradient
    /// of the effective kernel. Bias gradients go straight into `grads`.
    fn stack_backward(
        &self,
        cache: &StackCache,
        kernels: &[Vec<(&[f64], &ConvIds)>],
        d_out: &[f64],
        grads: &mut ModelParams,
    ) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
        let d_in_width = kernels
            .first()
            .and_then(|s| s.first())
            .map_or(0, |(_, ids)| ids.in_channels);
        let mut dx_total = vec![0.0; cache.input_len * d_in_width];
        let mut dw_all = Vec::with_capacity(kernels.len());
        let mut offset = 0;
        for (stages, stage_caches) in kernels.iter().zip(&cache.branches) {
            let c_last = stages.last().map_or(0, |(_, ids)| ids.out_channels);
            let mut d = vec![0.0; cache.out_len * c_last];
            for t in 0..cache.out_len {
                d[t * c_last..(t + 1) * c_last]
                    .copy_from_slice(&d_out[t * cache.channels + offset..t * cache.channels + offset + c_last]);
            }
            offset += c_last;
            let mut dws = vec![Vec::new(); stages.len()];
            for (si, ((w, ids), sc)) in stages.iter().zip(stage_caches).enumerate().rev() {
                let mut d_act = maxpool_backward(&d, &sc.arg, sc.shape.len, ids.out_channels);
                relu_backward_inplace(&mut d_act, &sc.pre);
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; ids.out_channels];
                d = conv1d_backward(&sc.input, w, &d_act, sc.shape, &mut dw, &mut db);
                add_into(grads.get_mut(ids.bias), &db);
                dws[si] = dw;
            }
            add_into(&mut dx_total, &d);
            dw_all.push(dws);
        }
        (dx_total, dw_all)
    }

    fn static_kernels(&self) -> Vec<Vec<(&[f64], &ConvIds)>> {
        self.layout
            .static_branches
            .iter()
            .map(|stages| stages.iter().map(|ids| (self.params.get(ids.weight), ids)).collect())
            .collect()
    }

    /// Static convolution features of one text (length `3 × last filters`).
    pub fn static_features(&self, tokens: &[u32]) -> Result<(Vec<f64>, StaticCache)> {
        if tokens.is_empty() {
            return Err(Error::Shape("static block needs at least one position".into()));
        }
        let x = self.embed(tokens)?;
        let stack = self.stack_forward(&x, tokens.len(), &self.static_kernels());
        let (feature, arg) = global_max_forward(&stack.out, stack.out_len, stack.channels);
        Ok((
            feature,
            StaticCache {
                tokens: tokens.to_vec(),
                stack,
                arg,
            },
        ))
    }

    /// Static block for a news (`news = true`) or submission text, checking
    /// the configured length.
    pub fn static_conv_block(&self, tokens: &[u32], news: bool) -> Result<Vec<f64>> {
        let expected = if news {
            self.config.news_max_len
        } else {
            self.config.submission_max_len
        };
        if tokens.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} token positions, got {}",
                tokens.len()
            )));
        }
        Ok(self.static_features(tokens)?.0)
    }

    fn static_backward(&self, cache: &StaticCache, d_feature: &[f64], grads: &mut ModelParams) {
        let channels = cache.stack.channels;
        let mut d_out = vec![0.0; cache.stack.out.len()];
        for (c, &g) in d_feature.iter().enumerate() {
            d_out[cache.arg[c] * channels + c] += g;
        }
        let kernels = self.static_kernels();
        let (dx, dws) = self.stack_backward(&cache.stack, &kernels, &d_out, grads);
        for (stages, dw_b) in self.layout.static_branches.iter().zip(dws) {
            for (ids, dw) in stages.iter().zip(dw_b) {
                add_into(grads.get_mut(ids.weight), &dw);
            }
        }
        self.embed_backward(&cache.tokens, &dx, grads);
    }

    fn gain(&self, ids: &TecConvIds, g: &[f64], u: &[f64], mode: GainMode) -> GainCache {
        let f = ids.conv.out_channels;
        match mode {
            GainMode::Unit => GainCache {
                pre: vec![1.0; f],
                gain: vec![1.0; f],
            },
            GainMode::Calibrated => {
                let mut pre = affine(self.params.get(ids.w_g), g, self.params.get(ids.q_g), f);
                add_into(&mut pre, &affine(self.params.get(ids.w_v), u, &[], f));
                let gain = pre.iter().map(|&p| leaky_relu(p, self.config.leaky_alpha)).collect();
                GainCache { pre, gain }
            }
        }
    }

    /// Kernel gain `LeakyReLU(W_G·G + W_V·U + q)` of one time-evolving layer.
    pub fn kernel_gain(&self, ids: &TecConvIds, g: &[f64], u: &[f64]) -> Vec<f64> {
        self.gain(ids, g, u, GainMode::Calibrated).gain
    }

    fn tec_layers(&self) -> impl Iterator<Item = &TecConvIds> {
        self.layout
            .tec_branches
            .iter()
            .flatten()
            .chain(self.layout.tec_tail.iter())
    }

    /// Per-layer gains as they would be computed for `(G, U)`.
    pub fn tec_gains(&self, g: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
        self.tec_layers().map(|ids| self.kernel_gain(ids, g, u)).collect()
    }

    /// Calibrated kernel for a time-evolving layer: each output filter of
    /// the static kernel scaled by its gain entry.
    pub fn tec_kernel(&self, ids: &TecConvIds, gain: &[f64]) -> Result<Vec<f64>> {
        scale_kernel(self.params.get(ids.conv.weight), gain, ids.conv.out_channels)
    }

    /// Time-evolving block; returns the nonnegative potential intensity.
    pub fn tec_block(&self, tokens: &[u32], g: &[f64], u: &[f64], mode: GainMode) -> Result<(f64, TecCache)> {
        self.tec_block_with_gains(tokens, g, u, mode, None)
    }

    /// As [`Self::tec_block`] but with every gain vector supplied by the
    /// caller (in branch-major, then tail, order).
    pub fn tec_block_with_gains(
        &self,
        tokens: &[u32],
        g: &[f64],
        u: &[f64],
        mode: GainMode,
        gains_override: Option<&[Vec<f64>]>,
    ) -> Result<(f64, TecCache)> {
        if g.len() != self.config.influence_dim() || u.len() != self.config.subreddit_dim {
            return Err(Error::Shape(format!(
                "influence/subreddit vectors must have {}/{} entries, got {}/{}",
                self.config.influence_dim(),
                self.config.subreddit_dim,
                g.len(),
                u.len()
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Shape("time-evolving block needs at least one position".into()));
        }
        let mut layer = 0;
        let mut next_gain = |ids: &TecConvIds| -> Result<GainCache> {
            let cache = match gains_override {
                Some(all) => {
                    let gain = all
                        .get(layer)
                        .ok_or_else(|| Error::Shape("too few gain vectors".into()))?
                        .clone();
                    if gain.len() != ids.conv.out_channels {
                        return Err(Error::Shape("gain length does not match filter count".into()));
                    }
                    GainCache { pre: gain.clone(), gain }
                }
                None => self.gain(ids, g, u, mode),
            };
            layer += 1;
            Ok(cache)
        };
        let mut branch_gains = Vec::new();
        for stages in &self.layout.tec_branches {
            branch_gains.push(stages.iter().map(&mut next_gain).collect::<Result<Vec<_>>>()?);
        }
        let tail_gains = self.layout.tec_tail.iter().map(&mut next_gain).collect::<Result<Vec<_>>>()?;

        let branch_kernels: Vec<Vec<Vec<f64>>> = self
            .layout
            .tec_branches
            .iter()
            .zip(&branch_gains)
            .map(|(stages, gains)| {
                stages
                    .iter()
                    .zip(gains)
                    .map(|(ids, gc)| self.tec_kernel(ids, &gc.gain))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let kernels: Vec<Vec<(&[f64], &ConvIds)>> = branch_kernels
            .iter()
            .zip(&self.layout.tec_branches)
            .map(|(ws, stages)| ws.iter().zip(stages).map(|(w, ids)| (w.as_slice(), &ids.conv)).collect())
            .collect();

        let x = self.embed(tokens)?;
        let stack = self.stack_forward(&x, tokens.len(), &kernels);

        let mut cur = stack.out.clone();
        let len = stack.out_len;
        let mut tail = Vec::with_capacity(self.layout.tec_tail.len());
        let last = self.layout.tec_tail.len() - 1;
        for (ti, (ids, gc)) in self.layout.tec_tail.iter().zip(&tail_gains).enumerate() {
            let shape = ConvShape {
                len,
                cin: ids.conv.in_channels,
                cout: ids.conv.out_channels,
                kernel: 1,
                pad: 0,
            };
            let w = self.tec_kernel(ids, &gc.gain)?;
            let pre = conv1d_forward(&cur, &w, self.params.get(ids.conv.bias), shape);
            let mut act = pre.clone();
            if ti < last {
                relu_inplace(&mut act);
            }
            tail.push(TailCache {
                input: cur,
                shape,
                pre,
            });
            cur = act;
        }
        let (pooled, arg) = global_max_forward(&cur, len, 1);
        let pooled = pooled[0];
        let b_tilde = pooled.max(0.0);
        Ok((
            b_tilde,
            TecCache {
                tokens: tokens.to_vec(),
                g: g.to_vec(),
                u: u.to_vec(),
                mode,
                branch_gains,
                tail_gains,
                stack,
                tail,
                final_len: len,
                arg: arg[0],
                pooled,
            },
        ))
    }

    /// Backward through the time-evolving block; returns `(dG, dU)`.
    fn tec_backward(&self, cache: &TecCache, d_b_tilde: f64, grads: &mut ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut dg = vec![0.0; cache.g.len()];
        let mut du = vec![0.0; cache.u.len()];
        if cache.pooled <= 0.0 || d_b_tilde == 0.0 {
            return Ok((dg, du));
        }
        let alpha = self.config.leaky_alpha;
        let calibrated = cache.mode == GainMode::Calibrated;
        let mut apply_gain_grad = |ids: &TecConvIds, gc: &GainCache, dw_eff: &[f64], grads: &mut ModelParams| {
            let w_s = self.params.get(ids.conv.weight);
            let f = ids.conv.out_channels;
            let per = w_s.len() / f;
            let mut dw_s = vec![0.0; w_s.len()];
            let mut d_gain = vec![0.0; f];
            for o in 0..f {
                for i in o * per..(o + 1) * per {
                    dw_s[i] = dw_eff[i] * gc.gain[o];
                    d_gain[o] += dw_eff[i] * w_s[i];
                }
            }
            add_into(grads.get_mut(ids.conv.weight), &dw_s);
            if calibrated {
                let d_pre: Vec<f64> = d_gain
                    .iter()
                    .zip(&gc.pre)
                    .map(|(dg, &p)| dg * leaky_relu_grad(p, alpha))
                    .collect();
                outer_add(grads.get_mut(ids.w_g), &d_pre, &cache.g);
                outer_add(grads.get_mut(ids.w_v), &d_pre, &cache.u);
                add_into(grads.get_mut(ids.q_g), &d_pre);
                transpose_matvec_add(&mut dg, self.params.get(ids.w_g), &d_pre);
                transpose_matvec_add(&mut du, self.params.get(ids.w_v), &d_pre);
            }
        };

        let len = cache.final_len;
        let mut d = vec![0.0; len];
        d[cache.arg] = d_b_tilde;
        let last = self.layout.tec_tail.len() - 1;
        for (ti, (ids, (tc, gc))) in self
            .layout
            .tec_tail
            .iter()
            .zip(cache.tail.iter().zip(&cache.tail_gains))
            .enumerate()
            .rev()
        {
            if ti < last {
                relu_backward_inplace(&mut d, &tc.pre);
            }
            let w = self.tec_kernel(ids, &gc.gain)?;
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; ids.conv.out_channels];
            let dx = conv1d_backward(&tc.input, &w, &d, tc.shape, &mut dw, &mut db);
            add_into(grads.get_mut(ids.conv.bias), &db);
            apply_gain_grad(ids, gc, &dw, grads);
            d = dx;
        }

        let branch_kernels: Vec<Vec<Vec<f64>>> = self
            .layout
            .tec_branches
            .iter()
            .zip(&cache.branch_gains)
            .map(|(stages, gains)| {
                stages
                    .iter()
                    .zip(gains)
                    .map(|(ids, gc)| self.tec_kernel(ids, &gc.gain))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let kernels: Vec<Vec<(&[f64], &ConvIds)>> = branch_kernels
            .iter()
            .zip(&self.layout.tec_branches)
            .map(|(ws, stages)| ws.iter().zip(stages).map(|(w, ids)| (w.as_slice(), &ids.conv)).collect())
            .collect();
        let (dx, dws) = self.stack_backward(&cache.stack, &kernels, &d, grads);
        for ((stages, gains), dw_b) in self.layout.tec_branches.iter().zip(&cache.branch_gains).zip(dws) {
            for ((ids, gc), dw) in stages.iter().zip(gains).zip(dw_b) {
                apply_gain_grad(ids, gc, &dw, grads);
            }
        }
        self.embed_backward(&cache.tokens, &dx, grads);
        Ok((dg, du))
    }

    /// `σ(W_R · rate + Q_R)`.
    pub fn activity_scale(&self, rate: f64) -> f64 {
        sigmoid(self.params.get(self.layout.w_r)[0] * rate + self.params.get(self.layout.q_r)[0])
    }

    fn masked_influence(&self, g: &[f64]) -> Vec<f64> {
        let h = self.config.gru_hidden;
        let mut out = g.to_vec();
        if !self.config.variant.uses_news_influence() {
            out[..h].iter_mut().for_each(|v| *v = 0.0);
        }
        if !self.config.variant.uses_submission_influence() {
            out[h..].iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Runs the observation LSTM over `ln(1 + count)` per bin.
    fn observe(&self, bins: &[u32]) -> Vec<LstmStep> {
        let ids = &self.layout.lstm;
        let w = LstmWeights {
            w_x: self.params.get(ids.w_x),
            w_h: self.params.get(ids.w_h),
            b: self.params.get(ids.b),
            hidden: ids.hidden,
        };
        let mut h = vec![0.0; ids.hidden];
        let mut c = vec![0.0; ids.hidden];
        let mut steps = Vec::with_capacity(bins.len());
        for &count in bins {
            let st = lstm_step(w, &[f64::from(count).ln_1p()], &h, &c);
            h.clone_from(&st.h);
            c.clone_from(&st.c);
            steps.push(st);
        }
        steps
    }

    /// Final chatter from a base intensity and the observation bins.
    ///
    /// With no bins the LSTM is bypassed and the prediction is `b` itself.
    pub fn observe_and_predict(&self, b: f64, bins: &[u32]) -> Result<f64> {
        if bins.len() != self.config.m {
            return Err(Error::Shape(format!(
                "expected {} observation bins, got {}",
                self.config.m,
                bins.len()
            )));
        }
        if bins.is_empty() {
            return Ok(b);
        }
        let steps = self.observe(bins);
        let mut head_in = steps.last().map(|s| s.h.clone()).unwrap_or_default();
        head_in.push(b);
        Ok(affine(self.params.get(self.layout.head_w), &head_in, self.params.get(self.layout.head_b), 1)[0].max(0.0))
    }

    /// Predicts chatter for one submission under influence `g` (the state
    /// of the interval before the one it was posted in).
    pub fn forward_submission(&self, g: &[f64], input: SubmissionInput<'_>) -> Result<(Prediction, SubmissionCache)> {
        let cfg = &self.config;
        if input.tokens.len() != cfg.submission_max_len {
            return Err(Error::Shape(format!(
                "expected {} submission token positions, got {}",
                cfg.submission_max_len,
                input.tokens.len()
            )));
        }
        if input.bins.len() != cfg.m {
            return Err(Error::Shape(format!(
                "expected {} observation bins, got {}",
                cfg.m,
                input.bins.len()
            )));
        }
        if g.len() != cfg.influence_dim() {
            return Err(Error::Shape(format!(
                "influence state must have {} entries, got {}",
                cfg.influence_dim(),
                g.len()
            )));
        }
        if !input.rate.is_finite() {
            return Err(Error::Numerical("activity rate is not finite".into()));
        }
        let r = self.activity_scale(input.rate);

        let (b_tilde, tec) = if cfg.variant == Variant::LstmCc {
            (0.0, None)
        } else {
            let u = self.subreddit_vector(input.subreddit)?;
            let mode = if cfg.variant == Variant::Static {
                GainMode::Unit
            } else {
                GainMode::Calibrated
            };
            let (bt, cache) = self.tec_block(input.tokens, &self.masked_influence(g), &u, mode)?;
            (bt, Some(cache))
        };
        let b = r * b_tilde;

        let zero_shot = cfg.m == 0;
        let (y_hat, lstm, head_in, head_pre) = if zero_shot {
            (b, Vec::new(), Vec::new(), 0.0)
        } else {
            let steps = self.observe(input.bins);
            let mut head_in = steps.last().map(|s| s.h.clone()).unwrap_or_default();
            head_in.push(if cfg.variant == Variant::LstmCc { 0.0 } else { b });
            let pre = affine(
                self.params.get(self.layout.head_w),
                &head_in,
                self.params.get(self.layout.head_b),
                1,
            )[0];
            (pre.max(0.0), steps, head_in, pre)
        };

        let prediction = Prediction {
            b_tilde,
            r,
            b,
            y_hat,
        };
        if !(b_tilde.is_finite() && y_hat.is_finite() && r.is_finite()) {
            return Err(Error::Numerical(format!("non-finite prediction {prediction:?}")));
        }
        debug_assert!(b_tilde >= 0.0 && y_hat >= 0.0);
        debug_assert!(r > 0.0 && r <= 1.0);
        debug_assert!(b <= b_tilde);
        debug_assert!(!zero_shot || y_hat == b);

        Ok((
            prediction,
            SubmissionCache {
                tec,
                subreddit: input.subreddit,
                rate: input.rate,
                r,
                b_tilde,
                lstm,
                head_in,
                head_pre,
                zero_shot,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d y_hat = dy` and
    /// returns the gradient with respect to the (unmasked) influence state.
    pub fn backward_submission(&self, cache: &SubmissionCache, dy: f64, grads: &mut ModelParams) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let mut db = 0.0;
        if cache.zero_shot {
            db = dy;
        } else if cache.head_pre > 0.0 {
            let d_pre = dy;
            outer_add(grads.get_mut(self.layout.head_w), &[d_pre], &cache.head_in);
            grads.get_mut(self.layout.head_b)[0] += d_pre;
            let mut d_in = vec![0.0; cache.head_in.len()];
            transpose_matvec_add(&mut d_in, self.params.get(self.layout.head_w), &[d_pre]);
            if cfg.variant != Variant::LstmCc {
                db = d_in[cfg.lstm_hidden];
            }
            self.lstm_backward(&cache.lstm, &d_in[..cfg.lstm_hidden], grads);
        }

        let mut dg = vec![0.0; cfg.influence_dim()];
        if let Some(tec) = &cache.tec {
            // B = r · B̃, r = σ(w_r · rate + q_r)
            let d_b_tilde = db * cache.r;
            let d_r_pre = db * cache.b_tilde * cache.r * (1.0 - cache.r);
            grads.get_mut(self.layout.w_r)[0] += d_r_pre * cache.rate;
            grads.get_mut(self.layout.q_r)[0] += d_r_pre;
            let (dg_masked, du) = self.tec_backward(tec, d_b_tilde, grads)?;
            self.subreddit_backward(cache.subreddit, &du, grads);
            dg = self.masked_influence(&dg_masked);
        }
        Ok(dg)
    }

    fn lstm_backward(&self, steps: &[LstmStep], dh_last: &[f64], grads: &mut ModelParams) {
        let ids = &self.layout.lstm;
        let w = LstmWeights {
            w_x: self.params.get(ids.w_x),
            w_h: self.params.get(ids.w_h),
            b: self.params.get(ids.b),
            hidden: ids.hidden,
        };
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; ids.hidden];
        for st in steps.iter().rev() {
            let g = lstm_step_backward(w, st, &dh, &dc);
            outer_add(grads.get_mut(ids.w_x), &g.da, &st.x);
            outer_add(grads.get_mut(ids.w_h), &g.da, &st.h_prev);
            add_into(grads.get_mut(ids.b), &g.da);
            dh = g.dh_prev;
            dc = g.dc_prev;
        }
    }

    /// Consumes the items of one interval (each list in timestamp order)
    /// and returns the new influence state. Only the GRUs the variant uses
    /// are stepped; an empty sequence leaves its hidden state unchanged.
    pub fn aggregate_influence(
        &self,
        prior: &InfluenceState,
        news: &[&[u32]],
        submissions: &[(&[u32], usize)],
        k: i64,
    ) -> Result<(InfluenceState, IntervalTrace)> {
        let variant = self.config.variant;
        let mut trace = IntervalTrace::empty();
        let mut h_news = prior.h_news.clone();
        if variant.uses_news_influence() {
            let w = gru_weights(&self.params, &self.layout.gru_news);
            for tokens in news {
                let (f, cache) = self.static_features(tokens)?;
                let step = gru_step(w, &f, &h_news);
                h_news.clone_from(&step.h);
                trace.news.push(cache);
                trace.news_steps.push(step);
            }
        }
        let mut h_sub = prior.h_submission.clone();
        if variant.uses_submission_influence() {
            let w = gru_weights(&self.params, &self.layout.gru_submission);
            for &(tokens, subreddit) in submissions {
                let (mut f, cache) = self.static_features(tokens)?;
                f.extend(self.subreddit_vector(subreddit)?);
                let step = gru_step(w, &f, &h_sub);
                h_sub.clone_from(&step.h);
                trace.submissions.push((cache, subreddit));
                trace.submission_steps.push(step);
            }
        }
        let state = InfluenceState::from_hidden(h_news, h_sub, k);
        if !state.is_finite() {
            return Err(Error::Numerical(format!("non-finite influence state at interval {k}")));
        }
        Ok((state, trace))
    }

    /// Backpropagates `dG` through one interval's aggregation. The prior
    /// hidden states are treated as constants.
    pub fn backward_influence(&self, trace: &IntervalTrace, dg: &[f64], grads: &mut ModelParams) {
        let h = self.config.gru_hidden;
        let feat = self.config.feature_dim();
        let run = |ids: &GruIds, steps: &[GruStep], dh_final: &[f64], grads: &mut ModelParams| -> Vec<Vec<f64>> {
            let w = gru_weights(&self.params, ids);
            let mut dh = dh_final.to_vec();
            let mut dxs = vec![Vec::new(); steps.len()];
            for (i, st) in steps.iter().enumerate().rev() {
                let g = gru_step_backward(w, st, &dh);
                outer_add(grads.get_mut(ids.w_x), &g.d_ax, &st.x);
                outer_add(grads.get_mut(ids.w_h), &g.d_ah, &st.h_prev);
                add_into(grads.get_mut(ids.b_x), &g.d_ax);
                add_into(grads.get_mut(ids.b_h), &g.d_ah);
                dh = g.dh_prev;
                dxs[i] = g.dx;
            }
            dxs
        };
        if dg[..h].iter().any(|&v| v != 0.0) {
            let dxs = run(&self.layout.gru_news, &trace.news_steps, &dg[..h], grads);
            for (cache, dx) in trace.news.iter().zip(&dxs) {
                self.static_backward(cache, dx, grads);
            }
        }
        if dg[h..].iter().any(|&v| v != 0.0) {
            let dxs = run(&self.layout.gru_submission, &trace.submission_steps, &dg[h..], grads);
            for ((cache, subreddit), dx) in trace.submissions.iter().zip(&dxs) {
                self.static_backward(cache, &dx[..feat], grads);
                self.subreddit_backward(*subreddit, &dx[feat..], grads);
            }
        }
    }

    pub fn subreddit_embedding(&self, subreddit: usize) -> Result<Vec<f64>> {
        self.subreddit_vector(subreddit)
    }
}

/// Multiplies every `[kernel][in]` slice of output filter `o` by `gain[o]`.
pub fn scale_kernel(w_s: &[f64], gain: &[f64], out_channels: usize) -> Result<Vec<f64>> {
    if gain.len() != out_channels || out_channels == 0 || w_s.len() % out_channels != 0 {
        return Err(Error::Shape(format!(
            "gain of length {} cannot calibrate a kernel with {} filters",
            gain.len(),
            out_channels
        )));
    }
    let per = w_s.len() / out_channels;
    Ok(w_s
        .iter()
        .enumerate()
        .map(|(i, w)| w * gain[i / per])
        .collect())
}
