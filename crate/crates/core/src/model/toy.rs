// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small decoder-only transformer with deterministic weights.
//!
//! Pre-LayerNorm blocks (causal multi-head self-attention, then a ReLU MLP),
//! residual connections, a final LayerNorm and a vocabulary projection.
//! LayerNorm has no learned affine and `eps = 1e-5`. The clampable neurons
//! are the MLP hidden units after the ReLU.
//!
//! Weights are drawn from [`SplitMix64`] seeded with `config.seed`, each
//! uniform in `[-b, b)` with `b = 1/sqrt(d_model)`, filled row-major in this
//! order: token embedding `[vocab, d]`, position embedding `[max_context, d]`,
//! then per layer `W_q, W_k, W_v, W_o [d, d]`, `W_in [d, mlp]`, `b_in [mlp]`,
//! `W_out [mlp, d]`, and finally the unembedding `[d, vocab]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_prompt, ActivationModel, Interventions, ModelOutput, NeuronRef, Prompt};
use crate::error::{Result, WasdError};
use crate::rng::{mix_all, SplitMix64};

const LN_EPS: f64 = 1e-5;

/// Shape and seed of a [`ToyTransformer`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTransformerConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            layers: 2,
            d_model: 16,
            heads: 2,
            mlp_hidden: 32,
            max_context: 16,
            seed: 0,
        }
    }
}

impl ToyTransformerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
            ("max_context", self.max_context),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(WasdError::InvalidConfig(format!(
                "{name} must be at least 1"
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(WasdError::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn random(rows: usize, cols: usize, bound: f64, rng: &mut SplitMix64) -> Self {
        let data = (0..rows * cols).map(|_| rng.symmetric(bound)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += x · self` for a row vector `x` of length `rows`.
    #[inline]
    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += xv * w;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w_in: Matrix,
    b_in: Vec<f64>,
    w_out: Matrix,
}

/// Deterministic toy transformer. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ToyTransformerConfig,
    embed: Matrix,
    pos: Matrix,
    blocks: Vec<Block>,
    unembed: Matrix,
    identity: u64,
}

fn layer_norm(x: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
}

impl ToyTransformer {
    pub fn new(config: ToyTransformerConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = SplitMix64::new(config.seed);
        let embed = Matrix::random(config.vocab_size, d, bound, &mut rng);
        let pos = Matrix::random(config.max_context, d, bound, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: Matrix::random(d, d, bound, &mut rng),
                wk: Matrix::random(d, d, bound, &mut rng),
                wv: Matrix::random(d, d, bound, &mut rng),
                wo: Matrix::random(d, d, bound, &mut rng),
                w_in: Matrix::random(d, config.mlp_hidden, bound, &mut rng),
                b_in: (0..config.mlp_hidden)
                    .map(|_| rng.symmetric(bound))
                    .collect(),
                w_out: Matrix::random(config.mlp_hidden, d, bound, &mut rng),
            })
            .collect();
        let unembed = Matrix::random(d, config.vocab_size, bound, &mut rng);
        let identity = mix_all(
            0x0074_6f79,
            [
                config.vocab_size as u64,
                config.layers as u64,
                config.d_model as u64,
                config.heads as u64,
                config.mlp_hidden as u64,
                config.max_context as u64,
                config.seed,
            ],
        );
        Ok(Self {
            config,
            embed,
            pos,
            blocks,
            unembed,
            identity,
        })
    }

    pub fn config(&self) -> &ToyTransformerConfig {
        &self.config
    }

    /// Shared forward pass. With `capture == false` the last layer only
    /// computes the final position, which is all the logits depend on.
    fn run(
        &self,
        prompt: &Prompt,
        interventions: &Interventions,
        capture: bool,
    ) -> Result<(Vec<f64>, BTreeMap<NeuronRef, f64>)> {
        check_prompt(prompt, self.config.vocab_size, self.config.max_context)?;
        let len = prompt.len();
        interventions.check(len, |n| {
            (n.layer as usize) < self.config.layers && (n.channel as usize) < self.config.mlp_hidden
        })?;

        let d = self.config.d_model;
        let hidden = self.config.mlp_hidden;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut resid = vec![0.0; len * d];
        for (p, tok) in prompt.tokens().iter().enumerate() {
            let row = &mut resid[p * d..(p + 1) * d];
            for ((r, e), q) in row
                .iter_mut()
                .zip(self.embed.row(tok.index()))
                .zip(self.pos.row(p))
            {
                *r = e + q;
            }
        }

        let mut activations = BTreeMap::new();
        let mut normed = vec![0.0; len * d];
        let mut q = vec![0.0; len * d];
        let mut k = vec![0.0; len * d];
        let mut v = vec![0.0; len * d];
        let mut attn = vec![0.0; d];
        let mut scores = vec![0.0; len];
        let mut proj = vec![0.0; d];
        let mut act = vec![0.0; hidden];

        for (layer, block) in self.blocks.iter().enumerate() {
            let last_layer = layer + 1 == self.blocks.len();
            // Rows whose outputs are consumed downstream.
            let first_row = if last_layer && !capture { len - 1 } else { 0 };

            for p in 0..len {
                let row = p * d..(p + 1) * d;
                layer_norm(&resid[row.clone()], &mut normed[row.clone()]);
                k[row.clone()].fill(0.0);
                v[row.clone()].fill(0.0);
                block
                    .wk
                    .accumulate(&normed[row.clone()], &mut k[row.clone()]);
                block
                    .wv
                    .accumulate(&normed[row.clone()], &mut v[row.clone()]);
                if p >= first_row {
                    q[row.clone()].fill(0.0);
                    block.wq.accumulate(&normed[row.clone()], &mut q[row]);
                }
            }

            // Attention reads K/V of every earlier row, so write residual
            // updates only after all rows are attended.
            let mut updates = vec![0.0; len * d];
            for i in first_row..len {
                attn.fill(0.0);
                for h in 0..heads {
                    let hs = h * dh..(h + 1) * dh;
                    let qi = &q[i * d..(i + 1) * d][hs.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &k[j * d..(j + 1) * d][hs.clone()];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    for (j, s) in scores.iter().enumerate().take(i + 1) {
                        let w = s / total;
                        let vj = &v[j * d..(j + 1) * d][hs.clone()];
                        for (a, b) in attn[hs.clone()].iter_mut().zip(vj) {
                            *a += w * b;
                        }
                    }
                }
                let upd = &mut updates[i * d..(i + 1) * d];
                block.wo.accumulate(&attn, upd);
            }
            for i in first_row..len {
                for (r, u) in resid[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&updates[i * d..(i + 1) * d])
                {
                    *r += u;
                }
            }

            for p in first_row..len {
                let row = p * d..(p + 1) * d;
                layer_norm(&resid[row.clone()], &mut proj);
                act.copy_from_slice(&block.b_in);
                block.w_in.accumulate(&proj, &mut act);
                let pos_from_end = (len - 1 - p) as u32;
                for (c, a) in act.iter_mut().enumerate() {
                    let neuron = NeuronRef::new(layer as u32, c as u32, pos_from_end);
                    *a = match interventions.get(&neuron) {
                        Some(value) => value,
                        None => a.max(0.0),
                    };
                    if capture {
                        activations.insert(neuron, *a);
                    }
                }
                block.w_out.accumulate(&act, &mut resid[row]);
            }
        }

        let last = (len - 1) * d..len * d;
        layer_norm(&resid[last], &mut proj);
        let mut logits = vec![0.0; self.config.vocab_size];
        self.unembed.accumulate(&proj, &mut logits);
        Ok((logits, activations))
    }
}

impl ActivationModel for ToyTransformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_context(&self) -> usize {
        self.config.max_context
    }

    fn identity(&self) -> u64 {
        self.identity
    }

    fn enumerate_neurons(&self, prompt_len: usize) -> Result<Vec<NeuronRef>> {
        if prompt_len == 0 || prompt_len > self.config.max_context {
            return Err(WasdError::InvalidConfig(format!(
                "prompt length {prompt_len} outside 1..={}",
                self.config.max_context
            )));
        }
        let mut out = Vec::with_capacity(self.config.layers * self.config.mlp_hidden * prompt_len);
        for layer in 0..self.config.layers as u32 {
            for pos in 0..prompt_len as u32 {
                for channel in 0..self.config.mlp_hidden as u32 {
                    out.push(NeuronRef::new(layer, channel, pos));
                }
            }
        }
        Ok(out)
    }

    fn forward(&self, prompt: &Prompt, interventions: &Interventions) -> Result<ModelOutput> {
        let (logits, activations) = self.run(prompt, interventions, true)?;
        Ok(ModelOutput {
            next_token: super::argmax(&logits),
            logits,
            activations,
        })
    }

    fn logits(&self, prompt: &Prompt, interventions: &Interventions) -> Result<Vec<f64>> {
        Ok(self.run(prompt, interventions, false)?.0)
    }
}
