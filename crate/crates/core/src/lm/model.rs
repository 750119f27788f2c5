// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-norm GPT-style decoder with tied embedding/unembedding.
//!
//! Each block updates the residual stream as
//!
//! ```text
//! x_mid  = x + Attn(LN1(x))
//! m      = gelu(W_K · LN2(x_mid) + b_K)        (coefficients, d_mlp per position)
//! x_next = x_mid + Σ_i m_i · v_i               (v_i = row i of W_V)
//! ```
//!
//! The MLP has no output bias, so the MLP update is exactly the sum of
//! coefficient-scaled value vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Tape, Var};
use crate::data::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::lm::intervention::InterventionSpec;
use crate::lm::tokenizer::Tokenizer;
use crate::lm::trace::{LayerTrace, ResidualTrace};
use crate::lm::ValueVectorId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LM_KIND: &str = "lm";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub max_seq: usize,
}

impl LmConfig {
    /// The default toy architecture for a given vocabulary.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_mlp: 256,
            max_seq: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size == 0 || self.d_model < 2 || self.n_layers == 0 || self.max_seq == 0 {
            return bad(format!("degenerate model config {self:?}"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("{} heads do not divide d_model {}", self.n_heads, self.d_model));
        }
        if self.d_mlp != 4 * self.d_model {
            return bad(format!("d_mlp must be 4 * d_model, got {}", self.d_mlp));
        }
        Ok(())
    }

    pub fn value_vector_count(&self) -> usize {
        self.n_layers * self.d_mlp
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub attn_q: Tensor<T>,
    pub attn_q_bias: Tensor<T>,
    pub attn_k: Tensor<T>,
    pub attn_k_bias: Tensor<T>,
    pub attn_v: Tensor<T>,
    pub attn_v_bias: Tensor<T>,
    pub attn_out: Tensor<T>,
    pub attn_out_bias: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    /// `d_mlp × d`; row `i` is key vector `k_i`.
    pub mlp_keys: Tensor<T>,
    pub mlp_key_bias: Tensor<T>,
    /// `d_mlp × d`; row `i` is value vector `v_i`.
    pub mlp_values: Tensor<T>,
}

const BLOCK_TENSORS: [&str; 15] = [
    "ln1.gain",
    "ln1.bias",
    "attn.q",
    "attn.q_bias",
    "attn.k",
    "attn.k_bias",
    "attn.v",
    "attn.v_bias",
    "attn.out",
    "attn.out_bias",
    "ln2.gain",
    "ln2.bias",
    "mlp.keys",
    "mlp.key_bias",
    "mlp.values",
];

impl<T: Scalar> Block<T> {
    fn tensors(&self) -> [&Tensor<T>; 15] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.attn_q,
            &self.attn_q_bias,
            &self.attn_k,
            &self.attn_k_bias,
            &self.attn_v,
            &self.attn_v_bias,
            &self.attn_out,
            &self.attn_out_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.mlp_keys,
            &self.mlp_key_bias,
            &self.mlp_values,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 15] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.attn_q,
            &mut self.attn_q_bias,
            &mut self.attn_k,
            &mut self.attn_k_bias,
            &mut self.attn_v,
            &mut self.attn_v_bias,
            &mut self.attn_out,
            &mut self.attn_out_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.mlp_keys,
            &mut self.mlp_key_bias,
            &mut self.mlp_values,
        ]
    }

    fn shapes(c: &LmConfig) -> [Vec<usize>; 15] {
        let (d, f) = (c.d_model, c.d_mlp);
        [
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![f, d],
            vec![f],
            vec![f, d],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLm<T> {
    pub config: LmConfig,
    /// `|V| × d`; also the unembedding.
    pub embedding: Tensor<T>,
    pub positions: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub final_gain: Tensor<T>,
    pub final_bias: Tensor<T>,
}

/// Tape handles for one block's parameters.
#[derive(Clone, Debug)]
pub struct BlockVars {
    ln1: (Var, Var),
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
    out: (Var, Var),
    ln2: (Var, Var),
    keys: Var,
    key_bias: Var,
    pub values: Var,
}

/// Tape handles for every parameter of a [`TransformerLm`], in
/// [`TransformerLm::named_tensors`] order via [`LmVars::all`].
#[derive(Clone, Debug)]
pub struct LmVars {
    pub embedding: Var,
    positions: Var,
    pub blocks: Vec<BlockVars>,
    final_norm: (Var, Var),
    all: Vec<Var>,
}

impl LmVars {
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

/// Hook that may return an additive update for a layer's MLP output, given
/// the layer index and its (possibly intervened) coefficient matrix.
pub type MlpDeltaHook<'h, T> = dyn Fn(usize, &Tensor<T>) -> Option<Tensor<T>> + 'h;

#[derive(Default)]
pub struct ForwardOptions<'o, T> {
    pub intervention: Option<&'o InterventionSpec>,
    pub capture: bool,
    pub mlp_delta: Option<&'o MlpDeltaHook<'o, T>>,
}

/// Output handles of a forward pass on a tape.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    /// Final-normalized hidden states, `n × d`.
    pub hidden: Var,
    /// Residual stream after the last block, before final normalization.
    pub residual: Var,
    trace: Option<TraceVars>,
}

#[derive(Clone, Debug)]
struct TraceVars {
    embed: Var,
    layers: Vec<[Var; 5]>,
}

impl<T: Scalar> TransformerLm<T> {
    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let proj_std = std / ((2 * config.n_layers) as f64).sqrt();
        let mut normal = |shape: &[usize], s: f64| {
            let dist = Normal::new(0.0, s).expect("valid std");
            Tensor::from_fn(shape, |_| T::of(dist.sample(&mut rng)))
        };
        let (d, f) = (config.d_model, config.d_mlp);
        let embedding = normal(&[config.vocab_size, d], std);
        let positions = normal(&[config.max_seq, d], std);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_gain: Tensor::full(&[d], T::one()),
                ln1_bias: Tensor::zeros(&[d]),
                attn_q: normal(&[d, d], std),
                attn_q_bias: Tensor::zeros(&[d]),
                attn_k: normal(&[d, d], std),
                attn_k_bias: Tensor::zeros(&[d]),
                attn_v: normal(&[d, d], std),
                attn_v_bias: Tensor::zeros(&[d]),
                attn_out: normal(&[d, d], proj_std),
                attn_out_bias: Tensor::zeros(&[d]),
                ln2_gain: Tensor::full(&[d], T::one()),
                ln2_bias: Tensor::zeros(&[d]),
                mlp_keys: normal(&[f, d], std),
                mlp_key_bias: Tensor::zeros(&[f]),
                mlp_values: normal(&[f, d], proj_std),
            })
            .collect();
        Ok(Self {
            config,
            embedding,
            positions,
            blocks,
            final_gain: Tensor::full(&[d], T::one()),
            final_bias: Tensor::zeros(&[d]),
        })
    }

    /// Every parameter with its checkpoint name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("positions".to_string(), &self.positions),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                out.push((format!("blocks.{l}.{name}"), t));
            }
        }
        out.push(("final_norm.gain".to_string(), &self.final_gain));
        out.push(("final_norm.bias".to_string(), &self.final_bias));
        out
    }

    /// Mutable parameters in [`Self::named_tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding, &mut self.positions];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> TransformerLm<U> {
        let mut out = TransformerLm::<U>::init(self.config.clone(), 0).expect("config already valid");
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.named_tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn check_id(&self, id: ValueVectorId) -> Result<()> {
        if id.layer >= self.config.n_layers || id.index >= self.config.d_mlp {
            return Err(Error::Index(format!(
                "value vector {id} out of range for {} layers x {} neurons",
                self.config.n_layers, self.config.d_mlp
            )));
        }
        Ok(())
    }

    pub fn value_vector(&self, id: ValueVectorId) -> Result<&[T]> {
        self.check_id(id)?;
        Ok(self.blocks[id.layer].mlp_values.row(id.index))
    }

    pub fn key_vector(&self, id: ValueVectorId) -> Result<&[T]> {
        self.check_id(id)?;
        Ok(self.blocks[id.layer].mlp_keys.row(id.index))
    }

    /// Put every parameter on `tape`. Trainable parameters receive
    /// gradients; otherwise they are borrowed constants.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> LmVars {
        let mut all = Vec::new();
        let mut put = |t: &'a Tensor<T>| {
            let v = if trainable { tape.param(t) } else { tape.constant_ref(t) };
            all.push(v);
            v
        };
        let embedding = put(&self.embedding);
        let positions = put(&self.positions);
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                ln1: (put(&b.ln1_gain), put(&b.ln1_bias)),
                q: (put(&b.attn_q), put(&b.attn_q_bias)),
                k: (put(&b.attn_k), put(&b.attn_k_bias)),
                v: (put(&b.attn_v), put(&b.attn_v_bias)),
                out: (put(&b.attn_out), put(&b.attn_out_bias)),
                ln2: (put(&b.ln2_gain), put(&b.ln2_bias)),
                keys: put(&b.mlp_keys),
                key_bias: put(&b.mlp_key_bias),
                values: put(&b.mlp_values),
            })
            .collect();
        let final_norm = (put(&self.final_gain), put(&self.final_bias));
        LmVars {
            embedding,
            positions,
            blocks,
            final_norm,
            all,
        }
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens exceeds max_seq {}",
                tokens.len(),
                self.config.max_seq
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Forward pass recorded on `tape` using previously bound parameters.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<'_, T>,
        vars: &LmVars,
        tokens: &[usize],
        opts: &ForwardOptions<'_, T>,
    ) -> Result<ForwardVars> {
        self.check_tokens(tokens)?;
        let factors = match opts.intervention {
            Some(spec) => Some(spec.layer_factors::<T>(&self.config)?),
            None => None,
        };
        let n = tokens.len();
        let heads = self.config.n_heads;
        let tok = tape.gather_rows(vars.embedding, tokens)?;
        let pos = tape.slice_rows(vars.positions, 0, n)?;
        let mut x = tape.add(tok, pos)?;
        let embed = x;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (l, bv) in vars.blocks.iter().enumerate() {
            let pre = x;
            let h = tape.layer_norm(x, bv.ln1.0, bv.ln1.1)?;
            let q = linear(tape, h, bv.q)?;
            let k = linear(tape, h, bv.k)?;
            let v = linear(tape, h, bv.v)?;
            let a = tape.causal_attention(q, k, v, heads)?;
            let attn = linear(tape, a, bv.out)?;
            let mid = tape.add(x, attn)?;

            let h2 = tape.layer_norm(mid, bv.ln2.0, bv.ln2.1)?;
            let keyed = tape.matmul_t(h2, bv.keys)?;
            let keyed = tape.add_row(keyed, bv.key_bias)?;
            let mut coeffs = tape.gelu(keyed);
            if let Some(f) = factors.as_ref().and_then(|f| f[l].as_ref()) {
                coeffs = tape.scale_cols(coeffs, f.clone())?;
            }
            let mut mlp = tape.matmul(coeffs, bv.values)?;
            if let Some(hook) = opts.mlp_delta {
                if let Some(delta) = hook(l, tape.value(coeffs)) {
                    let dv = tape.constant(delta);
                    mlp = tape.add(mlp, dv)?;
                }
            }
            x = tape.add(mid, mlp)?;
            layers.push([pre, attn, mlp, coeffs, x]);
        }
        let hidden = tape.layer_norm(x, vars.final_norm.0, vars.final_norm.1)?;
        let logits = tape.matmul_t(hidden, vars.embedding)?;
        Ok(ForwardVars {
            logits,
            hidden,
            residual: x,
            trace: opts.capture.then_some(TraceVars { embed, layers }),
        })
    }

    /// Inference forward pass. Returns logits (`n × |V|`) and, when
    /// `capture` is set, the residual trace.
    pub fn forward(
        &self,
        tokens: &[usize],
        intervention: Option<&InterventionSpec>,
        capture: bool,
    ) -> Result<(Tensor<T>, Option<ResidualTrace<T>>)> {
        self.forward_with(
            tokens,
            &ForwardOptions {
                intervention,
                capture,
                mlp_delta: None,
            },
        )
    }

    pub fn forward_with(
        &self,
        tokens: &[usize],
        opts: &ForwardOptions<'_, T>,
    ) -> Result<(Tensor<T>, Option<ResidualTrace<T>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &vars, tokens, opts)?;
        let trace = out.trace.as_ref().map(|tv| extract_trace(&tape, tv, &out));
        Ok((tape.value(out.logits).clone(), trace))
    }

    /// Logits for the final position only.
    pub fn next_token_logits(&self, tokens: &[usize], intervention: Option<&InterventionSpec>) -> Result<Vec<T>> {
        let (logits, _) = self.forward(tokens, intervention, false)?;
        Ok(logits.row(logits.rows() - 1).to_vec())
    }

    /// Apply the final normalization and unembedding to arbitrary residual
    /// states (`n × d`).
    pub fn unembed(&self, states: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant_ref(states);
        let g = tape.constant_ref(&self.final_gain);
        let b = tape.constant_ref(&self.final_bias);
        let e = tape.constant_ref(&self.embedding);
        let h = tape.layer_norm(x, g, b)?;
        let logits = tape.matmul_t(h, e)?;
        Ok(tape.value(logits).clone())
    }

    pub fn to_checkpoint(&self, tokenizer: &Tokenizer, provenance: Value) -> Result<Checkpoint> {
        if tokenizer.len() != self.config.vocab_size {
            return Err(Error::TokenizerMismatch(format!(
                "tokenizer has {} tokens, model vocabulary is {}",
                tokenizer.len(),
                self.config.vocab_size
            )));
        }
        let mut ckpt = Checkpoint::new(json!({
            "kind": LM_KIND,
            "config": self.config,
            "tokenizer_hash": tokenizer.hash(),
            "vocab": tokenizer.tokens(),
            "provenance": provenance,
        }));
        for (name, t) in self.named_tensors() {
            ckpt.insert(name, t.cast());
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Tokenizer)> {
        if ckpt.meta_str("kind") != Some(LM_KIND) {
            return Err(Error::ArchitectureMismatch(format!(
                "expected an lm checkpoint, found kind {:?}",
                ckpt.meta_str("kind")
            )));
        }
        let config: LmConfig = serde_json::from_value(ckpt.metadata["config"].clone())
            .map_err(|e| Error::ArchitectureMismatch(format!("bad lm config: {e}")))?;
        config.validate()?;
        let tokenizer = tokenizer_from_metadata(&ckpt.metadata)?;
        if tokenizer.len() != config.vocab_size {
            return Err(Error::TokenizerMismatch(format!(
                "embedded vocabulary has {} tokens, config says {}",
                tokenizer.len(),
                config.vocab_size
            )));
        }
        let mut model = Self::init(config.clone(), 0)?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let expected_shapes = expected_shapes(&config);
        for ((name, dst), shape) in names.iter().zip(model.tensors_mut()).zip(expected_shapes) {
            let src = ckpt.tensor(name)?;
            if src.shape() != shape.as_slice() {
                return Err(Error::ArchitectureMismatch(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    src.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok((model, tokenizer))
    }
}

fn expected_shapes(c: &LmConfig) -> Vec<Vec<usize>> {
    let mut out = vec![vec![c.vocab_size, c.d_model], vec![c.max_seq, c.d_model]];
    for _ in 0..c.n_layers {
        out.extend(Block::<f32>::shapes(c));
    }
    out.push(vec![c.d_model]);
    out.push(vec![c.d_model]);
    out
}

pub(crate) fn tokenizer_from_metadata(meta: &Value) -> Result<Tokenizer> {
    let vocab: Vec<String> = serde_json::from_value(meta["vocab"].clone())
        .map_err(|e| Error::TokenizerMismatch(format!("checkpoint vocabulary unreadable: {e}")))?;
    let tokenizer = Tokenizer::from_tokens(vocab)?;
    if meta["tokenizer_hash"].as_str() != Some(tokenizer.hash().as_str()) {
        return Err(Error::TokenizerMismatch(
            "embedded vocabulary does not match recorded tokenizer hash".into(),
        ));
    }
    Ok(tokenizer)
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn extract_trace<T: Scalar>(tape: &Tape<'_, T>, tv: &TraceVars, out: &ForwardVars) -> ResidualTrace<T> {
    ResidualTrace {
        embed: tape.value(tv.embed).clone(),
        layers: tv
            .layers
            .iter()
            .map(|[pre, attn, mlp, coeffs, post]| LayerTrace {
                pre: tape.value(*pre).clone(),
                attn: tape.value(*attn).clone(),
                mlp: tape.value(*mlp).clone(),
                coeffs: tape.value(*coeffs).clone(),
                post: tape.value(*post).clone(),
            })
            .collect(),
        final_hidden: tape.value(out.hidden).clone(),
    }
}
