//! Conv-LLaMA block: a rotary self-attention + SwiGLU branch and a
//! point-wise + depth-wise convolution branch, merged by a learned
//! softmax-weighted average.
//!
//! Sequences are laid out `[length, width]`, one row per position.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::numerics::{Bindings, Graph, ParamId, ParamStore, Tensor, Var};

/// Depth-wise kernel width used throughout the model.
pub const KERNEL_WIDTH: usize = 3;

/// Validity flag per sequence position; padded positions are `false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqMask {
    valid: Vec<bool>,
}

impl SeqMask {
    pub fn all(len: usize) -> Self {
        Self {
            valid: vec![true; len],
        }
    }

    /// First `valid` of `len` positions are real.
    pub fn prefix(valid: usize, len: usize) -> Self {
        Self {
            valid: (0..len).map(|i| i < valid).collect(),
        }
    }

    pub fn from_flags(valid: Vec<bool>) -> Self {
        Self { valid }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_full(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Attention mask where every query sees exactly the valid keys.
    pub fn key_mask(&self) -> Vec<bool> {
        let n = self.valid.len();
        let mut out = Vec::with_capacity(n * n);
        for _ in 0..n {
            out.extend_from_slice(&self.valid);
        }
        out
    }

    /// Zeroes padded rows; no-op when every position is valid.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.is_full() {
            Ok(x)
        } else {
            g.mask_rows(x, self.valid.clone())
        }
    }
}

/// Parameters of one Conv-LLaMA block.
#[derive(Clone, Debug)]
pub struct ConvLlamaParams {
    pub width: usize,
    pub attn_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ffn_norm: ParamId,
    pub w_gate: ParamId,
    pub w_up: ParamId,
    pub w_down: ParamId,
    pub conv_norm: ParamId,
    pub pw_weight: ParamId,
    pub pw_bias: ParamId,
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub merge_logits: ParamId,
}

impl ConvLlamaParams {
    /// Registers a freshly initialised block under `prefix`.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Self {
        let d = width;
        let hidden = 2 * d;
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        let attn_norm = add("attn_norm", Tensor::filled(&[d], 1.0));
        let wq = add("wq", init::uniform_fan_in(rng, d, d));
        let wk = add("wk", init::uniform_fan_in(rng, d, d));
        let wv = add("wv", init::uniform_fan_in(rng, d, d));
        let wo = add("wo", init::uniform_fan_in(rng, d, d));
        let ffn_norm = add("ffn_norm", Tensor::filled(&[d], 1.0));
        let w_gate = add("w_gate", init::uniform_fan_in(rng, d, hidden));
        let w_up = add("w_up", init::uniform_fan_in(rng, d, hidden));
        let w_down = add("w_down", init::uniform_fan_in(rng, hidden, d));
        let conv_norm = add("conv_norm", Tensor::filled(&[d], 1.0));
        let pw_weight = add("pw_weight", init::uniform_fan_in(rng, d, d));
        let pw_bias = add("pw_bias", Tensor::zeros(&[d]));
        let bound = 1.0 / (KERNEL_WIDTH as f64).sqrt();
        let dw_kernel = add("dw_kernel", init::uniform(rng, &[d, KERNEL_WIDTH], bound));
        let dw_bias = add("dw_bias", Tensor::zeros(&[d]));
        let merge_logits = add("merge_logits", Tensor::zeros(&[2]));
        Self {
            width,
            attn_norm,
            wq,
            wk,
            wv,
            wo,
            ffn_norm,
            w_gate,
            w_up,
            w_down,
            conv_norm,
            pw_weight,
            pw_bias,
            dw_kernel,
            dw_bias,
            merge_logits,
        }
    }

    fn check_input(&self, g: &Graph, x: Var, mask: &SeqMask) -> Result<()> {
        let v = g.value(x);
        if v.cols() != self.width || v.rows() != mask.len() || v.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "block of width {} got input {:?} with mask of length {}",
                self.width,
                v.shape(),
                mask.len()
            )));
        }
        Ok(())
    }

    /// Pre-normalised rotary self-attention and SwiGLU, each with a residual.
    pub fn attention_branch(&self, g: &mut Graph, p: &Bindings, x: Var, mask: &SeqMask) -> Result<Var> {
        self.check_input(g, x, mask)?;
        let h = g.rms_norm(x, p.var(self.attn_norm))?;
        let q = g.matmul(h, p.var(self.wq))?;
        let q = g.rope(q)?;
        let k = g.matmul(h, p.var(self.wk))?;
        let k = g.rope(k)?;
        let v = g.matmul(h, p.var(self.wv))?;
        let scores = g.matmul_bt(q, k)?;
        let scores = g.scale(scores, 1.0 / (self.width as f64).sqrt());
        let key_mask = (!mask.is_full()).then(|| mask.key_mask());
        let attn = g.softmax_rows(scores, key_mask)?;
        let ctx = g.matmul(attn, v)?;
        let o = g.matmul(ctx, p.var(self.wo))?;
        let x1 = g.add(x, o)?;

        let h2 = g.rms_norm(x1, p.var(self.ffn_norm))?;
        let gate = g.matmul(h2, p.var(self.w_gate))?;
        let gate = g.silu(gate);
        let up = g.matmul(h2, p.var(self.w_up))?;
        let ff = g.mul(gate, up)?;
        let ff = g.matmul(ff, p.var(self.w_down))?;
        g.add(x1, ff)
    }

    /// Convolution term of the CNN branch, before the residual add.
    pub fn cnn_term(&self, g: &mut Graph, p: &Bindings, x: Var, mask: &SeqMask) -> Result<Var> {
        self.check_input(g, x, mask)?;
        let h = g.rms_norm(x, p.var(self.conv_norm))?;
        let h = g.linear(h, p.var(self.pw_weight), p.var(self.pw_bias))?;
        let h = g.silu(h);
        let h = mask.apply(g, h)?;
        let h = g.depthwise_conv1d(h, p.var(self.dw_kernel))?;
        let h = g.add_row(h, p.var(self.dw_bias))?;
        mask.apply(g, h)
    }

    /// Point-wise projection, SiLU, depth-wise convolution, residual.
    pub fn cnn_branch(&self, g: &mut Graph, p: &Bindings, x: Var, mask: &SeqMask) -> Result<Var> {
        let h = self.cnn_term(g, p, x, mask)?;
        g.add(x, h)
    }

    /// Branch merge weights `softmax(merge_logits)`.
    pub fn merge_weights(&self, g: &mut Graph, p: &Bindings) -> Result<Var> {
        g.softmax_rows(p.var(self.merge_logits), None)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var, mask: &SeqMask) -> Result<Var> {
        let a = self.attention_branch(g, p, x, mask)?;
        let c = self.cnn_branch(g, p, x, mask)?;
        let w = self.merge_weights(g, p)?;
        let a = g.scale_by(a, w, 0)?;
        let c = g.scale_by(c, w, 1)?;
        g.add(a, c)
    }
}
