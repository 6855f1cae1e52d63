//! The editing network: a bidirectional recurrent encoder over the source
//! sentence and a decoder that combines source attention with delete/insert
//! attention over encoded dictionary pairs.
//!
//! All math runs in f64. Forward passes cache intermediates; backward passes
//! are hand-written and verified against central finite differences.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod graph;
pub mod lstm;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::{attend, masked_softmax, AttentionCache, AttentionWeights};
pub use decoder::{
    combine, decoder_step, delete_attention, dictionary_context, init_carry, insert_attention,
    output_distribution, source_attention, DecoderCarry, StepAttention,
};
pub use encoder::{encode_source, EncoderOutput};
pub use lstm::LstmWeights;

/// Encoder and decoder are both two stacked recurrent layers.
pub const NUM_LAYERS: usize = 2;

/// Weight initialization range.
pub const INIT_SCALE: f64 = 0.08;

/// Mutually consistent model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_emb: usize,
    /// Decoder hidden width; the bidirectional encoder uses half per direction.
    pub d_hidden: usize,
    /// Hidden width of the attention scoring layers.
    pub d_attn: usize,
    /// Number of dictionary slots.
    pub m: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 5 {
            return Err(Error::Config("vocabulary too small".into()));
        }
        if self.d_emb == 0 || self.d_hidden == 0 || self.d_attn == 0 || self.m == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.d_hidden.is_multiple_of(2) {
            return Err(Error::Config(
                "d_hidden must be even (split across encoder directions)".into(),
            ));
        }
        Ok(())
    }

    pub fn half_hidden(&self) -> usize {
        self.d_hidden / 2
    }

    /// Width of the dictionary context c_t.
    pub fn dict_ctx(&self) -> usize {
        2 * self.d_emb
    }

    /// Width of the combine-layer input [h_t ⊕ c_t ⊕ c'_t].
    pub fn combine_in(&self) -> usize {
        self.d_hidden + self.dict_ctx() + self.d_hidden
    }

    /// Width of the output-projection input [y_prev ⊕ h̃_t ⊕ c_t ⊕ c'_t].
    pub fn output_in(&self) -> usize {
        self.d_emb + self.d_hidden + self.dict_ctx() + self.d_hidden
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParameters {
    pub dims: ModelDims,
    /// Shared embedding table, used by the encoder input, decoder input,
    /// dictionary phrase sums, and the output layer's y_prev slot.
    pub embedding: Array2<f64>,
    pub enc_fwd: Vec<LstmWeights>,
    pub enc_bwd: Vec<LstmWeights>,
    pub dec: Vec<LstmWeights>,
    /// Per decoder layer, maps the encoder's final hidden to the initial one.
    pub bridge_h: Vec<Array2<f64>>,
    pub bridge_c: Vec<Array2<f64>>,
    pub src_attn: AttentionWeights,
    pub del_attn: AttentionWeights,
    pub ins_attn: AttentionWeights,
    pub w_c: Array2<f64>,
    pub w_y: Array2<f64>,
    pub b_y: Array1<f64>,
}

impl ModelParameters {
    /// Random initialization: weights uniform in ±INIT_SCALE, biases zero
    /// except the LSTM forget gates, which start at one.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let half = dims.half_hidden();
        let h = dims.d_hidden;
        fn mat<R: Rng>(rng: &mut R, r: usize, c: usize) -> Array2<f64> {
            Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 * INIT_SCALE - INIT_SCALE)
        }
        fn vec1<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
            Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 * INIT_SCALE - INIT_SCALE)
        }
        let embedding = mat(rng, dims.vocab, dims.d_emb);
        let enc_fwd = vec![
            LstmWeights::new(mat(rng, 4 * half, dims.d_emb), mat(rng, 4 * half, half)),
            LstmWeights::new(mat(rng, 4 * half, h), mat(rng, 4 * half, half)),
        ];
        let enc_bwd = vec![
            LstmWeights::new(mat(rng, 4 * half, dims.d_emb), mat(rng, 4 * half, half)),
            LstmWeights::new(mat(rng, 4 * half, h), mat(rng, 4 * half, half)),
        ];
        let dec = vec![
            LstmWeights::new(mat(rng, 4 * h, dims.d_emb), mat(rng, 4 * h, h)),
            LstmWeights::new(mat(rng, 4 * h, h), mat(rng, 4 * h, h)),
        ];
        let bridge_h = vec![mat(rng, h, h), mat(rng, h, h)];
        let bridge_c = vec![mat(rng, h, h), mat(rng, h, h)];
        let src_attn = AttentionWeights {
            w: mat(rng, dims.d_attn, h + h),
            v: vec1(rng, dims.d_attn),
        };
        let del_attn = AttentionWeights {
            w: mat(rng, dims.d_attn, h + dims.d_emb),
            v: vec1(rng, dims.d_attn),
        };
        let ins_attn = AttentionWeights {
            w: mat(rng, dims.d_attn, h + dims.d_emb),
            v: vec1(rng, dims.d_attn),
        };
        let w_c = mat(rng, h, dims.combine_in());
        let w_y = mat(rng, dims.vocab, dims.output_in());
        let b_y = Array1::zeros(dims.vocab);
        Ok(Self {
            dims,
            embedding,
            enc_fwd,
            enc_bwd,
            dec,
            bridge_h,
            bridge_c,
            src_attn,
            del_attn,
            ins_attn,
            w_c,
            w_y,
            b_y,
        })
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        let zl = |w: &LstmWeights| LstmWeights {
            w_x: z2(&w.w_x),
            w_h: z2(&w.w_h),
            b: z1(&w.b),
        };
        let za = |a: &AttentionWeights| AttentionWeights { w: z2(&a.w), v: z1(&a.v) };
        Self {
            dims: self.dims,
            embedding: z2(&self.embedding),
            enc_fwd: self.enc_fwd.iter().map(zl).collect(),
            enc_bwd: self.enc_bwd.iter().map(zl).collect(),
            dec: self.dec.iter().map(zl).collect(),
            bridge_h: self.bridge_h.iter().map(z2).collect(),
            bridge_c: self.bridge_c.iter().map(z2).collect(),
            src_attn: za(&self.src_attn),
            del_attn: za(&self.del_attn),
            ins_attn: za(&self.ins_attn),
            w_c: z2(&self.w_c),
            w_y: z2(&self.w_y),
            b_y: z1(&self.b_y),
        }
    }

    /// Named flat views of every tensor, in a fixed order shared by
    /// [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.push(("embedding".into(), self.embedding.as_slice().unwrap()));
        for (name, layers) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            for (l, w) in layers.iter().enumerate() {
                out.push((format!("{name}.{l}.w_x"), w.w_x.as_slice().unwrap()));
                out.push((format!("{name}.{l}.w_h"), w.w_h.as_slice().unwrap()));
                out.push((format!("{name}.{l}.b"), w.b.as_slice().unwrap()));
            }
        }
        for (l, w) in self.bridge_h.iter().enumerate() {
            out.push((format!("bridge_h.{l}"), w.as_slice().unwrap()));
        }
        for (l, w) in self.bridge_c.iter().enumerate() {
            out.push((format!("bridge_c.{l}"), w.as_slice().unwrap()));
        }
        for (name, a) in [
            ("src_attn", &self.src_attn),
            ("del_attn", &self.del_attn),
            ("ins_attn", &self.ins_attn),
        ] {
            out.push((format!("{name}.w"), a.w.as_slice().unwrap()));
            out.push((format!("{name}.v"), a.v.as_slice().unwrap()));
        }
        out.push(("w_c".into(), self.w_c.as_slice().unwrap()));
        out.push(("w_y".into(), self.w_y.as_slice().unwrap()));
        out.push(("b_y".into(), self.b_y.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("embedding".into(), self.embedding.as_slice_mut().unwrap()));
        for (name, layers) in [
            ("enc_fwd", &mut self.enc_fwd),
            ("enc_bwd", &mut self.enc_bwd),
            ("dec", &mut self.dec),
        ] {
            for (l, w) in layers.iter_mut().enumerate() {
                out.push((format!("{name}.{l}.w_x"), w.w_x.as_slice_mut().unwrap()));
                out.push((format!("{name}.{l}.w_h"), w.w_h.as_slice_mut().unwrap()));
                out.push((format!("{name}.{l}.b"), w.b.as_slice_mut().unwrap()));
            }
        }
        for (l, w) in self.bridge_h.iter_mut().enumerate() {
            out.push((format!("bridge_h.{l}"), w.as_slice_mut().unwrap()));
        }
        for (l, w) in self.bridge_c.iter_mut().enumerate() {
            out.push((format!("bridge_c.{l}"), w.as_slice_mut().unwrap()));
        }
        for (name, a) in [
            ("src_attn", &mut self.src_attn),
            ("del_attn", &mut self.del_attn),
            ("ins_attn", &mut self.ins_attn),
        ] {
            out.push((format!("{name}.w"), a.w.as_slice_mut().unwrap()));
            out.push((format!("{name}.v"), a.v.as_slice_mut().unwrap()));
        }
        out.push(("w_c".into(), self.w_c.as_slice_mut().unwrap()));
        out.push(("w_y".into(), self.w_y.as_slice_mut().unwrap()));
        out.push(("b_y".into(), self.b_y.as_slice_mut().unwrap()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        let checks: Vec<(&str, bool)> = vec![
            ("embedding", self.embedding.dim() == (d.vocab, d.d_emb)),
            ("w_c", self.w_c.dim() == (d.d_hidden, d.combine_in())),
            ("w_y", self.w_y.dim() == (d.vocab, d.output_in())),
            ("b_y", self.b_y.len() == d.vocab),
            ("src_attn", self.src_attn.w.dim() == (d.d_attn, 2 * d.d_hidden)),
            ("del_attn", self.del_attn.w.dim() == (d.d_attn, d.d_hidden + d.d_emb)),
            ("ins_attn", self.ins_attn.w.dim() == (d.d_attn, d.d_hidden + d.d_emb)),
            ("layers", self.enc_fwd.len() == NUM_LAYERS
                && self.enc_bwd.len() == NUM_LAYERS
                && self.dec.len() == NUM_LAYERS
                && self.bridge_h.len() == NUM_LAYERS
                && self.bridge_c.len() == NUM_LAYERS),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Shape(format!("parameter {name} has inconsistent shape")));
            }
        }
        for (name, slice) in self.tensors() {
            if slice.iter().any(|x| !x.is_finite()) {
                return Err(Error::Shape(format!("parameter {name} contains non-finite values")));
            }
        }
        Ok(())
    }

    /// Global L2 norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, s)| s.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
