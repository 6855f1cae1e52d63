//! Decoder step: two stacked LSTM layers, source attention, delete/insert
//! attention over the encoded dictionary, a combine layer, and the output
//! projection.

use ndarray::{s, Array1, Array2};

use crate::dict_encoder::EncodedDictionary;

use super::attention::{attend, attend_back, AttentionCache};
use super::encoder::EncoderOutput;
use super::graph::Dropout;
use super::lstm::{accumulate_outer, lstm_back, lstm_step, LstmCache};
use super::{ModelParameters, NUM_LAYERS};

/// Recurrent state per decoder layer.
#[derive(Debug, Clone)]
pub struct DecoderCarry {
    pub h: Vec<Array1<f64>>,
    pub c: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct BridgeCache {
    pub h_out: Vec<Array1<f64>>,
    pub c_out: Vec<Array1<f64>>,
}

/// Attention weights recorded at one step, for traces and visualization.
#[derive(Debug, Clone)]
pub struct StepAttention {
    /// Delete attention over the M dictionary slots.
    pub a: Array1<f64>,
    /// Insert attention over the M dictionary slots.
    pub a_prime: Array1<f64>,
    /// Source attention over the encoder states.
    pub src: Array1<f64>,
}

/// Everything one cached step needs for backward.
#[derive(Debug)]
pub struct StepCache {
    pub prev_id: usize,
    pub x: Array1<f64>,
    pub lstm: Vec<LstmCache>,
    pub drop_mid: Option<Array1<f64>>,
    pub drop_h: Option<Array1<f64>>,
    /// Top hidden state after dropout; feeds the attentions and combine.
    pub h_att: Array1<f64>,
    pub src: AttentionCache,
    pub del: AttentionCache,
    pub ins: AttentionCache,
    pub combine_in: Array1<f64>,
    pub h_tilde: Array1<f64>,
    pub out_in: Array1<f64>,
    pub probs: Array1<f64>,
    pub ablate: bool,
}

impl StepCache {
    pub fn attention(&self) -> StepAttention {
        StepAttention {
            a: self.del.weights.clone(),
            a_prime: self.ins.weights.clone(),
            src: self.src.weights.clone(),
        }
    }
}

/// Initialize the decoder state from the encoder's final states through the
/// per-layer bridge maps.
pub fn init_carry(params: &ModelParameters, enc: &EncoderOutput) -> (DecoderCarry, BridgeCache) {
    let mut h = Vec::with_capacity(NUM_LAYERS);
    let mut c = Vec::with_capacity(NUM_LAYERS);
    for l in 0..NUM_LAYERS {
        h.push(params.bridge_h[l].dot(&enc.final_h).mapv(f64::tanh));
        c.push(params.bridge_c[l].dot(&enc.final_c).mapv(f64::tanh));
    }
    let cache = BridgeCache { h_out: h.clone(), c_out: c.clone() };
    (DecoderCarry { h, c }, cache)
}

/// Backward through the bridge: gradients on the initial decoder states flow
/// to the bridge weights and the encoder's final states.
#[allow(clippy::too_many_arguments)]
pub fn init_carry_back(
    params: &ModelParameters,
    enc: &EncoderOutput,
    cache: &BridgeCache,
    d_h0: &[Array1<f64>],
    d_c0: &[Array1<f64>],
    grads: &mut ModelParameters,
    d_final_h: &mut Array1<f64>,
    d_final_c: &mut Array1<f64>,
) {
    for l in 0..NUM_LAYERS {
        let d_pre_h = &d_h0[l] * &cache.h_out[l].mapv(|v| 1.0 - v * v);
        accumulate_outer(&mut grads.bridge_h[l], &d_pre_h, &enc.final_h);
        *d_final_h += &params.bridge_h[l].t().dot(&d_pre_h);

        let d_pre_c = &d_c0[l] * &cache.c_out[l].mapv(|v| 1.0 - v * v);
        accumulate_outer(&mut grads.bridge_c[l], &d_pre_c, &enc.final_c);
        *d_final_c += &params.bridge_c[l].t().dot(&d_pre_c);
    }
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|x| x / sum);
    out
}

/// One cached decoder step. Consumes the previous token, advances the
/// recurrent state, and produces the next-token distribution.
pub fn decoder_step_cached(
    params: &ModelParameters,
    carry: &DecoderCarry,
    prev_id: usize,
    enc: &EncoderOutput,
    ed: &EncodedDictionary,
    mut dropout: Option<&mut Dropout<'_>>,
    ablate: bool,
) -> (DecoderCarry, StepCache) {
    let dims = &params.dims;
    let x = params.embedding.row(prev_id).to_owned();

    let cache0 = lstm_step(&params.dec[0], &x, &carry.h[0], &carry.c[0]);
    let (mid, drop_mid) = match dropout.as_deref_mut() {
        Some(ctx) => ctx.apply1(&cache0.h),
        None => (cache0.h.clone(), None),
    };
    let cache1 = lstm_step(&params.dec[1], &mid, &carry.h[1], &carry.c[1]);
    let h_t = cache1.h.clone();
    let (h_att, drop_h) = match dropout {
        Some(ctx) => ctx.apply1(&h_t),
        None => (h_t.clone(), None),
    };

    let src_mask = vec![true; enc.states.nrows()];
    let src = attend(&params.src_attn, &h_att, &enc.states.view(), &src_mask);
    let (del, ins) = if ablate {
        (
            AttentionCache {
                tanh: Array2::zeros((ed.m(), dims.d_attn)),
                weights: Array1::zeros(ed.m()),
                context: Array1::zeros(dims.d_emb),
            },
            AttentionCache {
                tanh: Array2::zeros((ed.m(), dims.d_attn)),
                weights: Array1::zeros(ed.m()),
                context: Array1::zeros(dims.d_emb),
            },
        )
    } else {
        (
            attend(&params.del_attn, &h_att, &ed.o_vectors.view(), &ed.mask),
            attend(&params.ins_attn, &h_att, &ed.p_vectors.view(), &ed.mask),
        )
    };

    let h_dim = dims.d_hidden;
    let e_dim = dims.d_emb;
    let mut combine_in = Array1::zeros(dims.combine_in());
    combine_in.slice_mut(s![0..h_dim]).assign(&h_att);
    combine_in.slice_mut(s![h_dim..h_dim + e_dim]).assign(&del.context);
    combine_in
        .slice_mut(s![h_dim + e_dim..h_dim + 2 * e_dim])
        .assign(&ins.context);
    combine_in.slice_mut(s![h_dim + 2 * e_dim..]).assign(&src.context);
    let h_tilde = params.w_c.dot(&combine_in).mapv(f64::tanh);

    let mut out_in = Array1::zeros(dims.output_in());
    out_in.slice_mut(s![0..e_dim]).assign(&x);
    out_in.slice_mut(s![e_dim..e_dim + h_dim]).assign(&h_tilde);
    out_in
        .slice_mut(s![e_dim + h_dim..e_dim + h_dim + e_dim])
        .assign(&del.context);
    out_in
        .slice_mut(s![e_dim + h_dim + e_dim..e_dim + h_dim + 2 * e_dim])
        .assign(&ins.context);
    out_in.slice_mut(s![e_dim + h_dim + 2 * e_dim..]).assign(&src.context);
    let logits = params.w_y.dot(&out_in) + &params.b_y;
    let probs = softmax(&logits);

    let new_carry = DecoderCarry {
        h: vec![cache0.h.clone(), cache1.h.clone()],
        c: vec![cache0.c.clone(), cache1.c.clone()],
    };
    (
        new_carry,
        StepCache {
            prev_id,
            x,
            lstm: vec![cache0, cache1],
            drop_mid,
            drop_h,
            h_att,
            src,
            del,
            ins,
            combine_in,
            h_tilde,
            out_in,
            probs,
            ablate,
        },
    )
}

/// Backward through one step. `d_logits` is the gradient on the pre-softmax
/// logits (probs − onehot for NLL). The per-layer `dh_carry`/`dc_carry` come
/// in from step t+1 and leave holding the gradients for step t−1. Embedding
/// gradients scatter into `grads.embedding`.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step_back(
    params: &ModelParameters,
    cache: &StepCache,
    enc: &EncoderOutput,
    ed: &EncodedDictionary,
    d_logits: &Array1<f64>,
    dh_carry: &mut [Array1<f64>],
    dc_carry: &mut [Array1<f64>],
    grads: &mut ModelParameters,
    d_enc_states: &mut Array2<f64>,
    d_o_vecs: &mut Array2<f64>,
    d_p_vecs: &mut Array2<f64>,
) {
    let dims = &params.dims;
    let h_dim = dims.d_hidden;
    let e_dim = dims.d_emb;

    // output projection
    accumulate_outer(&mut grads.w_y, d_logits, &cache.out_in);
    grads.b_y += d_logits;
    let d_out_in = params.w_y.t().dot(d_logits);
    let mut d_x = d_out_in.slice(s![0..e_dim]).to_owned();
    let d_h_tilde = d_out_in.slice(s![e_dim..e_dim + h_dim]).to_owned();
    let mut d_octx = d_out_in.slice(s![e_dim + h_dim..e_dim + h_dim + e_dim]).to_owned();
    let mut d_pctx = d_out_in
        .slice(s![e_dim + h_dim + e_dim..e_dim + h_dim + 2 * e_dim])
        .to_owned();
    let mut d_srcctx = d_out_in.slice(s![e_dim + h_dim + 2 * e_dim..]).to_owned();

    // combine layer
    let d_pre = &d_h_tilde * &cache.h_tilde.mapv(|v| 1.0 - v * v);
    accumulate_outer(&mut grads.w_c, &d_pre, &cache.combine_in);
    let d_comb = params.w_c.t().dot(&d_pre);
    let mut d_h_att = d_comb.slice(s![0..h_dim]).to_owned();
    d_octx += &d_comb.slice(s![h_dim..h_dim + e_dim]);
    d_pctx += &d_comb.slice(s![h_dim + e_dim..h_dim + 2 * e_dim]);
    d_srcctx += &d_comb.slice(s![h_dim + 2 * e_dim..]);

    // attentions
    let src_mask = vec![true; enc.states.nrows()];
    attend_back(
        &params.src_attn,
        &cache.h_att,
        &enc.states.view(),
        &src_mask,
        &cache.src,
        &d_srcctx,
        &mut grads.src_attn,
        &mut d_h_att,
        d_enc_states.view_mut(),
    );
    if !cache.ablate {
        attend_back(
            &params.del_attn,
            &cache.h_att,
            &ed.o_vectors.view(),
            &ed.mask,
            &cache.del,
            &d_octx,
            &mut grads.del_attn,
            &mut d_h_att,
            d_o_vecs.view_mut(),
        );
        attend_back(
            &params.ins_attn,
            &cache.h_att,
            &ed.p_vectors.view(),
            &ed.mask,
            &cache.ins,
            &d_pctx,
            &mut grads.ins_attn,
            &mut d_h_att,
            d_p_vecs.view_mut(),
        );
    }

    // dropout on the top hidden
    if let Some(mask) = &cache.drop_h {
        d_h_att *= mask;
    }

    // layer 1
    let d_h1 = &d_h_att + &dh_carry[1];
    let (d_mid, dh_prev1, dc_prev1) =
        lstm_back(&params.dec[1], &cache.lstm[1], &d_h1, &dc_carry[1], &mut grads.dec[1]);
    dh_carry[1] = dh_prev1;
    dc_carry[1] = dc_prev1;

    let mut d_mid = d_mid;
    if let Some(mask) = &cache.drop_mid {
        d_mid *= mask;
    }

    // layer 0
    let d_h0 = &d_mid + &dh_carry[0];
    let (d_x_lstm, dh_prev0, dc_prev0) =
        lstm_back(&params.dec[0], &cache.lstm[0], &d_h0, &dc_carry[0], &mut grads.dec[0]);
    dh_carry[0] = dh_prev0;
    dc_carry[0] = dc_prev0;

    d_x += &d_x_lstm;
    grads.embedding.row_mut(cache.prev_id).scaled_add(1.0, &d_x);
}

// ---------------------------------------------------------------------------
// Inference-facing operations
// ---------------------------------------------------------------------------

/// Weighted average of the encoder states under additive attention.
/// Returns (context, weights).
pub fn source_attention(
    params: &ModelParameters,
    h_t: &Array1<f64>,
    enc: &EncoderOutput,
) -> (Array1<f64>, Array1<f64>) {
    let mask = vec![true; enc.states.nrows()];
    let cache = attend(&params.src_attn, h_t, &enc.states.view(), &mask);
    (cache.context, cache.weights)
}

/// Delete-side attention over the source vectors of the encoded dictionary.
/// Returns (a_t, o_context); both are zero when every slot is masked.
pub fn delete_attention(
    params: &ModelParameters,
    h_t: &Array1<f64>,
    ed: &EncodedDictionary,
) -> (Array1<f64>, Array1<f64>) {
    let cache = attend(&params.del_attn, h_t, &ed.o_vectors.view(), &ed.mask);
    (cache.weights, cache.context)
}

/// Insert-side attention over the target vectors of the encoded dictionary.
pub fn insert_attention(
    params: &ModelParameters,
    h_t: &Array1<f64>,
    ed: &EncodedDictionary,
) -> (Array1<f64>, Array1<f64>) {
    let cache = attend(&params.ins_attn, h_t, &ed.p_vectors.view(), &ed.mask);
    (cache.weights, cache.context)
}

/// c_t = o_context ⊕ p_context.
pub fn dictionary_context(o_context: &Array1<f64>, p_context: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(o_context.len() + p_context.len());
    out.slice_mut(s![0..o_context.len()]).assign(o_context);
    out.slice_mut(s![o_context.len()..]).assign(p_context);
    out
}

/// h̃_t = tanh(W_c [h_t ⊕ c_t ⊕ c'_t]).
pub fn combine(
    params: &ModelParameters,
    h_t: &Array1<f64>,
    c_t: &Array1<f64>,
    c_src: &Array1<f64>,
) -> Array1<f64> {
    let mut cat = Array1::zeros(h_t.len() + c_t.len() + c_src.len());
    cat.slice_mut(s![0..h_t.len()]).assign(h_t);
    cat.slice_mut(s![h_t.len()..h_t.len() + c_t.len()]).assign(c_t);
    cat.slice_mut(s![h_t.len() + c_t.len()..]).assign(c_src);
    params.w_c.dot(&cat).mapv(f64::tanh)
}

/// softmax(W_y [y_prev ⊕ h̃_t ⊕ c_t ⊕ c'_t] + b_y).
pub fn output_distribution(
    params: &ModelParameters,
    y_prev_embedding: &Array1<f64>,
    h_tilde: &Array1<f64>,
    c_t: &Array1<f64>,
    c_src: &Array1<f64>,
) -> Array1<f64> {
    let mut cat = Array1::zeros(params.dims.output_in());
    let mut offset = 0;
    for part in [y_prev_embedding, h_tilde, c_t, c_src] {
        cat.slice_mut(s![offset..offset + part.len()]).assign(part);
        offset += part.len();
    }
    softmax(&(params.w_y.dot(&cat) + &params.b_y))
}

/// One inference decoder step: no dropout, returns the next-token
/// distribution and the step's attention record.
pub fn decoder_step(
    params: &ModelParameters,
    carry: &DecoderCarry,
    prev_id: usize,
    enc: &EncoderOutput,
    ed: &EncodedDictionary,
) -> (DecoderCarry, Array1<f64>, StepAttention) {
    let (new_carry, cache) = decoder_step_cached(params, carry, prev_id, enc, ed, None, false);
    let attention = cache.attention();
    (new_carry, cache.probs, attention)
}

/// Inference step with the dictionary context forced to zero.
pub fn decoder_step_ablated(
    params: &ModelParameters,
    carry: &DecoderCarry,
    prev_id: usize,
    enc: &EncoderOutput,
    ed: &EncodedDictionary,
) -> (DecoderCarry, Array1<f64>, StepAttention) {
    let (new_carry, cache) = decoder_step_cached(params, carry, prev_id, enc, ed, None, true);
    let attention = cache.attention();
    (new_carry, cache.probs, attention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(seed: u64) -> ModelParameters {
        let dims = ModelDims { vocab: 20, d_emb: 8, d_hidden: 12, d_attn: 10, m: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParameters::init(dims, &mut rng).unwrap()
    }

    fn random_ed(rng: &mut ChaCha8Rng, m: usize, d: usize, mask: &[bool]) -> EncodedDictionary {
        let mut ed = EncodedDictionary::empty(m, d);
        for i in 0..m {
            if mask[i] {
                for j in 0..d {
                    ed.o_vectors[[i, j]] = rng.random::<f64>() - 0.5;
                    ed.p_vectors[[i, j]] = rng.random::<f64>() - 0.5;
                }
                ed.mask[i] = true;
            }
        }
        ed
    }

    #[test]
    fn source_attention_single_state_returns_it() {
        let params = tiny_params(3);
        let enc = super::super::encoder::encode_source(&params, &[5]).unwrap();
        let h = Array1::from_elem(12, 0.1);
        let (ctx, weights) = source_attention(&params, &h, &enc);
        assert_eq!(weights.len(), 1);
        assert!((weights[0] - 1.0).abs() < 1e-12);
        for (c, s) in ctx.iter().zip(enc.states.row(0).iter()) {
            assert!((c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn delete_attention_one_hot_on_single_unmasked() {
        let params = tiny_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ed = random_ed(&mut rng, 3, 8, &[false, true, false]);
        let h = Array1::from_elem(12, 0.2);
        let (a, ctx) = delete_attention(&params, &h, &ed);
        assert_eq!(a[0], 0.0);
        assert!((a[1] - 1.0).abs() < 1e-12);
        assert_eq!(a[2], 0.0);
        for (c, o) in ctx.iter().zip(ed.o_vectors.row(1).iter()) {
            assert!((c - o).abs() < 1e-12);
        }
    }

    #[test]
    fn all_masked_gives_zero_context() {
        let params = tiny_params(6);
        let ed = EncodedDictionary::empty(3, 8);
        let h = Array1::from_elem(12, 0.2);
        let (a, ctx) = delete_attention(&params, &h, &ed);
        assert!(a.iter().all(|&x| x == 0.0));
        assert!(ctx.iter().all(|&x| x == 0.0));
        let (a2, ctx2) = insert_attention(&params, &h, &ed);
        assert!(a2.iter().all(|&x| x == 0.0));
        assert!(ctx2.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn insert_equals_delete_with_shared_weights_and_vectors() {
        let mut params = tiny_params(7);
        params.ins_attn = params.del_attn.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ed = random_ed(&mut rng, 3, 8, &[true, true, false]);
        ed.p_vectors = ed.o_vectors.clone();
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let (a, _) = delete_attention(&params, &h, &ed);
        let (a_prime, _) = insert_attention(&params, &h, &ed);
        for (x, y) in a.iter().zip(a_prime.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Hand evaluation of the delete-attention formulas on an M=3 case.
    #[test]
    fn delete_attention_matches_direct_evaluation() {
        let params = tiny_params(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ed = random_ed(&mut rng, 3, 8, &[true, true, true]);
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let (a, ctx) = delete_attention(&params, &h, &ed);

        let mut scores = [0.0f64; 3];
        for (i, score) in scores.iter_mut().enumerate() {
            let mut cat = [0.0; 20];
            cat[..12].copy_from_slice(h.as_slice().unwrap());
            cat[12..].copy_from_slice(ed.o_vectors.row(i).to_owned().as_slice().unwrap());
            let mut s = 0.0;
            for r in 0..10 {
                let mut acc = 0.0;
                for (c, &cv) in cat.iter().enumerate() {
                    acc += params.del_attn.w[[r, c]] * cv;
                }
                s += params.del_attn.v[r] * acc.tanh();
            }
            *score = s;
        }
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        for i in 0..3 {
            assert!((a[i] - scores[i].exp() / denom).abs() < 1e-10);
        }
        let mut expect_ctx = [0.0; 8];
        for i in 0..3 {
            for (j, e) in expect_ctx.iter_mut().enumerate() {
                *e += a[i] * ed.o_vectors[[i, j]];
            }
        }
        for (c, e) in ctx.iter().zip(expect_ctx.iter()) {
            assert!((c - e).abs() < 1e-10);
        }
    }

    #[test]
    fn dictionary_context_concatenates_o_then_p() {
        let o = ndarray::arr1(&[1.0, 2.0]);
        let p = ndarray::arr1(&[3.0, 4.0]);
        let c = dictionary_context(&o, &p);
        assert_eq!(c, ndarray::arr1(&[1.0, 2.0, 3.0, 4.0]));
        let z = dictionary_context(&Array1::zeros(2), &Array1::zeros(2));
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dictionary_context_convex_bound() {
        let params = tiny_params(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ed = random_ed(&mut rng, 3, 8, &[true, true, true]);
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let (_, octx) = delete_attention(&params, &h, &ed);
        let (_, pctx) = insert_attention(&params, &h, &ed);
        let c = dictionary_context(&octx, &pctx);
        let l1 = |v: ndarray::ArrayView1<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
        let max_o = (0..3).map(|i| l1(ed.o_vectors.row(i))).fold(0.0, f64::max);
        let max_p = (0..3).map(|i| l1(ed.p_vectors.row(i))).fold(0.0, f64::max);
        assert!(l1(c.view()) <= max_o + max_p + 1e-12);
    }

    #[test]
    fn combine_zero_weights_give_zero() {
        let mut params = tiny_params(13);
        params.w_c.fill(0.0);
        let h = Array1::from_elem(12, 0.3);
        let c_t = Array1::from_elem(16, 0.3);
        let c_src = Array1::from_elem(12, 0.3);
        let out = combine(&params, &h, &c_t, &c_src);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn combine_output_strictly_inside_unit_interval() {
        let params = tiny_params(14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() * 4.0 - 2.0);
        let c_t = Array1::from_shape_fn(16, |_| rng.random::<f64>() * 4.0 - 2.0);
        let c_src = Array1::from_shape_fn(12, |_| rng.random::<f64>() * 4.0 - 2.0);
        let out = combine(&params, &h, &c_t, &c_src);
        assert!(out.iter().all(|&x| x > -1.0 && x < 1.0));
    }

    /// Direct matrix-product oracle for the combine layer.
    #[test]
    fn combine_matches_reference_computation() {
        let params = tiny_params(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let c_t = Array1::from_shape_fn(16, |_| rng.random::<f64>() - 0.5);
        let c_src = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let out = combine(&params, &h, &c_t, &c_src);
        let cat: Vec<f64> = h.iter().chain(c_t.iter()).chain(c_src.iter()).copied().collect();
        for r in 0..12 {
            let mut acc = 0.0;
            for (c, &cv) in cat.iter().enumerate() {
                acc += params.w_c[[r, c]] * cv;
            }
            assert!((out[r] - acc.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn output_distribution_uniform_with_zero_weights() {
        let mut params = tiny_params(18);
        params.w_y.fill(0.0);
        params.b_y.fill(0.0);
        let y = Array1::zeros(8);
        let h = Array1::zeros(12);
        let c_t = Array1::zeros(16);
        let c_src = Array1::zeros(12);
        let probs = output_distribution(&params, &y, &h, &c_t, &c_src);
        for &p in probs.iter() {
            assert!((p - 1.0 / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_distribution_sums_to_one_and_shift_invariant() {
        let params = tiny_params(19);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let y = Array1::from_shape_fn(8, |_| rng.random::<f64>() - 0.5);
        let h = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let c_t = Array1::from_shape_fn(16, |_| rng.random::<f64>() - 0.5);
        let c_src = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
        let probs = output_distribution(&params, &y, &h, &c_t, &c_src);
        assert!((probs.sum() - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|&p| p >= 0.0));

        let mut shifted = params.clone();
        shifted.b_y += 3.7;
        let probs2 = output_distribution(&shifted, &y, &h, &c_t, &c_src);
        for (a, b) in probs.iter().zip(probs2.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ablated_step_matches_all_masked_dictionary() {
        let params = tiny_params(21);
        let enc = super::super::encoder::encode_source(&params, &[4, 7, 9]).unwrap();
        let (carry, _) = init_carry(&params, &enc);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ed = random_ed(&mut rng, 3, 8, &[true, true, true]);
        let empty = EncodedDictionary::empty(3, 8);
        let (_, probs_masked, _) = decoder_step(&params, &carry, crate::vocab::BOS, &enc, &empty);
        let (_, probs_ablate, _) =
            decoder_step_ablated(&params, &carry, crate::vocab::BOS, &enc, &ed);
        for (a, b) in probs_masked.iter().zip(probs_ablate.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
