//! Two-layer bidirectional recurrent encoder over the source sentence.
//!
//! Each layer runs a forward and a backward LSTM of width d_hidden/2 and
//! concatenates their per-token states. Between the layers, dropout applies
//! to non-recurrent connections only. The final forward/backward states of
//! the top layer seed the decoder through learned bridge maps.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};

use super::graph::Dropout;
use super::lstm::{lstm_back, lstm_step, LstmCache};
use super::{ModelParameters, NUM_LAYERS};

/// Per-token representation of the source plus final states for the bridge.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// T × d_hidden, row t = [forward state ; backward state] of the top layer.
    pub states: Array2<f64>,
    /// [forward final ; backward final] hidden of the top layer.
    pub final_h: Array1<f64>,
    /// [forward final ; backward final] cell of the top layer.
    pub final_c: Array1<f64>,
}

#[derive(Debug)]
pub struct EncoderCache {
    pub token_ids: Vec<usize>,
    /// caches indexed [layer][direction][token position]
    pub caches: Vec<[Vec<LstmCache>; 2]>,
    /// dropout masks applied to each layer's output before the next layer
    pub drop_masks: Vec<Option<Array2<f64>>>,
}

/// Run one direction of one layer. `inputs` are per-position rows; `reverse`
/// processes positions right to left. Returned caches are indexed by
/// position, not processing order.
fn run_direction(
    weights: &super::LstmWeights,
    inputs: &Array2<f64>,
    reverse: bool,
) -> Vec<LstmCache> {
    let t_len = inputs.nrows();
    let h_dim = weights.hidden();
    let mut h = Array1::zeros(h_dim);
    let mut c = Array1::zeros(h_dim);
    let mut caches: Vec<Option<LstmCache>> = (0..t_len).map(|_| None).collect();
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &order {
        let cache = lstm_step(weights, &inputs.row(t).to_owned(), &h, &c);
        h = cache.h.clone();
        c = cache.c.clone();
        caches[t] = Some(cache);
    }
    caches.into_iter().map(|c| c.unwrap()).collect()
}

/// BPTT through one direction. `d_hs[t]` is the gradient on position t's
/// hidden output; `d_final_h`/`d_final_c` land on the direction's last
/// processed position. Returns per-position input gradients.
#[allow(clippy::too_many_arguments)]
fn run_direction_back(
    weights: &super::LstmWeights,
    caches: &[LstmCache],
    d_hs: &Array2<f64>,
    d_final_h: Option<&Array1<f64>>,
    d_final_c: Option<&Array1<f64>>,
    reverse: bool,
    grads: &mut super::LstmWeights,
    d_inputs: &mut Array2<f64>,
) {
    let t_len = caches.len();
    let h_dim = weights.hidden();
    let mut dh_carry = Array1::zeros(h_dim);
    let mut dc_carry = Array1::zeros(h_dim);
    if let Some(dfh) = d_final_h {
        dh_carry += dfh;
    }
    if let Some(dfc) = d_final_c {
        dc_carry += dfc;
    }
    // walk processing order in reverse
    let order: Vec<usize> = if reverse {
        (0..t_len).collect()
    } else {
        (0..t_len).rev().collect()
    };
    for &t in &order {
        let dh = &dh_carry + &d_hs.row(t);
        let (dx, dh_prev, dc_prev) = lstm_back(weights, &caches[t], &dh, &dc_carry, grads);
        d_inputs.row_mut(t).scaled_add(1.0, &dx);
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }
}

fn states_of(fwd: &[LstmCache], bwd: &[LstmCache], half: usize) -> Array2<f64> {
    let t_len = fwd.len();
    let mut out = Array2::zeros((t_len, 2 * half));
    for t in 0..t_len {
        out.row_mut(t).slice_mut(s![0..half]).assign(&fwd[t].h);
        out.row_mut(t).slice_mut(s![half..]).assign(&bwd[t].h);
    }
    out
}

/// Full cached forward pass.
pub fn encode_states(
    params: &ModelParameters,
    token_ids: &[usize],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(EncoderOutput, EncoderCache)> {
    if token_ids.is_empty() {
        return Err(Error::EmptySource);
    }
    let t_len = token_ids.len();
    let half = params.dims.half_hidden();

    let mut inputs = Array2::zeros((t_len, params.dims.d_emb));
    for (t, &id) in token_ids.iter().enumerate() {
        inputs.row_mut(t).assign(&params.embedding.row(id));
    }

    let mut caches = Vec::with_capacity(NUM_LAYERS);
    let mut drop_masks = Vec::with_capacity(NUM_LAYERS);
    let mut layer_in = inputs;
    let mut states = Array2::zeros((0, 0));
    for layer in 0..NUM_LAYERS {
        let fwd = run_direction(&params.enc_fwd[layer], &layer_in, false);
        let bwd = run_direction(&params.enc_bwd[layer], &layer_in, true);
        states = states_of(&fwd, &bwd, half);
        caches.push([fwd, bwd]);
        if layer + 1 < NUM_LAYERS {
            let (dropped, mask) = match dropout.as_deref_mut() {
                Some(ctx) => ctx.apply2(&states),
                None => (states.clone(), None),
            };
            drop_masks.push(mask);
            layer_in = dropped;
        } else {
            drop_masks.push(None);
        }
    }

    let top = &caches[NUM_LAYERS - 1];
    let mut final_h = Array1::zeros(2 * half);
    let mut final_c = Array1::zeros(2 * half);
    final_h.slice_mut(s![0..half]).assign(&top[0][t_len - 1].h);
    final_h.slice_mut(s![half..]).assign(&top[1][0].h);
    final_c.slice_mut(s![0..half]).assign(&top[0][t_len - 1].c);
    final_c.slice_mut(s![half..]).assign(&top[1][0].c);

    Ok((
        EncoderOutput { states, final_h, final_c },
        EncoderCache {
            token_ids: token_ids.to_vec(),
            caches,
            drop_masks,
        },
    ))
}

/// Inference entry point: per-token states and bridge inputs, no dropout.
pub fn encode_source(params: &ModelParameters, token_ids: &[usize]) -> Result<EncoderOutput> {
    encode_states(params, token_ids, None).map(|(out, _)| out)
}

/// Backward through the encoder. `d_states` is the gradient on the top-layer
/// per-token states; `d_final_h`/`d_final_c` on the bridge inputs. Embedding
/// gradients scatter into `grads.embedding`.
pub fn encode_back(
    params: &ModelParameters,
    cache: &EncoderCache,
    d_states: &Array2<f64>,
    d_final_h: &Array1<f64>,
    d_final_c: &Array1<f64>,
    grads: &mut ModelParameters,
) {
    let t_len = cache.token_ids.len();
    let half = params.dims.half_hidden();

    let mut d_layer_out = d_states.clone();
    let mut d_fh = Some((
        d_final_h.slice(s![0..half]).to_owned(),
        d_final_h.slice(s![half..]).to_owned(),
    ));
    let mut d_fc = Some((
        d_final_c.slice(s![0..half]).to_owned(),
        d_final_c.slice(s![half..]).to_owned(),
    ));

    for layer in (0..NUM_LAYERS).rev() {
        let in_dim = if layer == 0 {
            params.dims.d_emb
        } else {
            params.dims.d_hidden
        };
        let mut d_inputs = Array2::zeros((t_len, in_dim));
        let d_fwd_h = d_layer_out.slice(s![.., 0..half]).to_owned();
        let d_bwd_h = d_layer_out.slice(s![.., half..]).to_owned();
        let (fh, bh) = match d_fh.take() {
            Some((f, b)) => (Some(f), Some(b)),
            None => (None, None),
        };
        let (fc, bc) = match d_fc.take() {
            Some((f, b)) => (Some(f), Some(b)),
            None => (None, None),
        };
        run_direction_back(
            &params.enc_fwd[layer],
            &cache.caches[layer][0],
            &d_fwd_h,
            fh.as_ref(),
            fc.as_ref(),
            false,
            &mut grads.enc_fwd[layer],
            &mut d_inputs,
        );
        run_direction_back(
            &params.enc_bwd[layer],
            &cache.caches[layer][1],
            &d_bwd_h,
            bh.as_ref(),
            bc.as_ref(),
            true,
            &mut grads.enc_bwd[layer],
            &mut d_inputs,
        );
        if layer == 0 {
            for (t, &id) in cache.token_ids.iter().enumerate() {
                grads.embedding.row_mut(id).scaled_add(1.0, &d_inputs.row(t));
            }
        } else {
            // undo the dropout applied between layer-1 outputs and this input
            if let Some(mask) = &cache.drop_masks[layer - 1] {
                d_inputs *= mask;
            }
            d_layer_out = d_inputs;
        }
    }
}
