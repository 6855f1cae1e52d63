//! Teacher-forced forward and backward passes over one training example.
//!
//! The dictionary encoding happens inside the pass so gradients flow into the
//! shared embedding table through the phrase sums as well as through the
//! encoder inputs, decoder inputs, and the output layer's y_prev slot.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dict_encoder::{encode_pairs_ids, EncodedDictionary};
use crate::error::Result;
use crate::vocab::{BOS, EOS};

use super::decoder::{
    decoder_step_back, decoder_step_cached, init_carry, init_carry_back, BridgeCache, StepCache,
};
use super::encoder::{encode_back, encode_states, EncoderCache, EncoderOutput};
use super::{ModelParameters, NUM_LAYERS};

/// Inverted dropout: masks hold 0 or 1/(1-p) so inference needs no rescale.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply1(&mut self, x: &Array1<f64>) -> (Array1<f64>, Option<Array1<f64>>) {
        if self.p <= 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 - self.p;
        let mask = Array1::from_shape_fn(x.len(), |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        (x * &mask, Some(mask))
    }

    pub fn apply2(&mut self, x: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        if self.p <= 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        (x * &mask, Some(mask))
    }
}

/// Cached state of one teacher-forced pass.
pub struct ExampleCache {
    pub src_ids: Vec<usize>,
    /// Decoder inputs: BOS followed by the target surface tokens.
    pub dec_inputs: Vec<usize>,
    /// Predicted positions: target surface tokens followed by EOS.
    pub targets: Vec<usize>,
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub ed: EncodedDictionary,
    pub enc_out: EncoderOutput,
    pub enc_cache: EncoderCache,
    pub bridge: BridgeCache,
    pub steps: Vec<StepCache>,
    pub ablate: bool,
}

/// Teacher-forced forward pass. `target_ids` is the surface target without
/// BOS/EOS; `pairs` are the retrieved dictionary pairs as token ids.
pub fn forward_example(
    params: &ModelParameters,
    src_ids: &[usize],
    target_ids: &[usize],
    pairs: &[(Vec<usize>, Vec<usize>)],
    dropout_p: f64,
    rng: &mut ChaCha8Rng,
    ablate: bool,
) -> Result<ExampleCache> {
    let mut dropout = Dropout { p: dropout_p, rng };
    let use_dropout = dropout_p > 0.0;

    let ed = encode_pairs_ids(pairs, &params.embedding, params.dims.m);
    let (enc_out, enc_cache) = encode_states(
        params,
        src_ids,
        if use_dropout { Some(&mut dropout) } else { None },
    )?;
    let (mut carry, bridge) = init_carry(params, &enc_out);

    let mut dec_inputs = Vec::with_capacity(target_ids.len() + 1);
    dec_inputs.push(BOS);
    dec_inputs.extend_from_slice(target_ids);
    let mut targets = Vec::with_capacity(target_ids.len() + 1);
    targets.extend_from_slice(target_ids);
    targets.push(EOS);

    let mut steps = Vec::with_capacity(dec_inputs.len());
    for &prev in &dec_inputs {
        let (next_carry, cache) = decoder_step_cached(
            params,
            &carry,
            prev,
            &enc_out,
            &ed,
            if use_dropout { Some(&mut dropout) } else { None },
            ablate,
        );
        carry = next_carry;
        steps.push(cache);
    }

    Ok(ExampleCache {
        src_ids: src_ids.to_vec(),
        dec_inputs,
        targets,
        pairs: pairs.to_vec(),
        ed,
        enc_out,
        enc_cache,
        bridge,
        steps,
        ablate,
    })
}

/// Sum of per-position negative log-likelihoods. Non-finite probabilities
/// propagate as NaN so the training loop can abort with diagnostics; IEEE
/// max would otherwise silently launder them into the clamp value.
pub fn example_loss(cache: &ExampleCache) -> f64 {
    cache
        .steps
        .iter()
        .zip(&cache.targets)
        .map(|(step, &target)| {
            let p = step.probs[target];
            if p.is_finite() {
                -p.max(f64::MIN_POSITIVE).ln()
            } else {
                f64::NAN
            }
        })
        .sum()
}

/// (correct argmax predictions, total positions). Argmax ties break toward
/// the lowest token id.
pub fn example_hits(cache: &ExampleCache) -> (usize, usize) {
    let mut hits = 0;
    for (step, &target) in cache.steps.iter().zip(&cache.targets) {
        let mut best = 0;
        for (i, &p) in step.probs.iter().enumerate() {
            if p > step.probs[best] {
                best = i;
            }
        }
        if best == target {
            hits += 1;
        }
    }
    (hits, cache.targets.len())
}

/// Backward pass; gradients scaled by `scale` accumulate into `grads`.
pub fn backward_example(params: &ModelParameters, cache: &ExampleCache, scale: f64, grads: &mut ModelParameters) {
    let dims = &params.dims;
    let t_src = cache.src_ids.len();

    let mut dh_carry: Vec<Array1<f64>> =
        (0..NUM_LAYERS).map(|_| Array1::zeros(dims.d_hidden)).collect();
    let mut dc_carry: Vec<Array1<f64>> =
        (0..NUM_LAYERS).map(|_| Array1::zeros(dims.d_hidden)).collect();
    let mut d_enc_states = Array2::zeros((t_src, dims.d_hidden));
    let mut d_o_vecs = Array2::zeros((dims.m, dims.d_emb));
    let mut d_p_vecs = Array2::zeros((dims.m, dims.d_emb));

    for (step, &target) in cache.steps.iter().zip(&cache.targets).rev() {
        let mut d_logits = step.probs.clone();
        d_logits[target] -= 1.0;
        d_logits.mapv_inplace(|x| x * scale);
        decoder_step_back(
            params,
            step,
            &cache.enc_out,
            &cache.ed,
            &d_logits,
            &mut dh_carry,
            &mut dc_carry,
            grads,
            &mut d_enc_states,
            &mut d_o_vecs,
            &mut d_p_vecs,
        );
    }

    // leftover carries are the gradients on the initial decoder state
    let mut d_final_h = Array1::zeros(dims.d_hidden);
    let mut d_final_c = Array1::zeros(dims.d_hidden);
    init_carry_back(
        params,
        &cache.enc_out,
        &cache.bridge,
        &dh_carry,
        &dc_carry,
        grads,
        &mut d_final_h,
        &mut d_final_c,
    );

    encode_back(
        params,
        &cache.enc_cache,
        &d_enc_states,
        &d_final_h,
        &d_final_c,
        grads,
    );

    // dictionary phrase sums: every token of pair i receives that row's grad
    if !cache.ablate {
        for (i, (o_ids, p_ids)) in cache.pairs.iter().take(dims.m).enumerate() {
            for &id in o_ids {
                grads.embedding.row_mut(id).scaled_add(1.0, &d_o_vecs.row(i));
            }
            for &id in p_ids {
                grads.embedding.row_mut(id).scaled_add(1.0, &d_p_vecs.row(i));
            }
        }
    }
}
