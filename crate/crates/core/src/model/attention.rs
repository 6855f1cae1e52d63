//! Additive attention: score(q, k_j) = v^T tanh(W [q ⊕ k_j]), masked softmax
//! over the rows, context = weighted sum of the rows.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::lstm::accumulate_outer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionWeights {
    /// d_attn × (query_dim + key_dim)
    pub w: Array2<f64>,
    /// d_attn
    pub v: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// rows × d_attn; tanh activations, zero on masked rows.
    pub tanh: Array2<f64>,
    /// Softmax weights; exactly zero on masked rows, zero everywhere when all
    /// rows are masked.
    pub weights: Array1<f64>,
    /// Weighted sum of key rows.
    pub context: Array1<f64>,
}

/// Softmax over unmasked positions; masked positions are exactly zero. When
/// every position is masked the result is the zero vector.
pub fn masked_softmax(scores: &Array1<f64>, mask: &[bool]) -> Array1<f64> {
    debug_assert_eq!(scores.len(), mask.len());
    let mut out = Array1::zeros(scores.len());
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return out;
    }
    let mut sum = 0.0;
    for (j, (&s, &m)) in scores.iter().zip(mask).enumerate() {
        if m {
            let e = (s - max).exp();
            out[j] = e;
            sum += e;
        }
    }
    out.mapv_inplace(|e| e / sum);
    out
}

/// Forward attention over `keys` (rows × key_dim) with the given validity
/// mask. The context of an all-masked set is the zero vector.
pub fn attend(
    aw: &AttentionWeights,
    query: &Array1<f64>,
    keys: &ArrayView2<f64>,
    mask: &[bool],
) -> AttentionCache {
    let rows = keys.nrows();
    let d_attn = aw.v.len();
    let q_dim = query.len();
    let mut tanh = Array2::zeros((rows, d_attn));
    let mut scores = Array1::zeros(rows);
    let mut cat = Array1::zeros(q_dim + keys.ncols());
    cat.slice_mut(ndarray::s![0..q_dim]).assign(query);
    for j in 0..rows {
        if !mask[j] {
            continue;
        }
        cat.slice_mut(ndarray::s![q_dim..]).assign(&keys.row(j));
        let t = aw.w.dot(&cat).mapv(f64::tanh);
        scores[j] = aw.v.dot(&t);
        tanh.row_mut(j).assign(&t);
    }
    let weights = masked_softmax(&scores, mask);
    let mut context = Array1::zeros(keys.ncols());
    for j in 0..rows {
        if weights[j] != 0.0 {
            context.scaled_add(weights[j], &keys.row(j));
        }
    }
    AttentionCache { tanh, weights, context }
}

/// Backward through [`attend`]. Accumulates into the weight gradients, the
/// query gradient, and the per-row key gradients.
#[allow(clippy::too_many_arguments)]
pub fn attend_back(
    aw: &AttentionWeights,
    query: &Array1<f64>,
    keys: &ArrayView2<f64>,
    mask: &[bool],
    cache: &AttentionCache,
    d_context: &Array1<f64>,
    grads: &mut AttentionWeights,
    d_query: &mut Array1<f64>,
    mut d_keys: ArrayViewMut2<f64>,
) {
    if !mask.iter().any(|&m| m) {
        return;
    }
    let rows = keys.nrows();
    let q_dim = query.len();

    // context = Σ a_j k_j
    let mut d_a = Array1::zeros(rows);
    for j in 0..rows {
        if !mask[j] {
            continue;
        }
        d_a[j] = d_context.dot(&keys.row(j));
        let w = cache.weights[j];
        if w != 0.0 {
            d_keys.row_mut(j).scaled_add(w, d_context);
        }
    }

    // softmax backward
    let dot: f64 = (0..rows).map(|j| cache.weights[j] * d_a[j]).sum();
    let mut cat = Array1::zeros(q_dim + keys.ncols());
    cat.slice_mut(ndarray::s![0..q_dim]).assign(query);
    for j in 0..rows {
        if !mask[j] {
            continue;
        }
        let d_score = cache.weights[j] * (d_a[j] - dot);
        if d_score == 0.0 {
            continue;
        }
        let t = cache.tanh.row(j);
        // dv += d_score * tanh
        grads.v.scaled_add(d_score, &t);
        // d_pre = d_score * v ∘ (1 - tanh²)
        let d_pre = Array1::from_iter(
            aw.v.iter().zip(t.iter()).map(|(&v, &tv)| d_score * v * (1.0 - tv * tv)),
        );
        cat.slice_mut(ndarray::s![q_dim..]).assign(&keys.row(j));
        accumulate_outer(&mut grads.w, &d_pre, &cat);
        let d_cat = aw.w.t().dot(&d_pre);
        *d_query += &d_cat.slice(ndarray::s![0..q_dim]);
        d_keys.row_mut(j).scaled_add(1.0, &d_cat.slice(ndarray::s![q_dim..]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one_on_unmasked() {
        let scores = arr1(&[1.0, 2.0, 3.0, 4.0]);
        let mask = [true, false, true, true];
        let w = masked_softmax(&scores, &mask);
        assert_eq!(w[1], 0.0);
        let sum: f64 = w.sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn softmax_all_masked_is_zero() {
        let scores = arr1(&[1.0, 2.0]);
        let w = masked_softmax(&scores, &[false, false]);
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn singleton_attention_is_one_hot() {
        let aw = AttentionWeights {
            w: Array2::from_elem((4, 5), 0.1),
            v: Array1::from_elem(4, 0.2),
        };
        let keys = arr2(&[[1.0, 2.0, 3.0], [9.0, 9.0, 9.0]]);
        let cache = attend(&aw, &arr1(&[0.5, -0.5]), &keys.view(), &[true, false]);
        assert_eq!(cache.weights[0], 1.0);
        assert_eq!(cache.weights[1], 0.0);
        assert_eq!(cache.context, arr1(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn zero_scores_give_uniform_weights() {
        let aw = AttentionWeights {
            w: Array2::zeros((4, 5)),
            v: Array1::zeros(4),
        };
        let keys = arr2(&[[2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]);
        let cache = attend(&aw, &arr1(&[1.0, 1.0, 1.0]), &keys.view(), &[true, true, true]);
        for &w in cache.weights.iter() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        // context = mean of rows
        assert!((cache.context[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((cache.context[1] - 4.0 / 3.0).abs() < 1e-12);
    }

    /// Brute-force oracle: independent softmax + weighted-sum evaluation.
    #[test]
    fn matches_direct_formula_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q_dim = 3;
            let k_dim = 4;
            let rows = 5;
            let d_attn = 6;
            let aw = AttentionWeights {
                w: Array2::from_shape_fn((d_attn, q_dim + k_dim), |_| rng.random::<f64>() - 0.5),
                v: Array1::from_shape_fn(d_attn, |_| rng.random::<f64>() - 0.5),
            };
            let q = Array1::from_shape_fn(q_dim, |_| rng.random::<f64>() - 0.5);
            let keys = Array2::from_shape_fn((rows, k_dim), |_| rng.random::<f64>() - 0.5);
            let mask: Vec<bool> = (0..rows).map(|_| rng.random::<f64>() < 0.8).collect();

            let cache = attend(&aw, &q, &keys.view(), &mask);

            // oracle
            let mut exp_scores = vec![0.0; rows];
            for j in 0..rows {
                if !mask[j] {
                    continue;
                }
                let mut t = vec![0.0; d_attn];
                for (r, tv) in t.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (c, &qv) in q.iter().enumerate() {
                        acc += aw.w[[r, c]] * qv;
                    }
                    for (c, &kv) in keys.row(j).iter().enumerate() {
                        acc += aw.w[[r, q_dim + c]] * kv;
                    }
                    *tv = acc.tanh();
                }
                exp_scores[j] = t.iter().zip(aw.v.iter()).map(|(a, b)| a * b).sum();
            }
            let any = mask.iter().any(|&m| m);
            let denom: f64 = (0..rows)
                .filter(|&j| mask[j])
                .map(|j| exp_scores[j].exp())
                .sum();
            for j in 0..rows {
                let expect = if mask[j] && any {
                    exp_scores[j].exp() / denom
                } else {
                    0.0
                };
                assert!(
                    (cache.weights[j] - expect).abs() < 1e-10,
                    "row {j}: {} vs {}",
                    cache.weights[j],
                    expect
                );
            }
        }
    }
}
