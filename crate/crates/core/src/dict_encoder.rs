//! Bag-of-embeddings encoding of retrieved dictionary pairs.
//!
//! Each phrase is the sum of its token embeddings; the M pairs are packed
//! into two fixed-shape matrices with a validity mask so downstream attention
//! always sees the same shapes regardless of how many pairs were retrieved.

use ndarray::{Array1, Array2};

use crate::index::RetrievedDictionary;
use crate::vocab::Vocabulary;

/// M vector pairs plus a validity mask. Rows with `mask = false` are zero.
#[derive(Debug, Clone)]
pub struct EncodedDictionary {
    /// M × d_emb, row i = sum of embeddings of pair i's source tokens.
    pub o_vectors: Array2<f64>,
    /// M × d_emb, row i = sum of embeddings of pair i's target tokens.
    pub p_vectors: Array2<f64>,
    /// true = real pair, false = padding.
    pub mask: Vec<bool>,
}

impl EncodedDictionary {
    pub fn empty(m: usize, d_emb: usize) -> Self {
        Self {
            o_vectors: Array2::zeros((m, d_emb)),
            p_vectors: Array2::zeros((m, d_emb)),
            mask: vec![false; m],
        }
    }

    pub fn m(&self) -> usize {
        self.mask.len()
    }

    pub fn any_valid(&self) -> bool {
        self.mask.iter().any(|&b| b)
    }
}

/// Sum the embedding rows of the phrase tokens. Out-of-vocabulary tokens use
/// the UNK row.
pub fn encode_phrase<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    embedding: &Array2<f64>,
) -> Array1<f64> {
    let mut out = Array1::zeros(embedding.ncols());
    for token in tokens {
        out += &embedding.row(vocab.id(token.as_ref()));
    }
    out
}

/// Sum the embedding rows for pre-resolved token ids.
pub fn encode_phrase_ids(ids: &[usize], embedding: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(embedding.ncols());
    for &id in ids {
        out += &embedding.row(id);
    }
    out
}

/// Encode a retrieval result into M fixed rows. Rows beyond the retrieved
/// pairs stay zero with `mask = false`.
pub fn encode_retrieved(
    ret: &RetrievedDictionary,
    vocab: &Vocabulary,
    embedding: &Array2<f64>,
    m: usize,
) -> EncodedDictionary {
    let mut ed = EncodedDictionary::empty(m, embedding.ncols());
    for (i, pair) in ret.pairs.iter().take(m).enumerate() {
        ed.o_vectors
            .row_mut(i)
            .assign(&encode_phrase(&pair.entry.source_tokens, vocab, embedding));
        ed.p_vectors
            .row_mut(i)
            .assign(&encode_phrase(&pair.entry.target_tokens, vocab, embedding));
        ed.mask[i] = true;
    }
    ed
}

/// Encode pre-resolved token-id pairs (the training path, where retrieval
/// and vocabulary lookup were done once up front).
pub fn encode_pairs_ids(
    pairs: &[(Vec<usize>, Vec<usize>)],
    embedding: &Array2<f64>,
    m: usize,
) -> EncodedDictionary {
    let mut ed = EncodedDictionary::empty(m, embedding.ncols());
    for (i, (o_ids, p_ids)) in pairs.iter().take(m).enumerate() {
        ed.o_vectors.row_mut(i).assign(&encode_phrase_ids(o_ids, embedding));
        ed.p_vectors.row_mut(i).assign(&encode_phrase_ids(p_ids, embedding));
        ed.mask[i] = true;
    }
    ed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::RankedPair;
    use crate::ppdb::{DictionaryEntry, Entailment};
    use proptest::prelude::*;

    fn tiny_vocab() -> Vocabulary {
        let corpus: Vec<Vec<String>> = vec![
            "overcome get rid of"
                .split_whitespace()
                .map(String::from)
                .collect(),
        ];
        Vocabulary::build(corpus.iter().map(|s| s.as_slice()), 0).unwrap()
    }

    fn embedding_for(vocab: &Vocabulary, d: usize) -> Array2<f64> {
        let mut emb = Array2::zeros((vocab.len(), d));
        for i in 0..vocab.len() {
            for j in 0..d {
                emb[[i, j]] = (i * d + j) as f64 * 0.1 + 1.0;
            }
        }
        emb
    }

    #[test]
    fn single_token_equals_embedding_row() {
        let vocab = tiny_vocab();
        let emb = embedding_for(&vocab, 3);
        let v = encode_phrase(&["overcome"], &vocab, &emb);
        let row = emb.row(vocab.id("overcome"));
        assert_eq!(v.as_slice().unwrap(), row.as_slice().unwrap());
    }

    #[test]
    fn two_token_sum() {
        let corpus: Vec<Vec<String>> = vec![vec!["a".to_string(), "b".to_string()]];
        let vocab = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), 0).unwrap();
        let mut emb = Array2::zeros((vocab.len(), 2));
        emb.row_mut(vocab.id("a")).assign(&ndarray::arr1(&[1.0, 0.0]));
        emb.row_mut(vocab.id("b")).assign(&ndarray::arr1(&[0.5, 2.0]));
        let v = encode_phrase(&["a", "b"], &vocab, &emb);
        assert_eq!(v, ndarray::arr1(&[1.5, 2.0]));
    }

    #[test]
    fn permutation_invariant() {
        let vocab = tiny_vocab();
        let emb = embedding_for(&vocab, 4);
        let ab = encode_phrase(&["get", "rid"], &vocab, &emb);
        let ba = encode_phrase(&["rid", "get"], &vocab, &emb);
        assert_eq!(ab, ba);
    }

    fn ranked(o: &[&str], p: &[&str], id: u32) -> RankedPair {
        RankedPair {
            entry: DictionaryEntry {
                id,
                source_tokens: o.iter().map(|s| s.to_string()).collect(),
                target_tokens: p.iter().map(|s| s.to_string()).collect(),
                ppdb_score: 1.0,
                entailment: Entailment::Equivalence,
            },
            overlap_score: 0.0,
            score_r: 1.0,
            first_stage_score: 0.0,
        }
    }

    #[test]
    fn padding_rows_zero_with_false_mask() {
        let vocab = tiny_vocab();
        let emb = embedding_for(&vocab, 3);
        let ret = RetrievedDictionary {
            pairs: vec![
                ranked(&["overcome"], &["get", "rid", "of"], 0),
                ranked(&["get"], &["rid"], 1),
                ranked(&["of"], &["get"], 2),
            ],
            source_sentence: vec![],
        };
        let ed = encode_retrieved(&ret, &vocab, &emb, 10);
        assert_eq!(ed.mask, [true, true, true, false, false, false, false, false, false, false]);
        for i in 3..10 {
            assert!(ed.o_vectors.row(i).iter().all(|&x| x == 0.0));
            assert!(ed.p_vectors.row(i).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn empty_retrieval_all_masked() {
        let vocab = tiny_vocab();
        let emb = embedding_for(&vocab, 3);
        let ret = RetrievedDictionary { pairs: vec![], source_sentence: vec![] };
        let ed = encode_retrieved(&ret, &vocab, &emb, 4);
        assert!(!ed.any_valid());
        assert!(ed.o_vectors.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn example_pair_sums_target_tokens() {
        let vocab = tiny_vocab();
        let emb = embedding_for(&vocab, 3);
        let ret = RetrievedDictionary {
            pairs: vec![ranked(&["overcome"], &["get", "rid", "of"], 0)],
            source_sentence: vec![],
        };
        let ed = encode_retrieved(&ret, &vocab, &emb, 2);
        let expect_o = emb.row(vocab.id("overcome")).to_owned();
        let expect_p = {
            let mut acc = Array1::zeros(3);
            for tok in ["get", "rid", "of"] {
                acc += &emb.row(vocab.id(tok));
            }
            acc
        };
        assert_eq!(ed.o_vectors.row(0).to_owned(), expect_o);
        assert_eq!(ed.p_vectors.row(0).to_owned(), expect_p);
    }

    proptest! {
        /// encode(A ++ B) == encode(A) + encode(B), elementwise.
        #[test]
        fn linearity(
            a in proptest::collection::vec(0usize..6, 0..5),
            b in proptest::collection::vec(0usize..6, 0..5),
        ) {
            let vocab = tiny_vocab();
            let emb = embedding_for(&vocab, 4);
            let name = |i: usize| vocab.token(i).to_string();
            let ta: Vec<String> = a.iter().map(|&i| name(i)).collect();
            let tb: Vec<String> = b.iter().map(|&i| name(i)).collect();
            let mut tab = ta.clone();
            tab.extend(tb.iter().cloned());
            let lhs = encode_phrase(&tab, &vocab, &emb);
            let rhs = &encode_phrase(&ta, &vocab, &emb) + &encode_phrase(&tb, &vocab, &emb);
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        /// Output shape is always M × d regardless of retrieved count.
        #[test]
        fn fixed_shape(n_pairs in 0usize..6, m in 6usize..10) {
            let vocab = tiny_vocab();
            let emb = embedding_for(&vocab, 3);
            let pairs: Vec<RankedPair> = (0..n_pairs)
                .map(|i| ranked(&["get"], &["rid"], i as u32))
                .collect();
            let ret = RetrievedDictionary { pairs, source_sentence: vec![] };
            let ed = encode_retrieved(&ret, &vocab, &emb, m);
            prop_assert_eq!(ed.o_vectors.dim(), (m, 3));
            prop_assert_eq!(ed.p_vectors.dim(), (m, 3));
            prop_assert_eq!(ed.mask.len(), m);
            for i in 0..m {
                if !ed.mask[i] {
                    prop_assert!(ed.o_vectors.row(i).iter().all(|&x| x == 0.0));
                    prop_assert!(ed.p_vectors.row(i).iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}
