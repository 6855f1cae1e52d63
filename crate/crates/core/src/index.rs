//! Retrieval over the paraphrase dictionary.
//!
//! Source phrases are indexed as documents in an inverted index. Retrieval
//! runs in two stages: a BM25 candidate fetch over entries sharing at least
//! one token with the input sentence, then a re-rank by the sum of tf·idf
//! weights over the overlapping tokens plus the entry's dictionary score.
//!
//! The index snapshot file is a single JSON document bundling the index with
//! the dictionary it was built from, so `retrieve` runs from one artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppdb::{DictionaryEntry, ParaphraseDictionary};

pub const DEFAULT_M: usize = 10;
/// First-stage fetch depth is this multiple of M.
pub const FETCH_FACTOR: usize = 10;

const BM25_K1: f64 = 1.2;
const BM25_B: f64 = 0.75;

/// One posting: entry id plus the token's frequency inside that entry's
/// source phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub id: u32,
    pub tf: u32,
}

/// Inverted index over entry source phrases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// token -> postings for entries whose source phrase contains it,
    /// ascending by id.
    pub postings: BTreeMap<String, Vec<Posting>>,
    /// token -> number of distinct entries containing it.
    pub doc_freq: BTreeMap<String, u32>,
    /// entry id -> source phrase length in tokens (ids are dense).
    pub entry_lengths: Vec<u32>,
    /// number of entries indexed.
    pub corpus_size: usize,
    /// mean source phrase length.
    pub avg_len: f64,
}

/// One re-ranked candidate.
#[derive(Debug, Clone, Serialize)]
pub struct RankedPair {
    pub entry: DictionaryEntry,
    /// Sum of tf·idf over distinct overlapping tokens.
    pub overlap_score: f64,
    /// overlap_score + entry.ppdb_score.
    pub score_r: f64,
    /// BM25 score from the candidate fetch stage.
    pub first_stage_score: f64,
}

/// Top-M pairs for one input sentence, sorted by `score_r` descending with
/// ties broken by entry id.
#[derive(Debug, Clone, Serialize)]
pub struct RetrievedDictionary {
    pub pairs: Vec<RankedPair>,
    pub source_sentence: Vec<String>,
}

pub fn build_index(dict: &ParaphraseDictionary) -> Result<InvertedIndex> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut entry_lengths = Vec::with_capacity(dict.len());
    let mut total_len = 0usize;
    for entry in &dict.entries {
        entry_lengths.push(entry.source_tokens.len() as u32);
        total_len += entry.source_tokens.len();
        let mut counts: BTreeMap<&String, u32> = BTreeMap::new();
        for token in &entry.source_tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        for (token, tf) in counts {
            postings
                .entry(token.clone())
                .or_default()
                .push(Posting { id: entry.id, tf });
        }
    }
    let doc_freq = postings
        .iter()
        .map(|(t, ps)| (t.clone(), ps.len() as u32))
        .collect();
    Ok(InvertedIndex {
        postings,
        doc_freq,
        entry_lengths,
        corpus_size: dict.len(),
        avg_len: total_len as f64 / dict.len() as f64,
    })
}

/// BM25 idf (Lucene form), strictly positive.
pub fn bm25_idf(corpus_size: usize, doc_freq: u32) -> f64 {
    let n = corpus_size as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Smoothed idf used by the re-ranking stage.
pub fn rerank_idf(corpus_size: usize, doc_freq: u32) -> f64 {
    ((corpus_size as f64 + 1.0) / (doc_freq as f64 + 1.0)).ln() + 1.0
}

/// First-stage fetch: BM25 (k1=1.2, b=0.75) over entries sharing at least one
/// token with the sentence. Returns up to `k` `(entry id, score)` pairs,
/// score descending, ties by id ascending. Query tokens count once each.
pub fn candidate_fetch(index: &InvertedIndex, sentence: &[String], k: usize) -> Vec<(u32, f64)> {
    let query: BTreeSet<&String> = sentence.iter().collect();
    let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
    for &token in &query {
        let Some(postings) = index.postings.get(token) else {
            continue;
        };
        let idf = bm25_idf(index.corpus_size, index.doc_freq[token]);
        for posting in postings {
            let dl = index.entry_lengths[posting.id as usize] as f64;
            let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avg_len);
            let tf = posting.tf as f64;
            *scores.entry(posting.id).or_insert(0.0) += idf * (tf * (BM25_K1 + 1.0)) / (tf + norm);
        }
    }
    let mut scored: Vec<(u32, f64)> = scores.into_iter().collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Re-rank fetched candidates: `score_r = Σ_{w ∈ distinct(o ∩ x)} tf_w · idf_w + ppdb_score`
/// where `tf_w` counts `w` inside the entry's source phrase and `idf_w` is the
/// smoothed idf over the dictionary. Output sorted by `score_r` descending,
/// ties by id, truncated to `m`.
pub fn rank_pairs(
    candidates: &[(u32, f64)],
    dict: &ParaphraseDictionary,
    index: &InvertedIndex,
    sentence: &[String],
    m: usize,
) -> RetrievedDictionary {
    let query: BTreeSet<&String> = sentence.iter().collect();
    let mut pairs: Vec<RankedPair> = candidates
        .iter()
        .map(|&(id, first_stage_score)| {
            let entry = dict.entries[id as usize].clone();
            let mut overlap = 0.0;
            let distinct: BTreeSet<&String> = entry.source_tokens.iter().collect();
            for &token in &distinct {
                if !query.contains(token) {
                    continue;
                }
                let tf = entry.source_tokens.iter().filter(|t| *t == token).count() as f64;
                let df = index.doc_freq.get(token).copied().unwrap_or(0);
                overlap += tf * rerank_idf(index.corpus_size, df);
            }
            let score_r = overlap + entry.ppdb_score;
            RankedPair {
                entry,
                overlap_score: overlap,
                score_r,
                first_stage_score,
            }
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.score_r
            .partial_cmp(&a.score_r)
            .unwrap()
            .then(a.entry.id.cmp(&b.entry.id))
    });
    pairs.truncate(m);
    RetrievedDictionary {
        pairs,
        source_sentence: sentence.to_vec(),
    }
}

/// Full retrieval: fetch `FETCH_FACTOR·m` candidates, then re-rank to top `m`.
pub fn retrieve(
    index: &InvertedIndex,
    dict: &ParaphraseDictionary,
    sentence: &[String],
    m: usize,
) -> RetrievedDictionary {
    retrieve_with_fetch(index, dict, sentence, m, FETCH_FACTOR * m)
}

/// Retrieval with an explicit first-stage depth `k`.
pub fn retrieve_with_fetch(
    index: &InvertedIndex,
    dict: &ParaphraseDictionary,
    sentence: &[String],
    m: usize,
    k: usize,
) -> RetrievedDictionary {
    let candidates = candidate_fetch(index, sentence, k);
    rank_pairs(&candidates, dict, index, sentence, m)
}

/// Exhaustively score every entry that shares a token with the sentence —
/// no first stage, no fetch cap. Used as the reference ranking.
pub fn brute_force_rank(
    index: &InvertedIndex,
    dict: &ParaphraseDictionary,
    sentence: &[String],
    m: usize,
) -> RetrievedDictionary {
    let query: BTreeSet<&String> = sentence.iter().collect();
    let candidates: Vec<(u32, f64)> = dict
        .entries
        .iter()
        .filter(|e| e.source_tokens.iter().any(|t| query.contains(t)))
        .map(|e| (e.id, 0.0))
        .collect();
    rank_pairs(&candidates, dict, index, sentence, m)
}

#[derive(Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub version: u32,
    pub dict: ParaphraseDictionary,
    pub index: InvertedIndex,
}

const SNAPSHOT_VERSION: u32 = 1;

pub fn save_index(dict: &ParaphraseDictionary, index: &InvertedIndex, path: &Path) -> Result<()> {
    let snapshot = IndexSnapshot {
        version: SNAPSHOT_VERSION,
        dict: dict.clone(),
        index: index.clone(),
    };
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(out, &snapshot)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<IndexSnapshot> {
    let reader = BufReader::new(File::open(path)?);
    let snapshot: IndexSnapshot = serde_json::from_reader(reader)?;
    if snapshot.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported index version {}",
            snapshot.version
        )));
    }
    if snapshot.index.corpus_size != snapshot.dict.len() {
        return Err(Error::Snapshot(
            "index corpus size does not match bundled dictionary".into(),
        ));
    }
    Ok(snapshot)
}
