//! Corpus construction: caption-group pairing, duplicate-question filtering,
//! tokenization, truncation, and seeded splits. Also provides a synthetic
//! phrase-substitution corpus generator used by the verification suite.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const MSCOCO_MAX_TOKENS: usize = 15;
pub const QUORA_MAX_TOKENS: usize = 30;

pub type TokenPair = (Vec<String>, Vec<String>);

/// All captions describing one image.
#[derive(Debug, Clone)]
pub struct CaptionGroup {
    pub image_id: String,
    pub captions: Vec<String>,
}

#[derive(Debug, Default)]
pub struct CorpusSplits {
    pub train: Vec<TokenPair>,
    pub valid: Vec<TokenPair>,
    pub test: Vec<TokenPair>,
    /// Groups skipped for having fewer than two captions.
    pub skipped_groups: usize,
}

#[derive(Deserialize)]
struct CaptionRecord {
    image_id: serde_json::Value,
    caption: String,
}

/// Load a caption annotation file: a JSON array of {image_id, caption}
/// objects. Groups keep first-appearance order.
pub fn load_caption_groups(path: &Path) -> Result<Vec<CaptionGroup>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<CaptionRecord> = serde_json::from_str(&text)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<String>> = HashMap::new();
    for rec in records {
        let id = match rec.image_id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        groups.get_mut(&id).unwrap().push(rec.caption);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let captions = groups.remove(&id).unwrap();
            CaptionGroup { image_id: id, captions }
        })
        .collect())
}

/// Build ordered caption pairs. Per group: drop one caption uniformly at
/// random, form all ordered pairs of the remainder, and truncate every
/// caption to its first `MSCOCO_MAX_TOKENS` tokens.
///
/// Splitting is by image so no caption of a test image ever appears in
/// training. Images fill the test split first, then validation; a boundary
/// image's surplus pairs are dropped rather than leaked into another split,
/// which makes the requested sizes exact.
pub fn make_mscoco_pairs(
    groups: &[CaptionGroup],
    seed: u64,
    test_size: usize,
    valid_size: usize,
) -> Result<CorpusSplits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = CorpusSplits::default();

    // per-group pair construction, in input order so the rng stream is stable
    let mut group_pairs: Vec<Vec<TokenPair>> = Vec::new();
    for group in groups {
        if group.captions.len() < 2 {
            splits.skipped_groups += 1;
            continue;
        }
        let drop_idx = rng.random_range(0..group.captions.len());
        let kept: Vec<Vec<String>> = group
            .captions
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop_idx)
            .map(|(_, c)| {
                let mut toks = tokenize(c);
                toks.truncate(MSCOCO_MAX_TOKENS);
                toks
            })
            .filter(|toks| !toks.is_empty())
            .collect();
        if kept.len() < 2 {
            splits.skipped_groups += 1;
            continue;
        }
        let mut pairs = Vec::with_capacity(kept.len() * (kept.len() - 1));
        for (i, src) in kept.iter().enumerate() {
            for (j, tgt) in kept.iter().enumerate() {
                if i != j {
                    pairs.push((src.clone(), tgt.clone()));
                }
            }
        }
        group_pairs.push(pairs);
    }

    let total: usize = group_pairs.iter().map(|p| p.len()).sum();
    if total < test_size + valid_size {
        return Err(Error::InsufficientData(format!(
            "{total} pairs available but test+valid require {}; pass smaller sizes",
            test_size + valid_size
        )));
    }

    let mut order: Vec<usize> = (0..group_pairs.len()).collect();
    order.shuffle(&mut rng);

    for &g in &order {
        let pairs = &group_pairs[g];
        if splits.test.len() < test_size {
            let need = test_size - splits.test.len();
            splits.test.extend(pairs.iter().take(need).cloned());
            // surplus pairs of the boundary image are dropped, not moved
        } else if splits.valid.len() < valid_size {
            let need = valid_size - splits.valid.len();
            splits.valid.extend(pairs.iter().take(need).cloned());
        } else {
            splits.train.extend(pairs.iter().cloned());
        }
    }
    Ok(splits)
}

/// One row of a duplicate-question file.
#[derive(Debug, Clone)]
pub struct QuoraRecord {
    pub question1: String,
    pub question2: String,
    pub is_duplicate: bool,
}

/// Parse a tab-delimited file with a header row naming question1, question2,
/// and is_duplicate columns.
pub fn load_quora_records(path: &Path) -> Result<Vec<QuoraRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedRecord { line: 1, reason: "empty file".into() })?;
    let cols: Vec<&str> = header.split('\t').collect();
    let find = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| c.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MalformedRecord {
                line: 1,
                reason: format!("header lacks column {name:?}"),
            })
    };
    let q1 = find("question1")?;
    let q2 = find("question2")?;
    let dup = find("is_duplicate")?;
    let needed = q1.max(q2).max(dup) + 1;

    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < needed {
            return Err(Error::MalformedRecord {
                line: lineno + 2,
                reason: format!("expected at least {needed} tab-separated fields"),
            });
        }
        let strip = |s: &str| s.trim().trim_matches('"').to_string();
        let dup_raw = strip(fields[dup]);
        let is_duplicate = matches!(dup_raw.as_str(), "1" | "true" | "True" | "TRUE");
        records.push(QuoraRecord {
            question1: strip(fields[q1]),
            question2: strip(fields[q2]),
            is_duplicate,
        });
    }
    Ok(records)
}

/// Keep duplicate pairs whose sides both fit the length cap, then split.
/// When the corpus is smaller than the requested sizes, all three shrink
/// proportionally (rounding down, remainder to train).
pub fn make_quora_pairs(
    records: &[QuoraRecord],
    seed: u64,
    train_size: usize,
    valid_size: usize,
    test_size: usize,
) -> Result<CorpusSplits> {
    let mut pairs: Vec<TokenPair> = records
        .iter()
        .filter(|r| r.is_duplicate)
        .filter_map(|r| {
            let a = tokenize(&r.question1);
            let b = tokenize(&r.question2);
            if a.is_empty() || b.is_empty() {
                return None;
            }
            if a.len() > QUORA_MAX_TOKENS || b.len() > QUORA_MAX_TOKENS {
                return None;
            }
            Some((a, b))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let requested = train_size + valid_size + test_size;
    let (n_train, n_valid, n_test) = if pairs.len() >= requested {
        (train_size, valid_size, test_size)
    } else {
        let scale = pairs.len() as f64 / requested as f64;
        let n_valid = (valid_size as f64 * scale).floor() as usize;
        let n_test = (test_size as f64 * scale).floor() as usize;
        (pairs.len() - n_valid - n_test, n_valid, n_test)
    };

    let mut splits = CorpusSplits::default();
    let mut iter = pairs.into_iter();
    splits.train.extend(iter.by_ref().take(n_train));
    splits.valid.extend(iter.by_ref().take(n_valid));
    splits.test.extend(iter.by_ref().take(n_test));
    Ok(splits)
}

/// Write one split as `source<TAB>target` lines, tokens space-joined.
pub fn write_pairs(pairs: &[TokenPair], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (src, tgt) in pairs {
        writeln!(out, "{}\t{}", src.join(" "), tgt.join(" "))?;
    }
    Ok(())
}

/// Read a pair file written by [`write_pairs`].
pub fn read_pairs(path: &Path) -> Result<Vec<TokenPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::MalformedRecord {
            line: lineno + 1,
            reason: "expected source<TAB>target".into(),
        })?;
        let split = |s: &str| -> Vec<String> {
            s.split_whitespace().map(|t| t.to_string()).collect()
        };
        pairs.push((split(src), split(tgt)));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Synthetic phrase-substitution corpus
// ---------------------------------------------------------------------------

/// Settings for the synthetic editing corpus: each target sentence replaces
/// exactly one dictionary source phrase with its target phrase.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub n_entries: usize,
    pub n_fillers: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Harmonic entry-usage skew; uniform when false.
    pub skew: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            n_entries: 50,
            n_fillers: 40,
            min_fillers: 5,
            max_fillers: 9,
            skew: true,
            seed: 0,
        }
    }
}

/// A generated corpus: dictionary lines in the ingestion format plus raw
/// sentence pairs.
#[derive(Debug)]
pub struct SyntheticCorpus {
    pub dictionary_lines: Vec<String>,
    /// (source sentence, target sentence), whitespace-tokenizable.
    pub pairs: Vec<(String, String)>,
}

/// Generate the corpus. Dictionary source phrases are one or two tokens (the
/// second drawn from the filler inventory for roughly a third of entries, so
/// retrieval sees distractors); target phrases are two or three tokens from
/// an inventory disjoint from both fillers and source markers, so a model
/// can only produce them by exploiting the dictionary or memorizing the
/// mapping. Entry usage is skewed harmonically: head entries appear in
/// hundreds of sentences while tail entries appear only a handful of times,
/// so memorizing the mapping is much harder than copying it from the
/// dictionary.
pub fn synthetic_editing_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers: Vec<String> = (0..spec.n_fillers).map(|i| format!("word{i:02}")).collect();

    let mut dictionary_lines = Vec::with_capacity(spec.n_entries);
    let mut entries: Vec<(Vec<String>, Vec<String>)> = Vec::with_capacity(spec.n_entries);
    for e in 0..spec.n_entries {
        let mut source = vec![format!("mark{e:02}")];
        if rng.random::<f64>() < 0.35 {
            source.push(fillers[rng.random_range(0..fillers.len())].clone());
        }
        let target_len = 2 + rng.random_range(0..2);
        let target: Vec<String> = (0..target_len).map(|k| format!("sub{e:02}{k}")).collect();
        let score = 1.0 + rng.random::<f64>() * 3.0;
        dictionary_lines.push(format!(
            "[X] ||| {} ||| {} ||| PPDB2.0Score={score:.4} ||| 0-0 ||| Equivalence",
            source.join(" "),
            target.join(" ")
        ));
        entries.push((source, target));
    }

    // harmonic usage weights: entry r is drawn with weight 1/(r+2)
    let weights: Vec<f64> = if spec.skew {
        (0..spec.n_entries).map(|r| 1.0 / (r as f64 + 2.0)).collect()
    } else {
        vec![1.0; spec.n_entries]
    };
    let weight_sum: f64 = weights.iter().sum();
    let sample_entry = |rng: &mut ChaCha8Rng| -> usize {
        let mut x = rng.random::<f64>() * weight_sum;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        spec.n_entries - 1
    };

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let n_fill = spec.min_fillers + rng.random_range(0..spec.max_fillers - spec.min_fillers + 1);
        let mut sentence: Vec<String> = (0..n_fill)
            .map(|_| fillers[rng.random_range(0..fillers.len())].clone())
            .collect();
        let (o, p) = &entries[sample_entry(&mut rng)];
        let at = rng.random_range(0..=sentence.len());
        let mut source = sentence.clone();
        source.splice(at..at, o.iter().cloned());
        sentence.splice(at..at, p.iter().cloned());
        pairs.push((source.join(" "), sentence.join(" ")));
    }

    SyntheticCorpus { dictionary_lines, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups(n: usize, captions_each: usize) -> Vec<CaptionGroup> {
        (0..n)
            .map(|i| CaptionGroup {
                image_id: format!("img{i}"),
                captions: (0..captions_each)
                    .map(|j| format!("caption {i} variant {j} about a scene"))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn five_captions_yield_twelve_ordered_pairs() {
        let g = groups(1, 5);
        // no split pressure: everything lands in train
        let splits = make_mscoco_pairs(&g, 1, 0, 0).unwrap();
        assert_eq!(splits.train.len(), 12);
    }

    #[test]
    fn captions_truncate_to_fifteen_tokens() {
        let long: String = (0..20).map(|i| format!("tok{i}")).collect::<Vec<_>>().join(" ");
        let g = vec![CaptionGroup {
            image_id: "x".into(),
            captions: vec![long.clone(), long],
        }];
        let splits = make_mscoco_pairs(&g, 1, 0, 0).unwrap();
        for (src, tgt) in &splits.train {
            assert_eq!(src.len(), MSCOCO_MAX_TOKENS);
            assert_eq!(tgt.len(), MSCOCO_MAX_TOKENS);
            assert_eq!(src[0], "tok0");
            assert_eq!(src[14], "tok14");
        }
    }

    #[test]
    fn small_groups_skipped_with_count() {
        let mut g = groups(2, 5);
        g.push(CaptionGroup { image_id: "tiny".into(), captions: vec!["only one".into()] });
        let splits = make_mscoco_pairs(&g, 1, 0, 0).unwrap();
        assert_eq!(splits.skipped_groups, 1);
        assert_eq!(splits.train.len(), 24);
    }

    #[test]
    fn same_seed_identical_splits() {
        let g = groups(30, 5);
        let a = make_mscoco_pairs(&g, 42, 24, 12).unwrap();
        let b = make_mscoco_pairs(&g, 42, 24, 12).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);
        let c = make_mscoco_pairs(&g, 43, 24, 12).unwrap();
        assert!(a.test != c.test || a.valid != c.valid || a.train != c.train);
    }

    #[test]
    fn exact_split_sizes_and_no_cross_split_images() {
        let g = groups(40, 5);
        let splits = make_mscoco_pairs(&g, 7, 25, 13).unwrap();
        assert_eq!(splits.test.len(), 25);
        assert_eq!(splits.valid.len(), 13);
        // image-level hygiene: a sentence identifies its image by content
        let image_of = |pair: &TokenPair| pair.0[1].clone();
        let test_images: std::collections::HashSet<String> =
            splits.test.iter().map(&image_of).collect();
        let valid_images: std::collections::HashSet<String> =
            splits.valid.iter().map(&image_of).collect();
        for p in &splits.train {
            assert!(!test_images.contains(&image_of(p)));
            assert!(!valid_images.contains(&image_of(p)));
        }
        for p in &splits.valid {
            assert!(!test_images.contains(&image_of(p)));
        }
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let g = groups(2, 5);
        assert!(matches!(
            make_mscoco_pairs(&g, 1, 20000, 10000),
            Err(Error::InsufficientData(_))
        ));
    }

    fn quora(records: &[(&str, &str, bool)]) -> Vec<QuoraRecord> {
        records
            .iter()
            .map(|(a, b, d)| QuoraRecord {
                question1: a.to_string(),
                question2: b.to_string(),
                is_duplicate: *d,
            })
            .collect()
    }

    #[test]
    fn non_duplicates_excluded() {
        let recs = quora(&[
            ("how do i learn rust", "what is the best way to learn rust", true),
            ("how do i learn rust", "why is the sky blue", false),
        ]);
        let splits = make_quora_pairs(&recs, 1, 10, 0, 0).unwrap();
        assert_eq!(splits.train.len(), 1);
    }

    #[test]
    fn long_questions_filtered() {
        let long: String = (0..31).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let recs = quora(&[(&long, "short question", true), ("a b", "c d", true)]);
        let splits = make_quora_pairs(&recs, 1, 10, 0, 0).unwrap();
        assert_eq!(splits.train.len(), 1);
        assert_eq!(splits.train[0].0, vec!["a", "b"]);
    }

    #[test]
    fn each_pair_in_exactly_one_split() {
        let recs: Vec<QuoraRecord> = (0..50)
            .map(|i| QuoraRecord {
                question1: format!("unique question number {i} here"),
                question2: format!("restated question number {i} here"),
                is_duplicate: true,
            })
            .collect();
        let splits = make_quora_pairs(&recs, 3, 30, 12, 8).unwrap();
        assert_eq!(splits.train.len(), 30);
        assert_eq!(splits.valid.len(), 12);
        assert_eq!(splits.test.len(), 8);
        let mut seen = std::collections::HashSet::new();
        for p in splits.train.iter().chain(&splits.valid).chain(&splits.test) {
            assert!(seen.insert(p.clone()), "pair appears twice");
        }
    }

    #[test]
    fn proportional_split_when_small() {
        let recs: Vec<QuoraRecord> = (0..77)
            .map(|i| QuoraRecord {
                question1: format!("q number {i}"),
                question2: format!("question {i}"),
                is_duplicate: true,
            })
            .collect();
        let splits = make_quora_pairs(&recs, 3, 145_000, 5_000, 4_000).unwrap();
        assert_eq!(splits.train.len() + splits.valid.len() + splits.test.len(), 77);
        assert!(!splits.valid.is_empty());
        assert!(!splits.test.is_empty());
        assert!(splits.train.len() > splits.valid.len() + splits.test.len());
    }

    #[test]
    fn quora_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quora.tsv");
        std::fs::write(
            &path,
            "id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate\n\
             0\t1\t2\tWhat is rust?\tWhat is the rust language?\t1\n\
             1\t3\t4\tUnrelated?\tOther thing?\t0\n",
        )
        .unwrap();
        let recs = load_quora_records(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].is_duplicate);
        assert!(!recs[1].is_duplicate);
        assert_eq!(recs[0].question1, "What is rust?");
    }

    #[test]
    fn caption_file_parsing_groups_by_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("captions.json");
        std::fs::write(
            &path,
            r#"[
                {"image_id": 7, "caption": "a cat on a mat"},
                {"image_id": 9, "caption": "a dog"},
                {"image_id": 7, "caption": "feline resting"}
            ]"#,
        )
        .unwrap();
        let groups = load_caption_groups(&path).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].image_id, "7");
        assert_eq!(groups[0].captions.len(), 2);
    }

    #[test]
    fn pair_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let pairs: Vec<TokenPair> = vec![
            (vec!["a".into(), "b".into()], vec!["c".into()]),
            (vec!["d".into()], vec!["e".into(), "f".into()]),
        ];
        write_pairs(&pairs, &path).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), pairs);
    }

    #[test]
    fn synthetic_corpus_replaces_exactly_one_phrase() {
        let spec = SyntheticSpec { n_pairs: 50, seed: 9, ..SyntheticSpec::default() };
        let corpus = synthetic_editing_corpus(&spec);
        assert_eq!(corpus.dictionary_lines.len(), 50);
        assert_eq!(corpus.pairs.len(), 50);
        for (src, tgt) in &corpus.pairs {
            let src_toks: Vec<&str> = src.split(' ').collect();
            let tgt_toks: Vec<&str> = tgt.split(' ').collect();
            let marks: Vec<&&str> = src_toks.iter().filter(|t| t.starts_with("mark")).collect();
            assert_eq!(marks.len(), 1, "exactly one source marker in {src:?}");
            assert!(tgt_toks.iter().any(|t| t.starts_with("sub")));
            assert!(!tgt_toks.iter().any(|t| t.starts_with("mark")));
        }
    }

    #[test]
    fn synthetic_corpus_is_seeded() {
        let spec = SyntheticSpec { n_pairs: 20, seed: 4, ..SyntheticSpec::default() };
        let a = synthetic_editing_corpus(&spec);
        let b = synthetic_editing_corpus(&spec);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.dictionary_lines, b.dictionary_lines);
    }

    proptest! {
        /// Emitted pairs always respect the length caps.
        #[test]
        fn caps_hold_over_random_corpora(
            n_groups in 1usize..10,
            caption_len in 1usize..25,
            seed in 0u64..20,
        ) {
            let g: Vec<CaptionGroup> = (0..n_groups)
                .map(|i| CaptionGroup {
                    image_id: format!("g{i}"),
                    captions: (0..5)
                        .map(|j| {
                            (0..caption_len)
                                .map(|k| format!("w{i}{j}{k}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        })
                        .collect(),
                })
                .collect();
            let splits = make_mscoco_pairs(&g, seed, 0, 0).unwrap();
            for (src, tgt) in &splits.train {
                prop_assert!(src.len() <= MSCOCO_MAX_TOKENS);
                prop_assert!(tgt.len() <= MSCOCO_MAX_TOKENS);
            }
        }
    }
}
