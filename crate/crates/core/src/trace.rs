//! Attention-trace capture and heatmap-ready export.
//!
//! A trace file is line-delimited JSON. Each decoded sentence contributes a
//! meta record naming its retrieved pairs followed by one step record per
//! emitted token:
//!
//! ```text
//! {"record":"meta","sentence":0,"source":[...],"pairs":[{"o":"...","p":"..."}],"mask":[...]}
//! {"record":"step","sentence":0,"step":0,"token":"two","a":[...],"a_prime":[...],"src":[...]}
//! ```
//!
//! Export turns each sentence into two tab-separated matrices (delete and
//! insert attention): one row per retrieved pair labelled `o → p`, one column
//! per emitted token, in retrieval rank order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RetrievedDictionary;
use crate::model::decoder::StepAttention;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePair {
    pub o: String,
    pub p: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record")]
pub enum TraceRecord {
    #[serde(rename = "meta")]
    Meta {
        sentence: usize,
        source: Vec<String>,
        pairs: Vec<TracePair>,
        mask: Vec<bool>,
    },
    #[serde(rename = "step")]
    Step {
        sentence: usize,
        step: usize,
        token: String,
        a: Vec<f64>,
        a_prime: Vec<f64>,
        src: Vec<f64>,
    },
}

/// Build the records for one decoded sentence.
pub fn sentence_records(
    sentence: usize,
    source: &[String],
    ret: &RetrievedDictionary,
    m: usize,
    steps: &[(String, StepAttention)],
) -> Vec<TraceRecord> {
    let mut mask = vec![false; m];
    let pairs: Vec<TracePair> = ret
        .pairs
        .iter()
        .take(m)
        .enumerate()
        .map(|(i, p)| {
            mask[i] = true;
            TracePair {
                o: p.entry.source_tokens.join(" "),
                p: p.entry.target_tokens.join(" "),
            }
        })
        .collect();
    let mut records = vec![TraceRecord::Meta {
        sentence,
        source: source.to_vec(),
        pairs,
        mask,
    }];
    for (step, (token, attention)) in steps.iter().enumerate() {
        records.push(TraceRecord::Step {
            sentence,
            step,
            token: token.clone(),
            a: attention.a.to_vec(),
            a_prime: attention.a_prime.to_vec(),
            src: attention.src.to_vec(),
        });
    }
    records
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        writeln!(out, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedTrace(format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Matrices for one sentence, ready to render.
#[derive(Debug)]
pub struct SentenceMatrices {
    pub sentence: usize,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    /// rows × columns, delete attention.
    pub delete: Vec<Vec<f64>>,
    /// rows × columns, insert attention.
    pub insert: Vec<Vec<f64>>,
}

/// Group trace records into per-sentence matrices. Padding rows (mask false)
/// are omitted; real rows keep retrieval rank order.
pub fn collect_matrices(records: &[TraceRecord]) -> Result<Vec<SentenceMatrices>> {
    let mut out: Vec<SentenceMatrices> = Vec::new();
    let mut masks: Vec<Vec<bool>> = Vec::new();
    for rec in records {
        match rec {
            TraceRecord::Meta { sentence, pairs, mask, .. } => {
                if *sentence != out.len() {
                    return Err(Error::MalformedTrace(format!(
                        "meta for sentence {sentence} out of order"
                    )));
                }
                out.push(SentenceMatrices {
                    sentence: *sentence,
                    row_labels: pairs.iter().map(|p| format!("{} → {}", p.o, p.p)).collect(),
                    column_labels: Vec::new(),
                    delete: vec![Vec::new(); pairs.len()],
                    insert: vec![Vec::new(); pairs.len()],
                });
                masks.push(mask.clone());
            }
            TraceRecord::Step { sentence, token, a, a_prime, .. } => {
                let mats = out.get_mut(*sentence).ok_or_else(|| {
                    Error::MalformedTrace(format!("step for unknown sentence {sentence}"))
                })?;
                let mask = &masks[*sentence];
                if a.len() != mask.len() || a_prime.len() != mask.len() {
                    return Err(Error::MalformedTrace(format!(
                        "sentence {sentence}: attention width {} does not match mask {}",
                        a.len(),
                        mask.len()
                    )));
                }
                mats.column_labels.push(token.clone());
                let mut row = 0;
                for (i, &valid) in mask.iter().enumerate() {
                    if valid {
                        mats.delete[row].push(a[i]);
                        mats.insert[row].push(a_prime[i]);
                        row += 1;
                    }
                }
                if row != mats.row_labels.len() {
                    return Err(Error::MalformedTrace(format!(
                        "sentence {sentence}: {row} unmasked rows but {} pairs",
                        mats.row_labels.len()
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Write `sentence_<i>_delete.tsv` and `sentence_<i>_insert.tsv` under
/// `out_dir` for every sentence in the trace.
pub fn export_matrices(trace_path: &Path, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let records = read_trace(trace_path)?;
    let sentences = collect_matrices(&records)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for mats in &sentences {
        for (kind, matrix) in [("delete", &mats.delete), ("insert", &mats.insert)] {
            let path = out_dir.join(format!("sentence_{}_{kind}.tsv", mats.sentence));
            let mut out = BufWriter::new(File::create(&path)?);
            writeln!(out, "pair\t{}", mats.column_labels.join("\t"))?;
            for (label, row) in mats.row_labels.iter().zip(matrix.iter()) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(out, "{label}\t{}", cells.join("\t"))?;
            }
            written.push(path);
        }
    }
    Ok(written)
}
