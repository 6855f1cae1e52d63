//! Corpus-level BLEU (native) and METEOR (external-tool wrapper).
//!
//! BLEU follows the original corpus definition: clipped n-gram precision up
//! to order four combined by geometric mean, times a brevity penalty computed
//! from the closest reference lengths. No smoothing: a zero precision at any
//! order zeroes the score.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

use serde::Serialize;

use crate::error::{Error, Result};

/// One hypothesis with its reference set.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

pub const BLEU_MAX_N: usize = 4;

/// Corpus BLEU in [0, 100].
pub fn bleu(records: &[EvalRecord], max_n: usize) -> f64 {
    assert!(!records.is_empty(), "bleu needs at least one record");
    let mut clipped = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for rec in records {
        assert!(!rec.references.is_empty(), "record without references");
        hyp_len += rec.hypothesis.len();
        ref_len += closest_ref_len(rec);
        for n in 1..=max_n {
            if rec.hypothesis.len() < n {
                continue;
            }
            let hyp_counts = ngram_counts(&rec.hypothesis, n);
            let mut max_ref: HashMap<&[String], u64> = HashMap::new();
            for reference in &rec.references {
                for (gram, count) in ngram_counts(reference, n) {
                    let entry = max_ref.entry(gram).or_insert(0);
                    *entry = (*entry).max(count);
                }
            }
            for (gram, count) in &hyp_counts {
                let cap = max_ref.get(gram).copied().unwrap_or(0);
                clipped[n - 1] += (*count).min(cap);
            }
            totals[n - 1] += (rec.hypothesis.len() - n + 1) as u64;
        }
    }

    let mut log_precision_sum = 0.0;
    for n in 0..max_n {
        if totals[n] == 0 || clipped[n] == 0 {
            return 0.0;
        }
        log_precision_sum += (clipped[n] as f64 / totals[n] as f64).ln();
    }
    let brevity = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
    };
    100.0 * brevity * (log_precision_sum / max_n as f64).exp()
}

/// Reference length closest to the hypothesis length; ties pick the shorter.
fn closest_ref_len(rec: &EvalRecord) -> usize {
    let h = rec.hypothesis.len() as i64;
    rec.references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - h).abs(), len))
        .unwrap()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// METEOR wrapper
// ---------------------------------------------------------------------------

/// Run an external METEOR scorer over the records and parse its final corpus
/// score. The tool is invoked as `<tool> <hyp_file> <ref_file>` (via
/// `java -jar` for a .jar path, with `-norm`), using each record's first
/// reference; the last line matching `Final score: <x>` is returned.
pub fn meteor(records: &[EvalRecord], tool_path: &Path) -> Result<f64> {
    if !tool_path.exists() {
        return Err(Error::ToolUnavailable(format!(
            "no such file: {}",
            tool_path.display()
        )));
    }
    let dir = std::env::temp_dir().join(format!("paraedit-meteor-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let hyp_path = dir.join("hyp.txt");
    let ref_path = dir.join("ref.txt");
    let mut hyp_text = String::new();
    let mut ref_text = String::new();
    for rec in records {
        hyp_text.push_str(&rec.hypothesis.join(" "));
        hyp_text.push('\n');
        ref_text.push_str(&rec.references[0].join(" "));
        ref_text.push('\n');
    }
    std::fs::write(&hyp_path, hyp_text)?;
    std::fs::write(&ref_path, ref_text)?;

    let output = if tool_path.extension().is_some_and(|e| e == "jar") {
        Command::new("java")
            .arg("-Xmx2G")
            .arg("-jar")
            .arg(tool_path)
            .arg(&hyp_path)
            .arg(&ref_path)
            .arg("-norm")
            .output()
    } else {
        Command::new(tool_path).arg(&hyp_path).arg(&ref_path).output()
    }
    .map_err(|e| Error::ToolUnavailable(format!("{}: {e}", tool_path.display())))?;

    let stdout = String::from_utf8_lossy(&output.stdout);
    let _ = std::fs::remove_dir_all(&dir);
    parse_meteor_output(&stdout)
}

fn parse_meteor_output(stdout: &str) -> Result<f64> {
    for line in stdout.lines().rev() {
        if let Some(rest) = line.trim().strip_prefix("Final score:") {
            return rest.trim().parse::<f64>().map_err(|_| {
                Error::ToolOutputUnparseable(format!("bad score in line {line:?}"))
            });
        }
    }
    Err(Error::ToolOutputUnparseable(format!(
        "no 'Final score:' line in output: {:?}",
        stdout.chars().take(400).collect::<String>()
    )))
}

/// One row of an evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub beam_size: usize,
    pub bleu: f64,
    pub meteor: Option<f64>,
}
