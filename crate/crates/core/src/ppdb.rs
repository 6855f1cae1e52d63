//! Paraphrase-dictionary ingestion.
//!
//! Parses the pipe-delimited paraphrase-pair format (six ` ||| `-separated
//! fields: lhs label, source phrase, target phrase, feature list, alignment,
//! entailment label), filters pairs down to equivalence-labelled entries
//! within a phrase-length cap, and deduplicates into a [`ParaphraseDictionary`].
//!
//! Dictionary snapshots are line-delimited JSON: a header record
//! `{"format":"paraedit-dictionary","version":1,"entry_count":N,"provenance":{...}}`
//! followed by one entry record per line.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIELD_DELIMITER: &str = " ||| ";
pub const DEFAULT_SCORE_KEY: &str = "PPDB2.0Score";
pub const DEFAULT_MAX_PHRASE_LEN: usize = 7;

/// Semantic relation label carried by each raw record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entailment {
    Equivalence,
    ForwardEntailment,
    ReverseEntailment,
    Exclusion,
    Independent,
    OtherRelated,
}

impl FromStr for Entailment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Equivalence" => Ok(Self::Equivalence),
            "ForwardEntailment" => Ok(Self::ForwardEntailment),
            "ReverseEntailment" => Ok(Self::ReverseEntailment),
            "Exclusion" => Ok(Self::Exclusion),
            "Independent" => Ok(Self::Independent),
            "OtherRelated" => Ok(Self::OtherRelated),
            other => Err(format!("unknown entailment label {other:?}")),
        }
    }
}

impl fmt::Display for Entailment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Equivalence => "Equivalence",
            Self::ForwardEntailment => "ForwardEntailment",
            Self::ReverseEntailment => "ReverseEntailment",
            Self::Exclusion => "Exclusion",
            Self::Independent => "Independent",
            Self::OtherRelated => "OtherRelated",
        };
        f.write_str(s)
    }
}

/// One parsed input line, before filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPpdbRecord {
    pub lhs_label: String,
    pub source_phrase: Vec<String>,
    pub target_phrase: Vec<String>,
    pub features: std::collections::BTreeMap<String, f64>,
    pub alignment: String,
    pub entailment: Entailment,
}

/// One surviving paraphrase pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub id: u32,
    #[serde(rename = "o")]
    pub source_tokens: Vec<String>,
    #[serde(rename = "p")]
    pub target_tokens: Vec<String>,
    #[serde(rename = "score")]
    pub ppdb_score: f64,
    pub entailment: Entailment,
}

/// Ingestion settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub max_phrase_len: usize,
    pub strict: bool,
    /// Feature key read as the pair confidence score.
    pub score_key: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            strict: false,
            score_key: DEFAULT_SCORE_KEY.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub source_digest: String,
    pub config: IngestConfig,
}

/// The filtered, deduplicated dictionary. Entry ids are dense `0..N-1`
/// in first-seen order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParaphraseDictionary {
    pub entries: Vec<DictionaryEntry>,
    pub provenance: Provenance,
}

impl ParaphraseDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Counters reported after a build.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed_skipped: usize,
    pub filtered_out: usize,
    pub duplicates_merged: usize,
}

/// Parse a single record line. Tokens are split on single spaces and
/// lowercased; feature values must parse as reals.
pub fn parse_record(line: &str) -> Result<RawPpdbRecord> {
    let line = line.trim_end_matches(['\r', '\n']);
    let fields: Vec<&str> = line.split(FIELD_DELIMITER).collect();
    if fields.len() != 6 {
        return Err(malformed(format!(
            "expected 6 fields separated by \" ||| \", got {}",
            fields.len()
        )));
    }
    let source_phrase = split_phrase(fields[1], "source phrase")?;
    let target_phrase = split_phrase(fields[2], "target phrase")?;
    let mut features = std::collections::BTreeMap::new();
    for item in fields[3].split(' ').filter(|s| !s.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| malformed(format!("feature {item:?} is not name=value")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| malformed(format!("feature {name:?} has unparseable value {value:?}")))?;
        features.insert(name.to_string(), value);
    }
    let entailment = fields[5]
        .trim()
        .parse::<Entailment>()
        .map_err(malformed)?;
    Ok(RawPpdbRecord {
        lhs_label: fields[0].to_string(),
        source_phrase,
        target_phrase,
        features,
        alignment: fields[4].to_string(),
        entailment,
    })
}

fn split_phrase(field: &str, what: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = field
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    if tokens.is_empty() {
        return Err(malformed(format!("{what} is empty")));
    }
    Ok(tokens)
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::MalformedRecord { line: 0, reason: reason.into() }
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::MalformedRecord { reason, .. } => Error::MalformedRecord { line, reason },
        other => other,
    }
}

/// Render a record back into the line format accepted by [`parse_record`].
pub fn serialize_record(rec: &RawPpdbRecord) -> String {
    let features = rec
        .features
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{} ||| {} ||| {} ||| {} ||| {} ||| {}",
        rec.lhs_label,
        rec.source_phrase.join(" "),
        rec.target_phrase.join(" "),
        features,
        rec.alignment,
        rec.entailment
    )
}

/// Keep a record iff it is Equivalence-labelled, both phrases fit the length
/// cap, and it carries the confidence feature. Returns the entry fields with
/// a placeholder id; [`build_dictionary`] assigns real ids.
pub fn filter_record(rec: &RawPpdbRecord, cfg: &IngestConfig) -> Option<DictionaryEntry> {
    if rec.entailment != Entailment::Equivalence {
        return None;
    }
    if rec.source_phrase.len() > cfg.max_phrase_len || rec.target_phrase.len() > cfg.max_phrase_len
    {
        return None;
    }
    let score = *rec.features.get(&cfg.score_key)?;
    if !score.is_finite() {
        return None;
    }
    Some(DictionaryEntry {
        id: 0,
        source_tokens: rec.source_phrase.clone(),
        target_tokens: rec.target_phrase.clone(),
        ppdb_score: score,
        entailment: rec.entailment,
    })
}

/// Build the dictionary from a line stream. Duplicate `(o, p)` pairs keep the
/// maximum score; ids follow first-seen order. Malformed lines abort under
/// `strict`, otherwise they are skipped and counted.
pub fn build_dictionary<I>(
    lines: I,
    cfg: &IngestConfig,
    source_digest: &str,
) -> Result<(ParaphraseDictionary, IngestStats)>
where
    I: IntoIterator<Item = std::io::Result<String>>,
{
    let mut entries: Vec<DictionaryEntry> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut stats = IngestStats::default();

    for (lineno, line) in lines.into_iter().enumerate() {
        let line = line?;
        stats.lines += 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match parse_record(&line) {
            Ok(rec) => rec,
            Err(err) => {
                if cfg.strict {
                    return Err(at_line(err, lineno + 1));
                }
                stats.malformed_skipped += 1;
                continue;
            }
        };
        let Some(mut entry) = filter_record(&rec, cfg) else {
            stats.filtered_out += 1;
            continue;
        };
        let key = (entry.source_tokens.join(" "), entry.target_tokens.join(" "));
        match seen.get(&key) {
            Some(&idx) => {
                stats.duplicates_merged += 1;
                if entry.ppdb_score > entries[idx].ppdb_score {
                    entries[idx].ppdb_score = entry.ppdb_score;
                }
            }
            None => {
                entry.id = entries.len() as u32;
                seen.insert(key, entries.len());
                entries.push(entry);
            }
        }
    }

    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let dict = ParaphraseDictionary {
        entries,
        provenance: Provenance {
            source_digest: source_digest.to_string(),
            config: cfg.clone(),
        },
    };
    Ok((dict, stats))
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    entry_count: usize,
    provenance: Provenance,
}

const SNAPSHOT_FORMAT: &str = "paraedit-dictionary";
const SNAPSHOT_VERSION: u32 = 1;

/// Write the dictionary snapshot (JSON lines, header first).
pub fn save_dictionary(dict: &ParaphraseDictionary, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.to_string(),
        version: SNAPSHOT_VERSION,
        entry_count: dict.entries.len(),
        provenance: dict.provenance.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for entry in &dict.entries {
        writeln!(out, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(())
}

/// Load a dictionary snapshot, validating version, count, and id density.
pub fn load_dictionary(path: &Path) -> Result<ParaphraseDictionary> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Snapshot("missing header line".into()))??;
    let header: SnapshotHeader = serde_json::from_str(&header_line)?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(Error::Snapshot(format!("unexpected format {:?}", header.format)));
    }
    if header.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {}", header.version)));
    }
    let mut entries = Vec::with_capacity(header.entry_count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DictionaryEntry = serde_json::from_str(&line)?;
        entries.push(entry);
    }
    if entries.len() != header.entry_count {
        return Err(Error::Snapshot(format!(
            "entry count mismatch: header says {}, found {}",
            header.entry_count,
            entries.len()
        )));
    }
    for (i, entry) in entries.iter().enumerate() {
        if entry.id as usize != i {
            return Err(Error::Snapshot(format!("non-dense id {} at position {i}", entry.id)));
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(ParaphraseDictionary {
        entries,
        provenance: header.provenance,
    })
}
