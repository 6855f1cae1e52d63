//! Command-line entry point wiring the pipeline:
//! ingest → index → preprocess → train → generate → evaluate → attention-export.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paraedit::data_prep;
use paraedit::decoding::{beam_decode, default_max_len, greedy_decode, Hypothesis};
use paraedit::dict_encoder::encode_retrieved;
use paraedit::error::{Error, Result};
use paraedit::evaluation::{bleu, meteor, EvalRecord, ReportRow, BLEU_MAX_N};
use paraedit::index::{build_index, load_index, retrieve, save_index, IndexSnapshot, DEFAULT_M};
use paraedit::manifest::{sha256_file, RunManifest};
use paraedit::model::{encode_source, ModelParameters};
use paraedit::ppdb;
use paraedit::text::tokenize;
use paraedit::trace;
use paraedit::training::{
    prepare_examples, train, write_metrics, Checkpoint, TrainingConfig, CHECKPOINT_VERSION,
};
use paraedit::vocab::Vocabulary;

#[derive(Parser)]
#[command(name = "paraedit", version, about = "Dictionary-guided paraphrase generation")]
struct Cli {
    /// Seed for every randomized step; recorded in the run manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Where to write the run manifest (defaults to a path derived from the
    /// primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter a paraphrase-pair file into a dictionary snapshot.
    Ingest(IngestArgs),
    /// Build the retrieval index over a dictionary snapshot.
    Index(IndexArgs),
    /// Build tokenized train/valid/test pair files from a raw corpus.
    Preprocess(PreprocessArgs),
    /// Retrieve the top dictionary pairs for one sentence.
    Retrieve(RetrieveArgs),
    /// Train the editing model.
    Train(TrainArgs),
    /// Generate paraphrases for a file of sentences.
    Generate(GenerateArgs),
    /// Score generated paraphrases against references.
    Evaluate(EvaluateArgs),
    /// Convert an attention trace into heatmap-ready matrices.
    AttentionExport(AttentionExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input dictionary in the six-field ` ||| ` format.
    #[arg(long)]
    ppdb: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ppdb::DEFAULT_MAX_PHRASE_LEN)]
    max_phrase_len: usize,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Feature key holding the pair confidence score.
    #[arg(long, default_value = ppdb::DEFAULT_SCORE_KEY)]
    score_key: String,
}

#[derive(Args)]
struct IndexArgs {
    /// Dictionary snapshot produced by `ingest`.
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Caption corpus: JSON array of {image_id, caption}.
    #[arg(long, conflicts_with = "quora")]
    mscoco: Option<PathBuf>,
    /// Duplicate-question corpus: TSV with question1/question2/is_duplicate.
    #[arg(long)]
    quora: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Test instances (captions default 20000, questions 4000).
    #[arg(long)]
    test_size: Option<usize>,
    /// Validation instances (captions default 10000, questions 5000).
    #[arg(long)]
    valid_size: Option<usize>,
    /// Training instances (questions only; default 145000).
    #[arg(long)]
    train_size: Option<usize>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Index snapshot produced by `index`.
    #[arg(long)]
    index: PathBuf,
    /// Sentence to retrieve for (raw text, tokenized internally).
    #[arg(long)]
    sentence: String,
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    /// Emit one JSON record per pair instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Tokenized training pairs (source<TAB>target).
    #[arg(long)]
    train: PathBuf,
    /// Tokenized validation pairs.
    #[arg(long)]
    valid: PathBuf,
    /// Index snapshot for retrieval.
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    d_attn: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Train with the dictionary context forced to zero.
    #[arg(long)]
    ablate_dictionary: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Input sentences, one per line (raw text).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Hard cap on generated length.
    #[arg(long, default_value_t = 30)]
    len_cap: usize,
    /// Also write an attention trace (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Tokenized test pairs (source<TAB>target). Targets sharing one source
    /// become that source's reference set.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Beam sizes to evaluate; repeat the flag for several rows.
    #[arg(long = "beam")]
    beams: Vec<usize>,
    /// External METEOR scorer; BLEU is still reported when absent or broken.
    #[arg(long)]
    meteor_tool: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    len_cap: usize,
}

#[derive(Args)]
struct AttentionExportArgs {
    /// Trace file from `generate --trace`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, seed, cli.manifest),
        Command::Index(args) => cmd_index(args, seed, cli.manifest),
        Command::Preprocess(args) => cmd_preprocess(args, seed, cli.manifest),
        Command::Retrieve(args) => cmd_retrieve(args, seed, cli.manifest),
        Command::Train(args) => cmd_train(args, cli.seed, cli.manifest),
        Command::Generate(args) => cmd_generate(args, seed, cli.manifest),
        Command::Evaluate(args) => cmd_evaluate(args, seed, cli.manifest),
        Command::AttentionExport(args) => cmd_attention_export(args, seed, cli.manifest),
    }
}

fn manifest_path(explicit: Option<PathBuf>, derived: PathBuf) -> PathBuf {
    explicit.unwrap_or(derived)
}

fn cmd_ingest(args: IngestArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let cfg = ppdb::IngestConfig {
        max_phrase_len: args.max_phrase_len,
        strict: args.strict,
        score_key: args.score_key.clone(),
    };
    let manifest_path = manifest_path(
        manifest,
        PathBuf::from(format!("{}.manifest.json", args.out.display())),
    );
    RunManifest::new("ingest", serde_json::to_value(&cfg)?, seed)
        .input(&args.ppdb)?
        .output(&args.out)
        .write(&manifest_path)?;

    let digest = sha256_file(&args.ppdb)?;
    let file = File::open(&args.ppdb)?;
    let lines = std::io::BufRead::lines(std::io::BufReader::new(file));
    let (dict, stats) = ppdb::build_dictionary(lines, &cfg, &digest)?;
    ppdb::save_dictionary(&dict, &args.out)?;
    eprintln!(
        "ingested {} entries ({} lines, {} malformed skipped, {} filtered, {} duplicates merged)",
        dict.len(),
        stats.lines,
        stats.malformed_skipped,
        stats.filtered_out,
        stats.duplicates_merged
    );
    Ok(())
}

fn cmd_index(args: IndexArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let manifest_path = manifest_path(
        manifest,
        PathBuf::from(format!("{}.manifest.json", args.out.display())),
    );
    RunManifest::new("index", serde_json::json!({}), seed)
        .input(&args.dict)?
        .output(&args.out)
        .write(&manifest_path)?;

    let dict = ppdb::load_dictionary(&args.dict)?;
    let index = build_index(&dict)?;
    save_index(&dict, &index, &args.out)?;
    eprintln!(
        "indexed {} entries, {} distinct tokens",
        index.corpus_size,
        index.postings.len()
    );
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let input = args
        .mscoco
        .as_ref()
        .or(args.quora.as_ref())
        .ok_or_else(|| Error::Config("pass --mscoco or --quora".into()))?
        .clone();
    let manifest_path = manifest_path(manifest, args.out_dir.join("manifest.json"));
    let config = serde_json::json!({
        "mscoco": args.mscoco.is_some(),
        "test_size": args.test_size,
        "valid_size": args.valid_size,
        "train_size": args.train_size,
    });
    RunManifest::new("preprocess", config, seed)
        .input(&input)?
        .output(&args.out_dir)
        .write(&manifest_path)?;

    let splits = if let Some(path) = &args.mscoco {
        let groups = data_prep::load_caption_groups(path)?;
        data_prep::make_mscoco_pairs(
            &groups,
            seed,
            args.test_size.unwrap_or(20_000),
            args.valid_size.unwrap_or(10_000),
        )?
    } else {
        let records = data_prep::load_quora_records(&input)?;
        data_prep::make_quora_pairs(
            &records,
            seed,
            args.train_size.unwrap_or(145_000),
            args.valid_size.unwrap_or(5_000),
            args.test_size.unwrap_or(4_000),
        )?
    };
    std::fs::create_dir_all(&args.out_dir)?;
    data_prep::write_pairs(&splits.train, &args.out_dir.join("train.tsv"))?;
    data_prep::write_pairs(&splits.valid, &args.out_dir.join("valid.tsv"))?;
    data_prep::write_pairs(&splits.test, &args.out_dir.join("test.tsv"))?;
    eprintln!(
        "wrote {} train / {} valid / {} test pairs ({} groups skipped)",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        splits.skipped_groups
    );
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let manifest_path = manifest_path(manifest, PathBuf::from("retrieve.manifest.json"));
    RunManifest::new(
        "retrieve",
        serde_json::json!({"m": args.m, "sentence": args.sentence}),
        seed,
    )
    .input(&args.index)?
    .write(&manifest_path)?;

    let snapshot = load_index(&args.index)?;
    let sentence = tokenize(&args.sentence);
    let ret = retrieve(&snapshot.index, &snapshot.dict, &sentence, args.m);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (rank, pair) in ret.pairs.iter().enumerate() {
        let line = if args.json {
            serde_json::json!({
                "rank": rank,
                "source": pair.entry.source_tokens.join(" "),
                "target": pair.entry.target_tokens.join(" "),
                "ppdb_score": pair.entry.ppdb_score,
                "overlap_score": pair.overlap_score,
                "first_stage_score": pair.first_stage_score,
                "score_r": pair.score_r,
            })
            .to_string()
        } else {
            format!(
                "{rank:>2}. {} -> {}  (score {:.4} = overlap {:.4} + dict {:.4})",
                pair.entry.source_tokens.join(" "),
                pair.entry.target_tokens.join(" "),
                pair.score_r,
                pair.overlap_score,
                pair.entry.ppdb_score,
            )
        };
        if let Err(err) = writeln!(out, "{line}") {
            if err.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
            return Err(err.into());
        }
    }
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, cli_seed: Option<u64>) -> Result<TrainingConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainingConfig::from_file(path)?,
        None => TrainingConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    apply!(d_emb, d_hidden, d_attn, dropout, batch_size, learning_rate, m, max_epochs, patience, min_count);
    if args.ablate_dictionary {
        cfg.ablate_dictionary = true;
    }
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, cli_seed: Option<u64>, manifest: Option<PathBuf>) -> Result<()> {
    let cfg = resolve_train_config(&args, cli_seed)?;
    let manifest_path = manifest_path(manifest, args.out_dir.join("manifest.json"));
    let mut builder = RunManifest::new("train", serde_json::to_value(&cfg)?, cfg.seed)
        .input(&args.train)?
        .input(&args.valid)?
        .input(&args.index)?;
    if let Some(config) = &args.config {
        builder = builder.input(config)?;
    }
    builder
        .output(&args.out_dir.join("checkpoint.json"))
        .output(&args.out_dir.join("metrics.jsonl"))
        .write(&manifest_path)?;

    let train_pairs = data_prep::read_pairs(&args.train)?;
    let valid_pairs = data_prep::read_pairs(&args.valid)?;
    if train_pairs.is_empty() || valid_pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // vocabulary from both sides of the training split only
    let sentences: Vec<&[String]> = train_pairs
        .iter()
        .flat_map(|(s, t)| [s.as_slice(), t.as_slice()])
        .collect();
    let vocab = Vocabulary::build(sentences, cfg.min_count)?;

    let snapshot = load_index(&args.index)?;
    let train_set = prepare_examples(&train_pairs, &vocab, &snapshot.index, &snapshot.dict, cfg.m);
    let valid_set = prepare_examples(&valid_pairs, &vocab, &snapshot.index, &snapshot.dict, cfg.m);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParameters::init(cfg.model_dims(vocab.len()), &mut init_rng)?;
    eprintln!(
        "training on {} pairs (vocab {}, {} parameters{})",
        train_set.len(),
        vocab.len(),
        params.num_params(),
        if cfg.ablate_dictionary { ", dictionary ablated" } else { "" }
    );

    let outcome = train(&cfg, params, &train_set, &valid_set)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_metrics(&outcome.metrics, &args.out_dir.join("metrics.jsonl"))?;
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg,
        vocab,
        params: outcome.best_params,
    };
    ckpt.save(&args.out_dir.join("checkpoint.json"))?;
    eprintln!(
        "best validation loss {:.4} at epoch {}{}",
        outcome.best_valid_loss,
        outcome.best_epoch,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn decode_sentence(
    ckpt: &Checkpoint,
    snapshot: &IndexSnapshot,
    tokens: &[String],
    beam: usize,
    len_cap: usize,
) -> Result<(Hypothesis, paraedit::index::RetrievedDictionary)> {
    let ret = retrieve(&snapshot.index, &snapshot.dict, tokens, ckpt.config.m);
    let ed = encode_retrieved(&ret, &ckpt.vocab, &ckpt.params.embedding, ckpt.config.m);
    let ids = ckpt.vocab.ids(tokens);
    let enc = encode_source(&ckpt.params, &ids)?;
    let max_len = default_max_len(tokens.len(), len_cap);
    let hyp = if beam <= 1 {
        greedy_decode(&ckpt.params, &enc, &ed, max_len)
    } else {
        beam_decode(&ckpt.params, &enc, &ed, beam, max_len)
            .into_iter()
            .next()
            .expect("beam decode returns at least one hypothesis")
    };
    Ok((hyp, ret))
}

fn surface_text(ckpt: &Checkpoint, hyp: &Hypothesis) -> String {
    hyp.surface()
        .iter()
        .map(|&id| ckpt.vocab.token(id).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_generate(args: GenerateArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let manifest_path = manifest_path(
        manifest,
        PathBuf::from(format!("{}.manifest.json", args.out.display())),
    );
    RunManifest::new(
        "generate",
        serde_json::json!({"beam": args.beam, "len_cap": args.len_cap}),
        seed,
    )
    .input(&args.checkpoint)?
    .input(&args.index)?
    .input(&args.input)?
    .output(&args.out)
    .write(&manifest_path)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let snapshot = load_index(&args.index)?;
    let text = std::fs::read_to_string(&args.input)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    let mut trace_records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            writeln!(out)?;
            continue;
        }
        let (hyp, ret) = decode_sentence(&ckpt, &snapshot, &tokens, args.beam, args.len_cap)?;
        writeln!(out, "{}", surface_text(&ckpt, &hyp))?;
        if args.trace.is_some() {
            let steps: Vec<(String, paraedit::model::StepAttention)> = hyp
                .trace
                .iter()
                .map(|(tok, att)| (ckpt.vocab.token(*tok).to_string(), att.clone()))
                .collect();
            trace_records.extend(trace::sentence_records(i, &tokens, &ret, ckpt.config.m, &steps));
        }
    }
    drop(out);
    if let Some(trace_path) = &args.trace {
        trace::write_trace(&trace_records, trace_path)?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, seed: u64, manifest: Option<PathBuf>) -> Result<()> {
    let beams = if args.beams.is_empty() { vec![1, 10] } else { args.beams.clone() };
    let manifest_path = manifest_path(manifest, args.out_dir.join("manifest.json"));
    RunManifest::new(
        "evaluate",
        serde_json::json!({"beams": beams, "len_cap": args.len_cap}),
        seed,
    )
    .input(&args.checkpoint)?
    .input(&args.index)?
    .input(&args.test)?
    .output(&args.out_dir)
    .write(&manifest_path)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let snapshot = load_index(&args.index)?;
    let pairs = data_prep::read_pairs(&args.test)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // group targets by identical source, keeping first-appearance order
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut refs: HashMap<Vec<String>, Vec<Vec<String>>> = HashMap::new();
    for (src, tgt) in &pairs {
        if !refs.contains_key(src) {
            order.push(src.clone());
        }
        refs.entry(src.clone()).or_default().push(tgt.clone());
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let model_name = if ckpt.config.ablate_dictionary {
        "editing-ablated"
    } else {
        "editing"
    };
    let mut report = BufWriter::new(File::create(args.out_dir.join("report.jsonl"))?);
    for &beam in &beams {
        let mut records = Vec::with_capacity(order.len());
        let hyp_path = args.out_dir.join(format!("hyps_beam{beam}.txt"));
        let mut hyp_out = BufWriter::new(File::create(&hyp_path)?);
        for src in &order {
            let (hyp, _) = decode_sentence(&ckpt, &snapshot, src, beam, args.len_cap)?;
            let hyp_tokens: Vec<String> = hyp
                .surface()
                .iter()
                .map(|&id| ckpt.vocab.token(id).to_string())
                .collect();
            writeln!(hyp_out, "{}", hyp_tokens.join(" "))?;
            records.push(EvalRecord {
                hypothesis: hyp_tokens,
                references: refs[src].clone(),
            });
        }
        drop(hyp_out);
        let bleu_score = bleu(&records, BLEU_MAX_N);
        let meteor_score = match &args.meteor_tool {
            Some(tool) => match meteor(&records, tool) {
                Ok(score) => Some(score),
                Err(err) => {
                    eprintln!("warning: meteor skipped: {err}");
                    None
                }
            },
            None => None,
        };
        let row = ReportRow {
            model: model_name.to_string(),
            beam_size: beam,
            bleu: bleu_score,
            meteor: meteor_score,
        };
        writeln!(report, "{}", serde_json::to_string(&row)?)?;
        eprintln!(
            "beam {beam}: BLEU {bleu_score:.2}{}",
            meteor_score.map(|m| format!(", METEOR {m:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_attention_export(
    args: AttentionExportArgs,
    seed: u64,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let manifest_path = manifest_path(manifest, args.out_dir.join("manifest.json"));
    RunManifest::new("attention-export", serde_json::json!({}), seed)
        .input(&args.trace)?
        .output(&args.out_dir)
        .write(&manifest_path)?;
    let written = trace::export_matrices(&args.trace, &args.out_dir)?;
    eprintln!("wrote {} matrix files", written.len());
    Ok(())
}
