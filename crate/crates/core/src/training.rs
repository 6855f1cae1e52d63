//! Vocabulary preparation, NLL objective, Adam optimization with dropout and
//! early stopping, checkpointing, and a finite-difference gradient checker.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{retrieve, InvertedIndex};
use crate::model::graph::{backward_example, example_hits, example_loss, forward_example};
use crate::model::{ModelDims, ModelParameters};
use crate::ppdb::ParaphraseDictionary;
use crate::vocab::{Vocabulary, PAD};

/// Gradients are clipped to this global L2 norm before every update.
pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_attn: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub m: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub min_count: usize,
    /// Force the dictionary context to zero (ablation switch).
    pub ablate_dictionary: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            d_emb: 300,
            d_hidden: 512,
            d_attn: 512,
            dropout: 0.5,
            batch_size: 64,
            learning_rate: 0.001,
            m: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            min_count: 10,
            ablate_dictionary: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.m == 0 {
            return Err(Error::Config("batch_size, max_epochs, and m must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "d_emb" => self.d_emb = parse(key, value)?,
            "d_hidden" => self.d_hidden = parse(key, value)?,
            "d_attn" => self.d_attn = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "ablate_dictionary" => self.ablate_dictionary = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn model_dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            d_emb: self.d_emb,
            d_hidden: self.d_hidden,
            d_attn: self.d_attn,
            m: self.m,
        }
    }
}

/// One prepared training instance: token ids plus the precomputed retrieval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    pub src: Vec<usize>,
    /// Target surface ids, without BOS/EOS.
    pub tgt: Vec<usize>,
    /// Retrieved dictionary pairs as token ids, at most M of them.
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Resolve token pairs into ids and precompute retrieval for each source.
/// Retrieval depends only on the source sentence and the static dictionary,
/// so it runs once here rather than per epoch.
pub fn prepare_examples(
    pairs: &[(Vec<String>, Vec<String>)],
    vocab: &Vocabulary,
    index: &InvertedIndex,
    dict: &ParaphraseDictionary,
    m: usize,
) -> Vec<TrainingExample> {
    pairs
        .iter()
        .map(|(src_tokens, tgt_tokens)| {
            let ret = retrieve(index, dict, src_tokens, m);
            let pair_ids = ret
                .pairs
                .iter()
                .map(|p| (vocab.ids(&p.entry.source_tokens), vocab.ids(&p.entry.target_tokens)))
                .collect();
            TrainingExample {
                src: vocab.ids(src_tokens),
                tgt: vocab.ids(tgt_tokens),
                pairs: pair_ids,
            }
        })
        .collect()
}

/// Mean over the batch of per-sequence summed negative log-likelihood.
/// Positions whose target is PAD are skipped.
pub fn nll_loss(step_distributions: &[Vec<Array1<f64>>], targets: &[Vec<usize>]) -> f64 {
    assert_eq!(step_distributions.len(), targets.len());
    let mut total = 0.0;
    for (dists, tgt) in step_distributions.iter().zip(targets) {
        for (dist, &t) in dists.iter().zip(tgt) {
            if t == PAD {
                continue;
            }
            total -= dist[t].max(f64::MIN_POSITIVE).ln();
        }
    }
    total / step_distributions.len() as f64
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct Adam {
    m: ModelParameters,
    v: ModelParameters,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParameters, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut p_tensors = params.tensors_mut();
        let mut m_tensors = self.m.tensors_mut();
        let mut v_tensors = self.v.tensors_mut();
        let g_tensors = grads.tensors();
        for i in 0..p_tensors.len() {
            let p = &mut p_tensors[i].1;
            let g = &g_tensors[i].1;
            let m = &mut m_tensors[i].1;
            let v = &mut v_tensors[i].1;
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale gradients down to the given global L2 norm when they exceed it.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelParameters, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for (_, slice) in grads.tensors_mut() {
            for x in slice {
                *x *= factor;
            }
        }
    }
    norm
}

fn zero_params(params: &mut ModelParameters) {
    for (_, slice) in params.tensors_mut() {
        slice.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub token_accuracy: f64,
    pub wall_time: f64,
}

pub struct TrainOutcome {
    pub best_params: ModelParameters,
    pub best_valid_loss: f64,
    pub best_epoch: usize,
    pub metrics: Vec<MetricsRecord>,
    pub stopped_early: bool,
}

/// Mean per-example loss and token accuracy without dropout.
pub fn evaluate_split(
    params: &ModelParameters,
    examples: &[TrainingExample],
    ablate: bool,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss = 0.0;
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let cache = forward_example(params, &ex.src, &ex.tgt, &ex.pairs, 0.0, &mut rng, ablate)?;
        loss += example_loss(&cache);
        let (h, t) = example_hits(&cache);
        hits += h;
        total += t;
    }
    Ok((loss / examples.len() as f64, hits as f64 / total.max(1) as f64))
}

/// Optimize with mini-batched Adam. Keeps the parameters with the best
/// validation loss and stops after `patience` epochs without improvement.
pub fn train(
    cfg: &TrainingConfig,
    mut params: ModelParameters,
    train_set: &[TrainingExample],
    valid_set: &[TrainingExample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_params = params.clone();
    let mut best_valid_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut patience_left = cfg.patience;
    let mut metrics = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut hits = 0usize;
        let mut total = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            zero_params(&mut grads);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let ex = &train_set[idx];
                let cache = forward_example(
                    &params,
                    &ex.src,
                    &ex.tgt,
                    &ex.pairs,
                    cfg.dropout,
                    &mut rng,
                    cfg.ablate_dictionary,
                )?;
                batch_loss += example_loss(&cache);
                let (h, t) = example_hits(&cache);
                hits += h;
                total += t;
                backward_example(&params, &cache, scale, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, batch ids {:?}, parameter norm {:.4}",
                    batch,
                    params.global_norm()
                )));
            }
            epoch_loss += batch_loss;
            clip_global_norm(&mut grads, GRAD_CLIP_NORM);
            adam.step(&mut params, &grads, cfg.learning_rate);
        }
        let train_time = start.elapsed().as_secs_f64();
        metrics.push(MetricsRecord {
            epoch,
            split: "train".into(),
            loss: epoch_loss / train_set.len() as f64,
            token_accuracy: hits as f64 / total.max(1) as f64,
            wall_time: train_time,
        });

        let vstart = Instant::now();
        let (valid_loss, valid_acc) = evaluate_split(&params, valid_set, cfg.ablate_dictionary)?;
        metrics.push(MetricsRecord {
            epoch,
            split: "valid".into(),
            loss: valid_loss,
            token_accuracy: valid_acc,
            wall_time: vstart.elapsed().as_secs_f64(),
        });

        if valid_loss < best_valid_loss {
            best_valid_loss = valid_loss;
            best_epoch = epoch;
            best_params = params.clone();
            patience_left = cfg.patience;
        } else if patience_left > 0 {
            patience_left -= 1;
            if patience_left == 0 {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best_params,
        best_valid_loss,
        best_epoch,
        metrics,
        stopped_early,
    })
}

/// Write metrics as JSON lines, one record per line.
pub fn write_metrics(metrics: &[MetricsRecord], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = BufWriter::new(File::create(path)?);
    for rec in metrics {
        writeln!(out, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut ckpt: Checkpoint = serde_json::from_reader(reader)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.vocab.rebuild_lookup();
        ckpt.params.validate()?;
        if ckpt.vocab.len() != ckpt.params.dims.vocab {
            return Err(Error::Snapshot(
                "checkpoint vocabulary size does not match embedding table".into(),
            ));
        }
        Ok(ckpt)
    }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    /// Max relative error over elements where either gradient is ≥ 1e-5.
    pub max_rel: f64,
    /// Max absolute error over elements where both gradients are < 1e-5.
    pub max_abs_small: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel).fold(0.0, f64::max)
    }

    pub fn max_abs_small(&self) -> f64 {
        self.groups.iter().map(|g| g.max_abs_small).fold(0.0, f64::max)
    }
}

fn batch_loss(params: &ModelParameters, batch: &[TrainingExample]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for ex in batch {
        let cache = forward_example(params, &ex.src, &ex.tgt, &ex.pairs, 0.0, &mut rng, false)?;
        total += example_loss(&cache);
    }
    Ok(total / batch.len() as f64)
}

/// Compare analytic gradients against central finite differences for every
/// parameter tensor. Runs without dropout in both paths.
pub fn gradient_check(
    params: &mut ModelParameters,
    batch: &[TrainingExample],
    eps: f64,
) -> Result<GradCheckReport> {
    gradient_check_tampered(params, batch, eps, |_| {})
}

/// Gradient check with a hook that may corrupt the analytic gradients before
/// comparison; the harness must then report large errors. Used to verify the
/// checker itself catches broken backward paths.
pub(crate) fn gradient_check_tampered(
    params: &mut ModelParameters,
    batch: &[TrainingExample],
    eps: f64,
    tamper: impl FnOnce(&mut ModelParameters),
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut analytic = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let cache = forward_example(params, &ex.src, &ex.tgt, &ex.pairs, 0.0, &mut rng, false)?;
        backward_example(params, &cache, scale, &mut analytic);
    }
    tamper(&mut analytic);

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut groups = Vec::with_capacity(names.len());
    for (tensor_idx, name) in names.iter().enumerate() {
        let len = params.tensors()[tensor_idx].1.len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs_small: f64 = 0.0;
        for k in 0..len {
            let orig = params.tensors_mut()[tensor_idx].1[k];
            params.tensors_mut()[tensor_idx].1[k] = orig + eps;
            let up = batch_loss(params, batch)?;
            params.tensors_mut()[tensor_idx].1[k] = orig - eps;
            let down = batch_loss(params, batch)?;
            params.tensors_mut()[tensor_idx].1[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensors()[tensor_idx].1[k];
            let denom = a.abs().max(numeric.abs());
            let diff = (a - numeric).abs();
            if denom < 1e-5 {
                max_abs_small = max_abs_small.max(diff);
            } else {
                max_rel = max_rel.max(diff / denom);
            }
        }
        groups.push(GroupReport {
            name: name.clone(),
            max_rel,
            max_abs_small,
        });
    }
    Ok(GradCheckReport { groups })
}
