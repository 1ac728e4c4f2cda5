//! Objectives, schedules, optimisers, checkpoints and the training loop.

mod checkpoint;
mod config;
mod data;
mod loss;
mod optim;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{detokenize, load_dataset, image_root, Split, Vocabulary};
use crate::decoder::SearchStrategy;
use crate::encoder::read_features;
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, PosLexicon};
use crate::model::{LossTerms, Model, Targets};
use crate::nn::Params;
use crate::synthetic::sample_seed;
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use config::{apply_overrides, set_key, TrainConfig};
pub use data::{prepare, PairData, Prepared};
pub use loss::{
    alpha_schedule, baseline_loss, combined_loss, lr_schedule, regularizers, AlphaMode, BranchTerms, LossConfig,
    LrSchedule,
};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerState};

/// Samples per gradient shard. Shards are summed in a fixed order, so the
/// result does not depend on the number of worker threads.
const SHARD: usize = 8;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub alpha: f64,
    pub l_cap: f64,
    pub l_sgr: Option<f64>,
    pub l1: f64,
    pub total: f64,
    pub dev_bleu4: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} step={} lr={:e} alpha={} l_cap={:.8} l_sgr={} l1={:.8} total={:.8} dev_bleu4={:.8}",
            self.epoch,
            self.step,
            self.lr,
            self.alpha,
            self.l_cap,
            self.l_sgr.map_or("-".to_string(), |v| format!("{v:.8}")),
            self.l1,
            self.total,
            self.dev_bleu4
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub best_dev_bleu4: f64,
    pub log: Vec<EpochLog>,
}

/// Generated caption ids for every sample, in input order.
pub fn generate_all(model: &Model, data: &[Prepared], strategy: SearchStrategy) -> Result<Vec<Vec<u32>>> {
    data.par_iter()
        .map(|p| p.with_input(|input| model.caption(input, strategy)))
        .collect()
}

/// Fraction of samples whose generated ids equal the reference ids exactly.
pub fn exact_match(model: &Model, data: &[Prepared], strategy: SearchStrategy) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let gen = generate_all(model, data, strategy)?;
    let hits = gen.iter().zip(data).filter(|(g, p)| g.as_slice() == p.caption_body()).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Corpus BLEU-4 of generated captions against the references.
pub fn dev_bleu4(model: &Model, vocab: &Vocabulary, data: &[Prepared], strategy: SearchStrategy) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hyps: Vec<Vec<String>> = generate_all(model, data, strategy)?
        .iter()
        .map(|g| detokenize(g, vocab))
        .collect();
    let refs: Vec<Vec<Vec<String>>> = data.iter().map(|p| vec![p.reference.clone()]).collect();
    Ok(corpus_bleu(&hyps, &refs, 4)[3])
}

fn shard_grad(model: &Model, zero: &Model, shard: &[&Prepared], cfg: &LossConfig, alpha: Option<f64>) -> Result<(Model, Vec<LossTerms>)> {
    let mut g = zero.clone();
    let mut terms = Vec::with_capacity(shard.len());
    for p in shard {
        let t = p.with_input(|input| {
            model.loss(
                input,
                Targets {
                    caption: &p.caption,
                    scene_graph: Some(&p.scene_graph),
                },
                cfg,
                alpha,
                Some(&mut g),
            )
        })?;
        terms.push(t);
    }
    Ok((g, terms))
}

/// Mean losses of one epoch's batches.
#[derive(Default)]
struct Running {
    n: usize,
    cap: f64,
    sgr: f64,
    l1: f64,
    total: f64,
}

/// Trains on prepared samples. With `out` set, writes the config echo, the
/// log, per-epoch checkpoints and `best.ckpt` / `last.ckpt`.
pub fn train_prepared(
    train: &[Prepared],
    dev: &[Prepared],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = Model::new(cfg.model.clone(), vocab.len(), cfg.seed)?;
    let params: Vec<&Tensor> = model.params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Optimizer::new(cfg.optimizer, &params);
    let zero = model.zeros_like();
    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), cfg.to_toml())?;
            Some(fs::File::create(dir.join("train_log.txt"))?)
        }
        None => None,
    };
    let dev = if cfg.dev_limit > 0 && dev.len() > cfg.dev_limit {
        &dev[..cfg.dev_limit]
    } else {
        dev
    };
    let alpha_used = cfg.loss.alpha_mode.uses_scene_graph();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let alpha = alpha_schedule(epoch, &cfg.loss.alpha_mode);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed ^ 0x5348_5546_464c_45, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut run = Running::default();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Prepared> = batch.iter().map(|&i| &train[i]).collect();
            let shards: Vec<(Model, Vec<LossTerms>)> = samples
                .par_chunks(SHARD)
                .map(|s| shard_grad(&model, &zero, s, &cfg.loss, alpha_used.then_some(alpha)))
                .collect::<Result<_>>()?;
            let mut grad = zero.clone();
            let mut terms = Vec::with_capacity(batch.len());
            for (g, t) in shards {
                for (acc, x) in grad.params_mut().into_iter().zip(g.params()) {
                    acc.add_assign(x.1);
                }
                terms.extend(t);
            }
            if let Some((i, t)) = terms.iter().enumerate().find(|(_, t)| !t.total.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    detail: format!("sample {} gave {:?}", samples[i].id, t),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for t in grad.params_mut() {
                t.scale(scale);
            }
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(grad.params_mut(), cfg.grad_clip);
            }
            let grads: Vec<&Tensor> = grad.params().into_iter().map(|(_, t)| t).collect();
            opt.step(model.params_mut(), &grads, lr);
            step += 1;
            for t in &terms {
                run.n += 1;
                run.cap += t.cap;
                run.sgr += t.sgr.unwrap_or(0.0);
                run.l1 += t.l1;
                run.total += t.total;
            }
        }
        let bleu = dev_bleu4(&model, vocab, dev, cfg.search)?;
        let n = run.n.max(1) as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            step,
            lr,
            alpha,
            l_cap: run.cap / n,
            l_sgr: alpha_used.then_some(run.sgr / n),
            l1: run.l1 / n,
            total: run.total / n,
            dev_bleu4: bleu,
        };
        on_epoch(&entry);
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{entry}")?;
        }
        log.push(entry);
        let ck = Checkpoint {
            config: cfg.clone(),
            vocab: vocab.clone(),
            epoch: epoch + 1,
            step,
            dev_bleu4: bleu,
            model: model.clone(),
            optimizer: Some(opt.clone()),
        };
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                ck.save(&dir.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
            }
        }
        if best.as_ref().is_none_or(|(_, b, _)| bleu > *b) {
            if let Some(dir) = out {
                ck.save(&dir.join("best.ckpt"))?;
            }
            best = Some((epoch + 1, bleu, ck.clone()));
        }
        last = Some(ck);
    }
    let last = last.expect("at least one epoch");
    if let Some(dir) = out {
        last.save(&dir.join("last.ckpt"))?;
    }
    let (best_epoch, best_dev_bleu4, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        last,
        best_epoch,
        best_dev_bleu4,
        log,
    })
}

/// Training vocabulary of a dataset directory, with gold tags from its
/// `lexicon.tsv` when present.
pub fn dataset_vocabulary(dataset: &Path, min_count: usize) -> Result<Vocabulary> {
    let train = load_dataset(dataset, Split::Train)?;
    let mut vocab = Vocabulary::build(&train, min_count)?;
    let lex = dataset.join("lexicon.tsv");
    if lex.is_file() {
        vocab.set_pos_tags(PosLexicon::read(&lex)?.map());
    }
    Ok(vocab)
}

/// Loads and prepares one split of a dataset directory for `cfg`.
pub fn load_prepared(dataset: &Path, split: Split, vocab: &Vocabulary, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    let samples = load_dataset(dataset, split)?;
    let features = if cfg.features.is_empty() {
        None
    } else {
        Some(read_features(&resolve(dataset, &cfg.features))?)
    };
    prepare(
        &samples,
        &image_root(dataset, split),
        features.as_ref(),
        vocab,
        cfg.model.max_caption_len,
        cfg.loss.sg_mode,
        cfg.model.max_triplets,
    )
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Full pipeline on a dataset directory: vocabulary, preparation, training.
pub fn train(dataset: &Path, cfg: &TrainConfig, out: &Path, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = dataset_vocabulary(dataset, cfg.min_count)?;
    let mut train = load_prepared(dataset, Split::Train, &vocab, cfg)?;
    if cfg.train_limit > 0 {
        train.truncate(cfg.train_limit);
    }
    let dev = load_prepared(dataset, Split::Dev, &vocab, cfg)?;
    fs::create_dir_all(out)?;
    vocab.write(&out.join("vocab.txt"))?;
    train_prepared(&train, &dev, &vocab, cfg, Some(out), on_epoch)
}
