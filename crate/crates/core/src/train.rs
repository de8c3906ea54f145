//! SGD with momentum and coupled weight decay, the warmup + step-decay
//! learning-rate schedule, the epoch loop, and top-1 evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{AugmentationPolicy, Dataset};
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::nn::{Ctx, Mode};
use crate::tensor::{Element, Tensor};
use crate::zoo::Model;

/// Evaluation batch size. Fixed so that a stored model always scores the
/// same, whoever evaluates it.
pub const EVAL_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Extend weight decay to batch-norm scale and shift.
    pub decay_bn: bool,
    pub seed: u64,
    pub augmentation: AugmentationPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 10,
            base_lr: 0.1,
            warmup_epochs: 10,
            decay_epochs: vec![20, 40, 70],
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 9e-5,
            decay_bn: false,
            seed: 0,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

const KEYS: [&str; 15] = [
    "epochs",
    "batch_size",
    "base_lr",
    "warmup_epochs",
    "decay_epochs",
    "decay_factor",
    "momentum",
    "weight_decay",
    "decay_bn",
    "seed",
    "crop_padding",
    "flip_probability",
    "normalize_mean",
    "normalize_std",
    "augment",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        let rates = [self.base_lr, self.decay_factor];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("base_lr and decay_factor must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(
                "momentum must lie in [0, 1) and weight_decay be non-negative",
            ));
        }
        if let Some(&first) = self.decay_epochs.iter().min() {
            if self.warmup_epochs >= first {
                return Err(Error::config(format!(
                    "warmup ({} epochs) must end before the first decay epoch {first}",
                    self.warmup_epochs
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.augmentation.flip_probability) {
            return Err(Error::config("flip_probability must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Starts from the defaults; every key is optional.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let mut c = TrainConfig::default();
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = kv.get(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        set!(epochs);
        set!(batch_size);
        set!(base_lr);
        set!(warmup_epochs);
        set!(decay_factor);
        set!(momentum);
        set!(weight_decay);
        set!(decay_bn);
        set!(seed);
        if let Some(v) = kv.get_list("decay_epochs")? {
            c.decay_epochs = v;
        }
        if let Some(v) = kv.get("crop_padding")? {
            c.augmentation.crop_padding = v;
        }
        if let Some(v) = kv.get("flip_probability")? {
            c.augmentation.flip_probability = v;
        }
        if let Some(v) = kv.get_list("normalize_mean")? {
            c.augmentation.mean = v;
        }
        if let Some(v) = kv.get_list("normalize_std")? {
            c.augmentation.std = v;
        }
        if kv.get::<bool>("augment")? == Some(false) {
            c.augmentation.crop_padding = 0;
            c.augmentation.flip_probability = 0.0;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text, "train config")?)
    }

    pub fn to_kv(&self) -> String {
        let a = &self.augmentation;
        let mut pairs = vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("decay_epochs", kv::join(&self.decay_epochs)),
            ("decay_factor", self.decay_factor.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("decay_bn", self.decay_bn.to_string()),
            ("seed", self.seed.to_string()),
            ("crop_padding", a.crop_padding.to_string()),
            ("flip_probability", a.flip_probability.to_string()),
        ];
        if !a.mean.is_empty() {
            pairs.push(("normalize_mean", kv::join(&a.mean)));
        }
        if !a.std.is_empty() {
            pairs.push(("normalize_std", kv::join(&a.std)));
        }
        kv::render(&pairs)
    }
}

/// Learning rate of `epoch` (0-based): linear warmup to `base_lr`, then a
/// factor `decay_factor` for each decay epoch already reached.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::contract(format!("epoch {epoch} outside [0, {})", config.epochs)));
    }
    if epoch < config.warmup_epochs {
        return Ok(config.base_lr * (epoch + 1) as f64 / config.warmup_epochs as f64);
    }
    let cuts = config.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(config.base_lr * config.decay_factor.powi(cuts as i32))
}

/// `g' = g + wd·p; v ← m·v + g'; p ← p − lr·v`, in place.
pub fn sgd_momentum_step<T: Element>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::contract(format!(
            "sgd shapes differ: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        let g = g + wd * *p;
        *v = m * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub seconds: f64,
    /// Optimizer steps taken in this epoch.
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_top1,val_top1,seconds";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.epoch, r.lr, r.train_loss, r.train_top1, r.val_top1, r.seconds
            );
        }
        out
    }

    /// Rows as written by [`TrainHistory::to_csv`]; `steps` is not stored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::format("history", "missing CSV header"));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::format("history", format!("row {}: malformed `{line}`", n + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(TrainRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                train_top1: num(f[3])?,
                val_top1: num(f[4])?,
                seconds: num(f[5])?,
                steps: 0,
            });
        }
        Ok(TrainHistory { records })
    }
}

/// Minibatch index lists for one epoch: a seeded shuffle cut into
/// `batch_size` chunks. A trailing single sample joins the previous batch,
/// since batch statistics need at least two.
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("checked above");
        batches.last_mut().expect("checked above").extend(tail);
    }
    batches
}

fn argmax_hits<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count()
}

/// Fraction of samples whose arg-max logit (lowest index on ties) is the
/// label, in eval mode with fixed-size batches.
pub fn evaluate<T: Element>(model: &mut Model<T>, data: &Dataset, policy: &AugmentationPolicy) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("evaluate on an empty dataset"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for chunk in order.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch::<T>(chunk, policy, None)?;
        let logits = model.logits(&x, Mode::Eval)?;
        hits += argmax_hits(&logits, &labels);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Everything needed to continue training: weights, running statistics,
/// momentum buffers, and the position in the schedule.
#[derive(Debug, Clone)]
pub struct Trainer<T: Element> {
    pub model: Model<T>,
    pub config: TrainConfig,
    /// One buffer per store parameter, in store order.
    pub velocity: Vec<Tensor<T>>,
    pub next_epoch: usize,
    pub history: TrainHistory,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let velocity = model
            .store
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Ok(Trainer {
            model,
            config,
            velocity,
            next_epoch: 0,
            history: TrainHistory::default(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// One optimizer step on a batch; returns the mean loss and hit count.
    /// A non-finite loss is returned without touching the parameters.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize], lr: f64) -> Result<(f64, usize)> {
        let (loss, hits, grads) = {
            let mut ctx = Ctx::new(&mut self.model.store, Mode::Train);
            let xv = ctx.input(x.clone());
            let logits = self.model.net.forward(&mut ctx, xv)?;
            let hits = argmax_hits(ctx.graph.value(logits), labels);
            let loss = ctx.graph.cross_entropy(logits, labels)?;
            let value = ctx.graph.value(loss).item()?.f64();
            if !value.is_finite() {
                return Ok((value, hits));
            }
            (value, hits, ctx.backward(loss)?)
        };
        let (m, wd, decay_bn) = (self.config.momentum, self.config.weight_decay, self.config.decay_bn);
        for (id, g) in grads {
            let p = self.model.store.param_mut(id);
            let decay = if p.kind.decays(decay_bn) { wd } else { 0.0 };
            sgd_momentum_step(&mut p.value, &g, &mut self.velocity[id.0], lr, m, decay)?;
        }
        Ok((loss, hits))
    }

    /// Runs the next epoch and appends its record.
    pub fn run_epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<TrainRecord> {
        let epoch = self.next_epoch;
        let lr = lr_schedule(&self.config, epoch)?;
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let batches = epoch_batches(train.len(), self.config.batch_size, &mut rng);
        let policy = &self.config.augmentation.clone();
        let augment = !policy.is_identity();
        let (mut loss_sum, mut hits, mut steps) = (0.0, 0usize, 0usize);
        for (i, idx) in batches.iter().enumerate() {
            let (x, labels) = if augment {
                train.batch::<T>(idx, policy, Some(&mut rng))?
            } else {
                train.batch::<T>(idx, policy, None)?
            };
            let diverged = |loss| Error::Diverged { epoch, step: i, loss };
            let (loss, h) = self.step(&x, &labels, lr).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(f64::NAN),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            loss_sum += loss * idx.len() as f64;
            hits += h;
            steps += 1;
        }
        let eval_policy = AugmentationPolicy {
            crop_padding: 0,
            flip_probability: 0.0,
            ..policy.clone()
        };
        let val_top1 = evaluate(&mut self.model, val.unwrap_or(train), &eval_policy)?;
        let record = TrainRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: hits as f64 / train.len() as f64,
            val_top1,
            seconds: start.elapsed().as_secs_f64(),
            steps,
        };
        self.history.records.push(record.clone());
        self.next_epoch += 1;
        Ok(record)
    }

    /// Trains through the remaining epochs. With `out_dir`, rewrites
    /// `history.csv` and writes `epoch_NNNN.ckpt` after every epoch.
    pub fn run(&mut self, train: &Dataset, val: Option<&Dataset>, out_dir: Option<&Path>) -> Result<&TrainHistory> {
        if train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        while !self.is_done() {
            let rec = self.run_epoch(train, val)?;
            log::info!(
                "epoch {} lr {} loss {:.4} train {:.4} val {:.4}",
                rec.epoch,
                rec.lr,
                rec.train_loss,
                rec.train_top1,
                rec.val_top1
            );
            if let Some(dir) = out_dir {
                std::fs::write(dir.join("history.csv"), self.history.to_csv())?;
                checkpoint::save(&dir.join(checkpoint_name(rec.epoch)), self)?;
            }
        }
        Ok(&self.history)
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Trains a fresh optimizer state over all of `config.epochs`.
pub fn train<T: Element>(
    model: Model<T>,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Trainer<T>> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(train_data, val_data, out_dir)?;
    Ok(trainer)
}
