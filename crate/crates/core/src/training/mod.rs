//! Training loop.
//!
//! Each step draws a batch of target/reference pairs, simulates a random
//! number of clicks per target with the current weights (no gradient
//! through those rollouts), and then takes one Adam step on the
//! normalized focal loss of the final prediction. The reference branch is
//! part of the differentiated graph, so the shared backbone learns from
//! both branches.

mod augment;
mod loss;

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig};
pub use loss::{focal_loss_logits, normalized_focal_loss, target_tensor, EPS};
pub use crate::sampling::{reference_dropout, ReferenceDropout};

use crate::clicks::{assemble_extra_maps, Click, ExtraMaps, Polarity};
use crate::error::{Error, Result};
use crate::maskops::{BitMask, SoftMask};
use crate::model::{resize_image, ModelConfig, RefCut, PARAM_GROUPS};
use crate::prompt::{mask_weights, PromptVector, ReferencePrompts};
use crate::robot::{error_region, evaluate, first_click, next_click, EvalConfig, GuidanceMode};
use crate::sampling::{sample_training_pair, EvalSample, PartDataset, TrainingPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// The learning rate is divided by this factor from `decay_epoch` on.
    pub lr_decay_factor: f64,
    /// Zero-based epoch at which the decay applies.
    pub decay_epoch: usize,
    pub gamma: f64,
    pub dropout: ReferenceDropout,
    pub max_train_clicks: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Loss lines are written every `log_every` steps.
    pub log_every: usize,
    /// Held-out IoU&1 every `eval_every` epochs; 0 disables it.
    pub eval_every: usize,
    /// Held-out samples used for that check.
    pub eval_samples: usize,
    /// Checkpoint every `checkpoint_every` epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 20,
            steps_per_epoch: 500,
            batch_size: 8,
            base_lr: 3e-4,
            lr_decay_factor: 10.0,
            decay_epoch: 18,
            gamma: 2.0,
            dropout: ReferenceDropout::default(),
            max_train_clicks: 3,
            augment: AugmentConfig::default(),
            seed: 0,
            log_every: 10,
            eval_every: 1,
            eval_samples: 64,
            checkpoint_every: 5,
        }
    }
}

impl TrainConfig {
    /// Schedule of the original recipe (fine-tuning a pretrained ViT-B).
    pub fn full_scale() -> Self {
        Self {
            model: ModelConfig::vit_base(),
            epochs: 55,
            base_lr: 5e-6,
            decay_epoch: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.dropout.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be positive");
        }
        if self.decay_epoch > self.epochs {
            return bad("decay_epoch must not exceed epochs");
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay_factor >= 1.0) {
            return bad("base_lr must be positive and lr_decay_factor at least 1");
        }
        if self.gamma < 0.0 {
            return bad("gamma must be non-negative");
        }
        if self.max_train_clicks == 0 {
            return bad("max_train_clicks must be at least 1");
        }
        if !(self.augment.scale_min > 0.0 && self.augment.scale_min <= self.augment.scale_max) {
            return bad("augment scale range is invalid");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.base_lr / self.lr_decay_factor
        } else {
            self.base_lr
        }
    }
}

/// Draw `k ~ U{1..max_k}` clicks: the first at the target centre, the rest
/// answering `predict`'s intermediate outputs. Returns the clicks and the
/// prediction made before the last click (zeros for a single click). The
/// rollout stops early once a prediction is perfect.
pub fn simulate_training_clicks<R, F>(
    gt: &BitMask,
    mut predict: F,
    rng: &mut R,
    max_k: usize,
) -> Result<(Vec<Click>, SoftMask)>
where
    R: Rng + ?Sized,
    F: FnMut(&[Click], &SoftMask) -> Result<SoftMask>,
{
    let k = rng.gen_range(1..=max_k.max(1));
    let (h, w) = gt.dims();
    let mut prev = SoftMask::zeros(h, w)?;
    let mut clicks = vec![first_click(gt)?];
    while clicks.len() < k {
        let pred = predict(&clicks, &prev)?;
        if matches!(error_region(&pred, gt), Err(Error::EmptyMask)) {
            break;
        }
        let click = next_click(&pred, gt, &clicks)?;
        clicks.push(click);
        prev = pred;
    }
    Ok((clicks, prev))
}

/// A batch source for the trainer.
pub trait PairSource {
    fn next_pair(&mut self, rng: &mut ChaCha8Rng) -> Result<TrainingPair>;
}

/// Random pairs from a dataset, with reference dropout.
pub struct DatasetPairs<'a> {
    pub dataset: &'a PartDataset,
    pub dropout: ReferenceDropout,
}

impl PairSource for DatasetPairs<'_> {
    fn next_pair(&mut self, rng: &mut ChaCha8Rng) -> Result<TrainingPair> {
        sample_training_pair(self.dataset, rng, &self.dropout)
    }
}

/// A fixed list of pairs, cycled.
pub struct FixedPairs {
    pub pairs: Vec<TrainingPair>,
    pub next: usize,
}

impl PairSource for FixedPairs {
    fn next_pair(&mut self, _rng: &mut ChaCha8Rng) -> Result<TrainingPair> {
        if self.pairs.is_empty() {
            return Err(Error::Sampling("no training pairs".into()));
        }
        let p = self.pairs[self.next % self.pairs.len()].clone();
        self.next += 1;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_iou_at_1: Option<f64>,
}

pub struct TrainOutcome {
    pub model: RefCut,
    pub history: Vec<StepRecord>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Inputs of one optimisation step, with the differentiable prompts.
struct PreparedBatch {
    images: Vec<RgbImage>,
    extras: Vec<ExtraMaps>,
    gts: Vec<BitMask>,
    prompts: Option<(Tensor, Tensor)>,
}

pub struct Trainer {
    pub model: RefCut,
    pub config: TrainConfig,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let model = RefCut::new(config.model.clone(), config.seed, dtype)?;
        Self::from_model(model, config)
    }

    /// Continue training an existing model.
    pub fn from_model(model: RefCut, mut config: TrainConfig) -> Result<Self> {
        config.model = model.config().clone();
        config.validate()?;
        let optimizer = AdamW::new(
            model.varmap().all_vars(),
            ParamsAdamW {
                lr: config.lr_at(0),
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            config,
            optimizer,
            rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    fn prepare(&mut self, source: &mut dyn PairSource) -> Result<PreparedBatch> {
        let cfg = &self.config;
        let s = cfg.model.input_size;
        let p = cfg.model.patch_size;
        let mut batch = PreparedBatch {
            images: Vec::new(),
            extras: Vec::new(),
            gts: Vec::new(),
            prompts: None,
        };
        let mut pairs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let pair = source.next_pair(&mut self.rng)?;
            let (img, gt) = augment(&pair.image, &pair.gt, s, &cfg.augment, &mut self.rng)?;
            pairs.push((pair, img, gt));
        }
        let references: Vec<RgbImage> = pairs.iter().map(|(p, ..)| resize_image(&p.guidance.image, s)).collect();
        let (mut pos_w, mut neg_w) = (Vec::new(), Vec::new());
        for (pair, _, _) in &pairs {
            pos_w.extend(mask_weights(pair.guidance.mask(Polarity::Positive), s, p)?);
            neg_w.extend(mask_weights(pair.guidance.mask(Polarity::Negative), s, p)?);
        }
        let prompts = self.batch_prompts(&references, &pos_w, &neg_w)?;
        // Rollouts see the same prompts without a gradient path.
        let (p_pos, p_neg) = (prompts.0.detach(), prompts.1.detach());
        let model = &self.model;

        for (i, (_, img, gt)) in pairs.into_iter().enumerate() {
            let prompts = ReferencePrompts {
                positive: PromptVector {
                    polarity: Polarity::Positive,
                    values: p_pos.get(i)?,
                },
                negative: PromptVector {
                    polarity: Polarity::Negative,
                    values: p_neg.get(i)?,
                },
            };
            let (clicks, prev) = simulate_training_clicks(
                &gt,
                |clicks, prev| model.predict_with_prompts(&img, clicks, prev, Some(&prompts)),
                &mut self.rng,
                cfg.max_train_clicks,
            )?;
            batch.extras.push(assemble_extra_maps(&clicks, &prev, cfg.model.disk_radius)?);
            batch.images.push(img);
            batch.gts.push(gt);
        }
        batch.prompts = Some(prompts);
        Ok(batch)
    }

    /// Differentiable prompts for a batch of references and weight rows.
    fn batch_prompts(&self, references: &[RgbImage], pos: &[f64], neg: &[f64]) -> Result<(Tensor, Tensor)> {
        let m = &self.model;
        let b = references.len();
        let l = m.config().tokens();
        let refs: Vec<&RgbImage> = references.iter().collect();
        let tokens = m.reference_tokens(&m.image_tensor(&refs)?)?;
        let dtype = m.dtype();
        let wp = Tensor::from_slice(pos, (b, l), m.device())?.to_dtype(dtype)?;
        let wn = Tensor::from_slice(neg, (b, l), m.device())?.to_dtype(dtype)?;
        let gen = m.prompt_generator();
        Ok((
            gen.batch_prompts(&tokens, &wp, Polarity::Positive)?,
            gen.batch_prompts(&tokens, &wn, Polarity::Negative)?,
        ))
    }

    /// Loss tensor for a prepared batch.
    fn batch_loss(&self, batch: &PreparedBatch) -> Result<Tensor> {
        let m = &self.model;
        let (p_pos, p_neg) = batch.prompts.as_ref().expect("prepared batch has prompts");
        let images: Vec<&RgbImage> = batch.images.iter().collect();
        let extras: Vec<&ExtraMaps> = batch.extras.iter().collect();
        let logits = m.forward_logits(&m.image_tensor(&images)?, &m.extras_tensor(&extras)?, p_pos, p_neg)?;
        let gts: Vec<&BitMask> = batch.gts.iter().collect();
        focal_loss_logits(&logits, &target_tensor(&gts, m.dtype())?, self.config.gamma)
    }

    /// Forward and backward on one batch without updating the weights.
    pub fn loss_and_grads(&mut self, source: &mut dyn PairSource) -> Result<(f64, GradStore)> {
        let batch = self.prepare(source)?;
        let loss = self.batch_loss(&batch)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let grads = loss.backward()?;
        Ok((value, grads))
    }

    /// One optimisation step; returns the loss before the update.
    pub fn train_step(&mut self, source: &mut dyn PairSource) -> Result<f64> {
        let epoch = self.step / self.config.steps_per_epoch;
        self.optimizer.set_learning_rate(self.config.lr_at(epoch));
        let (loss, grads) = self.loss_and_grads(source)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, loss });
        }
        self.optimizer.step(&grads)?;
        Ok(loss)
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.learning_rate()
    }

    fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let meta = HashMap::from([
            ("refcut.train_step".to_string(), self.step.to_string()),
            ("refcut.train_epoch".to_string(), epoch.to_string()),
        ]);
        self.model.save_with_metadata(path, meta)
    }

    /// Run the configured schedule. With `out_dir`, writes `metrics.jsonl`,
    /// periodic `epoch_XXX.safetensors` and a final `model.safetensors`.
    pub fn run(
        mut self,
        source: &mut dyn PairSource,
        held_out: Option<&[EvalSample]>,
        out_dir: Option<&Path>,
    ) -> Result<TrainOutcome> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("train_config.json"), serde_json::to_vec_pretty(&self.config)?)?;
                Some(std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?))
            }
            None => None,
        };
        let mut history = Vec::new();
        let cfg = self.config.clone();
        for epoch in 0..cfg.epochs {
            for _ in 0..cfg.steps_per_epoch {
                let loss = match self.train_step(source) {
                    Ok(l) => l,
                    Err(e @ Error::NonFiniteLoss { .. }) => {
                        if let Some(dir) = out_dir {
                            self.save(&dir.join("diagnostic.safetensors"), epoch)?;
                        }
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                let record = StepRecord {
                    step: self.step,
                    epoch,
                    loss,
                    lr: self.learning_rate(),
                    eval_iou_at_1: None,
                };
                if self.step % cfg.log_every.max(1) == 0 || self.step == 1 {
                    tracing::info!(step = record.step, epoch, loss, lr = record.lr, "train");
                    if let Some(w) = log.as_mut() {
                        serde_json::to_writer(&mut *w, &record)?;
                        w.write_all(b"\n")?;
                        w.flush()?;
                    }
                }
                history.push(record);
            }
            let last_epoch = epoch + 1 == cfg.epochs;
            if let Some(samples) = held_out.filter(|s| !s.is_empty()) {
                if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last_epoch) {
                    let subset = &samples[..samples.len().min(cfg.eval_samples.max(1))];
                    let eval = EvalConfig {
                        max_clicks: 1,
                        mode: GuidanceMode::Both,
                        ..EvalConfig::default()
                    };
                    let report = evaluate(&self.model, subset, &eval)?;
                    self.model.clear_reference_cache();
                    tracing::info!(epoch, iou_at_1 = report.iou_at_1, "held-out");
                    let record = history.last_mut().expect("at least one step per epoch");
                    record.eval_iou_at_1 = Some(report.iou_at_1);
                    if let Some(w) = log.as_mut() {
                        serde_json::to_writer(&mut *w, &*record)?;
                        w.write_all(b"\n")?;
                        w.flush()?;
                    }
                }
            }
            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && !last_epoch {
                    self.save(&dir.join(format!("epoch_{:03}.safetensors", epoch + 1)), epoch)?;
                }
            }
        }
        let final_checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join("model.safetensors");
                self.save(&path, cfg.epochs)?;
                Some(path)
            }
            None => None,
        };
        Ok(TrainOutcome {
            model: self.model,
            history,
            final_checkpoint,
        })
    }
}

/// Train from scratch on `dataset`.
pub fn train(
    dataset: &PartDataset,
    config: TrainConfig,
    held_out: Option<&[EvalSample]>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut source = DatasetPairs {
        dataset,
        dropout: config.dropout,
    };
    Trainer::new(config, DType::F32)?.run(&mut source, held_out, out_dir)
}

/// L2 norm of the gradient in each parameter group.
pub fn group_grad_norms(model: &RefCut, grads: &GradStore) -> Result<Vec<(&'static str, f64)>> {
    let data = model.varmap().data().lock().expect("varmap lock");
    let mut out = Vec::new();
    for group in PARAM_GROUPS {
        let mut sq = 0.0;
        for (name, var) in data.iter() {
            if name.split('.').next() != Some(group) {
                continue;
            }
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        out.push((group, sq.sqrt()));
    }
    Ok(out)
}
