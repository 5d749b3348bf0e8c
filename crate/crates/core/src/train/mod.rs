//! Optimization loop: learning-rate schedule, Adam, deterministic batching,
//! recurrent-only gradient clipping and checkpointing.

mod adam;
mod checkpoint;

use std::fs;
use std::path::{Path, PathBuf};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, sidecar_path, Checkpoint,
    MAGIC, VERSION,
};

use crate::autodiff::{clip_by_global_norm, Tape, Var};
use crate::data::{sample_patch, Dataset};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::metrics::{multiscale_l2_loss, LossConfig};
use crate::model::{build_pyramid, is_recurrent_param, ModelWeights, Srn, SrnConfig};
use crate::tensor::Tensor;

pub const LATEST_CHECKPOINT: &str = "latest.srnw";
pub const FINAL_CHECKPOINT: &str = "final.srnw";

// Sub-stream ids of the run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 40;
const PATCH_STREAM: u64 = 2 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_end: f64,
    pub epochs: u64,
    pub power: f64,
    pub batch: usize,
    pub patch: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Full-scale recipe.
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_end: 1e-6,
            epochs: 2000,
            power: 0.3,
            batch: 16,
            patch: 256,
            clip_norm: 3.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// CPU-sized overrides: batch 4, 64×64 patches, 200 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 200,
            batch: 4,
            patch: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::Config(r));
        if !(self.lr_end > 0.0 && self.lr_end < self.lr0) {
            return bad(format!(
                "need 0 < lr_end < lr0, got lr0 = {}, lr_end = {}",
                self.lr0, self.lr_end
            ));
        }
        if self.power.is_nan() || self.power <= 0.0 {
            return bad(format!("power must be positive, got {}", self.power));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        if self.batch == 0 || self.patch == 0 || self.epochs == 0 {
            return bad("batch, patch and epochs must be positive".into());
        }
        Ok(())
    }
}

/// Polynomial decay `(lr0 − lr_end)(1 − t/T)^power + lr_end`, held at
/// `lr_end` from `t = T` on.
pub fn lr_at(step: u64, total: u64, cfg: &TrainConfig) -> f64 {
    if total == 0 || step >= total {
        return cfg.lr_end;
    }
    let remaining = 1.0 - step as f64 / total as f64;
    (cfg.lr0 - cfg.lr_end) * remaining.powf(cfg.power) + cfg.lr_end
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Steps completed after this one.
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Recurrent-parameter gradient norm before clipping.
    pub recurrent_norm: f64,
}

pub struct Trainer {
    srn: Srn,
    cfg: TrainConfig,
    weights: ModelWeights<f32>,
    adam: AdamState<f32>,
    step: u64,
}

impl Trainer {
    /// Fresh Xavier-initialized model seeded from `cfg.seed`.
    pub fn new(model: SrnConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let srn = Srn::new(model)?;
        let weights = srn.init_weights(&mut Rng::stream(cfg.seed, INIT_STREAM));
        let adam = AdamState::fresh(&weights);
        Ok(Self {
            srn,
            cfg,
            weights,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let srn = Srn::new(ckpt.model)?;
        srn.check_weights(&ckpt.weights)?;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::fresh(&ckpt.weights));
        Ok(Self {
            srn,
            cfg: ckpt.train,
            weights: ckpt.weights,
            adam,
            step: ckpt.step,
        })
    }

    pub fn srn(&self) -> &Srn {
        &self.srn
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &ModelWeights<f32> {
        &self.weights
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self, n_pairs: usize) -> u64 {
        n_pairs.div_ceil(self.cfg.batch) as u64
    }

    pub fn total_steps(&self, n_pairs: usize) -> u64 {
        self.cfg.epochs * self.steps_per_epoch(n_pairs)
    }

    /// Pair indices of the batch at `step`: a per-epoch permutation cut into
    /// consecutive slices, the last one possibly short.
    pub fn batch_indices(&self, step: u64, n_pairs: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n_pairs).max(1);
        let (epoch, slot) = (step / spe, (step % spe) as usize);
        let mut order: Vec<usize> = (0..n_pairs).collect();
        Rng::stream(self.cfg.seed, SHUFFLE_STREAM + epoch).shuffle(&mut order);
        let start = slot * self.cfg.batch;
        order[start..(start + self.cfg.batch).min(n_pairs)].to_vec()
    }

    /// Stacked blurry and sharp patches for `step`.
    pub fn batch(&self, data: &Dataset, step: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if data.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let mut rng = Rng::stream(self.cfg.seed, PATCH_STREAM + step);
        let mut blurry = Vec::new();
        let mut sharp = Vec::new();
        for i in self.batch_indices(step, data.len()) {
            let p = sample_patch(&data.pairs()[i], self.cfg.patch, &mut rng)?;
            blurry.push(p.blurry);
            sharp.push(p.sharp);
        }
        Ok((Tensor::stack(&blurry)?, Tensor::stack(&sharp)?))
    }

    fn loss_graph(
        &self,
        tape: &Tape<f32>,
        blurry: &Tensor<f32>,
        sharp: &Tensor<f32>,
    ) -> Result<Var<f32>> {
        let n = self.srn.config().n_scales;
        let params = self.weights.bind(tape);
        let inputs: Vec<_> = build_pyramid(blurry, n)?
            .levels
            .into_iter()
            .map(|l| tape.constant(l))
            .collect();
        let targets: Vec<_> = build_pyramid(sharp, n)?
            .levels
            .into_iter()
            .map(|l| tape.constant(l))
            .collect();
        let outputs = self.srn.forward(tape, &params, &inputs)?;
        multiscale_l2_loss(tape, &outputs, &targets, &LossConfig::uniform(n))
    }

    /// Multi-scale loss of the current weights, without gradients.
    pub fn loss(&self, blurry: &Tensor<f32>, sharp: &Tensor<f32>) -> Result<f64> {
        let tape = Tape::no_grad();
        Ok(f64::from(
            self.loss_graph(&tape, blurry, sharp)?.value().data()[0],
        ))
    }

    /// One optimization step on an explicit batch.
    pub fn step_on(
        &mut self,
        blurry: &Tensor<f32>,
        sharp: &Tensor<f32>,
        total_steps: u64,
    ) -> Result<StepReport> {
        let tape = Tape::new();
        let loss_var = self.loss_graph(&tape, blurry, sharp)?;
        let loss = f64::from(loss_var.value().data()[0]);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step + 1)));
        }
        let grads = tape.backward(&loss_var)?.into_params();
        let (grads, recurrent_norm) =
            clip_by_global_norm(&grads, self.cfg.clip_norm, is_recurrent_param);
        let lr = lr_at(self.step, total_steps, &self.cfg);
        adam_step(&mut self.weights, &grads, &mut self.adam, lr)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss,
            lr,
            recurrent_norm,
        })
    }

    /// Next scheduled step on `data`.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepReport> {
        let (blurry, sharp) = self.batch(data, self.step)?;
        let total = self.total_steps(data.len());
        self.step_on(&blurry, &sharp, total)
    }

    pub fn is_finished(&self, n_pairs: usize) -> bool {
        self.step >= self.total_steps(n_pairs)
    }

    pub fn checkpoint(&self, n_pairs: usize) -> Checkpoint {
        Checkpoint {
            model: *self.srn.config(),
            train: self.cfg.clone(),
            step: self.step,
            epoch: self.step / self.steps_per_epoch(n_pairs).max(1),
            weights: self.weights.clone(),
            adam: Some(self.adam.clone()),
        }
    }
}

/// Runs `trainer` to the end of its schedule. With `out_dir`, the latest
/// state is saved after every epoch and the final state at the end; a failed
/// step leaves the last epoch checkpoint in place.
pub fn run_training(
    trainer: &mut Trainer,
    data: &Dataset,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spe = trainer.steps_per_epoch(data.len());
    while !trainer.is_finished(data.len()) {
        let report = trainer.train_step(data)?;
        on_step(&report);
        if let Some(dir) = out_dir {
            if report.step % spe == 0 {
                save_checkpoint(&trainer.checkpoint(data.len()), dir.join(LATEST_CHECKPOINT))?;
            }
        }
    }
    let ckpt = trainer.checkpoint(data.len());
    if let Some(dir) = out_dir {
        save_checkpoint(&ckpt, dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(ckpt)
}

/// Trains a fresh model from `config` and returns the final checkpoint.
pub fn train(
    config: &TrainConfig,
    model: &SrnConfig,
    data: &Dataset,
    out_dir: Option<PathBuf>,
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(*model, config.clone())?;
    run_training(&mut trainer, data, out_dir.as_deref(), |_| {})
}
