//! Weakly supervised training: per-batch total loss is the mean video-level
//! binary cross-entropy plus `lambda` times the mean contrastive loss over
//! the batch's projected feature sequences, optimized with Adam under a
//! step-decay schedule. Everything is bit-deterministic given (dataset,
//! config, seed).

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{mtsc_expr, nt_xent_expr, weighted_nt_xent_expr, LossConfig};
use crate::model::{
    forward_expr, init_model, param_layout, BoundForward, ModelDims, ModelParams,
};
use crate::numgrad::{mean, Tape, Var};
use crate::seeding::child_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Video-level classification only.
    None,
    NtXent,
    WeightedNtXent,
    Mtsc,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 5,
            min_delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub lambda_mtsc: f64,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub hidden: usize,
    /// Projection width; defaults to `hidden`.
    pub proj: Option<usize>,
    pub seed: u64,
    /// Training-loss plateau stop; when it fires, the history is shorter
    /// than `epochs`.
    pub early_stop: Option<EarlyStop>,
    pub preserve_audio_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 40,
            lr0: 3e-4,
            decay_factor: 0.1,
            decay_every: 10,
            lambda_mtsc: 1.0,
            loss_kind: LossKind::Mtsc,
            loss: LossConfig::default(),
            hidden: 16,
            proj: None,
            seed: 0,
            early_stop: None,
            preserve_audio_projection: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Validation(
                "learning rate and decay factor must be positive".into(),
            ));
        }
        if self.decay_every == 0 {
            return Err(Error::Validation("decay_every must be positive".into()));
        }
        if self.lambda_mtsc < 0.0 || !self.lambda_mtsc.is_finite() {
            return Err(Error::Validation("lambda_mtsc must be nonnegative".into()));
        }
        if self.hidden == 0 || self.proj == Some(0) {
            return Err(Error::Validation("model widths must be positive".into()));
        }
        if !(self.loss.temperature > 0.0) {
            return Err(Error::Validation("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn model_dims(&self, dataset: &Dataset) -> ModelDims {
        ModelDims {
            dim_audio: dataset.dim_audio,
            dim_visual: dataset.dim_visual,
            hidden: self.hidden,
            proj: self.proj.unwrap_or(self.hidden),
            classes: dataset.classes,
        }
    }
}

/// `lr0 * decay_factor ^ floor(epoch / decay_every)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.decay_factor.powi((epoch / config.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    pub contrastive: f64,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,bce,mtsc,total,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                e.epoch, e.lr, e.bce, e.contrastive, e.total, e.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

fn block_name_at(layout: &[(&'static str, usize)], index: usize) -> &'static str {
    let mut pos = 0;
    for (name, len) in layout {
        pos += len;
        if index < pos {
            return name;
        }
    }
    "unknown"
}

/// Standard Adam update with bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    layout: &[(&'static str, usize)],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch(format!(
            "adam_step length mismatch: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient for parameter {} is {}",
            block_name_at(layout, i),
            grads[i]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

fn bce_expr<'t>(
    tape: &'t Tape,
    video_probs: &[Var<'t>],
    labels: &crate::data::LabelSet,
) -> Var<'t> {
    let mut acc = tape.constant(0.0);
    for (c, &p) in video_probs.iter().enumerate() {
        let term = if labels.contains(c) {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
        acc = acc - term;
    }
    acc / video_probs.len() as f64
}

fn contrastive_expr<'t>(
    tape: &'t Tape,
    config: &TrainConfig,
    fwd: &BoundForward<'t>,
) -> Result<Option<Var<'t>>> {
    let value = match config.loss_kind {
        LossKind::None => return Ok(None),
        LossKind::NtXent => nt_xent_expr(
            tape,
            &fwd.projected_audio,
            &fwd.projected_visual,
            config.loss.temperature,
        )?,
        LossKind::WeightedNtXent => weighted_nt_xent_expr(
            tape,
            &fwd.projected_audio,
            &fwd.projected_visual,
            config.loss.temperature,
            &config.loss.kernel,
        )?,
        LossKind::Mtsc => mtsc_expr(
            tape,
            &fwd.projected_audio,
            &fwd.projected_visual,
            &config.loss,
        )?,
    };
    Ok(Some(value))
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with_observer(dataset, config, |_, _| {})
}

/// Like [`train`], invoking `observer(epoch, params)` after every epoch.
pub fn train_with_observer(
    dataset: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, &ModelParams),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot train on an empty split".into()));
    }
    dataset.validate()?;

    let dims = config.model_dims(dataset);
    let mut params = init_model(dims, child_seed(config.seed, 0xA11))?;
    let layout = param_layout(dims);
    let mut adam = AdamState::new(params.flatten().len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, 0xB22));
    // The contrastive term is built only when it can contribute gradient.
    let contrastive_active = config.loss_kind != LossKind::None && config.lambda_mtsc != 0.0;

    let mut history = TrainHistory::default();
    let mut best_total = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, config);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut sum_bce = 0.0;
        let mut sum_con = 0.0;
        let mut sum_total = 0.0;

        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let mut bce_terms = Vec::with_capacity(batch.len());
            let mut con_terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let sample = &dataset.samples[i];
                let fwd = forward_expr(&tape, &bound, sample)?;
                bce_terms.push(bce_expr(&tape, &fwd.video_probs, &sample.video_labels));
                if contrastive_active {
                    con_terms.push(
                        contrastive_expr(&tape, config, &fwd)?.expect("active loss kind"),
                    );
                }
            }
            let bce = mean(&tape, &bce_terms);
            let (total, con_value) = if contrastive_active {
                let con = mean(&tape, &con_terms);
                (bce + con * config.lambda_mtsc, con.value())
            } else {
                (bce, 0.0)
            };
            let total_value = total.value();
            if !total_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "total loss {total_value} at epoch {epoch}, batch starting with sample {}",
                    batch[0]
                )));
            }
            let grads = total.backward();
            let grad_vec = bound.gradient(&grads);
            let mut flat = params.flatten();
            adam_step(&mut flat, &grad_vec, &mut adam, lr, &layout)?;
            params = ModelParams::unflatten(dims, &flat)?;

            let weight = batch.len() as f64;
            sum_bce += bce.value() * weight;
            sum_con += con_value * weight;
            sum_total += total_value * weight;
        }

        let n = dataset.len() as f64;
        let total = sum_total / n;
        history.epochs.push(EpochStats {
            epoch,
            lr,
            bce: sum_bce / n,
            contrastive: sum_con / n,
            total,
            seconds: started.elapsed().as_secs_f64(),
        });
        observer(epoch, &params);

        if let Some(es) = &config.early_stop {
            if best_total - total > es.min_delta {
                best_total = total;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= es.patience {
                    break;
                }
            }
        }
    }

    Ok((params, history))
}
