//! The toy parsing network: per-modality linear adapters into a shared
//! hidden width, one shared single-head self-attention encoder with
//! residual and tanh, per-modality linear projection heads feeding the
//! contrastive losses, one cross-attention fusion block per direction,
//! per-modality sigmoid classifiers on the fused features, and an
//! attention-weighted MIL pooling head producing video-level
//! probabilities over both modalities' segment slots.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::io::fmt_f64_sig9;
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::numgrad::{add_vec, dot, matvec, softmax, Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub dim_audio: usize,
    pub dim_visual: usize,
    pub hidden: usize,
    pub proj: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dim_audio", self.dim_audio),
            ("dim_visual", self.dim_visual),
            ("hidden", self.hidden),
            ("proj", self.proj),
            ("classes", self.classes),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("model dim {name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// Row-major, `out x in`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub query: Vec<Vec<f64>>,
    pub key: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub adapter_audio: Linear,
    pub adapter_visual: Linear,
    /// Shared temporal encoder applied to both modalities.
    pub encoder: Attention,
    pub proj_audio: Linear,
    pub proj_visual: Linear,
    /// Cross attention, audio queries over visual keys/values.
    pub fuse_audio: Attention,
    /// Cross attention, visual queries over audio keys/values.
    pub fuse_visual: Attention,
    /// `classes x hidden`, no bias.
    pub classifier_audio: Vec<Vec<f64>>,
    pub classifier_visual: Vec<Vec<f64>>,
    /// MIL scoring map, length `hidden`.
    pub mil: Vec<f64>,
    /// False after the audio projection head was dropped at save time.
    pub audio_projection_present: bool,
}

fn xavier_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-a..a)).collect())
        .collect()
}

fn linear(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Linear {
    Linear {
        weight: xavier_matrix(rng, rows, cols),
        bias: vec![0.0; rows],
    }
}

fn attention(rng: &mut ChaCha8Rng, h: usize) -> Attention {
    Attention {
        query: xavier_matrix(rng, h, h),
        key: xavier_matrix(rng, h, h),
        value: xavier_matrix(rng, h, h),
    }
}

/// Deterministic Xavier-uniform initialization in a fixed block order.
pub fn init_model(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = dims.hidden;
    Ok(ModelParams {
        dims,
        adapter_audio: linear(&mut rng, h, dims.dim_audio),
        adapter_visual: linear(&mut rng, h, dims.dim_visual),
        encoder: attention(&mut rng, h),
        proj_audio: linear(&mut rng, dims.proj, h),
        proj_visual: linear(&mut rng, dims.proj, h),
        fuse_audio: attention(&mut rng, h),
        fuse_visual: attention(&mut rng, h),
        classifier_audio: xavier_matrix(&mut rng, dims.classes, h),
        classifier_visual: xavier_matrix(&mut rng, dims.classes, h),
        mil: xavier_matrix(&mut rng, 1, h).remove(0),
        audio_projection_present: true,
    })
}

/// Canonical flat ordering of the parameter blocks.
pub fn param_layout(dims: ModelDims) -> Vec<(&'static str, usize)> {
    let h = dims.hidden;
    vec![
        ("adapter_audio.weight", h * dims.dim_audio),
        ("adapter_audio.bias", h),
        ("adapter_visual.weight", h * dims.dim_visual),
        ("adapter_visual.bias", h),
        ("encoder.query", h * h),
        ("encoder.key", h * h),
        ("encoder.value", h * h),
        ("proj_audio.weight", dims.proj * h),
        ("proj_audio.bias", dims.proj),
        ("proj_visual.weight", dims.proj * h),
        ("proj_visual.bias", dims.proj),
        ("fuse_audio.query", h * h),
        ("fuse_audio.key", h * h),
        ("fuse_audio.value", h * h),
        ("fuse_visual.query", h * h),
        ("fuse_visual.key", h * h),
        ("fuse_visual.value", h * h),
        ("classifier_audio", dims.classes * h),
        ("classifier_visual", dims.classes * h),
        ("mil", h),
    ]
}

impl ModelParams {
    pub fn flatten(&self) -> Vec<f64> {
        fn push_matrix(out: &mut Vec<f64>, m: &[Vec<f64>]) {
            out.extend(m.iter().flatten().copied());
        }
        let mut out = Vec::new();
        push_matrix(&mut out, &self.adapter_audio.weight);
        out.extend_from_slice(&self.adapter_audio.bias);
        push_matrix(&mut out, &self.adapter_visual.weight);
        out.extend_from_slice(&self.adapter_visual.bias);
        push_matrix(&mut out, &self.encoder.query);
        push_matrix(&mut out, &self.encoder.key);
        push_matrix(&mut out, &self.encoder.value);
        push_matrix(&mut out, &self.proj_audio.weight);
        out.extend_from_slice(&self.proj_audio.bias);
        push_matrix(&mut out, &self.proj_visual.weight);
        out.extend_from_slice(&self.proj_visual.bias);
        push_matrix(&mut out, &self.fuse_audio.query);
        push_matrix(&mut out, &self.fuse_audio.key);
        push_matrix(&mut out, &self.fuse_audio.value);
        push_matrix(&mut out, &self.fuse_visual.query);
        push_matrix(&mut out, &self.fuse_visual.key);
        push_matrix(&mut out, &self.fuse_visual.value);
        push_matrix(&mut out, &self.classifier_audio);
        push_matrix(&mut out, &self.classifier_visual);
        out.extend_from_slice(&self.mil);
        out
    }

    pub fn unflatten(dims: ModelDims, flat: &[f64]) -> Result<ModelParams> {
        let expected: usize = param_layout(dims).iter().map(|(_, n)| n).sum();
        if flat.len() != expected {
            return Err(Error::DimMismatch(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let h = dims.hidden;
        let mut pos = 0usize;
        let mut matrix = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| {
                    let row = flat[pos..pos + cols].to_vec();
                    pos += cols;
                    row
                })
                .collect()
        };
        let adapter_audio_w = matrix(h, dims.dim_audio);
        let adapter_audio_b = matrix(1, h).remove(0);
        let adapter_visual_w = matrix(h, dims.dim_visual);
        let adapter_visual_b = matrix(1, h).remove(0);
        let enc_q = matrix(h, h);
        let enc_k = matrix(h, h);
        let enc_v = matrix(h, h);
        let proj_audio_w = matrix(dims.proj, h);
        let proj_audio_b = matrix(1, dims.proj).remove(0);
        let proj_visual_w = matrix(dims.proj, h);
        let proj_visual_b = matrix(1, dims.proj).remove(0);
        let fa_q = matrix(h, h);
        let fa_k = matrix(h, h);
        let fa_v = matrix(h, h);
        let fv_q = matrix(h, h);
        let fv_k = matrix(h, h);
        let fv_v = matrix(h, h);
        let cls_a = matrix(dims.classes, h);
        let cls_v = matrix(dims.classes, h);
        let mil = matrix(1, h).remove(0);
        Ok(ModelParams {
            dims,
            adapter_audio: Linear { weight: adapter_audio_w, bias: adapter_audio_b },
            adapter_visual: Linear { weight: adapter_visual_w, bias: adapter_visual_b },
            encoder: Attention { query: enc_q, key: enc_k, value: enc_v },
            proj_audio: Linear { weight: proj_audio_w, bias: proj_audio_b },
            proj_visual: Linear { weight: proj_visual_w, bias: proj_visual_b },
            fuse_audio: Attention { query: fa_q, key: fa_k, value: fa_v },
            fuse_visual: Attention { query: fv_q, key: fv_k, value: fv_v },
            classifier_audio: cls_a,
            classifier_visual: cls_v,
            mil,
            audio_projection_present: true,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        let flat = self.flatten();
        let leaves: Vec<Var<'t>> = flat.iter().map(|&x| tape.leaf(x)).collect();
        BoundModel::from_slice(self.dims, &leaves).expect("layout matches flatten")
    }
}

pub struct BoundLinear<'t> {
    pub weight: Vec<Vec<Var<'t>>>,
    pub bias: Vec<Var<'t>>,
}

pub struct BoundAttention<'t> {
    pub query: Vec<Vec<Var<'t>>>,
    pub key: Vec<Vec<Var<'t>>>,
    pub value: Vec<Vec<Var<'t>>>,
}

/// Model parameters as tape leaves, in the canonical flat order.
pub struct BoundModel<'t> {
    pub dims: ModelDims,
    pub adapter_audio: BoundLinear<'t>,
    pub adapter_visual: BoundLinear<'t>,
    pub encoder: BoundAttention<'t>,
    pub proj_audio: BoundLinear<'t>,
    pub proj_visual: BoundLinear<'t>,
    pub fuse_audio: BoundAttention<'t>,
    pub fuse_visual: BoundAttention<'t>,
    pub classifier_audio: Vec<Vec<Var<'t>>>,
    pub classifier_visual: Vec<Vec<Var<'t>>>,
    pub mil: Vec<Var<'t>>,
    leaves: Vec<Var<'t>>,
}

struct Cursor<'a, 't> {
    vars: &'a [Var<'t>],
    pos: usize,
}

impl<'a, 't> Cursor<'a, 't> {
    fn matrix(&mut self, rows: usize, cols: usize) -> Vec<Vec<Var<'t>>> {
        (0..rows)
            .map(|_| {
                let row = self.vars[self.pos..self.pos + cols].to_vec();
                self.pos += cols;
                row
            })
            .collect()
    }

    fn vector(&mut self, n: usize) -> Vec<Var<'t>> {
        let v = self.vars[self.pos..self.pos + n].to_vec();
        self.pos += n;
        v
    }

    fn linear(&mut self, rows: usize, cols: usize) -> BoundLinear<'t> {
        BoundLinear {
            weight: self.matrix(rows, cols),
            bias: self.vector(rows),
        }
    }

    fn attention(&mut self, h: usize) -> BoundAttention<'t> {
        BoundAttention {
            query: self.matrix(h, h),
            key: self.matrix(h, h),
            value: self.matrix(h, h),
        }
    }
}

impl<'t> BoundModel<'t> {
    /// Reconstructs the structured view from leaf vars in flat order; used
    /// by both training and the gradient checker.
    pub fn from_slice(dims: ModelDims, vars: &[Var<'t>]) -> Result<BoundModel<'t>> {
        let expected: usize = param_layout(dims).iter().map(|(_, n)| n).sum();
        if vars.len() != expected {
            return Err(Error::DimMismatch(format!(
                "expected {expected} parameter vars, got {}",
                vars.len()
            )));
        }
        let h = dims.hidden;
        let mut c = Cursor { vars, pos: 0 };
        Ok(BoundModel {
            dims,
            adapter_audio: c.linear(h, dims.dim_audio),
            adapter_visual: c.linear(h, dims.dim_visual),
            encoder: c.attention(h),
            proj_audio: c.linear(dims.proj, h),
            proj_visual: c.linear(dims.proj, h),
            fuse_audio: c.attention(h),
            fuse_visual: c.attention(h),
            classifier_audio: c.matrix(dims.classes, h),
            classifier_visual: c.matrix(dims.classes, h),
            mil: c.vector(h),
            leaves: vars.to_vec(),
        })
    }

    /// Parameter gradients in the canonical flat order.
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        self.leaves.iter().map(|&v| grads.get(v)).collect()
    }
}

/// All intermediate sequences of one forward pass, on the tape.
pub struct BoundForward<'t> {
    pub encoded_audio: Vec<Vec<Var<'t>>>,
    pub encoded_visual: Vec<Vec<Var<'t>>>,
    pub projected_audio: Vec<Vec<Var<'t>>>,
    pub projected_visual: Vec<Vec<Var<'t>>>,
    pub fused_audio: Vec<Vec<Var<'t>>>,
    pub fused_visual: Vec<Vec<Var<'t>>>,
    pub seg_probs_audio: Vec<Vec<Var<'t>>>,
    pub seg_probs_visual: Vec<Vec<Var<'t>>>,
    pub video_probs: Vec<Var<'t>>,
    pub attention_audio: Vec<Vec<Var<'t>>>,
    pub attention_visual: Vec<Vec<Var<'t>>>,
    pub fusion_attention_audio: Vec<Vec<Var<'t>>>,
    pub fusion_attention_visual: Vec<Vec<Var<'t>>>,
    pub mil_weights: Vec<Var<'t>>,
}

fn affine_rows<'t>(x: &[Vec<Var<'t>>], map: &BoundLinear<'t>) -> Vec<Vec<Var<'t>>> {
    x.iter()
        .map(|row| add_vec(&matvec(&map.weight, row), &map.bias))
        .collect()
}

/// Scaled dot-product attention: queries from `q_src`, keys and values
/// from `kv_src`. Returns (attended rows, attention rows).
fn attend<'t>(
    tape: &'t Tape,
    block: &BoundAttention<'t>,
    q_src: &[Vec<Var<'t>>],
    kv_src: &[Vec<Var<'t>>],
    h: usize,
) -> (Vec<Vec<Var<'t>>>, Vec<Vec<Var<'t>>>) {
    let scale = 1.0 / (h as f64).sqrt();
    let qs: Vec<Vec<Var>> = q_src.iter().map(|r| matvec(&block.query, r)).collect();
    let ks: Vec<Vec<Var>> = kv_src.iter().map(|r| matvec(&block.key, r)).collect();
    let vs: Vec<Vec<Var>> = kv_src.iter().map(|r| matvec(&block.value, r)).collect();
    let mut attended = Vec::with_capacity(qs.len());
    let mut weights = Vec::with_capacity(qs.len());
    for q in &qs {
        let scores: Vec<Var> = ks.iter().map(|k| dot(q, k) * scale).collect();
        let att = softmax(tape, &scores);
        let mut ctx: Vec<Var> = vec![tape.constant(0.0); h];
        for (j, v) in vs.iter().enumerate() {
            for (d, slot) in ctx.iter_mut().enumerate() {
                *slot = *slot + att[j] * v[d];
            }
        }
        attended.push(ctx);
        weights.push(att);
    }
    (attended, weights)
}

/// Forward pass on the tape. Encoded features feed the alignment metrics,
/// projected features feed the contrastive losses, fused features feed the
/// classifiers.
pub fn forward_expr<'t>(
    tape: &'t Tape,
    model: &BoundModel<'t>,
    sample: &VideoSample,
) -> Result<BoundForward<'t>> {
    let dims = model.dims;
    let t = sample.audio.embeddings.len();
    if t == 0 || sample.visual.embeddings.len() != t {
        return Err(Error::DimMismatch(format!(
            "sample {}: audio and visual must share a positive segment count",
            sample.id
        )));
    }
    for (name, seq, d) in [
        ("audio", &sample.audio, dims.dim_audio),
        ("visual", &sample.visual, dims.dim_visual),
    ] {
        if seq.embeddings.iter().any(|r| r.len() != d) {
            return Err(Error::DimMismatch(format!(
                "sample {}: {name} embeddings do not match model dim {d}",
                sample.id
            )));
        }
    }

    let embed = |rows: &Vec<Vec<f64>>| -> Vec<Vec<Var<'t>>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| tape.constant(x)).collect())
            .collect()
    };
    let h = dims.hidden;

    let adapted_a = affine_rows(&embed(&sample.audio.embeddings), &model.adapter_audio);
    let adapted_v = affine_rows(&embed(&sample.visual.embeddings), &model.adapter_visual);

    let encode = |x: &Vec<Vec<Var<'t>>>| {
        let (ctx, att) = attend(tape, &model.encoder, x, x, h);
        let enc: Vec<Vec<Var>> = x
            .iter()
            .zip(&ctx)
            .map(|(row, c)| add_vec(row, c).iter().map(|v| v.tanh()).collect())
            .collect();
        (enc, att)
    };
    let (encoded_a, attention_audio) = encode(&adapted_a);
    let (encoded_v, attention_visual) = encode(&adapted_v);

    let projected_a = affine_rows(&encoded_a, &model.proj_audio);
    let projected_v = affine_rows(&encoded_v, &model.proj_visual);

    let (ctx_a, fusion_attention_audio) = attend(tape, &model.fuse_audio, &encoded_a, &encoded_v, h);
    let (ctx_v, fusion_attention_visual) = attend(tape, &model.fuse_visual, &encoded_v, &encoded_a, h);
    let fused_a: Vec<Vec<Var>> = encoded_a.iter().zip(&ctx_a).map(|(r, c)| add_vec(r, c)).collect();
    let fused_v: Vec<Vec<Var>> = encoded_v.iter().zip(&ctx_v).map(|(r, c)| add_vec(r, c)).collect();

    let classify = |fused: &Vec<Vec<Var<'t>>>, cls: &Vec<Vec<Var<'t>>>| -> Vec<Vec<Var<'t>>> {
        fused
            .iter()
            .map(|row| matvec(cls, row).iter().map(|l| l.sigmoid()).collect())
            .collect()
    };
    let seg_probs_a = classify(&fused_a, &model.classifier_audio);
    let seg_probs_v = classify(&fused_v, &model.classifier_visual);

    // MIL pooling over the 2T slots, audio slots first.
    let mut scores: Vec<Var> = Vec::with_capacity(2 * t);
    for row in fused_a.iter().chain(&fused_v) {
        scores.push(dot(&model.mil, row));
    }
    let mil_weights = softmax(tape, &scores);
    let mut video_probs: Vec<Var> = vec![tape.constant(0.0); dims.classes];
    for (slot, probs) in seg_probs_a.iter().chain(&seg_probs_v).enumerate() {
        for (c, p) in probs.iter().enumerate() {
            video_probs[c] = video_probs[c] + mil_weights[slot] * *p;
        }
    }

    Ok(BoundForward {
        encoded_audio: encoded_a,
        encoded_visual: encoded_v,
        projected_audio: projected_a,
        projected_visual: projected_v,
        fused_audio: fused_a,
        fused_visual: fused_v,
        seg_probs_audio: seg_probs_a,
        seg_probs_visual: seg_probs_v,
        video_probs,
        attention_audio,
        attention_visual,
        fusion_attention_audio,
        fusion_attention_visual,
        mil_weights,
    })
}

/// Plain-value forward output.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoded_audio: Vec<Vec<f64>>,
    pub encoded_visual: Vec<Vec<f64>>,
    pub projected_audio: Vec<Vec<f64>>,
    pub projected_visual: Vec<Vec<f64>>,
    pub fused_audio: Vec<Vec<f64>>,
    pub fused_visual: Vec<Vec<f64>>,
    pub seg_probs_audio: Vec<Vec<f64>>,
    pub seg_probs_visual: Vec<Vec<f64>>,
    pub video_probs: Vec<f64>,
    pub attention_audio: Vec<Vec<f64>>,
    pub attention_visual: Vec<Vec<f64>>,
    pub fusion_attention_audio: Vec<Vec<f64>>,
    pub fusion_attention_visual: Vec<Vec<f64>>,
    pub mil_weights: Vec<f64>,
}

fn values(m: &[Vec<Var<'_>>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|v| v.value()).collect()).collect()
}

pub fn forward(params: &ModelParams, sample: &VideoSample) -> Result<ForwardOutput> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = forward_expr(&tape, &bound, sample)?;
    Ok(ForwardOutput {
        encoded_audio: values(&out.encoded_audio),
        encoded_visual: values(&out.encoded_visual),
        projected_audio: values(&out.projected_audio),
        projected_visual: values(&out.projected_visual),
        fused_audio: values(&out.fused_audio),
        fused_visual: values(&out.fused_visual),
        seg_probs_audio: values(&out.seg_probs_audio),
        seg_probs_visual: values(&out.seg_probs_visual),
        video_probs: out.video_probs.iter().map(|v| v.value()).collect(),
        attention_audio: values(&out.attention_audio),
        attention_visual: values(&out.attention_visual),
        fusion_attention_audio: values(&out.fusion_attention_audio),
        fusion_attention_visual: values(&out.fusion_attention_visual),
        mil_weights: out.mil_weights.iter().map(|v| v.value()).collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    dims: ModelDims,
    adapter_audio: Linear,
    adapter_visual: Linear,
    encoder: Attention,
    proj_audio: Option<Linear>,
    proj_visual: Linear,
    fuse_audio: Attention,
    fuse_visual: Attention,
    classifier_audio: Vec<Vec<f64>>,
    classifier_visual: Vec<Vec<f64>>,
    mil: Vec<f64>,
}

fn quantize_linear(l: &Linear) -> Linear {
    Linear {
        weight: quantize_matrix(&l.weight),
        bias: quantize_vec(&l.bias),
    }
}

fn quantize_attention(a: &Attention) -> Attention {
    Attention {
        query: quantize_matrix(&a.query),
        key: quantize_matrix(&a.key),
        value: quantize_matrix(&a.value),
    }
}

fn quantize_matrix(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| quantize_vec(r)).collect()
}

fn quantize_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| fmt_f64_sig9(x).parse().unwrap()).collect()
}

/// Writes the parameters with a version tag, the dimension tuple and
/// 9-significant-digit floats. The audio projection head is dropped unless
/// `preserve_audio_projection` is set.
pub fn save_model(params: &ModelParams, path: &Path, preserve_audio_projection: bool) -> Result<()> {
    let file = ModelFile {
        version: 1,
        dims: params.dims,
        adapter_audio: quantize_linear(&params.adapter_audio),
        adapter_visual: quantize_linear(&params.adapter_visual),
        encoder: quantize_attention(&params.encoder),
        proj_audio: preserve_audio_projection.then(|| quantize_linear(&params.proj_audio)),
        proj_visual: quantize_linear(&params.proj_visual),
        fuse_audio: quantize_attention(&params.fuse_audio),
        fuse_visual: quantize_attention(&params.fuse_visual),
        classifier_audio: quantize_matrix(&params.classifier_audio),
        classifier_visual: quantize_matrix(&params.classifier_visual),
        mil: quantize_vec(&params.mil),
    };
    let body = serde_json::to_string(&file)
        .map_err(|e| Error::Validation(format!("model serialization: {e}")))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
        line: e.line(),
        detail: format!("model file: {e}"),
    })?;
    if file.version != 1 {
        return Err(Error::Validation(format!(
            "unsupported model file version {}",
            file.version
        )));
    }
    let dims = file.dims;
    dims.validate()?;
    let audio_projection_present = file.proj_audio.is_some();
    let proj_audio = file.proj_audio.unwrap_or(Linear {
        weight: vec![vec![0.0; dims.hidden]; dims.proj],
        bias: vec![0.0; dims.proj],
    });
    let params = ModelParams {
        dims,
        adapter_audio: file.adapter_audio,
        adapter_visual: file.adapter_visual,
        encoder: file.encoder,
        proj_audio,
        proj_visual: file.proj_visual,
        fuse_audio: file.fuse_audio,
        fuse_visual: file.fuse_visual,
        classifier_audio: file.classifier_audio,
        classifier_visual: file.classifier_visual,
        mil: file.mil,
        audio_projection_present,
    };
    let flat = params.flatten();
    if let Some(bad) = flat.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("model file contains {bad}")));
    }
    Ok(params)
}
