//! Synthetic multimodal corpus generator.
//!
//! Each video carries a latent event timeline. Audio-visual events share
//! one latent between the modalities; modality-exclusive events get
//! independent latents, which is what opens the unimodal-vs-cross-modal
//! alignment gap. Embeddings are produced by "extractor families":
//! orthonormal transforms carrying a per-family fingerprint, the stand-in
//! for the identity a pretrained network stamps on its features.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::io::quantize_sig9;
use crate::data::{Dataset, LabelSet, ModalSequence, Modality, VideoSample};
use crate::error::{Error, Result};
use crate::seeding::child_seed;

const MAX_EVENT_LEN: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub videos: usize,
    pub segments: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub dim_audio: usize,
    pub dim_visual: usize,
    /// Target fraction of labeled segments per modality.
    pub density_audio: f64,
    pub density_visual: f64,
    /// Fraction of labeled coverage realized as shared audio-visual events.
    pub av_fraction: f64,
    /// Minimum fraction of segments left as background, per modality.
    pub background_fraction: f64,
    /// Gaussian noise scale added to every segment latent.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            videos: 100,
            segments: 10,
            classes: 5,
            latent_dim: 16,
            dim_audio: 32,
            dim_visual: 32,
            density_audio: 0.5,
            density_visual: 0.5,
            av_fraction: 0.6,
            background_fraction: 0.2,
            noise: 0.08,
            seed: 17,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("videos", self.videos),
            ("segments", self.segments),
            ("classes", self.classes),
            ("latent_dim", self.latent_dim),
            ("dim_audio", self.dim_audio),
            ("dim_visual", self.dim_visual),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        for (name, f) in [
            ("density_audio", self.density_audio),
            ("density_visual", self.density_visual),
            ("av_fraction", self.av_fraction),
            ("background_fraction", self.background_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Validation(format!(
                    "{name} must be in [0, 1], got {f}"
                )));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Validation(format!(
                "noise must be nonnegative, got {}",
                self.noise
            )));
        }
        if self.latent_dim > self.dim_audio.min(self.dim_visual) {
            return Err(Error::Validation(format!(
                "latent_dim {} exceeds an output dimension ({}, {})",
                self.latent_dim, self.dim_audio, self.dim_visual
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => x.tanh(),
        }
    }
}

/// A fixed latent-to-embedding transform with a network-identity
/// fingerprint: `out = nonlinearity(transform * latent + bias) +
/// fingerprint_scale * fingerprint`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorFamily {
    pub name: String,
    /// Row-major `dim x latent_dim`, orthonormal columns.
    pub transform: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    /// Unit direction added to every output.
    pub fingerprint: Vec<f64>,
    pub fingerprint_scale: f64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt on the columns of a row-major `rows x cols`
/// matrix. Column signs follow the input, so the result is canonical for
/// a given input matrix.
fn orthonormalize_columns(mut m: Vec<Vec<f64>>, cols: usize) -> Result<Vec<Vec<f64>>> {
    let rows = m.len();
    for c in 0..cols {
        for prev in 0..c {
            let proj: f64 = (0..rows).map(|r| m[r][c] * m[r][prev]).sum();
            for r in 0..rows {
                m[r][c] -= proj * m[r][prev];
            }
        }
        let len: f64 = (0..rows).map(|r| m[r][c] * m[r][c]).sum::<f64>().sqrt();
        if len < 1e-9 {
            return Err(Error::Validation(format!(
                "column {c} became degenerate during orthonormalization"
            )));
        }
        for r in 0..rows {
            m[r][c] /= len;
        }
    }
    Ok(m)
}

impl ExtractorFamily {
    pub fn random(
        name: impl Into<String>,
        latent_dim: usize,
        dim: usize,
        fingerprint_scale: f64,
        nonlinearity: Nonlinearity,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 || dim < latent_dim {
            return Err(Error::Validation(format!(
                "extractor family needs dim >= latent_dim >= 1, got {dim} and {latent_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = (0..dim).map(|_| gaussian_vec(&mut rng, latent_dim)).collect();
        let transform = orthonormalize_columns(raw, latent_dim)?;
        let bias: Vec<f64> = gaussian_vec(&mut rng, dim).into_iter().map(|x| 0.05 * x).collect();
        let fingerprint = normalize(gaussian_vec(&mut rng, dim));
        Ok(ExtractorFamily {
            name: name.into(),
            transform,
            bias,
            nonlinearity,
            fingerprint,
            fingerprint_scale,
        })
    }

    pub fn from_parts(
        name: impl Into<String>,
        transform: Vec<Vec<f64>>,
        bias: Vec<f64>,
        nonlinearity: Nonlinearity,
        fingerprint: Vec<f64>,
        fingerprint_scale: f64,
    ) -> Result<Self> {
        let family = ExtractorFamily {
            name: name.into(),
            transform,
            bias,
            nonlinearity,
            fingerprint,
            fingerprint_scale,
        };
        family.validate()?;
        Ok(family)
    }

    pub fn latent_dim(&self) -> usize {
        self.transform.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.transform.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let latent = self.latent_dim();
        if latent == 0 || dim < latent {
            return Err(Error::Validation(format!(
                "family {}: transform must be dim x latent_dim with dim >= latent_dim",
                self.name
            )));
        }
        if self.transform.iter().any(|r| r.len() != latent) {
            return Err(Error::Validation(format!(
                "family {}: ragged transform rows",
                self.name
            )));
        }
        if self.bias.len() != dim || self.fingerprint.len() != dim {
            return Err(Error::DimMismatch(format!(
                "family {}: bias/fingerprint must have length {dim}",
                self.name
            )));
        }
        if self.fingerprint_scale < 0.0 {
            return Err(Error::Validation(format!(
                "family {}: fingerprint scale must be nonnegative",
                self.name
            )));
        }
        for a in 0..latent {
            for b in a..latent {
                let d: f64 = (0..dim).map(|r| self.transform[r][a] * self.transform[r][b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-6 {
                    return Err(Error::Validation(format!(
                        "family {}: columns {a},{b} not orthonormal (dot = {d})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Geodesic-ish blend: linear interpolation of the transforms followed
    /// by re-orthonormalization, giving a controllable divergence ladder.
    pub fn interpolate(a: &ExtractorFamily, b: &ExtractorFamily, t: f64, name: impl Into<String>) -> Result<Self> {
        if a.dim() != b.dim() || a.latent_dim() != b.latent_dim() {
            return Err(Error::DimMismatch(format!(
                "cannot interpolate families {} and {} of different shapes",
                a.name, b.name
            )));
        }
        let dim = a.dim();
        let latent = a.latent_dim();
        let mut blend = vec![vec![0.0; latent]; dim];
        for r in 0..dim {
            for c in 0..latent {
                blend[r][c] = (1.0 - t) * a.transform[r][c] + t * b.transform[r][c];
            }
        }
        let transform = orthonormalize_columns(blend, latent)?;
        let fingerprint = normalize(
            a.fingerprint
                .iter()
                .zip(&b.fingerprint)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect(),
        );
        let bias = a
            .bias
            .iter()
            .zip(&b.bias)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        Ok(ExtractorFamily {
            name: name.into(),
            transform,
            bias,
            nonlinearity: a.nonlinearity,
            fingerprint,
            fingerprint_scale: (1.0 - t) * a.fingerprint_scale + t * b.fingerprint_scale,
        })
    }
}

/// Applies the family transform row-wise: `T x L -> T x D`.
pub fn apply_extractor_family(latents: &[Vec<f64>], family: &ExtractorFamily) -> Result<Vec<Vec<f64>>> {
    let latent_dim = family.latent_dim();
    latents
        .iter()
        .enumerate()
        .map(|(t, latent)| {
            if latent.len() != latent_dim {
                return Err(Error::DimMismatch(format!(
                    "latent row {t} has dimension {}, family {} expects {latent_dim}",
                    latent.len(),
                    family.name
                )));
            }
            Ok((0..family.dim())
                .map(|r| {
                    let pre = dot(&family.transform[r], latent) + family.bias[r];
                    family.nonlinearity.apply(pre)
                        + family.fingerprint_scale * family.fingerprint[r]
                })
                .collect())
        })
        .collect()
}

/// 1 minus the mean column-wise cosine, averaged with the fingerprint
/// direction divergence; clamped to [0, 1]. Zero iff the transforms and
/// fingerprints agree column by column.
pub fn family_divergence(f1: &ExtractorFamily, f2: &ExtractorFamily) -> f64 {
    let latent = f1.latent_dim().min(f2.latent_dim());
    let dim = f1.dim().min(f2.dim());
    let mut col_cos = 0.0;
    for c in 0..latent {
        let mut d = 0.0;
        for r in 0..dim {
            d += f1.transform[r][c] * f2.transform[r][c];
        }
        col_cos += d;
    }
    col_cos /= latent as f64;
    let fp_cos = dot(&f1.fingerprint, &f2.fingerprint);
    let div = 0.5 * ((1.0 - col_cos) + (1.0 - fp_cos));
    div.clamp(0.0, 1.0)
}

/// A chosen (audio extractor, visual extractor) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Collocation {
    pub audio: ExtractorFamily,
    pub visual: ExtractorFamily,
}

impl Collocation {
    pub fn id(&self) -> String {
        format!("{}+{}", self.audio.name, self.visual.name)
    }

    pub fn divergence(&self) -> f64 {
        family_divergence(&self.audio, &self.visual)
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    AudioOnly,
    VisualOnly,
    AudioVisual,
}

#[derive(Debug, Clone, Copy)]
struct PlannedEvent {
    class: usize,
    kind: EventKind,
    start: usize,
    len: usize,
}

/// Places disjoint events totalling `need` segments into the free slots.
fn place_events(
    rng: &mut ChaCha8Rng,
    free: &mut [Vec<bool>],
    need: usize,
    classes: usize,
    kind: EventKind,
    out: &mut Vec<PlannedEvent>,
) -> Result<()> {
    let t = free[0].len();
    let mut remaining = need;
    while remaining > 0 {
        let mut len = rng.random_range(1..=MAX_EVENT_LEN.min(remaining));
        let start = loop {
            let candidates: Vec<usize> = (0..t.saturating_sub(len - 1))
                .filter(|&s| (s..s + len).all(|i| free.iter().all(|m| m[i])))
                .collect();
            if let Some(&s) = candidates.get(if candidates.is_empty() {
                0
            } else {
                rng.random_range(0..candidates.len())
            }) {
                break s;
            }
            if len == 1 {
                return Err(Error::Validation(
                    "event placement ran out of free segments; lower the densities".into(),
                ));
            }
            len -= 1;
        };
        for mask in free.iter_mut() {
            for slot in &mut mask[start..start + len] {
                *slot = false;
            }
        }
        out.push(PlannedEvent {
            class: rng.random_range(0..classes),
            kind,
            start,
            len,
        });
        remaining -= len;
    }
    Ok(())
}

/// Generates a dataset under the given config and family pair.
///
/// The event timelines and latents depend only on the config seed, never
/// on the families, so different collocations see the same underlying
/// content. Per-video randomness is drawn from child seeds, making the
/// output independent of any evaluation schedule.
pub fn generate_dataset(
    config: &GenConfig,
    audio_family: &ExtractorFamily,
    visual_family: &ExtractorFamily,
) -> Result<Dataset> {
    config.validate()?;
    audio_family.validate()?;
    visual_family.validate()?;
    for (name, fam, dim) in [
        ("audio", audio_family, config.dim_audio),
        ("visual", visual_family, config.dim_visual),
    ] {
        if fam.dim() != dim || fam.latent_dim() != config.latent_dim {
            return Err(Error::DimMismatch(format!(
                "{name} family {} is {}x{}, config wants {}x{}",
                fam.name,
                fam.dim(),
                fam.latent_dim(),
                dim,
                config.latent_dim
            )));
        }
    }

    let t = config.segments;
    let cov_audio = (config.density_audio * t as f64).round() as usize;
    let cov_visual = (config.density_visual * t as f64).round() as usize;
    if config.background_fraction > 0.0 {
        let reserved = ((config.background_fraction * t as f64).round() as usize).max(1);
        let capacity = t - reserved.min(t);
        if cov_audio > capacity || cov_visual > capacity {
            return Err(Error::Validation(format!(
                "densities ({}, {}) leave no room for the requested background fraction {}",
                config.density_audio, config.density_visual, config.background_fraction
            )));
        }
    }
    let cov_av = (config.av_fraction * cov_audio.min(cov_visual) as f64).round() as usize;

    // Per-class event latents: audio-visual events share one latent across
    // modalities, modality-exclusive events get their own.
    let mut latent_rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, u64::MAX));
    let mut lat_av = Vec::new();
    let mut lat_audio = Vec::new();
    let mut lat_visual = Vec::new();
    for _ in 0..config.classes {
        lat_av.push(normalize(gaussian_vec(&mut latent_rng, config.latent_dim)));
        lat_audio.push(normalize(gaussian_vec(&mut latent_rng, config.latent_dim)));
        lat_visual.push(normalize(gaussian_vec(&mut latent_rng, config.latent_dim)));
    }

    let mut samples = Vec::with_capacity(config.videos);
    for v in 0..config.videos {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, v as u64));

        let mut events = Vec::new();
        {
            let mut both = vec![vec![true; t], vec![true; t]];
            place_events(&mut rng, &mut both, cov_av, config.classes, EventKind::AudioVisual, &mut events)?;
            let [mut audio_free, mut visual_free] = <[Vec<bool>; 2]>::try_from(both).unwrap();
            place_events(
                &mut rng,
                std::slice::from_mut(&mut audio_free),
                cov_audio - cov_av,
                config.classes,
                EventKind::AudioOnly,
                &mut events,
            )?;
            place_events(
                &mut rng,
                std::slice::from_mut(&mut visual_free),
                cov_visual - cov_av,
                config.classes,
                EventKind::VisualOnly,
                &mut events,
            )?;
        }

        let mut lat_a = vec![vec![0.0; config.latent_dim]; t];
        let mut lat_v = vec![vec![0.0; config.latent_dim]; t];
        let mut labels_a = vec![LabelSet::new(); t];
        let mut labels_v = vec![LabelSet::new(); t];
        for ev in &events {
            for i in ev.start..ev.start + ev.len {
                match ev.kind {
                    EventKind::AudioVisual => {
                        labels_a[i].insert(ev.class);
                        labels_v[i].insert(ev.class);
                        for (d, &x) in lat_av[ev.class].iter().enumerate() {
                            lat_a[i][d] += x;
                            lat_v[i][d] += x;
                        }
                    }
                    EventKind::AudioOnly => {
                        labels_a[i].insert(ev.class);
                        for (d, &x) in lat_audio[ev.class].iter().enumerate() {
                            lat_a[i][d] += x;
                        }
                    }
                    EventKind::VisualOnly => {
                        labels_v[i].insert(ev.class);
                        for (d, &x) in lat_visual[ev.class].iter().enumerate() {
                            lat_v[i][d] += x;
                        }
                    }
                }
            }
        }
        for i in 0..t {
            for d in 0..config.latent_dim {
                lat_a[i][d] += config.noise * rng.sample::<f64, _>(StandardNormal);
            }
            for d in 0..config.latent_dim {
                lat_v[i][d] += config.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }

        let quantize = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.into_iter()
                .map(|row| row.into_iter().map(quantize_sig9).collect())
                .collect()
        };
        let emb_a = quantize(apply_extractor_family(&lat_a, audio_family)?);
        let emb_v = quantize(apply_extractor_family(&lat_v, visual_family)?);
        for (name, emb) in [("audio", &emb_a), ("visual", &emb_v)] {
            if let Some(i) = emb.iter().position(|row| norm(row) == 0.0) {
                return Err(Error::ZeroNorm(format!(
                    "video {v} {name} segment {i}: increase noise, bias, or fingerprint scale"
                )));
            }
        }

        let mut video_labels = LabelSet::new();
        for ls in labels_a.iter().chain(&labels_v) {
            video_labels.union_with(ls);
        }
        samples.push(VideoSample {
            id: format!("v{v:04}"),
            audio: ModalSequence::new(Modality::Audio, emb_a),
            visual: ModalSequence::new(Modality::Visual, emb_v),
            seg_labels_audio: labels_a,
            seg_labels_visual: labels_v,
            video_labels,
        });
    }

    let dataset = Dataset {
        samples,
        classes: config.classes,
        segments: config.segments,
        dim_audio: config.dim_audio,
        dim_visual: config.dim_visual,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Two anchor families plus interpolations between them: a divergence
/// ladder for collocation experiments.
pub fn family_ladder(
    count: usize,
    latent_dim: usize,
    dim: usize,
    fingerprint_scale: f64,
    seed: u64,
) -> Result<Vec<ExtractorFamily>> {
    if count < 2 {
        return Err(Error::Validation("ladder needs at least 2 families".into()));
    }
    let a = ExtractorFamily::random("rung0", latent_dim, dim, fingerprint_scale, Nonlinearity::Identity, child_seed(seed, 101))?;
    let b = ExtractorFamily::random(
        format!("rung{}", count - 1),
        latent_dim,
        dim,
        fingerprint_scale,
        Nonlinearity::Identity,
        child_seed(seed, 202),
    )?;
    let mut ladder = vec![a.clone()];
    for i in 1..count - 1 {
        let t = i as f64 / (count - 1) as f64;
        ladder.push(ExtractorFamily::interpolate(&a, &b, t, format!("rung{i}"))?);
    }
    ladder.push(b);
    Ok(ladder)
}
