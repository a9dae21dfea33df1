//! Domain types for synthetic audio-visual corpora: per-segment label sets,
//! per-modality embedding sequences, event intervals, and whole datasets.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
}

/// Evaluation track: per-modality or the joint audio-visual track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Audio,
    Visual,
    AudioVisual,
}

impl Track {
    pub const ALL: [Track; 3] = [Track::Audio, Track::Visual, Track::AudioVisual];
}

/// Set of class indices active somewhere. Empty means background.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeSet<usize>);

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_classes(classes: impl IntoIterator<Item = usize>) -> Self {
        LabelSet(classes.into_iter().collect())
    }

    pub fn insert(&mut self, class: usize) {
        self.0.insert(class);
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.contains(&class)
    }

    pub fn is_background(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union_with(&mut self, other: &LabelSet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn intersects(&self, other: &LabelSet) -> bool {
        self.0.iter().any(|c| other.0.contains(c))
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&c| c >= classes) {
            return Err(Error::Validation(format!(
                "label class {bad} out of range [0, {classes})"
            )));
        }
        Ok(())
    }
}

/// One modality of one video: `T` embeddings of uniform dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSequence {
    pub modality: Modality,
    pub embeddings: Vec<Vec<f64>>,
}

impl ModalSequence {
    pub fn new(modality: Modality, embeddings: Vec<Vec<f64>>) -> Self {
        ModalSequence {
            modality,
            embeddings,
        }
    }

    pub fn validate(&self, segments: usize, dim: usize) -> Result<()> {
        if self.embeddings.len() != segments {
            return Err(Error::DimMismatch(format!(
                "{:?} sequence has {} segments, expected {segments}",
                self.modality,
                self.embeddings.len()
            )));
        }
        for (t, row) in self.embeddings.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch(format!(
                    "{:?} segment {t} has dimension {}, expected {dim}",
                    self.modality,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{:?} segment {t} contains {bad}",
                    self.modality
                )));
            }
        }
        Ok(())
    }
}

/// Paired audio/visual sequences, weak video-level labels, and the
/// per-segment ground truth used only for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    pub id: String,
    pub audio: ModalSequence,
    pub visual: ModalSequence,
    pub seg_labels_audio: Vec<LabelSet>,
    pub seg_labels_visual: Vec<LabelSet>,
    pub video_labels: LabelSet,
}

impl VideoSample {
    pub fn seg_labels(&self, modality: Modality) -> &[LabelSet] {
        match modality {
            Modality::Audio => &self.seg_labels_audio,
            Modality::Visual => &self.seg_labels_visual,
        }
    }

    pub fn validate(&self, classes: usize, segments: usize, dim_a: usize, dim_v: usize) -> Result<()> {
        self.audio.validate(segments, dim_a)?;
        self.visual.validate(segments, dim_v)?;
        if self.seg_labels_audio.len() != segments || self.seg_labels_visual.len() != segments {
            return Err(Error::Validation(format!(
                "sample {}: segment label tracks must have length {segments}",
                self.id
            )));
        }
        let mut union = LabelSet::new();
        for ls in self.seg_labels_audio.iter().chain(&self.seg_labels_visual) {
            ls.validate(classes)?;
            union.union_with(ls);
        }
        self.video_labels.validate(classes)?;
        if union != self.video_labels {
            return Err(Error::Validation(format!(
                "sample {}: video labels must equal the union of segment labels",
                self.id
            )));
        }
        Ok(())
    }
}

/// Maximal run of consecutive positive segments for one class on one track.
/// `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInterval {
    pub class: usize,
    pub track: Track,
    pub start: usize,
    pub end: usize,
}

impl EventInterval {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iou(&self, other: &EventInterval) -> f64 {
        let inter_start = self.start.max(other.start);
        let inter_end = self.end.min(other.end);
        let inter = if inter_start > inter_end {
            0
        } else {
            inter_end - inter_start + 1
        };
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

/// Decomposes a segment mask into maximal runs of consecutive positives.
pub fn extract_events(mask: &[bool], class: usize, track: Track) -> Vec<EventInterval> {
    let mut events = Vec::new();
    let mut start = None;
    for (t, &on) in mask.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                events.push(EventInterval {
                    class,
                    track,
                    start: s,
                    end: t - 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push(EventInterval {
            class,
            track,
            start: s,
            end: mask.len() - 1,
        });
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<VideoSample>,
    pub classes: usize,
    pub segments: usize,
    pub dim_audio: usize,
    pub dim_visual: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            s.validate(self.classes, self.segments, self.dim_audio, self.dim_visual)?;
        }
        Ok(())
    }

    fn with_samples(&self, samples: Vec<VideoSample>) -> Dataset {
        Dataset {
            samples,
            classes: self.classes,
            segments: self.segments,
            dim_audio: self.dim_audio,
            dim_visual: self.dim_visual,
        }
    }
}

/// Deterministic three-way split. Fractions must be positive and sum to 1;
/// sizes come from floors plus largest-remainder rounding.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|&f| f <= 0.0) {
        return Err(Error::Validation(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 samples to form 3 splits, got {n}"
        )));
    }

    let mut sizes = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(3);
    for (i, &f) in fractions.iter().enumerate() {
        let exact = f * n as f64;
        sizes[i] = exact.floor() as usize;
        remainders.push((i, exact - exact.floor()));
    }
    let mut leftover = n - sizes.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in &remainders {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Vec<VideoSample> {
        order[range].iter().map(|&i| dataset.samples[i].clone()).collect()
    };
    let a = sizes[0];
    let b = sizes[0] + sizes[1];
    Ok((
        dataset.with_samples(take(0..a)),
        dataset.with_samples(take(a..b)),
        dataset.with_samples(take(b..n)),
    ))
}
