//! Evaluation: corpus-wide alignment metrics on per-segment features, and
//! parsing quality as micro F-scores at segment and event level with the
//! Type@AV / Event@AV aggregates and their average.
//!
//! Cosine similarity here is always `dot(u, v) / (norm(u) * norm(v))` on
//! plain doubles; candidate rankings break ties by (video id, segment
//! index) ascending. The brute-force test oracles follow the same stated
//! contract, independently implemented.

use serde::{Deserialize, Serialize};

use crate::data::{extract_events, Dataset, EventInterval, LabelSet, Track};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

// ---------------------------------------------------------------------------
// Parsing metrics
// ---------------------------------------------------------------------------

/// Thresholded per-segment, per-class activity for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPredictions {
    pub id: String,
    /// `T x C` booleans.
    pub audio: Vec<Vec<bool>>,
    pub visual: Vec<Vec<bool>>,
}

impl VideoPredictions {
    pub fn from_probs(
        id: impl Into<String>,
        audio: &[Vec<f64>],
        visual: &[Vec<f64>],
        threshold: f64,
    ) -> Self {
        let cut = |m: &[Vec<f64>]| {
            m.iter()
                .map(|row| row.iter().map(|&p| p >= threshold).collect())
                .collect()
        };
        VideoPredictions {
            id: id.into(),
            audio: cut(audio),
            visual: cut(visual),
        }
    }
}

pub const PREDICTION_THRESHOLD: f64 = 0.5;

/// Runs the model over a split and thresholds the segment probabilities.
pub fn model_predictions(params: &ModelParams, dataset: &Dataset) -> Result<Vec<VideoPredictions>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let out = forward(params, s)?;
            Ok(VideoPredictions::from_probs(
                &s.id,
                &out.seg_probs_audio,
                &out.seg_probs_visual,
                PREDICTION_THRESHOLD,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackScores {
    pub audio: f64,
    pub visual: f64,
    pub audio_visual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsingLevel {
    pub tracks: TrackScores,
    /// Unweighted mean of the three track F-scores.
    pub type_at_av: f64,
    /// One micro F pooling the audio and visual instances together.
    pub event_at_av: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsingReport {
    pub segment: ParsingLevel,
    pub event: ParsingLevel,
    /// Mean of the segment-level and event-level Type@AV.
    pub average_score: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn merge(self, other: Counts) -> Counts {
        Counts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Micro F-score; an empty problem (no positives anywhere) counts as
    /// perfect agreement.
    fn f_score(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn level_from_counts(audio: Counts, visual: Counts, av: Counts) -> ParsingLevel {
    let tracks = TrackScores {
        audio: audio.f_score(),
        visual: visual.f_score(),
        audio_visual: av.f_score(),
    };
    ParsingLevel {
        tracks,
        type_at_av: (tracks.audio + tracks.visual + tracks.audio_visual) / 3.0,
        event_at_av: audio.merge(visual).f_score(),
    }
}

fn validate_predictions(predictions: &[VideoPredictions], truth: &Dataset) -> Result<()> {
    if predictions.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions for {} videos",
            predictions.len(),
            truth.len()
        )));
    }
    for (p, s) in predictions.iter().zip(&truth.samples) {
        if p.id != s.id {
            return Err(Error::Validation(format!(
                "prediction order mismatch: {} vs {}",
                p.id, s.id
            )));
        }
        for m in [&p.audio, &p.visual] {
            if m.len() != truth.segments || m.iter().any(|row| row.len() != truth.classes) {
                return Err(Error::DimMismatch(format!(
                    "prediction for {} must be {} x {}",
                    p.id, truth.segments, truth.classes
                )));
            }
        }
    }
    Ok(())
}

fn track_masks(
    pred: &VideoPredictions,
    sample: &crate::data::VideoSample,
    class: usize,
    track: Track,
    segments: usize,
) -> (Vec<bool>, Vec<bool>) {
    let gt_a = |t: usize| sample.seg_labels_audio[t].contains(class);
    let gt_v = |t: usize| sample.seg_labels_visual[t].contains(class);
    match track {
        Track::Audio => (
            (0..segments).map(|t| pred.audio[t][class]).collect(),
            (0..segments).map(gt_a).collect(),
        ),
        Track::Visual => (
            (0..segments).map(|t| pred.visual[t][class]).collect(),
            (0..segments).map(gt_v).collect(),
        ),
        Track::AudioVisual => (
            (0..segments)
                .map(|t| pred.audio[t][class] && pred.visual[t][class])
                .collect(),
            (0..segments).map(|t| gt_a(t) && gt_v(t)).collect(),
        ),
    }
}

/// Micro F over (video, segment, class) triples, per track, plus aggregates.
pub fn segment_f_scores(
    predictions: &[VideoPredictions],
    truth: &Dataset,
) -> Result<ParsingLevel> {
    validate_predictions(predictions, truth)?;
    let mut counts = [Counts::default(); 3];
    for (pred, sample) in predictions.iter().zip(&truth.samples) {
        for class in 0..truth.classes {
            for (slot, track) in Track::ALL.into_iter().enumerate() {
                let (p, g) = track_masks(pred, sample, class, track, truth.segments);
                for t in 0..truth.segments {
                    counts[slot].add(p[t], g[t]);
                }
            }
        }
    }
    Ok(level_from_counts(counts[0], counts[1], counts[2]))
}

/// Greedy event matching in descending IoU, ties by earlier predicted then
/// ground-truth start. A pair matches when IoU >= the threshold.
fn match_events(preds: &[EventInterval], gts: &[EventInterval], threshold: f64) -> Counts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let iou = p.iou(g);
            if iou >= threshold {
                pairs.push((iou, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| preds[a.1].start.cmp(&preds[b.1].start))
            .then_with(|| gts[a.2].start.cmp(&gts[b.2].start))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut tp = 0usize;
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
    }
}

/// Event-level micro F: events are maximal runs per (video, class, track);
/// a predicted event is a true positive when it IoU-matches an unmatched
/// ground-truth event of the same (video, class, track).
pub fn event_f_scores(
    predictions: &[VideoPredictions],
    truth: &Dataset,
    miou_threshold: f64,
) -> Result<ParsingLevel> {
    validate_predictions(predictions, truth)?;
    let mut counts = [Counts::default(); 3];
    for (pred, sample) in predictions.iter().zip(&truth.samples) {
        for class in 0..truth.classes {
            for (slot, track) in Track::ALL.into_iter().enumerate() {
                let (p, g) = track_masks(pred, sample, class, track, truth.segments);
                let pred_events = extract_events(&p, class, track);
                let gt_events = extract_events(&g, class, track);
                counts[slot] =
                    counts[slot].merge(match_events(&pred_events, &gt_events, miou_threshold));
            }
        }
    }
    Ok(level_from_counts(counts[0], counts[1], counts[2]))
}

/// Arithmetic mean of a segment-level and an event-level aggregate.
pub fn average_score(segment_aggregate: f64, event_aggregate: f64) -> f64 {
    (segment_aggregate + event_aggregate) / 2.0
}

pub const DEFAULT_MIOU: f64 = 0.5;

pub fn parsing_report(
    predictions: &[VideoPredictions],
    truth: &Dataset,
    miou_threshold: f64,
) -> Result<ParsingReport> {
    let segment = segment_f_scores(predictions, truth)?;
    let event = event_f_scores(predictions, truth, miou_threshold)?;
    Ok(ParsingReport {
        segment,
        event,
        average_score: average_score(segment.type_at_av, event.type_at_av),
    })
}

/// Forward + threshold + parsing report in one call.
pub fn evaluate_model(params: &ModelParams, dataset: &Dataset) -> Result<ParsingReport> {
    let predictions = model_predictions(params, dataset)?;
    parsing_report(&predictions, dataset, DEFAULT_MIOU)
}

impl ParsingReport {
    /// Fixed column order: type, segment_f, event_f.
    pub fn to_csv(&self) -> String {
        let row = |name: &str, s: f64, e: f64| format!("{name},{s},{e}\n");
        let mut out = String::from("type,segment_f,event_f\n");
        out.push_str(&row("audio", self.segment.tracks.audio, self.event.tracks.audio));
        out.push_str(&row("visual", self.segment.tracks.visual, self.event.tracks.visual));
        out.push_str(&row(
            "audio_visual",
            self.segment.tracks.audio_visual,
            self.event.tracks.audio_visual,
        ));
        out.push_str(&row("type_at_av", self.segment.type_at_av, self.event.type_at_av));
        out.push_str(&row("event_at_av", self.segment.event_at_av, self.event.event_at_av));
        out
    }
}

/// Which scalar the selector reads off a parsing report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    SegmentTypeAv,
    EventTypeAv,
    AverageScore,
}

impl Default for SelectionMetric {
    fn default() -> Self {
        SelectionMetric::SegmentTypeAv
    }
}

pub fn selection_score(report: &ParsingReport, metric: SelectionMetric) -> f64 {
    match metric {
        SelectionMetric::SegmentTypeAv => report.segment.type_at_av,
        SelectionMetric::EventTypeAv => report.event.type_at_av,
        SelectionMetric::AverageScore => report.average_score,
    }
}

// ---------------------------------------------------------------------------
// Alignment metrics
// ---------------------------------------------------------------------------

/// Per-video feature sequences plus segment labels for alignment search.
#[derive(Debug, Clone)]
pub struct AlignmentItem {
    pub video: String,
    pub audio_features: Vec<Vec<f64>>,
    pub visual_features: Vec<Vec<f64>>,
    pub labels_audio: Vec<LabelSet>,
    pub labels_visual: Vec<LabelSet>,
}

/// The raw dataset embeddings as alignment features.
pub fn raw_alignment_items(dataset: &Dataset) -> Vec<AlignmentItem> {
    dataset
        .samples
        .iter()
        .map(|s| AlignmentItem {
            video: s.id.clone(),
            audio_features: s.audio.embeddings.clone(),
            visual_features: s.visual.embeddings.clone(),
            labels_audio: s.seg_labels_audio.clone(),
            labels_visual: s.seg_labels_visual.clone(),
        })
        .collect()
}

/// Post-encoder features as alignment features.
pub fn encoded_alignment_items(
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<Vec<AlignmentItem>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let out = forward(params, s)?;
            Ok(AlignmentItem {
                video: s.id.clone(),
                audio_features: out.encoded_audio,
                visual_features: out.encoded_visual,
                labels_audio: s.seg_labels_audio.clone(),
                labels_visual: s.seg_labels_visual.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentOptions {
    /// Average the audio->visual metrics with the visual->audio direction.
    pub symmetrize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Labeled queries whose most similar cross-modal segment shares a class.
    pub recall_top1_cross: f64,
    /// Same within the audio modality (excluding the query itself).
    pub recall_top1_uni_audio: f64,
    pub recall_top1_uni_visual: f64,
    /// All queries whose top cross-modal match has the same background status.
    pub distinguish: f64,
    /// Labeled queries whose top cross-modal match is labeled at all.
    pub distinguish_alt: f64,
    /// Match fraction among each labeled query's M_q most similar
    /// cross-modal segments, where M_q is the number of matching segments
    /// in the corpus; equals recall at that cutoff by construction.
    pub precision: f64,
    pub labeled_queries: usize,
    pub total_queries: usize,
}

struct Segment<'a> {
    video: &'a str,
    index: usize,
    features: &'a [f64],
    labels: &'a LabelSet,
}

fn collect_segments<'a>(
    items: &'a [AlignmentItem],
    audio: bool,
) -> Result<Vec<Segment<'a>>> {
    let mut out = Vec::new();
    for item in items {
        let (features, labels) = if audio {
            (&item.audio_features, &item.labels_audio)
        } else {
            (&item.visual_features, &item.labels_visual)
        };
        if features.len() != labels.len() {
            return Err(Error::DimMismatch(format!(
                "video {}: {} feature rows vs {} label rows",
                item.video,
                features.len(),
                labels.len()
            )));
        }
        for (t, row) in features.iter().enumerate() {
            out.push(Segment {
                video: &item.video,
                index: t,
                features: row,
                labels: &labels[t],
            });
        }
    }
    Ok(out)
}

fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("alignment feature row".into()));
    }
    Ok(dot / (nu * nv))
}

/// Indices of `pool` sorted by similarity to `query` descending, ties by
/// (video id, segment index) ascending. `skip` removes one pool entry.
fn ranked_candidates(
    query: &Segment<'_>,
    pool: &[Segment<'_>],
    skip_self: bool,
) -> Result<Vec<usize>> {
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for (i, cand) in pool.iter().enumerate() {
        if skip_self && cand.video == query.video && cand.index == query.index {
            continue;
        }
        if cand.features.len() != query.features.len() {
            return Err(Error::DimMismatch(format!(
                "alignment feature dims differ: {} vs {}",
                cand.features.len(),
                query.features.len()
            )));
        }
        scored.push((cosine(query.features, cand.features)?, i));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| pool[a.1].video.cmp(pool[b.1].video))
            .then_with(|| pool[a.1].index.cmp(&pool[b.1].index))
    });
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

struct DirectionScores {
    recall_top1_cross: f64,
    distinguish: f64,
    distinguish_alt: f64,
    precision: f64,
    labeled_queries: usize,
    total_queries: usize,
}

/// One retrieval direction: every query-side segment against the whole
/// target-side corpus.
fn direction_metrics(
    queries: &[Segment<'_>],
    targets: &[Segment<'_>],
) -> Result<DirectionScores> {
    let labeled: Vec<&Segment> = queries.iter().filter(|q| !q.labels.is_background()).collect();
    if labeled.is_empty() {
        return Err(Error::Validation("no labeled query segments".into()));
    }

    let mut recall_hits = 0usize;
    let mut alt_hits = 0usize;
    let mut precision_sum = 0.0;
    let mut precision_queries = 0usize;
    let mut distinguish_hits = 0usize;

    for query in queries {
        let ranked = ranked_candidates(query, targets, false)?;
        let top = &targets[ranked[0]];
        if top.labels.is_background() == query.labels.is_background() {
            distinguish_hits += 1;
        }
        if query.labels.is_background() {
            continue;
        }
        if query.labels.intersects(top.labels) {
            recall_hits += 1;
        }
        if !top.labels.is_background() {
            alt_hits += 1;
        }
        let matching = targets.iter().filter(|t| query.labels.intersects(t.labels)).count();
        if matching > 0 {
            let hits = ranked[..matching]
                .iter()
                .filter(|&&i| query.labels.intersects(targets[i].labels))
                .count();
            precision_sum += hits as f64 / matching as f64;
            precision_queries += 1;
        }
    }

    Ok(DirectionScores {
        recall_top1_cross: recall_hits as f64 / labeled.len() as f64,
        distinguish: distinguish_hits as f64 / queries.len() as f64,
        distinguish_alt: alt_hits as f64 / labeled.len() as f64,
        precision: precision_sum / precision_queries.max(1) as f64,
        labeled_queries: labeled.len(),
        total_queries: queries.len(),
    })
}

/// Unimodal recall-top1: labeled queries against all other same-modality
/// segments, excluding the query segment itself.
fn unimodal_recall(segments: &[Segment<'_>]) -> Result<f64> {
    let mut hits = 0usize;
    let mut labeled = 0usize;
    for query in segments {
        if query.labels.is_background() {
            continue;
        }
        labeled += 1;
        let ranked = ranked_candidates(query, segments, true)?;
        if ranked
            .first()
            .is_some_and(|&i| query.labels.intersects(segments[i].labels))
        {
            hits += 1;
        }
    }
    if labeled == 0 {
        return Err(Error::Validation("no labeled query segments".into()));
    }
    Ok(hits as f64 / labeled as f64)
}

pub fn alignment_metrics(
    items: &[AlignmentItem],
    options: &AlignmentOptions,
) -> Result<AlignmentReport> {
    let audio = collect_segments(items, true)?;
    let visual = collect_segments(items, false)?;
    if audio.is_empty() || visual.is_empty() {
        return Err(Error::Validation("empty alignment corpus".into()));
    }

    let forward = direction_metrics(&audio, &visual)?;
    let (cross, distinguish, distinguish_alt, precision, labeled, total) = if options.symmetrize {
        let backward = direction_metrics(&visual, &audio)?;
        (
            (forward.recall_top1_cross + backward.recall_top1_cross) / 2.0,
            (forward.distinguish + backward.distinguish) / 2.0,
            (forward.distinguish_alt + backward.distinguish_alt) / 2.0,
            (forward.precision + backward.precision) / 2.0,
            forward.labeled_queries + backward.labeled_queries,
            forward.total_queries + backward.total_queries,
        )
    } else {
        (
            forward.recall_top1_cross,
            forward.distinguish,
            forward.distinguish_alt,
            forward.precision,
            forward.labeled_queries,
            forward.total_queries,
        )
    };

    Ok(AlignmentReport {
        recall_top1_cross: cross,
        recall_top1_uni_audio: unimodal_recall(&audio)?,
        recall_top1_uni_visual: unimodal_recall(&visual)?,
        distinguish,
        distinguish_alt,
        precision,
        labeled_queries: labeled,
        total_queries: total,
    })
}
