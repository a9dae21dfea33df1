//! Brute-force oracles, implemented independently of the library paths
//! they check. Counting and ranking are written as plain enumeration; the
//! cosine formula `dot / (norm * norm)` matches the stated metric contract
//! so that equality can be exact.

use mtsc::data::{Dataset, LabelSet};
use mtsc::metrics::{AlignmentItem, VideoPredictions};

pub struct OracleParsingLevel {
    pub audio: f64,
    pub visual: f64,
    pub audio_visual: f64,
    pub type_at_av: f64,
    pub event_at_av: f64,
}

fn f_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-track activity of one (video, segment, class) triple.
fn activity(
    pred: &VideoPredictions,
    sample: &mtsc::data::VideoSample,
    t: usize,
    c: usize,
) -> [(bool, bool); 3] {
    let pa = pred.audio[t][c];
    let pv = pred.visual[t][c];
    let ga = sample.seg_labels_audio[t].contains(c);
    let gv = sample.seg_labels_visual[t].contains(c);
    [(pa, ga), (pv, gv), (pa && pv, ga && gv)]
}

pub fn oracle_segment_scores(preds: &[VideoPredictions], truth: &Dataset) -> OracleParsingLevel {
    let mut counts = [[0usize; 3]; 3]; // [track][tp, fp, fn]
    for (pred, sample) in preds.iter().zip(&truth.samples) {
        for t in 0..truth.segments {
            for c in 0..truth.classes {
                for (track, (p, g)) in activity(pred, sample, t, c).into_iter().enumerate() {
                    match (p, g) {
                        (true, true) => counts[track][0] += 1,
                        (true, false) => counts[track][1] += 1,
                        (false, true) => counts[track][2] += 1,
                        (false, false) => {}
                    }
                }
            }
        }
    }
    let f = |t: usize| f_score(counts[t][0], counts[t][1], counts[t][2]);
    OracleParsingLevel {
        audio: f(0),
        visual: f(1),
        audio_visual: f(2),
        type_at_av: (f(0) + f(1) + f(2)) / 3.0,
        event_at_av: f_score(
            counts[0][0] + counts[1][0],
            counts[0][1] + counts[1][1],
            counts[0][2] + counts[1][2],
        ),
    }
}

/// Maximal runs of `true`, re-derived with an index scan.
fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < mask.len() {
        if mask[t] {
            let start = t;
            while t + 1 < mask.len() && mask[t + 1] {
                t += 1;
            }
            out.push((start, t));
        }
        t += 1;
    }
    out
}

fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter_lo = a.0.max(b.0);
    let inter_hi = a.1.min(b.1);
    let inter = if inter_lo > inter_hi { 0 } else { inter_hi - inter_lo + 1 };
    let len = |x: (usize, usize)| x.1 - x.0 + 1;
    inter as f64 / (len(a) + len(b) - inter) as f64
}

pub fn oracle_event_scores(
    preds: &[VideoPredictions],
    truth: &Dataset,
    threshold: f64,
) -> OracleParsingLevel {
    let mut counts = [[0usize; 3]; 3];
    for (pred, sample) in preds.iter().zip(&truth.samples) {
        for c in 0..truth.classes {
            for track in 0..3 {
                let mut pred_mask = Vec::new();
                let mut gt_mask = Vec::new();
                for t in 0..truth.segments {
                    let (p, g) = activity(pred, sample, t, c)[track];
                    pred_mask.push(p);
                    gt_mask.push(g);
                }
                let pred_events = runs(&pred_mask);
                let gt_events = runs(&gt_mask);

                // All pairs above threshold, greedy in descending IoU with
                // ties by earlier predicted then ground-truth start.
                let mut pairs = Vec::new();
                for (pi, &pe) in pred_events.iter().enumerate() {
                    for (gi, &ge) in gt_events.iter().enumerate() {
                        let iou = interval_iou(pe, ge);
                        if iou >= threshold {
                            pairs.push((iou, pi, gi));
                        }
                    }
                }
                pairs.sort_by(|x, y| {
                    y.0.partial_cmp(&x.0)
                        .unwrap()
                        .then(pred_events[x.1].0.cmp(&pred_events[y.1].0))
                        .then(gt_events[x.2].0.cmp(&gt_events[y.2].0))
                });
                let mut pu = vec![false; pred_events.len()];
                let mut gu = vec![false; gt_events.len()];
                let mut tp = 0;
                for (_, pi, gi) in pairs {
                    if !pu[pi] && !gu[gi] {
                        pu[pi] = true;
                        gu[gi] = true;
                        tp += 1;
                    }
                }
                counts[track][0] += tp;
                counts[track][1] += pred_events.len() - tp;
                counts[track][2] += gt_events.len() - tp;
            }
        }
    }
    let f = |t: usize| f_score(counts[t][0], counts[t][1], counts[t][2]);
    OracleParsingLevel {
        audio: f(0),
        visual: f(1),
        audio_visual: f(2),
        type_at_av: (f(0) + f(1) + f(2)) / 3.0,
        event_at_av: f_score(
            counts[0][0] + counts[1][0],
            counts[0][1] + counts[1][1],
            counts[0][2] + counts[1][2],
        ),
    }
}

pub struct OracleAlignment {
    pub recall_top1_cross: f64,
    pub recall_top1_uni_audio: f64,
    pub recall_top1_uni_visual: f64,
    pub distinguish: f64,
    pub distinguish_alt: f64,
    pub precision: f64,
}

struct Seg<'a> {
    video: &'a str,
    index: usize,
    feat: &'a [f64],
    labels: &'a LabelSet,
}

fn segments(items: &[AlignmentItem], audio: bool) -> Vec<Seg<'_>> {
    let mut out = Vec::new();
    for item in items {
        let (feats, labels) = if audio {
            (&item.audio_features, &item.labels_audio)
        } else {
            (&item.visual_features, &item.labels_visual)
        };
        for (i, f) in feats.iter().enumerate() {
            out.push(Seg {
                video: &item.video,
                index: i,
                feat: f,
                labels: &labels[i],
            });
        }
    }
    out
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// Sorts the whole pool for every query; no shared machinery with the
/// implementation under test.
fn full_sort<'a>(query: &Seg<'_>, pool: &'a [Seg<'a>], skip_self: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len())
        .filter(|&i| !(skip_self && pool[i].video == query.video && pool[i].index == query.index))
        .collect();
    order.sort_by(|&a, &b| {
        let sa = cosine(query.feat, pool[a].feat);
        let sb = cosine(query.feat, pool[b].feat);
        sb.partial_cmp(&sa)
            .unwrap()
            .then(pool[a].video.cmp(pool[b].video))
            .then(pool[a].index.cmp(&pool[b].index))
    });
    order
}

pub fn oracle_alignment(items: &[AlignmentItem]) -> OracleAlignment {
    let audio = segments(items, true);
    let visual = segments(items, false);

    let mut recall_hits = 0usize;
    let mut labeled = 0usize;
    let mut alt_hits = 0usize;
    let mut distinguish_hits = 0usize;
    let mut precision_sum = 0.0;
    let mut precision_n = 0usize;
    for q in &audio {
        let order = full_sort(q, &visual, false);
        let top = &visual[order[0]];
        if top.labels.is_background() == q.labels.is_background() {
            distinguish_hits += 1;
        }
        if q.labels.is_background() {
            continue;
        }
        labeled += 1;
        if q.labels.intersects(top.labels) {
            recall_hits += 1;
        }
        if !top.labels.is_background() {
            alt_hits += 1;
        }
        let m: usize = visual.iter().filter(|t| q.labels.intersects(t.labels)).count();
        if m > 0 {
            let hits = order[..m]
                .iter()
                .filter(|&&i| q.labels.intersects(visual[i].labels))
                .count();
            precision_sum += hits as f64 / m as f64;
            precision_n += 1;
        }
    }

    let uni = |pool: &[Seg<'_>]| {
        let mut hits = 0usize;
        let mut n = 0usize;
        for q in pool {
            if q.labels.is_background() {
                continue;
            }
            n += 1;
            let order = full_sort(q, pool, true);
            if !order.is_empty() && q.labels.intersects(pool[order[0]].labels) {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    };

    OracleAlignment {
        recall_top1_cross: recall_hits as f64 / labeled as f64,
        recall_top1_uni_audio: uni(&audio),
        recall_top1_uni_visual: uni(&visual),
        distinguish: distinguish_hits as f64 / audio.len() as f64,
        distinguish_alt: alt_hits as f64 / labeled as f64,
        precision: precision_sum / precision_n.max(1) as f64,
    }
}
