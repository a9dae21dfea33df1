//! Acceptance suite. Each test prints one pass/fail line for its
//! criterion; `cargo test --test acceptance -- --nocapture` shows them.

mod oracle;

use std::process::Command;

use mtsc::accept::{
    criterion_alignment_gap, criterion_contrastive_improvements, criterion_gradients,
    criterion_protocol_consistency, criterion_schedule,
};
use mtsc::config::ExperimentConfig;
use mtsc::data::{Dataset, LabelSet, ModalSequence, Modality, VideoSample};
use mtsc::metrics::{
    alignment_metrics, event_f_scores, segment_f_scores, AlignmentItem, AlignmentOptions,
    VideoPredictions,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn default_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.resolve();
    config
}

fn report_line(id: u32, pass: bool, name: &str) {
    println!("criterion {id}: {} - {name}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_1_gradient_suite() {
    let outcome = criterion_gradients(&default_config()).unwrap();
    report_line(1, outcome.pass, &outcome.name);
    assert!(outcome.pass, "{}", outcome.details);
}

fn random_gt(rng: &mut ChaCha8Rng, videos: usize, segments: usize, classes: usize) -> Dataset {
    let samples = (0..videos)
        .map(|v| {
            let label_track = |rng: &mut ChaCha8Rng| -> Vec<LabelSet> {
                (0..segments)
                    .map(|_| {
                        LabelSet::from_classes(
                            (0..classes).filter(|_| rng.random_range(0..3) == 0),
                        )
                    })
                    .collect()
            };
            let seg_labels_audio = label_track(rng);
            let seg_labels_visual = label_track(rng);
            let mut video_labels = LabelSet::new();
            for ls in seg_labels_audio.iter().chain(&seg_labels_visual) {
                video_labels.union_with(ls);
            }
            let emb = |m| ModalSequence::new(m, vec![vec![1.0, 0.25]; segments]);
            VideoSample {
                id: format!("v{v:04}"),
                audio: emb(Modality::Audio),
                visual: emb(Modality::Visual),
                seg_labels_audio,
                seg_labels_visual,
                video_labels,
            }
        })
        .collect();
    Dataset {
        samples,
        classes,
        segments,
        dim_audio: 2,
        dim_visual: 2,
    }
}

fn random_predictions(rng: &mut ChaCha8Rng, truth: &Dataset) -> Vec<VideoPredictions> {
    truth
        .samples
        .iter()
        .map(|s| VideoPredictions {
            id: s.id.clone(),
            audio: (0..truth.segments)
                .map(|_| (0..truth.classes).map(|_| rng.random_range(0..2) == 0).collect())
                .collect(),
            visual: (0..truth.segments)
                .map(|_| (0..truth.classes).map(|_| rng.random_range(0..2) == 0).collect())
                .collect(),
        })
        .collect()
}

fn random_alignment_corpus(rng: &mut ChaCha8Rng) -> Vec<AlignmentItem> {
    let videos = rng.random_range(2..=4usize);
    let segments = rng.random_range(2..=5usize);
    let dim = rng.random_range(2..=4usize);
    let classes = 2usize;
    (0..videos)
        .map(|v| {
            let feats = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..segments)
                    .map(|_| {
                        (0..dim)
                            .map(|_| {
                                let x: f64 = rng.random_range(-1.0f64..1.0);
                                x + 0.2 * x.signum() + if x == 0.0 { 0.2 } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect()
            };
            let labels = |rng: &mut ChaCha8Rng, force_first: bool| -> Vec<LabelSet> {
                (0..segments)
                    .map(|t| {
                        let mut ls = LabelSet::from_classes(
                            (0..classes).filter(|_| rng.random_range(0..3) == 0),
                        );
                        if force_first && t == 0 && ls.is_background() {
                            ls.insert(0);
                        }
                        ls
                    })
                    .collect()
            };
            AlignmentItem {
                video: format!("v{v:04}"),
                audio_features: feats(rng),
                visual_features: feats(rng),
                labels_audio: labels(rng, v == 0),
                labels_visual: labels(rng, v == 0),
            }
        })
        .collect()
}

#[test]
fn criterion_2_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    for _ in 0..250 {
        let videos = rng.random_range(1..=3usize);
        let segments = rng.random_range(1..=4usize);
        let classes = rng.random_range(1..=2usize);
        let truth = random_gt(&mut rng, videos, segments, classes);
        let preds = random_predictions(&mut rng, &truth);

        let seg = segment_f_scores(&preds, &truth).unwrap();
        let oseg = oracle::oracle_segment_scores(&preds, &truth);
        assert_eq!(seg.tracks.audio, oseg.audio);
        assert_eq!(seg.tracks.visual, oseg.visual);
        assert_eq!(seg.tracks.audio_visual, oseg.audio_visual);
        assert_eq!(seg.type_at_av, oseg.type_at_av);
        assert_eq!(seg.event_at_av, oseg.event_at_av);

        let ev = event_f_scores(&preds, &truth, 0.5).unwrap();
        let oev = oracle::oracle_event_scores(&preds, &truth, 0.5);
        assert_eq!(ev.tracks.audio, oev.audio);
        assert_eq!(ev.tracks.visual, oev.visual);
        assert_eq!(ev.tracks.audio_visual, oev.audio_visual);
        assert_eq!(ev.type_at_av, oev.type_at_av);
        assert_eq!(ev.event_at_av, oev.event_at_av);
    }

    for _ in 0..60 {
        let corpus = random_alignment_corpus(&mut rng);
        let report = alignment_metrics(&corpus, &AlignmentOptions::default()).unwrap();
        let o = oracle::oracle_alignment(&corpus);
        assert_eq!(report.recall_top1_cross, o.recall_top1_cross);
        assert_eq!(report.recall_top1_uni_audio, o.recall_top1_uni_audio);
        assert_eq!(report.recall_top1_uni_visual, o.recall_top1_uni_visual);
        assert_eq!(report.distinguish, o.distinguish);
        assert_eq!(report.distinguish_alt, o.distinguish_alt);
        assert_eq!(report.precision, o.precision);
    }

    report_line(2, true, "segment/event/alignment metrics equal brute-force oracles");
}

#[test]
fn criterion_3_alignment_gap() {
    let outcome = criterion_alignment_gap(&default_config()).unwrap();
    report_line(3, outcome.pass, &outcome.name);
    assert!(outcome.pass, "{}", outcome.details);
}

#[test]
fn criterion_4_contrastive_improvements() {
    let started = std::time::Instant::now();
    let outcome = criterion_contrastive_improvements(&default_config()).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    report_line(4, outcome.pass, &outcome.name);
    assert!(outcome.pass, "{}", outcome.details);
    assert!(minutes < 30.0, "criterion 4 took {minutes:.1} minutes");
}

#[test]
fn criterion_5_protocol_consistency() {
    let started = std::time::Instant::now();
    let (outcome, _) = criterion_protocol_consistency(&default_config()).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    report_line(5, outcome.pass, &outcome.name);
    assert!(outcome.pass, "{}", outcome.details);
    assert!(minutes < 45.0, "criterion 5 took {minutes:.1} minutes");
}

#[test]
fn criterion_6_schedule_fidelity() {
    let outcome = criterion_schedule(&default_config()).unwrap();
    report_line(6, outcome.pass, &outcome.name);
    assert!(outcome.pass, "{}", outcome.details);
}

#[test]
fn criterion_7_reproduce_determinism() {
    let bin = env!("CARGO_BIN_EXE_mtsc");
    let base = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = base.path().join(name);
        let status = Command::new(bin)
            .args([
                "reproduce",
                "--seed",
                "11",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .expect("reproduce runs");
        assert!(
            status.code() == Some(0) || status.code() == Some(2),
            "unexpected exit {status:?}"
        );
        out
    };
    let a = run("a");
    let b = run("b");
    let read = |dir: &std::path::Path, file: &str| std::fs::read(dir.join(file)).unwrap();
    let pass = read(&a, "report.json") == read(&b, "report.json")
        && read(&a, "run.json") == read(&b, "run.json");
    report_line(7, pass, "reproduce is byte-deterministic under a fixed seed");
    assert!(pass, "reproduce reports differ between identical runs");
}
