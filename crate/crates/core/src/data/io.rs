//! Dataset files: one JSON-lines file per split plus a `manifest.json`.
//!
//! Records carry a fixed key order (id, audio, visual, seg_labels_audio,
//! seg_labels_visual, video_labels) and floats at 9 significant digits, so
//! saving the same dataset twice produces byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet, ModalSequence, Modality, VideoSample};
use crate::error::{Error, Result};

/// Formats with 9 significant digits; parsing the result back is the
/// canonical quantization.
pub fn fmt_f64_sig9(x: f64) -> String {
    if x == 0.0 {
        "0.0".to_string()
    } else {
        format!("{x:.8e}")
    }
}

pub fn quantize_sig9(x: f64) -> f64 {
    fmt_f64_sig9(x).parse().expect("sig9 format round-trips")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub segments: usize,
    pub dim_audio: usize,
    pub dim_visual: usize,
    pub seed: u64,
    /// Generator configuration as written by `gen`; opaque here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    /// Split name -> file name, e.g. "train" -> "train.jsonl".
    pub splits: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    audio: Vec<Vec<f64>>,
    visual: Vec<Vec<f64>>,
    seg_labels_audio: Vec<Vec<usize>>,
    seg_labels_visual: Vec<Vec<usize>>,
    video_labels: Vec<usize>,
}

fn write_matrix(out: &mut String, m: &[Vec<f64>]) -> Result<()> {
    out.push('[');
    for (i, row) in m.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, &x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("embedding value {x}")));
            }
            out.push_str(&fmt_f64_sig9(x));
        }
        out.push(']');
    }
    out.push(']');
    Ok(())
}

fn write_label_sets(out: &mut String, sets: &[LabelSet]) {
    out.push('[');
    for (i, ls) in sets.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_label_set(out, ls);
    }
    out.push(']');
}

fn write_label_set(out: &mut String, ls: &LabelSet) {
    out.push('[');
    for (i, c) in ls.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{c}");
    }
    out.push(']');
}

fn sample_line(sample: &VideoSample) -> Result<String> {
    let mut line = String::new();
    let _ = write!(
        line,
        "{{\"id\":{},\"audio\":",
        serde_json::to_string(&sample.id).expect("string serializes")
    );
    write_matrix(&mut line, &sample.audio.embeddings)?;
    line.push_str(",\"visual\":");
    write_matrix(&mut line, &sample.visual.embeddings)?;
    line.push_str(",\"seg_labels_audio\":");
    write_label_sets(&mut line, &sample.seg_labels_audio);
    line.push_str(",\"seg_labels_visual\":");
    write_label_sets(&mut line, &sample.seg_labels_visual);
    line.push_str(",\"video_labels\":");
    write_label_set(&mut line, &sample.video_labels);
    line.push('}');
    Ok(line)
}

/// Writes one split to a JSON-lines file.
pub fn write_split_file(path: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for sample in &dataset.samples {
        let line = sample_line(sample)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Writes named splits plus the manifest into `dir`.
pub fn write_dataset_dir(
    dir: &Path,
    splits: &[(&str, &Dataset)],
    seed: u64,
    generator: Option<serde_json::Value>,
) -> Result<()> {
    let first = splits
        .first()
        .ok_or_else(|| Error::Validation("no splits to write".into()))?
        .1;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeMap::new();
    for (name, ds) in splits {
        if (ds.classes, ds.segments, ds.dim_audio, ds.dim_visual)
            != (first.classes, first.segments, first.dim_audio, first.dim_visual)
        {
            return Err(Error::Validation(format!(
                "split {name} disagrees with the manifest dimensions"
            )));
        }
        let file = format!("{name}.jsonl");
        write_split_file(&dir.join(&file), ds)?;
        names.insert(name.to_string(), file);
    }
    let manifest = Manifest {
        classes: first.classes,
        segments: first.segments,
        dim_audio: first.dim_audio,
        dim_visual: first.dim_visual,
        seed,
        generator,
        splits: names,
    };
    write_manifest(dir, &manifest)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Parse {
        line: e.line(),
        detail: format!("manifest.json: {e}"),
    })
}

/// Loads one named split of a dataset directory.
pub fn load_split(dir: &Path, split: &str) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let file = manifest.splits.get(split).ok_or_else(|| {
        Error::Validation(format!(
            "split {split:?} not in manifest (has: {:?})",
            manifest.splits.keys().collect::<Vec<_>>()
        ))
    })?;
    load_split_file(&dir.join(file), &manifest)
}

pub fn load_split_file(path: &Path, manifest: &Manifest) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        samples.push(VideoSample {
            id: record.id,
            audio: ModalSequence::new(Modality::Audio, record.audio),
            visual: ModalSequence::new(Modality::Visual, record.visual),
            seg_labels_audio: record
                .seg_labels_audio
                .into_iter()
                .map(LabelSet::from_classes)
                .collect(),
            seg_labels_visual: record
                .seg_labels_visual
                .into_iter()
                .map(LabelSet::from_classes)
                .collect(),
            video_labels: LabelSet::from_classes(record.video_labels),
        });
    }
    let dataset = Dataset {
        samples,
        classes: manifest.classes,
        segments: manifest.segments,
        dim_audio: manifest.dim_audio,
        dim_visual: manifest.dim_visual,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_dataset() -> Dataset {
        let emb_a = vec![vec![0.125, -3.0], vec![1.0 / 3.0, 2e-7]];
        let emb_v = vec![vec![9.87654321e8, 1.0], vec![-0.5, 42.0]];
        let samples = vec![VideoSample {
            id: "v0000".into(),
            audio: ModalSequence::new(Modality::Audio, emb_a.iter().map(|r| r.iter().map(|&x| quantize_sig9(x)).collect()).collect()),
            visual: ModalSequence::new(Modality::Visual, emb_v.iter().map(|r| r.iter().map(|&x| quantize_sig9(x)).collect()).collect()),
            seg_labels_audio: vec![LabelSet::from_classes([0, 2]), LabelSet::new()],
            seg_labels_visual: vec![LabelSet::new(), LabelSet::from_classes([1])],
            video_labels: LabelSet::from_classes([0, 1, 2]),
        }];
        Dataset {
            samples,
            classes: 3,
            segments: 2,
            dim_audio: 2,
            dim_visual: 2,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        write_dataset_dir(dir.path(), &[("train", &ds)], 7, None).unwrap();
        let back = load_split(dir.path(), "train").unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn two_saves_are_byte_identical() {
        let ds = sample_dataset();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        write_dataset_dir(da.path(), &[("train", &ds)], 7, None).unwrap();
        write_dataset_dir(db.path(), &[("train", &ds)], 7, None).unwrap();
        let a = fs::read(da.path().join("train.jsonl")).unwrap();
        let b = fs::read(db.path().join("train.jsonl")).unwrap();
        assert_eq!(a, b);
        let ma = fs::read(da.path().join("manifest.json")).unwrap();
        let mb = fs::read(db.path().join("manifest.json")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        write_dataset_dir(dir.path(), &[("train", &ds)], 7, None).unwrap();
        // Strip the "visual" field from the only record.
        let path = dir.path().join("train.jsonl");
        let line = fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        v.as_object_mut().unwrap().remove("visual");
        fs::write(&path, serde_json::to_string(&v).unwrap() + "\n").unwrap();
        let manifest = read_manifest(dir.path()).unwrap();
        match load_split_file(&path, &manifest) {
            Err(Error::Parse { line, detail }) => {
                assert_eq!(line, 1);
                assert!(detail.contains("visual"), "detail was: {detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        write_dataset_dir(dir.path(), &[("train", &ds)], 7, None).unwrap();

        let mut manifest = read_manifest(dir.path()).unwrap();
        manifest.dim_audio = 5;
        match load_split_file(&dir.path().join("train.jsonl"), &manifest) {
            Err(Error::DimMismatch(_)) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn sig9_quantized_values_round_trip(x in -1e12f64..1e12) {
            let q = quantize_sig9(x);
            prop_assert_eq!(quantize_sig9(q), q);
            let reparsed: f64 = fmt_f64_sig9(q).parse().unwrap();
            prop_assert_eq!(reparsed.to_bits(), q.to_bits());
            if x != 0.0 {
                prop_assert!(((q - x) / x).abs() < 1e-8);
            }
        }
    }
}
