//! Collocation selection: the traversal protocol (train on the train
//! split, pick the epoch by eval-split score, report the test-split score)
//! against the upper-bound protocol (train directly on the test split
//! with a plateau stop and report the test-split score — deliberate
//! overfitting as a fast comparator), plus the rank correlation between
//! the two orderings.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Dataset};
use crate::datagen::{generate_dataset, Collocation, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, selection_score, SelectionMetric};
use crate::model::ModelParams;
use crate::seeding::child_seed;
use crate::trainer::{train_with_observer, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Traversal,
    UpperBound,
}

#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train: Dataset,
    pub eval: Dataset,
    pub test: Dataset,
}

impl SplitSet {
    pub fn from_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitSet> {
        let (train, eval, test) = split_dataset(dataset, fractions, seed)?;
        Ok(SplitSet { train, eval, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub collocation: String,
    pub audio_family: String,
    pub visual_family: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub score: f64,
    pub seconds: f64,
}

/// Runs one protocol for one collocation's splits. Deterministic up to the
/// measured wall-clock.
pub fn run_protocol(
    collocation: &Collocation,
    splits: &SplitSet,
    protocol: Protocol,
    base_config: &TrainConfig,
    metric: SelectionMetric,
    seed: u64,
) -> Result<ProtocolResult> {
    let started = Instant::now();
    let mut config = base_config.clone();
    config.seed = seed;

    if splits.test.is_empty() {
        return Err(Error::Validation("protocol needs a nonempty test split".into()));
    }

    let score = match protocol {
        Protocol::Traversal => {
            if splits.train.is_empty() || splits.eval.is_empty() {
                return Err(Error::Validation(
                    "traversal protocol needs nonempty train and eval splits".into(),
                ));
            }
            config.early_stop = None;
            let mut best: Option<(f64, ModelParams)> = None;
            let mut observer_error: Option<Error> = None;
            let (final_params, _) = train_with_observer(&splits.train, &config, |_, params| {
                if observer_error.is_some() {
                    return;
                }
                match evaluate_model(params, &splits.eval) {
                    Ok(report) => {
                        let eval_score = selection_score(&report, metric);
                        let better = best
                            .as_ref()
                            .map(|(s, _)| eval_score > *s)
                            .unwrap_or(true);
                        if better {
                            best = Some((eval_score, params.clone()));
                        }
                    }
                    Err(e) => observer_error = Some(e),
                }
            })?;
            if let Some(e) = observer_error {
                return Err(e);
            }
            // With a zero-epoch budget there is nothing to select from;
            // score the untrained model.
            let chosen = best.map(|(_, p)| p).unwrap_or(final_params);
            selection_score(&evaluate_model(&chosen, &splits.test)?, metric)
        }
        Protocol::UpperBound => {
            config.early_stop = Some(base_config.early_stop.unwrap_or_default());
            let (params, _) = train_with_observer(&splits.test, &config, |_, _| {})?;
            selection_score(&evaluate_model(&params, &splits.test)?, metric)
        }
    };

    Ok(ProtocolResult {
        collocation: collocation.id(),
        audio_family: collocation.audio.name.clone(),
        visual_family: collocation.visual.name.clone(),
        protocol,
        seed,
        score,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch(format!(
            "spearman inputs of length {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }

    fn average_ranks(xs: &[f64]) -> Vec<f64> {
        let n = xs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                ranks[order[k]] = avg;
            }
            i = j + 1;
        }
        ranks
    }

    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero rank variance".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub seeds: Vec<u64>,
    pub metric: SelectionMetric,
    pub fractions: [f64; 3],
    /// Number of rungs when the CLI builds a divergence ladder.
    pub ladder: usize,
    pub fingerprint_scale: f64,
    /// Worker threads for collocation x protocol x seed runs; 0 = default.
    pub jobs: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            seeds: vec![1, 2, 3, 4, 5],
            metric: SelectionMetric::SegmentTypeAv,
            fractions: [0.6, 0.2, 0.2],
            ladder: 6,
            fingerprint_scale: 0.3,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSummary {
    pub collocation: String,
    pub divergence: f64,
    /// Seed-averaged scores.
    pub traversal_score: f64,
    pub upper_bound_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollocationReport {
    pub results: Vec<ProtocolResult>,
    pub summaries: Vec<CollocationSummary>,
    pub spearman_rho: Option<f64>,
    /// Why rho is undefined, when it is.
    pub spearman_note: Option<String>,
    pub traversal_seconds: f64,
    pub upper_bound_seconds: f64,
}

impl CollocationReport {
    /// Fixed column order per run row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("collocation_id,audio_family,visual_family,protocol,seed,score,seconds\n");
        for r in &self.results {
            let protocol = match r.protocol {
                Protocol::Traversal => "traversal",
                Protocol::UpperBound => "upper_bound",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.3}\n",
                r.collocation, r.audio_family, r.visual_family, protocol, r.seed, r.score, r.seconds
            ));
        }
        out
    }
}

/// Runs both protocols for every collocation and seed. Each collocation's
/// dataset shares the same latent timelines (the generator seed is fixed);
/// only the extractor families differ. Runs execute in parallel; results
/// are assembled in (collocation, protocol, seed) order regardless of the
/// schedule.
pub fn compare_collocations(
    collocations: &[Collocation],
    gen: &GenConfig,
    train_config: &TrainConfig,
    selector: &SelectorConfig,
    protocols: &[Protocol],
) -> Result<CollocationReport> {
    if collocations.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 collocations, got {}",
            collocations.len()
        )));
    }
    if selector.seeds.is_empty() {
        return Err(Error::Validation("need at least one seed".into()));
    }

    let split_seed = child_seed(gen.seed, 0x5711);
    let splits: Vec<SplitSet> = collocations
        .iter()
        .map(|c| {
            let ds = generate_dataset(gen, &c.audio, &c.visual)?;
            SplitSet::from_dataset(&ds, selector.fractions, split_seed)
        })
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(usize, Protocol, u64)> = Vec::new();
    for (ci, _) in collocations.iter().enumerate() {
        for &protocol in protocols {
            for &seed in &selector.seeds {
                jobs.push((ci, protocol, seed));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(selector.jobs)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    let results: Result<Vec<ProtocolResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, protocol, seed)| {
                run_protocol(
                    &collocations[ci],
                    &splits[ci],
                    protocol,
                    train_config,
                    selector.metric,
                    seed,
                )
            })
            .collect()
    });
    let results = results?;

    let mean_for = |id: &str, protocol: Protocol| -> f64 {
        let scores: Vec<f64> = results
            .iter()
            .filter(|r| r.collocation == id && r.protocol == protocol)
            .map(|r| r.score)
            .collect();
        if scores.is_empty() {
            f64::NAN
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    };

    let summaries: Vec<CollocationSummary> = collocations
        .iter()
        .map(|c| CollocationSummary {
            collocation: c.id(),
            divergence: c.divergence(),
            traversal_score: mean_for(&c.id(), Protocol::Traversal),
            upper_bound_score: mean_for(&c.id(), Protocol::UpperBound),
        })
        .collect();

    let (spearman_rho, spearman_note) = if protocols.contains(&Protocol::Traversal)
        && protocols.contains(&Protocol::UpperBound)
    {
        let tr: Vec<f64> = summaries.iter().map(|s| s.traversal_score).collect();
        let ub: Vec<f64> = summaries.iter().map(|s| s.upper_bound_score).collect();
        match spearman(&tr, &ub) {
            Ok(rho) => (Some(rho), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("both protocols are needed for a correlation".into()))
    };

    let total = |p: Protocol| {
        results
            .iter()
            .filter(|r| r.protocol == p)
            .map(|r| r.seconds)
            .sum()
    };

    Ok(CollocationReport {
        traversal_seconds: total(Protocol::Traversal),
        upper_bound_seconds: total(Protocol::UpperBound),
        results,
        summaries,
        spearman_rho,
        spearman_note,
    })
}
