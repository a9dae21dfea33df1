//! Command-line wiring: `gen`, `train`, `eval`, `select`, `gradcheck` and
//! `reproduce`. Every subcommand writes a `run.json` with the resolved
//! configuration; rerunning with `--config run.json` reproduces the
//! deterministic outputs byte for byte (wall-clock columns aside).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accept::run_pipeline;
use crate::config::{apply_overrides, default_families, ExperimentConfig};
use crate::data::io::{load_split, quantize_sig9, write_dataset_dir};
use crate::data::split_dataset;
use crate::datagen::{family_ladder, generate_dataset, Collocation, ExtractorFamily};
use crate::error::{Error, Result};
use crate::gradsuite::run_gradient_suite;
use crate::losses::{LossMode, LossScope};
use crate::metrics::{
    alignment_metrics, encoded_alignment_items, model_predictions, parsing_report,
};
use crate::model::{load_model, save_model};
use crate::seeding::child_seed;
use crate::selector::{compare_collocations, Protocol};
use crate::trainer::{train, LossKind};

pub const SEED_ENV_VAR: &str = "MTSC_SEED";

#[derive(Parser)]
#[command(
    name = "mtsc",
    version,
    about = "Synthetic audio-visual parsing experiments: contrastive training, metrics, and extractor-collocation selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Experiment config JSON (a previous run.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override; also settable via MTSC_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. --set gen.videos=50.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for parallel runs (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    None,
    Ntxent,
    Wntxent,
    Mtsc,
    #[value(name = "mtsc-part")]
    MtscPart,
    #[value(name = "mtsc-literal")]
    MtscLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Traversal,
    Upper,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory with train/eval/test splits.
    Gen {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one split of a dataset directory.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Contrastive loss selection shorthand.
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
    },
    /// Write parsing and alignment reports for a model on a split.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare collocations along a family-divergence ladder.
    Select {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        protocol: ProtocolArg,
    },
    /// Run the gradient verification suite; nonzero exit on any failure.
    Gradcheck {
        #[command(flatten)]
        common: CommonOpts,
        /// Optional directory for gradcheck.json and run.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full reproduction pipeline and write report.json.
    Reproduce {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn dispatch(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut value = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => serde_json::Value::Object(Default::default()),
    };
    apply_overrides(&mut value, &common.set)?;
    let mut config = ExperimentConfig::from_value(value)?;
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Ok(env) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = env
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be an unsigned integer")))?;
        config.seed = Some(seed);
    }
    if let Some(jobs) = common.jobs {
        config.selector.jobs = jobs;
    }
    config.resolve();
    config.validate()?;
    Ok(config)
}

fn write_run_json(out_dir: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let body = serde_json::json!({ "command": command, "config": config });
    let path = out_dir.join("run.json");
    let text = serde_json::to_string_pretty(&body)
        .map_err(|e| Error::Validation(format!("run.json serialization: {e}")))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn quantize_family(family: &ExtractorFamily) -> ExtractorFamily {
    let q = |m: &Vec<Vec<f64>>| {
        m.iter()
            .map(|row| row.iter().map(|&x| quantize_sig9(x)).collect())
            .collect()
    };
    ExtractorFamily {
        name: family.name.clone(),
        transform: q(&family.transform),
        bias: family.bias.iter().map(|&x| quantize_sig9(x)).collect(),
        nonlinearity: family.nonlinearity,
        fingerprint: family.fingerprint.iter().map(|&x| quantize_sig9(x)).collect(),
        fingerprint_scale: quantize_sig9(family.fingerprint_scale),
    }
}

fn apply_loss_arg(config: &mut ExperimentConfig, loss: LossArg) {
    let train = &mut config.train;
    match loss {
        LossArg::None => train.loss_kind = LossKind::None,
        LossArg::Ntxent => train.loss_kind = LossKind::NtXent,
        LossArg::Wntxent => train.loss_kind = LossKind::WeightedNtXent,
        LossArg::Mtsc => {
            train.loss_kind = LossKind::Mtsc;
            train.loss.mode = LossMode::Squared;
            train.loss.scope = LossScope::Full;
        }
        LossArg::MtscPart => {
            train.loss_kind = LossKind::Mtsc;
            train.loss.mode = LossMode::Squared;
            train.loss.scope = LossScope::Part;
        }
        LossArg::MtscLiteral => {
            train.loss_kind = LossKind::Mtsc;
            train.loss.mode = LossMode::Literal;
            train.loss.scope = LossScope::Full;
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Gen { common, out } => {
            let config = resolve_config(&common)?;
            let (fa, fv) = default_families(&config.gen, config.selector.fingerprint_scale)?;
            let dataset = generate_dataset(&config.gen, &fa, &fv)?;
            let (train_split, eval_split, test_split) =
                split_dataset(&dataset, config.split.fractions, config.split.seed)?;
            let gen_value = serde_json::to_value(&config.gen)
                .map_err(|e| Error::Validation(format!("gen config: {e}")))?;
            write_dataset_dir(
                &out,
                &[
                    ("train", &train_split),
                    ("eval", &eval_split),
                    ("test", &test_split),
                ],
                config.gen.seed,
                Some(gen_value),
            )?;
            write_json(
                &out.join("families.json"),
                &serde_json::json!({
                    "audio": quantize_family(&fa),
                    "visual": quantize_family(&fv),
                }),
            )?;
            write_run_json(&out, "gen", &config)?;
            println!(
                "wrote {} videos ({}/{}/{}) to {}",
                dataset.len(),
                train_split.len(),
                eval_split.len(),
                test_split.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Train {
            common,
            data,
            split,
            out,
            loss,
        } => {
            let mut config = resolve_config(&common)?;
            if let Some(loss) = loss {
                apply_loss_arg(&mut config, loss);
            }
            let dataset = load_split(&data, &split)?;
            let (params, history) = train(&dataset, &config.train)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            save_model(
                &params,
                &out.join("model.json"),
                config.train.preserve_audio_projection,
            )?;
            history.write_csv(&out.join("history.csv"))?;
            write_run_json(&out, "train", &config)?;
            let last = history.epochs.last();
            println!(
                "trained {} epochs on {} videos; final total loss {}",
                history.epochs.len(),
                dataset.len(),
                last.map(|e| e.total).unwrap_or(f64::NAN)
            );
            Ok(0)
        }
        Command::Eval {
            common,
            model,
            data,
            split,
            out,
        } => {
            let config = resolve_config(&common)?;
            let params = load_model(&model)?;
            let dataset = load_split(&data, &split)?;
            let predictions = model_predictions(&params, &dataset)?;
            let parsing = parsing_report(&predictions, &dataset, config.miou_threshold())?;
            let alignment =
                alignment_metrics(&encoded_alignment_items(&params, &dataset)?, &config.alignment)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_json(&out.join("parsing_report.json"), &parsing)?;
            fs::write(&out.join("parsing_report.csv"), parsing.to_csv())
                .map_err(|e| Error::io(&out.join("parsing_report.csv"), e))?;
            write_json(&out.join("alignment_report.json"), &alignment)?;
            write_run_json(&out, "eval", &config)?;
            println!(
                "segment Type@AV {:.4}, event Type@AV {:.4}, average {:.4}, cross recall-top1 {:.4}",
                parsing.segment.type_at_av,
                parsing.event.type_at_av,
                parsing.average_score,
                alignment.recall_top1_cross
            );
            Ok(0)
        }
        Command::Select {
            common,
            out,
            protocol,
        } => {
            let config = resolve_config(&common)?;
            if config.gen.dim_audio != config.gen.dim_visual {
                return Err(Error::Config(
                    "the collocation ladder shares one family shape; set dim_audio = dim_visual"
                        .into(),
                ));
            }
            let ladder = family_ladder(
                config.selector.ladder,
                config.gen.latent_dim,
                config.gen.dim_visual,
                config.selector.fingerprint_scale,
                child_seed(config.gen.seed, 0x5000),
            )?;
            let audio = ladder[0].clone();
            let collocations: Vec<Collocation> = ladder
                .iter()
                .map(|visual| Collocation {
                    audio: audio.clone(),
                    visual: visual.clone(),
                })
                .collect();
            let protocols: &[Protocol] = match protocol {
                ProtocolArg::Traversal => &[Protocol::Traversal],
                ProtocolArg::Upper => &[Protocol::UpperBound],
                ProtocolArg::Both => &[Protocol::Traversal, Protocol::UpperBound],
            };
            let report = compare_collocations(
                &collocations,
                &config.gen,
                &config.train,
                &config.selector,
                protocols,
            )?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            fs::write(&out.join("collocations.csv"), report.to_csv())
                .map_err(|e| Error::io(&out.join("collocations.csv"), e))?;
            write_json(
                &out.join("summary.json"),
                &serde_json::json!({
                    "summaries": report.summaries,
                    "spearman_rho": report.spearman_rho,
                    "spearman_note": report.spearman_note,
                    "traversal_seconds": report.traversal_seconds,
                    "upper_bound_seconds": report.upper_bound_seconds,
                }),
            )?;
            write_run_json(&out, "select", &config)?;
            match report.spearman_rho {
                Some(rho) => println!(
                    "spearman rho {:.4}; traversal {:.1}s vs upper bound {:.1}s",
                    rho, report.traversal_seconds, report.upper_bound_seconds
                ),
                None => println!(
                    "spearman rho undefined: {}",
                    report.spearman_note.as_deref().unwrap_or("unknown")
                ),
            }
            Ok(0)
        }
        Command::Gradcheck { common, out } => {
            let config = resolve_config(&common)?;
            let report = run_gradient_suite(child_seed(config.train.seed, 0xC1))?;
            if let Some(out) = &out {
                fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_json(&out.join("gradcheck.json"), &report)?;
                write_run_json(out, "gradcheck", &config)?;
            }
            for entry in &report.entries {
                println!(
                    "{:<28} instances {:>3}  max rel err {:.3e}  {}",
                    entry.name,
                    entry.instances,
                    entry.max_rel_err,
                    if entry.pass { "ok" } else { "FAIL" }
                );
            }
            println!(
                "total instances: {}; tolerance {:.0e}",
                report.total_instances,
                crate::gradsuite::SUITE_TOLERANCE
            );
            Ok(if report.all_pass() { 0 } else { 2 })
        }
        Command::Reproduce { common, out } => {
            let config = resolve_config(&common)?;
            write_run_json(&out, "reproduce", &config)?;
            let report = run_pipeline(&config, &out)?;
            for c in &report.criteria {
                println!(
                    "criterion {}: {} - {}",
                    c.id,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name
                );
            }
            println!(
                "report written to {}; overall: {}",
                out.join("report.json").display(),
                if report.all_pass { "PASS" } else { "FAIL" }
            );
            Ok(if report.all_pass { 0 } else { 2 })
        }
    }
}
