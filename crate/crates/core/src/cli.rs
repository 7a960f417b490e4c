//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::check::gradient_probe;
use crate::error::{Error, Result};
use crate::eval::evaluate_split;
use crate::graph::{lift_relation_graph, load_kg, load_split, parse_descriptions};
use crate::kgqa::{answer_distribution, argmax, evaluate, fine_tune, load_qa, prepare, AdaptConfig, PreparedQa};
use crate::model::Model;
use crate::text::{EmbeddingTable, Fallback, HashProvider, TextProvider};
use crate::train::{pretrain, source_provider, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "kgreason", version, about = "Knowledge-graph completion and question answering with dual-channel message passing")]
pub struct Cli {
    /// Seed for all random choices; overrides seeds given in config files.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link-prediction pretraining over a graph mixture.
    Pretrain(PretrainArgs),
    /// Filtered ranking evaluation on a split's test triples.
    EvalKgc(EvalArgs),
    /// Fine-tune a checkpoint on labelled multiple-choice questions.
    AdaptKgqa(AdaptArgs),
    /// Answer distribution for a single question.
    Score(ScoreArgs),
    /// Print the relation graph of a triple file.
    Lift(LiftArgs),
    /// Write hash text features for a description file.
    EmbedHash(EmbedArgs),
    /// Compare analytic gradients against finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Training config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for checkpoints and stats.csv; overrides the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split directory.
    #[arg(long)]
    pub split: PathBuf,
    /// Also write per-query ranks to this CSV file.
    #[arg(long, value_name = "FILE")]
    pub per_query: Option<PathBuf>,
    /// Queries scored per forward pass.
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Entity embedding file; defaults to hash features.
    #[arg(long, value_name = "FILE")]
    pub entity_embeddings: Option<PathBuf>,
    /// Relation embedding file; defaults to hash features.
    #[arg(long, value_name = "FILE")]
    pub relation_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Checkpoint directory to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled questions (JSON lines).
    #[arg(long)]
    pub qa: PathBuf,
    /// Few-shot examples per question.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Directory for the fine-tuned checkpoint.
    #[arg(long)]
    pub output: PathBuf,
    /// Adaptation config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Held-out questions to report accuracy on.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Passes over the questions.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Questions per optimiser step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated parameter groups to freeze.
    #[arg(long, value_delimiter = ',', value_name = "GROUPS")]
    pub freeze: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// File holding one question record.
    #[arg(long)]
    pub qa_instance: PathBuf,
    /// Labelled questions to retrieve few-shot examples from.
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Few-shot examples; ignored without a pool.
    #[arg(long, default_value_t = 3)]
    pub shots: usize,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// Triple file (TSV).
    #[arg(long)]
    pub kg: PathBuf,
    /// Omit relation self-loops.
    #[arg(long)]
    pub no_self_loops: bool,
    /// Lift the graph without inverse relations.
    #[arg(long)]
    pub no_inverses: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Description file (`id<TAB>text`).
    #[arg(long)]
    pub desc: PathBuf,
    /// Vector dimension.
    #[arg(long)]
    pub dim: usize,
    /// Output embedding file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    /// Training config whose model section is checked; defaults apply without it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 3e-5)]
    pub eps: f64,
    /// Largest relative error that passes.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Entries compared per parameter, sampled with the seed.
    #[arg(long, default_value_t = 16)]
    pub max_entries: usize,
}

/// Runs a parsed command, writing its primary output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a, cli.seed, out),
        Command::EvalKgc(a) => cmd_eval(a, out),
        Command::AdaptKgqa(a) => cmd_adapt(a, cli.seed, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Lift(a) => cmd_lift(a, out),
        Command::EmbedHash(a) => cmd_embed(a, out),
        Command::CheckGrad(a) => cmd_check_grad(a, cli.seed, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit(out, &s)
}

fn load_checkpoint(dir: &Path) -> Result<Model> {
    Ok(Model::load(dir)?.0)
}

#[derive(Serialize)]
struct PretrainSummary {
    epochs: usize,
    final_loss: f64,
    final_val_mrr: Option<f64>,
}

fn cmd_pretrain(a: PretrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut config = TrainConfig::load(&a.config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = a.output {
        config.output = Some(o);
    }
    if config.output.is_none() {
        return Err(Error::Config("no output directory: set `output` or pass --output".into()));
    }
    let (_, stats) = pretrain(config)?;
    let last = stats.epochs.last();
    emit_json(
        out,
        &PretrainSummary {
            epochs: stats.epochs.len(),
            final_loss: last.map_or(f64::NAN, |e| e.loss),
            final_val_mrr: last.and_then(|e| e.val_mrr),
        },
    )
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    if a.batch_size == 0 {
        return Err(Error::Config("--batch-size must be positive".into()));
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let split = load_split(&a.split)?;
    let dim = model.config.text_dim;
    let ent = source_provider(a.entity_embeddings.as_deref(), dim)?;
    let rel = source_provider(a.relation_embeddings.as_deref(), dim)?;
    let report = evaluate_split(&model, &split, ent.as_ref(), rel.as_ref(), a.batch_size)?;
    if let Some(path) = &a.per_query {
        fs::write(path, report.per_query_csv(&split.test_graph)).map_err(|e| Error::io(path, e))?;
    }
    emit_json(out, &report)
}

#[derive(Serialize)]
struct AdaptSummary {
    questions: usize,
    final_loss: f64,
    train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
}

fn cmd_adapt(a: AdaptArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<AdaptConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => AdaptConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(k) = a.shots {
        config.shots = k;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.adam.lr = lr;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(f) = a.freeze {
        config.frozen = f;
    }
    config.validate()?;
    let (mut model, manifest) = Model::load(&a.checkpoint)?;
    let text = HashProvider::new(model.config.text_dim);
    let pool = load_qa(&a.qa)?;
    let train = pool
        .iter()
        .filter(|q| q.answer.is_some())
        .map(|q| prepare(&model, q, &pool, config.shots, &text))
        .collect::<Result<Vec<PreparedQa>>>()?;
    let losses = fine_tune(&mut model, &train, &config)?;
    model.save(&a.output, config.seed, manifest.stage + 1)?;
    let test_accuracy = match &a.test {
        Some(path) => {
            let items = load_qa(path)?
                .iter()
                .map(|q| prepare(&model, q, &pool, config.shots, &text))
                .collect::<Result<Vec<_>>>()?;
            Some(evaluate(&model, &items)?)
        }
        None => None,
    };
    emit_json(
        out,
        &AdaptSummary {
            questions: train.len(),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            train_accuracy: evaluate(&model, &train)?,
            test_accuracy,
        },
    )
}

#[derive(Serialize)]
struct OptionScore<'a> {
    label: &'a str,
    probability: f64,
}

#[derive(Serialize)]
struct ScoreOutput<'a> {
    id: &'a str,
    distribution: Vec<OptionScore<'a>>,
    prediction: &'a str,
}

fn cmd_score(a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let mut instances = load_qa(&a.qa_instance)?;
    if instances.len() != 1 {
        return Err(Error::Invalid(format!(
            "{} holds {} questions, expected exactly one",
            a.qa_instance.display(),
            instances.len()
        )));
    }
    let instance = instances.remove(0);
    let pool = match &a.pool {
        Some(p) => load_qa(p)?,
        None => Vec::new(),
    };
    let shots = if pool.is_empty() { 0 } else { a.shots };
    let text = HashProvider::new(model.config.text_dim);
    let prepared = prepare(&model, &instance, &pool, shots, &text)?;
    let p = answer_distribution(&model, &prepared)?;
    let labels = instance.option_labels();
    emit_json(
        out,
        &ScoreOutput {
            id: &instance.id,
            distribution: labels
                .iter()
                .zip(&p)
                .map(|(&label, &probability)| OptionScore { label, probability })
                .collect(),
            prediction: labels[argmax(&p)],
        },
    )
}

fn cmd_lift(a: LiftArgs, out: &mut dyn Write) -> Result<()> {
    let kg = load_kg(&a.kg, None, None)?;
    let kg = if a.no_inverses { kg } else { kg.augment_inverses()? };
    let graph = lift_relation_graph(&kg, !a.no_self_loops)?;
    emit(out, &graph.to_tsv(&kg))
}

fn cmd_embed(a: EmbedArgs, out: &mut dyn Write) -> Result<()> {
    if a.dim == 0 {
        return Err(Error::Config("--dim must be positive".into()));
    }
    let provider = HashProvider::new(a.dim).with_fallback(Fallback::HashId);
    let mut table = EmbeddingTable::new(a.dim);
    for (id, text) in parse_descriptions(&a.desc)? {
        table.insert(&id, provider.feature(&id, Some(&text)))?;
    }
    table.save(&a.out)?;
    emit_json(out, &serde_json::json!({ "vectors": table.len(), "dim": a.dim }))
}

fn cmd_check_grad(a: CheckGradArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if !(a.eps > 0.0 && a.tolerance > 0.0) || a.max_entries == 0 {
        return Err(Error::Config("--eps, --tolerance and --max-entries must be positive".into()));
    }
    let seed = seed.unwrap_or(config.seed);
    let report = gradient_probe(&config.model, seed, a.eps, a.max_entries)?;
    let mut text = String::new();
    for p in &report.params {
        let verdict = if p.rel_error <= a.tolerance { "PASS" } else { "FAIL" };
        text.push_str(&format!(
            "{verdict}\t{}\t{}\trel_error={:.3e}\tgrad_norm={:.3e}\n",
            p.name, p.entries, p.rel_error, p.grad_norm
        ));
    }
    let passed = report.passed(a.tolerance);
    text.push_str(&format!(
        "{}\t{} parameters\tmax relative error {:.3e}\n",
        if passed { "PASS" } else { "FAIL" },
        report.params.len(),
        report.max_rel_error()
    ));
    emit(out, &text)?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error(),
            a.tolerance
        )))
    }
}
