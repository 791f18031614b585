use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Deserialize;
use ubert::codec::{Span, TargetTable};
use ubert::data::{generate_synthetic, load_dataset, save_dataset, DatasetRecord, SyntheticSpec};
use ubert::eval::{evaluate, predict_facts, record_round_trips, Fact, GoldScorer, TableScorer};
use ubert::gradcheck::{gradient_check, GradCheckConfig};
use ubert::model::{ModelConfig, UbertModel};
use ubert::train::{train_with, TrainConfig};

const SEED_VAR: &str = "UBERT_SEED";
const DENSE_LIMIT: usize = 20;

#[derive(Parser)]
#[command(name = "ubert", version, about = "Structure-table span extraction: data, tables, training and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus described by a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the gold structure tables of one record as (row, col, score) triples.
    Encode {
        #[arg(long)]
        data: PathBuf,
        /// Zero-based record index.
        #[arg(long)]
        record: usize,
        /// Print full grids; units must have at most 20 tokens.
        #[arg(long)]
        dense: bool,
    },
    /// Decode one record with a checkpoint, or with its own gold tables.
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        record: usize,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train a fresh model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON object with optional "model" and "train" sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the model and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the loss history as JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check that every record's gold tables decode back to its gold.
    Roundtrip {
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Property(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Property(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<String, Failure>;

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Vec<DatasetRecord>> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn pick(records: &[DatasetRecord], index: usize) -> anyhow::Result<&DatasetRecord> {
    records
        .get(index)
        .with_context(|| format!("record {index} out of range; dataset has {}", records.len()))
}

fn generate(spec: &Path, out: &Path, flag: Option<u64>) -> Outcome {
    let mut spec: SyntheticSpec = read_json(spec)?;
    if let Some(s) = seed(flag)? {
        spec.seed = s;
    }
    let records = generate_synthetic(&spec).map_err(anyhow::Error::from)?;
    save_dataset(&records, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(format!("wrote {} records to {}\n", records.len(), out.display()))
}

fn sparse(out: &mut String, t: &TargetTable) {
    for d in t.designators() {
        let _ = writeln!(out, "{} {} 1", d.row, d.col);
    }
}

fn dense(out: &mut String, t: &TargetTable) {
    for r in 0..t.size() {
        let row: Vec<&str> = (0..t.size()).map(|c| if t.get(r, c) { "1" } else { "0" }).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn encode(data: &Path, index: usize, as_grid: bool) -> Outcome {
    let records = load(data)?;
    let units = pick(&records, index)?.expand().map_err(anyhow::Error::from)?;
    if as_grid {
        if let Some(u) = units.iter().find(|u| u.instance.len() > DENSE_LIMIT) {
            return Err(Failure::Usage(format!(
                "--dense needs units of at most {DENSE_LIMIT} tokens; one has {}",
                u.instance.len()
            )));
        }
    }
    let mut out = String::new();
    for (k, u) in units.iter().enumerate() {
        let inst = &u.instance;
        let tokens: Vec<&str> = inst.tokens.texts().collect();
        let _ = writeln!(
            out,
            "unit {k} task {} category {} size {} text_offset {}",
            inst.task,
            inst.category.key(),
            inst.len(),
            inst.text_token_offset
        );
        let _ = writeln!(out, "tokens {}", tokens.join(" "));
        for t in &u.targets {
            let _ = writeln!(out, "table {:?} designators {}", t.role(), t.count());
            if as_grid {
                dense(&mut out, t);
            } else {
                sparse(&mut out, t);
            }
        }
    }
    Ok(out)
}

fn span_label(record: &DatasetRecord, span: Span) -> String {
    let text = record.span_text(span).unwrap_or_default();
    format!("{}..{} {:?}", span.start, span.end, text)
}

fn fact_line(record: &DatasetRecord, fact: &Fact) -> String {
    match fact {
        Fact::Label(c) => format!("label {}", c.key()),
        Fact::Entity(c, s) => format!("entity {} {}", c.key(), span_label(record, *s)),
        Fact::Relation(c, r) => format!(
            "relation {} head {} tail {}",
            c.key(),
            span_label(record, r.head),
            span_label(record, r.tail)
        ),
        Fact::Trigger(t, s) => format!("trigger {t} {}", span_label(record, *s)),
        Fact::Argument {
            event_type,
            trigger,
            role,
            span,
        } => format!(
            "argument {event_type} trigger {}..{} role {role} {}",
            trigger.start,
            trigger.end,
            span_label(record, *span)
        ),
    }
}

fn check_threshold(t: f64) -> Result<(), Failure> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--threshold {t} must lie strictly between 0 and 1")))
    }
}

fn decode(data: &Path, index: usize, ckpt: Option<&Path>, threshold: f64) -> Outcome {
    check_threshold(threshold)?;
    let records = load(data)?;
    let record = pick(&records, index)?;
    let facts = match ckpt {
        Some(p) => {
            let model = UbertModel::load(p).with_context(|| format!("loading {}", p.display()))?;
            predict(&model, record, threshold)?
        }
        None => {
            let gold = GoldScorer::new(std::slice::from_ref(record)).map_err(anyhow::Error::from)?;
            predict(&gold, record, threshold)?
        }
    };
    Ok(facts.iter().map(|f| fact_line(record, f) + "\n").collect())
}

fn predict(scorer: &impl TableScorer, record: &DatasetRecord, threshold: f64) -> anyhow::Result<Vec<Fact>> {
    Ok(predict_facts(scorer, record, threshold)?.into_iter().collect())
}

fn run_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    epochs: Option<usize>,
    flag: Option<u64>,
    metrics: Option<&Path>,
) -> Outcome {
    if epochs == Some(0) {
        return Err(Failure::Usage("--epochs must be at least 1".into()));
    }
    let mut cfg: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = seed(flag)? {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    let records = load(data)?;
    let vocab = ubert::data::build_vocab(&records).map_err(anyhow::Error::from)?;
    let mut model = UbertModel::new(cfg.model, vocab).map_err(anyhow::Error::from)?;
    let mut log = String::new();
    let history = train_with(&mut model, &records, &cfg.train, |epoch, loss, _| {
        let _ = writeln!(log, "epoch {epoch} loss {loss:.6}");
    })
    .map_err(anyhow::Error::from)?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = metrics {
        let json = serde_json::json!({ "loss_curve": history });
        fs::write(p, serde_json::to_string_pretty(&json).map_err(anyhow::Error::from)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(log)
}

fn run_eval(data: &Path, ckpt: &Path, threshold: f64, json: Option<&Path>) -> Outcome {
    check_threshold(threshold)?;
    let records = load(data)?;
    let model = UbertModel::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let report = evaluate(&model, &records, threshold).map_err(anyhow::Error::from)?;
    if let Some(p) = json {
        fs::write(p, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report.to_string())
}

fn roundtrip(data: &Path) -> Outcome {
    let records = load(data)?;
    let mut failed = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if !record_round_trips(r, 0.5).map_err(anyhow::Error::from)? {
            failed.push(i);
        }
    }
    let summary = format!("records {} failures {}\n", records.len(), failed.len());
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(Failure::Property(format!("{summary}failing records {failed:?}")))
    }
}

fn gradcheck(config: Option<&Path>, flag: Option<u64>) -> Outcome {
    let mut cfg: GradCheckConfig = match config {
        Some(p) => read_json(p)?,
        None => GradCheckConfig::default(),
    };
    if let Some(s) = seed(flag)? {
        cfg.seed = s;
    }
    let report = gradient_check(&cfg).map_err(anyhow::Error::from)?;
    let mut out = String::new();
    for t in &report.tensors {
        let _ = writeln!(out, "{} rel_error {:.3e}", t.name, t.rel_error);
    }
    let _ = writeln!(out, "max_rel_error {:.3e} tolerance {:e}", report.max_rel_error, report.tolerance);
    if report.passed() {
        Ok(out)
    } else {
        print!("{out}");
        Err(Failure::Property(format!(
            "max relative error {:.3e} exceeds {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Generate { spec, out, seed } => generate(&spec, &out, seed),
        Command::Encode { data, record, dense } => encode(&data, record, dense),
        Command::Decode {
            data,
            record,
            ckpt,
            threshold,
        } => decode(&data, record, ckpt.as_deref(), threshold),
        Command::Train {
            data,
            config,
            out,
            epochs,
            seed,
            metrics,
        } => run_train(&data, config.as_deref(), &out, epochs, seed, metrics.as_deref()),
        Command::Eval {
            data,
            ckpt,
            threshold,
            json,
        } => run_eval(&data, &ckpt, threshold, json.as_deref()),
        Command::Roundtrip { data } => roundtrip(&data),
        Command::Gradcheck { config, seed } => gradcheck(config.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Property(m) => eprintln!("error: {m}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
